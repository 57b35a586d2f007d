#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "modbal/train.hpp"

using namespace modbal;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.method = "passion";
    cfg.epochs = 2;
    cfg.data.n_samples = 6;
    cfg.data.n_modalities = 3;
    cfg.data.n_classes = 3;
    cfg.data.shape = {16, 16};
    cfg.data.noise = 0.1;
    cfg.data.seed = 77;
    cfg.test_samples = 2;
    cfg.backbone.width = 4;
    cfg.backbone.levels = 2;
    cfg.backbone.n_modalities = 3;
    cfg.backbone.n_classes = 3;
    cfg.targets = {0.2, 0.4, 0.6};
    cfg.lr = 1e-3;
    return cfg;
}

}  // namespace

TEST_CASE("method plans") {
    MethodPlan p = build_method_loss("baseline", true, true, true, true);
    CHECK(p.use_reg);
    CHECK(!p.moddrop);
    CHECK(!p.pixel);

    p = build_method_loss("moddrop", false, false, false, false);
    CHECK(p.use_reg);
    CHECK(p.moddrop);

    p = build_method_loss("passion", true, false, true, false);
    CHECK(!p.use_reg);
    CHECK(p.pixel);
    CHECK(!p.proto);
    CHECK(p.delta_gate);
    CHECK(!p.beta_update);

    CHECK_THROWS_AS(build_method_loss("pmr", true, true, true, true), std::invalid_argument);
}

TEST_CASE("poly decay endpoint and monotonicity") {
    CHECK(poly_lr(0, 100, 2e-4, 0.9) == doctest::Approx(2e-4));
    CHECK(poly_lr(100, 100, 2e-4, 0.9) == 0.0);
    real prev = poly_lr(0, 100, 2e-4, 0.9);
    for (int t = 1; t <= 100; ++t) {
        const real lr = poly_lr(t, 100, 2e-4, 0.9);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK_THROWS_AS(poly_lr(-1, 100, 1.0, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(poly_lr(101, 100, 1.0, 0.9), std::invalid_argument);
}

TEST_CASE("moddrop always keeps a survivor") {
    Rng rng(55);
    const std::vector<uint8_t> row{1, 0, 1, 1};
    for (int rep = 0; rep < 500; ++rep) {
        const auto kept = moddrop_row(row, rng);
        int survivors = 0;
        for (size_t m = 0; m < kept.size(); ++m) {
            survivors += kept[m];
            CHECK(kept[m] <= row[m]);  // never re-enables a missing modality
        }
        CHECK(survivors >= 1);
    }
    // single available modality always survives
    const std::vector<uint8_t> solo{0, 1, 0};
    for (int rep = 0; rep < 50; ++rep) CHECK(moddrop_row(solo, rng) == solo);
}

TEST_CASE("rp log round-trips and the plot mirrors it") {
    std::vector<RpLogRow> rows;
    for (int e = 0; e < 3; ++e)
        for (int m = 0; m < 4; ++m)
            rows.push_back({e, m, 0.1 * e - 0.05 * m, 1.0 + 0.1 * m});
    const std::string csv = rp_log_csv(rows);
    const auto parsed = parse_rp_log_csv(csv);
    REQUIRE(parsed.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(parsed[i].epoch == rows[i].epoch);
        CHECK(parsed[i].modality == rows[i].modality);
        CHECK(parsed[i].mean_rp == rows[i].mean_rp);
        CHECK(parsed[i].beta == rows[i].beta);
    }

    const std::string svg = rp_plot_svg(rows);
    // one labelled curve per modality and a zero line
    size_t curves = 0, pos = 0;
    while ((pos = svg.find("class=\"curve\"", pos)) != std::string::npos) {
        curves++;
        pos++;
    }
    CHECK(curves == 4);
    CHECK(svg.find("zero-line") != std::string::npos);
    size_t labels = 0;
    pos = 0;
    while ((pos = svg.find("curve-label", pos)) != std::string::npos) {
        labels++;
        pos++;
    }
    CHECK(labels == 4);

    // the embedded values are exactly the CSV values
    for (int m = 0; m < 4; ++m) {
        std::string want = "data-modality=\"" + std::to_string(m) + "\" data-values=\"";
        const size_t at = svg.find(want);
        REQUIRE(at != std::string::npos);
        const size_t start = at + want.size();
        const size_t end = svg.find('"', start);
        std::istringstream vs(svg.substr(start, end - start));
        double v;
        int e = 0;
        while (vs >> v) {
            CHECK(v == rows[static_cast<size_t>(e) * 4 + static_cast<size_t>(m)].mean_rp);
            e++;
        }
        CHECK(e == 3);
    }

    CHECK_THROWS_AS(rp_plot_svg({}), std::invalid_argument);

    // constant-zero log draws flat curves on the zero line
    std::vector<RpLogRow> zero_rows;
    for (int e = 0; e < 2; ++e) zero_rows.push_back({e, 0, 0.0, 1.0});
    const std::string flat = rp_plot_svg(zero_rows);
    CHECK(flat.find("data-values=\"0 0\"") != std::string::npos);
}

TEST_CASE("loss-trace equivalence: passion with all toggles off vs baseline") {
    ExperimentConfig cfg = tiny_config();
    Backbone net(cfg.backbone, 5);
    DatasetSpec sp = cfg.data;
    sp.n_samples = 3;
    const auto data = generate_dataset(sp);
    const auto state = PreferenceState::init(MissingRateVector{{0.2, 0.4, 0.6}}, cfg.gamma);

    const MethodPlan off = build_method_loss("passion", false, false, false, false);
    const MethodPlan base = build_method_loss("baseline", true, true, true, true);

    for (const auto& full : data) {
        const MultiModalSample s = apply_presence(full, {1, 0, 1});
        const ForwardState st = net.forward_train(s, false);
        const StepOutput a = compute_step(net, st, s.label, off, state, cfg, false);
        const StepOutput b = compute_step(net, st, s.label, base, state, cfg, false);
        CHECK(a.total == doctest::Approx(a.seg).epsilon(1e-15));
        real reg_sum = 0;
        for (const auto& [m, v] : b.reg) reg_sum += v;
        CHECK(b.total - a.total == doctest::Approx(reg_sum).epsilon(1e-12));
        CHECK(b.seg == a.seg);
    }
}

TEST_CASE("run_experiment emits every artifact and is reproducible") {
    namespace fs = std::filesystem;
    ExperimentConfig cfg = tiny_config();
    cfg.epochs = 1;
    cfg.out_dir = "runsmoke_a";
    const RunArtifacts a = run_experiment(cfg);
    for (const std::string& p : {a.checkpoint, a.rp_log, a.report_csv, a.report_text,
                                 a.resolved_config, a.rp_plot, a.presence_manifest})
        CHECK(fs::exists(p));

    // exactly M rows per epoch in the RP log
    const auto rows = parse_rp_log_csv(slurp(a.rp_log));
    CHECK(rows.size() == static_cast<size_t>(cfg.epochs * 3));

    // resolved config re-parses to the same experiment
    const ExperimentConfig re = parse_config(slurp(a.resolved_config));
    CHECK(re.method == cfg.method);
    CHECK(re.epochs == cfg.epochs);
    CHECK(re.data.n_samples == cfg.data.n_samples);
    CHECK(re.targets == cfg.targets);

    // the checkpoint loads and carries the configured backbone
    const Backbone net = Backbone::load_checkpoint(a.checkpoint);
    CHECK(net.config().n_modalities == 3);

    // identical config + seed reproduces the report byte for byte
    cfg.out_dir = "runsmoke_b";
    const RunArtifacts b = run_experiment(cfg);
    CHECK(slurp(a.report_csv) == slurp(b.report_csv));
    CHECK(slurp(a.rp_log) == slurp(b.rp_log));

    fs::remove_all("runsmoke_a");
    fs::remove_all("runsmoke_b");
}

TEST_CASE("training runs all methods end to end") {
    ExperimentConfig cfg = tiny_config();
    DatasetSpec test_spec = cfg.data;
    test_spec.n_samples = 2;
    const auto train_data = generate_dataset(cfg.data);
    const auto test_data = generate_dataset(test_spec);
    const auto presence =
        sample_presence(MissingRateVector{cfg.targets}, cfg.data.n_samples, 1);

    for (const std::string method : {"baseline", "moddrop", "passion"}) {
        cfg.method = method;
        const RunResult r = train_and_evaluate(cfg, train_data, test_data, presence);
        CHECK(r.rp_log.size() == static_cast<size_t>(cfg.epochs * 3));
        CHECK(r.report.subsets.size() == 7);
        CHECK(r.loss_trace.size() == static_cast<size_t>(cfg.epochs));
        for (real l : r.loss_trace) CHECK(std::isfinite(l));
    }
}

TEST_CASE("beta stays frozen for baseline and moves for passion") {
    ExperimentConfig cfg = tiny_config();
    cfg.epochs = 3;
    DatasetSpec test_spec = cfg.data;
    test_spec.n_samples = 2;
    const auto train_data = generate_dataset(cfg.data);
    const auto test_data = generate_dataset(test_spec);
    const auto presence =
        sample_presence(MissingRateVector{cfg.targets}, cfg.data.n_samples, 1);
    const auto mr = missing_rates(presence);

    cfg.method = "baseline";
    const RunResult rb = train_and_evaluate(cfg, train_data, test_data, presence);
    for (const auto& row : rb.rp_log)
        CHECK(row.beta ==
              doctest::Approx(1.0 / (1.0 - mr.rates[static_cast<size_t>(row.modality)])));

    cfg.method = "passion";
    const RunResult rp = train_and_evaluate(cfg, train_data, test_data, presence);
    bool beta_moved = false;
    for (const auto& row : rp.rp_log) {
        const real init = 1.0 / (1.0 - mr.rates[static_cast<size_t>(row.modality)]);
        if (row.epoch > 0 && std::abs(row.beta - init) > 1e-12) beta_moved = true;
    }
    CHECK(beta_moved);
}

TEST_CASE("presence/dataset mismatches are rejected") {
    ExperimentConfig cfg = tiny_config();
    const auto train_data = generate_dataset(cfg.data);
    const auto presence = sample_presence(MissingRateVector{{0.2, 0.4}}, cfg.data.n_samples, 1);
    CHECK_THROWS_AS(train_and_evaluate(cfg, train_data, train_data, presence),
                    std::invalid_argument);
    const auto wrong_n = sample_presence(MissingRateVector{cfg.targets}, 4, 1);
    CHECK_THROWS_AS(train_and_evaluate(cfg, train_data, train_data, wrong_n),
                    std::invalid_argument);
}

TEST_CASE("config parsing, validation and re-emission") {
    const std::string text = R"(
# comment
method = moddrop
epochs = 5
lr = 1e-3
targets = 0.1,0.2,0.3
data.samples = 10
data.shape = 32x32
data.noise = 0.05
backbone.width = 8
)";
    ExperimentConfig cfg = parse_config(text);
    CHECK(cfg.method == "moddrop");
    CHECK(cfg.epochs == 5);
    CHECK(cfg.lr == doctest::Approx(1e-3));
    CHECK(cfg.data.n_samples == 10);
    CHECK(cfg.data.shape == std::vector<int>{32, 32});
    CHECK(cfg.backbone.width == 8);
    CHECK(cfg.backbone.rank == 2);

    // defaults follow the documented experiment setup
    const ExperimentConfig d = parse_config("");
    CHECK(d.lr == doctest::Approx(2e-4));
    CHECK(d.weight_decay == doctest::Approx(1e-4));
    CHECK(d.poly_p == doctest::Approx(0.9));
    CHECK(d.tau == doctest::Approx(4.0));
    CHECK(d.lambda1 == doctest::Approx(0.5));
    CHECK(d.lambda2 == doctest::Approx(0.1));
    CHECK(d.gamma == doctest::Approx(0.01));

    CHECK_THROWS_AS(parse_config("unknown_key = 1"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("method = pmr"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("epochs = 0"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("epochs = abc"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("method"), std::invalid_argument);

    const std::string emitted = config_text(cfg);
    const ExperimentConfig back = parse_config(emitted);
    CHECK(back.method == cfg.method);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.lr == cfg.lr);
    CHECK(back.targets == cfg.targets);
    CHECK(back.data.shape == cfg.data.shape);
}

TEST_CASE("augmentation keeps labels and images consistent") {
    ExperimentConfig cfg = tiny_config();
    cfg.augment = true;
    cfg.epochs = 1;
    DatasetSpec test_spec = cfg.data;
    test_spec.n_samples = 2;
    const auto train_data = generate_dataset(cfg.data);
    const auto test_data = generate_dataset(test_spec);
    const auto presence =
        sample_presence(MissingRateVector{cfg.targets}, cfg.data.n_samples, 1);
    const RunResult a = train_and_evaluate(cfg, train_data, test_data, presence);
    const RunResult b = train_and_evaluate(cfg, train_data, test_data, presence);
    CHECK(a.loss_trace == b.loss_trace);  // augmentation draws are seeded
    CHECK(std::isfinite(a.loss_trace[0]));
}

TEST_CASE("deterministic mode env toggle") {
    unsetenv("MODBAL_DETERMINISTIC");
    CHECK(deterministic_mode());
    setenv("MODBAL_DETERMINISTIC", "0", 1);
    CHECK(!deterministic_mode());
    setenv("MODBAL_DETERMINISTIC", "off", 1);
    CHECK(!deterministic_mode());
    setenv("MODBAL_DETERMINISTIC", "1", 1);
    CHECK(deterministic_mode());
    unsetenv("MODBAL_DETERMINISTIC");
}

TEST_CASE("dataset spec files parse") {
    const std::string text = "data.samples = 4\ndata.modalities = 2\ndata.classes = 2\n"
                             "data.shape = 16x16\ndata.noise = 0\ndata.seed = 9\n";
    const DatasetSpec spec = parse_dataset_spec(text);
    CHECK(spec.n_samples == 4);
    CHECK(spec.n_modalities == 2);
    CHECK_THROWS_AS(parse_dataset_spec("data.samples = 4\nbogus = 1\n"), std::invalid_argument);
}
