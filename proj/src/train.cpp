#include "modbal/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace modbal {

MethodPlan build_method_loss(const std::string& method, bool toggle_pixel, bool toggle_proto,
                             bool toggle_delta, bool toggle_beta) {
    MethodPlan p;
    if (method == "baseline") {
        p.use_reg = true;
    } else if (method == "moddrop") {
        p.use_reg = true;
        p.moddrop = true;
    } else if (method == "passion") {
        p.pixel = toggle_pixel;
        p.proto = toggle_proto;
        p.delta_gate = toggle_delta;
        p.beta_update = toggle_beta;
    } else {
        throw std::invalid_argument("train: unknown method '" + method + "'");
    }
    return p;
}

real poly_lr(int64_t step, int64_t total_steps, real lr0, real p) {
    if (total_steps < 1) throw std::invalid_argument("train: total steps must be >= 1");
    if (step < 0 || step > total_steps) throw std::invalid_argument("train: step out of range");
    const real frac = 1.0 - static_cast<real>(step) / static_cast<real>(total_steps);
    return lr0 * std::pow(frac, p);
}

std::vector<uint8_t> moddrop_row(const std::vector<uint8_t>& row, Rng& rng) {
    std::vector<int> avail;
    for (size_t m = 0; m < row.size(); ++m)
        if (row[m]) avail.push_back(static_cast<int>(m));
    if (avail.empty()) throw std::invalid_argument("moddrop: empty presence row");
    std::vector<uint8_t> kept = row;
    int survivors = 0;
    for (int m : avail) {
        if (rng.uniform() < 0.5) kept[static_cast<size_t>(m)] = 0;
        else survivors++;
    }
    if (survivors == 0) kept[static_cast<size_t>(avail[rng.integer(avail.size())])] = 1;
    return kept;
}

namespace {

std::string fmt(real v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string rp_log_csv(const std::vector<RpLogRow>& rows) {
    std::ostringstream os;
    os << "epoch,modality,mean_rp,beta\n";
    for (const auto& r : rows)
        os << r.epoch << ',' << r.modality << ',' << fmt(r.mean_rp) << ',' << fmt(r.beta) << '\n';
    return os.str();
}

std::vector<RpLogRow> parse_rp_log_csv(const std::string& text) {
    std::vector<RpLogRow> rows;
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "epoch,modality,mean_rp,beta")
        throw std::invalid_argument("rp log: bad header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        RpLogRow r;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        r.epoch = std::stoi(cell);
        std::getline(ls, cell, ',');
        r.modality = std::stoi(cell);
        std::getline(ls, cell, ',');
        r.mean_rp = std::stod(cell);
        std::getline(ls, cell, ',');
        r.beta = std::stod(cell);
        rows.push_back(r);
    }
    return rows;
}

std::string rp_plot_svg(const std::vector<RpLogRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("rp plot: empty log");
    int n_mod = 0, n_epoch = 0;
    real lo = 0, hi = 0;
    for (const auto& r : rows) {
        n_mod = std::max(n_mod, r.modality + 1);
        n_epoch = std::max(n_epoch, r.epoch + 1);
        lo = std::min(lo, r.mean_rp);
        hi = std::max(hi, r.mean_rp);
    }
    if (hi - lo < 1e-6) { hi += 0.05; lo -= 0.05; }

    const real W = 640, H = 400, ml = 60, mr = 20, mt = 20, mb = 40;
    const real pw = W - ml - mr, ph = H - mt - mb;
    auto sx = [&](real e) {
        return ml + (n_epoch > 1 ? pw * e / (n_epoch - 1) : pw * 0.5);
    };
    auto sy = [&](real v) { return mt + ph * (hi - v) / (hi - lo); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << fmt(sy(0)) << "\" x2=\"" << (W - mr) << "\" y2=\""
       << fmt(sy(0)) << "\" stroke=\"#999\" stroke-dasharray=\"4,3\" class=\"zero-line\"/>\n";
    os << "<text x=\"" << (ml - 8) << "\" y=\"" << fmt(sy(0) + 4)
       << "\" text-anchor=\"end\" font-size=\"12\">0</text>\n";
    os << "<text x=\"" << (ml + pw / 2) << "\" y=\"" << (H - 8)
       << "\" text-anchor=\"middle\" font-size=\"13\">epoch</text>\n";
    os << "<text x=\"14\" y=\"" << (mt + ph / 2)
       << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 "
       << (mt + ph / 2) << ")\">mean RP</text>\n";

    for (int m = 0; m < n_mod; ++m) {
        std::vector<std::pair<int, real>> pts;
        for (const auto& r : rows)
            if (r.modality == m) pts.emplace_back(r.epoch, r.mean_rp);
        std::sort(pts.begin(), pts.end());
        std::string coords, values;
        for (const auto& [e, v] : pts) {
            if (!coords.empty()) { coords += ' '; values += ' '; }
            coords += fmt(sx(static_cast<real>(e))) + ',' + fmt(sy(v));
            values += fmt(v);
        }
        const char* color = palette[m % 8];
        os << "<polyline class=\"curve\" data-modality=\"" << m << "\" data-values=\"" << values
           << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
           << coords << "\"/>\n";
        os << "<text class=\"curve-label\" x=\"" << (W - mr - 4) << "\" y=\"" << (mt + 16 + 16 * m)
           << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">m" << m
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void emit_rp_plot(const std::vector<RpLogRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("rp plot: cannot open " + path + " for writing");
    f << rp_plot_svg(rows);
    if (!f) throw std::runtime_error("rp plot: write failed for " + path);
}

StepOutput compute_step(const Backbone& net, const ForwardState& st, const LabelMap& label,
                        const MethodPlan& plan, const PreferenceState& state,
                        const ExperimentConfig& cfg, bool want_grads) {
    StepOutput out;
    const auto& pyr = st.pyramid;
    const int levels = net.config().levels;

    std::vector<Tensor> seg_grads;
    out.seg = seg_loss(pyr.fused_logits, label, net.config().upsample,
                       want_grads ? &seg_grads : nullptr);
    if (want_grads) out.grads.fused = std::move(seg_grads);

    // Teacher similarity field from the fused output logits (constants).
    const PrototypeSet teacher_protos = compute_prototypes(pyr.fused_logits[0], label);
    const SimilarityField teacher_field = similarity_field(pyr.fused_logits[0], teacher_protos);

    std::map<int, SimilarityField> student_fields;
    for (int m : st.available) {
        const Tensor& uni0 = pyr.uni_logits.at(m);
        const PrototypeSet protos = compute_prototypes(uni0, label);
        student_fields[m] = similarity_field(uni0, protos);
        out.dgap[m] = knowledge_gap(student_fields[m], teacher_field);
    }
    std::set<int> avail_set(st.available.begin(), st.available.end());
    out.pref = relative_preference(out.dgap, avail_set, net.config().n_modalities);

    if (want_grads)
        for (int m : st.available)
            out.grads.uni[m].assign(static_cast<size_t>(levels), Tensor());

    if (plan.use_reg) {
        std::map<int, Tensor> reg_grads;
        out.reg = baseline_reg_loss(pyr, label, want_grads ? &reg_grads : nullptr);
        if (want_grads)
            for (auto& [m, g] : reg_grads) {
                Tensor& dst = out.grads.uni[m][0];
                if (dst.empty()) dst = std::move(g);
                else
                    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
            }
        out.total = out.seg;
        for (const auto& [m, v] : out.reg) out.total += v;
        return out;
    }

    // passion objective
    std::map<int, real> proto_terms;
    for (int m : st.available) {
        if (plan.pixel) {
            if (pyr.uni_pyramids.count(m) == 0)
                throw std::invalid_argument("train: pixel distillation needs uni pyramids");
            std::vector<Tensor> kd_grads;
            out.pixel[m] = pixel_distill(pyr.uni_pyramids.at(m), pyr.fused_logits, cfg.tau,
                                         want_grads ? &kd_grads : nullptr);
            if (want_grads) {
                const real w = cfg.lambda1 * state.beta[static_cast<size_t>(m)];
                auto& dst = out.grads.uni[m];
                for (int l = 0; l < levels; ++l) {
                    if (kd_grads[static_cast<size_t>(l)].empty()) continue;
                    if (dst[static_cast<size_t>(l)].empty())
                        dst[static_cast<size_t>(l)] = Tensor(kd_grads[static_cast<size_t>(l)].shape());
                    for (size_t i = 0; i < kd_grads[static_cast<size_t>(l)].size(); ++i)
                        dst[static_cast<size_t>(l)][i] += w * kd_grads[static_cast<size_t>(l)][i];
                }
            }
        }
        const int delta = plan.delta_gate ? out.pref.delta.at(m) : 1;
        if (plan.proto && delta) {
            if (want_grads) {
                Tensor g(pyr.uni_logits.at(m).shape());
                proto_terms[m] = proto_distill(pyr.uni_logits.at(m), label, teacher_field, &g);
                Tensor& dst = out.grads.uni[m][0];
                if (dst.empty()) dst = Tensor(g.shape());
                for (size_t i = 0; i < g.size(); ++i) dst[i] += cfg.lambda2 * g[i];
            } else {
                proto_terms[m] = proto_distill(student_fields[m], teacher_field);
            }
        }
    }
    out.proto = proto_terms;

    // Assemble the scalar objective. When the delta gate is off the proto
    // terms are unconditional, which total_loss() cannot express, so sum
    // directly in that case.
    if (plan.delta_gate || !plan.proto) {
        std::map<int, real> pixel_terms = out.pixel;
        if (!plan.pixel)
            for (int m : st.available) pixel_terms[m] = 0.0;
        std::map<int, real> gated_proto = proto_terms;
        if (!plan.proto)
            for (int m : st.available)
                if (out.pref.delta.at(m)) gated_proto[m] = 0.0;
        out.total = total_loss(out.seg, pixel_terms, gated_proto, out.pref, state, cfg.lambda1,
                               cfg.lambda2);
    } else {
        out.total = out.seg;
        for (int m : st.available) {
            if (plan.pixel)
                out.total += cfg.lambda1 * state.beta[static_cast<size_t>(m)] * out.pixel[m];
            out.total += cfg.lambda2 * proto_terms.at(m);
        }
    }
    return out;
}

namespace {

// Rotation by multiples of 90 degrees in the trailing two axes plus a mild
// per-modality intensity affinity; label rotates jointly.
MultiModalSample augment_sample(const MultiModalSample& s, Rng& rng) {
    const int q = static_cast<int>(rng.integer(4));
    MultiModalSample out = s;
    const auto& shape = s.label.shape;
    const int rank = static_cast<int>(shape.size());
    const int H = shape[rank - 2], W = shape[rank - 1];
    if (q != 0 && H == W) {
        const size_t planes = s.label.pixels() / (static_cast<size_t>(H) * W);
        auto rot_index = [&](int y, int x, int quarter, int& ry, int& rx) {
            switch (quarter) {
                case 1: ry = x; rx = H - 1 - y; break;
                case 2: ry = H - 1 - y; rx = W - 1 - x; break;
                default: ry = W - 1 - x; rx = y; break;
            }
        };
        for (size_t pl = 0; pl < planes; ++pl) {
            const size_t base = pl * static_cast<size_t>(H) * W;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    int ry, rx;
                    rot_index(y, x, q, ry, rx);
                    out.label.v[base + static_cast<size_t>(ry) * W + rx] =
                        s.label.v[base + static_cast<size_t>(y) * W + x];
                    for (size_t m = 0; m < s.images.size(); ++m) {
                        if (s.images[m].empty()) continue;
                        out.images[m][base + static_cast<size_t>(ry) * W + rx] =
                            s.images[m][base + static_cast<size_t>(y) * W + x];
                    }
                }
        }
    }
    for (size_t m = 0; m < out.images.size(); ++m) {
        if (out.images[m].empty()) continue;
        const real scale = 1.0 + 0.1 * (2.0 * rng.uniform() - 1.0);
        const real shift = 0.1 * (2.0 * rng.uniform() - 1.0);
        for (size_t i = 0; i < out.images[m].size(); ++i)
            out.images[m][i] = out.images[m][i] * scale + shift;
    }
    return out;
}

}  // namespace

RunResult train_and_evaluate(const ExperimentConfig& cfg,
                             const std::vector<MultiModalSample>& train_full,
                             const std::vector<MultiModalSample>& test_full,
                             const PresenceMatrix& presence) {
    if (static_cast<int>(train_full.size()) != presence.n_samples)
        throw std::invalid_argument("train: presence rows do not match training set size");
    if (!train_full.empty() &&
        train_full[0].n_modalities() != presence.n_modalities)
        throw std::invalid_argument("train: presence columns do not match modality count");

    const MethodPlan plan = build_method_loss(cfg.method, cfg.toggle_pixel, cfg.toggle_proto,
                                              cfg.toggle_delta, cfg.toggle_beta);
    const MissingRateVector mr = missing_rates(presence);
    PreferenceState state = PreferenceState::init(mr, cfg.gamma);

    // Fixed masking, applied once before training.
    std::vector<MultiModalSample> train;
    train.reserve(train_full.size());
    for (size_t n = 0; n < train_full.size(); ++n) {
        std::vector<uint8_t> row(static_cast<size_t>(presence.n_modalities));
        for (int m = 0; m < presence.n_modalities; ++m)
            row[static_cast<size_t>(m)] = presence.at(static_cast<int>(n), m);
        train.push_back(apply_presence(train_full[n], row));
    }

    uint64_t run_seed = cfg.seed;
    if (!deterministic_mode()) {
        const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
        run_seed = Rng::derive(run_seed, static_cast<uint64_t>(now));
    }

    Backbone net(cfg.backbone, Rng::derive(run_seed, 0x6d6f64656cULL));
    Rng shuffle_rng(Rng::derive(run_seed, 0x73687566ULL));
    Rng drop_rng(Rng::derive(run_seed, 0x64726f70ULL));
    Rng aug_rng(Rng::derive(run_seed, 0x61756774ULL));

    const bool need_uni_pyramids = plan.pixel;
    const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * static_cast<int64_t>(train.size());
    int64_t step = 0;

    RunResult result;
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the dedicated stream.
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = shuffle_rng.integer(i);
            std::swap(order[i - 1], order[j]);
        }
        real epoch_loss = 0;
        for (size_t oi = 0; oi < order.size(); ++oi) {
            const MultiModalSample* sp = &train[order[oi]];
            MultiModalSample scratch;
            if (plan.moddrop) {
                scratch = apply_presence(*sp, moddrop_row(sp->presence_row, drop_rng));
                sp = &scratch;
            }
            if (cfg.augment) {
                scratch = augment_sample(*sp, aug_rng);
                sp = &scratch;
            }

            ForwardState st = net.forward_train(*sp, need_uni_pyramids);
            StepOutput so = compute_step(net, st, sp->label, plan, state, cfg, true);
            state.accumulate(so.pref);
            epoch_loss += so.total;

            net.zero_grad();
            net.backward(st, so.grads);
            net.adamw_step(poly_lr(step, total_steps, cfg.lr, cfg.poly_p), cfg.weight_decay);
            step++;
        }
        result.loss_trace.push_back(epoch_loss / static_cast<real>(train.size()));

        const std::vector<real> mean_rp = state.epoch_mean_rp();
        for (int m = 0; m < presence.n_modalities; ++m) {
            RpLogRow row;
            row.epoch = epoch;
            row.modality = m;
            row.mean_rp = mean_rp[static_cast<size_t>(m)];
            row.beta = state.beta[static_cast<size_t>(m)];
            result.rp_log.push_back(row);
        }
        state.update_beta(plan.beta_update);
    }

    result.report = evaluate_combinations(net, test_full, nested_groups(cfg.data.n_classes),
                                          HdVariant::Percentile95);
    result.model.emplace(std::move(net));
    return result;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    std::vector<MultiModalSample> train_full, test_full;
    if (!cfg.dataset_train.empty()) {
        train_full = load_container(cfg.dataset_train);
        if (cfg.dataset_test.empty())
            throw std::invalid_argument("train: dataset_test required with dataset_train");
        test_full = load_container(cfg.dataset_test);
    } else {
        DatasetSpec train_spec = cfg.data;
        train_spec.seed = Rng::derive(cfg.data.seed != 0 ? cfg.data.seed : cfg.seed, 0x7472ULL);
        DatasetSpec test_spec = cfg.data;
        test_spec.n_samples = cfg.test_samples;
        test_spec.seed = Rng::derive(cfg.data.seed != 0 ? cfg.data.seed : cfg.seed, 0x7465ULL);
        train_full = generate_dataset(train_spec);
        test_full = generate_dataset(test_spec);
    }
    if (train_full.empty()) throw std::invalid_argument("train: empty training set");
    const int m_count = train_full[0].n_modalities();
    if (m_count != cfg.backbone.n_modalities)
        throw std::invalid_argument("train: dataset modality count does not match config");

    PresenceManifest pman;
    if (!cfg.presence.empty()) {
        pman = load_presence_manifest(cfg.presence);
        if (pman.matrix.n_modalities != m_count)
            throw std::invalid_argument("train: presence modalities do not match dataset");
        if (pman.matrix.n_samples != static_cast<int>(train_full.size()))
            throw std::invalid_argument("train: presence rows do not match dataset");
    } else {
        pman.targets.rates = cfg.targets;
        pman.seed = Rng::derive(cfg.seed, 0x70726573ULL);
        pman.matrix = sample_presence(pman.targets, static_cast<int>(train_full.size()), pman.seed);
    }

    RunResult run = train_and_evaluate(cfg, train_full, test_full, pman.matrix);

    RunArtifacts art;
    const fs::path out(cfg.out_dir);
    art.checkpoint = (out / "checkpoint.mbck").string();
    art.rp_log = (out / "rp_log.csv").string();
    art.report_csv = (out / "report.csv").string();
    art.report_text = (out / "report.txt").string();
    art.resolved_config = (out / "resolved_config.txt").string();
    art.rp_plot = (out / "rp_plot.svg").string();
    art.presence_manifest = (out / "presence.txt").string();

    run.model->save_checkpoint(art.checkpoint);
    auto write_file = [](const std::string& path, const std::string& content) {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("train: cannot open " + path + " for writing");
        f << content;
        if (!f) throw std::runtime_error("train: write failed for " + path);
    };
    write_file(art.rp_log, rp_log_csv(run.rp_log));
    write_file(art.report_csv, report_csv(run.report));
    write_file(art.report_text, report_text(run.report));
    write_file(art.resolved_config, config_text(cfg));
    emit_rp_plot(run.rp_log, art.rp_plot);
    save_presence_manifest(pman, art.presence_manifest);
    return art;
}

}  // namespace modbal
