#include "modbal/config.hpp"

#include <charconv>
#include <optional>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace modbal {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (...) {
        throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
    }
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int i = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (...) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
    }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long i = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<uint64_t>(i);
    } catch (...) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) out.push_back(to_double(key, trim(item)));
    return out;
}

std::vector<int> to_ints(const std::string& key, const std::string& v, char sep) {
    std::vector<int> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, sep)) out.push_back(to_int(key, trim(item)));
    return out;
}

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string join_doubles(const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += fmt(v[i]);
    }
    return s;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        lineno++;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("config: empty key at line " + std::to_string(lineno));
        if (kv.count(key)) throw std::invalid_argument("config: duplicate key " + key);
        kv[key] = val;
    }
    return kv;
}

namespace {

// Applies data.* keys onto a DatasetSpec; consumes handled keys.
void apply_data_keys(std::map<std::string, std::string>& kv, DatasetSpec& d) {
    auto take = [&kv](const std::string& k) -> std::optional<std::string> {
        auto it = kv.find(k);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    if (auto v = take("data.samples")) d.n_samples = to_int("data.samples", *v);
    if (auto v = take("data.modalities")) d.n_modalities = to_int("data.modalities", *v);
    if (auto v = take("data.classes")) d.n_classes = to_int("data.classes", *v);
    if (auto v = take("data.shape")) d.shape = to_ints("data.shape", *v, 'x');
    if (auto v = take("data.noise")) d.noise = to_double("data.noise", *v);
    if (auto v = take("data.fg_frac")) {
        auto band = to_doubles("data.fg_frac", *v);
        if (band.size() != 2) throw std::invalid_argument("config: data.fg_frac needs lo,hi");
        d.fg_frac_lo = band[0];
        d.fg_frac_hi = band[1];
    }
    if (auto v = take("data.nest_ratio")) d.nest_ratio = to_double("data.nest_ratio", *v);
    if (auto v = take("data.nest_jitter")) d.nest_jitter = to_double("data.nest_jitter", *v);
    if (auto v = take("data.seed")) d.seed = to_u64("data.seed", *v);
    for (int m = 0; m < 64; ++m) {
        auto v = take("data.profile" + std::to_string(m));
        if (!v) break;
        d.intensity.push_back(to_doubles("data.profile", *v));
    }
}

}  // namespace

DatasetSpec parse_dataset_spec(const std::string& text) {
    auto kv = parse_key_values(text);
    DatasetSpec d;
    apply_data_keys(kv, d);
    if (!kv.empty()) throw std::invalid_argument("config: unknown key " + kv.begin()->first);
    validate(d);
    return d;
}

DatasetSpec load_dataset_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_dataset_spec(ss.str());
}

ExperimentConfig parse_config(const std::string& text) {
    auto kv = parse_key_values(text);
    ExperimentConfig c;
    auto take = [&kv](const std::string& k) -> std::optional<std::string> {
        auto it = kv.find(k);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };

    if (auto v = take("method")) c.method = *v;
    if (auto v = take("toggle.pixel")) c.toggle_pixel = to_bool("toggle.pixel", *v);
    if (auto v = take("toggle.proto")) c.toggle_proto = to_bool("toggle.proto", *v);
    if (auto v = take("toggle.delta")) c.toggle_delta = to_bool("toggle.delta", *v);
    if (auto v = take("toggle.beta")) c.toggle_beta = to_bool("toggle.beta", *v);
    if (auto v = take("lr")) c.lr = to_double("lr", *v);
    if (auto v = take("weight_decay")) c.weight_decay = to_double("weight_decay", *v);
    if (auto v = take("poly_p")) c.poly_p = to_double("poly_p", *v);
    if (auto v = take("epochs")) c.epochs = to_int("epochs", *v);
    if (auto v = take("tau")) c.tau = to_double("tau", *v);
    if (auto v = take("lambda1")) c.lambda1 = to_double("lambda1", *v);
    if (auto v = take("lambda2")) c.lambda2 = to_double("lambda2", *v);
    if (auto v = take("gamma")) c.gamma = to_double("gamma", *v);
    if (auto v = take("seed")) c.seed = to_u64("seed", *v);
    if (auto v = take("augment")) c.augment = to_bool("augment", *v);

    if (auto v = take("backbone.width")) c.backbone.width = to_int("backbone.width", *v);
    if (auto v = take("backbone.levels")) c.backbone.levels = to_int("backbone.levels", *v);
    if (auto v = take("backbone.fusion")) c.backbone.fusion = fusion_from_string(*v);
    if (auto v = take("backbone.upsample")) c.backbone.upsample = upsample_from_string(*v);

    apply_data_keys(kv, c.data);
    if (auto v = take("test_samples")) c.test_samples = to_int("test_samples", *v);
    if (auto v = take("dataset_train")) c.dataset_train = *v;
    if (auto v = take("dataset_test")) c.dataset_test = *v;
    if (auto v = take("targets")) c.targets = to_doubles("targets", *v);
    if (auto v = take("presence")) c.presence = *v;
    if (auto v = take("out_dir")) c.out_dir = *v;

    if (!kv.empty()) throw std::invalid_argument("config: unknown key " + kv.begin()->first);

    c.backbone.n_modalities = c.data.n_modalities;
    c.backbone.n_classes = c.data.n_classes;
    c.backbone.rank = static_cast<int>(c.data.shape.size());
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.method != "baseline" && cfg.method != "moddrop" && cfg.method != "passion")
        throw std::invalid_argument("config: unknown method '" + cfg.method + "'");
    if (cfg.epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (cfg.lr <= 0 || cfg.tau <= 0 || cfg.gamma < 0)
        throw std::invalid_argument("config: rates must be positive");
    if (cfg.weight_decay < 0 || cfg.lambda1 < 0 || cfg.lambda2 < 0)
        throw std::invalid_argument("config: weights must be nonnegative");
    if (cfg.test_samples < 1) throw std::invalid_argument("config: test_samples must be >= 1");
    if (cfg.dataset_train.empty()) validate(cfg.data);
    if (static_cast<int>(cfg.targets.size()) != cfg.data.n_modalities && cfg.presence.empty())
        throw std::invalid_argument("config: targets length must equal data.modalities");
    validate(cfg.backbone);
}

std::string config_text(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "# resolved experiment configuration\n";
    os << "method = " << c.method << "\n";
    os << "toggle.pixel = " << (c.toggle_pixel ? "true" : "false") << "\n";
    os << "toggle.proto = " << (c.toggle_proto ? "true" : "false") << "\n";
    os << "toggle.delta = " << (c.toggle_delta ? "true" : "false") << "\n";
    os << "toggle.beta = " << (c.toggle_beta ? "true" : "false") << "\n";
    os << "lr = " << fmt(c.lr) << "            # initial learning rate per step\n";
    os << "weight_decay = " << fmt(c.weight_decay) << "  # decoupled, per step\n";
    os << "poly_p = " << fmt(c.poly_p) << "          # lr decay exponent\n";
    os << "epochs = " << c.epochs << "\n";
    os << "tau = " << fmt(c.tau) << "               # distillation temperature\n";
    os << "lambda1 = " << fmt(c.lambda1) << "         # pixel distillation weight\n";
    os << "lambda2 = " << fmt(c.lambda2) << "         # prototype distillation weight\n";
    os << "gamma = " << fmt(c.gamma) << "          # beta updating rate per epoch\n";
    os << "seed = " << c.seed << "\n";
    os << "augment = " << (c.augment ? "true" : "false") << "\n";
    os << "backbone.width = " << c.backbone.width << "    # channels at full resolution\n";
    os << "backbone.levels = " << c.backbone.levels << "\n";
    os << "backbone.fusion = " << to_string(c.backbone.fusion) << "\n";
    os << "backbone.upsample = " << to_string(c.backbone.upsample) << "\n";
    os << "data.samples = " << c.data.n_samples << "\n";
    os << "data.modalities = " << c.data.n_modalities << "\n";
    os << "data.classes = " << c.data.n_classes << "\n";
    os << "data.shape = ";
    for (size_t i = 0; i < c.data.shape.size(); ++i)
        os << (i ? "x" : "") << c.data.shape[i];
    os << "          # pixels per axis\n";
    os << "data.noise = " << fmt(c.data.noise) << "        # additive stddev, intensity units\n";
    os << "data.fg_frac = " << fmt(c.data.fg_frac_lo) << "," << fmt(c.data.fg_frac_hi)
       << "  # class-1 area fraction band\n";
    os << "data.nest_ratio = " << fmt(c.data.nest_ratio) << "\n";
    os << "data.nest_jitter = " << fmt(c.data.nest_jitter) << "\n";
    os << "data.seed = " << c.data.seed << "\n";
    const auto prof = c.data.intensity.empty()
                          ? default_intensity_profile(c.data.n_modalities, c.data.n_classes)
                          : c.data.intensity;
    for (size_t m = 0; m < prof.size(); ++m)
        os << "data.profile" << m << " = " << join_doubles(prof[m]) << "\n";
    if (!c.dataset_train.empty()) os << "dataset_train = " << c.dataset_train << "\n";
    if (!c.dataset_test.empty()) os << "dataset_test = " << c.dataset_test << "\n";
    os << "test_samples = " << c.test_samples << "\n";
    os << "targets = " << join_doubles(c.targets) << "    # per-modality missing rates\n";
    if (!c.presence.empty()) os << "presence = " << c.presence << "\n";
    os << "out_dir = " << c.out_dir << "\n";
    return os.str();
}

bool deterministic_mode() {
    const char* v = std::getenv("MODBAL_DETERMINISTIC");
    if (!v) return true;
    const std::string s(v);
    return !(s == "0" || s == "false" || s == "off");
}

}  // namespace modbal
