#include "modbal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace modbal {

void validate(const DatasetSpec& spec) {
    if (spec.n_samples < 0) throw std::invalid_argument("dataset: n_samples must be >= 0");
    if (spec.n_modalities < 2) throw std::invalid_argument("dataset: need M >= 2");
    if (spec.n_classes < 2) throw std::invalid_argument("dataset: need K >= 2");
    if (spec.noise < 0) throw std::invalid_argument("dataset: noise must be >= 0");
    if (spec.shape.size() != 2 && spec.shape.size() != 3)
        throw std::invalid_argument("dataset: spatial rank must be 2 or 3");
    for (int d : spec.shape)
        if (d < 4) throw std::invalid_argument("dataset: spatial dims must be >= 4");
    if (!(spec.fg_frac_lo > 0 && spec.fg_frac_hi < 1 && spec.fg_frac_lo <= spec.fg_frac_hi))
        throw std::invalid_argument("dataset: foreground band must satisfy 0 < lo <= hi < 1");
    if (!(spec.nest_ratio > 0 && spec.nest_ratio < 1))
        throw std::invalid_argument("dataset: nest_ratio must lie in (0,1)");
    if (!(spec.nest_jitter >= 0 && spec.nest_jitter < 1))
        throw std::invalid_argument("dataset: nest_jitter must lie in [0,1)");
    if (spec.nest_ratio * (1 + spec.nest_jitter) >= 1)
        throw std::invalid_argument("dataset: jittered nest ratio must stay below 1");
    if (!spec.intensity.empty()) {
        if (static_cast<int>(spec.intensity.size()) != spec.n_modalities)
            throw std::invalid_argument("dataset: intensity profile rows must equal M");
        for (const auto& row : spec.intensity)
            if (static_cast<int>(row.size()) != spec.n_classes)
                throw std::invalid_argument("dataset: intensity profile columns must equal K");
    }
}

std::vector<std::vector<double>> default_intensity_profile(int n_modalities, int n_classes) {
    // Highest-index modality is the richest: full visibility, full contrast.
    // Lower modalities fade out the inner (higher) classes first, mirroring
    // sequences that are blind to specific sub-regions.
    std::vector<std::vector<double>> p(n_modalities, std::vector<double>(n_classes, 0.0));
    for (int m = 0; m < n_modalities; ++m) {
        double richness = n_modalities == 1 ? 1.0 : static_cast<double>(m) / (n_modalities - 1);
        for (int k = 1; k < n_classes; ++k) {
            // Visibility cutoff: modality m sees class k only if k is within
            // its visible depth; richest sees all K-1 foreground classes.
            int visible_depth = 1 + static_cast<int>(std::floor(richness * (n_classes - 2) + 1e-9));
            if (k <= visible_depth)
                p[m][k] = (0.45 + 0.55 * richness) * k / (n_classes - 1);
            else
                p[m][k] = p[m][0];
        }
    }
    return p;
}

namespace {

struct Ellipsoid {
    std::vector<double> center;
    std::vector<double> radii;

    bool contains(const std::vector<int>& idx) const {
        double s = 0;
        for (size_t a = 0; a < center.size(); ++a) {
            double d = (idx[a] - center[a]) / radii[a];
            s += d * d;
        }
        return s <= 1.0;
    }
};

double region_measure(const std::vector<double>& radii) {
    if (radii.size() == 2) return 3.141592653589793 * radii[0] * radii[1];
    return 4.0 / 3.0 * 3.141592653589793 * radii[0] * radii[1] * radii[2];
}

// Scale radii so the ellipsoid measure equals `target` times the domain.
std::vector<double> radii_for_fraction(double frac, const std::vector<int>& shape,
                                       const std::vector<double>& aspect) {
    const int rank = static_cast<int>(shape.size());
    double domain = 1.0;
    for (int d : shape) domain *= d;
    std::vector<double> r(aspect);
    double cur = region_measure(r);
    double scale = std::pow(frac * domain / cur, 1.0 / rank);
    for (double& v : r) v *= scale;
    return r;
}

}  // namespace

MultiModalSample generate_sample(const DatasetSpec& spec, int index) {
    const int rank = static_cast<int>(spec.shape.size());
    const int K = spec.n_classes;
    Rng rng(Rng::derive(spec.seed, static_cast<uint64_t>(index)));

    // Nested ellipsoids: class k+1 strictly inside class k.
    std::vector<Ellipsoid> regions;
    double frac = rng.uniform(spec.fg_frac_lo, spec.fg_frac_hi);
    for (int k = 1; k < K; ++k) {
        Ellipsoid e;
        std::vector<double> aspect(rank);
        for (int a = 0; a < rank; ++a) aspect[a] = rng.uniform(0.75, 1.35);
        e.radii = radii_for_fraction(frac, spec.shape, aspect);
        for (double r : e.radii)
            if (r < 1.0)
                throw std::invalid_argument(
                    "dataset: spatial shape too small for " + std::to_string(K - 1) +
                    " nested regions");
        if (k == 1) {
            e.center.resize(rank);
            for (int a = 0; a < rank; ++a) {
                double lo = e.radii[a] + 1.0, hi = spec.shape[a] - 2.0 - e.radii[a];
                if (lo >= hi)
                    throw std::invalid_argument("dataset: spatial shape too small for regions");
                e.center[a] = rng.uniform(lo, hi);
            }
        } else {
            // Keep the child strictly inside the parent: in parent-scaled
            // coordinates the child maps to an offset o plus a squashed
            // ball of radius max_a(r_child/r_parent), so |o| below
            // 1 - max_ratio (with a pixel margin) guarantees containment.
            const Ellipsoid& parent = regions.back();
            double max_ratio = 0, min_parent = 1e9;
            for (int a = 0; a < rank; ++a) {
                max_ratio = std::max(max_ratio, e.radii[a] / parent.radii[a]);
                min_parent = std::min(min_parent, parent.radii[a]);
            }
            const double margin = std::max(0.0, 1.0 - max_ratio - 1.5 / min_parent);
            std::vector<double> dir(rank);
            double norm = 0;
            for (int a = 0; a < rank; ++a) {
                dir[a] = rng.normal();
                norm += dir[a] * dir[a];
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            const double rho = margin * 0.9 * rng.uniform();
            e.center.resize(rank);
            for (int a = 0; a < rank; ++a)
                e.center[a] = parent.center[a] + rho * (dir[a] / norm) * parent.radii[a];
        }
        regions.push_back(e);
        frac *= spec.nest_ratio * (1.0 + spec.nest_jitter * rng.uniform(-1.0, 1.0));
    }

    MultiModalSample s;
    s.label.shape = spec.shape;
    size_t pixels = 1;
    for (int d : spec.shape) pixels *= static_cast<size_t>(d);
    s.label.v.assign(pixels, 0);

    std::vector<int> idx(rank, 0);
    for (size_t i = 0; i < pixels; ++i) {
        for (int k = static_cast<int>(regions.size()); k >= 1; --k) {
            if (regions[static_cast<size_t>(k) - 1].contains(idx)) {
                s.label.v[i] = static_cast<uint8_t>(k);
                break;
            }
        }
        for (int a = rank - 1; a >= 0; --a) {
            if (++idx[a] < spec.shape[a]) break;
            idx[a] = 0;
        }
    }

    const auto profile = spec.intensity.empty()
                             ? default_intensity_profile(spec.n_modalities, K)
                             : spec.intensity;

    s.presence_row.assign(static_cast<size_t>(spec.n_modalities), 1);
    s.images.resize(static_cast<size_t>(spec.n_modalities));
    for (int m = 0; m < spec.n_modalities; ++m) {
        Tensor img(spec.shape);
        double mean = 0;
        for (size_t i = 0; i < pixels; ++i) {
            double v = profile[m][s.label.v[i]] + spec.noise * rng.normal();
            img[i] = v;
            mean += v;
        }
        mean /= static_cast<double>(pixels);
        double var = 0;
        for (size_t i = 0; i < pixels; ++i) {
            img[i] -= mean;
            var += img[i] * img[i];
        }
        var /= static_cast<double>(pixels);
        double inv_sd = var > 1e-24 ? 1.0 / std::sqrt(var) : 0.0;
        // Snap to f32 so the PASS container round-trips losslessly.
        for (size_t i = 0; i < pixels; ++i)
            img[i] = static_cast<double>(static_cast<float>(img[i] * inv_sd));
        s.images[m] = std::move(img);
    }
    return s;
}

std::vector<MultiModalSample> generate_dataset(const DatasetSpec& spec) {
    validate(spec);
    std::vector<MultiModalSample> out;
    out.reserve(static_cast<size_t>(spec.n_samples));
    for (int i = 0; i < spec.n_samples; ++i) out.push_back(generate_sample(spec, i));
    return out;
}

MultiModalSample apply_presence(const MultiModalSample& sample, const std::vector<uint8_t>& row) {
    if (row.size() != sample.presence_row.size())
        throw std::invalid_argument("apply_presence: row length does not match M");
    if (std::all_of(row.begin(), row.end(), [](uint8_t v) { return v == 0; }))
        throw std::invalid_argument("apply_presence: row drops every modality");
    MultiModalSample out;
    out.label = sample.label;
    out.presence_row = row;
    out.images.resize(sample.images.size());
    for (size_t m = 0; m < row.size(); ++m) {
        if (!row[m]) continue;
        if (sample.images[m].empty())
            throw std::invalid_argument("apply_presence: modality " + std::to_string(m) +
                                        " has no stored image");
        out.images[m] = sample.images[m];
    }
    return out;
}

// ---------------------------------------------------------------------------
// PASS container

namespace {

constexpr uint8_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 1;
constexpr uint8_t kDtypeU8 = 2;

void put_u32(std::string& buf, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    buf.append(b, 4);
}

uint32_t get_u32(const std::string& buf, size_t& off) {
    if (off + 4 > buf.size()) throw std::runtime_error("container: truncated file");
    auto b = reinterpret_cast<const unsigned char*>(buf.data() + off);
    off += 4;
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_container(const std::vector<MultiModalSample>& samples, const std::string& path) {
    uint32_t m_count = 0, k_count = 0, rank = 0;
    std::vector<int> dims;
    if (!samples.empty()) {
        m_count = static_cast<uint32_t>(samples[0].presence_row.size());
        dims = samples[0].label.shape;
        rank = static_cast<uint32_t>(dims.size());
        for (const auto& s : samples) {
            if (s.presence_row.size() != m_count || s.label.shape != dims)
                throw std::invalid_argument("container: samples disagree on M or shape");
            for (uint8_t v : s.label.v) k_count = std::max<uint32_t>(k_count, v + 1u);
        }
    }

    std::string buf;
    buf.append("PASS", 4);
    buf.push_back(static_cast<char>(kVersion));
    buf.push_back(static_cast<char>(kDtypeF32));
    buf.push_back(static_cast<char>(kDtypeU8));
    buf.push_back(static_cast<char>(rank));
    put_u32(buf, static_cast<uint32_t>(samples.size()));
    put_u32(buf, m_count);
    put_u32(buf, k_count);
    for (uint32_t a = 0; a < rank; ++a) put_u32(buf, static_cast<uint32_t>(dims[a]));

    for (const auto& s : samples) {
        buf.append(reinterpret_cast<const char*>(s.presence_row.data()), s.presence_row.size());
        for (uint32_t m = 0; m < m_count; ++m) {
            if (!s.presence_row[m]) {
                if (!s.images[m].empty())
                    throw std::invalid_argument("container: image stored for absent modality");
                continue;
            }
            const Tensor& img = s.images[m];
            if (img.shape() != dims)
                throw std::invalid_argument("container: image shape mismatch");
            for (size_t i = 0; i < img.size(); ++i) {
                float f = static_cast<float>(img[i]);
                char b[4];
                std::memcpy(b, &f, 4);
                buf.append(b, 4);
            }
        }
        buf.append(reinterpret_cast<const char*>(s.label.v.data()), s.label.v.size());
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("container: cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("container: write failed for " + path);
}

std::vector<MultiModalSample> load_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("container: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    size_t off = 0;
    if (buf.size() < 8 || buf.compare(0, 4, "PASS") != 0)
        throw std::runtime_error("container: bad magic in " + path);
    off = 4;
    uint8_t version = static_cast<uint8_t>(buf[off++]);
    if (version != kVersion)
        throw std::runtime_error("container: unsupported version in " + path);
    uint8_t dt_img = static_cast<uint8_t>(buf[off++]);
    uint8_t dt_lab = static_cast<uint8_t>(buf[off++]);
    if (dt_img != kDtypeF32 || dt_lab != kDtypeU8)
        throw std::runtime_error("container: dtype mismatch in " + path);
    uint8_t rank = static_cast<uint8_t>(buf[off++]);
    if (rank > 3) throw std::runtime_error("container: bad rank in " + path);

    uint32_t count = get_u32(buf, off);
    uint32_t m_count = get_u32(buf, off);
    get_u32(buf, off);  // K; informational
    std::vector<int> dims(rank);
    size_t pixels = rank ? 1 : 0;
    for (uint8_t a = 0; a < rank; ++a) {
        dims[a] = static_cast<int>(get_u32(buf, off));
        pixels *= static_cast<size_t>(dims[a]);
    }

    std::vector<MultiModalSample> out;
    out.reserve(count);
    for (uint32_t r = 0; r < count; ++r) {
        MultiModalSample s;
        if (off + m_count > buf.size()) throw std::runtime_error("container: truncated file");
        s.presence_row.assign(buf.begin() + static_cast<long>(off),
                              buf.begin() + static_cast<long>(off + m_count));
        off += m_count;
        s.images.resize(m_count);
        for (uint32_t m = 0; m < m_count; ++m) {
            if (!s.presence_row[m]) continue;
            if (off + pixels * 4 > buf.size()) throw std::runtime_error("container: truncated file");
            Tensor img(dims);
            for (size_t i = 0; i < pixels; ++i) {
                float v;
                std::memcpy(&v, buf.data() + off, 4);
                off += 4;
                img[i] = static_cast<double>(v);
            }
            s.images[m] = std::move(img);
        }
        if (off + pixels > buf.size()) throw std::runtime_error("container: truncated file");
        s.label.shape = dims;
        s.label.v.assign(reinterpret_cast<const uint8_t*>(buf.data() + off),
                         reinterpret_cast<const uint8_t*>(buf.data() + off + pixels));
        off += pixels;
        out.push_back(std::move(s));
    }
    if (off != buf.size()) throw std::runtime_error("container: trailing bytes in " + path);
    return out;
}

}  // namespace modbal
