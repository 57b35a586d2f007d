#include "modbal/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace modbal {

real dice_score(const LabelMap& pred, const LabelMap& truth) {
    if (pred.shape != truth.shape) throw std::invalid_argument("dice: shape mismatch");
    size_t a = 0, b = 0, inter = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool pa = pred.v[i] != 0, pb = truth.v[i] != 0;
        a += pa;
        b += pb;
        inter += pa && pb;
    }
    if (a + b == 0) {
        logging::warn("dice: both masks empty, returning 1 by convention");
        return 1.0;
    }
    return 2.0 * static_cast<real>(inter) / static_cast<real>(a + b);
}

std::string to_string(HdVariant v) { return v == HdVariant::Max ? "hd_max" : "hd95"; }

namespace {

constexpr real kInf = std::numeric_limits<real>::infinity();

// Boundary: foreground pixel with a background face-neighbour; pixels on
// the array border count the outside as background.
std::vector<uint8_t> boundary_mask(const LabelMap& mask) {
    const auto& s = mask.shape;
    const int rank = static_cast<int>(s.size());
    std::vector<uint8_t> out(mask.v.size(), 0);
    std::vector<size_t> stride(static_cast<size_t>(rank), 1);
    for (int a = rank - 2; a >= 0; --a)
        stride[a] = stride[a + 1] * static_cast<size_t>(s[a + 1]);

    std::vector<int> idx(static_cast<size_t>(rank), 0);
    for (size_t i = 0; i < mask.v.size(); ++i) {
        if (mask.v[i]) {
            bool edge = false;
            for (int a = 0; a < rank && !edge; ++a) {
                if (idx[a] == 0 || idx[a] == s[a] - 1)
                    edge = true;  // outside the array counts as background
                else if (!mask.v[i - stride[a]] || !mask.v[i + stride[a]])
                    edge = true;
            }
            out[i] = edge ? 1 : 0;
        }
        for (int a = rank - 1; a >= 0; --a) {
            if (++idx[a] < s[a]) break;
            idx[a] = 0;
        }
    }
    return out;
}

// Felzenszwalb & Huttenlocher exact squared EDT, one axis at a time.
// f holds squared distances; w2 is the squared spacing along this axis.
void edt_1d(std::vector<real>& f, real w2, std::vector<real>& scratch_d,
            std::vector<int>& scratch_v, std::vector<real>& scratch_z) {
    const int n = static_cast<int>(f.size());
    auto& d = scratch_d;
    auto& v = scratch_v;
    auto& z = scratch_z;
    d.resize(static_cast<size_t>(n));
    v.resize(static_cast<size_t>(n));
    z.resize(static_cast<size_t>(n) + 1);

    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (f[v[k]] == kInf && k == 0) {
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        real s = ((f[q] + w2 * q * q) - (f[v[k]] + w2 * v[k] * v[k])) / (2.0 * w2 * (q - v[k]));
        while (s <= z[k]) {
            k--;
            s = ((f[q] + w2 * q * q) - (f[v[k]] + w2 * v[k] * v[k])) / (2.0 * w2 * (q - v[k]));
        }
        k++;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    if (f[v[0]] == kInf) {  // row had no sites
        return;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) k++;
        const real dq = static_cast<real>(q - v[k]);
        d[q] = w2 * dq * dq + f[v[k]];
    }
    for (int q = 0; q < n; ++q) f[q] = d[q];
}

// Exact squared Euclidean distance transform of `sites` (1 = distance 0).
std::vector<real> edt_squared(const std::vector<uint8_t>& sites, const std::vector<int>& shape,
                              const std::vector<real>& spacing) {
    const int rank = static_cast<int>(shape.size());
    size_t total = 1;
    for (int d : shape) total *= static_cast<size_t>(d);
    std::vector<real> f(total);
    for (size_t i = 0; i < total; ++i) f[i] = sites[i] ? 0.0 : kInf;

    std::vector<size_t> stride(static_cast<size_t>(rank), 1);
    for (int a = rank - 2; a >= 0; --a)
        stride[a] = stride[a + 1] * static_cast<size_t>(shape[a + 1]);

    std::vector<real> line, sd, sz;
    std::vector<int> sv;
    for (int a = 0; a < rank; ++a) {
        const int n = shape[a];
        const real w2 = spacing[static_cast<size_t>(a)] * spacing[static_cast<size_t>(a)];
        const size_t st = stride[static_cast<size_t>(a)];
        const size_t lines = total / static_cast<size_t>(n);
        line.resize(static_cast<size_t>(n));
        // Iterate all 1-D lines along axis a.
        for (size_t li = 0; li < lines; ++li) {
            // Decompose li into the non-a coordinates to find the base offset.
            size_t rem = li, base = 0;
            for (int b = rank - 1; b >= 0; --b) {
                if (b == a) continue;
                const size_t dim = static_cast<size_t>(shape[b]);
                base += (rem % dim) * stride[static_cast<size_t>(b)];
                rem /= dim;
            }
            bool any = false;
            for (int q = 0; q < n; ++q) {
                line[static_cast<size_t>(q)] = f[base + static_cast<size_t>(q) * st];
                any = any || line[static_cast<size_t>(q)] != kInf;
            }
            if (!any) continue;
            edt_1d(line, w2, sd, sv, sz);
            for (int q = 0; q < n; ++q) f[base + static_cast<size_t>(q) * st] = line[static_cast<size_t>(q)];
        }
    }
    return f;
}

}  // namespace

std::optional<real> hausdorff(const LabelMap& pred, const LabelMap& truth, HdVariant variant,
                              const std::vector<real>& spacing_in) {
    if (pred.shape != truth.shape) throw std::invalid_argument("hausdorff: shape mismatch");
    const int rank = static_cast<int>(pred.shape.size());
    std::vector<real> spacing = spacing_in;
    if (spacing.empty()) spacing.assign(static_cast<size_t>(rank), 1.0);
    if (static_cast<int>(spacing.size()) != rank)
        throw std::invalid_argument("hausdorff: spacing rank mismatch");

    const bool a_empty = std::all_of(pred.v.begin(), pred.v.end(), [](uint8_t v) { return !v; });
    const bool b_empty = std::all_of(truth.v.begin(), truth.v.end(), [](uint8_t v) { return !v; });
    if (a_empty || b_empty) return std::nullopt;

    const std::vector<uint8_t> ba = boundary_mask(pred);
    const std::vector<uint8_t> bb = boundary_mask(truth);
    const std::vector<real> dta = edt_squared(ba, pred.shape, spacing);
    const std::vector<real> dtb = edt_squared(bb, truth.shape, spacing);

    std::vector<real> dists;
    for (size_t i = 0; i < ba.size(); ++i)
        if (ba[i]) dists.push_back(std::sqrt(dtb[i]));
    for (size_t i = 0; i < bb.size(); ++i)
        if (bb[i]) dists.push_back(std::sqrt(dta[i]));

    if (variant == HdVariant::Max) return *std::max_element(dists.begin(), dists.end());
    std::sort(dists.begin(), dists.end());
    const size_t n = dists.size();
    size_t idx = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(n)));
    if (idx > 0) idx -= 1;
    if (idx >= n) idx = n - 1;
    return dists[idx];
}

std::vector<ClassGroup> nested_groups(int n_classes) {
    std::vector<ClassGroup> out;
    for (int j = 1; j < n_classes; ++j) {
        ClassGroup g;
        g.name = "c" + std::to_string(j);
        if (j < n_classes - 1) g.name += "+";
        for (int k = j; k < n_classes; ++k) g.classes.push_back(k);
        out.push_back(std::move(g));
    }
    return out;
}

real EvalReport::subset_mean_dice(size_t si) const {
    real s = 0;
    for (const auto& c : cells[si]) s += c.dice;
    return cells[si].empty() ? 0 : s / static_cast<real>(cells[si].size());
}

LabelMap predict_labels(const Backbone& model, const MultiModalSample& sample) {
    FeaturePyramid pyr = model.forward(sample, false);
    const Tensor& z = pyr.fused_logits[0];
    const int K = z.dim(0);
    const size_t P = z.pixels();
    LabelMap out;
    out.shape = sample.label.shape;
    out.v.resize(P);
    for (size_t i = 0; i < P; ++i) {
        int best = 0;
        real bv = z[i];
        for (int k = 1; k < K; ++k) {
            const real v = z[static_cast<size_t>(k) * P + i];
            if (v > bv) {
                bv = v;
                best = k;
            }
        }
        out.v[i] = static_cast<uint8_t>(best);
    }
    return out;
}

EvalReport evaluate_combinations(const Predictor& predict, const std::vector<MultiModalSample>& data,
                                 int n_modalities, const std::vector<ClassGroup>& groups,
                                 HdVariant variant) {
    if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
    for (const auto& s : data)
        for (uint8_t v : s.presence_row)
            if (!v)
                throw std::invalid_argument(
                    "evaluate: test samples must carry every modality (complete test set)");
    EvalReport rep;
    rep.n_modalities = n_modalities;
    rep.variant = variant;
    rep.groups = groups;

    const int n_subsets = (1 << n_modalities) - 1;
    for (int bits = 1; bits <= n_subsets; ++bits) {
        std::vector<uint8_t> row(static_cast<size_t>(n_modalities), 0);
        for (int m = 0; m < n_modalities; ++m)
            if (bits & (1 << m)) row[static_cast<size_t>(m)] = 1;
        rep.subsets.push_back(row);

        std::vector<real> dice_sum(groups.size(), 0.0), hd_sum(groups.size(), 0.0);
        std::vector<size_t> hd_n(groups.size(), 0);
        for (const auto& sample : data) {
            const MultiModalSample masked = apply_presence(sample, row);
            const LabelMap pred = predict(masked);
            for (size_t gi = 0; gi < groups.size(); ++gi) {
                LabelMap pm, tm;
                pm.shape = tm.shape = sample.label.shape;
                pm.v.resize(pred.v.size());
                tm.v.resize(pred.v.size());
                for (size_t i = 0; i < pred.v.size(); ++i) {
                    pm.v[i] = std::find(groups[gi].classes.begin(), groups[gi].classes.end(),
                                        pred.v[i]) != groups[gi].classes.end();
                    tm.v[i] = std::find(groups[gi].classes.begin(), groups[gi].classes.end(),
                                        sample.label.v[i]) != groups[gi].classes.end();
                }
                dice_sum[gi] += dice_score(pm, tm);
                if (auto hd = hausdorff(pm, tm, variant)) {
                    hd_sum[gi] += *hd;
                    hd_n[gi] += 1;
                }
            }
        }
        std::vector<EvalCell> row_cells(groups.size());
        for (size_t gi = 0; gi < groups.size(); ++gi) {
            row_cells[gi].dice = dice_sum[gi] / static_cast<real>(data.size());
            row_cells[gi].hd_defined = hd_n[gi] > 0;
            if (row_cells[gi].hd_defined)
                row_cells[gi].hd = hd_sum[gi] / static_cast<real>(hd_n[gi]);
        }
        rep.cells.push_back(std::move(row_cells));
    }

    rep.per_group_average.assign(groups.size(), EvalCell{});
    real grand_dice = 0, grand_hd = 0;
    size_t grand_hd_n = 0;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        real ds = 0, hs = 0;
        size_t hn = 0;
        for (const auto& row : rep.cells) {
            ds += row[gi].dice;
            if (row[gi].hd_defined) {
                hs += row[gi].hd;
                hn++;
            }
        }
        rep.per_group_average[gi].dice = ds / static_cast<real>(rep.cells.size());
        rep.per_group_average[gi].hd_defined = hn > 0;
        if (hn) rep.per_group_average[gi].hd = hs / static_cast<real>(hn);
        grand_dice += rep.per_group_average[gi].dice;
        if (hn) {
            grand_hd += rep.per_group_average[gi].hd;
            grand_hd_n++;
        }
    }
    rep.grand_average.dice = groups.empty() ? 0 : grand_dice / static_cast<real>(groups.size());
    rep.grand_average.hd_defined = grand_hd_n > 0;
    if (grand_hd_n) rep.grand_average.hd = grand_hd / static_cast<real>(grand_hd_n);
    return rep;
}

EvalReport evaluate_combinations(const Backbone& model, const std::vector<MultiModalSample>& data,
                                 const std::vector<ClassGroup>& groups, HdVariant variant) {
    return evaluate_combinations(
        [&model](const MultiModalSample& s) { return predict_labels(model, s); }, data,
        model.config().n_modalities, groups, variant);
}

namespace {

std::string fmt(real v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string subset_key(const std::vector<uint8_t>& row) {
    std::string s;
    for (uint8_t v : row) s += v ? '1' : '0';
    return s;
}

}  // namespace

std::string report_csv(const EvalReport& rep) {
    std::ostringstream os;
    os << "# variant=" << to_string(rep.variant) << "\n";
    os << "subset";
    for (const auto& g : rep.groups) os << ",dice_" << g.name;
    os << ",dice_avg";
    for (const auto& g : rep.groups) os << ",hd_" << g.name;
    os << ",hd_avg\n";
    for (size_t si = 0; si < rep.subsets.size(); ++si) {
        os << subset_key(rep.subsets[si]);
        real dsum = 0, hsum = 0;
        size_t hn = 0;
        for (const auto& c : rep.cells[si]) {
            os << ',' << fmt(c.dice);
            dsum += c.dice;
        }
        os << ',' << fmt(dsum / static_cast<real>(rep.cells[si].size()));
        for (const auto& c : rep.cells[si]) {
            if (c.hd_defined) {
                os << ',' << fmt(c.hd);
                hsum += c.hd;
                hn++;
            } else {
                os << ',';
            }
        }
        if (hn)
            os << ',' << fmt(hsum / static_cast<real>(hn)) << '\n';
        else
            os << ",\n";
    }
    os << "average";
    for (const auto& c : rep.per_group_average) os << ',' << fmt(c.dice);
    os << ',' << fmt(rep.grand_average.dice);
    for (const auto& c : rep.per_group_average) {
        if (c.hd_defined)
            os << ',' << fmt(c.hd);
        else
            os << ',';
    }
    if (rep.grand_average.hd_defined)
        os << ',' << fmt(rep.grand_average.hd);
    else
        os << ',';
    os << '\n';
    return os.str();
}

std::string report_text(const EvalReport& rep) {
    std::ostringstream os;
    char buf[64];
    os << "variant: " << to_string(rep.variant) << "\n";
    for (int m = 0; m < rep.n_modalities; ++m) os << "m" << m << ' ';
    os << "|";
    for (const auto& g : rep.groups) os << "  dice_" << g.name;
    os << "  dice_avg |";
    for (const auto& g : rep.groups) os << "  " << to_string(rep.variant) << "_" << g.name;
    os << "\n";
    for (size_t si = 0; si < rep.subsets.size(); ++si) {
        for (uint8_t v : rep.subsets[si]) os << (v ? " o " : " - ");
        os << "|";
        real dsum = 0;
        for (const auto& c : rep.cells[si]) {
            std::snprintf(buf, sizeof(buf), "  %9.4f", c.dice);
            os << buf;
            dsum += c.dice;
        }
        std::snprintf(buf, sizeof(buf), "  %8.4f |", dsum / static_cast<real>(rep.cells[si].size()));
        os << buf;
        for (const auto& c : rep.cells[si]) {
            if (c.hd_defined) {
                std::snprintf(buf, sizeof(buf), "  %8.3f", c.hd);
                os << buf;
            } else {
                os << "         -";
            }
        }
        os << "\n";
    }
    os << "avg";
    for (int m = 1; m < rep.n_modalities; ++m) os << "   ";
    os << "|";
    for (const auto& c : rep.per_group_average) {
        std::snprintf(buf, sizeof(buf), "  %9.4f", c.dice);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "  %8.4f |", rep.grand_average.dice);
    os << buf;
    for (const auto& c : rep.per_group_average) {
        if (c.hd_defined) {
            std::snprintf(buf, sizeof(buf), "  %8.3f", c.hd);
            os << buf;
        } else {
            os << "         -";
        }
    }
    os << "\n";
    return os.str();
}

}  // namespace modbal
