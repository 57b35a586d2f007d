#include "modbal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace modbal {

namespace {

constexpr real kDiceEps = 1e-7;
// Norms below this are treated as zero vectors in cosine computations to
// keep the 1/|f| gradient factors bounded.
constexpr real kNormEps = 1e-12;

void check_logits_label(const Tensor& logits, const LabelMap& label) {
    if (logits.rank() < 2) throw std::invalid_argument("loss: logits must be [K, spatial]");
    std::vector<int> spatial(logits.shape().begin() + 1, logits.shape().end());
    if (spatial != label.shape) throw std::invalid_argument("loss: logits/label shape mismatch");
    const int K = logits.dim(0);
    for (uint8_t v : label.v)
        if (v >= K) throw std::invalid_argument("loss: label id out of range");
}

}  // namespace

real dice_plus_weighted_ce(const Tensor& logits, const LabelMap& label, Tensor* grad) {
    check_logits_label(logits, label);
    const int K = logits.dim(0);
    const size_t P = label.pixels();

    std::vector<size_t> count(static_cast<size_t>(K), 0);
    for (uint8_t v : label.v) count[v]++;

    // Inverse-frequency pixel weights, clipped, normalised by total weight.
    std::vector<real> wclass(static_cast<size_t>(K), 0.0);
    real wsum = 0;
    for (int k = 0; k < K; ++k) {
        if (count[k] == 0) continue;
        real w = static_cast<real>(P) / static_cast<real>(count[k]);
        wclass[k] = std::clamp(w, 0.05, 20.0);
        wsum += wclass[k] * static_cast<real>(count[k]);
    }

    Tensor probs(logits.shape());
    real ce = 0;
    std::vector<real> z(static_cast<size_t>(K));
    for (size_t i = 0; i < P; ++i) {
        real mx = logits[i];
        for (int k = 1; k < K; ++k) mx = std::max(mx, logits[static_cast<size_t>(k) * P + i]);
        real sum = 0;
        for (int k = 0; k < K; ++k) {
            z[k] = std::exp(logits[static_cast<size_t>(k) * P + i] - mx);
            sum += z[k];
        }
        const real lse = mx + std::log(sum);
        for (int k = 0; k < K; ++k) probs[static_cast<size_t>(k) * P + i] = z[k] / sum;
        ce += wclass[label.v[i]] * (lse - logits[static_cast<size_t>(label.v[i]) * P + i]);
    }
    ce /= wsum;

    // Soft Dice over present classes.
    std::vector<real> num(static_cast<size_t>(K), 0.0), den(static_cast<size_t>(K), 0.0);
    int present = 0;
    for (int k = 0; k < K; ++k) {
        if (count[k] == 0) continue;
        present++;
        real inter = 0, psum = 0;
        const real* pk = probs.data() + static_cast<size_t>(k) * P;
        for (size_t i = 0; i < P; ++i) {
            psum += pk[i];
            if (label.v[i] == k) inter += pk[i];
        }
        num[k] = 2.0 * inter + kDiceEps;
        den[k] = psum + static_cast<real>(count[k]) + kDiceEps;
    }
    real dice_mean = 0;
    for (int k = 0; k < K; ++k)
        if (count[k]) dice_mean += num[k] / den[k];
    dice_mean /= present;
    const real loss = (1.0 - dice_mean) + ce;

    if (grad) {
        if (!grad->same_shape(logits)) throw std::invalid_argument("loss: grad shape mismatch");
        // Dice gradient in probability space, then one softmax Jacobian
        // pass; cross-entropy folds its Jacobian directly.
        std::vector<real> dp(static_cast<size_t>(K));
        for (size_t i = 0; i < P; ++i) {
            const int y = label.v[i];
            real dot = 0;
            for (int k = 0; k < K; ++k) {
                real d = 0;
                if (count[k]) {
                    const real g = (label.v[i] == k) ? 1.0 : 0.0;
                    d = -(2.0 * g * den[k] - num[k]) / (den[k] * den[k]) / present;
                }
                dp[k] = d;
                dot += d * probs[static_cast<size_t>(k) * P + i];
            }
            const real wce = wclass[y] / wsum;
            for (int k = 0; k < K; ++k) {
                const real pk = probs[static_cast<size_t>(k) * P + i];
                real g = pk * (dp[k] - dot);             // dice part
                g += wce * (pk - (k == y ? 1.0 : 0.0));  // CE part
                (*grad)[static_cast<size_t>(k) * P + i] += g;
            }
        }
    }
    return loss;
}

real seg_loss(const std::vector<Tensor>& fused_logits, const LabelMap& label, UpsampleMode mode,
              std::vector<Tensor>* grads) {
    if (fused_logits.empty()) throw std::invalid_argument("seg_loss: no levels");
    if (grads) grads->assign(fused_logits.size(), Tensor());
    real total = 0;
    for (size_t l = 0; l < fused_logits.size(); ++l) {
        const int factor = 1 << l;
        const Tensor up = upsample_logits(fused_logits[l], factor, mode);
        if (grads) {
            Tensor gup(up.shape());
            total += dice_plus_weighted_ce(up, label, &gup);
            (*grads)[l] = upsample_logits_backward(gup, fused_logits[l].shape(), factor, mode);
        } else {
            total += dice_plus_weighted_ce(up, label);
        }
    }
    return total;
}

std::map<int, real> baseline_reg_loss(const FeaturePyramid& pyr, const LabelMap& label,
                                      std::map<int, Tensor>* grads) {
    if (pyr.uni_logits.empty())
        throw std::invalid_argument("baseline_reg_loss: pyramid has no uni logits");
    std::map<int, real> out;
    for (const auto& [m, logits] : pyr.uni_logits) {
        if (grads) {
            Tensor g(logits.shape());
            out[m] = dice_plus_weighted_ce(logits, label, &g);
            (*grads)[m] = std::move(g);
        } else {
            out[m] = dice_plus_weighted_ce(logits, label);
        }
    }
    return out;
}

real pixel_distill(const std::vector<Tensor>& uni_logits, const std::vector<Tensor>& fused_logits,
                   real tau, std::vector<Tensor>* grad_uni) {
    if (tau <= 0) throw std::invalid_argument("pixel_distill: tau must be positive");
    if (uni_logits.size() != fused_logits.size())
        throw std::invalid_argument("pixel_distill: level count mismatch");
    if (grad_uni) grad_uni->assign(uni_logits.size(), Tensor());

    real total = 0;
    for (size_t l = 0; l < uni_logits.size(); ++l) {
        const Tensor& s = uni_logits[l];
        const Tensor& t = fused_logits[l];
        if (!s.same_shape(t)) throw std::invalid_argument("pixel_distill: shape mismatch");
        const int K = s.dim(0);
        const size_t P = s.pixels();
        Tensor* g = nullptr;
        if (grad_uni) {
            (*grad_uni)[l] = Tensor(s.shape());
            g = &(*grad_uni)[l];
        }
        std::vector<real> lp(static_cast<size_t>(K)), lq(static_cast<size_t>(K));
        real level = 0;
        for (size_t i = 0; i < P; ++i) {
            real ms = s[i] / tau, mt = t[i] / tau;
            for (int k = 1; k < K; ++k) {
                ms = std::max(ms, s[static_cast<size_t>(k) * P + i] / tau);
                mt = std::max(mt, t[static_cast<size_t>(k) * P + i] / tau);
            }
            real ss = 0, st = 0;
            for (int k = 0; k < K; ++k) {
                lp[k] = s[static_cast<size_t>(k) * P + i] / tau - ms;
                lq[k] = t[static_cast<size_t>(k) * P + i] / tau - mt;
                ss += std::exp(lp[k]);
                st += std::exp(lq[k]);
            }
            const real lss = std::log(ss), lst = std::log(st);
            real kl = 0;
            for (int k = 0; k < K; ++k) {
                lp[k] -= lss;
                lq[k] -= lst;
                kl += std::exp(lp[k]) * (lp[k] - lq[k]);
            }
            level += kl;
            if (g) {
                const real scale = 1.0 / (tau * static_cast<real>(P));
                for (int k = 0; k < K; ++k)
                    (*g)[static_cast<size_t>(k) * P + i] =
                        scale * std::exp(lp[k]) * ((lp[k] - lq[k]) - kl);
            }
        }
        total += level / static_cast<real>(P);
    }
    return total;
}

PrototypeSet compute_prototypes(const Tensor& feats, const LabelMap& label) {
    check_logits_label(feats, label);
    const int C = feats.dim(0);
    const size_t P = label.pixels();
    std::vector<size_t> count(256, 0);
    for (uint8_t v : label.v) count[v]++;

    PrototypeSet out;
    out.feature_dim = C;
    for (int k = 0; k < 256; ++k) {
        if (count[k] == 0) continue;
        out.classes.push_back(k);
        std::vector<real> proto(static_cast<size_t>(C), 0.0);
        for (size_t i = 0; i < P; ++i) {
            if (label.v[i] != k) continue;
            for (int c = 0; c < C; ++c) proto[c] += feats[static_cast<size_t>(c) * P + i];
        }
        for (real& v : proto) v /= static_cast<real>(count[k]);
        out.vectors.push_back(std::move(proto));
    }
    return out;
}

SimilarityField similarity_field(const Tensor& feats, const PrototypeSet& protos) {
    const int C = feats.dim(0);
    if (C != protos.feature_dim)
        throw std::invalid_argument("similarity_field: feature dimension mismatch");
    const size_t P = feats.pixels();

    SimilarityField f;
    f.classes = protos.classes;
    f.pixels = P;
    f.values.assign(protos.classes.size() * P, 0.0);

    std::vector<real> fnorm(P, 0.0);
    size_t zero_feats = 0;
    for (size_t i = 0; i < P; ++i) {
        real s = 0;
        for (int c = 0; c < C; ++c) {
            const real v = feats[static_cast<size_t>(c) * P + i];
            s += v * v;
        }
        fnorm[i] = std::sqrt(s);
        if (fnorm[i] < kNormEps) {
            fnorm[i] = 0;
            zero_feats++;
        }
    }
    if (zero_feats)
        logging::warn("similarity_field: " + std::to_string(zero_feats) +
                      " zero-norm feature vectors, cosine set to 0");

    for (size_t ci = 0; ci < protos.classes.size(); ++ci) {
        const std::vector<real>& c = protos.vectors[ci];
        real cn = 0;
        for (real v : c) cn += v * v;
        cn = std::sqrt(cn);
        if (cn < kNormEps) {
            logging::warn("similarity_field: zero-norm prototype for class " +
                          std::to_string(protos.classes[ci]) + ", cosine set to 0");
            continue;
        }
        for (size_t i = 0; i < P; ++i) {
            if (fnorm[i] == 0) continue;
            real dot = 0;
            for (int ch = 0; ch < C; ++ch)
                dot += feats[static_cast<size_t>(ch) * P + i] * c[static_cast<size_t>(ch)];
            f.at(ci, i) = std::clamp(dot / (fnorm[i] * cn), -1.0, 1.0);
        }
    }
    return f;
}

namespace {

void check_fields(const SimilarityField& a, const SimilarityField& b) {
    if (a.classes != b.classes)
        throw std::invalid_argument("similarity fields: class sets differ");
    if (a.pixels != b.pixels)
        throw std::invalid_argument("similarity fields: pixel counts differ");
}

}  // namespace

real knowledge_gap(const SimilarityField& uni, const SimilarityField& teacher) {
    check_fields(uni, teacher);
    if (uni.pixels == 0) return 0;
    real s = 0;
    for (size_t j = 0; j < uni.values.size(); ++j)
        s += std::abs(uni.values[j] - teacher.values[j]);
    return s / static_cast<real>(uni.pixels);
}

real proto_distill(const SimilarityField& uni, const SimilarityField& teacher) {
    check_fields(uni, teacher);
    if (uni.pixels == 0) return 0;
    real s = 0;
    for (size_t j = 0; j < uni.values.size(); ++j) {
        const real d = uni.values[j] - teacher.values[j];
        s += d * d;
    }
    return s / static_cast<real>(uni.pixels);
}

real proto_distill(const Tensor& feats, const LabelMap& label, const SimilarityField& teacher,
                   Tensor* grad) {
    PrototypeSet protos = compute_prototypes(feats, label);
    SimilarityField stu = similarity_field(feats, protos);
    check_fields(stu, teacher);
    const real loss = proto_distill(stu, teacher);
    if (!grad) return loss;
    if (!grad->same_shape(feats)) throw std::invalid_argument("proto_distill: grad shape mismatch");

    const int C = feats.dim(0);
    const size_t P = stu.pixels;
    std::vector<real> fnorm(P, 0.0);
    for (size_t i = 0; i < P; ++i) {
        real s = 0;
        for (int c = 0; c < C; ++c) {
            const real v = feats[static_cast<size_t>(c) * P + i];
            s += v * v;
        }
        fnorm[i] = std::sqrt(s);
        if (fnorm[i] < kNormEps) fnorm[i] = 0;
    }
    std::vector<size_t> count(256, 0);
    for (uint8_t v : label.v) count[v]++;

    for (size_t ci = 0; ci < stu.classes.size(); ++ci) {
        const int k = stu.classes[ci];
        const std::vector<real>& c = protos.vectors[ci];
        real cn = 0;
        for (real v : c) cn += v * v;
        cn = std::sqrt(cn);
        if (cn < kNormEps) continue;  // similarity constant 0; no gradient
        std::vector<real> dc(static_cast<size_t>(C), 0.0);
        for (size_t i = 0; i < P; ++i) {
            if (fnorm[i] == 0) continue;
            const real S = stu.at(ci, i);
            const real g = 2.0 * (S - teacher.at(ci, i)) / static_cast<real>(P);
            if (g == 0) continue;
            const real inv_fc = 1.0 / (fnorm[i] * cn);
            const real inv_ff = 1.0 / (fnorm[i] * fnorm[i]);
            const real inv_cc = 1.0 / (cn * cn);
            for (int ch = 0; ch < C; ++ch) {
                const real fv = feats[static_cast<size_t>(ch) * P + i];
                (*grad)[static_cast<size_t>(ch) * P + i] += g * (c[ch] * inv_fc - S * fv * inv_ff);
                dc[ch] += g * (fv * inv_fc - S * c[ch] * inv_cc);
            }
        }
        // Prototype is a masked mean: scatter dc/n_k to class-k pixels.
        const real inv_n = 1.0 / static_cast<real>(count[k]);
        for (size_t i = 0; i < P; ++i) {
            if (label.v[i] != k) continue;
            for (int ch = 0; ch < C; ++ch)
                (*grad)[static_cast<size_t>(ch) * P + i] += dc[ch] * inv_n;
        }
    }
    return loss;
}

}  // namespace modbal
