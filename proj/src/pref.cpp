#include "modbal/pref.hpp"

#include <algorithm>
#include <stdexcept>

namespace modbal {

SamplePreference relative_preference(const std::map<int, real>& d, const std::set<int>& available,
                                     int n_modalities) {
    if (available.empty()) throw std::invalid_argument("preference: no available modality");
    if (d.size() != available.size())
        throw std::invalid_argument("preference: d keys must equal the available set");
    real sum = 0;
    for (const auto& [m, v] : d) {
        if (!available.count(m))
            throw std::invalid_argument("preference: d keys must equal the available set");
        if (v < 0) throw std::invalid_argument("preference: negative distance");
        sum += v;
    }
    const int n = static_cast<int>(available.size());

    SamplePreference p;
    p.d = d;
    p.d_bar = sum / n;
    for (int m = 0; m < n_modalities; ++m) {
        real rp = 0;
        if (available.count(m) && sum > 0)
            rp = 1.0 - (d.at(m) * static_cast<real>(n)) / sum;
        p.rp[m] = rp;
        p.delta[m] = rp < 0 ? 1 : 0;
    }
    return p;
}

std::map<int, int> task_mask(const SamplePreference& pref) { return pref.delta; }

PreferenceState PreferenceState::init(const MissingRateVector& mr, real gamma_) {
    PreferenceState s;
    s.gamma = gamma_;
    s.beta.reserve(mr.rates.size());
    for (double r : mr.rates) {
        if (!(r >= 0.0 && r < 1.0))
            throw std::invalid_argument("preference: missing rate outside [0,1)");
        s.beta.push_back(1.0 / (1.0 - r));
    }
    s.epoch_rp_sum.assign(mr.rates.size(), 0.0);
    s.epoch_count.assign(mr.rates.size(), 0);
    return s;
}

void PreferenceState::accumulate(const SamplePreference& pref) {
    for (const auto& [m, v] : pref.d) {
        (void)v;
        if (m < 0 || m >= n_modalities())
            throw std::invalid_argument("preference: modality index out of range");
        epoch_rp_sum[static_cast<size_t>(m)] += pref.rp.at(m);
        epoch_count[static_cast<size_t>(m)] += 1;
    }
}

std::vector<real> PreferenceState::epoch_mean_rp() const {
    std::vector<real> out(beta.size(), 0.0);
    for (size_t m = 0; m < beta.size(); ++m)
        if (epoch_count[m] > 0) out[m] = epoch_rp_sum[m] / epoch_count[m];
    return out;
}

void PreferenceState::update_beta(bool apply_update) {
    if (apply_update) {
        const std::vector<real> mean = epoch_mean_rp();
        for (size_t m = 0; m < beta.size(); ++m) {
            beta[m] -= gamma * mean[m];
            beta[m] = std::max(beta[m], beta_floor);
        }
    }
    std::fill(epoch_rp_sum.begin(), epoch_rp_sum.end(), 0.0);
    std::fill(epoch_count.begin(), epoch_count.end(), 0);
    epoch_index += 1;
}

real total_loss(real seg, const std::map<int, real>& pixel_terms,
                const std::map<int, real>& proto_terms, const SamplePreference& pref,
                const PreferenceState& state, real lambda1, real lambda2) {
    if (pixel_terms.size() != pref.d.size())
        throw std::invalid_argument("total_loss: pixel terms must cover the available modalities");
    real total = seg;
    for (const auto& [m, pix] : pixel_terms) {
        if (!pref.d.count(m))
            throw std::invalid_argument("total_loss: pixel term for unavailable modality");
        if (m < 0 || m >= state.n_modalities())
            throw std::invalid_argument("total_loss: modality index out of range");
        total += lambda1 * state.beta[static_cast<size_t>(m)] * pix;
        const int delta = pref.delta.at(m);
        if (delta) {
            auto it = proto_terms.find(m);
            if (it == proto_terms.end())
                throw std::invalid_argument("total_loss: missing proto term for masked modality");
            total += lambda2 * it->second;
        }
    }
    for (const auto& [m, v] : proto_terms) {
        (void)v;
        if (!pref.d.count(m))
            throw std::invalid_argument("total_loss: proto term for unavailable modality");
    }
    return total;
}

}  // namespace modbal
