// Relative preference tracking: per-sample RP and task mask, per-epoch
// beta updates, and the overall training objective assembly. Beta and
// delta are optimisation schedule constants; no gradient flows through
// this machinery.
#pragma once

#include <map>
#include <set>
#include <vector>

#include "modbal/presence.hpp"
#include "modbal/tensor.hpp"

namespace modbal {

struct SamplePreference {
    std::map<int, real> d;    // available modality -> knowledge gap D >= 0
    real d_bar = 0;           // mean of d over available modalities
    std::map<int, real> rp;   // all modalities; 0 where unavailable
    std::map<int, int> delta; // 1 iff rp < 0 (strict)
};

// RP^m = 1 - D^m / mean(D); unavailable modalities get 0, and when every
// distance is 0 all modalities sit at the balancing point (RP = 0).
SamplePreference relative_preference(const std::map<int, real>& d, const std::set<int>& available,
                                     int n_modalities);

std::map<int, int> task_mask(const SamplePreference& pref);

struct PreferenceState {
    std::vector<real> beta;
    std::vector<real> epoch_rp_sum;
    std::vector<int> epoch_count;
    real gamma = 0.01;
    real beta_floor = 0.1;
    int epoch_index = 0;

    int n_modalities() const { return static_cast<int>(beta.size()); }

    // beta initialised to 1 / (1 - MR^m).
    static PreferenceState init(const MissingRateVector& mr, real gamma);

    // Folds one sample's preference into the epoch accumulators
    // (available modalities only).
    void accumulate(const SamplePreference& pref);

    std::vector<real> epoch_mean_rp() const;

    // End of epoch: optionally step beta by -gamma * mean RP (clamped to
    // beta_floor), then reset accumulators and advance the epoch index.
    // Modalities unseen this epoch keep their beta.
    void update_beta(bool apply_update = true);
};

// L = seg + sum over available m of (lambda1 * beta^m * pixel^m
//     + lambda2 * delta^m * proto^m). pixel_terms must cover exactly the
// available modalities; proto_terms at least every m with delta == 1.
real total_loss(real seg, const std::map<int, real>& pixel_terms,
                const std::map<int, real>& proto_terms, const SamplePreference& pref,
                const PreferenceState& state, real lambda1, real lambda2);

}  // namespace modbal
