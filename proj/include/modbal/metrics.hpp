// Dice and Hausdorff metrics plus the combination-wise evaluation harness
// over all nonempty modality subsets.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "modbal/net.hpp"
#include "modbal/synth.hpp"
#include "modbal/tensor.hpp"

namespace modbal {

// Binary masks are LabelMaps with values in {0, 1}.
real dice_score(const LabelMap& pred, const LabelMap& truth);

enum class HdVariant { Max, Percentile95 };

std::string to_string(HdVariant v);

// Symmetric boundary distance. A pixel is boundary if it is foreground
// with at least one background face-neighbour (outside counts as
// background). Percentile95 takes the nearest-rank 95th percentile of the
// combined directed distances. Returns nullopt when either mask is empty.
std::optional<real> hausdorff(const LabelMap& pred, const LabelMap& truth, HdVariant variant,
                              const std::vector<real>& spacing = {});

struct ClassGroup {
    std::string name;
    std::vector<int> classes;
};

// Nested grouping: group j covers classes {j, ..., K-1}.
std::vector<ClassGroup> nested_groups(int n_classes);

struct EvalCell {
    real dice = 0;
    real hd = 0;
    bool hd_defined = false;
};

struct EvalReport {
    int n_modalities = 0;
    HdVariant variant = HdVariant::Percentile95;
    std::vector<ClassGroup> groups;
    std::vector<std::vector<uint8_t>> subsets;      // 2^M - 1 presence rows
    std::vector<std::vector<EvalCell>> cells;       // [subset][group]
    std::vector<EvalCell> per_group_average;        // over subsets
    EvalCell grand_average;

    real subset_mean_dice(size_t si) const;
};

using Predictor = std::function<LabelMap(const MultiModalSample&)>;

// Evaluates every nonempty modality subset of a complete dataset: each
// sample is re-masked to the subset, predicted, and scored per class
// group. Cells average over samples; undefined HDs are excluded.
EvalReport evaluate_combinations(const Predictor& predict, const std::vector<MultiModalSample>& data,
                                 int n_modalities, const std::vector<ClassGroup>& groups,
                                 HdVariant variant);

EvalReport evaluate_combinations(const Backbone& model, const std::vector<MultiModalSample>& data,
                                 const std::vector<ClassGroup>& groups, HdVariant variant);

// Argmax of the full-resolution fused logits.
LabelMap predict_labels(const Backbone& model, const MultiModalSample& sample);

std::string report_csv(const EvalReport& report);
std::string report_text(const EvalReport& report);

}  // namespace modbal
