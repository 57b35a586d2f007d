// Segmentation and self-distillation losses: soft Dice + weighted
// cross-entropy with deep supervision, pixel-wise KL distillation from the
// fused pathway to each uni-modal pathway, and prototype-similarity
// distillation. Gradients are analytic; fused-pathway inputs to the
// distillation terms are treated as constants.
#pragma once

#include <map>
#include <vector>

#include "modbal/net.hpp"
#include "modbal/synth.hpp"
#include "modbal/tensor.hpp"

namespace modbal {

// Per-sample, per-class mean feature vectors at the output level, defined
// exactly for classes with at least one labelled pixel.
struct PrototypeSet {
    std::vector<int> classes;                // ascending
    std::vector<std::vector<real>> vectors;  // aligned with classes
    int feature_dim = 0;
};

// Per-class, per-pixel cosine similarities between features and the class
// prototype. values[c * pixels + i] for classes[c].
struct SimilarityField {
    std::vector<int> classes;
    size_t pixels = 0;
    std::vector<real> values;

    real at(size_t c, size_t i) const { return values[c * pixels + i]; }
    real& at(size_t c, size_t i) { return values[c * pixels + i]; }
};

// Soft Dice (1 - mean per-present-class soft Dice) plus weighted
// cross-entropy with inverse class-frequency weights clipped to [0.05, 20]
// and normalised by the total pixel weight. If grad is non-null the
// gradient with respect to the logits is accumulated into it.
real dice_plus_weighted_ce(const Tensor& logits, const LabelMap& label, Tensor* grad = nullptr);

// Deep-supervision sum over levels of dice_plus_weighted_ce applied to the
// 2^l-upsampled fused logits.
real seg_loss(const std::vector<Tensor>& fused_logits, const LabelMap& label,
              UpsampleMode mode = UpsampleMode::Nearest, std::vector<Tensor>* grads = nullptr);

// Per available modality, dice_plus_weighted_ce on the uni-modal output
// logits. Used by the baseline objective only.
std::map<int, real> baseline_reg_loss(const FeaturePyramid& pyr, const LabelMap& label,
                                      std::map<int, Tensor>* grads = nullptr);

// Sum over levels of KL(softmax(uni/tau) || softmax(fused/tau)), the KL at
// each level averaged over pixels. The fused logits are constants; the
// gradient (optional) is with respect to the uni logits. No tau^2 factor.
real pixel_distill(const std::vector<Tensor>& uni_logits, const std::vector<Tensor>& fused_logits,
                   real tau, std::vector<Tensor>* grad_uni = nullptr);

PrototypeSet compute_prototypes(const Tensor& output_features, const LabelMap& label);

// Cosine of each feature vector against each class prototype. A zero-norm
// feature or prototype contributes similarity 0 (warned once per call).
SimilarityField similarity_field(const Tensor& output_features, const PrototypeSet& protos);

// Mean over pixels of the summed per-class absolute similarity gaps.
real knowledge_gap(const SimilarityField& uni_field, const SimilarityField& teacher_field);

// Mean over pixels of the summed per-class squared similarity gaps.
real proto_distill(const SimilarityField& uni_field, const SimilarityField& teacher_field);

// Gradient-carrying form: recomputes the student field from the features
// (chaining through both the similarities and the prototypes) against a
// constant teacher field. Returns the loss value.
real proto_distill(const Tensor& student_features, const LabelMap& label,
                   const SimilarityField& teacher_field, Tensor* grad);

}  // namespace modbal
