// Multi-encoder / shared-decoder segmentation backbone with deep
// supervision. Missing modalities contribute all-zero encoder features;
// the shared decoder runs once on the fused features and once per
// available modality on that modality's features alone.
#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "modbal/synth.hpp"
#include "modbal/tensor.hpp"

namespace modbal {

enum class FusionRule { Sum, Mean, Mix };
enum class UpsampleMode { Nearest, Linear };

FusionRule fusion_from_string(const std::string& s);
UpsampleMode upsample_from_string(const std::string& s);
std::string to_string(FusionRule r);
std::string to_string(UpsampleMode m);

struct BackboneConfig {
    int n_modalities = 3;
    int n_classes = 3;
    int width = 8;       // channels at full resolution; doubles per level
    int levels = 3;      // number of resolution levels (L + 1)
    int rank = 2;        // spatial rank, 2 or 3
    FusionRule fusion = FusionRule::Mean;
    UpsampleMode upsample = UpsampleMode::Nearest;

    int channels(int level) const { return width << level; }
};

void validate(const BackboneConfig& cfg);

// Per-forward outputs. fused_logits[l] lives at 1/2^l resolution with K
// channels; uni_logits holds the level-0 logits of each available
// modality; uni_pyramids is filled only on request.
struct FeaturePyramid {
    std::vector<Tensor> fused_logits;
    std::map<int, Tensor> uni_logits;
    std::map<int, std::vector<Tensor>> uni_pyramids;
    std::set<int> present;
};

void validate(const FeaturePyramid& pyr, const BackboneConfig& cfg, const std::vector<int>& input_shape);

// 2^l upsampling of K-channel logits to full resolution; factor 1 is the
// identity. Nearest replicates blocks, linear interpolates with
// half-pixel-centre alignment.
Tensor upsample_logits(const Tensor& x, int factor, UpsampleMode mode);
// Gradient of upsample_logits with respect to its input.
Tensor upsample_logits_backward(const Tensor& dy, const std::vector<int>& in_shape, int factor,
                                UpsampleMode mode);

struct Param {
    std::string name;
    Tensor w;
    Tensor g;
    Tensor adam_m;
    Tensor adam_v;
};

// Gradients arriving at the deep-supervision heads; empty tensors mean no
// contribution at that level.
struct HeadGrads {
    std::vector<Tensor> fused;
    std::map<int, std::vector<Tensor>> uni;
};

struct ConvCache {
    std::vector<int> in_shape;  // conv input shape
    std::vector<real> col;      // im2col buffer (3^rank kernels)
    Tensor x;                   // raw input (1x1 kernels only)
};

struct PassCache {
    std::vector<Tensor> skips;   // decoder input per level
    std::vector<ConvCache> conv; // decoder conv caches, index = level
    std::vector<Tensor> feat;    // post-relu decoder features per level
    std::vector<Tensor> logits;  // head outputs per level (may be empty)
    std::vector<ConvCache> mix;  // mix-fusion conv caches (FusionRule::Mix)
};

struct EncCache {
    // Per level: conv inputs and post-relu outputs.
    std::vector<ConvCache> c1, c2;
    std::vector<Tensor> r1, r2;  // r2 is the skip feature at that level
};

struct ForwardState {
    std::vector<int> available;
    std::vector<int> input_shape;
    std::map<int, EncCache> enc;
    PassCache fused;
    std::map<int, PassCache> uni;
    FeaturePyramid pyramid;
};

class Backbone {
public:
    Backbone(const BackboneConfig& cfg, uint64_t init_seed);

    const BackboneConfig& config() const { return cfg_; }

    // Inference forward. Uni pyramids (all-level uni logits) only on request.
    FeaturePyramid forward(const MultiModalSample& s, bool need_uni_pyramids) const;

    // Training forward retaining activation caches for backward().
    ForwardState forward_train(const MultiModalSample& s, bool need_uni_pyramids) const;

    // Accumulates parameter gradients for the given head gradients.
    void backward(const ForwardState& st, const HeadGrads& grads);

    void zero_grad();
    void adamw_step(real lr, real weight_decay);

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }

    int64_t parameter_count() const;
    static int64_t parameter_count(const BackboneConfig& cfg);

    void save_checkpoint(const std::string& path) const;
    static Backbone load_checkpoint(const std::string& path);

private:
    BackboneConfig cfg_;
    std::vector<Param> params_;
    int64_t adam_t_ = 0;

    // Parameter index lookup tables filled at construction.
    struct ConvRef { int w = -1, b = -1; };
    std::vector<std::vector<ConvRef>> enc_c1_, enc_c2_;  // [modality][level]
    std::vector<ConvRef> mix_;                           // [level], Mix fusion only
    ConvRef bott_;
    std::vector<ConvRef> dec_;   // [level], levels-2 .. 0 used
    std::vector<ConvRef> head_;  // [level]

    int add_param(const std::string& name, std::vector<int> shape);
    void init_params(uint64_t seed);

    void run_encoder(int m, const Tensor& image, EncCache& cache) const;
    void run_decoder(const std::vector<const Tensor*>& enc_feats, int n_available,
                     PassCache& cache, bool all_heads) const;
    void backward_decoder(const PassCache& cache, const std::vector<Tensor>& head_grads,
                          int n_available, std::vector<Tensor>& dskips,
                          std::map<int, std::vector<Tensor>>& denc, const std::vector<int>& members);
    void backward_encoder(int m, const EncCache& cache, std::vector<Tensor>& dfeat);
};

}  // namespace modbal
