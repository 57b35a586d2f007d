// Deterministic synthetic multi-modal segmentation data: nested geometric
// label maps, per-modality class visibility profiles, and the PASS binary
// container.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modbal/tensor.hpp"

namespace modbal {

struct LabelMap {
    std::vector<int> shape;  // spatial dims, size 2 or 3
    std::vector<uint8_t> v;  // class ids in [0, K)

    size_t pixels() const { return v.size(); }
    uint8_t operator[](size_t i) const { return v[i]; }
    uint8_t& operator[](size_t i) { return v[i]; }
};

// One sample: M modality images over a shared label map. Images of
// unavailable modalities are empty tensors (no storage).
struct MultiModalSample {
    std::vector<Tensor> images;        // size M; empty() where absent
    LabelMap label;
    std::vector<uint8_t> presence_row; // size M

    int n_modalities() const { return static_cast<int>(presence_row.size()); }
    bool has_modality(int m) const { return presence_row[m] != 0; }
};

struct DatasetSpec {
    int n_samples = 120;
    int n_modalities = 3;
    int n_classes = 3;
    std::vector<int> shape = {64, 64};
    // intensity[m][k]: intensity assigned to class-k pixels in modality m.
    // A class whose intensity equals intensity[m][0] is invisible there.
    std::vector<std::vector<double>> intensity;
    double noise = 0.1;
    // Class-1 region area fraction band; class k+1 occupies roughly
    // nest_ratio of class k's area (jittered by +-nest_jitter), placed
    // uniformly inside it.
    double fg_frac_lo = 0.08;
    double fg_frac_hi = 0.18;
    double nest_ratio = 0.35;
    double nest_jitter = 0.0;
    uint64_t seed = 0;
};

void validate(const DatasetSpec& spec);

// Default visibility profile used by the shipped experiment configs:
// modality M-1 sees every foreground class, lower modalities see
// progressively fewer classes at lower contrast.
std::vector<std::vector<double>> default_intensity_profile(int n_modalities, int n_classes);

// Deterministic under spec.seed; each sample uses an independently derived
// stream so generation order is irrelevant.
std::vector<MultiModalSample> generate_dataset(const DatasetSpec& spec);
MultiModalSample generate_sample(const DatasetSpec& spec, int index);

// Keeps exactly the modalities with row[m]==1. Throws on an all-zero row
// or if a requested modality has no stored image.
MultiModalSample apply_presence(const MultiModalSample& sample, const std::vector<uint8_t>& row);

// PASS container: magic "PASS", version byte, little-endian header, f32
// image payloads, u8 label payloads. Lossless round-trip.
void save_container(const std::vector<MultiModalSample>& samples, const std::string& path);
std::vector<MultiModalSample> load_container(const std::string& path);

}  // namespace modbal
