// Modality presence matrices: sampling against target missing rates,
// validation, and the plain-text manifest format.
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace modbal {

struct MissingRateVector {
    std::vector<double> rates;  // each in [0,1)
};

// N x M binary availability matrix. entry(n,m) == 1 means modality m of
// sample n is available. Invariants: every row and every column contains
// at least one 1.
struct PresenceMatrix {
    int n_samples = 0;
    int n_modalities = 0;
    std::vector<uint8_t> entries;  // row-major, size N*M

    uint8_t at(int n, int m) const { return entries[static_cast<size_t>(n) * n_modalities + m]; }
    uint8_t& at(int n, int m) { return entries[static_cast<size_t>(n) * n_modalities + m]; }
};

// Throws std::invalid_argument describing the first violated invariant.
void validate(const PresenceMatrix& c);

// Per-column (N - column_sum) / N. Requires a valid matrix.
MissingRateVector missing_rates(const PresenceMatrix& c);

struct PresenceSampleStats {
    int repaired_rows = 0;   // rows that drew all zeros
    int uncompensated = 0;   // repairs whose column quota could not be restored
};

// Deterministic sampler. Per column, exactly round(N * target) zeros are
// drawn (round half up); rows left with no modality are repaired by
// re-enabling one uniformly chosen modality, zeroing it in a donor row to
// keep the column at quota when a donor exists.
PresenceMatrix sample_presence(const MissingRateVector& targets, int n_samples, uint64_t seed,
                               PresenceSampleStats* stats = nullptr);

// Indices m with c(n,m) == 1. Never empty for a valid matrix.
std::set<int> available_modalities(const PresenceMatrix& c, int n);

// Manifest: "N M seed" header, one line of targets, then N lines of M
// space-separated 0/1 digits. Round-trips bit-exactly.
struct PresenceManifest {
    PresenceMatrix matrix;
    MissingRateVector targets;
    uint64_t seed = 0;
};

void save_presence_manifest(const PresenceManifest& man, const std::string& path);
PresenceManifest load_presence_manifest(const std::string& path);

}  // namespace modbal
