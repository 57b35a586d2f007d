#include "modbal/presence.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "modbal/tensor.hpp"

namespace modbal {

void validate(const PresenceMatrix& c) {
    if (c.n_samples < 1 || c.n_modalities < 1)
        throw std::invalid_argument("presence: empty matrix");
    if (c.entries.size() != static_cast<size_t>(c.n_samples) * c.n_modalities)
        throw std::invalid_argument("presence: entry count does not match N*M");
    for (uint8_t v : c.entries)
        if (v != 0 && v != 1)
            throw std::invalid_argument("presence: entries must be 0 or 1");
    for (int m = 0; m < c.n_modalities; ++m) {
        int ones = 0;
        for (int n = 0; n < c.n_samples; ++n) ones += c.at(n, m);
        if (ones == 0)
            throw std::invalid_argument("presence: modality " + std::to_string(m) +
                                        " is missing from every sample");
    }
    for (int n = 0; n < c.n_samples; ++n) {
        int ones = 0;
        for (int m = 0; m < c.n_modalities; ++m) ones += c.at(n, m);
        if (ones == 0)
            throw std::invalid_argument("presence: sample " + std::to_string(n) +
                                        " has no modality");
    }
}

MissingRateVector missing_rates(const PresenceMatrix& c) {
    validate(c);
    MissingRateVector mr;
    mr.rates.resize(c.n_modalities);
    for (int m = 0; m < c.n_modalities; ++m) {
        int ones = 0;
        for (int n = 0; n < c.n_samples; ++n) ones += c.at(n, m);
        mr.rates[m] = static_cast<double>(c.n_samples - ones) / c.n_samples;
    }
    return mr;
}

PresenceMatrix sample_presence(const MissingRateVector& targets, int n_samples, uint64_t seed,
                               PresenceSampleStats* stats) {
    const int m_count = static_cast<int>(targets.rates.size());
    if (n_samples < 1) throw std::invalid_argument("presence: N must be >= 1");
    if (m_count < 1) throw std::invalid_argument("presence: at least one modality required");
    for (double t : targets.rates)
        if (!(t >= 0.0 && t < 1.0))
            throw std::invalid_argument("presence: targets must lie in [0,1)");
    if (m_count > 1 && n_samples < m_count)
        throw std::invalid_argument("presence: need N >= M");

    PresenceMatrix c;
    c.n_samples = n_samples;
    c.n_modalities = m_count;
    c.entries.assign(static_cast<size_t>(n_samples) * m_count, 1);

    Rng rng(seed);
    std::vector<int> rows(n_samples);

    // Column quotas: round half up, capped so each modality keeps one sample.
    for (int m = 0; m < m_count; ++m) {
        int quota = static_cast<int>(std::floor(n_samples * targets.rates[m] + 0.5));
        quota = std::min(quota, n_samples - 1);
        for (int i = 0; i < n_samples; ++i) rows[i] = i;
        // Partial Fisher-Yates: first `quota` entries form the zero set.
        for (int i = 0; i < quota; ++i) {
            int j = i + static_cast<int>(rng.integer(static_cast<uint64_t>(n_samples - i)));
            std::swap(rows[i], rows[j]);
            c.at(rows[i], m) = 0;
        }
    }

    // Repair rows left with no modality: re-enable one uniformly chosen
    // modality, then restore that column's quota by zeroing it in another
    // row that can afford the loss. M == 1 cannot satisfy the row
    // invariant alongside a nonzero quota, so quotas win there.
    if (m_count > 1) {
        std::vector<int> row_ones(n_samples, 0);
        for (int n = 0; n < n_samples; ++n)
            for (int m = 0; m < m_count; ++m) row_ones[n] += c.at(n, m);
        for (int n = 0; n < n_samples; ++n) {
            if (row_ones[n] > 0) continue;
            if (stats) stats->repaired_rows++;
            int m = static_cast<int>(rng.integer(static_cast<uint64_t>(m_count)));
            c.at(n, m) = 1;
            row_ones[n] = 1;
            std::vector<int> donors;
            for (int r = 0; r < n_samples; ++r)
                if (r != n && c.at(r, m) == 1 && row_ones[r] >= 2) donors.push_back(r);
            if (!donors.empty()) {
                int r = donors[rng.integer(donors.size())];
                c.at(r, m) = 0;
                row_ones[r] -= 1;
            } else if (stats) {
                stats->uncompensated++;
            }
        }
    }
    return c;
}

std::set<int> available_modalities(const PresenceMatrix& c, int n) {
    if (n < 0 || n >= c.n_samples)
        throw std::out_of_range("presence: sample index out of range");
    std::set<int> out;
    for (int m = 0; m < c.n_modalities; ++m)
        if (c.at(n, m)) out.insert(m);
    return out;
}

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

void save_presence_manifest(const PresenceManifest& man, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("presence: cannot open " + path + " for writing");
    f << man.matrix.n_samples << ' ' << man.matrix.n_modalities << ' ' << man.seed << '\n';
    for (int m = 0; m < man.matrix.n_modalities; ++m) {
        if (m) f << ' ';
        f << format_double(m < static_cast<int>(man.targets.rates.size()) ? man.targets.rates[m] : 0.0);
    }
    f << '\n';
    for (int n = 0; n < man.matrix.n_samples; ++n) {
        for (int m = 0; m < man.matrix.n_modalities; ++m) {
            if (m) f << ' ';
            f << static_cast<int>(man.matrix.at(n, m));
        }
        f << '\n';
    }
    if (!f) throw std::runtime_error("presence: write failed for " + path);
}

PresenceManifest load_presence_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("presence: cannot open " + path);
    PresenceManifest man;
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("presence: truncated manifest " + path);
    {
        std::istringstream is(line);
        if (!(is >> man.matrix.n_samples >> man.matrix.n_modalities >> man.seed))
            throw std::runtime_error("presence: malformed header in " + path);
    }
    if (man.matrix.n_samples < 1 || man.matrix.n_modalities < 1)
        throw std::runtime_error("presence: malformed header in " + path);
    if (!std::getline(f, line)) throw std::runtime_error("presence: truncated manifest " + path);
    {
        std::istringstream is(line);
        double t;
        while (is >> t) man.targets.rates.push_back(t);
        if (static_cast<int>(man.targets.rates.size()) != man.matrix.n_modalities)
            throw std::runtime_error("presence: target count does not match M in " + path);
    }
    man.matrix.entries.reserve(static_cast<size_t>(man.matrix.n_samples) * man.matrix.n_modalities);
    for (int n = 0; n < man.matrix.n_samples; ++n) {
        if (!std::getline(f, line)) throw std::runtime_error("presence: truncated manifest " + path);
        std::istringstream is(line);
        for (int m = 0; m < man.matrix.n_modalities; ++m) {
            int v;
            if (!(is >> v) || (v != 0 && v != 1))
                throw std::runtime_error("presence: malformed row in " + path);
            man.matrix.entries.push_back(static_cast<uint8_t>(v));
        }
    }
    return man;
}

}  // namespace modbal
