// Minimal dense tensor, deterministic RNG, and warning hook shared by all
// modbal components. Row-major, channels-first, double precision.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace modbal {

using real = double;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }
    Tensor(std::vector<int> shape, std::vector<real> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, real v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    real& operator[](size_t i) { return data_[i]; }
    real operator[](size_t i) const { return data_[i]; }

    void fill(real v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Number of spatial positions when dim 0 is a channel axis.
    size_t pixels() const {
        if (shape_.empty()) return 0;
        return size() / static_cast<size_t>(shape_[0]);
    }

    bool all_finite() const {
        for (real v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= static_cast<size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<int> shape_;
    std::vector<real> data_;
};

// Deterministic RNG. The mt19937_64 engine is fully specified by the
// standard; the value mappings below are hand-rolled so that streams are
// reproducible across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        // splitmix64; passes BigCrush, trivially portable.
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t integer(uint64_t n) {
        if (n == 0) throw std::invalid_argument("rng: integer(0)");
        uint64_t mask = ~0ULL;
        if ((n & (n - 1)) == 0) return next_u64() & (n - 1);
        uint64_t limit = ~0ULL - (~0ULL % n);
        uint64_t v;
        do { v = next_u64(); } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller (fresh pair per call; no cached state).
    real normal() {
        real u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Derive an independent stream, e.g. per-sample generation seeds.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        Rng r(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
        return r.next_u64();
    }

private:
    uint64_t state_;
};

// Warning sink. Default prints to stderr; tests may swap the sink or just
// read the counter.
namespace logging {

inline std::atomic<uint64_t>& warn_count() {
    static std::atomic<uint64_t> c{0};
    return c;
}

inline std::function<void(const std::string&)>& warn_sink() {
    // Prints the first few warnings, then goes quiet; the counter keeps
    // counting either way.
    static std::function<void(const std::string&)> sink = [](const std::string& msg) {
        static std::atomic<int> printed{0};
        const int n = printed.fetch_add(1);
        if (n < 10)
            std::fprintf(stderr, "[modbal] warning: %s\n", msg.c_str());
        else if (n == 10)
            std::fprintf(stderr, "[modbal] warning: further warnings suppressed\n");
    };
    return sink;
}

inline void warn(const std::string& msg) {
    warn_count()++;
    if (warn_sink()) warn_sink()(msg);
}

}  // namespace logging

}  // namespace modbal
