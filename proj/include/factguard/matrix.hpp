#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "factguard/errors.hpp"

namespace factguard {

// All training math runs in double precision by default; define FACTGUARD_REAL
// to float for a single-precision build (gradcheck tolerances assume double).
#ifndef FACTGUARD_REAL
#define FACTGUARD_REAL double
#endif
using Real = FACTGUARD_REAL;

// Dense row-major matrix. Row vectors are 1xN RealMatrix throughout the
// library, so "vector" ops share this type.
class RealMatrix {
public:
    RealMatrix() = default;
    RealMatrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    RealMatrix(std::initializer_list<std::initializer_list<Real>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw ShapeError("ragged initializer for RealMatrix");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static RealMatrix row(std::vector<Real> values) {
        RealMatrix m;
        m.rows_ = values.empty() ? 0 : 1;
        m.cols_ = values.size();
        m.data_ = std::move(values);
        return m;
    }

    static RealMatrix identity(std::size_t n) {
        RealMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = Real(1);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }

    bool same_shape(const RealMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool is_finite() const {
        for (Real v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Real max_abs() const {
        Real m = 0;
        for (Real v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    std::string shape_str() const {
        return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
    }

    bool operator==(const RealMatrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

inline RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul " + a.shape_str() + " x " + b.shape_str());
    RealMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const Real aik = a(i, k);
            if (aik == Real(0)) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

inline RealMatrix transpose(const RealMatrix& a) {
    RealMatrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

inline RealMatrix add(const RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) throw ShapeError("add " + a.shape_str() + " vs " + b.shape_str());
    RealMatrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline RealMatrix sub(const RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) throw ShapeError("sub " + a.shape_str() + " vs " + b.shape_str());
    RealMatrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline RealMatrix scale(const RealMatrix& a, Real c) {
    RealMatrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return out;
}

inline Real dot(const RealMatrix& a, const RealMatrix& b) {
    if (a.size() != b.size()) throw ShapeError("dot " + a.shape_str() + " vs " + b.shape_str());
    Real s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline Real norm(const RealMatrix& a) { return std::sqrt(dot(a, a)); }

inline Real max_abs_diff(const RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff " + a.shape_str() + " vs " + b.shape_str());
    Real worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// Seeded RNG wrapper; every parameter initialization in the library draws
// from one of these so runs are reproducible from a single seed. All draws
// are derived from raw mt19937_64 output (whose sequence the standard pins
// down exactly) rather than std::*_distribution, whose mapping is
// implementation-defined and would differ between toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    Real unit() { return Real(engine_() >> 11) * Real(1.0 / 9007199254740992.0); }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * unit(); }

    // Box-Muller; consumes exactly two draws per call.
    Real normal(Real mean = 0, Real stddev = 1) {
        Real u1 = unit();
        while (u1 == 0) u1 = unit();
        const Real u2 = unit();
        const Real mag = std::sqrt(Real(-2) * std::log(u1));
        return mean + stddev * mag * std::cos(Real(2) * Real(3.14159265358979323846) * u2);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, n). Modulo bias is below 2^-50 for any n this
    // library shuffles or samples.
    std::size_t index(std::size_t n) {
        if (n == 0) throw ArgumentError("index(0) is undefined");
        return static_cast<std::size_t>(engine_() % n);
    }

    bool bernoulli(Real p) { return unit() < p; }

private:
    std::mt19937_64 engine_;
};

// Fisher-Yates with our own index draws. std::shuffle's draw sequence is
// implementation-defined, which would break cross-toolchain reproducibility.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

// Xavier-style uniform init over fan_in + fan_out.
inline RealMatrix xavier_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in,
                                 std::size_t fan_out, Rng& rng) {
    const Real limit = std::sqrt(Real(6) / Real(fan_in + fan_out));
    RealMatrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-limit, limit);
    return m;
}

// Named handle to one parameter tensor; models expose their tensors as a flat
// ordered list through collect_params so the optimizer, checkpoints and
// gradcheck all walk the same order.
struct ParamRef {
    std::string name;
    RealMatrix* tensor;
};
using ParamList = std::vector<ParamRef>;

inline std::size_t param_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor->size();
    return n;
}

} // namespace factguard
