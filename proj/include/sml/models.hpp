#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sml/tensor.hpp"

namespace sml {

/// Tapped delay line holding the last M input samples, newest first:
/// taps()[j] = u(i - j). Zero-prefilled before the first sample.
class DelayLine {
public:
    explicit DelayLine(std::size_t memory) : taps_(memory, 0.0) {
        if (memory < 1) throw std::invalid_argument("DelayLine: memory must be >= 1");
    }

    void push(double u) {
        for (std::size_t j = taps_.size(); j-- > 1;) taps_[j] = taps_[j - 1];
        taps_[0] = u;
    }

    std::size_t memory() const { return taps_.size(); }
    std::span<const double> taps() const { return taps_; }

private:
    std::vector<double> taps_;
};

inline double fir_output(std::span<const double> taps, std::span<const double> w) {
    if (taps.size() != w.size()) throw std::invalid_argument("fir_output: length mismatch");
    double acc = 0.0;
    for (std::size_t j = 0; j < taps.size(); ++j) acc += taps[j] * w[j];
    return acc;
}

/// Decomposable-model output: the product of the K FIR outputs (u . w_s).
/// O(KM) multiplies instead of the dense kernel's O(M^K).
inline double sml_output(const DelayLine& u, const RankOneKernel& k) {
    if (u.memory() != k.memory()) throw std::invalid_argument("sml_output: memory mismatch");
    double y = 1.0;
    for (std::size_t s = 0; s < k.order(); ++s) y *= fir_output(u.taps(), k.factor(s));
    return y;
}

/// Entry s is the product of all FIR outputs except the s-th, so
/// partial_products[s] * (u . w_s) == sml_output for every s.
/// K = 1 yields [1] (empty product).
inline std::vector<double> partial_products(const DelayLine& u, const RankOneKernel& k) {
    if (u.memory() != k.memory()) throw std::invalid_argument("partial_products: memory mismatch");
    const std::size_t K = k.order();
    std::vector<double> fir(K);
    for (std::size_t s = 0; s < K; ++s) fir[s] = fir_output(u.taps(), k.factor(s));
    std::vector<double> out(K, 1.0);
    for (std::size_t s = 0; s < K; ++s) {
        double p = 1.0;
        for (std::size_t r = 0; r < K; ++r)
            if (r != s) p *= fir[r];
        out[s] = p;
    }
    return out;
}

/// Homogeneous order-K Volterra output: contraction of the dense kernel with
/// the K-fold tensor power of the regressor.
inline double volterra_output(const DelayLine& u, const DenseKernel& h) {
    if (u.memory() != h.memory()) throw std::invalid_argument("volterra_output: memory mismatch");
    const std::vector<double> power = tensor_power(u.taps(), h.order());
    return std::inner_product(power.begin(), power.end(), h.coefficients().begin(), 0.0);
}

/// Second-order kernel truncated to its first D diagonals, zero-padded D x M
/// table: entry(d, i1) = H_2(i1, i1 + d). D = 1 is the Power Filter layout.
class DiagonalKernel {
public:
    DiagonalKernel(std::size_t memory, std::size_t diagonals, std::vector<double> entries)
        : memory_(memory), diagonals_(diagonals), entries_(std::move(entries)) {
        if (memory_ < 1) throw std::invalid_argument("DiagonalKernel: memory must be >= 1");
        if (diagonals_ < 1 || diagonals_ > memory_)
            throw std::invalid_argument("DiagonalKernel: need 1 <= D <= M");
        if (entries_.size() != memory_ * diagonals_)
            throw std::invalid_argument("DiagonalKernel: entry table must be D x M");
        for (std::size_t d = 0; d < diagonals_; ++d)
            for (std::size_t i1 = memory_ - d; i1 < memory_; ++i1)
                if (entries_[d * memory_ + i1] != 0.0)
                    throw std::invalid_argument("DiagonalKernel: entries past the edge must be zero");
    }

    std::size_t memory() const { return memory_; }
    std::size_t diagonals() const { return diagonals_; }
    double entry(std::size_t d, std::size_t i1) const { return entries_.at(d * memory_ + i1); }
    const std::vector<double>& entries() const { return entries_; }

private:
    std::size_t memory_;
    std::size_t diagonals_;
    std::vector<double> entries_;
};

inline double diagonal_output(const DelayLine& u, const DiagonalKernel& dk) {
    if (u.memory() != dk.memory()) throw std::invalid_argument("diagonal_output: memory mismatch");
    const auto taps = u.taps();
    double acc = 0.0;
    for (std::size_t d = 0; d < dk.diagonals(); ++d)
        for (std::size_t i1 = 0; i1 + d < dk.memory(); ++i1)
            acc += dk.entry(d, i1) * taps[i1] * taps[i1 + d];
    return acc;
}

}  // namespace sml
