#pragma once

#include <cmath>
#include <cstddef>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sml/csv.hpp"

namespace sml {

/// Dense kernels beyond this coefficient count are refused; the point of the
/// decomposable model is to avoid O(M^K), so the dense form exists for
/// oracles, plants and baselines only.
inline constexpr std::size_t kDenseCoefficientCap = 10'000'000;

namespace detail {

/// M^K with overflow/cap checking.
inline std::size_t checked_dense_size(std::size_t memory, std::size_t order) {
    if (memory < 1) throw std::invalid_argument("memory must be >= 1");
    if (order < 1) throw std::invalid_argument("order must be >= 1");
    std::size_t n = 1;
    for (std::size_t k = 0; k < order; ++k) {
        if (n > kDenseCoefficientCap / memory)
            throw std::length_error("dense kernel size M^K exceeds coefficient cap");
        n *= memory;
    }
    return n;
}

}  // namespace detail

/// Kronecker product of two coordinate vectors:
///   out[p*len(b) + q] = a[p] * b[q].
inline std::vector<double> kron(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("kron: empty operand");
    std::vector<double> out(a.size() * b.size());
    for (std::size_t p = 0; p < a.size(); ++p) {
        const double ap = a[p];
        double* row = out.data() + p * b.size();
        for (std::size_t q = 0; q < b.size(); ++q) row[q] = ap * b[q];
    }
    return out;
}

inline std::vector<double> kron(const std::vector<double>& a, const std::vector<double>& b) {
    return kron(std::span<const double>(a), std::span<const double>(b));
}

/// u tensored with itself k times, left-associated. Length M^k.
inline std::vector<double> tensor_power(std::span<const double> u, std::size_t k) {
    if (k < 1) throw std::invalid_argument("tensor_power: order must be >= 1");
    if (u.empty()) throw std::invalid_argument("tensor_power: empty vector");
    detail::checked_dense_size(u.size(), k);
    std::vector<double> out(u.begin(), u.end());
    for (std::size_t i = 1; i < k; ++i) out = kron(out, u);
    return out;
}

inline std::vector<double> tensor_power(const std::vector<double>& u, std::size_t k) {
    return tensor_power(std::span<const double>(u), k);
}

/// Decomposable order-K kernel stored as its K factor vectors, each length M.
/// Immutable after construction.
class RankOneKernel {
public:
    explicit RankOneKernel(std::vector<std::vector<double>> factors) : factors_(std::move(factors)) {
        if (factors_.empty()) throw std::invalid_argument("RankOneKernel: order must be >= 1");
        const std::size_t m = factors_[0].size();
        if (m < 1) throw std::invalid_argument("RankOneKernel: memory must be >= 1");
        for (const auto& f : factors_)
            if (f.size() != m) throw std::invalid_argument("RankOneKernel: factor lengths differ");
    }

    RankOneKernel(std::initializer_list<std::vector<double>> factors)
        : RankOneKernel(std::vector<std::vector<double>>(factors)) {}

    std::size_t order() const { return factors_.size(); }
    std::size_t memory() const { return factors_[0].size(); }
    const std::vector<double>& factor(std::size_t s) const { return factors_.at(s); }
    const std::vector<std::vector<double>>& factors() const { return factors_; }

private:
    std::vector<std::vector<double>> factors_;
};

/// Full order-K kernel with M^K coefficients in row-major multi-index order:
/// flat(i_1,...,i_K) = sum_k i_k * M^(K-k), first index most significant.
class DenseKernel {
public:
    DenseKernel(std::size_t order, std::size_t memory)
        : order_(order), memory_(memory), coeffs_(detail::checked_dense_size(memory, order), 0.0) {}

    DenseKernel(std::size_t order, std::size_t memory, std::vector<double> coefficients)
        : order_(order), memory_(memory), coeffs_(std::move(coefficients)) {
        if (coeffs_.size() != detail::checked_dense_size(memory, order))
            throw std::invalid_argument("DenseKernel: coefficient count must equal M^K");
    }

    std::size_t order() const { return order_; }
    std::size_t memory() const { return memory_; }
    std::size_t size() const { return coeffs_.size(); }
    const std::vector<double>& coefficients() const { return coeffs_; }

    std::size_t flatten(std::span<const std::size_t> idx) const {
        if (idx.size() != order_) throw std::invalid_argument("flatten: index arity mismatch");
        std::size_t flat = 0;
        for (std::size_t k = 0; k < order_; ++k) {
            if (idx[k] >= memory_) throw std::out_of_range("flatten: index out of range");
            flat = flat * memory_ + idx[k];
        }
        return flat;
    }

    std::vector<std::size_t> unflatten(std::size_t flat) const {
        if (flat >= coeffs_.size()) throw std::out_of_range("unflatten: flat index out of range");
        std::vector<std::size_t> idx(order_);
        for (std::size_t k = order_; k-- > 0;) {
            idx[k] = flat % memory_;
            flat /= memory_;
        }
        return idx;
    }

    double at(std::span<const std::size_t> idx) const { return coeffs_[flatten(idx)]; }
    double operator[](std::size_t flat) const { return coeffs_[flat]; }

private:
    std::size_t order_;
    std::size_t memory_;
    std::vector<double> coeffs_;
};

/// Expand a decomposable kernel to its dense coefficient form. The coefficient
/// at (i_1,...,i_K) is the product w_1[i_1] * ... * w_K[i_K].
inline DenseKernel materialize(const RankOneKernel& k) {
    detail::checked_dense_size(k.memory(), k.order());
    std::vector<double> coeffs = k.factor(0);
    for (std::size_t s = 1; s < k.order(); ++s) coeffs = kron(coeffs, k.factor(s));
    return DenseKernel(k.order(), k.memory(), std::move(coeffs));
}

/// l2 tensor inner product: coordinate-wise sum of products.
inline double tensor_inner(const DenseKernel& a, const DenseKernel& b) {
    if (a.order() != b.order() || a.memory() != b.memory())
        throw std::invalid_argument("tensor_inner: shape mismatch");
    return std::inner_product(a.coefficients().begin(), a.coefficients().end(),
                              b.coefficients().begin(), 0.0);
}

/// Induced l2 norm. Satisfies the cross-norm identity on decomposables:
/// ||w_1 (x) ... (x) w_K|| = ||w_1|| * ... * ||w_K||.
inline double tensor_norm(const DenseKernel& a) { return std::sqrt(tensor_inner(a, a)); }

/// Kernel file format: header "order,memory", one line with the two values,
/// then one coefficient per line in canonical flattening order.
inline void write_kernel_csv(std::ostream& os, const DenseKernel& k) {
    os << "order,memory\n" << k.order() << "," << k.memory() << "\n";
    for (double c : k.coefficients()) os << format_double(c) << "\n";
}

inline DenseKernel read_kernel_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || trim(line) != "order,memory")
        throw std::invalid_argument("kernel csv: missing 'order,memory' header");
    if (!std::getline(is, line)) throw std::invalid_argument("kernel csv: missing dimension line");
    const auto dims = split(line, ',');
    if (dims.size() != 2) throw std::invalid_argument("kernel csv: dimension line needs two fields");
    const std::size_t order = static_cast<std::size_t>(parse_u64(dims[0]));
    const std::size_t memory = static_cast<std::size_t>(parse_u64(dims[1]));
    const std::size_t n = detail::checked_dense_size(memory, order);
    std::vector<double> coeffs;
    coeffs.reserve(n);
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        coeffs.push_back(parse_double(t));
    }
    if (coeffs.size() != n)
        throw std::invalid_argument("kernel csv: expected " + std::to_string(n) + " coefficients, got " +
                                    std::to_string(coeffs.size()));
    return DenseKernel(order, memory, std::move(coeffs));
}

}  // namespace sml
