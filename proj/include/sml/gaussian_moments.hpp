#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace sml {

/// E[g^m] for g ~ N(0,1): zero for odd m, (m-1)!! for even m.
inline double normal_moment(unsigned m) {
    if (m % 2 != 0) return 0.0;
    double v = 1.0;
    for (unsigned t = 1; t < m; t += 2) v *= static_cast<double>(t);
    return v;
}

namespace detail {

inline double pairing_sum(std::span<const double> gram, std::size_t n, std::uint32_t used) {
    std::size_t i = 0;
    while (i < n && (used & (1u << i))) ++i;
    if (i == n) return 1.0;
    used |= (1u << i);
    double total = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
        if (used & (1u << j)) continue;
        total += gram[i * n + j] * pairing_sum(gram, n, used | (1u << j));
    }
    return total;
}

}  // namespace detail

/// Isserlis pairing sum over a Gram matrix of n jointly Gaussian zero-mean
/// variables: E[z_1 ... z_n] = sum over perfect matchings of products of
/// covariances. Zero for odd n.
inline double gaussian_moment_from_gram(std::span<const double> gram, std::size_t n) {
    if (n % 2 != 0) return 0.0;
    if (n == 0) return 1.0;
    if (n > 20) throw std::invalid_argument("gaussian_moment_from_gram: too many factors");
    if (gram.size() != n * n) throw std::invalid_argument("gaussian_moment_from_gram: gram size mismatch");
    return detail::pairing_sum(gram, n, 0);
}

/// E[prod_t (u . v_t)] for u with i.i.d. N(0,1) entries. The forms' pairwise
/// covariances are plain dot products.
inline double gaussian_product_moment(std::span<const std::span<const double>> forms) {
    const std::size_t n = forms.size();
    if (n % 2 != 0) return 0.0;
    if (n == 0) return 1.0;
    std::vector<double> gram(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        if (a > 0 && forms[a].size() != forms[0].size())
            throw std::invalid_argument("gaussian_product_moment: form lengths differ");
        for (std::size_t b = a; b < n; ++b) {
            double dot = 0.0;
            for (std::size_t j = 0; j < forms[a].size(); ++j) dot += forms[a][j] * forms[b][j];
            gram[a * n + b] = gram[b * n + a] = dot;
        }
    }
    return gaussian_moment_from_gram(gram, n);
}

inline double gaussian_product_moment(const std::vector<std::vector<double>>& forms) {
    std::vector<std::span<const double>> spans;
    spans.reserve(forms.size());
    for (const auto& f : forms) spans.emplace_back(f);
    return gaussian_product_moment(std::span<const std::span<const double>>(spans));
}

}  // namespace sml
