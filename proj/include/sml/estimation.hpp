#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "sml/csv.hpp"
#include "sml/gaussian_moments.hpp"
#include "sml/tensor.hpp"

namespace sml {

/// Correlation matrices are (M^K)^2 dense; refuse dimensions past this.
inline constexpr std::size_t kCorrelationDimCap = 4096;

/// Entry magnitude above which an iterate counts as diverged.
inline constexpr double kDivergenceThreshold = 1e10;

/// Second-order statistics of the mean-square-error surface for the
/// system-identification scenario: R_{u^K}, R_{u^K d} and R_d.
struct CorrelationSet {
    std::size_t order = 0;
    std::size_t memory = 0;
    Eigen::MatrixXd r_uK;   // M^K x M^K
    Eigen::VectorXd r_uKd;  // M^K
    double r_d = 0.0;

    std::size_t dim() const { return static_cast<std::size_t>(r_uKd.size()); }
};

namespace detail {

/// Row-major digit table: digits[p*K + k] is the k-th multi-index of flat p.
inline std::vector<std::size_t> digit_table(std::size_t dim, std::size_t order, std::size_t memory) {
    std::vector<std::size_t> digits(dim * order);
    for (std::size_t p = 0; p < dim; ++p) {
        std::size_t q = p;
        for (std::size_t k = order; k-- > 0;) {
            digits[p * order + k] = q % memory;
            q /= memory;
        }
    }
    return digits;
}

}  // namespace detail

/// Exact correlation parameters for a delay line fed with i.i.d. N(0,1)
/// input and desired signal d(i) = u_i^{(x)K} W_o + v(i), v ~ N(0, sigma_v^2)
/// independent of u. Each R_{u^K} entry is a product over distinct time lags
/// of standard-normal moments (Isserlis): (m-1)!! for even multiplicity m,
/// zero otherwise.
inline CorrelationSet gaussian_correlations(std::size_t memory, std::size_t order,
                                            const DenseKernel& plant, double noise_var) {
    if (plant.order() != order || plant.memory() != memory)
        throw std::invalid_argument("gaussian_correlations: plant shape mismatch");
    if (noise_var < 0.0) throw std::invalid_argument("gaussian_correlations: negative noise variance");
    const std::size_t dim = detail::checked_dense_size(memory, order);
    if (dim > kCorrelationDimCap)
        throw std::length_error("gaussian_correlations: M^K exceeds correlation dimension cap");

    const std::vector<std::size_t> digits = detail::digit_table(dim, order, memory);
    CorrelationSet c;
    c.order = order;
    c.memory = memory;
    c.r_uK.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));

    std::vector<unsigned> count(memory, 0);
    std::vector<std::size_t> touched;
    touched.reserve(2 * order);
    for (std::size_t a = 0; a < dim; ++a) {
        const std::size_t* da = digits.data() + a * order;
        for (std::size_t b = a; b < dim; ++b) {
            const std::size_t* db = digits.data() + b * order;
            touched.clear();
            for (std::size_t k = 0; k < order; ++k) {
                if (count[da[k]]++ == 0) touched.push_back(da[k]);
                if (count[db[k]]++ == 0) touched.push_back(db[k]);
            }
            double v = 1.0;
            for (std::size_t lag : touched) {
                v *= normal_moment(count[lag]);
                count[lag] = 0;
            }
            c.r_uK(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
            c.r_uK(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
        }
    }

    const Eigen::Map<const Eigen::VectorXd> p(plant.coefficients().data(),
                                              static_cast<Eigen::Index>(dim));
    c.r_uKd = c.r_uK * p;
    c.r_d = p.dot(c.r_uKd) + noise_var;
    return c;
}

inline CorrelationSet gaussian_correlations(std::size_t memory, std::size_t order,
                                            const RankOneKernel& plant, double noise_var) {
    return gaussian_correlations(memory, order, materialize(plant), noise_var);
}

/// Materialized coefficients of a decomposable kernel as an Eigen vector.
inline Eigen::VectorXd vectorized(const RankOneKernel& w) {
    const DenseKernel dense = materialize(w);
    return Eigen::Map<const Eigen::VectorXd>(dense.coefficients().data(),
                                             static_cast<Eigen::Index>(dense.size()));
}

namespace detail {

inline void check_shapes(const RankOneKernel& w, const CorrelationSet& c) {
    if (w.order() != c.order || w.memory() != c.memory)
        throw std::invalid_argument("kernel shape does not match correlation set");
}

/// All K block contractions of r against the factors, skipping one slot each:
/// out(j, s) = sum over multi-indices p with p_s = j of r[p] * prod_{k != s} w_k[p_k].
/// One pass with prefix/suffix products per index.
inline Eigen::MatrixXd contract_all_blocks(const std::vector<std::vector<double>>& factors,
                                           const Eigen::VectorXd& r, std::size_t memory) {
    const std::size_t K = factors.size();
    const std::size_t dim = static_cast<std::size_t>(r.size());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(memory),
                                                static_cast<Eigen::Index>(K));
    std::vector<std::size_t> digit(K, 0);
    std::vector<double> pre(K + 1), suf(K + 1);
    for (std::size_t p = 0; p < dim; ++p) {
        pre[0] = 1.0;
        for (std::size_t k = 0; k < K; ++k) pre[k + 1] = pre[k] * factors[k][digit[k]];
        suf[K] = 1.0;
        for (std::size_t k = K; k-- > 0;) suf[k] = suf[k + 1] * factors[k][digit[k]];
        const double rp = r[static_cast<Eigen::Index>(p)];
        for (std::size_t s = 0; s < K; ++s)
            out(static_cast<Eigen::Index>(digit[s]), static_cast<Eigen::Index>(s)) +=
                rp * pre[s] * suf[s + 1];
        for (std::size_t k = K; k-- > 0;) {  // odometer, last digit fastest
            if (++digit[k] < memory) break;
            digit[k] = 0;
        }
    }
    return out;
}

}  // namespace detail

/// Exact MSE at a decomposable point:
/// J(w) = R_d - 2 R_{u^K d} . vec(W) + vec(W)^T R_{u^K} vec(W).
inline double mse(const RankOneKernel& w, const CorrelationSet& c) {
    detail::check_shapes(w, c);
    const Eigen::VectorXd v = vectorized(w);
    return c.r_d - 2.0 * c.r_uKd.dot(v) + v.dot(c.r_uK * v);
}

/// Block gradient of the MSE with respect to factor s (0-based):
/// [-R_{u^K d} + vec(W)^T R_{u^K}] W^(s), where W^(s) substitutes the identity
/// for w_s in the tensor product. The real-valued total derivative of the MSE
/// along w_s is twice this vector; the recursions absorb the factor into mu.
inline Eigen::VectorXd block_gradient(const RankOneKernel& w, const CorrelationSet& c, std::size_t s) {
    detail::check_shapes(w, c);
    if (s >= w.order()) throw std::invalid_argument("block_gradient: factor index out of range");
    const Eigen::VectorXd v = vectorized(w);
    const Eigen::VectorXd r = c.r_uK * v - c.r_uKd;
    const Eigen::MatrixXd blocks = detail::contract_all_blocks(w.factors(), r, c.memory);
    return blocks.col(static_cast<Eigen::Index>(s));
}

/// l2 norm of the stacked K block gradients; zero exactly at critical points
/// of the MSE surface (the polynomial normal equations).
inline double normal_residual(const RankOneKernel& w, const CorrelationSet& c) {
    detail::check_shapes(w, c);
    const Eigen::VectorXd v = vectorized(w);
    const Eigen::VectorXd r = c.r_uK * v - c.r_uKd;
    return detail::contract_all_blocks(w.factors(), r, c.memory).norm();
}

/// Scale-staircase starting point: w_s = [2^(1-s), 0, ..., 0] for s < K and
/// w_K = 0. Breaks the permutation/sign symmetries that trap all-zero or
/// all-equal starts.
inline RankOneKernel steepest_descent_init(std::size_t order, std::size_t memory) {
    if (order < 1 || memory < 1) throw std::invalid_argument("steepest_descent_init: bad shape");
    std::vector<std::vector<double>> factors(order, std::vector<double>(memory, 0.0));
    for (std::size_t s = 0; s + 1 < order; ++s) factors[s][0] = std::pow(2.0, -static_cast<double>(s));
    return RankOneKernel(std::move(factors));
}

enum class SolveStatus { converged, iteration_limit, diverged };

/// Residual below which a run counts as converged.
inline constexpr double kConvergenceResidual = 1e-8;

struct SteepestDescentTrace {
    std::vector<Eigen::VectorXd> iterates;  // stacked factors, length K*M each
    std::vector<double> mse_curve;
    std::vector<double> residuals;
    SolveStatus status = SolveStatus::iteration_limit;

    double final_mse() const { return mse_curve.back(); }
    double final_residual() const { return residuals.back(); }

    void write_csv(std::ostream& os) const {
        os << "iteration,mse,residual\n";
        for (std::size_t i = 0; i < mse_curve.size(); ++i)
            os << i << "," << format_double(mse_curve[i]) << "," << format_double(residuals[i]) << "\n";
    }
};

/// Exact-statistics gradient iteration
///   w_{s,i} = w_{s,i-1} + mu * W^(s)T [R_{d u^K} - R_{u^K} vec(W_{i-1})],
/// all K blocks updated from the same previous iterate. The trace includes
/// the initial point, so with stop_residual = 0 (no early exit) its length is
/// iterations + 1. A non-finite or huge iterate stops the run with the last
/// finite trace kept.
inline SteepestDescentTrace steepest_descent(const CorrelationSet& c, double mu,
                                             std::size_t iterations, const RankOneKernel& init,
                                             double stop_residual = 0.0) {
    detail::check_shapes(init, c);
    if (mu <= 0.0) throw std::invalid_argument("steepest_descent: mu must be positive");
    if (iterations < 1) throw std::invalid_argument("steepest_descent: iterations must be >= 1");

    const std::size_t K = c.order;
    const std::size_t M = c.memory;
    std::vector<std::vector<double>> w = init.factors();

    SteepestDescentTrace trace;
    trace.iterates.reserve(iterations + 1);
    trace.mse_curve.reserve(iterations + 1);
    trace.residuals.reserve(iterations + 1);

    for (std::size_t it = 0;; ++it) {
        const RankOneKernel snapshot(w);
        const Eigen::VectorXd v = vectorized(snapshot);
        const Eigen::VectorXd q = c.r_uK * v;
        const double j = c.r_d - 2.0 * c.r_uKd.dot(v) + v.dot(q);
        const Eigen::VectorXd r = c.r_uKd - q;  // negative gradient direction
        const Eigen::MatrixXd steps = detail::contract_all_blocks(w, r, M);

        Eigen::VectorXd stacked(static_cast<Eigen::Index>(K * M));
        for (std::size_t s = 0; s < K; ++s)
            for (std::size_t jdx = 0; jdx < M; ++jdx)
                stacked[static_cast<Eigen::Index>(s * M + jdx)] = w[s][jdx];
        trace.iterates.push_back(std::move(stacked));
        trace.mse_curve.push_back(j);
        trace.residuals.push_back(steps.norm());

        if (it == iterations) {
            trace.status = trace.residuals.back() < kConvergenceResidual ? SolveStatus::converged
                                                                         : SolveStatus::iteration_limit;
            break;
        }
        if (stop_residual > 0.0 && trace.residuals.back() < stop_residual) {
            trace.status = SolveStatus::converged;
            break;
        }

        bool finite = true;
        for (std::size_t s = 0; s < K && finite; ++s)
            for (std::size_t jdx = 0; jdx < M; ++jdx) {
                w[s][jdx] += mu * steps(static_cast<Eigen::Index>(jdx), static_cast<Eigen::Index>(s));
                if (!std::isfinite(w[s][jdx]) || std::abs(w[s][jdx]) > kDivergenceThreshold) {
                    finite = false;
                    break;
                }
            }
        if (!finite) {
            trace.status = SolveStatus::diverged;
            break;
        }
    }
    return trace;
}

}  // namespace sml
