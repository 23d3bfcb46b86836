#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sml/estimation.hpp"
#include "sml/models.hpp"
#include "sml/rng.hpp"
#include "sml/tensor.hpp"

namespace sml {

/// Floating-point operation tally for instrumented steps.
struct OpCount {
    long long adds = 0;
    long long mults = 0;
};

struct FilterStep {
    double output = 0.0;
    double error = 0.0;
};

/// Online adaptive filter over the decomposable model, covering the
/// stabilized LMS (window L = 1) and TRUE-LMS (general L) recursions.
///
/// Stabilization: each factor update multiplies by the partial product
/// y_s(i) while |y_s(i)| <= MAX and falls back to the plain-LMS direction
/// otherwise, which arrests the runaway mode. The divergence flag is sticky;
/// once set the filter stops adapting.
class SmlFilter {
public:
    SmlFilter(const RankOneKernel& init, double mu, double max_threshold, std::size_t window)
        : w_(init.factors()),
          mu_(mu),
          max_(max_threshold),
          window_(window),
          dl_(init.memory()) {
        if (mu <= 0.0) throw std::invalid_argument("SmlFilter: mu must be positive");
        if (window < 1) throw std::invalid_argument("SmlFilter: window must be >= 1");
        if (!(max_threshold > 0.0)) throw std::invalid_argument("SmlFilter: MAX must be positive");
    }

    std::size_t order() const { return w_.size(); }
    std::size_t memory() const { return w_[0].size(); }
    std::size_t window() const { return window_; }
    double mu() const { return mu_; }
    double max_threshold() const { return max_; }
    bool diverged() const { return diverged_; }
    const std::vector<std::vector<double>>& factors() const { return w_; }
    RankOneKernel kernel() const { return RankOneKernel(w_); }
    const DelayLine& delay_line() const { return dl_; }

    /// One stabilized LMS step: push the sample, form the K FIR outputs and
    /// partial products, then per factor
    ///   w_s += mu e(i) y_s(i) u_i   if |y_s(i)| <= MAX
    ///   w_s += mu e(i) u_i          otherwise,
    /// all branches reading the pre-update factors.
    FilterStep lms_step(double u, double d, OpCount* ops = nullptr) {
        if (window_ != 1) throw std::logic_error("lms_step requires window == 1");
        if (diverged_) return {std::numeric_limits<double>::quiet_NaN(),
                               std::numeric_limits<double>::quiet_NaN()};
        const std::size_t K = order();
        const std::size_t M = memory();
        dl_.push(u);
        const auto taps = dl_.taps();

        scratch_fir_.resize(K);
        scratch_partials_.resize(K);
        for (std::size_t s = 0; s < K; ++s) scratch_fir_[s] = fir_output(taps, w_[s]);
        if (ops) {
            ops->mults += static_cast<long long>(K * M);
            ops->adds += static_cast<long long>(K * (M - 1));
        }
        for (std::size_t s = 0; s < K; ++s) {
            double p = 1.0;
            for (std::size_t r = 0; r < K; ++r)
                if (r != s) p *= scratch_fir_[r];
            scratch_partials_[s] = p;
        }
        if (ops && K >= 2) ops->mults += static_cast<long long>(K * (K - 2));

        double y;
        if (K == 1) {
            y = scratch_fir_[0];
        } else {
            y = scratch_partials_[K - 1] * scratch_fir_[K - 1];
            if (ops) ops->mults += 1;
        }
        const double e = d - y;
        if (ops) ops->adds += 1;

        const double mu_e = mu_ * e;
        if (ops) ops->mults += 1;
        for (std::size_t s = 0; s < K; ++s) {
            auto& ws = w_[s];
            if (std::abs(scratch_partials_[s]) <= max_) {
                if (K == 1) {  // empty partial product; no scaling needed
                    for (std::size_t j = 0; j < M; ++j) ws[j] += mu_e * taps[j];
                    if (ops) {
                        ops->mults += static_cast<long long>(M);
                        ops->adds += static_cast<long long>(M);
                    }
                } else {
                    const double a = mu_e * scratch_partials_[s];
                    for (std::size_t j = 0; j < M; ++j) ws[j] += a * taps[j];
                    if (ops) {
                        ops->mults += static_cast<long long>(1 + M);
                        ops->adds += static_cast<long long>(M);
                    }
                }
            } else {
                for (std::size_t j = 0; j < M; ++j) ws[j] += mu_e * taps[j];
                if (ops) {
                    ops->mults += static_cast<long long>(M);
                    ops->adds += static_cast<long long>(M);
                }
            }
        }
        check_divergence(y);
        return {y, e};
    }

    struct WindowStep {
        double output = 0.0;
        std::vector<double> errors;  // newest first: e(i), e(i-1), ...
    };

    /// One stabilized TRUE-LMS step. The last min(elapsed, L) regressors are
    /// replayed against the current factors (the window errors are never
    /// stale), and each factor moves by the window-averaged gradient
    ///   w_s += (mu/L) sum_j e(j) y_s(j) u_j     if |y_s(i)| <= MAX
    ///   w_s += (mu/L) sum_j e(j) u_j            otherwise.
    /// Before L samples have elapsed the shorter prefix is used with mu/len.
    WindowStep true_lms_step(double u, double d, OpCount* ops = nullptr) {
        if (diverged_) return {std::numeric_limits<double>::quiet_NaN(), {}};
        const std::size_t K = order();
        const std::size_t M = memory();
        dl_.push(u);
        hist_.push_front(Snapshot{std::vector<double>(dl_.taps().begin(), dl_.taps().end()), d});
        if (hist_.size() > window_) hist_.pop_back();
        const std::size_t len = hist_.size();

        // Per-window FIR outputs, partial products and errors, current factors.
        win_fir_.assign(len * K, 0.0);
        win_partials_.assign(len * K, 0.0);
        win_err_.assign(len, 0.0);
        for (std::size_t l = 0; l < len; ++l) {
            const auto& snap = hist_[l];
            for (std::size_t s = 0; s < K; ++s)
                win_fir_[l * K + s] = fir_output(snap.taps, w_[s]);
            for (std::size_t s = 0; s < K; ++s) {
                double p = 1.0;
                for (std::size_t r = 0; r < K; ++r)
                    if (r != s) p *= win_fir_[l * K + r];
                win_partials_[l * K + s] = p;
            }
            const double yl = (K == 1) ? win_fir_[l * K]
                                       : win_partials_[l * K + K - 1] * win_fir_[l * K + K - 1];
            win_err_[l] = snap.desired - yl;
        }
        if (ops) {
            ops->mults += static_cast<long long>(len * K * M);
            ops->adds += static_cast<long long>(len * K * (M - 1));
            if (K >= 2) {
                ops->mults += static_cast<long long>(len * K * (K - 2));
                ops->mults += static_cast<long long>(len);  // y(l)
            }
            ops->adds += static_cast<long long>(len);  // e(l)
        }
        const double y0 = (K == 1) ? win_fir_[0] : win_partials_[K - 1] * win_fir_[K - 1];

        const double scale = mu_ / static_cast<double>(len);
        scratch_grad_.assign(M, 0.0);
        for (std::size_t s = 0; s < K; ++s) {
            auto& g = scratch_grad_;
            g.assign(M, 0.0);
            const bool fine = std::abs(win_partials_[s]) <= max_;  // |y_s(i)|, newest entry
            for (std::size_t l = 0; l < len; ++l) {
                const auto& taps = hist_[l].taps;
                double coeff;
                if (fine && K >= 2) {
                    coeff = win_err_[l] * win_partials_[l * K + s];
                    if (ops) ops->mults += 1;
                } else {
                    coeff = win_err_[l];
                }
                for (std::size_t j = 0; j < M; ++j) g[j] += coeff * taps[j];
                if (ops) {
                    ops->mults += static_cast<long long>(M);
                    ops->adds += static_cast<long long>(M);
                }
            }
            auto& ws = w_[s];
            for (std::size_t j = 0; j < M; ++j) ws[j] += scale * g[j];
            if (ops) {
                ops->mults += static_cast<long long>(M);
                ops->adds += static_cast<long long>(M);
            }
        }
        check_divergence(y0);
        return {y0, win_err_};
    }

private:
    struct Snapshot {
        std::vector<double> taps;
        double desired;
    };

    void check_divergence(double y) {
        if (!std::isfinite(y)) diverged_ = true;
        for (const auto& ws : w_)
            for (double v : ws)
                if (!std::isfinite(v) || std::abs(v) > kDivergenceThreshold) {
                    diverged_ = true;
                    return;
                }
    }

    std::vector<std::vector<double>> w_;
    double mu_;
    double max_;
    std::size_t window_;
    DelayLine dl_;
    std::deque<Snapshot> hist_;
    bool diverged_ = false;

    std::vector<double> scratch_fir_, scratch_partials_, scratch_grad_;
    std::vector<double> win_fir_, win_partials_, win_err_;
};

enum class BaselineKind { volterra, simplified_volterra, power_filter };

/// Linear-in-the-parameters LMS baselines sharing one update rule,
/// coeffs += mu e(i) regressor(u_i), with per-variant regressor maps:
///   volterra            u_i^{(x)K}           M^K coefficients
///   simplified_volterra u(i-a) u(i-a-d)      D x M table (order 2)
///   power_filter        u(i-a)^2             M coefficients (order 2, D = 1)
class BaselineLmsFilter {
public:
    BaselineLmsFilter(BaselineKind kind, std::size_t order, std::size_t memory,
                      std::size_t diagonals, double mu)
        : kind_(kind), order_(order), memory_(memory), diagonals_(diagonals), mu_(mu), dl_(memory) {
        if (mu <= 0.0) throw std::invalid_argument("BaselineLmsFilter: mu must be positive");
        switch (kind_) {
            case BaselineKind::volterra:
                coeffs_.assign(detail::checked_dense_size(memory, order), 0.0);
                break;
            case BaselineKind::simplified_volterra:
                if (order != 2) throw std::invalid_argument("simplified Volterra is order 2 only");
                if (diagonals_ < 1 || diagonals_ > memory)
                    throw std::invalid_argument("simplified Volterra: need 1 <= D <= M");
                coeffs_.assign(diagonals_ * memory, 0.0);
                break;
            case BaselineKind::power_filter:
                if (order != 2) throw std::invalid_argument("power filter is order 2 only");
                diagonals_ = 1;
                coeffs_.assign(memory, 0.0);
                break;
        }
    }

    std::size_t coefficient_count() const { return coeffs_.size(); }
    const std::vector<double>& coefficients() const { return coeffs_; }
    bool diverged() const { return diverged_; }
    BaselineKind kind() const { return kind_; }
    std::size_t diagonals() const { return diagonals_; }

    std::vector<double> regressor() const {
        const auto taps = dl_.taps();
        if (kind_ == BaselineKind::volterra) return tensor_power(taps, order_);
        std::vector<double> reg(coeffs_.size(), 0.0);
        for (std::size_t dgl = 0; dgl < diagonals_; ++dgl)
            for (std::size_t a = 0; a + dgl < memory_; ++a)
                reg[dgl * memory_ + a] = taps[a] * taps[a + dgl];
        return reg;
    }

    FilterStep step(double u, double d) {
        if (diverged_) return {std::numeric_limits<double>::quiet_NaN(),
                               std::numeric_limits<double>::quiet_NaN()};
        dl_.push(u);
        const std::vector<double> reg = regressor();
        double y = 0.0;
        for (std::size_t j = 0; j < reg.size(); ++j) y += coeffs_[j] * reg[j];
        const double e = d - y;
        const double mu_e = mu_ * e;
        for (std::size_t j = 0; j < reg.size(); ++j) coeffs_[j] += mu_e * reg[j];
        if (!std::isfinite(y)) diverged_ = true;
        for (double v : coeffs_)
            if (!std::isfinite(v) || std::abs(v) > kDivergenceThreshold) {
                diverged_ = true;
                break;
            }
        return {y, e};
    }

    /// Coefficients embedded into the dense M^K layout (upper-triangular
    /// placement for the diagonal variants), for EMSE evaluation.
    std::vector<double> dense_embedding() const {
        if (kind_ == BaselineKind::volterra) return coeffs_;
        std::vector<double> dense(memory_ * memory_, 0.0);
        for (std::size_t dgl = 0; dgl < diagonals_; ++dgl)
            for (std::size_t a = 0; a + dgl < memory_; ++a)
                dense[a * memory_ + (a + dgl)] = coeffs_[dgl * memory_ + a];
        return dense;
    }

private:
    BaselineKind kind_;
    std::size_t order_;
    std::size_t memory_;
    std::size_t diagonals_;
    double mu_;
    DelayLine dl_;
    std::vector<double> coeffs_;
    bool diverged_ = false;
};

/// Heuristic stability bound mu_0 = 2 / (3^K T), with T the steady-state
/// E[||y_i||^2 ||u_i||^2] estimated by Monte Carlo at the plant factors
/// (after convergence the weights are stationary, so the plant is the proxy).
/// Reduces to the classical 2/(3 tr R_u) at K = 1.
inline double step_bound(std::size_t order, std::size_t memory, const RankOneKernel& plant,
                         std::size_t samples, std::uint64_t seed) {
    if (plant.order() != order || plant.memory() != memory)
        throw std::invalid_argument("step_bound: plant shape mismatch");
    if (samples < 10000) throw std::invalid_argument("step_bound: need at least 1e4 samples");
    bool all_zero = true;
    for (const auto& f : plant.factors())
        for (double v : f)
            if (v != 0.0) all_zero = false;
    if (all_zero) throw std::domain_error("step_bound: undefined for the zero plant");

    GaussianStream g(seed);
    DelayLine dl(memory);
    for (std::size_t j = 0; j < memory; ++j) dl.push(g.next());  // fill the line first
    double acc = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        dl.push(g.next());
        const std::vector<double> y = partial_products(dl, plant);
        double y2 = 0.0;
        for (double v : y) y2 += v * v;
        double u2 = 0.0;
        for (double v : dl.taps()) u2 += v * v;
        acc += y2 * u2;
    }
    const double t = acc / static_cast<double>(samples);
    if (!(t > 0.0) || !std::isfinite(t)) throw std::domain_error("step_bound: degenerate estimate");
    return 2.0 / (std::pow(3.0, static_cast<double>(order)) * t);
}

/// MAX = (K+1) sqrt(output power); K+1 for unit-power plants.
inline double max_threshold(std::size_t order, double plant_output_power) {
    if (plant_output_power < 0.0) throw std::invalid_argument("max_threshold: negative power");
    return (static_cast<double>(order) + 1.0) * std::sqrt(plant_output_power);
}

enum class SmlAlgorithm { lms, true_lms };

struct OperationTotals {
    long long adds = 0;
    long long mults = 0;
};

/// Closed-form per-step operation totals of the reference implementations:
///   LMS:      adds = 2KM - K + 1,        mults = KM + K^2 + M - K + 2
///   TRUE-LMS: adds = 2LKM - LK + L,      mults = 3LKM + LK^2 + KM - 2LK + L
inline OperationTotals operation_counts(std::size_t order, std::size_t memory, std::size_t window,
                                        SmlAlgorithm alg) {
    if (order < 1 || memory < 1) throw std::invalid_argument("operation_counts: K, M must be >= 1");
    const long long K = static_cast<long long>(order);
    const long long M = static_cast<long long>(memory);
    const long long L = static_cast<long long>(window);
    if (alg == SmlAlgorithm::lms) return {2 * K * M - K + 1, K * M + K * K + M - K + 2};
    if (window < 1) throw std::invalid_argument("operation_counts: L must be >= 1 for TRUE-LMS");
    return {2 * L * K * M - L * K + L, 3 * L * K * M + L * K * K + K * M - 2 * L * K + L};
}

}  // namespace sml
