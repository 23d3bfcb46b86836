#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "sml/csv.hpp"
#include "sml/estimation.hpp"
#include "sml/filters.hpp"
#include "sml/gaussian_moments.hpp"
#include "sml/models.hpp"
#include "sml/rng.hpp"
#include "sml/tensor.hpp"

namespace sml {

namespace seed_stream {
inline constexpr std::uint64_t plant = 1;
inline constexpr std::uint64_t input = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t step_bound = 4;
inline constexpr std::uint64_t probes = 5;
}  // namespace seed_stream

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

enum class ExperimentKind { identification, stability_table, sd_comparison, rho_sweep, chaos_sweep };
enum class PlantKind { random_decomposable, gaussian_rho, file };
enum class InitKind { standard, zero };
enum class FilterKind { sml_lms, sml_true_lms, volterra_lms, pf_lms, sv_lms };

struct FilterSpec {
    FilterKind kind = FilterKind::sml_lms;
    std::size_t window = 1;     // sml_true_lms
    std::size_t diagonals = 3;  // sv_lms

    std::string label() const {
        switch (kind) {
            case FilterKind::sml_lms: return "sml-lms";
            case FilterKind::sml_true_lms: return "sml-true-lms(L=" + std::to_string(window) + ")";
            case FilterKind::volterra_lms: return "volterra-lms";
            case FilterKind::pf_lms: return "pf-lms";
            case FilterKind::sv_lms: return "sv-lms(D=" + std::to_string(diagonals) + ")";
        }
        return "?";
    }
    bool is_sml() const { return kind == FilterKind::sml_lms || kind == FilterKind::sml_true_lms; }
};

inline FilterSpec parse_filter_spec(const std::string& token, std::size_t default_window) {
    const std::string t = trim(token);
    std::string name = t;
    std::optional<std::size_t> arg;
    const auto open = t.find('(');
    if (open != std::string::npos) {
        if (t.back() != ')') throw std::invalid_argument("filter spec: missing ')': " + t);
        name = t.substr(0, open);
        arg = static_cast<std::size_t>(parse_u64(t.substr(open + 1, t.size() - open - 2)));
    }
    FilterSpec spec;
    if (name == "sml-lms") {
        spec.kind = FilterKind::sml_lms;
        if (arg) throw std::invalid_argument("sml-lms takes no argument");
    } else if (name == "sml-true-lms") {
        spec.kind = FilterKind::sml_true_lms;
        spec.window = arg.value_or(default_window);
        if (spec.window < 1) throw std::invalid_argument("sml-true-lms: window must be >= 1");
    } else if (name == "volterra-lms") {
        spec.kind = FilterKind::volterra_lms;
    } else if (name == "pf-lms") {
        spec.kind = FilterKind::pf_lms;
    } else if (name == "sv-lms") {
        spec.kind = FilterKind::sv_lms;
        spec.diagonals = arg.value_or(3);
    } else {
        throw std::invalid_argument("unknown filter: " + name);
    }
    return spec;
}

/// Declarative experiment description. Parsed from a flat key = value file;
/// every key matches a field name below (see README for the schema).
struct ScenarioConfig {
    ExperimentKind kind = ExperimentKind::identification;
    std::size_t order = 2;
    std::size_t memory = 10;
    std::size_t window = 4;  // default L for sml-true-lms specs without an argument
    double mu = 0.0;         // absolute step size; 0 means derive mu_scale * mu_0
    double mu_scale = 0.05;
    std::vector<double> mu_multipliers = {0.5, 0.9, 1.0, 1.5, 2.0};
    double noise_var = 1e-3;
    std::size_t realizations = 1000;
    std::size_t iterations = 5000;
    std::uint64_t seed = 1;
    PlantKind plant = PlantKind::random_decomposable;
    std::string plant_file;
    double rho = 0.5;
    std::vector<double> rho_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double rho_width = 18.0;
    bool rho_centered = true;
    InitKind init = InitKind::standard;
    std::vector<FilterSpec> filters = {FilterSpec{}};
    std::size_t threads = 0;  // 0 = hardware concurrency
    bool trace = false;       // dump realization-0 trace CSVs
    double chaos_mu_start = 0.0;
    double chaos_mu_stop = 0.03;
    double chaos_mu_step = 1e-4;
    std::size_t chaos_transient = 10000;
    std::size_t chaos_record = 1000;
    std::vector<double> chaos_dump_mus = {0.016};
    double steady_fraction = 0.1;
    std::size_t step_bound_samples = 1000000;
    std::size_t probe_count = 20000;
    std::string out_dir = "out";

    void validate() const {
        if (order < 1 || memory < 1) throw std::invalid_argument("config: order and memory must be >= 1");
        if (realizations < 1) throw std::invalid_argument("config: realizations must be >= 1");
        if (iterations < 1) throw std::invalid_argument("config: iterations must be >= 1");
        if (noise_var < 0.0) throw std::invalid_argument("config: noise_var must be >= 0");
        if (filters.empty()) throw std::invalid_argument("config: filter roster is empty");
        if (mu < 0.0 || mu_scale <= 0.0) throw std::invalid_argument("config: bad step size");
        if (kind == ExperimentKind::stability_table && mu_multipliers.empty())
            throw std::invalid_argument("config: mu grid is empty");
        if (kind == ExperimentKind::rho_sweep) {
            if (order != 2) throw std::invalid_argument("config: rho sweep requires order 2");
            if (rho_grid.empty()) throw std::invalid_argument("config: rho grid is empty");
            for (double r : rho_grid)
                if (r < 0.0 || r >= 1.0) throw std::invalid_argument("config: rho must be in [0,1)");
        }
        if (plant == PlantKind::gaussian_rho && (rho < 0.0 || rho >= 1.0))
            throw std::invalid_argument("config: rho must be in [0,1)");
        if (plant == PlantKind::file && plant_file.empty())
            throw std::invalid_argument("config: plant file path missing");
        if (kind == ExperimentKind::chaos_sweep) {
            if (chaos_mu_step <= 0.0 || chaos_mu_stop < chaos_mu_start)
                throw std::invalid_argument("config: bad chaos mu grid");
            if (chaos_record < 1) throw std::invalid_argument("config: chaos_record must be >= 1");
        }
        if (steady_fraction <= 0.0 || steady_fraction > 1.0)
            throw std::invalid_argument("config: steady_fraction must be in (0,1]");
    }
};

inline ExperimentKind parse_experiment_kind(const std::string& s) {
    if (s == "identification") return ExperimentKind::identification;
    if (s == "stability-table") return ExperimentKind::stability_table;
    if (s == "sd-comparison") return ExperimentKind::sd_comparison;
    if (s == "rho-sweep") return ExperimentKind::rho_sweep;
    if (s == "chaos-sweep") return ExperimentKind::chaos_sweep;
    throw std::invalid_argument("unknown experiment kind: " + s);
}

inline std::string experiment_kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::identification: return "identification";
        case ExperimentKind::stability_table: return "stability-table";
        case ExperimentKind::sd_comparison: return "sd-comparison";
        case ExperimentKind::rho_sweep: return "rho-sweep";
        case ExperimentKind::chaos_sweep: return "chaos-sweep";
    }
    return "?";
}

namespace detail {

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("bad boolean: " + v);
}

inline std::vector<double> parse_double_list(const std::string& v) {
    std::vector<double> out;
    for (const auto& tok : split(v, ',')) {
        const std::string t = trim(tok);
        if (!t.empty()) out.push_back(parse_double(t));
    }
    return out;
}

}  // namespace detail

/// Flat key = value scenario format; '#' starts a comment, blank lines are
/// skipped, unknown keys are rejected.
inline ScenarioConfig parse_scenario(std::istream& is, ScenarioConfig cfg = {}) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key == "kind") cfg.kind = parse_experiment_kind(value);
        else if (key == "order") cfg.order = static_cast<std::size_t>(parse_u64(value));
        else if (key == "memory") cfg.memory = static_cast<std::size_t>(parse_u64(value));
        else if (key == "window") cfg.window = static_cast<std::size_t>(parse_u64(value));
        else if (key == "mu") cfg.mu = parse_double(value);
        else if (key == "mu_scale") cfg.mu_scale = parse_double(value);
        else if (key == "mu_multipliers") cfg.mu_multipliers = detail::parse_double_list(value);
        else if (key == "noise_var") cfg.noise_var = parse_double(value);
        else if (key == "realizations") cfg.realizations = static_cast<std::size_t>(parse_u64(value));
        else if (key == "iterations") cfg.iterations = static_cast<std::size_t>(parse_u64(value));
        else if (key == "seed") cfg.seed = parse_u64(value);
        else if (key == "plant") {
            if (value == "random-decomposable") cfg.plant = PlantKind::random_decomposable;
            else if (value == "gaussian-rho") cfg.plant = PlantKind::gaussian_rho;
            else if (value.rfind("file:", 0) == 0) {
                cfg.plant = PlantKind::file;
                cfg.plant_file = trim(value.substr(5));
            } else throw std::invalid_argument("unknown plant spec: " + value);
        }
        else if (key == "rho") cfg.rho = parse_double(value);
        else if (key == "rho_grid") cfg.rho_grid = detail::parse_double_list(value);
        else if (key == "rho_width") cfg.rho_width = parse_double(value);
        else if (key == "rho_centered") cfg.rho_centered = detail::parse_bool(value);
        else if (key == "init") {
            if (value == "standard") cfg.init = InitKind::standard;
            else if (value == "zero") cfg.init = InitKind::zero;
            else throw std::invalid_argument("unknown init: " + value);
        }
        else if (key == "filters") {
            cfg.filters.clear();
            for (const auto& tok : split(value, ','))
                if (!trim(tok).empty()) cfg.filters.push_back(parse_filter_spec(tok, cfg.window));
        }
        else if (key == "threads") cfg.threads = static_cast<std::size_t>(parse_u64(value));
        else if (key == "trace") cfg.trace = detail::parse_bool(value);
        else if (key == "chaos_mu_start") cfg.chaos_mu_start = parse_double(value);
        else if (key == "chaos_mu_stop") cfg.chaos_mu_stop = parse_double(value);
        else if (key == "chaos_mu_step") cfg.chaos_mu_step = parse_double(value);
        else if (key == "chaos_transient") cfg.chaos_transient = static_cast<std::size_t>(parse_u64(value));
        else if (key == "chaos_record") cfg.chaos_record = static_cast<std::size_t>(parse_u64(value));
        else if (key == "chaos_dump_mus") cfg.chaos_dump_mus = detail::parse_double_list(value);
        else if (key == "steady_fraction") cfg.steady_fraction = parse_double(value);
        else if (key == "step_bound_samples") cfg.step_bound_samples = static_cast<std::size_t>(parse_u64(value));
        else if (key == "probe_count") cfg.probe_count = static_cast<std::size_t>(parse_u64(value));
        else if (key == "out_dir") cfg.out_dir = value;
        else throw std::invalid_argument("unknown config key: " + key);
    }
    return cfg;
}

inline ScenarioConfig parse_scenario_file(const std::string& path, ScenarioConfig base = {}) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    return parse_scenario(f, std::move(base));
}

// ---------------------------------------------------------------------------
// Plants
// ---------------------------------------------------------------------------

/// Output power E[y^2] of a decomposable kernel under the i.i.d. Gaussian
/// delay line, via the Isserlis pairing sum (equals the R_{u^K} quadratic
/// form exactly).
inline double rank_one_output_power(const RankOneKernel& k) {
    std::vector<std::vector<double>> forms;
    forms.reserve(2 * k.order());
    for (const auto& f : k.factors()) forms.push_back(f);
    for (const auto& f : k.factors()) forms.push_back(f);
    return gaussian_product_moment(forms);
}

/// Random decomposable plant: i.i.d. standard normal factor entries, globally
/// rescaled for unit output power under the Gaussian input.
inline RankOneKernel random_decomposable_plant(std::size_t order, std::size_t memory,
                                               std::uint64_t seed) {
    GaussianStream g(seed);
    std::vector<std::vector<double>> factors(order, std::vector<double>(memory));
    for (auto& f : factors)
        for (double& v : f) v = g.next();
    RankOneKernel raw(std::move(factors));
    const double power = rank_one_output_power(raw);
    if (!(power > 0.0)) throw std::runtime_error("random plant degenerated to zero power");
    const double scale = std::pow(power, -0.5 / static_cast<double>(order));
    std::vector<std::vector<double>> scaled = raw.factors();
    for (auto& f : scaled)
        for (double& v : f) v *= scale;
    return RankOneKernel(std::move(scaled));
}

/// Second-order Gaussian-bell plant family indexed by the correlation-like
/// parameter rho: entries exp(-[a^2 + b^2 + 2 rho a b] / (width (1 - rho^2)))
/// on the tap grid, normalized for unit output power. rho = 0 separates into
/// an outer product (decomposable); rho -> 1 spreads the singular values.
/// The centered flag puts the bell at the middle of the grid; the corner
/// variant uses the raw (i-1, j-1)-style offsets.
inline DenseKernel gaussian_rho_plant(std::size_t memory, double rho, double width = 18.0,
                                      bool centered = true) {
    if (rho < 0.0 || rho >= 1.0) throw std::invalid_argument("gaussian_rho_plant: rho must be in [0,1)");
    if (width <= 0.0) throw std::invalid_argument("gaussian_rho_plant: width must be positive");
    const double shift = centered ? (static_cast<double>(memory) - 1.0) / 2.0 : 0.0;
    const double denom = width * (1.0 - rho * rho);
    std::vector<double> coeffs(memory * memory);
    for (std::size_t i = 0; i < memory; ++i) {
        const double a = static_cast<double>(i) - shift;
        for (std::size_t j = 0; j < memory; ++j) {
            const double b = static_cast<double>(j) - shift;
            coeffs[i * memory + j] = std::exp(-(a * a + b * b + 2.0 * rho * a * b) / denom);
        }
    }
    DenseKernel raw(2, memory, std::move(coeffs));
    const CorrelationSet c = gaussian_correlations(memory, 2, raw, 0.0);
    const double power = c.r_d;
    std::vector<double> normalized = raw.coefficients();
    const double alpha = 1.0 / std::sqrt(power);
    for (double& v : normalized) v *= alpha;
    return DenseKernel(2, memory, std::move(normalized));
}

/// Plant under identification: decomposable (factor form) or dense.
struct PlantData {
    std::size_t order = 0;
    std::size_t memory = 0;
    std::optional<RankOneKernel> rank1;
    std::optional<DenseKernel> dense;

    bool is_rank_one() const { return rank1.has_value(); }
};

inline PlantData build_plant(const ScenarioConfig& cfg) {
    PlantData p;
    p.order = cfg.order;
    p.memory = cfg.memory;
    switch (cfg.plant) {
        case PlantKind::random_decomposable:
            p.rank1 = random_decomposable_plant(cfg.order, cfg.memory,
                                                derive_seed(cfg.seed, seed_stream::plant));
            break;
        case PlantKind::gaussian_rho:
            if (cfg.order != 2) throw std::invalid_argument("gaussian-rho plant requires order 2");
            p.dense = gaussian_rho_plant(cfg.memory, cfg.rho, cfg.rho_width, cfg.rho_centered);
            break;
        case PlantKind::file: {
            std::ifstream f(cfg.plant_file);
            if (!f) throw std::runtime_error("cannot open plant file: " + cfg.plant_file);
            DenseKernel k = read_kernel_csv(f);
            if (k.order() != cfg.order || k.memory() != cfg.memory)
                throw std::invalid_argument("plant file shape does not match config order/memory");
            p.dense = std::move(k);
            break;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// EMSE evaluation
// ---------------------------------------------------------------------------

namespace detail {

/// Plant output evaluated without allocating: rank-one plants as a product of
/// FIR outputs, dense plants by a multi-index sweep.
inline double plant_output(const PlantData& p, std::span<const double> taps) {
    if (p.rank1) {
        double y = 1.0;
        for (const auto& f : p.rank1->factors()) {
            double acc = 0.0;
            for (std::size_t j = 0; j < f.size(); ++j) acc += f[j] * taps[j];
            y *= acc;
        }
        return y;
    }
    const DenseKernel& k = *p.dense;
    const std::size_t K = k.order();
    const std::size_t M = k.memory();
    if (K == 2) {
        const auto& c = k.coefficients();
        double acc = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            double row = 0.0;
            const double* ci = c.data() + i * M;
            for (std::size_t j = 0; j < M; ++j) row += ci[j] * taps[j];
            acc += taps[i] * row;
        }
        return acc;
    }
    // generic order: odometer over multi-indices
    std::size_t dim = k.size();
    std::vector<std::size_t> digit(K, 0);
    double acc = 0.0;
    for (std::size_t f = 0; f < dim; ++f) {
        double prod = k.coefficients()[f];
        for (std::size_t kk = 0; kk < K; ++kk) prod *= taps[digit[kk]];
        acc += prod;
        for (std::size_t kk = K; kk-- > 0;) {
            if (++digit[kk] < M) break;
            digit[kk] = 0;
        }
    }
    return acc;
}

}  // namespace detail

/// Exact excess-MSE evaluation, E[((W_o - W) u^{(x)K})^2].
///
/// Decomposable-vs-decomposable pairs go through the Isserlis pairing sum
/// (no M^K objects touched). Dense plants or dense filters use the
/// precomputed R_{u^K} quadratic form when M^K is within the correlation
/// cap; beyond the cap the evaluator falls back to seeded Monte Carlo probe
/// regressors and records a warning.
class EmseEvaluator {
public:
    EmseEvaluator(const PlantData& plant, bool roster_has_dense, std::uint64_t master_seed,
                  std::size_t probe_count)
        : plant_(plant), probe_count_(probe_count), master_seed_(master_seed) {
        const std::size_t K = plant.order;
        const bool need_matrix = !plant.is_rank_one() || roster_has_dense;
        bool cap_ok = true;
        std::size_t dim = 0;
        try {
            dim = detail::checked_dense_size(plant.memory, K);
            cap_ok = dim <= kCorrelationDimCap;
        } catch (const std::length_error&) {
            cap_ok = false;
        }
        if (need_matrix && cap_ok) {
            const DenseKernel dense_plant =
                plant.is_rank_one() ? materialize(*plant.rank1) : *plant.dense;
            corr_ = gaussian_correlations(plant.memory, K, dense_plant, 0.0);
            plant_vec_ = Eigen::Map<const Eigen::VectorXd>(dense_plant.coefficients().data(),
                                                           static_cast<Eigen::Index>(dim));
            q_ = corr_->r_uK * plant_vec_;
            c_oo_ = plant_vec_.dot(q_);
        } else if (need_matrix) {
            probe_mode_ = true;
            warnings_.push_back("exact EMSE unavailable (M^K beyond correlation cap); using " +
                                std::to_string(probe_count_) + "-probe Monte Carlo estimate");
            build_probes();
        }
        if (plant.is_rank_one()) {
            pair_con_ = plant.rank1->factors();
            c_oo_pair_ = cross_moment(pair_con_, pair_con_);
        }
    }

    const std::vector<std::string>& warnings() const { return warnings_; }
    bool probe_mode() const { return probe_mode_; }

    /// EMSE for a decomposable filter state.
    double rank_one(const std::vector<std::vector<double>>& factors) const {
        if (plant_.is_rank_one() && !probe_mode_) {
            const double m_ow = cross_moment(pair_con_, factors);
            const double m_ww = cross_moment(factors, factors);
            return c_oo_pair_ - 2.0 * m_ow + m_ww;
        }
        if (corr_) {
            thread_local std::vector<double> vec_scratch, vec_tmp;
            vectorize_into(factors, vec_scratch, vec_tmp);
            const Eigen::Map<const Eigen::VectorXd> vm(vec_scratch.data(),
                                                       static_cast<Eigen::Index>(vec_scratch.size()));
            const double m_ww = cross_moment(factors, factors);
            return c_oo_ - 2.0 * q_.dot(vm) + m_ww;
        }
        return probe_emse([&](std::span<const double> taps) {
            double y = 1.0;
            for (const auto& f : factors) {
                double acc = 0.0;
                for (std::size_t j = 0; j < f.size(); ++j) acc += f[j] * taps[j];
                y *= acc;
            }
            return y;
        });
    }

    /// EMSE for a filter holding dense coefficients (already in M^K layout).
    double dense(std::span<const double> coeffs) const {
        if (corr_) {
            const Eigen::Map<const Eigen::VectorXd> cm(coeffs.data(),
                                                       static_cast<Eigen::Index>(coeffs.size()));
            const Eigen::VectorXd delta = plant_vec_ - cm;
            return delta.dot(corr_->r_uK * delta);
        }
        const std::size_t K = plant_.order;
        const std::size_t M = plant_.memory;
        return probe_emse([&](std::span<const double> taps) {
            std::vector<std::size_t> digit(K, 0);
            double acc = 0.0;
            for (std::size_t f = 0; f < coeffs.size(); ++f) {
                double prod = coeffs[f];
                for (std::size_t kk = 0; kk < K; ++kk) prod *= taps[digit[kk]];
                acc += prod;
                for (std::size_t kk = K; kk-- > 0;) {
                    if (++digit[kk] < M) break;
                    digit[kk] = 0;
                }
            }
            return acc;
        });
    }

    /// Probe-based estimate regardless of mode (test oracle).
    double probe_rank_one(const std::vector<std::vector<double>>& factors) const {
        build_probes();
        return probe_emse([&](std::span<const double> taps) {
            double y = 1.0;
            for (const auto& f : factors) {
                double acc = 0.0;
                for (std::size_t j = 0; j < f.size(); ++j) acc += f[j] * taps[j];
                y *= acc;
            }
            return y;
        });
    }

private:
    static constexpr std::size_t kMaxForms = 20;

    /// E[prod_s (u.a_s) prod_s (u.b_s)] through the pairing sum. Stack-local
    /// scratch keeps concurrent calls safe on a shared evaluator.
    double cross_moment(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) const {
        const std::size_t n = a.size() + b.size();
        if (n > kMaxForms) throw std::invalid_argument("cross_moment: order too large");
        std::array<const std::vector<double>*, kMaxForms> forms{};
        std::size_t idx = 0;
        for (const auto& f : a) forms[idx++] = &f;
        for (const auto& f : b) forms[idx++] = &f;
        std::array<double, kMaxForms * kMaxForms> gram{};
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t y = x; y < n; ++y) {
                const auto& fx = *forms[x];
                const auto& fy = *forms[y];
                double dot = 0.0;
                for (std::size_t j = 0; j < fx.size(); ++j) dot += fx[j] * fy[j];
                gram[x * n + y] = gram[y * n + x] = dot;
            }
        return gaussian_moment_from_gram(std::span<const double>(gram.data(), n * n), n);
    }

    static void vectorize_into(const std::vector<std::vector<double>>& factors,
                               std::vector<double>& out, std::vector<double>& tmp) {
        out.assign(factors[0].begin(), factors[0].end());
        for (std::size_t s = 1; s < factors.size(); ++s) {
            const auto& f = factors[s];
            tmp.resize(out.size() * f.size());
            for (std::size_t p = 0; p < out.size(); ++p)
                for (std::size_t q = 0; q < f.size(); ++q) tmp[p * f.size() + q] = out[p] * f[q];
            std::swap(out, tmp);
        }
    }

    void build_probes() const {
        std::lock_guard<std::mutex> lock(probe_mutex_);
        if (!probes_.empty()) return;
        const std::size_t M = plant_.memory;
        GaussianStream g(derive_seed(master_seed_, seed_stream::probes));
        probes_.resize(probe_count_ * M);
        for (double& v : probes_) v = g.next();
        probe_plant_.resize(probe_count_);
        for (std::size_t p = 0; p < probe_count_; ++p)
            probe_plant_[p] =
                detail::plant_output(plant_, std::span<const double>(probes_.data() + p * M, M));
    }

    template <typename F>
    double probe_emse(F&& filter_out) const {
        build_probes();
        const std::size_t M = plant_.memory;
        double acc = 0.0;
        for (std::size_t p = 0; p < probe_count_; ++p) {
            const std::span<const double> taps(probes_.data() + p * M, M);
            const double diff = probe_plant_[p] - filter_out(taps);
            acc += diff * diff;
        }
        return acc / static_cast<double>(probe_count_);
    }

    const PlantData& plant_;
    std::size_t probe_count_;
    std::uint64_t master_seed_;
    std::optional<CorrelationSet> corr_;
    Eigen::VectorXd plant_vec_, q_;
    double c_oo_ = 0.0;
    std::vector<std::vector<double>> pair_con_;
    double c_oo_pair_ = 0.0;
    bool probe_mode_ = false;
    std::vector<std::string> warnings_;
    mutable std::mutex probe_mutex_;
    mutable std::vector<double> probes_;
    mutable std::vector<double> probe_plant_;
};

// ---------------------------------------------------------------------------
// Ensemble machinery
// ---------------------------------------------------------------------------

struct EnsembleCurve {
    std::vector<double> mean_emse;  // length = iterations; diverged realizations excluded
    std::size_t used = 0;
    std::size_t diverged = 0;
};

struct TraceRow {
    std::size_t iteration;
    double y, e, mse_proxy, emse;
    bool diverged_flag;
};

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows) {
    os << "iteration,y,e,mse_proxy,emse,diverged_flag\n";
    for (const auto& r : rows)
        os << r.iteration << "," << format_double(r.y) << "," << format_double(r.e) << ","
           << format_double(r.mse_proxy) << "," << format_double(r.emse) << ","
           << (r.diverged_flag ? 1 : 0) << "\n";
}

namespace detail {

inline std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? hc : 1;
}

/// Fixed-size chunks dispatched to a small pool. Chunk boundaries do not
/// depend on the thread count, so any per-chunk accumulation is bit-identical
/// for every thread count.
inline constexpr std::size_t kChunkSize = 16;

inline void parallel_chunks(std::size_t total, std::size_t threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t nchunks = (total + kChunkSize - 1) / kChunkSize;
    if (nchunks == 0) return;
    const std::size_t nthreads = std::min(detail::resolve_threads(threads), nchunks);
    if (nthreads <= 1) {
        for (std::size_t c = 0; c < nchunks; ++c)
            fn(c, c * kChunkSize, std::min(total, (c + 1) * kChunkSize));
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t t = 0; t < nthreads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t c = next.fetch_add(1);
                if (c >= nchunks) return;
                try {
                    fn(c, c * kChunkSize, std::min(total, (c + 1) * kChunkSize));
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// Adaptive filter instances behind one stepping interface.
struct AnyFilter {
    std::optional<SmlFilter> sml;
    std::optional<BaselineLmsFilter> baseline;
    bool true_lms = false;

    FilterStep step(double u, double d) {
        if (baseline) return baseline->step(u, d);
        if (true_lms) {
            const auto ws = sml->true_lms_step(u, d);
            return {ws.output, ws.errors.empty() ? 0.0 : ws.errors.front()};
        }
        return sml->lms_step(u, d);
    }
    bool diverged() const { return baseline ? baseline->diverged() : sml->diverged(); }
};

inline AnyFilter make_filter(const FilterSpec& spec, const ScenarioConfig& cfg, double mu,
                             double max_value) {
    AnyFilter f;
    switch (spec.kind) {
        case FilterKind::sml_lms:
        case FilterKind::sml_true_lms: {
            RankOneKernel init = cfg.init == InitKind::zero
                                     ? RankOneKernel(std::vector<std::vector<double>>(
                                           cfg.order, std::vector<double>(cfg.memory, 0.0)))
                                     : steepest_descent_init(cfg.order, cfg.memory);
            const bool is_true = spec.kind == FilterKind::sml_true_lms;
            // harness default: TRUE-LMS with a sizable window runs at half MAX
            const double m = (is_true && spec.window >= 4) ? max_value / 2.0 : max_value;
            f.sml.emplace(init, mu, m, is_true ? spec.window : 1);
            f.true_lms = is_true;
            break;
        }
        case FilterKind::volterra_lms:
            f.baseline.emplace(BaselineKind::volterra, cfg.order, cfg.memory, 1, mu);
            break;
        case FilterKind::pf_lms:
            f.baseline.emplace(BaselineKind::power_filter, 2, cfg.memory, 1, mu);
            break;
        case FilterKind::sv_lms:
            f.baseline.emplace(BaselineKind::simplified_volterra, 2, cfg.memory, spec.diagonals, mu);
            break;
    }
    return f;
}

struct EnsembleOptions {
    bool want_emse = true;
    const EmseEvaluator* evaluator = nullptr;
    std::vector<TraceRow>* trace_rows = nullptr;  // realization 0 only
};

// per-thread scratch for the diagonal baselines' dense embedding
inline thread_local std::vector<double> scratch_embed_;

/// Runs the configured realization budget for one filter against one plant.
/// Every realization draws its input and noise streams from seeds derived
/// from (master, stream, r), so results do not depend on scheduling, and the
/// reduction folds fixed-size chunks in index order.
inline EnsembleCurve run_ensemble(const ScenarioConfig& cfg, const PlantData& plant,
                                  const FilterSpec& spec, double mu, double max_value,
                                  const EnsembleOptions& opt) {
    const std::size_t iters = cfg.iterations;
    const std::size_t nchunks = (cfg.realizations + kChunkSize - 1) / kChunkSize;
    struct Chunk {
        std::vector<double> sum;
        std::size_t used = 0, diverged = 0;
    };
    std::vector<Chunk> chunks(nchunks);
    const double noise_sd = std::sqrt(cfg.noise_var);

    parallel_chunks(cfg.realizations, cfg.threads, [&](std::size_t ci, std::size_t rb, std::size_t re) {
        Chunk& acc = chunks[ci];
        if (opt.want_emse) acc.sum.assign(iters, 0.0);
        std::vector<double> emse(opt.want_emse ? iters : 0, 0.0);
        for (std::size_t r = rb; r < re; ++r) {
            GaussianStream input(derive_seed(cfg.seed, seed_stream::input, r));
            GaussianStream noise(derive_seed(cfg.seed, seed_stream::noise, r));
            DelayLine dl(cfg.memory);
            AnyFilter filter = make_filter(spec, cfg, mu, max_value);
            bool diverged = false;
            std::size_t t = 0;
            for (; t < iters; ++t) {
                const double u = input.next();
                const double v = noise.next() * noise_sd;
                dl.push(u);
                const double d = plant_output(plant, dl.taps()) + v;
                double e_val = 0.0;
                if (opt.want_emse) {
                    e_val = filter.baseline
                                ? opt.evaluator->dense(filter.baseline->kind() == BaselineKind::volterra
                                                           ? std::span<const double>(
                                                                 filter.baseline->coefficients())
                                                           : std::span<const double>(
                                                                 scratch_embed_ = filter.baseline
                                                                                      ->dense_embedding()))
                                : opt.evaluator->rank_one(filter.sml->factors());
                    emse[t] = e_val;
                }
                const FilterStep st = filter.step(u, d);
                if (opt.trace_rows && r == 0)
                    opt.trace_rows->push_back(TraceRow{t, st.output, st.error, st.error * st.error,
                                                       e_val, filter.diverged()});
                if (filter.diverged()) {
                    diverged = true;
                    break;
                }
            }
            if (diverged) {
                ++acc.diverged;
            } else {
                ++acc.used;
                if (opt.want_emse)
                    for (std::size_t i = 0; i < iters; ++i) acc.sum[i] += emse[i];
            }
        }
    });

    EnsembleCurve curve;
    if (opt.want_emse) curve.mean_emse.assign(iters, 0.0);
    for (const auto& c : chunks) {
        curve.used += c.used;
        curve.diverged += c.diverged;
        if (opt.want_emse && !c.sum.empty())
            for (std::size_t i = 0; i < iters; ++i) curve.mean_emse[i] += c.sum[i];
    }
    if (opt.want_emse) {
        const double denom = curve.used > 0 ? static_cast<double>(curve.used)
                                            : std::numeric_limits<double>::quiet_NaN();
        for (double& v : curve.mean_emse) v /= denom;
    }
    return curve;
}

/// mu for a run: explicit when configured, otherwise mu_scale * mu_0 with the
/// stability bound evaluated at the given decomposable reference.
inline double resolved_mu(const ScenarioConfig& cfg, const RankOneKernel& reference) {
    if (cfg.mu > 0.0) return cfg.mu;
    const double mu0 = step_bound(cfg.order, cfg.memory, reference, cfg.step_bound_samples,
                                  derive_seed(cfg.seed, seed_stream::step_bound));
    return cfg.mu_scale * mu0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment runners
// ---------------------------------------------------------------------------

struct IdentificationResult {
    std::vector<std::pair<std::string, EnsembleCurve>> curves;
    std::map<std::string, std::vector<TraceRow>> traces;
    std::vector<std::string> warnings;
    double noise_var = 0.0;
    double mu = 0.0;
};

inline IdentificationResult run_identification(const ScenarioConfig& cfg) {
    cfg.validate();
    const PlantData plant = build_plant(cfg);
    bool roster_dense = false;
    for (const auto& f : cfg.filters)
        if (!f.is_sml()) roster_dense = true;
    const EmseEvaluator evaluator(plant, roster_dense, cfg.seed, cfg.probe_count);

    double mu;
    if (cfg.mu > 0.0) {
        mu = cfg.mu;
    } else if (plant.is_rank_one()) {
        mu = detail::resolved_mu(cfg, *plant.rank1);
    } else {
        throw std::invalid_argument("identification: non-decomposable plant requires explicit mu");
    }
    const double max_value = max_threshold(cfg.order, 1.0);

    IdentificationResult out;
    out.noise_var = cfg.noise_var;
    out.mu = mu;
    out.warnings = evaluator.warnings();
    for (const auto& spec : cfg.filters) {
        detail::EnsembleOptions opt;
        opt.want_emse = true;
        opt.evaluator = &evaluator;
        std::vector<TraceRow> rows;
        if (cfg.trace) opt.trace_rows = &rows;
        EnsembleCurve curve = detail::run_ensemble(cfg, plant, spec, mu, max_value, opt);
        if (cfg.trace) out.traces[spec.label()] = std::move(rows);
        out.curves.emplace_back(spec.label(), std::move(curve));
    }
    return out;
}

struct StabilityRow {
    std::string filter;
    double multiplier = 0.0;
    std::size_t divergences = 0;
    std::size_t realizations = 0;
};

struct StabilityResult {
    std::vector<StabilityRow> rows;
    double mu0 = 0.0;
};

inline StabilityResult run_stability_table(const ScenarioConfig& cfg) {
    cfg.validate();
    if (cfg.plant != PlantKind::random_decomposable)
        throw std::invalid_argument("stability table requires a decomposable plant");
    const PlantData plant = build_plant(cfg);
    const double mu0 = step_bound(cfg.order, cfg.memory, *plant.rank1, cfg.step_bound_samples,
                                  derive_seed(cfg.seed, seed_stream::step_bound));
    const double max_value = max_threshold(cfg.order, 1.0);

    StabilityResult out;
    out.mu0 = mu0;
    for (const auto& spec : cfg.filters) {
        for (double mult : cfg.mu_multipliers) {
            detail::EnsembleOptions opt;
            opt.want_emse = false;
            EnsembleCurve curve = detail::run_ensemble(cfg, plant, spec, mult * mu0, max_value, opt);
            out.rows.push_back(StabilityRow{spec.label(), mult, curve.diverged, cfg.realizations});
        }
    }
    return out;
}

struct SdComparisonResult {
    std::vector<double> sd_mse;   // length iterations, index = updates applied
    EnsembleCurve lms;            // pre-step EMSE, same axis
    double mu = 0.0;
    double noise_var = 0.0;
    SteepestDescentTrace trace;
};

inline SdComparisonResult run_sd_comparison(const ScenarioConfig& cfg) {
    cfg.validate();
    if (cfg.plant != PlantKind::random_decomposable)
        throw std::invalid_argument("sd comparison requires a decomposable plant");
    const PlantData plant = build_plant(cfg);
    const CorrelationSet corr =
        gaussian_correlations(cfg.memory, cfg.order, *plant.rank1, cfg.noise_var);
    const double mu = detail::resolved_mu(cfg, *plant.rank1);

    SdComparisonResult out;
    out.mu = mu;
    out.noise_var = cfg.noise_var;
    out.trace = steepest_descent(corr, mu, cfg.iterations, steepest_descent_init(cfg.order, cfg.memory));
    out.sd_mse.assign(out.trace.mse_curve.begin(),
                      out.trace.mse_curve.begin() +
                          static_cast<std::ptrdiff_t>(std::min(cfg.iterations, out.trace.mse_curve.size())));

    const EmseEvaluator evaluator(plant, false, cfg.seed, cfg.probe_count);
    detail::EnsembleOptions opt;
    opt.want_emse = true;
    opt.evaluator = &evaluator;
    const FilterSpec lms_spec{FilterKind::sml_lms, 1, 1};
    out.lms = detail::run_ensemble(cfg, plant, lms_spec, mu, max_threshold(cfg.order, 1.0), opt);
    return out;
}

struct RhoPoint {
    double rho = 0.0;
    double steady_mse = 0.0;
    double rank1_residual_energy = 0.0;  // sum of squared singular values past the first
    std::size_t used = 0;
    std::size_t diverged = 0;
};

struct RhoSweepResult {
    std::vector<RhoPoint> points;
    std::vector<std::pair<std::string, EnsembleCurve>> curves;
    double noise_var = 0.0;
};

inline RhoSweepResult run_rho_sweep(const ScenarioConfig& cfg) {
    cfg.validate();
    RhoSweepResult out;
    out.noise_var = cfg.noise_var;
    for (double rho : cfg.rho_grid) {
        ScenarioConfig local = cfg;
        local.plant = PlantKind::gaussian_rho;
        local.rho = rho;
        const PlantData plant = build_plant(local);

        // singular structure of the reshaped kernel
        const Eigen::Map<const Eigen::MatrixXd> mat(plant.dense->coefficients().data(),
                                                    static_cast<Eigen::Index>(cfg.memory),
                                                    static_cast<Eigen::Index>(cfg.memory));
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd sv = svd.singularValues();
        double resid = 0.0;
        for (Eigen::Index i = 1; i < sv.size(); ++i) resid += sv[i] * sv[i];

        double mu = cfg.mu;
        if (mu <= 0.0) {
            // stability bound at the dominant rank-one component
            const double s0 = std::sqrt(sv[0]);
            std::vector<std::vector<double>> f(2, std::vector<double>(cfg.memory));
            for (std::size_t j = 0; j < cfg.memory; ++j) {
                f[0][j] = s0 * svd.matrixU()(static_cast<Eigen::Index>(j), 0);
                f[1][j] = s0 * svd.matrixV()(static_cast<Eigen::Index>(j), 0);
            }
            local.mu = 0.0;
            mu = detail::resolved_mu(local, RankOneKernel(f));
        }

        const EmseEvaluator evaluator(plant, false, cfg.seed, cfg.probe_count);
        detail::EnsembleOptions opt;
        opt.want_emse = true;
        opt.evaluator = &evaluator;
        RhoPoint point;
        point.rho = rho;
        point.rank1_residual_energy = resid;
        double steady_acc = 0.0;
        std::size_t steady_n = 0;
        for (const auto& spec : cfg.filters) {
            EnsembleCurve curve =
                detail::run_ensemble(local, plant, spec, mu, max_threshold(cfg.order, 1.0), opt);
            if (spec.kind == FilterKind::sml_lms || &spec == &cfg.filters.front()) {
                const std::size_t tail =
                    std::max<std::size_t>(1, static_cast<std::size_t>(
                                                 static_cast<double>(cfg.iterations) * cfg.steady_fraction));
                for (std::size_t t = cfg.iterations - tail; t < cfg.iterations; ++t) {
                    steady_acc += curve.mean_emse[t];
                    ++steady_n;
                }
                point.used = curve.used;
                point.diverged = curve.diverged;
            }
            std::ostringstream label;
            label << spec.label() << "@rho=" << rho;
            out.curves.emplace_back(label.str(), std::move(curve));
        }
        point.steady_mse = steady_acc / static_cast<double>(steady_n) + cfg.noise_var;
        out.points.push_back(point);
    }
    return out;
}

enum class ChaosClass { converged, bounded, diverged };

inline std::string chaos_class_name(ChaosClass c) {
    switch (c) {
        case ChaosClass::converged: return "converged";
        case ChaosClass::bounded: return "bounded";
        case ChaosClass::diverged: return "diverged";
    }
    return "?";
}

struct ChaosCell {
    double mu = 0.0;
    ChaosClass cls = ChaosClass::bounded;
    std::vector<double> samples;  // recorded w1 values after the transient
    bool sign_alternation = false;
    double final_w1 = 0.0, final_w2 = 0.0, final_error = 0.0;
};

struct ChaosTrajectory {
    double mu = 0.0;
    std::vector<double> w1, w2;
};

struct ChaosResult {
    std::vector<ChaosCell> cells;
    std::vector<ChaosTrajectory> trajectories;
};

/// Scalar testbed d(i) = 100 u(i)^2 with constant input u = 1, adapted by the
/// unstabilized LMS (MAX = infinity). Sweeping mu maps out fixed-point
/// convergence, the period-doubling cascade, bounded chaos and divergence.
inline ChaosResult run_chaos_sweep(const ScenarioConfig& cfg) {
    cfg.validate();
    const std::size_t cells =
        static_cast<std::size_t>(std::floor((cfg.chaos_mu_stop - cfg.chaos_mu_start) /
                                            cfg.chaos_mu_step + 0.5)) + 1;
    ChaosResult out;
    out.cells.resize(cells);

    auto run_cell = [&](double mu, std::size_t record, std::vector<double>* w1_dump,
                        std::vector<double>* w2_dump) {
        ChaosCell cell;
        cell.mu = mu;
        double w1 = 1.0, w2 = 0.0;  // staircase start for K = 2, M = 1
        const std::size_t total = cfg.chaos_transient + record;
        cell.samples.reserve(record);
        bool diverged = false;
        if (mu > 0.0) {
            for (std::size_t t = 0; t < total; ++t) {
                const double e = 100.0 - w1 * w2;
                const double n1 = w1 + mu * e * w2;
                const double n2 = w2 + mu * e * w1;
                w1 = n1;
                w2 = n2;
                if (!std::isfinite(w1) || !std::isfinite(w2) || std::abs(w1) > kDivergenceThreshold ||
                    std::abs(w2) > kDivergenceThreshold) {
                    diverged = true;
                    break;
                }
                if (t >= cfg.chaos_transient) cell.samples.push_back(w1);
                if (w1_dump) {
                    w1_dump->push_back(w1);
                    w2_dump->push_back(w2);
                }
            }
        } else {
            for (std::size_t t = cfg.chaos_transient; t < total; ++t) cell.samples.push_back(w1);
            if (w1_dump) {
                w1_dump->assign(total, w1);
                w2_dump->assign(total, w2);
            }
        }
        cell.final_w1 = w1;
        cell.final_w2 = w2;
        cell.final_error = 100.0 - w1 * w2;
        if (diverged) {
            cell.cls = ChaosClass::diverged;
        } else {
            bool fixed = std::abs(cell.final_error) < 1e-6;
            for (double s : cell.samples)
                if (std::abs(s - cell.final_w1) > 1e-6) {
                    fixed = false;
                    break;
                }
            cell.cls = fixed ? ChaosClass::converged : ChaosClass::bounded;
            for (std::size_t i = 0; i + 1 < cell.samples.size(); ++i)
                if (cell.samples[i] * cell.samples[i + 1] < 0.0) {
                    cell.sign_alternation = true;
                    break;
                }
        }
        return cell;
    };

    detail::parallel_chunks(cells, cfg.threads, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const double mu = cfg.chaos_mu_start + static_cast<double>(i) * cfg.chaos_mu_step;
            out.cells[i] = run_cell(mu, cfg.chaos_record, nullptr, nullptr);
        }
    });

    for (double mu : cfg.chaos_dump_mus) {
        ChaosTrajectory traj;
        traj.mu = mu;
        run_cell(mu, cfg.chaos_record, &traj.w1, &traj.w2);
        out.trajectories.push_back(std::move(traj));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline double to_db(double v) { return 10.0 * std::log10(v); }

inline void write_curves_csv(std::ostream& os,
                             const std::vector<std::pair<std::string, EnsembleCurve>>& curves,
                             double noise_var) {
    os << "iteration,filter,mean_emse_db,mean_mse_db\n";
    for (const auto& [name, curve] : curves)
        for (std::size_t t = 0; t < curve.mean_emse.size(); ++t)
            os << t << "," << name << "," << format_double(to_db(curve.mean_emse[t])) << ","
               << format_double(to_db(curve.mean_emse[t] + noise_var)) << "\n";
}

inline void write_sd_curves_csv(std::ostream& os, const SdComparisonResult& r) {
    os << "iteration,filter,mean_emse_db,mean_mse_db\n";
    for (std::size_t t = 0; t < r.sd_mse.size(); ++t)
        os << t << ",steepest-descent," << format_double(to_db(r.sd_mse[t] - r.noise_var)) << ","
           << format_double(to_db(r.sd_mse[t])) << "\n";
    for (std::size_t t = 0; t < r.lms.mean_emse.size(); ++t)
        os << t << ",sml-lms," << format_double(to_db(r.lms.mean_emse[t])) << ","
           << format_double(to_db(r.lms.mean_emse[t] + r.noise_var)) << "\n";
}

inline void write_stability_csv(std::ostream& os, const StabilityResult& r) {
    os << "filter,mu_multiplier,divergences,realizations\n";
    for (const auto& row : r.rows)
        os << row.filter << "," << format_double(row.multiplier) << "," << row.divergences << ","
           << row.realizations << "\n";
}

inline void write_bifurcation_csv(std::ostream& os, const ChaosResult& r) {
    os << "mu,sample_index,w1\n";
    for (const auto& cell : r.cells)
        for (std::size_t i = 0; i < cell.samples.size(); ++i)
            os << format_double(cell.mu) << "," << i << "," << format_double(cell.samples[i]) << "\n";
}

inline void write_chaos_classes_csv(std::ostream& os, const ChaosResult& r) {
    os << "mu,classification,sign_alternation,final_w1,final_w2,final_error\n";
    for (const auto& cell : r.cells)
        os << format_double(cell.mu) << "," << chaos_class_name(cell.cls) << ","
           << (cell.sign_alternation ? 1 : 0) << "," << format_double(cell.final_w1) << ","
           << format_double(cell.final_w2) << "," << format_double(cell.final_error) << "\n";
}

inline void write_chaos_trajectories_csv(std::ostream& os, const ChaosResult& r) {
    os << "mu,iteration,w1,w2\n";
    for (const auto& traj : r.trajectories)
        for (std::size_t t = 0; t < traj.w1.size(); ++t)
            os << format_double(traj.mu) << "," << t << "," << format_double(traj.w1[t]) << ","
               << format_double(traj.w2[t]) << "\n";
}

inline void write_rho_sweep_csv(std::ostream& os, const RhoSweepResult& r) {
    os << "rho,steady_state_mse,steady_state_mse_db,rank1_residual_energy,realizations_used,divergences\n";
    for (const auto& p : r.points)
        os << format_double(p.rho) << "," << format_double(p.steady_mse) << ","
           << format_double(to_db(p.steady_mse)) << "," << format_double(p.rank1_residual_energy)
           << "," << p.used << "," << p.diverged << "\n";
}

namespace detail {

inline std::string sanitize_filename(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
    return out;
}

inline std::ofstream open_out(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open output file: " + name);
    return f;
}

}  // namespace detail

/// Runs the configured experiment and writes its CSV artifacts into
/// cfg.out_dir. Returns a short human-readable summary.
inline std::string run_and_write(const ScenarioConfig& cfg) {
    std::ostringstream summary;
    switch (cfg.kind) {
        case ExperimentKind::identification: {
            const IdentificationResult r = run_identification(cfg);
            auto f = detail::open_out(cfg.out_dir, "curves.csv");
            write_curves_csv(f, r.curves, r.noise_var);
            for (const auto& [name, rows] : r.traces) {
                auto tf = detail::open_out(cfg.out_dir, "trace_" + detail::sanitize_filename(name) + ".csv");
                write_trace_csv(tf, rows);
            }
            summary << "identification: mu=" << format_double(r.mu) << "\n";
            for (const auto& [name, curve] : r.curves) {
                const std::size_t tail = std::max<std::size_t>(
                    1, static_cast<std::size_t>(static_cast<double>(cfg.iterations) * cfg.steady_fraction));
                double acc = 0.0;
                for (std::size_t t = cfg.iterations - tail; t < cfg.iterations; ++t)
                    acc += curve.mean_emse[t];
                summary << "  " << name << ": steady mse "
                        << format_double(to_db(acc / static_cast<double>(tail) + r.noise_var))
                        << " dB, diverged " << curve.diverged << "/" << cfg.realizations << "\n";
            }
            for (const auto& w : r.warnings) summary << "  warning: " << w << "\n";
            break;
        }
        case ExperimentKind::stability_table: {
            const StabilityResult r = run_stability_table(cfg);
            auto f = detail::open_out(cfg.out_dir, "stability.csv");
            write_stability_csv(f, r);
            summary << "stability table: mu0=" << format_double(r.mu0) << "\n";
            for (const auto& row : r.rows)
                summary << "  " << row.filter << " @ " << format_double(row.multiplier) << "*mu0: "
                        << row.divergences << "/" << row.realizations << " diverged\n";
            break;
        }
        case ExperimentKind::sd_comparison: {
            const SdComparisonResult r = run_sd_comparison(cfg);
            auto f = detail::open_out(cfg.out_dir, "curves.csv");
            write_sd_curves_csv(f, r);
            auto df = detail::open_out(cfg.out_dir, "descent.csv");
            r.trace.write_csv(df);
            double gap = 0.0;
            for (std::size_t t = 0; t < r.sd_mse.size() && t < r.lms.mean_emse.size(); ++t)
                gap = std::max(gap, std::abs(to_db(r.lms.mean_emse[t] + r.noise_var) - to_db(r.sd_mse[t])));
            summary << "sd comparison: mu=" << format_double(r.mu) << ", max gap "
                    << format_double(gap) << " dB\n";
            break;
        }
        case ExperimentKind::rho_sweep: {
            const RhoSweepResult r = run_rho_sweep(cfg);
            auto f = detail::open_out(cfg.out_dir, "curves.csv");
            write_curves_csv(f, r.curves, r.noise_var);
            auto sf = detail::open_out(cfg.out_dir, "rhosweep.csv");
            write_rho_sweep_csv(sf, r);
            summary << "rho sweep:\n";
            for (const auto& p : r.points)
                summary << "  rho=" << format_double(p.rho) << ": steady mse "
                        << format_double(to_db(p.steady_mse)) << " dB\n";
            break;
        }
        case ExperimentKind::chaos_sweep: {
            const ChaosResult r = run_chaos_sweep(cfg);
            auto f = detail::open_out(cfg.out_dir, "bifurcation.csv");
            write_bifurcation_csv(f, r);
            auto cf = detail::open_out(cfg.out_dir, "chaos_classes.csv");
            write_chaos_classes_csv(cf, r);
            auto tf = detail::open_out(cfg.out_dir, "chaos_trajectories.csv");
            write_chaos_trajectories_csv(tf, r);
            std::size_t conv = 0, bounded = 0, div = 0;
            for (const auto& c : r.cells) {
                if (c.cls == ChaosClass::converged) ++conv;
                else if (c.cls == ChaosClass::bounded) ++bounded;
                else ++div;
            }
            summary << "chaos sweep: " << r.cells.size() << " cells (" << conv << " converged, "
                    << bounded << " bounded, " << div << " diverged)\n";
            break;
        }
    }
    return summary.str();
}

}  // namespace sml
