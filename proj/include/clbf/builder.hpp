#pragma once

// The unified CLBF W(x) = V(x)/V(φ(T(x), x)): pointwise evaluation, grids,
// the flow-difference PDE residual, smoothing and level-set verification.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clbf/hitting.hpp"
#include "clbf/model.hpp"

namespace clbf {

enum class Region { inside, boundary, outside };
std::string_view region_name(Region r);

enum class ClbfStatus { ok, origin_too_close, no_crossing, integration_failed, denominator_guard, outside_domain };
std::string_view clbf_status_name(ClbfStatus s);

struct ClbfOptions {
    HittingOptions hitting;
    double d_min = 1e-12;       ///< guard on V(x_hit)
    bool domain_check = true;   ///< require ω > 0 along the path from x to ∂C
};

/// Hitting options from the system config; d_min = 1e-9·max V over 64 boundary samples.
ClbfOptions clbf_options(const SystemSpec& spec);

struct ClbfEvaluation {
    Vec x;
    double omega = 0.0;   ///< −∇V(x)·F(x)
    double omega1 = 0.0;  ///< ω(x)/V(x_hit)
    double W = 0.0;
    double T = 0.0;
    Vec x_hit;
    double denominator = 0.0;
    Region region = Region::inside;
    std::optional<double> pde_residual;
    ClbfStatus status = ClbfStatus::ok;
    std::string message;

    bool has_value() const noexcept {
        return status == ClbfStatus::ok || status == ClbfStatus::outside_domain;
    }
};

ClbfEvaluation clbf_value(const SystemSpec& spec, const VectorField& field, const Vec& x, const ClbfOptions& options);

struct GridSpec {
    Vec lo;
    Vec hi;
    std::vector<int> counts;  ///< points per axis, endpoints included

    std::size_t size() const;
    /// Row-major: the last axis varies fastest.
    Vec point(std::size_t index) const;
};

/// Parses `lo:hi:n,lo:hi:n,...`.
GridSpec parse_grid(std::string_view text, int dim);

std::vector<ClbfEvaluation> clbf_grid(const SystemSpec& spec, const VectorField& field, const GridSpec& grid,
                                      const ClbfOptions& options);

/// |dW/dt + ω₁(x)| with dW/dt from central flow differences (W(φ(dt,x)) −
/// W(φ(−dt,x)))/(2dt) at dt and dt/2, Richardson-extrapolated; dt ≤ 0 selects
/// 1e-4·(1 + |T(x)|).
double pde_residual(const SystemSpec& spec, const VectorField& field, const Vec& x, const ClbfOptions& options,
                    double dt = 0.0);

/// A scalar candidate certificate. Throws when it cannot be evaluated at x.
struct Evaluator {
    std::string name;
    std::function<double(const Vec&)> fn;

    double operator()(const Vec& x) const { return fn(x); }
};

Evaluator clbf_evaluator(const SystemSpec& spec, const VectorField& field, const ClbfOptions& options);
Evaluator raw_v_evaluator(const SystemSpec& spec);

/// ρ(s) = s^p. Throws std::invalid_argument for p < 1.
double smooth_rho(double s, double p);
Evaluator smooth_compose(const Evaluator& inner, double p);
std::vector<double> smooth_compose(const std::vector<double>& values, double p);

struct VerifyOptions {
    int n_boundary = 64;
    int n_interior = 400;
    int n_exterior = 400;
    double tol_boundary = 1e-7;
    double tol_sep = 1e-6;
    double h_margin = 1e-3;
    int n_pde = 0;  ///< PDE residual samples (ratio evaluator only)
    std::uint64_t seed = 0;
};

struct ClbfReport {
    std::string evaluator;
    int n_boundary = 0;
    int n_interior = 0;
    int n_exterior = 0;
    double boundary_max_dev = 0.0;  ///< max |W − 1| on ∂C samples
    double interior_max_W = 0.0;
    double exterior_min_W = 0.0;
    std::optional<double> max_pde_residual;
    int decrease_failures = 0;
    int evaluation_failures = 0;
    bool decrease_ok = false;  ///< inf_u ∇W·(f + g u) < 0, or ∇W·F < 0 in external mode
    bool sublevel_ok = false;  ///< W < 1 inside, W > 1 outside
    bool level_ok = false;     ///< W = 1 on ∂C
    bool pass = false;
    std::vector<Vec> counterexamples;
    VerifyOptions options;
};

ClbfReport verify_clbf(const SystemSpec& spec, const VectorField& field, const Evaluator& evaluator,
                       const VerifyOptions& options, const ClbfOptions& clbf = {});

nlohmann::json to_json(const ClbfReport& report);

struct ConverseIntegral {
    double value = 0.0;       ///< ∫₀^t_end ω₁(φ(t, x)) dt
    double tail_bound = 0.0;  ///< V(φ(t_end, x))/V(x_hit): the remainder
};

ConverseIntegral converse_integral(const SystemSpec& spec, const VectorField& field, const Vec& x, double t_end,
                                   const ClbfOptions& options);

/// CSV `x1..xn,h,V,W,omega1,region,status`.
void write_grid_csv(std::ostream& out, const SystemSpec& spec, const std::vector<ClbfEvaluation>& rows);

}  // namespace clbf
