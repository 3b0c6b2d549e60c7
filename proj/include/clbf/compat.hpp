#pragma once

// Pointwise strict CLF/CBF compatibility: Lie-derivative rows, exact
// feasibility of the strict inequalities, robustness margins under a control
// bound, boundary sampling and the sampled report.

#include <optional>
#include <vector>

#include "json.hpp"

#include "clbf/model.hpp"

namespace clbf {

enum class ConstraintMode { interior, boundary };
std::string_view mode_name(ConstraintMode mode);

/// a0 = L_fV, a = L_gV, b0 = L_fh, b = L_gh at one state.
struct LieRows {
    double a0 = 0.0;
    Vec a;
    double b0 = 0.0;
    Vec b;
};

/// Throws std::logic_error for an external closed loop (no input to act on).
LieRows lie_rows(const SystemSpec& spec, const Vec& x);

struct Feasibility {
    bool feasible = false;
    std::optional<Vec> witness;
};

/// Exact verdict for {a0 + a·u < 0} (interior) or additionally
/// {b0 + b·u > 0} (boundary), with an explicit witness when feasible.
Feasibility strict_feasible(const LieRows& rows, ConstraintMode mode);

struct Margin {
    double eps = 0.0;  ///< may be negative: depth of infeasibility
    Vec u;
};

/// max ε  s.t.  a0 + a·u ≤ −ε, (boundary) b0 + b·u ≥ ε, |u|₂ ≤ bound.
Margin margin(const LieRows& rows, double bound, ConstraintMode mode);

/// Points of ∂C found by bisection along quasi-uniform rays from the origin.
/// Throws SamplingError if a ray leaves the box with h > 0 or re-enters C.
std::vector<Vec> sample_boundary(const SystemSpec& spec, int count);

enum class PointVerdict { certified, analytic_infeasible, below_strict_margin, evaluation_error };
std::string_view verdict_name(PointVerdict v);

struct PointFeasibility {
    Vec x;
    LieRows rows;
    ConstraintMode mode = ConstraintMode::interior;
    bool feasible = false;
    std::optional<Vec> witness;
    double margin = 0.0;      ///< clipped at 0
    double raw_margin = 0.0;  ///< ε* from margin(), negative when infeasible
    PointVerdict verdict = PointVerdict::analytic_infeasible;
    std::string message;
};

struct CompatOptions {
    int n_interior = 2000;
    int n_boundary = 256;
    double bound_U = 1.0;
    double eps_strict = 1e-8;
    std::uint64_t seed = 0;
};

struct CompatReport {
    std::vector<PointFeasibility> interior;
    std::vector<PointFeasibility> boundary;
    bool pass = false;
    double worst_interior_margin = 0.0;
    double worst_boundary_margin = 0.0;
    std::vector<Vec> counterexamples;
};

PointFeasibility check_point(const SystemSpec& spec, const Vec& x, ConstraintMode mode, double bound,
                             double eps_strict);

CompatReport compat_report(const SystemSpec& spec, const CompatOptions& options = {});

nlohmann::json to_json(const CompatReport& report);

}  // namespace clbf
