#pragma once

// Boundary hitting time T(x) of the closed-loop flow: the unique t with
// h(φ(t, x)) = 0 (positive outside C, negative inside), its gradient and its
// growth near the origin.

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clbf/model.hpp"
#include "clbf/ode.hpp"

namespace clbf {

enum class HitStatus { ok, no_crossing, origin_too_close, integration_failed };
std::string_view hit_status_name(HitStatus s);

struct HittingOptions {
    ode::OdeTolerances ode;
    double t_max = 50.0;
    double r_min = 1e-6;
    Chart chart = Chart::cartesian;
    bool keep_path = false;  ///< retain the trajectory from x to the hit point
};

HittingOptions hitting_options(const SystemSpec& spec);

struct HittingResult {
    Vec x;
    double T = 0.0;
    Vec x_hit;
    std::optional<Vec> grad_T;
    double denom = 0.0;  ///< ∇h(x_hit)·F(x_hit)
    HitStatus status = HitStatus::ok;
    std::string message;
    JacobianSource jacobian_source = JacobianSource::automatic_differentiation;
    std::shared_ptr<const ode::Trajectory> path;
};

/// |h(x)| at or below this counts as on ∂C (T = 0).
double boundary_tolerance(const expr::Expression& h, const Vec& x);

HittingResult hitting_time(const VectorField& field, const expr::Expression& h, const Vec& x,
                           const HittingOptions& options);

/// ∇T(x) = −Φ(T)ᵀ∇h(x_hit) / (∇h(x_hit)·F(x_hit)) with Φ from the variational
/// equation. Fills `result` (including grad_T) when given. Throws
/// IntegrationError if T(x) is unavailable and TransversalityError when the
/// crossing is nearly tangential.
Vec grad_hitting_time(const VectorField& field, const expr::Expression& h, const Vec& x,
                      const HittingOptions& options, HittingResult* result = nullptr);

/// Central differences of T; step defaults to 1e-5·max(1, |x|).
Vec grad_T_fd(const VectorField& field, const expr::Expression& h, const Vec& x, const HittingOptions& options,
              double step = 0.0);

struct GrowthProbe {
    Vec direction;
    std::vector<double> radii;
    std::vector<double> grad_norms;
    std::vector<double> T_values;
    double grad_slope = 0.0;  ///< slope of log|∇T| vs log r
    double T_slope = 0.0;     ///< slope of |T| vs log(1/r)
};

/// Probes x = r·direction for r = r_start·2^-k, k = 0..k_max.
GrowthProbe growth_probe(const VectorField& field, const expr::Expression& h, const Vec& direction, double r_start,
                         int k_max, const HittingOptions& options);

/// Sign changes of h along the flow through x for |t| ≤ t_max in the
/// direction of the hitting search, stopping once the chart radius exceeds
/// `escape_radius`. A well-posed hitting time has exactly one.
int boundary_crossings(const VectorField& field, const expr::Expression& h, const Vec& x,
                       const HittingOptions& options, double escape_radius);

/// CSV `x1..xn,T,xhit1..xhitn[,gradT1..gradTn],status`.
void write_hitting_csv(std::ostream& out, const std::vector<HittingResult>& rows, int n, bool with_gradients);

void write_growth_csv(std::ostream& out, const GrowthProbe& probe);

}  // namespace clbf
