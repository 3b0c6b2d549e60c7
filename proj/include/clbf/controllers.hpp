#pragma once

// Pointwise feedback laws built from the CLF/CBF pair, and closed-loop
// simulation with safety and decrease monitors.

#include <functional>
#include <iosfwd>
#include <optional>

#include "clbf/compat.hpp"
#include "clbf/errors.hpp"
#include "clbf/model.hpp"
#include "clbf/ode.hpp"

namespace clbf {

/// No input satisfies the active CLF/CBF constraints at a state.
class ControllerInfeasible : public FieldError {
public:
    ControllerInfeasible(const std::string& what, PointFeasibility record)
        : FieldError(what), record_(std::move(record)) {}
    const PointFeasibility& record() const noexcept { return record_; }

private:
    PointFeasibility record_;
};

/// Sontag's universal formula; u = 0 where L_gV = 0.
Vec sontag(const SystemSpec& spec, const Vec& x);

/// min |u|² s.t. a0 + a·u ≤ −c_v V(x) and, where h(x) ≤ band, b0 + b·u ≥ κ.
/// Throws ControllerInfeasible when the constraints have no common solution.
Vec min_norm_qp(const SystemSpec& spec, const Vec& x, const ControllerParams& params);

/// The same QP on given rows: a0 + a·u ≤ clf_bound and, when cbf_bound is set,
/// b0 + b·u ≥ cbf_bound. Empty when infeasible.
std::optional<Vec> min_norm_qp(const LieRows& rows, double clf_bound, std::optional<double> cbf_bound);

/// Smooth partition weight: 1 for s ≤ r0, 0 for s ≥ r1, monotone between.
double blend_weight(double s, double r0, double r1);

/// w(|x|)·Kx + (1 − w(|x|))·min_norm_qp(x).
Vec blended(const SystemSpec& spec, const Vec& x, const ControllerParams& params, const Mat& K);

using FeedbackLaw = std::function<Vec(const Vec&)>;

/// Throws ConfigError for an external closed loop or an invalid blend setup.
FeedbackLaw make_controller(const SystemSpec& spec, ControllerKind kind, const ControllerParams& params);

/// F(x) = f(x) + g(x)u(x) for the chosen controller, or the configured
/// closed loop in external mode (with an AD Jacobian).
VectorField closed_loop_field(const SystemSpec& spec, ControllerKind kind, const ControllerParams& params);
VectorField closed_loop_field(const SystemSpec& spec);

enum class SimulationOutcome { completed, infeasible, integration_failed };
std::string_view outcome_name(SimulationOutcome o);

struct SimulationResult {
    ode::Trajectory trajectory;
    SimulationOutcome outcome = SimulationOutcome::completed;
    std::string message;
    double min_h = 0.0;             ///< min over the path of h(φ(t, x0))
    double max_V_increase = 0.0;    ///< max over the path of V(φ(t, x0)) − V(x0)
    double final_norm = 0.0;        ///< |φ(t_end, x0)|
    double decay_rate = 0.0;        ///< slope of log|x(t)| vs t (diagnostic only)
};

SimulationResult simulate_closed_loop(const SystemSpec& spec, ControllerKind kind, const ControllerParams& params,
                                      const Vec& x0, double t_end);

/// CSV `t,x1..xn,u1..um,V,h` (no u columns in external mode).
void write_simulation_csv(std::ostream& out, const SystemSpec& spec, ControllerKind kind,
                          const ControllerParams& params, const SimulationResult& sim, int samples);

}  // namespace clbf
