#pragma once

// Adaptive Dormand–Prince 5(4) integration with 4th-order dense output,
// forward or backward in time, first-crossing event location and the
// variational (sensitivity) augmentation Φ' = A(t)Φ, Φ(0) = I.

#include <array>
#include <exception>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace clbf::ode {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using Rhs = std::function<Vec(const Vec&)>;
using JacobianFn = std::function<Mat(const Vec&)>;
using EventFn = std::function<double(const Vec&)>;

enum class Direction { forward, backward };
enum class Status { completed, event_hit, max_time, step_failure };

std::string_view status_name(Status s);

struct OdeTolerances {
    double rtol = 1e-9;
    double atol = 1e-12;
    double event_tol = 1e-12;  ///< time bracket width for event refinement
    long max_steps = 2'000'000;
};

/// One accepted step with its dense-output coefficients.
struct Segment {
    double t0 = 0.0;
    double t1 = 0.0;
    Vec y0;
    Vec y1;
    std::array<Vec, 3> dense;  // Hairer's bspl, ydiff − h·k7 − bspl, and the d-weighted term

    Vec eval(double t) const;
};

class Trajectory {
public:
    Trajectory() = default;
    Trajectory(Vec x0, double t0, Direction dir);

    Direction direction() const noexcept { return direction_; }
    Status status() const noexcept { return status_; }
    double t_start() const noexcept { return t_start_; }
    double t_end() const noexcept { return t_end_; }
    const Vec& initial_state() const noexcept { return initial_; }
    Vec final_state() const;
    const std::vector<Segment>& segments() const noexcept { return segments_; }
    const std::string& message() const noexcept { return message_; }
    /// The field failure that ended integration, if any.
    std::exception_ptr error() const noexcept { return error_; }

    bool covers(double t) const;
    /// Dense-output state. Throws std::out_of_range outside the covered span.
    Vec interpolate(double t) const;

    /// CSV `t,x1,...,xn` with `samples` evenly spaced rows including both ends.
    void write_csv(std::ostream& out, int samples) const;

private:
    friend class Stepper;
    std::vector<Segment> segments_;
    Vec initial_;
    double t_start_ = 0.0;
    double t_end_ = 0.0;
    Direction direction_ = Direction::forward;
    Status status_ = Status::completed;
    std::string message_;
    std::exception_ptr error_;
};

/// Integrates x' = f(x) from t0 to t1 (backward when t1 < t0). Field errors
/// (clbf::FieldError) reject the trial step; persistent failure ends with
/// status step_failure and the last accepted state.
Trajectory integrate(const Rhs& f, const Vec& x0, double t0, double t1, const OdeTolerances& tol = {});

struct EventResult {
    bool found = false;
    double t = 0.0;  ///< signed time of the crossing (negative for backward)
    Vec x;
    Trajectory trajectory;
};

/// First zero of e(φ(t, x0)) for |t| ≤ t_max in the given direction.
/// Throws IntegrationError if integration fails before the event or t_max.
EventResult detect_event(const Rhs& f, const Vec& x0, const EventFn& e, double t_max, Direction dir,
                         const OdeTolerances& tol = {});

class VariationalResult {
public:
    VariationalResult(Trajectory augmented, int n) : augmented_(std::move(augmented)), n_(n) {}

    const Trajectory& augmented() const noexcept { return augmented_; }
    int dim() const noexcept { return n_; }
    Vec state(double t) const;
    Mat phi(double t) const;
    Vec final_state() const;
    Mat final_phi() const;

private:
    Trajectory augmented_;
    int n_;
};

/// Integrates (x, Φ) jointly over [t0, t1].
VariationalResult integrate_variational(const Rhs& f, const JacobianFn& jacobian, const Vec& x0, double t0,
                                        double t1, const OdeTolerances& tol = {});

}  // namespace clbf::ode
