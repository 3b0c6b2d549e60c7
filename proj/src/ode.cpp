#include "clbf/ode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include <boost/math/tools/toms748_solve.hpp>

#include "clbf/errors.hpp"
#include "clbf/expr.hpp"

namespace clbf::ode {

std::string_view status_name(Status s) {
    switch (s) {
        case Status::completed: return "completed";
        case Status::event_hit: return "event_hit";
        case Status::max_time: return "max_time";
        case Status::step_failure: return "step_failure";
    }
    return "?";
}

namespace {

// Dormand–Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                 e7 = -1.0 / 40;
// Dense output (Hairer & Wanner, dopri5 contd5).
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace

Vec Segment::eval(double t) const {
    if (t == t0) return y0;
    if (t == t1) return y1;
    const double theta = (t - t0) / (t1 - t0);
    const double theta1 = 1.0 - theta;
    return y0 + theta * ((y1 - y0) + theta1 * (dense[0] + theta * (dense[1] + theta1 * dense[2])));
}

Trajectory::Trajectory(Vec x0, double t0, Direction dir)
    : initial_(std::move(x0)), t_start_(t0), t_end_(t0), direction_(dir) {}

Vec Trajectory::final_state() const {
    if (segments_.empty()) return initial_;
    if (t_end_ == segments_.back().t1) return segments_.back().y1;
    return segments_.back().eval(t_end_);
}

bool Trajectory::covers(double t) const {
    const double lo = std::min(t_start_, t_end_), hi = std::max(t_start_, t_end_);
    return t >= lo && t <= hi;
}

Vec Trajectory::interpolate(double t) const {
    if (!covers(t)) {
        std::ostringstream os;
        os << "time " << t << " outside trajectory span [" << std::min(t_start_, t_end_) << ", "
           << std::max(t_start_, t_end_) << "]";
        throw std::out_of_range(os.str());
    }
    if (t == t_start_ || segments_.empty()) return initial_;
    const bool fwd = direction_ == Direction::forward;
    // first segment whose far end reaches t
    auto it = std::lower_bound(segments_.begin(), segments_.end(), t, [fwd](const Segment& s, double v) {
        return fwd ? s.t1 < v : s.t1 > v;
    });
    if (it == segments_.end()) it = std::prev(segments_.end());
    return it->eval(t);
}

void Trajectory::write_csv(std::ostream& out, int samples) const {
    const Eigen::Index n = initial_.size();
    out << "t";
    for (Eigen::Index i = 0; i < n; ++i) out << ",x" << (i + 1);
    out << "\n";
    samples = std::max(samples, 2);
    for (int k = 0; k < samples; ++k) {
        const double t = k + 1 == samples ? t_end_ : t_start_ + (t_end_ - t_start_) * k / (samples - 1);
        const Vec x = interpolate(t);
        out << expr::format_double(t);
        for (Eigen::Index i = 0; i < n; ++i) out << "," << expr::format_double(x[i]);
        out << "\n";
    }
}

class Stepper {
public:
    Stepper(const Rhs& f, const OdeTolerances& tol) : f_(f), tol_(tol) {}

    // Integrates from t0 toward t1 (|t1 − t0| may be the event horizon). When
    // `event` is set, stops at the first sign change and fills `hit`.
    Trajectory run(const Vec& x0, double t0, double t1, const EventFn* event, std::optional<double>* hit) {
        const Direction dir = t1 >= t0 ? Direction::forward : Direction::backward;
        const double sgn = dir == Direction::forward ? 1.0 : -1.0;
        Trajectory traj(x0, t0, dir);
        if (t0 == t1) return traj;

        Vec y = x0;
        double t = t0;
        Vec k1;
        try {
            k1 = f_(y);
        } catch (const FieldError& e) {
            return fail(traj, std::current_exception(), std::string("field failed at the initial state: ") + e.what());
        }
        if (!all_finite(k1)) return fail(traj, nullptr, "field is not finite at the initial state");

        double e_prev = 0.0;
        if (event) {
            e_prev = (*event)(y);
            if (e_prev == 0.0) {
                *hit = t0;
                traj.status_ = Status::event_hit;
                return traj;
            }
        }

        double h = sgn * initial_step(y, k1, std::abs(t1 - t0));
        bool last_rejected = false;
        std::exception_ptr last_error;
        std::string last_message;
        for (long step = 0;; ++step) {
            if (step >= tol_.max_steps) return fail(traj, nullptr, "step limit reached");
            if (sgn * (t + h - t1) > 0.0) h = t1 - t;
            if (std::abs(h) <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t))) {
                return fail(traj, last_error,
                            "step size underflow" + (last_message.empty() ? std::string() : ": " + last_message));
            }
            Vec k2, k3, k4, k5, k6, k7, y_new;
            try {
                k2 = f_(y + h * (a21 * k1));
                k3 = f_(y + h * (a31 * k1 + a32 * k2));
                k4 = f_(y + h * (a41 * k1 + a42 * k2 + a43 * k3));
                k5 = f_(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
                k6 = f_(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
                y_new = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
                k7 = f_(y_new);
            } catch (const FieldError& e) {
                last_error = std::current_exception();
                last_message = e.what();
                h *= 0.25;
                last_rejected = true;
                continue;
            }
            if (!all_finite(k7) || !all_finite(y_new)) {
                last_message = "non-finite stage";
                h *= 0.25;
                last_rejected = true;
                continue;
            }
            const Vec err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            double err = 0.0;
            for (Eigen::Index i = 0; i < y.size(); ++i) {
                const double sc = tol_.atol + tol_.rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
                err = std::max(err, std::abs(err_vec[i]) / sc);
            }
            if (!(err <= 1.0)) {
                h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
                last_rejected = true;
                continue;
            }

            Segment seg;
            seg.t0 = t;
            seg.t1 = t + h;
            if (seg.t1 == t1 || sgn * (seg.t1 - t1) > 0.0) seg.t1 = t1;
            seg.y0 = y;
            seg.y1 = y_new;
            const Vec ydiff = y_new - y;
            seg.dense[0] = h * k1 - ydiff;
            seg.dense[1] = ydiff - h * k7 - seg.dense[0];
            seg.dense[2] = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
            traj.segments_.push_back(std::move(seg));
            const Segment& s = traj.segments_.back();
            traj.t_end_ = s.t1;

            if (event) {
                const double e_new = (*event)(y_new);
                if (e_new == 0.0 || (e_new > 0.0) != (e_prev > 0.0)) {
                    const double t_star = refine(s, *event, e_prev, e_new);
                    *hit = t_star;
                    traj.t_end_ = t_star;
                    traj.status_ = Status::event_hit;
                    return traj;
                }
                e_prev = e_new;
            }
            if (s.t1 == t1) {
                traj.status_ = event ? Status::max_time : Status::completed;
                return traj;
            }
            y = y_new;
            t = s.t1;
            k1 = k7;
            double factor = std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(err, 1e-10), -0.2)));
            if (last_rejected) factor = std::min(factor, 1.0);
            last_rejected = false;
            last_error = nullptr;
            last_message.clear();
            h *= factor;
        }
    }

private:
    Trajectory fail(Trajectory& traj, std::exception_ptr err, std::string msg) {
        traj.status_ = Status::step_failure;
        traj.error_ = std::move(err);
        traj.message_ = std::move(msg);
        return traj;
    }

    double scaled_norm(const Vec& v, const Vec& y) const {
        double r = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            r = std::max(r, std::abs(v[i]) / (tol_.atol + tol_.rtol * std::abs(y[i])));
        }
        return r;
    }

    double initial_step(const Vec& y, const Vec& f0, double span) const {
        const double dy = scaled_norm(y, y);
        const double df = scaled_norm(f0, y);
        double h0 = (dy < 1e-5 || df < 1e-5) ? 1e-6 : 0.01 * dy / df;
        h0 = std::min(h0, span);
        double h1 = h0;
        try {
            const Vec f1 = f_(y + h0 * f0);
            const double d2 = scaled_norm(f1 - f0, y) / h0;
            const double dmax = std::max(df, d2);
            h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 0.2);
        } catch (const FieldError&) {
            h1 = h0 * 1e-3;
        }
        return std::min({100.0 * h0, h1, span});
    }

    // Root of e along one dense segment, bracketed by the step endpoints.
    double refine(const Segment& s, const EventFn& event, double e0, double e1) const {
        if (e1 == 0.0) return s.t1;
        const double len = std::abs(s.t1 - s.t0);
        const double sgn = s.t1 >= s.t0 ? 1.0 : -1.0;
        auto g = [&](double tau) { return tau == 0.0 ? e0 : tau == len ? e1 : event(s.eval(s.t0 + sgn * tau)); };
        const double width = tol_.event_tol;
        auto stop = [width](double a, double b) { return std::abs(b - a) <= width; };
        std::uintmax_t iters = 200;
        const auto [lo, hi] = boost::math::tools::toms748_solve(g, 0.0, len, e0, e1, stop, iters);
        const double g_lo = g(lo), g_hi = g(hi);
        const double tau = std::abs(g_lo) <= std::abs(g_hi) ? lo : hi;
        return s.t0 + sgn * tau;
    }

    const Rhs& f_;
    OdeTolerances tol_;
};

Trajectory integrate(const Rhs& f, const Vec& x0, double t0, double t1, const OdeTolerances& tol) {
    return Stepper(f, tol).run(x0, t0, t1, nullptr, nullptr);
}

EventResult detect_event(const Rhs& f, const Vec& x0, const EventFn& e, double t_max, Direction dir,
                         const OdeTolerances& tol) {
    const double t1 = dir == Direction::forward ? t_max : -t_max;
    std::optional<double> hit;
    EventResult r;
    r.trajectory = Stepper(f, tol).run(x0, 0.0, t1, &e, &hit);
    if (hit) {
        r.found = true;
        r.t = *hit;
        r.x = r.trajectory.interpolate(*hit);
        return r;
    }
    if (r.trajectory.status() == Status::step_failure) {
        throw IntegrationError("integration failed before event: " + r.trajectory.message());
    }
    r.x = r.trajectory.final_state();
    return r;
}

Vec VariationalResult::state(double t) const { return augmented_.interpolate(t).head(n_); }

Mat VariationalResult::phi(double t) const {
    const Vec y = augmented_.interpolate(t);
    return Eigen::Map<const Mat>(y.data() + n_, n_, n_);
}

Vec VariationalResult::final_state() const { return augmented_.final_state().head(n_); }

Mat VariationalResult::final_phi() const {
    const Vec y = augmented_.final_state();
    return Eigen::Map<const Mat>(y.data() + n_, n_, n_);
}

VariationalResult integrate_variational(const Rhs& f, const JacobianFn& jacobian, const Vec& x0, double t0,
                                        double t1, const OdeTolerances& tol) {
    const auto n = x0.size();
    Vec y0(n + n * n);
    y0.head(n) = x0;
    Eigen::Map<Mat>(y0.data() + n, n, n).setIdentity();
    Rhs augmented = [&](const Vec& y) {
        Vec dy(y.size());
        const Vec x = y.head(n);
        dy.head(n) = f(x);
        Eigen::Map<Mat>(dy.data() + n, n, n) = jacobian(x) * Eigen::Map<const Mat>(y.data() + n, n, n);
        return dy;
    };
    Trajectory traj = integrate(augmented, y0, t0, t1, tol);
    if (traj.status() == Status::step_failure) {
        throw IntegrationError("variational integration failed: " + traj.message());
    }
    return VariationalResult(std::move(traj), static_cast<int>(n));
}

}  // namespace clbf::ode
