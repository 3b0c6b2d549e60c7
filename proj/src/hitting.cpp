#include "clbf/hitting.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "clbf/errors.hpp"
#include "clbf/stats.hpp"

namespace clbf {

std::string_view hit_status_name(HitStatus s) {
    switch (s) {
        case HitStatus::ok: return "ok";
        case HitStatus::no_crossing: return "no_crossing";
        case HitStatus::origin_too_close: return "origin_too_close";
        case HitStatus::integration_failed: return "integration_failed";
    }
    return "?";
}

HittingOptions hitting_options(const SystemSpec& spec) {
    HittingOptions o;
    o.ode.rtol = spec.tol.rtol;
    o.ode.atol = spec.tol.atol;
    o.ode.event_tol = spec.tol.event_tol;
    o.t_max = spec.tol.t_max;
    o.r_min = spec.tol.r_min;
    o.chart = spec.chart;
    return o;
}

double boundary_tolerance(const expr::Expression& h, const Vec& x) {
    return 1e-9 * (1.0 + h.grad(x).norm() * x.norm());
}

HittingResult hitting_time(const VectorField& field, const expr::Expression& h, const Vec& x,
                           const HittingOptions& options) {
    HittingResult r;
    r.x = x;
    r.x_hit = x;
    r.jacobian_source = field.jacobian ? JacobianSource::automatic_differentiation : JacobianSource::finite_difference;
    if (chart_radius(options.chart, x) < options.r_min) {
        r.status = HitStatus::origin_too_close;
        r.message = "state inside the r_min ball";
        return r;
    }
    try {
        const double hx = h.eval(x);
        if (std::abs(hx) <= boundary_tolerance(h, x)) {
            r.T = 0.0;
            r.denom = h.grad(x).dot(field(x));
            return r;
        }
        const auto dir = hx < 0.0 ? ode::Direction::forward : ode::Direction::backward;
        ode::EventResult ev = ode::detect_event(
            field.eval, x, [&h](const Vec& y) { return h.eval(y); }, options.t_max, dir, options.ode);
        if (!ev.found) {
            r.status = HitStatus::no_crossing;
            r.message = "no boundary crossing within t_max";
            return r;
        }
        r.T = ev.t;
        r.x_hit = ev.x;
        r.denom = h.grad(r.x_hit).dot(field(r.x_hit));
        if (options.keep_path) r.path = std::make_shared<const ode::Trajectory>(std::move(ev.trajectory));
    } catch (const IntegrationError& e) {
        r.status = HitStatus::integration_failed;
        r.message = e.what();
    } catch (const FieldError& e) {
        r.status = HitStatus::integration_failed;
        r.message = e.what();
    }
    return r;
}

Vec grad_hitting_time(const VectorField& field, const expr::Expression& h, const Vec& x,
                      const HittingOptions& options, HittingResult* result) {
    HittingResult hit = hitting_time(field, h, x, options);
    if (hit.status != HitStatus::ok) {
        throw IntegrationError("hitting time unavailable at x (" + std::string(hit_status_name(hit.status)) +
                               "): " + hit.message);
    }
    Mat phi = Mat::Identity(x.size(), x.size());
    Vec z = x;
    JacobianSource source = JacobianSource::automatic_differentiation;
    if (hit.T != 0.0) {
        const auto jac = [&](const Vec& y) { return field_jacobian(field, y, &source); };
        const ode::VariationalResult var = ode::integrate_variational(field.eval, jac, x, 0.0, hit.T, options.ode);
        phi = var.final_phi();
        z = var.final_state();
    } else {
        (void)field_jacobian(field, x, &source);
    }
    const Vec dh = h.grad(z);
    const Vec F = field(z);
    const double denom = dh.dot(F);
    if (!(denom >= 1e-8 * dh.norm() * F.norm()) || denom <= 0.0) {
        std::ostringstream os;
        os << "tangential crossing: grad h . F = " << denom << " at (" << z.transpose() << ")";
        throw TransversalityError(os.str());
    }
    Vec grad = -(phi.transpose() * dh) / denom;
    if (result) {
        *result = std::move(hit);
        result->grad_T = grad;
        result->jacobian_source = source;
    }
    return grad;
}

Vec grad_T_fd(const VectorField& field, const expr::Expression& h, const Vec& x, const HittingOptions& options,
              double step) {
    if (step <= 0.0) step = 1e-5 * std::max(1.0, x.norm());
    Vec g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        const HittingResult a = hitting_time(field, h, xp, options);
        const HittingResult b = hitting_time(field, h, xm, options);
        if (a.status != HitStatus::ok || b.status != HitStatus::ok) {
            throw IntegrationError("grad_T_fd: hitting time failed on the stencil");
        }
        g[i] = (a.T - b.T) / (2.0 * step);
    }
    return g;
}

GrowthProbe growth_probe(const VectorField& field, const expr::Expression& h, const Vec& direction, double r_start,
                         int k_max, const HittingOptions& options) {
    GrowthProbe p;
    p.direction = direction.normalized();
    std::vector<double> log_r, log_g, log_inv_r;
    for (int k = 0; k <= k_max; ++k) {
        const double r = r_start * std::ldexp(1.0, -k);
        if (r < options.r_min) throw std::invalid_argument("growth_probe: radius below r_min");
        const Vec x = point_on_ray(options.chart, p.direction, r);
        HittingResult hit;
        const Vec g = grad_hitting_time(field, h, x, options, &hit);
        p.radii.push_back(r);
        p.grad_norms.push_back(g.norm());
        p.T_values.push_back(hit.T);
        log_r.push_back(std::log(r));
        log_g.push_back(std::log(g.norm()));
        log_inv_r.push_back(-std::log(r));
    }
    std::vector<double> abs_T;
    for (double t : p.T_values) abs_T.push_back(std::abs(t));
    p.grad_slope = least_squares_slope(log_r, log_g);
    p.T_slope = least_squares_slope(log_inv_r, abs_T);
    return p;
}

int boundary_crossings(const VectorField& field, const expr::Expression& h, const Vec& x,
                       const HittingOptions& options, double escape_radius) {
    const double hx = h.eval(x);
    const double horizon = hx < 0.0 ? options.t_max : -options.t_max;
    const auto escape = [&](const Vec& y) { return escape_radius - chart_radius(options.chart, y); };
    ode::Trajectory traj;
    try {
        traj = ode::detect_event(field.eval, x, escape, options.t_max,
                                 horizon > 0.0 ? ode::Direction::forward : ode::Direction::backward, options.ode)
                   .trajectory;
    } catch (const IntegrationError&) {
        return -1;
    }
    int changes = 0;
    double prev = hx;
    for (const auto& seg : traj.segments()) {
        for (int k = 1; k <= 8; ++k) {
            const double t = seg.t0 + (seg.t1 - seg.t0) * k / 8.0;
            if (!traj.covers(t)) break;
            const double v = h.eval(seg.eval(t));
            if ((v > 0.0) != (prev > 0.0) && v != 0.0) ++changes;
            if (v != 0.0) prev = v;
        }
    }
    return changes;
}

void write_hitting_csv(std::ostream& out, const std::vector<HittingResult>& rows, int n, bool with_gradients) {
    using expr::format_double;
    for (int i = 0; i < n; ++i) out << "x" << (i + 1) << ",";
    out << "T";
    for (int i = 0; i < n; ++i) out << ",xhit" << (i + 1);
    if (with_gradients) {
        for (int i = 0; i < n; ++i) out << ",gradT" << (i + 1);
    }
    out << ",status\n";
    const std::string nan = "nan";
    for (const HittingResult& r : rows) {
        const bool ok = r.status == HitStatus::ok;
        for (int i = 0; i < n; ++i) out << format_double(r.x[i]) << ",";
        out << (ok ? format_double(r.T) : nan);
        for (int i = 0; i < n; ++i) out << "," << (ok ? format_double(r.x_hit[i]) : nan);
        if (with_gradients) {
            for (int i = 0; i < n; ++i) out << "," << (r.grad_T ? format_double((*r.grad_T)[i]) : nan);
        }
        out << "," << hit_status_name(r.status) << "\n";
    }
}

void write_growth_csv(std::ostream& out, const GrowthProbe& probe) {
    using expr::format_double;
    out << "r,grad_norm,T\n";
    for (std::size_t k = 0; k < probe.radii.size(); ++k) {
        out << format_double(probe.radii[k]) << "," << format_double(probe.grad_norms[k]) << ","
            << format_double(probe.T_values[k]) << "\n";
    }
}

}  // namespace clbf
