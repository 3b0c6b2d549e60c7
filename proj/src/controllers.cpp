#include "clbf/controllers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "clbf/stats.hpp"

namespace clbf {

std::string_view outcome_name(SimulationOutcome o) {
    switch (o) {
        case SimulationOutcome::completed: return "completed";
        case SimulationOutcome::infeasible: return "infeasible";
        case SimulationOutcome::integration_failed: return "integration_failed";
    }
    return "?";
}

Vec sontag(const SystemSpec& spec, const Vec& x) {
    const LieRows r = lie_rows(spec, x);
    const double na2 = r.a.squaredNorm();
    if (na2 == 0.0) return Vec::Zero(spec.m);
    const double s = std::sqrt(r.a0 * r.a0 + na2 * na2);
    // (a0 + s)/|a|² rewritten without cancellation when a0 < 0
    const double k = r.a0 >= 0.0 ? (r.a0 + s) / na2 : na2 / (s - r.a0);
    return -k * r.a;
}

namespace {

struct HalfSpace {
    Vec row;     // row·u ≤ rhs
    double rhs;
};

bool satisfies(const HalfSpace& c, const Vec& u) {
    return c.row.dot(u) <= c.rhs + 1e-12 * (1.0 + std::abs(c.rhs) + c.row.norm() * u.norm());
}

}  // namespace

std::optional<Vec> min_norm_qp(const LieRows& r, double clf_bound, std::optional<double> cbf_bound) {
    const Eigen::Index m = r.a.size();
    std::vector<HalfSpace> cons;
    cons.push_back({r.a, clf_bound - r.a0});
    if (cbf_bound) cons.push_back({-r.b, r.b0 - *cbf_bound});

    struct Candidate {
        Vec u;
        int active;
    };
    std::vector<Candidate> cands{{Vec::Zero(m), 0}};
    for (const HalfSpace& c : cons) {
        const double n2 = c.row.squaredNorm();
        if (n2 > 0.0) cands.push_back({(c.rhs / n2) * c.row, 1});
    }
    if (cons.size() == 2) {
        const Vec& g1 = cons[0].row;
        const Vec& g2 = cons[1].row;
        Eigen::Matrix2d gram;
        gram << g1.squaredNorm(), g1.dot(g2), g1.dot(g2), g2.squaredNorm();
        const double det = gram.determinant();
        if (std::abs(det) > 1e-12 * gram(0, 0) * gram(1, 1) && det != 0.0) {
            const Eigen::Vector2d lam = gram.inverse() * Eigen::Vector2d(cons[0].rhs, cons[1].rhs);
            cands.push_back({lam[0] * g1 + lam[1] * g2, 2});
        }
    }
    const Candidate* best = nullptr;
    for (const Candidate& c : cands) {
        if (!std::all_of(cons.begin(), cons.end(), [&](const HalfSpace& h) { return satisfies(h, c.u); })) continue;
        if (!best) {
            best = &c;
            continue;
        }
        const double nc = c.u.squaredNorm(), nb = best->u.squaredNorm();
        if (nc < nb - 1e-12 * std::max(1.0, nb)) best = &c;  // ties keep the one with fewer active constraints
    }
    if (!best) return std::nullopt;
    return best->u;
}

Vec min_norm_qp(const SystemSpec& spec, const Vec& x, const ControllerParams& params) {
    const LieRows r = lie_rows(spec, x);
    std::optional<double> cbf;
    if (spec.h.eval(x) <= params.band) cbf = params.kappa;
    if (auto u = min_norm_qp(r, -params.c_v * spec.V.eval(x), cbf)) return *u;
    std::ostringstream os;
    os << "min_norm_qp infeasible at x = (" << x.transpose() << ")";
    throw ControllerInfeasible(os.str(), check_point(spec, x, ConstraintMode::boundary, 1.0, 1e-8));
}

double blend_weight(double s, double r0, double r1) {
    auto e = [](double tau) { return tau > 0.0 ? std::exp(-1.0 / tau) : 0.0; };
    const double tau = (r1 - s) / (r1 - r0);
    const double num = e(tau);
    return num / (num + e(1.0 - tau));
}

Vec blended(const SystemSpec& spec, const Vec& x, const ControllerParams& params, const Mat& K) {
    const double w = blend_weight(spec.radius(x), params.r0, params.r1);
    if (w == 1.0) return K * x;
    const Vec outer = min_norm_qp(spec, x, params);
    if (w == 0.0) return outer;
    return w * (K * x) + (1.0 - w) * outer;
}

FeedbackLaw make_controller(const SystemSpec& spec, ControllerKind kind, const ControllerParams& params) {
    if (spec.external() || kind == ControllerKind::external) {
        throw ConfigError("controller: an external closed loop has no feedback law to synthesize");
    }
    auto shared = std::make_shared<const SystemSpec>(spec);
    switch (kind) {
        case ControllerKind::sontag: return [shared](const Vec& x) { return sontag(*shared, x); };
        case ControllerKind::min_norm_qp:
            return [shared, params](const Vec& x) { return min_norm_qp(*shared, x, params); };
        case ControllerKind::blended: {
            if (!spec.gain_K) throw ConfigError("gain_K: required by the blended controller");
            if (!(0.0 < params.r0 && params.r0 < params.r1)) {
                throw ConfigError("controller_params: blended needs 0 < r0 < r1");
            }
            for (const Vec& d : sphere_directions(spec.n, 64)) {
                if (!(spec.h.eval(point_on_ray(spec.chart, d, params.r1)) > 0.0)) {
                    throw ConfigError("controller_params: ball of radius r1 is not inside the safe set");
                }
            }
            const Mat K = *spec.gain_K;
            return [shared, params, K](const Vec& x) { return blended(*shared, x, params, K); };
        }
        case ControllerKind::external: break;
    }
    throw ConfigError("controller: unsupported kind");
}

VectorField closed_loop_field(const SystemSpec& spec, ControllerKind kind, const ControllerParams& params) {
    if (spec.external()) return expression_field(spec.closed_loop);
    FeedbackLaw law = make_controller(spec, kind, params);
    auto shared = std::make_shared<const SystemSpec>(spec);
    VectorField field;
    field.dim = spec.n;
    field.eval = [shared, law](const Vec& x) { return eval_dynamics(*shared, x, law(x)); };
    return field;
}

VectorField closed_loop_field(const SystemSpec& spec) {
    return closed_loop_field(spec, spec.controller, spec.controller_params);
}

SimulationResult simulate_closed_loop(const SystemSpec& spec, ControllerKind kind, const ControllerParams& params,
                                      const Vec& x0, double t_end) {
    const VectorField field = closed_loop_field(spec, kind, params);
    ode::OdeTolerances tol;
    tol.rtol = spec.tol.rtol;
    tol.atol = spec.tol.atol;
    SimulationResult sim;
    sim.trajectory = ode::integrate(field.eval, x0, 0.0, t_end, tol);
    if (sim.trajectory.status() == ode::Status::step_failure) {
        sim.outcome = SimulationOutcome::integration_failed;
        sim.message = sim.trajectory.message();
        if (auto err = sim.trajectory.error()) {
            try {
                std::rethrow_exception(err);
            } catch (const ControllerInfeasible& e) {
                sim.outcome = SimulationOutcome::infeasible;
                sim.message = e.what();
            } catch (const std::exception&) {
            }
        }
    }

    const double V0 = spec.V.eval(x0);
    sim.min_h = spec.h.eval(x0);
    sim.max_V_increase = 0.0;
    std::vector<std::pair<double, double>> decay;
    auto monitor = [&](double t, const Vec& x) {
        sim.min_h = std::min(sim.min_h, spec.h.eval(x));
        sim.max_V_increase = std::max(sim.max_V_increase, spec.V.eval(x) - V0);
        const double r = spec.radius(x);
        if (r > 1e-12) decay.emplace_back(t, std::log(r));
    };
    monitor(0.0, x0);
    for (const auto& seg : sim.trajectory.segments()) {
        for (int k = 1; k <= 4; ++k) {
            const double t = seg.t0 + (seg.t1 - seg.t0) * k / 4.0;
            if (!sim.trajectory.covers(t)) break;
            monitor(t, seg.eval(t));
        }
    }
    sim.final_norm = spec.radius(sim.trajectory.final_state());
    if (decay.size() >= 2) {
        std::vector<double> ts, ys;
        for (const auto& [t, y] : decay) {
            ts.push_back(t);
            ys.push_back(y);
        }
        try {
            sim.decay_rate = least_squares_slope(ts, ys);
        } catch (const std::invalid_argument&) {
        }
    }
    return sim;
}

void write_simulation_csv(std::ostream& out, const SystemSpec& spec, ControllerKind kind,
                          const ControllerParams& params, const SimulationResult& sim, int samples) {
    const bool has_u = !spec.external();
    FeedbackLaw law;
    if (has_u) law = make_controller(spec, kind, params);
    out << "t";
    for (int i = 0; i < spec.n; ++i) out << ",x" << (i + 1);
    if (has_u) {
        for (int j = 0; j < spec.m; ++j) out << ",u" << (j + 1);
    }
    out << ",V,h\n";
    const auto& traj = sim.trajectory;
    samples = std::max(samples, 2);
    for (int k = 0; k < samples; ++k) {
        const double t = k + 1 == samples ? traj.t_end()
                                          : traj.t_start() + (traj.t_end() - traj.t_start()) * k / (samples - 1);
        const Vec x = traj.interpolate(t);
        out << expr::format_double(t);
        for (int i = 0; i < spec.n; ++i) out << "," << expr::format_double(x[i]);
        if (has_u) {
            Vec u;
            try {
                u = law(x);
            } catch (const FieldError&) {
                u = Vec::Constant(spec.m, std::numeric_limits<double>::quiet_NaN());
            }
            for (int j = 0; j < spec.m; ++j) out << "," << expr::format_double(u[j]);
        }
        out << "," << expr::format_double(spec.V.eval(x)) << "," << expr::format_double(spec.h.eval(x)) << "\n";
    }
}

}  // namespace clbf
