#include "clbf/compat.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "clbf/errors.hpp"

namespace clbf {

std::string_view mode_name(ConstraintMode mode) {
    return mode == ConstraintMode::interior ? "interior" : "boundary";
}

std::string_view verdict_name(PointVerdict v) {
    switch (v) {
        case PointVerdict::certified: return "certified";
        case PointVerdict::analytic_infeasible: return "analytic_infeasible";
        case PointVerdict::below_strict_margin: return "below_strict_margin";
        case PointVerdict::evaluation_error: return "evaluation_error";
    }
    return "?";
}

LieRows lie_rows(const SystemSpec& spec, const Vec& x) {
    if (spec.external()) throw std::logic_error("lie_rows: undefined for an external closed loop (no input)");
    const Vec f = drift(spec, x);
    const Mat g = input_matrix(spec, x);
    const Vec dV = spec.V.grad(x);
    const Vec dh = spec.h.grad(x);
    return {dV.dot(f), g.transpose() * dV, dh.dot(f), g.transpose() * dh};
}

namespace {

// u with a·u = target, along a.
Vec along(const Vec& a, double target) { return (target / a.squaredNorm()) * a; }

Feasibility interior_rule(const LieRows& r) {
    if (r.a0 < 0.0) return {true, Vec::Zero(r.a.size())};
    if (r.a.squaredNorm() > 0.0) return {true, along(r.a, -r.a0 - 1.0)};
    return {false, std::nullopt};
}

}  // namespace

Feasibility strict_feasible(const LieRows& r, ConstraintMode mode) {
    if (mode == ConstraintMode::interior) return interior_rule(r);
    const Eigen::Index m = r.a.size();
    const double na2 = r.a.squaredNorm();
    const double nb2 = r.b.squaredNorm();
    if (na2 == 0.0) {
        if (!(r.a0 < 0.0)) return {false, std::nullopt};
        if (r.b0 > 0.0) return {true, Vec::Zero(m)};
        if (nb2 > 0.0) return {true, along(r.b, -r.b0 + 1.0)};
        return {false, std::nullopt};
    }
    if (nb2 == 0.0) {
        if (!(r.b0 > 0.0)) return {false, std::nullopt};
        return interior_rule(r);
    }
    const double ab = r.a.dot(r.b);
    const double cross2 = na2 * nb2 - ab * ab;
    if (cross2 <= 1e-12 * na2 * nb2) {
        // b = λa
        const double lambda = ab / na2;
        if (lambda > 0.0) {
            // −b0/λ < a·u < −a0
            if (!(r.b0 > lambda * r.a0)) return {false, std::nullopt};
            return {true, along(r.a, 0.5 * (-r.a0 - r.b0 / lambda))};
        }
        // both constraints bound a·u from above
        return {true, along(r.a, std::min(-r.a0, -r.b0 / lambda) - 1.0)};
    }
    // Independent rows: hit a·u = −a0 − 1 and b·u = −b0 + 1 exactly.
    Eigen::Matrix2d gram;
    gram << na2, ab, ab, nb2;
    const Eigen::Vector2d coef = gram.ldlt().solve(Eigen::Vector2d(-r.a0 - 1.0, -r.b0 + 1.0));
    return {true, coef[0] * r.a + coef[1] * r.b};
}

Margin margin(const LieRows& r, double bound, ConstraintMode mode) {
    const Eigen::Index m = r.a.size();
    if (mode == ConstraintMode::interior) {
        const double na = r.a.norm();
        if (na == 0.0) return {-r.a0, Vec::Zero(m)};
        return {-r.a0 + bound * na, (-bound / na) * r.a};
    }

    // Orthonormal basis of span{a, b}; the slacks depend on u only through it.
    const double scale = std::max(r.a.norm(), r.b.norm());
    std::vector<Vec> basis;
    for (const Vec* v : {&r.a, &r.b}) {
        Vec w = *v;
        for (const Vec& q : basis) w -= q.dot(w) * q;
        if (w.norm() > 1e-12 * scale && scale > 0.0) basis.push_back(w.normalized());
    }
    const auto k = static_cast<Eigen::Index>(basis.size());
    Mat Q(m, k);
    for (Eigen::Index j = 0; j < k; ++j) Q.col(j) = basis[static_cast<std::size_t>(j)];
    const Vec alpha = Q.transpose() * r.a;
    const Vec beta = Q.transpose() * r.b;
    auto value = [&](const Vec& z) { return std::min(-r.a0 - alpha.dot(z), r.b0 + beta.dot(z)); };

    // Candidate maximizers of the concave min of two affine slacks over the
    // ball: each slack's own maximizer, the equalizing set, and the ball
    // boundary points where both slacks tie.
    std::vector<Vec> cand{Vec::Zero(k)};
    if (k > 0) {
        if (alpha.norm() > 0.0) cand.push_back((-bound / alpha.norm()) * alpha);
        if (beta.norm() > 0.0) cand.push_back((bound / beta.norm()) * beta);
        const Vec c = alpha + beta;
        const double rhs = -r.a0 - r.b0;
        if (c.norm() > 1e-14 * scale) {
            Vec z0 = (rhs / c.squaredNorm()) * c;
            const double n0 = z0.norm();
            if (n0 > bound) {
                cand.push_back(z0 * (bound / n0));
            } else {
                cand.push_back(z0);
                if (k == 2) {
                    const Vec d = Eigen::Vector2d(-c[1], c[0]).normalized();
                    const double t = std::sqrt(std::max(0.0, bound * bound - n0 * n0));
                    cand.push_back(z0 + t * d);
                    cand.push_back(z0 - t * d);
                }
            }
        }
        if (k == 1) {
            cand.push_back(Vec::Constant(1, bound));
            cand.push_back(Vec::Constant(1, -bound));
        }
    }
    const Vec* best = &cand.front();
    double best_eps = value(*best);
    for (const Vec& z : cand) {
        const double v = value(z);
        if (v > best_eps) {
            best_eps = v;
            best = &z;
        }
    }
    Vec u = Q * (*best);
    const double nu = u.norm();
    if (nu > bound) u *= bound / nu;
    return {std::min(-r.a0 - r.a.dot(u), r.b0 + r.b.dot(u)), u};
}

std::vector<Vec> sample_boundary(const SystemSpec& spec, int count) {
    constexpr int kMarch = 512;
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(count));
    for (const Vec& d : sphere_directions(spec.n, count)) {
        double s_max = std::numeric_limits<double>::infinity();
        if (spec.chart == Chart::polar) {
            s_max = spec.box.hi[0];
        } else {
            for (Eigen::Index i = 0; i < d.size(); ++i) {
                if (d[i] > 0.0) s_max = std::min(s_max, spec.box.hi[i] / d[i]);
                if (d[i] < 0.0) s_max = std::min(s_max, spec.box.lo[i] / d[i]);
            }
        }
        auto describe = [&] {
            std::ostringstream os;
            os << "ray direction (" << d.transpose() << ")";
            return os.str();
        };
        if (!spec.box.contains(point_on_ray(spec.chart, d, 0.5 * s_max), 1e-12)) {
            throw SamplingError(describe() + " is not covered by the domain box");
        }
        auto h_at = [&](double s) {
            try {
                return spec.h.eval(point_on_ray(spec.chart, d, s));
            } catch (const DomainError& e) {
                throw SamplingError(describe() + ": " + e.what());
            }
        };
        int k_hit = -1;
        for (int k = 1; k <= kMarch; ++k) {
            if (h_at(s_max * k / kMarch) <= 0.0) {
                k_hit = k;
                break;
            }
        }
        if (k_hit < 0) throw SamplingError(describe() + " exits the domain box with h > 0");
        double lo = s_max * (k_hit - 1) / kMarch, hi = s_max * k_hit / kMarch;
        double s = hi;
        for (int it = 0; it < 200; ++it) {
            if (std::abs(h_at(s)) <= 1e-10) break;
            s = 0.5 * (lo + hi);
            (h_at(s) > 0.0 ? lo : hi) = s;
        }
        if (std::abs(h_at(s)) > 1e-10) throw SamplingError(describe() + ": bisection did not reach |h| <= 1e-10");
        for (int k = k_hit + 1; k <= kMarch; ++k) {
            if (h_at(s_max * k / kMarch) >= 0.0) {
                throw SamplingError(describe() + ": non-monotone crossing (safe set not star-shaped)");
            }
        }
        out.push_back(point_on_ray(spec.chart, d, s));
    }
    return out;
}

PointFeasibility check_point(const SystemSpec& spec, const Vec& x, ConstraintMode mode, double bound,
                             double eps_strict) {
    PointFeasibility p;
    p.x = x;
    p.mode = mode;
    try {
        p.rows = lie_rows(spec, x);
    } catch (const DomainError& e) {
        p.verdict = PointVerdict::evaluation_error;
        p.message = e.what();
        return p;
    }
    const Feasibility f = strict_feasible(p.rows, mode);
    const Margin mg = margin(p.rows, bound, mode);
    p.raw_margin = mg.eps;
    p.witness = f.witness;
    if (!f.feasible) {
        p.verdict = PointVerdict::analytic_infeasible;
    } else if (mg.eps < eps_strict) {
        p.verdict = PointVerdict::below_strict_margin;
    } else {
        p.verdict = PointVerdict::certified;
        p.feasible = true;
        p.margin = mg.eps;
    }
    return p;
}

CompatReport compat_report(const SystemSpec& spec, const CompatOptions& options) {
    if (spec.external()) throw std::logic_error("compat_report: requires f, g mode");
    CompatReport report;
    std::uint64_t block = 0;
    while (static_cast<int>(report.interior.size()) < options.n_interior) {
        for (const Vec& x : box_samples(spec.box, options.n_interior, options.seed + block)) {
            if (static_cast<int>(report.interior.size()) == options.n_interior) break;
            if (spec.radius(x) < spec.tol.r_min) continue;
            report.interior.push_back(
                check_point(spec, x, ConstraintMode::interior, options.bound_U, options.eps_strict));
        }
        ++block;
    }
    for (const Vec& x : sample_boundary(spec, options.n_boundary)) {
        report.boundary.push_back(check_point(spec, x, ConstraintMode::boundary, options.bound_U, options.eps_strict));
    }
    report.pass = true;
    report.worst_interior_margin = std::numeric_limits<double>::infinity();
    report.worst_boundary_margin = std::numeric_limits<double>::infinity();
    auto account = [&](const PointFeasibility& p, double& worst) {
        worst = std::min(worst, p.verdict == PointVerdict::evaluation_error ? -std::numeric_limits<double>::infinity()
                                                                           : p.raw_margin);
        if (!p.feasible) {
            report.pass = false;
            report.counterexamples.push_back(p.x);
        }
    };
    for (const auto& p : report.boundary) account(p, report.worst_boundary_margin);
    for (const auto& p : report.interior) account(p, report.worst_interior_margin);
    report.worst_interior_margin += 0.0;
    report.worst_boundary_margin += 0.0;
    return report;
}

namespace {

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json point_json(const PointFeasibility& p) {
    nlohmann::json j = {
        {"x", vec_json(p.x)},
        {"mode", mode_name(p.mode)},
        {"feasible", p.feasible},
        {"verdict", verdict_name(p.verdict)},
        {"margin", p.margin},
        {"raw_margin", p.raw_margin},
        {"witness", p.witness ? vec_json(*p.witness) : nlohmann::json(nullptr)},
    };
    if (!p.message.empty()) j["message"] = p.message;
    return j;
}

}  // namespace

nlohmann::json to_json(const CompatReport& report) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : report.interior) points.push_back(point_json(p));
    for (const auto& p : report.boundary) points.push_back(point_json(p));
    nlohmann::json counter = nlohmann::json::array();
    for (const Vec& x : report.counterexamples) counter.push_back(vec_json(x));
    auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {
        {"summary",
         {{"pass", report.pass},
          {"n_interior", report.interior.size()},
          {"n_boundary", report.boundary.size()},
          {"worst_interior_margin", finite_or_null(report.worst_interior_margin)},
          {"worst_boundary_margin", finite_or_null(report.worst_boundary_margin)},
          {"counterexamples", counter}}},
        {"points", points},
    };
}

}  // namespace clbf
