#include "clbf/builder.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "clbf/compat.hpp"
#include "clbf/errors.hpp"

namespace clbf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

ClbfStatus from_hit(HitStatus s) {
    switch (s) {
        case HitStatus::ok: return ClbfStatus::ok;
        case HitStatus::no_crossing: return ClbfStatus::no_crossing;
        case HitStatus::origin_too_close: return ClbfStatus::origin_too_close;
        case HitStatus::integration_failed: return ClbfStatus::integration_failed;
    }
    return ClbfStatus::integration_failed;
}

double omega_at(const SystemSpec& spec, const VectorField& field, const Vec& x) {
    return -spec.V.grad(x).dot(field(x));
}

// First sample on the path where ω ≤ 0, if any.
std::optional<Vec> domain_violation(const SystemSpec& spec, const VectorField& field, const ode::Trajectory& path) {
    for (const auto& seg : path.segments()) {
        for (int k = 0; k <= 8; ++k) {
            const Vec y = seg.eval(seg.t0 + (seg.t1 - seg.t0) * k / 8.0);
            if (spec.radius(y) == 0.0) continue;
            if (!(omega_at(spec, field, y) > 0.0)) return y;
        }
    }
    return std::nullopt;
}

}  // namespace

std::string_view region_name(Region r) {
    switch (r) {
        case Region::inside: return "inside";
        case Region::boundary: return "boundary";
        case Region::outside: return "outside";
    }
    return "?";
}

std::string_view clbf_status_name(ClbfStatus s) {
    switch (s) {
        case ClbfStatus::ok: return "ok";
        case ClbfStatus::origin_too_close: return "origin_too_close";
        case ClbfStatus::no_crossing: return "no_crossing";
        case ClbfStatus::integration_failed: return "integration_failed";
        case ClbfStatus::denominator_guard: return "denominator_guard";
        case ClbfStatus::outside_domain: return "outside_domain";
    }
    return "?";
}

ClbfOptions clbf_options(const SystemSpec& spec) {
    ClbfOptions o;
    o.hitting = hitting_options(spec);
    try {
        double vmax = 0.0;
        for (const Vec& p : sample_boundary(spec, 64)) vmax = std::max(vmax, spec.V.eval(p));
        if (vmax > 0.0) o.d_min = 1e-9 * vmax;
    } catch (const std::exception&) {
        // keep the default guard
    }
    return o;
}

ClbfEvaluation clbf_value(const SystemSpec& spec, const VectorField& field, const Vec& x, const ClbfOptions& options) {
    ClbfEvaluation e;
    e.x = x;
    e.x_hit = x;
    const double hx = spec.h.eval(x);
    e.region = std::abs(hx) <= boundary_tolerance(spec.h, x) ? Region::boundary
               : hx > 0.0                                    ? Region::inside
                                                             : Region::outside;
    if (spec.radius(x) == 0.0) {
        e.W = 0.0;  // ω₁(0) = 0 as well
        return e;
    }
    try {
        HittingOptions ho = options.hitting;
        ho.keep_path = options.domain_check;
        const HittingResult hit = hitting_time(field, spec.h, x, ho);
        e.status = from_hit(hit.status);
        e.message = hit.message;
        if (e.status != ClbfStatus::ok) {
            e.W = e.omega = e.omega1 = kNaN;
            return e;
        }
        e.T = hit.T;
        e.x_hit = hit.x_hit;
        e.denominator = spec.V.eval(hit.x_hit);
        if (!(e.denominator >= options.d_min)) {
            e.status = ClbfStatus::denominator_guard;
            std::ostringstream os;
            os << "V(x_hit) = " << e.denominator << " below d_min = " << options.d_min;
            e.message = os.str();
            e.W = e.omega = e.omega1 = kNaN;
            return e;
        }
        e.omega = omega_at(spec, field, x);
        e.omega1 = e.omega / e.denominator;
        e.W = spec.V.eval(x) / e.denominator;
        if (options.domain_check) {
            std::optional<Vec> bad;
            if (!(e.omega > 0.0)) {
                bad = x;
            } else if (hit.path) {
                bad = domain_violation(spec, field, *hit.path);
            }
            if (bad) {
                e.status = ClbfStatus::outside_domain;
                std::ostringstream os;
                os << "omega <= 0 at (" << bad->transpose() << ")";
                e.message = os.str();
            }
        }
    } catch (const FieldError& err) {
        e.status = ClbfStatus::integration_failed;
        e.message = err.what();
        e.W = e.omega = e.omega1 = kNaN;
    }
    return e;
}

std::size_t GridSpec::size() const {
    std::size_t total = 1;
    for (int c : counts) total *= static_cast<std::size_t>(c);
    return total;
}

Vec GridSpec::point(std::size_t index) const {
    const auto n = static_cast<Eigen::Index>(counts.size());
    Vec x(n);
    for (Eigen::Index i = n - 1; i >= 0; --i) {
        const auto c = static_cast<std::size_t>(counts[i]);
        const std::size_t k = index % c;
        index /= c;
        x[i] = c == 1 ? lo[i] : lo[i] + (hi[i] - lo[i]) * static_cast<double>(k) / static_cast<double>(c - 1);
    }
    return x;
}

GridSpec parse_grid(std::string_view text, int dim) {
    GridSpec g;
    g.lo.resize(dim);
    g.hi.resize(dim);
    auto fail = [&] { return ConfigError("grid: expected lo:hi:n per axis, got `" + std::string(text) + "`"); };
    std::size_t pos = 0;
    for (int i = 0; i < dim; ++i) {
        const std::size_t end = i + 1 == dim ? text.size() : text.find(',', pos);
        if (end == std::string_view::npos) throw fail();
        const std::string_view axis = text.substr(pos, end - pos);
        const std::size_t c1 = axis.find(':');
        const std::size_t c2 = c1 == std::string_view::npos ? c1 : axis.find(':', c1 + 1);
        if (c2 == std::string_view::npos) throw fail();
        const auto number = [&](std::string_view s, auto& out) {
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
            if (ec != std::errc() || p != s.data() + s.size()) throw fail();
        };
        int count = 0;
        number(axis.substr(0, c1), g.lo[i]);
        number(axis.substr(c1 + 1, c2 - c1 - 1), g.hi[i]);
        number(axis.substr(c2 + 1), count);
        if (count < 1 || !(g.lo[i] <= g.hi[i])) throw fail();
        g.counts.push_back(count);
        pos = end + 1;
    }
    return g;
}

std::vector<ClbfEvaluation> clbf_grid(const SystemSpec& spec, const VectorField& field, const GridSpec& grid,
                                      const ClbfOptions& options) {
    std::vector<ClbfEvaluation> out;
    out.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) out.push_back(clbf_value(spec, field, grid.point(k), options));
    return out;
}

double pde_residual(const SystemSpec& spec, const VectorField& field, const Vec& x, const ClbfOptions& options,
                    double dt) {
    ClbfOptions o = options;
    o.domain_check = false;
    const ClbfEvaluation c = clbf_value(spec, field, x, o);
    if (!c.has_value()) throw IntegrationError("pde_residual: W unavailable at x: " + c.message);
    if (dt <= 0.0) dt = 1e-4 * (1.0 + std::abs(c.T));
    const auto shifted = [&](double s) {
        const ode::Trajectory tr = ode::integrate(field.eval, x, 0.0, s, o.hitting.ode);
        if (tr.status() != ode::Status::completed) throw IntegrationError("pde_residual: " + tr.message());
        const ClbfEvaluation e = clbf_value(spec, field, tr.final_state(), o);
        if (!e.has_value()) throw IntegrationError("pde_residual: W unavailable on the flow: " + e.message);
        return e.W;
    };
    const auto central = [&](double s) { return (shifted(s) - shifted(-s)) / (2.0 * s); };
    // one Richardson step cancels the dt^2 term, which dominates where the flow is fast
    const double d1 = central(dt);
    const double d2 = central(dt / 2.0);
    return std::abs((4.0 * d2 - d1) / 3.0 + c.omega1);
}

Evaluator clbf_evaluator(const SystemSpec& spec, const VectorField& field, const ClbfOptions& options) {
    ClbfOptions o = options;
    o.domain_check = false;
    return {"W", [spec, field, o](const Vec& x) {
                const ClbfEvaluation e = clbf_value(spec, field, x, o);
                if (!e.has_value()) {
                    throw CertificateError("W(x) unavailable (" + std::string(clbf_status_name(e.status)) +
                                           "): " + e.message);
                }
                return e.W;
            }};
}

Evaluator raw_v_evaluator(const SystemSpec& spec) {
    expr::Expression V = spec.V;
    return {"V", [V](const Vec& x) { return V.eval(x); }};
}

double smooth_rho(double s, double p) {
    if (!(p >= 1.0)) throw std::invalid_argument("smooth_compose: exponent must be >= 1");
    return p == 1.0 ? s : std::pow(s, p);
}

Evaluator smooth_compose(const Evaluator& inner, double p) {
    (void)smooth_rho(1.0, p);
    std::ostringstream name;
    name << inner.name << "^" << expr::format_double(p);
    return {name.str(), [inner, p](const Vec& x) { return smooth_rho(inner(x), p); }};
}

std::vector<double> smooth_compose(const std::vector<double>& values, double p) {
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(smooth_rho(v, p));
    return out;
}

namespace {

// Condition (1) at x; throws if the evaluator fails on the stencil.
bool decreases(const SystemSpec& spec, const VectorField& field, const Evaluator& E, const Vec& x) {
    const double step = 1e-5 * std::max(1.0, x.norm());
    if (spec.external()) {
        // directional difference along F
        const Vec F = field(x);
        const double nf = F.norm();
        if (nf == 0.0) return false;
        const double s = step / nf;
        return (E(x + s * F) - E(x - s * F)) / (2.0 * s) < 0.0;
    }
    Vec grad(spec.n);
    for (int i = 0; i < spec.n; ++i) {
        Vec xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        grad[i] = (E(xp) - E(xm)) / (2.0 * step);
    }
    LieRows rows;
    rows.a0 = grad.dot(drift(spec, x));
    rows.a = input_matrix(spec, x).transpose() * grad;
    rows.b = Vec::Zero(spec.m);
    return strict_feasible(rows, ConstraintMode::interior).feasible;
}

}  // namespace

ClbfReport verify_clbf(const SystemSpec& spec, const VectorField& field, const Evaluator& evaluator,
                       const VerifyOptions& options, const ClbfOptions& clbf) {
    ClbfReport rep;
    rep.evaluator = evaluator.name;
    rep.options = options;
    rep.interior_max_W = -kInf;
    rep.exterior_min_W = kInf;

    const std::vector<Vec> boundary = sample_boundary(spec, options.n_boundary);
    std::vector<Vec> interior, exterior;
    {
        QuasiRandom q(spec.n, options.seed);
        const long budget = 64L * (options.n_interior + options.n_exterior) + 1024;
        for (long k = 0; k < budget; ++k) {
            if (static_cast<int>(interior.size()) >= options.n_interior &&
                static_cast<int>(exterior.size()) >= options.n_exterior) {
                break;
            }
            const Vec u = q.next();
            const Vec y = spec.box.lo + (spec.box.hi - spec.box.lo).cwiseProduct(u);
            if (spec.radius(y) < spec.tol.r_min) continue;
            const double hy = spec.h.eval(y);
            if (hy >= options.h_margin && static_cast<int>(interior.size()) < options.n_interior) {
                interior.push_back(y);
            } else if (hy <= -options.h_margin && static_cast<int>(exterior.size()) < options.n_exterior) {
                exterior.push_back(y);
            }
        }
    }
    rep.n_boundary = static_cast<int>(boundary.size());
    rep.n_interior = static_cast<int>(interior.size());
    rep.n_exterior = static_cast<int>(exterior.size());

    auto counterexample = [&](const Vec& x) {
        if (rep.counterexamples.size() < 16) rep.counterexamples.push_back(x);
    };
    bool level = true, sublevel = true;
    auto visit = [&](const Vec& x, int kind) {
        double w = 0.0;
        try {
            w = evaluator(x);
            if (!decreases(spec, field, evaluator, x)) {
                ++rep.decrease_failures;
                counterexample(x);
            }
        } catch (const std::exception&) {
            ++rep.evaluation_failures;
            counterexample(x);
            return;
        }
        if (kind == 0) {
            rep.boundary_max_dev = std::max(rep.boundary_max_dev, std::abs(w - 1.0));
            if (!(std::abs(w - 1.0) <= options.tol_boundary)) {
                level = false;
                counterexample(x);
            }
        } else if (kind == 1) {
            rep.interior_max_W = std::max(rep.interior_max_W, w);
            if (!(w < 1.0 - options.tol_sep)) {
                sublevel = false;
                counterexample(x);
            }
        } else {
            rep.exterior_min_W = std::min(rep.exterior_min_W, w);
            if (!(w > 1.0 + options.tol_sep)) {
                sublevel = false;
                counterexample(x);
            }
        }
    };
    for (const Vec& x : boundary) visit(x, 0);
    for (const Vec& x : interior) visit(x, 1);
    for (const Vec& x : exterior) visit(x, 2);

    if (options.n_pde > 0 && evaluator.name == "W") {
        double worst = 0.0;
        int done = 0;
        for (const auto* set : {&interior, &exterior}) {
            for (const Vec& x : *set) {
                if (done >= options.n_pde) break;
                try {
                    worst = std::max(worst, pde_residual(spec, field, x, clbf));
                } catch (const std::exception&) {
                    ++rep.evaluation_failures;
                    counterexample(x);
                }
                ++done;
            }
        }
        rep.max_pde_residual = worst;
    }

    rep.level_ok = level && rep.evaluation_failures == 0;
    rep.sublevel_ok = sublevel && rep.evaluation_failures == 0;
    rep.decrease_ok = rep.decrease_failures == 0 && rep.evaluation_failures == 0;
    rep.pass = rep.level_ok && rep.sublevel_ok && rep.decrease_ok;
    return rep;
}

nlohmann::json to_json(const ClbfReport& r) {
    using nlohmann::json;
    auto finite = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json cex = json::array();
    for (const Vec& x : r.counterexamples) cex.push_back(std::vector<double>(x.data(), x.data() + x.size()));
    return {
        {"evaluator", r.evaluator},
        {"samples", {{"boundary", r.n_boundary}, {"interior", r.n_interior}, {"exterior", r.n_exterior}}},
        {"boundary_max_abs_W_minus_1", r.boundary_max_dev},
        {"interior_max_W", finite(r.interior_max_W)},
        {"exterior_min_W", finite(r.exterior_min_W)},
        {"max_pde_residual", r.max_pde_residual ? json(*r.max_pde_residual) : json(nullptr)},
        {"decrease_failures", r.decrease_failures},
        {"evaluation_failures", r.evaluation_failures},
        {"conditions", {{"decrease", r.decrease_ok}, {"sublevel", r.sublevel_ok}, {"level", r.level_ok}}},
        {"pass", r.pass},
        {"tolerances",
         {{"tol_boundary", r.options.tol_boundary}, {"tol_sep", r.options.tol_sep}, {"h_margin", r.options.h_margin}}},
        {"seed", r.options.seed},
        {"counterexamples", cex},
    };
}

ConverseIntegral converse_integral(const SystemSpec& spec, const VectorField& field, const Vec& x, double t_end,
                                   const ClbfOptions& options) {
    ClbfOptions o = options;
    o.domain_check = false;
    const ClbfEvaluation c = clbf_value(spec, field, x, o);
    if (!c.has_value()) throw IntegrationError("converse_integral: W unavailable at x: " + c.message);
    if (spec.radius(x) == 0.0) return {};
    const ode::Trajectory tr = ode::integrate(field.eval, x, 0.0, t_end, o.hitting.ode);
    if (tr.status() != ode::Status::completed) throw IntegrationError("converse_integral: " + tr.message());
    double sum = 0.0;
    for (const auto& seg : tr.segments()) {
        sum += boost::math::quadrature::gauss<double, 10>::integrate(
            [&](double t) { return omega_at(spec, field, seg.eval(t)); }, seg.t0, seg.t1);
    }
    return {sum / c.denominator, spec.V.eval(tr.final_state()) / c.denominator};
}

void write_grid_csv(std::ostream& out, const SystemSpec& spec, const std::vector<ClbfEvaluation>& rows) {
    using expr::format_double;
    for (int i = 0; i < spec.n; ++i) out << "x" << (i + 1) << ",";
    out << "h,V,W,omega1,region,status\n";
    for (const ClbfEvaluation& e : rows) {
        for (int i = 0; i < spec.n; ++i) out << format_double(e.x[i]) << ",";
        out << format_double(spec.h.eval(e.x)) << "," << format_double(spec.V.eval(e.x)) << ","
            << (e.has_value() ? format_double(e.W) : "nan") << ","
            << (e.has_value() ? format_double(e.omega1) : "nan") << "," << region_name(e.region) << ","
            << clbf_status_name(e.status) << "\n";
    }
}

}  // namespace clbf
