#include "clbf/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "clbf/compat.hpp"
#include "clbf/errors.hpp"

namespace clbf {

using nlohmann::json;

ControllerKind parse_controller_kind(std::string_view name) {
    if (name == "sontag") return ControllerKind::sontag;
    if (name == "min_norm_qp") return ControllerKind::min_norm_qp;
    if (name == "blended") return ControllerKind::blended;
    if (name == "external") return ControllerKind::external;
    throw ConfigError("controller: unknown kind `" + std::string(name) + "`");
}

std::string_view controller_name(ControllerKind kind) {
    switch (kind) {
        case ControllerKind::sontag: return "sontag";
        case ControllerKind::min_norm_qp: return "min_norm_qp";
        case ControllerKind::blended: return "blended";
        case ControllerKind::external: return "external";
    }
    return "?";
}

std::string_view jacobian_source_name(JacobianSource s) {
    return s == JacobianSource::automatic_differentiation ? "automatic_differentiation" : "finite_difference";
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key `" + key + "`");
    }
}

expr::Expression parse_field(const json& node, const std::string& field, const std::vector<std::string>& vars) {
    if (!node.is_string()) throw ConfigError(field + ": expected an expression string");
    try {
        return expr::Expression::parse(node.get<std::string>(), vars);
    } catch (const ParseError& e) {
        throw ConfigError(field + ": " + e.what());
    }
}

double number_at(const json& node, const std::string& field) {
    if (!node.is_number()) throw ConfigError(field + ": expected a number");
    return node.get<double>();
}

std::string indexed(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

double checked_eval(const expr::Expression& e, const Vec& x, const std::string& field) {
    try {
        return e.eval(x);
    } catch (const DomainError& err) {
        std::ostringstream os;
        os << field << ": evaluation failed at x = (" << x.transpose() << "): " << err.what();
        throw ConfigError(os.str());
    }
}

}  // namespace

SystemSpec load_system(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: expected an object");
    reject_unknown_keys(doc,
                        {"state_dim", "input_dim", "state_names", "chart", "f", "g", "closed_loop", "V", "h",
                         "controller", "controller_params", "domain_box", "tolerances", "gain_K"},
                        "config");
    SystemSpec spec;
    if (!doc.contains("state_dim")) throw ConfigError("state_dim: missing");
    if (!doc["state_dim"].is_number_integer()) throw ConfigError("state_dim: expected an integer");
    spec.n = doc["state_dim"].get<int>();
    if (spec.n < 1 || spec.n > static_cast<int>(expr::kMaxVariables)) {
        throw ConfigError("state_dim: must be between 1 and " + std::to_string(expr::kMaxVariables));
    }
    spec.m = doc.value("input_dim", 0);
    if (spec.m < 0) throw ConfigError("input_dim: must be non-negative");

    if (doc.contains("state_names")) {
        spec.state_names = doc["state_names"].get<std::vector<std::string>>();
        if (static_cast<int>(spec.state_names.size()) != spec.n) {
            throw ConfigError("state_names: expected " + std::to_string(spec.n) + " names");
        }
    } else {
        for (int i = 0; i < spec.n; ++i) spec.state_names.push_back("x" + std::to_string(i + 1));
    }
    if (doc.contains("chart")) {
        try {
            spec.chart = parse_chart(doc["chart"].get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("chart: ") + e.what());
        }
        if (spec.chart == Chart::polar && spec.n != 2) throw ConfigError("chart: polar requires state_dim 2");
    }
    const auto& vars = spec.state_names;
    try {
        // Validates names (identifier grammar, duplicates) once.
        (void)expr::Expression::parse("0", vars);
    } catch (const ParseError& e) {
        throw ConfigError(std::string("state_names: ") + e.what());
    }

    const bool has_fg = doc.contains("f") || doc.contains("g");
    const bool has_cl = doc.contains("closed_loop");
    if (has_fg == has_cl) throw ConfigError("config: supply exactly one of {f, g} or closed_loop");
    if (has_fg) {
        if (!doc.contains("f") || !doc.contains("g")) throw ConfigError("config: f and g must be supplied together");
        if (spec.m < 1) throw ConfigError("input_dim: must be positive when f, g are supplied");
        const json& f = doc["f"];
        if (!f.is_array() || static_cast<int>(f.size()) != spec.n) {
            throw ConfigError("f: expected " + std::to_string(spec.n) + " expressions");
        }
        for (std::size_t i = 0; i < f.size(); ++i) spec.f.push_back(parse_field(f[i], indexed("f", i), vars));
        const json& g = doc["g"];
        if (!g.is_array() || static_cast<int>(g.size()) != spec.n) {
            throw ConfigError("g: expected " + std::to_string(spec.n) + " rows");
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!g[i].is_array() || static_cast<int>(g[i].size()) != spec.m) {
                throw ConfigError(indexed("g", i) + ": expected " + std::to_string(spec.m) + " entries");
            }
            std::vector<expr::Expression> row;
            for (std::size_t j = 0; j < g[i].size(); ++j) {
                row.push_back(parse_field(g[i][j], indexed(indexed("g", i), j), vars));
            }
            spec.g.push_back(std::move(row));
        }
    } else {
        const json& cl = doc["closed_loop"];
        if (!cl.is_array() || static_cast<int>(cl.size()) != spec.n) {
            throw ConfigError("closed_loop: expected " + std::to_string(spec.n) + " expressions");
        }
        for (std::size_t i = 0; i < cl.size(); ++i) {
            spec.closed_loop.push_back(parse_field(cl[i], indexed("closed_loop", i), vars));
        }
    }
    if (!doc.contains("V")) throw ConfigError("V: missing");
    if (!doc.contains("h")) throw ConfigError("h: missing");
    spec.V = parse_field(doc["V"], "V", vars);
    spec.h = parse_field(doc["h"], "h", vars);

    if (doc.contains("controller")) {
        spec.controller = parse_controller_kind(doc["controller"].get<std::string>());
    } else {
        spec.controller = has_cl ? ControllerKind::external : ControllerKind::sontag;
    }
    if (has_cl != (spec.controller == ControllerKind::external)) {
        throw ConfigError("controller: `external` is required exactly when closed_loop is supplied");
    }

    if (!doc.contains("domain_box")) throw ConfigError("domain_box: missing");
    const json& box = doc["domain_box"];
    if (!box.is_array() || static_cast<int>(box.size()) != spec.n) {
        throw ConfigError("domain_box: expected " + std::to_string(spec.n) + " [lo, hi] pairs");
    }
    spec.box.lo.resize(spec.n);
    spec.box.hi.resize(spec.n);
    for (int i = 0; i < spec.n; ++i) {
        const json& pair = box[static_cast<std::size_t>(i)];
        if (!pair.is_array() || pair.size() != 2) throw ConfigError(indexed("domain_box", i) + ": expected [lo, hi]");
        spec.box.lo[i] = number_at(pair[0], indexed("domain_box", i));
        spec.box.hi[i] = number_at(pair[1], indexed("domain_box", i));
        if (!(spec.box.lo[i] <= 0.0 && 0.0 <= spec.box.hi[i] && spec.box.lo[i] < spec.box.hi[i])) {
            throw ConfigError(indexed("domain_box", i) + ": must satisfy lo <= 0 <= hi and lo < hi");
        }
    }

    if (doc.contains("tolerances")) {
        const json& t = doc["tolerances"];
        reject_unknown_keys(t, {"rtol", "atol", "event_tol", "r_min", "t_max"}, "tolerances");
        auto read = [&](const char* key, double& slot) {
            if (t.contains(key)) slot = number_at(t[key], std::string("tolerances.") + key);
            if (!(slot > 0.0)) throw ConfigError(std::string("tolerances.") + key + ": must be positive");
        };
        read("rtol", spec.tol.rtol);
        read("atol", spec.tol.atol);
        read("event_tol", spec.tol.event_tol);
        read("r_min", spec.tol.r_min);
        read("t_max", spec.tol.t_max);
    }

    if (doc.contains("gain_K")) {
        const json& k = doc["gain_K"];
        if (!k.is_array() || static_cast<int>(k.size()) != spec.m * spec.n || spec.m == 0) {
            throw ConfigError("gain_K: expected " + std::to_string(spec.m * spec.n) + " entries (row-major m x n)");
        }
        Mat K(spec.m, spec.n);
        for (int i = 0; i < spec.m; ++i) {
            for (int j = 0; j < spec.n; ++j) {
                K(i, j) = number_at(k[static_cast<std::size_t>(i * spec.n + j)], "gain_K");
            }
        }
        spec.gain_K = K;
    }

    // Standing assumptions at the origin.
    const Vec origin = Vec::Zero(spec.n);
    if (std::abs(checked_eval(spec.V, origin, "V")) > 1e-12) throw ConfigError("V: V(0) must be 0");
    if (!(checked_eval(spec.h, origin, "h") > 0.0)) throw ConfigError("h: origin outside safe set (h(0) <= 0)");
    if (!spec.external()) {
        for (int i = 0; i < spec.n; ++i) {
            if (std::abs(checked_eval(spec.f[i], origin, indexed("f", i))) > 1e-12) {
                throw ConfigError(indexed("f", i) + ": f(0) must be 0");
            }
        }
    } else {
        for (int i = 0; i < spec.n; ++i) {
            try {
                if (std::abs(spec.closed_loop[i].eval(origin)) > 1e-12) {
                    spec.diagnostics.push_back(indexed("closed_loop", i) + " is nonzero at the origin");
                }
            } catch (const DomainError& e) {
                spec.diagnostics.push_back(indexed("closed_loop", i) + " not evaluable at the origin: " + e.what());
            }
        }
    }

    // Positive definiteness of V and the CBF band, by quasi-random sweep.
    double h_max = checked_eval(spec.h, origin, "h");
    for (const Vec& x : box_samples(spec.box, 1024, 0)) {
        if (spec.radius(x) == 0.0) continue;
        const double v = checked_eval(spec.V, x, "V");
        if (!(v > 0.0)) {
            std::ostringstream os;
            os << "V: not positive at sampled x = (" << x.transpose() << "), V = " << v;
            throw ConfigError(os.str());
        }
        h_max = std::max(h_max, checked_eval(spec.h, x, "h"));
    }

    ControllerParams& cp = spec.controller_params;
    cp.band = 0.1 * h_max;
    if (doc.contains("controller_params")) {
        const json& p = doc["controller_params"];
        reject_unknown_keys(p, {"c_v", "kappa", "band", "r0", "r1"}, "controller_params");
        if (p.contains("c_v")) cp.c_v = number_at(p["c_v"], "controller_params.c_v");
        if (p.contains("kappa")) cp.kappa = number_at(p["kappa"], "controller_params.kappa");
        if (p.contains("band")) cp.band = number_at(p["band"], "controller_params.band");
        if (p.contains("r0")) cp.r0 = number_at(p["r0"], "controller_params.r0");
        if (p.contains("r1")) cp.r1 = number_at(p["r1"], "controller_params.r1");
    }
    if (cp.c_v < 0.0 || cp.kappa < 0.0 || !(cp.band > 0.0)) {
        throw ConfigError("controller_params: need c_v >= 0, kappa >= 0, band > 0");
    }
    if (spec.controller == ControllerKind::blended) {
        if (!spec.gain_K) throw ConfigError("gain_K: required by the blended controller");
        if (!(0.0 < cp.r0 && cp.r0 < cp.r1)) throw ConfigError("controller_params: blended needs 0 < r0 < r1");
        for (const Vec& d : sphere_directions(spec.n, 64)) {
            const Vec x = point_on_ray(spec.chart, d, cp.r1);
            if (!(checked_eval(spec.h, x, "h") > 0.0)) {
                throw ConfigError("controller_params: ball of radius r1 is not inside the safe set");
            }
        }
    }
    return spec;
}

SystemSpec load_system_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config `" + path.string() + "`");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config `" + path.string() + "`: " + e.what());
    }
    return load_system(doc);
}

Vec drift(const SystemSpec& spec, const Vec& x) {
    Vec out(spec.n);
    for (int i = 0; i < spec.n; ++i) out[i] = spec.f[i].eval(x);
    return out;
}

Mat input_matrix(const SystemSpec& spec, const Vec& x) {
    Mat out(spec.n, spec.m);
    for (int i = 0; i < spec.n; ++i) {
        for (int j = 0; j < spec.m; ++j) out(i, j) = spec.g[i][j].eval(x);
    }
    return out;
}

Vec eval_dynamics(const SystemSpec& spec, const Vec& x, const Vec& u) {
    if (x.size() != spec.n) throw std::invalid_argument("eval_dynamics: state dimension mismatch");
    if (spec.external()) {
        Vec out(spec.n);
        for (int i = 0; i < spec.n; ++i) out[i] = spec.closed_loop[i].eval(x);
        return out;
    }
    if (u.size() != spec.m) throw std::invalid_argument("eval_dynamics: input dimension mismatch");
    return drift(spec, x) + input_matrix(spec, x) * u;
}

VectorField expression_field(std::vector<expr::Expression> components) {
    auto shared = std::make_shared<const std::vector<expr::Expression>>(std::move(components));
    VectorField field;
    field.dim = static_cast<int>(shared->size());
    field.eval = [shared](const Vec& x) {
        Vec out(static_cast<Eigen::Index>(shared->size()));
        for (std::size_t i = 0; i < shared->size(); ++i) out[static_cast<Eigen::Index>(i)] = (*shared)[i].eval(x);
        return out;
    };
    field.jacobian = [shared](const Vec& x) {
        const auto n = static_cast<Eigen::Index>(shared->size());
        Mat J(n, x.size());
        for (Eigen::Index i = 0; i < n; ++i) J.row(i) = (*shared)[static_cast<std::size_t>(i)].grad(x).transpose();
        return J;
    };
    return field;
}

Mat field_jacobian(const VectorField& field, const Vec& x, JacobianSource* used) {
    if (field.jacobian) {
        if (used) *used = JacobianSource::automatic_differentiation;
        return field.jacobian(x);
    }
    if (used) *used = JacobianSource::finite_difference;
    const double step = 1e-6 * std::max(1.0, x.lpNorm<Eigen::Infinity>());
    Mat J(field.dim, x.size());
    Vec xp = x, xm = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        xp[j] = x[j] + step;
        xm[j] = x[j] - step;
        J.col(j) = (field.eval(xp) - field.eval(xm)) / (2.0 * step);
        xp[j] = xm[j] = x[j];
    }
    return J;
}

std::vector<double> cholesky_pivots(const Mat& a) {
    const Eigen::Index n = a.rows();
    Mat L = Mat::Zero(n, n);
    std::vector<double> pivots;
    for (Eigen::Index k = 0; k < n; ++k) {
        double d = a(k, k) - L.row(k).head(k).squaredNorm();
        pivots.push_back(d);
        if (!(d > 0.0)) break;
        L(k, k) = std::sqrt(d);
        for (Eigen::Index i = k + 1; i < n; ++i) {
            L(i, k) = (a(i, k) - L.row(i).head(k).dot(L.row(k).head(k))) / L(k, k);
        }
    }
    return pivots;
}

Mat hessian_fd(const expr::Expression& e, const Vec& x, double step) {
    const Eigen::Index n = x.size();
    Mat H(n, n);
    auto at = [&](Eigen::Index i, double si, Eigen::Index j, double sj) {
        Vec y = x;
        y[i] += si * step;
        y[j] += sj * step;
        return e.eval(y);
    };
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            H(i, j) = (at(i, 1, j, 1) - at(i, 1, j, -1) - at(i, -1, j, 1) + at(i, -1, j, -1)) / (4.0 * step * step);
        }
    }
    return H;
}

LinearizationReport check_linearization(const SystemSpec& spec, const Mat& K) {
    if (spec.external()) throw std::logic_error("check_linearization: requires f, g mode");
    if (K.rows() != spec.m || K.cols() != spec.n) throw std::invalid_argument("check_linearization: K must be m x n");
    const Vec origin = Vec::Zero(spec.n);
    LinearizationReport r;
    r.A = field_jacobian(expression_field(spec.f), origin);
    r.B = input_matrix(spec, origin);
    r.K = K;
    Mat P;
    try {
        P = hessian_fd(spec.V, origin);
    } catch (const DomainError& e) {
        throw CertificateError(std::string("Hessian of V at the origin: ") + e.what());
    }
    r.hessian_asymmetry = (P - P.transpose()).cwiseAbs().maxCoeff() / std::max(1.0, P.cwiseAbs().maxCoeff());
    r.P = 0.5 * (P + P.transpose());
    const auto p_pivots = cholesky_pivots(r.P);
    // pivots at finite-difference noise level count as zero
    const double floor = 1e-6 * std::max(1.0, r.P.cwiseAbs().maxCoeff());
    if (static_cast<Eigen::Index>(p_pivots.size()) < r.P.rows() || !(p_pivots.back() > floor)) {
        throw CertificateError("V is not locally quadratic-positive: Hessian at the origin is not positive definite");
    }
    const Mat closed = r.A + r.B * K;
    r.M = r.P * closed + closed.transpose() * r.P;
    const auto pivots = cholesky_pivots(-r.M);
    r.min_pivot = *std::min_element(pivots.begin(), pivots.end());
    r.pass = static_cast<Eigen::Index>(pivots.size()) == r.M.rows() && r.min_pivot > 0.0;
    return r;
}

std::vector<SmallControlRow> small_control_probe(const SystemSpec& spec, const std::vector<double>& eps_list,
                                                 const SmallControlOptions& options) {
    if (spec.external()) throw std::logic_error("small_control_probe: requires f, g mode");
    const double delta_max = spec.box.inscribed_radius(spec.chart);
    std::vector<Vec> unit;
    for (const Vec& p : unit_ball_samples(spec.n, options.samples, options.seed)) {
        if (p.norm() > 0.0) unit.push_back(p);
    }
    std::vector<SmallControlRow> out;
    for (double eps : eps_list) {
        auto admits = [&](const Vec& x) {
            LieRows rows;
            try {
                rows = lie_rows(spec, x);
            } catch (const DomainError&) {
                return false;
            }
            if (std::isinf(eps)) return strict_feasible(rows, ConstraintMode::interior).feasible;
            return margin(rows, eps, ConstraintMode::interior).eps > 0.0;
        };
        auto level_ok = [&](int k) {
            const double delta = delta_max * std::ldexp(1.0, -k);
            return std::all_of(unit.begin(), unit.end(), [&](const Vec& p) {
                // the sample ball is open: shrink by a hair so |x| < δ
                return admits(point_on_ray(spec.chart, p.normalized(), p.norm() * delta * (1.0 - 1e-12)));
            });
        };
        SmallControlRow row{eps, 0.0, false};
        int lo = 0, hi = options.levels - 1;
        if (level_ok(hi)) {
            // Bisection for the smallest passing level, assuming that passing is
            // monotone in δ (shrinking the ball removes samples).
            if (level_ok(lo)) {
                hi = lo;
            } else {
                while (hi - lo > 1) {
                    const int mid = (lo + hi) / 2;
                    (level_ok(mid) ? hi : lo) = mid;
                }
            }
            row.delta = delta_max * std::ldexp(1.0, -hi);
            row.pass = true;
        }
        out.push_back(row);
    }
    return out;
}

std::vector<std::string> example_names() { return {"polar", "linear", "double_integrator"}; }

json example_config(std::string_view name) {
    const json tolerances = {{"rtol", 1e-9}, {"atol", 1e-12}, {"event_tol", 1e-12}, {"r_min", 1e-6}, {"t_max", 50.0}};
    if (name == "polar") {
        return {
            {"state_dim", 2},
            {"input_dim", 0},
            {"state_names", {"r", "th"}},
            {"chart", "polar"},
            {"closed_loop", {"-r^3", "r^(-1/2)"}},
            {"V", "4*r^2 + r^5*sin(th)"},
            {"h", "1 - r^2"},
            {"controller", "external"},
            {"domain_box", {{0.0, 1.15}, {-std::numbers::pi, std::numbers::pi}}},  // omega > 0 needs r < 1.166
            // T = (1 - 1/r^2)/2 reaches -5e11 at r = r_min
            {"tolerances", {{"rtol", 1e-9}, {"atol", 1e-12}, {"event_tol", 1e-12}, {"r_min", 1e-6}, {"t_max", 1e12}}},
        };
    }
    if (name == "linear") {
        return {
            {"state_dim", 2},
            {"input_dim", 2},
            {"state_names", {"x1", "x2"}},
            {"chart", "cartesian"},
            {"f", {"0", "0"}},
            {"g", json::array({json::array({"1", "0"}), json::array({"0", "1"})})},
            {"V", "(x1^2 + x2^2)/2"},
            {"h", "1 - x1^2 - x2^2"},
            {"controller", "sontag"},
            {"controller_params", {{"c_v", 0.1}, {"kappa", 1e-3}, {"band", 0.1}, {"r0", 0.2}, {"r1", 0.5}}},
            {"domain_box", {{-3.5, 3.5}, {-3.5, 3.5}}},
            {"tolerances", tolerances},
            {"gain_K", {-1.0, 0.0, 0.0, -1.0}},
        };
    }
    if (name == "double_integrator") {
        return {
            {"state_dim", 2},
            {"input_dim", 1},
            {"state_names", {"x1", "x2"}},
            {"chart", "cartesian"},
            {"f", {"x2", "0"}},
            {"g", {{"0"}, {"1"}}},
            {"V", "x1^2 + x1*x2 + x2^2"},
            {"h", "1 - x1^2 - x2^2"},
            {"controller", "min_norm_qp"},
            {"controller_params", {{"c_v", 0.1}, {"kappa", 1e-3}, {"band", 0.1}}},
            {"domain_box", {{-1.5, 1.5}, {-1.5, 1.5}}},
            {"tolerances", tolerances},
            {"gain_K", {-1.0, -2.0}},
        };
    }
    throw ConfigError("unknown example `" + std::string(name) + "`");
}

}  // namespace clbf
