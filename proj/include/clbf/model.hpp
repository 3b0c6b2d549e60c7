#pragma once

// Control-affine system model  ẋ = f(x) + g(x)u  (or an autonomous closed
// loop ẋ = F(x)), its certificate candidates V and h, and the checks on the
// standing local assumptions.

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clbf/expr.hpp"
#include "clbf/sampling.hpp"

namespace clbf {

enum class ControllerKind { sontag, min_norm_qp, blended, external };

ControllerKind parse_controller_kind(std::string_view name);
std::string_view controller_name(ControllerKind kind);

struct Tolerances {
    double rtol = 1e-9;
    double atol = 1e-12;
    double event_tol = 1e-12;
    double r_min = 1e-6;
    double t_max = 50.0;
};

struct ControllerParams {
    double c_v = 0.1;      ///< CLF rate: a0 + a·u ≤ −c_v V(x)
    double kappa = 1e-3;   ///< CBF slack: b0 + b·u ≥ κ inside the band
    double band = 0.0;     ///< CBF constraint active where h(x) ≤ band
    double r0 = 0.0;       ///< blend: pure local gain for |x| ≤ r0
    double r1 = 0.0;       ///< blend: pure outer law for |x| ≥ r1
};

struct SystemSpec {
    int n = 0;
    int m = 0;
    std::vector<std::string> state_names;
    Chart chart = Chart::cartesian;
    std::vector<expr::Expression> f;
    std::vector<std::vector<expr::Expression>> g;  // n rows of m entries
    std::vector<expr::Expression> closed_loop;
    expr::Expression V;
    expr::Expression h;
    ControllerKind controller = ControllerKind::sontag;
    ControllerParams controller_params;
    Box box;
    Tolerances tol;
    std::optional<Mat> gain_K;  // m × n
    std::vector<std::string> diagnostics;

    bool external() const noexcept { return !closed_loop.empty(); }
    double radius(const Vec& x) const { return chart_radius(chart, x); }
};

/// Parses and validates a config document. Throws ConfigError naming the field.
SystemSpec load_system(const nlohmann::json& doc);
SystemSpec load_system_file(const std::filesystem::path& path);

Vec drift(const SystemSpec& spec, const Vec& x);
Mat input_matrix(const SystemSpec& spec, const Vec& x);

/// f(x) + g(x)u, or F(x) for an external closed loop (u ignored).
Vec eval_dynamics(const SystemSpec& spec, const Vec& x, const Vec& u);

enum class JacobianSource { automatic_differentiation, finite_difference };
std::string_view jacobian_source_name(JacobianSource s);

/// Autonomous vector field with an optional exact Jacobian.
struct VectorField {
    int dim = 0;
    std::function<Vec(const Vec&)> eval;
    std::function<Mat(const Vec&)> jacobian;  // empty: finite differences

    Vec operator()(const Vec& x) const { return eval(x); }
};

/// Field from n expressions with a forward-mode AD Jacobian.
VectorField expression_field(std::vector<expr::Expression> components);

/// ∂F/∂x at x: AD when the field provides it, else central differences with
/// step 1e-6·max(1, |x|∞).
Mat field_jacobian(const VectorField& field, const Vec& x, JacobianSource* used = nullptr);

struct LinearizationReport {
    Mat A;
    Mat B;
    Mat K;
    Mat P;
    Mat M;
    double hessian_asymmetry = 0.0;  ///< max |P − Pᵀ| / max(1, max |P|) before symmetrizing
    bool pass = false;
    double min_pivot = 0.0;
};

/// Pivots of an unpivoted Cholesky factorization; stops after the first
/// non-positive pivot.
std::vector<double> cholesky_pivots(const Mat& a);

/// Throws CertificateError when the Hessian of V at 0 is not positive definite.
LinearizationReport check_linearization(const SystemSpec& spec, const Mat& K);

/// Hessian by nested central differences, unsymmetrized.
Mat hessian_fd(const expr::Expression& e, const Vec& x, double step = 1e-4);

struct SmallControlRow {
    double eps = 0.0;
    double delta = 0.0;
    bool pass = false;
};

struct SmallControlOptions {
    int samples = 512;
    int levels = 40;
    std::uint64_t seed = 0;
};

/// For each bound ε, the largest δ on the grid δ_max·2^-k such that every
/// sampled 0 < |x| < δ admits |u| < ε with L_fV + L_gV u < 0.
/// ε = +inf checks the unbounded decrease condition.
std::vector<SmallControlRow> small_control_probe(const SystemSpec& spec, const std::vector<double>& eps_list,
                                                 const SmallControlOptions& options = {});

/// Config documents for the built-in systems: polar, linear, double_integrator.
nlohmann::json example_config(std::string_view name);
std::vector<std::string> example_names();

}  // namespace clbf
