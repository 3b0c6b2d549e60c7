#include "forge_app.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "clbf/builder.hpp"
#include "clbf/compat.hpp"
#include "clbf/controllers.hpp"
#include "clbf/errors.hpp"
#include "clbf/hitting.hpp"
#include "clbf/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace forge {

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read `" + path + "`");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init");
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

namespace {

struct Common {
    std::string config;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::optional<double> rtol, atol, event_tol, r_min, t_max;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "system config (JSON)")->required();
    cmd->add_option("--out-dir", c.out_dir, std::string("output directory (default $") + kOutDirEnv + " or .)");
    cmd->add_option("--seed", c.seed, "sampling seed");
    cmd->add_option("--rtol", c.rtol, "override tolerances.rtol");
    cmd->add_option("--atol", c.atol, "override tolerances.atol");
    cmd->add_option("--event-tol", c.event_tol, "override tolerances.event_tol");
    cmd->add_option("--r-min", c.r_min, "override tolerances.r_min");
    cmd->add_option("--t-max", c.t_max, "override tolerances.t_max");
}

clbf::Vec parse_vec(const std::string& text, int n, const std::string& what) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw clbf::ConfigError(what + ": cannot parse `" + text + "`");
        }
    }
    if (static_cast<int>(v.size()) != n) {
        throw clbf::ConfigError(what + ": expected " + std::to_string(n) + " comma-separated values");
    }
    return Eigen::Map<clbf::Vec>(v.data(), n);
}

// Loaded config plus the manifest being assembled.
class Run {
public:
    Run(std::string command, const std::vector<std::string>& args, const Common& c)
        : command_(std::move(command)), args_(args), common_(c), start_(std::chrono::steady_clock::now()) {
        spec_ = clbf::load_system_file(c.config);
        auto apply = [&](const std::optional<double>& v, double& field, const char* name) {
            if (v) {
                field = *v;
                overrides_[name] = *v;
            }
        };
        apply(c.rtol, spec_.tol.rtol, "rtol");
        apply(c.atol, spec_.tol.atol, "atol");
        apply(c.event_tol, spec_.tol.event_tol, "event_tol");
        apply(c.r_min, spec_.tol.r_min, "r_min");
        apply(c.t_max, spec_.tol.t_max, "t_max");
        std::string dir = c.out_dir;
        if (dir.empty()) {
            const char* env = std::getenv(kOutDirEnv);
            dir = env && *env ? env : ".";
        }
        out_dir_ = dir;
        fs::create_directories(out_dir_);
    }

    const clbf::SystemSpec& spec() const { return spec_; }

    std::ofstream open(const std::string& name) {
        const fs::path p = out_dir_ / name;
        std::ofstream f(p, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write `" + p.string() + "`");
        f.precision(17);
        files_.push_back(name);
        return f;
    }

    void write_json(const std::string& name, const json& doc) {
        std::ofstream f = open(name);
        f << doc.dump(2) << "\n";
    }

    fs::path path(const std::string& name) const { return out_dir_ / name; }

    void finish(int exit_code) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json files = json::array();
        for (const std::string& name : files_) {
            const fs::path p = out_dir_ / name;
            files.push_back({{"path", name}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p.string())}});
        }
        const json manifest = {
            {"command", command_},
            {"arguments", args_},
            {"config", common_.config},
            {"seed", common_.seed},
            {"tolerance_overrides", overrides_},
            {"output_dir", out_dir_.string()},
            {"version", kVersion},
            {"duration_seconds", secs},
            {"exit_code", exit_code},
            {"files", files},
        };
        std::ofstream f(out_dir_ / "manifest.json", std::ios::binary);
        f << manifest.dump(2) << "\n";
    }

private:
    std::string command_;
    std::vector<std::string> args_;
    Common common_;
    std::chrono::steady_clock::time_point start_;
    clbf::SystemSpec spec_;
    fs::path out_dir_;
    json overrides_ = json::object();
    std::vector<std::string> files_;
};

struct CompatFlags {
    int n_interior = 2000;
    int n_boundary = 256;
    double bound_U = 1.0;
    double eps_strict = 1e-8;
};

int cmd_check_compat(Run& run, const Common& c, const CompatFlags& f, std::ostream& out) {
    const clbf::SystemSpec& spec = run.spec();
    if (spec.external()) throw clbf::ConfigError("check-compat: needs f and g (the config gives a closed loop)");
    clbf::CompatOptions o;
    o.n_interior = f.n_interior;
    o.n_boundary = f.n_boundary;
    o.bound_U = f.bound_U;
    o.eps_strict = f.eps_strict;
    o.seed = c.seed;
    const clbf::CompatReport rep = clbf::compat_report(spec, o);
    run.write_json("compat_report.json", clbf::to_json(rep));
    out << "compatibility: " << (rep.pass ? "PASS" : "FAIL") << "\n"
        << "  interior samples " << rep.interior.size() << ", worst margin " << rep.worst_interior_margin << "\n"
        << "  boundary samples " << rep.boundary.size() << ", worst margin " << rep.worst_boundary_margin << "\n";
    const std::size_t shown = std::min<std::size_t>(rep.counterexamples.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) out << "  counterexample x = (" << rep.counterexamples[i].transpose() << ")\n";
    if (shown < rep.counterexamples.size()) {
        out << "  ... " << rep.counterexamples.size() - shown << " more in compat_report.json\n";
    }
    return rep.pass ? kPass : kVerifyFailed;
}

struct SimulateFlags {
    std::string controller;
    std::string x0;
    double t_end = 100.0;
    int samples = 1001;
    double converge_tol = 1e-2;
    double safety_tol = 1e-6;
};

int cmd_simulate(Run& run, const SimulateFlags& f, std::ostream& out) {
    const clbf::SystemSpec& spec = run.spec();
    const clbf::ControllerKind kind =
        f.controller.empty() ? spec.controller : clbf::parse_controller_kind(f.controller);
    const clbf::Vec x0 = parse_vec(f.x0, spec.n, "--x0");
    const clbf::SimulationResult sim =
        clbf::simulate_closed_loop(spec, kind, spec.controller_params, x0, f.t_end);
    {
        std::ofstream csv = run.open("trajectory.csv");
        clbf::write_simulation_csv(csv, spec, kind, spec.controller_params, sim, f.samples);
    }
    out << "simulate (" << clbf::controller_name(kind) << "): " << clbf::outcome_name(sim.outcome) << "\n"
        << "  t_end reached " << sim.trajectory.t_end() << ", |x(t_end)| = " << sim.final_norm << "\n"
        << "  min h = " << sim.min_h << ", max V increase = " << sim.max_V_increase
        << ", decay rate = " << sim.decay_rate << "\n";
    if (!sim.message.empty()) out << "  " << sim.message << "\n";
    if (sim.outcome == clbf::SimulationOutcome::infeasible) return kInfeasible;
    if (sim.outcome != clbf::SimulationOutcome::completed) return kVerifyFailed;
    const bool safe = sim.min_h >= -f.safety_tol;
    const bool converged = sim.final_norm < f.converge_tol;
    out << "  safety " << (safe ? "ok" : "VIOLATED") << ", convergence " << (converged ? "ok" : "NOT REACHED") << "\n";
    return safe && converged ? kPass : kVerifyFailed;
}

struct HittingFlags {
    std::string points;
    std::string grid;
    bool gradients = false;
    std::string growth_dir;
    double growth_r0 = 0.5;
    int growth_levels = 10;
};

std::vector<clbf::Vec> read_points(const std::string& path, int n) {
    std::ifstream in(path);
    if (!in) throw clbf::ConfigError("cannot open points file `" + path + "`");
    std::vector<clbf::Vec> pts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0]))) continue;
        pts.push_back(parse_vec(line, n, "points file"));
    }
    return pts;
}

int cmd_hitting(Run& run, const HittingFlags& f, std::ostream& out) {
    const clbf::SystemSpec& spec = run.spec();
    if (f.points.empty() == f.grid.empty()) throw clbf::ConfigError("hitting: give exactly one of --points, --grid");
    std::vector<clbf::Vec> pts;
    if (!f.points.empty()) {
        pts = read_points(f.points, spec.n);
    } else {
        const clbf::GridSpec g = clbf::parse_grid(f.grid, spec.n);
        for (std::size_t k = 0; k < g.size(); ++k) pts.push_back(g.point(k));
    }
    const clbf::VectorField field = clbf::closed_loop_field(spec);
    const clbf::HittingOptions opts = clbf::hitting_options(spec);
    std::vector<clbf::HittingResult> rows;
    int failures = 0;
    for (const clbf::Vec& x : pts) {
        clbf::HittingResult r = clbf::hitting_time(field, spec.h, x, opts);
        if (r.status == clbf::HitStatus::ok && f.gradients) {
            try {
                clbf::grad_hitting_time(field, spec.h, x, opts, &r);
            } catch (const std::exception& e) {
                r.message = e.what();
                ++failures;
            }
        }
        if (r.status != clbf::HitStatus::ok) ++failures;
        rows.push_back(std::move(r));
    }
    {
        std::ofstream csv = run.open("hitting.csv");
        clbf::write_hitting_csv(csv, rows, spec.n, f.gradients);
    }
    out << "hitting: " << rows.size() << " points, " << failures << " failed\n";
    for (const auto& r : rows) {
        if (r.status != clbf::HitStatus::ok) {
            out << "  x = (" << r.x.transpose() << "): " << clbf::hit_status_name(r.status) << "\n";
        }
    }
    if (!f.growth_dir.empty()) {
        const clbf::Vec d = parse_vec(f.growth_dir, spec.n, "--growth");
        const clbf::GrowthProbe probe = clbf::growth_probe(field, spec.h, d, f.growth_r0, f.growth_levels, opts);
        std::ofstream csv = run.open("growth.csv");
        clbf::write_growth_csv(csv, probe);
        out << "growth: slope log|grad T| vs log r = " << probe.grad_slope
            << ", slope |T| vs log(1/r) = " << probe.T_slope << "\n";
    }
    return failures == 0 ? kPass : kVerifyFailed;
}

struct BuildFlags {
    std::string grid;
    double smooth_p = 1.0;
    std::string evaluator = "W";
    int n_boundary = 64;
    int n_interior = 400;
    int n_exterior = 400;
    int n_pde = 20;
    double tol_boundary = 1e-7;
    double tol_sep = 1e-6;
    double h_margin = 1e-3;
};

int cmd_build_clbf(Run& run, const Common& c, const BuildFlags& f, std::ostream& out) {
    const clbf::SystemSpec& spec = run.spec();
    const clbf::VectorField field = clbf::closed_loop_field(spec);
    const clbf::ClbfOptions copts = clbf::clbf_options(spec);
    clbf::GridSpec grid;
    if (f.grid.empty()) {
        grid.lo = spec.box.lo;
        grid.hi = spec.box.hi;
        grid.counts.assign(spec.n, 41);
    } else {
        grid = clbf::parse_grid(f.grid, spec.n);
    }
    clbf::Evaluator eval;
    if (f.evaluator == "W") {
        eval = clbf::clbf_evaluator(spec, field, copts);
    } else if (f.evaluator == "V") {
        eval = clbf::raw_v_evaluator(spec);
    } else {
        throw clbf::ConfigError("--evaluator: expected W or V");
    }
    if (f.smooth_p != 1.0) eval = clbf::smooth_compose(eval, f.smooth_p);

    std::vector<clbf::ClbfEvaluation> rows = clbf::clbf_grid(spec, field, grid, copts);
    if (f.evaluator == "V" || f.smooth_p != 1.0) {
        for (auto& e : rows) {
            if (!e.has_value()) continue;
            const double w = f.evaluator == "V" ? spec.V.eval(e.x) : e.W;
            e.W = clbf::smooth_rho(w, f.smooth_p);
        }
    }
    {
        std::ofstream csv = run.open("clbf_grid.csv");
        clbf::write_grid_csv(csv, spec, rows);
    }
    clbf::VerifyOptions v;
    v.n_boundary = f.n_boundary;
    v.n_interior = f.n_interior;
    v.n_exterior = f.n_exterior;
    v.n_pde = f.evaluator == "W" && f.smooth_p == 1.0 ? f.n_pde : 0;
    v.tol_boundary = f.tol_boundary;
    v.tol_sep = f.tol_sep;
    v.h_margin = f.h_margin;
    v.seed = c.seed;
    const clbf::ClbfReport rep = clbf::verify_clbf(spec, field, eval, v, copts);
    json doc = clbf::to_json(rep);
    int grid_ok = 0;
    for (const auto& e : rows) grid_ok += e.status == clbf::ClbfStatus::ok;
    doc["grid"] = {{"points", rows.size()}, {"status_ok", grid_ok}, {"smooth_p", f.smooth_p}};
    run.write_json("clbf_report.json", doc);

    out << "build-clbf (" << rep.evaluator << "): " << (rep.pass ? "PASS" : "FAIL") << "\n"
        << "  level set W = 1 on boundary: " << (rep.level_ok ? "ok" : "FAIL")
        << " (max |W-1| = " << rep.boundary_max_dev << ")\n"
        << "  sublevel {W <= 1} = C: " << (rep.sublevel_ok ? "ok" : "FAIL") << " (interior max W = "
        << rep.interior_max_W << ", exterior min W = " << rep.exterior_min_W << ")\n"
        << "  decrease: " << (rep.decrease_ok ? "ok" : "FAIL") << " (" << rep.decrease_failures << " failures, "
        << rep.evaluation_failures << " evaluation errors)\n";
    if (rep.max_pde_residual) out << "  max PDE residual " << *rep.max_pde_residual << "\n";
    out << "  grid: " << grid_ok << "/" << rows.size() << " points ok\n";
    return rep.pass ? kPass : kVerifyFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Build and verify control Lyapunov-barrier certificates", "clbf-forge"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Common common;
    CompatFlags compat;
    SimulateFlags sim;
    HittingFlags hit;
    BuildFlags build;
    std::string example_name, example_out;

    auto* c1 = app.add_subcommand("check-compat", "strict CLF/CBF compatibility report");
    add_common(c1, common);
    c1->add_option("--n-interior", compat.n_interior);
    c1->add_option("--n-boundary", compat.n_boundary);
    c1->add_option("--bound-U", compat.bound_U, "control bound for margins");
    c1->add_option("--eps-strict", compat.eps_strict);

    auto* c2 = app.add_subcommand("simulate", "closed-loop simulation with safety/decrease monitors");
    add_common(c2, common);
    c2->add_option("--controller", sim.controller, "sontag | min_norm_qp | blended (default from config)");
    c2->add_option("--x0", sim.x0, "initial state, comma separated")->required();
    c2->add_option("--t-end", sim.t_end);
    c2->add_option("--dump", sim.samples, "rows in trajectory.csv");
    c2->add_option("--converge-tol", sim.converge_tol);
    c2->add_option("--safety-tol", sim.safety_tol);

    auto* c3 = app.add_subcommand("hitting", "boundary hitting times T(x)");
    add_common(c3, common);
    c3->add_option("--points", hit.points, "file with one comma-separated state per line");
    c3->add_option("--grid", hit.grid, "lo:hi:n per axis, comma separated");
    c3->add_flag("--gradients", hit.gradients, "add grad T columns");
    c3->add_option("--growth", hit.growth_dir, "probe |grad T| along this direction");
    c3->add_option("--growth-r0", hit.growth_r0);
    c3->add_option("--growth-levels", hit.growth_levels);

    auto* c4 = app.add_subcommand("build-clbf", "evaluate and verify W(x) = V(x)/V(phi(T(x), x))");
    add_common(c4, common);
    c4->add_option("--grid", build.grid, "lo:hi:n per axis (default: domain box, 41 per axis)");
    c4->add_option("--smooth-p", build.smooth_p, "compose with rho(s) = s^p");
    c4->add_option("--evaluator", build.evaluator, "W or V (raw Lyapunov function)");
    c4->add_option("--n-boundary", build.n_boundary);
    c4->add_option("--n-interior", build.n_interior);
    c4->add_option("--n-exterior", build.n_exterior);
    c4->add_option("--n-pde", build.n_pde);
    c4->add_option("--tol-boundary", build.tol_boundary);
    c4->add_option("--tol-sep", build.tol_sep);
    c4->add_option("--h-margin", build.h_margin);

    auto* c5 = app.add_subcommand("example", "print a built-in config");
    c5->add_option("name", example_name, "polar | linear | double_integrator")->required();
    c5->add_option("--out", example_out, "write to this file instead of stdout");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kPass;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return kPass;
    } catch (const CLI::ParseError& e) {
        err << "clbf-forge: " << e.what() << "\n" << "run with --help for usage\n";
        return kUsage;
    }

    if (c5->parsed()) {
        try {
            const std::string text = clbf::example_config(example_name).dump(2) + "\n";
            if (example_out.empty()) {
                out << text;
            } else {
                std::ofstream f(example_out, std::ios::binary);
                if (!f) throw clbf::ConfigError("cannot write `" + example_out + "`");
                f << text;
            }
            return kPass;
        } catch (const std::exception& e) {
            err << "clbf-forge: " << e.what() << "\n";
            return kUsage;
        }
    }

    CLI::App* cmd = app.get_subcommands().front();
    std::optional<Run> run;
    try {
        run.emplace(cmd->get_name(), args, common);
    } catch (const std::exception& e) {
        err << "clbf-forge: " << e.what() << "\n";
        return kUsage;
    }
    int code = kUsage;
    try {
        if (cmd == c1) code = cmd_check_compat(*run, common, compat, out);
        if (cmd == c2) code = cmd_simulate(*run, sim, out);
        if (cmd == c3) code = cmd_hitting(*run, hit, out);
        if (cmd == c4) code = cmd_build_clbf(*run, common, build, out);
    } catch (const clbf::ConfigError& e) {
        err << "clbf-forge: " << e.what() << "\n";
        code = kUsage;
    } catch (const clbf::ParseError& e) {
        err << "clbf-forge: " << e.what() << "\n";
        code = kUsage;
    } catch (const std::exception& e) {
        err << "clbf-forge: " << cmd->get_name() << " failed: " << e.what() << "\n";
        code = kVerifyFailed;
    }
    try {
        run->finish(code);
    } catch (const std::exception& e) {
        err << "clbf-forge: manifest: " << e.what() << "\n";
    }
    return code;
}

}  // namespace forge
