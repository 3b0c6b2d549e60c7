#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "clbf/controllers.hpp"
#include "../support/oracles.hpp"

using namespace clbf;

namespace {

SystemSpec example(std::string_view name) { return load_system(example_config(name)); }

}  // namespace

TEST_CASE("sontag examples") {
    const SystemSpec lin = example("linear");
    for (const Vec& x : {Vec{{1.0, 0.0}}, Vec{{0.3, -2.0}}, Vec{{-0.01, 0.02}}})
        CHECK((sontag(lin, x) + x).norm() <= 1e-12 * std::max(1.0, x.norm()));
    CHECK(sontag(lin, Vec::Zero(2)).isZero());

    // a = 0 with a0 < 0: drift already decreases V
    auto doc = example_config("linear");
    doc["f"] = {"-x1", "-x2"};
    doc["g"] = nlohmann::json::array({nlohmann::json::array({"0", "0"}), nlohmann::json::array({"0", "0"})});
    CHECK(sontag(load_system(doc), Vec{{0.5, 0.5}}).isZero());
}

TEST_CASE("sontag decrease identity") {
    const SystemSpec di = example("double_integrator");
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> U(-1.5, 1.5);
    int checked = 0;
    for (int k = 0; k < 500; ++k) {
        const Vec x{{U(rng), U(rng)}};
        const LieRows r = lie_rows(di, x);
        if (r.a0 == 0.0 && r.a.isZero()) continue;
        const Vec u = sontag(di, x);
        const double target = std::sqrt(r.a0 * r.a0 + std::pow(r.a.squaredNorm(), 2));
        CHECK(std::abs(r.a0 + r.a.dot(u) + target) <= 1e-9 * std::max(1.0, target));
        ++checked;
    }
    CHECK(checked >= 490);
}

TEST_CASE("min_norm_qp examples") {
    const SystemSpec lin = example("linear");
    ControllerParams p;
    p.c_v = 1.0;
    p.kappa = 1.0;
    p.band = 1.0;
    const Vec u = min_norm_qp(lin, Vec{{1.0, 0.0}}, p);
    CHECK((u - Vec{{-0.5, 0.0}}).norm() <= 1e-12);
    const auto grid = oracle::grid_min_norm(lie_rows(lin, Vec{{1.0, 0.0}}), -0.5, 1.0, 2.0);
    REQUIRE(grid);
    CHECK(std::abs(*grid - 0.25) <= 0.01 * 0.25 + 1e-6);

    // deep inside C with the CLF constraint inactive: f = -x already decreases V
    auto doc = example_config("linear");
    doc["f"] = {"-x1", "-x2"};
    ControllerParams q;
    q.band = 0.1;
    CHECK(min_norm_qp(load_system(doc), Vec{{0.2, 0.1}}, q).isZero());

    const SystemSpec di = example("double_integrator");
    try {
        (void)min_norm_qp(di, Vec{{1.0, 0.0}}, di.controller_params);
        FAIL("expected ControllerInfeasible");
    } catch (const ControllerInfeasible& e) {
        CHECK(e.record().mode == ConstraintMode::boundary);
        CHECK_FALSE(e.record().feasible);
    }
}

TEST_CASE("min_norm_qp matches the grid minimum") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    int feasible = 0;
    for (int k = 0; k < 120; ++k) {
        const int m = 1 + k % 3;
        const LieRows r = oracle::random_rows(rng, m);
        const double clf = -std::abs(U(rng));
        const std::optional<double> cbf = k % 4 == 0 ? std::nullopt : std::optional<double>(std::abs(U(rng)));
        const auto u = min_norm_qp(r, clf, cbf);
        if (!u) {
            // nothing feasible in a generous box either
            CHECK_FALSE(oracle::grid_min_norm(r, clf, cbf, 50.0, 1));
            continue;
        }
        ++feasible;
        CHECK(r.a0 + r.a.dot(*u) <= clf + 1e-9);
        if (cbf) CHECK(r.b0 + r.b.dot(*u) >= *cbf - 1e-9);
        const auto grid = oracle::grid_min_norm(r, clf, cbf, 2.0 * u->norm() + 1e-3);
        REQUIRE(grid);
        CHECK(u->squaredNorm() <= *grid * 1.01 + 1e-6);
        CHECK(*grid <= u->squaredNorm() * 1.01 + 1e-6);
    }
    CHECK(feasible >= 60);
}

TEST_CASE("blend weight") {
    CHECK(blend_weight(0.1, 0.2, 0.5) == 1.0);
    CHECK(blend_weight(0.2, 0.2, 0.5) == 1.0);
    CHECK(blend_weight(0.5, 0.2, 0.5) == 0.0);
    CHECK(blend_weight(0.9, 0.2, 0.5) == 0.0);
    CHECK(blend_weight(0.35, 0.2, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
    double prev = 1.0;
    for (int k = 0; k <= 1000; ++k) {
        const double w = blend_weight(0.6 * k / 1000.0, 0.2, 0.5);
        CHECK(w <= prev);
        CHECK(std::abs(w - prev) <= 0.01);
        prev = w;
    }
}

TEST_CASE("blended controller") {
    const SystemSpec lin = example("linear");
    const ControllerParams& p = lin.controller_params;
    const Mat K = *lin.gain_K;
    const Vec in{{0.1, 0.05}};
    CHECK(blended(lin, in, p, K) == K * in);
    const Vec out{{0.6, 0.3}};
    CHECK((blended(lin, out, p, K) - min_norm_qp(lin, out, p)).norm() <= 1e-15);
    // continuity across both radii along a ray
    Vec prev = blended(lin, Vec{{0.0, 0.0}}, p, K);
    for (int k = 1; k <= 2000; ++k) {
        const double s = 0.7 * k / 2000.0;
        const Vec x = s * Vec{{std::cos(0.3), std::sin(0.3)}};
        const Vec u = blended(lin, x, p, K);
        CHECK((u - prev).norm() <= 0.01);
        prev = u;
    }
    auto doc = example_config("linear");
    doc["controller_params"]["r1"] = 2.0;
    const SystemSpec wide = load_system(doc);
    CHECK_THROWS_AS((void)make_controller(wide, ControllerKind::blended, wide.controller_params), ConfigError);
}

TEST_CASE("simulations") {
    const SystemSpec lin = example("linear");
    const SimulationResult s = simulate_closed_loop(lin, ControllerKind::sontag, lin.controller_params,
                                                    Vec{{0.9, 0.0}}, 10.0);
    CHECK(s.outcome == SimulationOutcome::completed);
    CHECK(s.min_h >= 0.19 - 1e-9);
    CHECK(s.final_norm <= 1e-4);
    CHECK(s.max_V_increase <= 1e-12);
    CHECK(s.decay_rate == doctest::Approx(-1.0).epsilon(1e-3));

    ControllerParams p = lin.controller_params;
    const SimulationResult b = simulate_closed_loop(lin, ControllerKind::min_norm_qp, p, Vec{{0.0, 1.0}}, 10.0);
    CHECK(b.outcome == SimulationOutcome::completed);
    CHECK(b.min_h >= -1e-9);

    const SimulationResult z = simulate_closed_loop(lin, ControllerKind::sontag, p, Vec::Zero(2), 5.0);
    CHECK(z.final_norm == 0.0);

    const SystemSpec di = example("double_integrator");
    const SimulationResult inf = simulate_closed_loop(di, ControllerKind::min_norm_qp, di.controller_params,
                                                      Vec{{1.0, 0.0}}, 10.0);
    CHECK(inf.outcome == SimulationOutcome::infeasible);

    std::ostringstream os;
    write_simulation_csv(os, lin, ControllerKind::sontag, lin.controller_params, s, 5);
    CHECK(os.str().rfind("t,x1,x2,u1,u2,V,h\n", 0) == 0);
}

TEST_CASE("safe starts stay safe under min_norm_qp") {
    const SystemSpec lin = example("linear");
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> R(0.0, 1.0), A(0.0, 2.0 * std::numbers::pi);
    double worst = 1.0;
    for (int k = 0; k < 100; ++k) {
        const double r = k < 10 ? 1.0 : std::sqrt(R(rng));
        const double a = A(rng);
        const SimulationResult s = simulate_closed_loop(lin, ControllerKind::min_norm_qp, lin.controller_params,
                                                        Vec{{r * std::cos(a), r * std::sin(a)}}, 5.0);
        REQUIRE(s.outcome == SimulationOutcome::completed);
        worst = std::min(worst, s.min_h);
    }
    CHECK(worst >= -1e-6);
}
