#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "clbf/builder.hpp"
#include "clbf/controllers.hpp"

using namespace clbf;

namespace {

struct Setup {
    SystemSpec spec;
    VectorField field;
    ClbfOptions opt;
};

Setup linear() {
    SystemSpec s = load_system(example_config("linear"));
    VectorField f = closed_loop_field(s, ControllerKind::sontag, s.controller_params);
    ClbfOptions o = clbf_options(s);
    return {std::move(s), std::move(f), o};
}

Setup polar() {
    SystemSpec s = load_system(example_config("polar"));
    VectorField f = closed_loop_field(s);
    ClbfOptions o = clbf_options(s);
    return {std::move(s), std::move(f), o};
}

}  // namespace

TEST_CASE("linear reference W = |x|^2") {
    const Setup L = linear();
    const ClbfEvaluation e = clbf_value(L.spec, L.field, Vec{{0.5, 0.0}}, L.opt);
    REQUIRE(e.status == ClbfStatus::ok);
    CHECK(std::abs(e.W - 0.25) <= 1e-6);
    CHECK(e.region == Region::inside);
    CHECK(e.omega == doctest::Approx(0.25));
    CHECK(e.omega1 == doctest::Approx(0.5));

    const ClbfEvaluation on = clbf_value(L.spec, L.field, Vec{{0.6, -0.8}}, L.opt);
    CHECK(on.W == 1.0);
    CHECK(on.region == Region::boundary);

    const ClbfEvaluation zero = clbf_value(L.spec, L.field, Vec::Zero(2), L.opt);
    CHECK(zero.status == ClbfStatus::ok);
    CHECK(zero.W == 0.0);
    CHECK(clbf_value(L.spec, L.field, Vec{{1e-7, 0.0}}, L.opt).status == ClbfStatus::origin_too_close);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> U(-3.0, 3.0);
    for (int k = 0; k < 100; ++k) {
        const Vec x{{U(rng), U(rng)}};
        if (x.norm() < 0.1) continue;
        const ClbfEvaluation v = clbf_value(L.spec, L.field, x, L.opt);
        REQUIRE(v.status == ClbfStatus::ok);
        CHECK(std::abs(v.W - x.squaredNorm()) <= 1e-6 * std::max(1.0, x.squaredNorm()));
    }
}

TEST_CASE("polar W from the closed-form hit point") {
    const Setup P = polar();
    const double th_hit = 0.4 * (1.0 - std::pow(2.0, -2.5));
    const double expected = 16.0 / (4.0 + std::sin(th_hit));
    const ClbfEvaluation e = clbf_value(P.spec, P.field, Vec{{2.0, 0.0}}, P.opt);
    REQUIRE(e.has_value());
    CHECK(std::abs(e.W - expected) <= 1e-6);
    CHECK(std::abs(e.W - 3.700816) <= 1e-6);
    CHECK(e.region == Region::outside);
    CHECK(e.status == ClbfStatus::ok);

    // V < 0 here, so the point lies outside the region where V certifies anything
    const ClbfEvaluation bad = clbf_value(P.spec, P.field, Vec{{2.0, -std::numbers::pi / 2}}, P.opt);
    CHECK(bad.status == ClbfStatus::outside_domain);

    for (int j = 0; j < 16; ++j) {
        const double th = -std::numbers::pi + 2.0 * std::numbers::pi * j / 16.0;
        const ClbfEvaluation b = clbf_value(P.spec, P.field, Vec{{1.0, th}}, P.opt);
        CHECK(b.status == ClbfStatus::ok);
        CHECK(std::abs(b.W - 1.0) <= 1e-12);
    }
}

TEST_CASE("PDE residual") {
    const Setup L = linear();
    CHECK(pde_residual(L.spec, L.field, Vec{{0.5, 0.0}}, L.opt) <= 1e-6);
    CHECK(pde_residual(L.spec, L.field, Vec{{0.0, 1.0}}, L.opt) <= 1e-6);
    const Setup P = polar();
    CHECK(pde_residual(P.spec, P.field, Vec{{1.5, 1.0}}, P.opt) <= 1e-5);
    CHECK(pde_residual(P.spec, P.field, Vec{{1.0, 0.3}}, P.opt) <= 1e-5);
}

TEST_CASE("grid parsing and evaluation") {
    const GridSpec g = parse_grid("-1.5:1.5:41,-1.5:1.5:41", 2);
    CHECK(g.size() == 41u * 41u);
    CHECK(g.point(0) == Vec{{-1.5, -1.5}});
    CHECK(g.point(1) == Vec{{-1.5, -1.425}});
    CHECK(g.point(41 * 41 - 1) == Vec{{1.5, 1.5}});
    CHECK_THROWS((void)parse_grid("0:1:5", 2));
    CHECK_THROWS((void)parse_grid("0:1:x,0:1:2", 2));

    const Setup L = linear();
    const auto rows = clbf_grid(L.spec, L.field, g, L.opt);
    REQUIRE(rows.size() == g.size());
    int ok = 0;
    for (const auto& e : rows) {
        if (e.status != ClbfStatus::ok) continue;
        ++ok;
        CHECK(std::abs(e.W - e.x.squaredNorm()) <= 1e-6);
    }
    CHECK(ok == static_cast<int>(g.size()));

    std::ostringstream os;
    write_grid_csv(os, L.spec, rows);
    CHECK(os.str().rfind("x1,x2,h,V,W,omega1,region,status\n", 0) == 0);
}

TEST_CASE("polar level-set dichotomy") {
    const Setup P = polar();
    const GridSpec g = parse_grid("0.2:2:41,-3.14159:3.14159:41", 2);
    int checked = 0;
    for (const auto& e : clbf_grid(P.spec, P.field, g, P.opt)) {
        if (e.status != ClbfStatus::ok) continue;
        const double h = P.spec.h.eval(e.x);
        if (std::abs(h) <= 1e-3) continue;
        ++checked;
        CHECK((e.W - 1.0 > 0.0) == (h < 0.0));
    }
    CHECK(checked >= 41 * 30);
}

TEST_CASE("smoothing") {
    CHECK(smooth_rho(0.3, 1.0) == 0.3);
    CHECK(smooth_rho(1.0, 2.0) == 1.0);
    CHECK(smooth_rho(0.5, 2.0) == 0.25);
    CHECK_THROWS_AS((void)smooth_rho(0.5, 0.5), std::invalid_argument);
    const auto v = smooth_compose(std::vector<double>{0.0, 0.5, 1.0, 2.0}, 2.0);
    CHECK(v == std::vector<double>{0.0, 0.25, 1.0, 4.0});
    // ρ(s) ≤ s ρ'(s) for p ≥ 1
    for (double p : {1.0, 1.5, 2.0, 3.0})
        for (double s = 0.0; s <= 3.0; s += 0.25) CHECK(smooth_rho(s, p) <= s * p * std::pow(s, p - 1.0) + 1e-15);

    const Setup L = linear();
    const Evaluator w2 = smooth_compose(clbf_evaluator(L.spec, L.field, L.opt), 2.0);
    CHECK(w2.name == "W^2");
    const Vec x{{0.3, 0.4}};
    CHECK(std::abs(w2(x) - std::pow(x.squaredNorm(), 2)) <= 1e-6);
    CHECK(std::abs(w2(Vec{{0.6, 0.8}}) - 1.0) <= 1e-12);
}

TEST_CASE("verify_clbf") {
    VerifyOptions vo;
    vo.n_interior = 150;
    vo.n_exterior = 150;
    vo.n_pde = 10;

    const Setup L = linear();
    const ClbfReport lin = verify_clbf(L.spec, L.field, clbf_evaluator(L.spec, L.field, L.opt), vo, L.opt);
    CHECK(lin.pass);
    CHECK(lin.boundary_max_dev <= 1e-7);
    CHECK(lin.interior_max_W < 1.0);
    CHECK(lin.exterior_min_W > 1.0);
    REQUIRE(lin.max_pde_residual);
    CHECK(*lin.max_pde_residual <= 1e-5);

    const Setup P = polar();
    const Evaluator W = clbf_evaluator(P.spec, P.field, P.opt);
    const ClbfReport pol = verify_clbf(P.spec, P.field, W, vo, P.opt);
    CHECK(pol.pass);
    CHECK(pol.decrease_failures == 0);

    const ClbfReport sq = verify_clbf(P.spec, P.field, smooth_compose(W, 2.0), vo, P.opt);
    CHECK(sq.pass == pol.pass);

    const ClbfReport raw = verify_clbf(P.spec, P.field, raw_v_evaluator(P.spec), vo, P.opt);
    CHECK_FALSE(raw.pass);
    CHECK_FALSE(raw.level_ok);
    CHECK(raw.boundary_max_dev >= 0.2);

    const auto j = to_json(raw);
    CHECK(j["pass"] == false);
    CHECK(j["conditions"]["level"] == false);
    CHECK(j["evaluator"] == "V");
}

TEST_CASE("converse integral recovers W") {
    const Setup L = linear();
    const ConverseIntegral c = converse_integral(L.spec, L.field, Vec{{0.5, 0.0}}, 20.0, L.opt);
    CHECK(std::abs(c.value - 0.25) <= 1e-3);
    CHECK(c.tail_bound <= 1e-3);
    CHECK(std::abs(c.value + c.tail_bound - 0.25) <= 1e-6);
}

TEST_CASE("the denominator is constant along trajectories") {
    const Setup P = polar();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> R(0.3, 1.1), A(-3.0, 3.0), S(0.01, 0.5);
    for (int k = 0; k < 50; ++k) {
        const Vec x{{R(rng), A(rng)}};
        const Vec y = ode::integrate(P.field.eval, x, 0.0, S(rng), P.opt.hitting.ode).final_state();
        const double dx = clbf_value(P.spec, P.field, x, P.opt).denominator;
        const double dy = clbf_value(P.spec, P.field, y, P.opt).denominator;
        CHECK(std::abs(dx - dy) <= 1e-6 * std::abs(dx));
    }
}

TEST_CASE("W decreases along the flow") {
    for (const Setup& S : {linear(), polar()}) {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> U(0.0, 1.0);
        for (int k = 0; k < 100; ++k) {
            Vec x = S.spec.box.lo + (S.spec.box.hi - S.spec.box.lo).cwiseProduct(Vec{{U(rng), U(rng)}});
            if (chart_radius(S.spec.chart, x) < 0.1) continue;
            const double s = 0.1 * (1.0 - U(rng));
            const Vec y = ode::integrate(S.field.eval, x, 0.0, s, S.opt.hitting.ode).final_state();
            const ClbfEvaluation a = clbf_value(S.spec, S.field, x, S.opt);
            const ClbfEvaluation b = clbf_value(S.spec, S.field, y, S.opt);
            REQUIRE(a.status == ClbfStatus::ok);
            REQUIRE(b.status == ClbfStatus::ok);
            CHECK(b.W < a.W);
        }
    }
}
