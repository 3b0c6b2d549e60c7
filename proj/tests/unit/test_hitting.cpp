#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "clbf/controllers.hpp"
#include "clbf/errors.hpp"
#include "clbf/hitting.hpp"

using namespace clbf;

namespace {

struct Setup {
    SystemSpec spec;
    VectorField field;
    HittingOptions opt;
};

Setup linear() {
    SystemSpec s = load_system(example_config("linear"));
    VectorField f = closed_loop_field(s, ControllerKind::sontag, s.controller_params);
    HittingOptions o = hitting_options(s);
    return {std::move(s), std::move(f), o};
}

Setup polar() {
    SystemSpec s = load_system(example_config("polar"));
    VectorField f = closed_loop_field(s);
    HittingOptions o = hitting_options(s);
    return {std::move(s), std::move(f), o};
}

double polar_T(double r) { return (1.0 - 1.0 / (r * r)) / 2.0; }
double polar_dtheta(double r) { return 0.4 * (1.0 - std::pow(r, -2.5)); }

}  // namespace

TEST_CASE("linear reference hitting times") {
    const Setup L = linear();
    const HittingResult r = hitting_time(L.field, L.spec.h, Vec{{2.0, 0.0}}, L.opt);
    REQUIRE(r.status == HitStatus::ok);
    CHECK(std::abs(r.T - std::numbers::ln2) <= 1e-7);
    CHECK((r.x_hit - Vec{{1.0, 0.0}}).norm() <= 1e-8);
    CHECK(r.denom == doctest::Approx(2.0));

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> R(0.1, 3.0), A(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < 100; ++k) {
        const double rad = R(rng), a = A(rng);
        const Vec x{{rad * std::cos(a), rad * std::sin(a)}};
        const HittingResult h = hitting_time(L.field, L.spec.h, x, L.opt);
        REQUIRE(h.status == HitStatus::ok);
        CHECK(std::abs(h.T - std::log(rad)) <= 1e-6);
        CHECK(std::abs(h.x_hit.norm() - 1.0) <= 1e-8);
    }
}

TEST_CASE("sign of T and the boundary branch") {
    const Setup L = linear();
    CHECK(hitting_time(L.field, L.spec.h, Vec{{0.5, 0.0}}, L.opt).T < 0.0);
    CHECK(hitting_time(L.field, L.spec.h, Vec{{1.5, 0.0}}, L.opt).T > 0.0);
    const HittingResult on = hitting_time(L.field, L.spec.h, Vec{{0.6, 0.8}}, L.opt);
    CHECK(on.T == 0.0);
    CHECK(on.x_hit == on.x);
    const HittingResult close = hitting_time(L.field, L.spec.h, Vec{{1e-7, 0.0}}, L.opt);
    CHECK(close.status == HitStatus::origin_too_close);
    HittingOptions short_opt = L.opt;
    short_opt.t_max = 0.1;
    CHECK(hitting_time(L.field, L.spec.h, Vec{{0.2, 0.0}}, short_opt).status == HitStatus::no_crossing);
}

TEST_CASE("polar closed form") {
    const Setup P = polar();
    const HittingResult r = hitting_time(P.field, P.spec.h, Vec{{2.0, 0.0}}, P.opt);
    REQUIRE(r.status == HitStatus::ok);
    CHECK(std::abs(r.T - 0.375) <= 1e-7);
    CHECK(std::abs(r.x_hit[1] - 0.3292893) <= 1e-6);
    for (double rad : {0.5, 0.8, 1.0, 1.5, 2.0}) {
        for (int j = 0; j < 8; ++j) {
            const double th = -std::numbers::pi + 2.0 * std::numbers::pi * j / 8.0;
            const HittingResult h = hitting_time(P.field, P.spec.h, Vec{{rad, th}}, P.opt);
            REQUIRE(h.status == HitStatus::ok);
            CHECK(std::abs(h.T - polar_T(rad)) <= 1e-6);
            CHECK(std::abs(h.x_hit[1] - (th + polar_dtheta(rad))) <= 1e-5);
        }
    }
}

TEST_CASE("hitting time along a trajectory drops by the elapsed time") {
    const Setup P = polar();
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> R(0.3, 2.0), A(-3.0, 3.0), S(0.01, 0.5);
    for (int k = 0; k < 30; ++k) {
        const Vec x{{R(rng), A(rng)}};
        const double s = S(rng);
        const Vec y = ode::integrate(P.field.eval, x, 0.0, s, P.opt.ode).final_state();
        const double tx = hitting_time(P.field, P.spec.h, x, P.opt).T;
        const double ty = hitting_time(P.field, P.spec.h, y, P.opt).T;
        CHECK(std::abs(ty - (tx - s)) <= 1e-6 * std::max(1.0, std::abs(tx)));
    }
}

TEST_CASE("gradient of T") {
    const Setup L = linear();
    const Vec g = grad_hitting_time(L.field, L.spec.h, Vec{{2.0, 0.0}}, L.opt);
    CHECK((g - Vec{{0.5, 0.0}}).norm() <= 1e-5);
    const Vec fd = grad_T_fd(L.field, L.spec.h, Vec{{2.0, 0.0}}, L.opt);
    CHECK((fd - Vec{{0.5, 0.0}}).norm() <= 1e-4);

    const Setup P = polar();
    const Vec gp = grad_hitting_time(P.field, P.spec.h, Vec{{2.0, 0.0}}, P.opt);
    CHECK(std::abs(gp[0] - 0.125) <= 1e-5);
    CHECK(std::abs(gp[1]) <= 1e-5);

    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> R(0.1, 3.0), A(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < 100; ++k) {
        const double rad = R(rng), a = A(rng);
        const Vec x{{rad * std::cos(a), rad * std::sin(a)}};
        HittingResult res;
        const Vec q = grad_hitting_time(L.field, L.spec.h, x, L.opt, &res);
        CHECK((q - x / x.squaredNorm()).norm() <= 1e-5);
        REQUIRE(res.grad_T);
        const Vec d = grad_T_fd(L.field, L.spec.h, x, L.opt);
        CHECK((q - d).norm() <= 1e-4 * std::max(1.0, q.norm()));
    }

    CHECK_THROWS_AS((void)grad_hitting_time(L.field, L.spec.h, Vec{{1e-8, 0.0}}, L.opt), IntegrationError);
}

TEST_CASE("tangential crossings are rejected") {
    // rotation: the flow through (1, 0) is tangent to the unit circle
    auto doc = example_config("linear");
    doc.erase("f");
    doc.erase("g");
    doc.erase("gain_K");
    doc.erase("controller_params");
    doc["input_dim"] = 0;
    doc["controller"] = "external";
    doc["closed_loop"] = {"-x2 - x1*(x1^2 + x2^2 - 1)^2", "x1 - x2*(x1^2 + x2^2 - 1)^2"};
    const SystemSpec s = load_system(doc);
    const VectorField F = closed_loop_field(s);
    CHECK_THROWS_AS((void)grad_hitting_time(F, s.h, Vec{{1.0, 0.0}}, hitting_options(s)), TransversalityError);
}

TEST_CASE("growth laws") {
    const Setup L = linear();
    const GrowthProbe g = growth_probe(L.field, L.spec.h, Vec{{1.0, 0.0}}, 0.5, 10, L.opt);
    CHECK(std::abs(g.grad_slope + 1.0) <= 0.02);
    CHECK(std::abs(g.T_slope - 1.0) <= 0.02);

    const Setup P = polar();
    const GrowthProbe p = growth_probe(P.field, P.spec.h, Vec{{1.0, 0.0}}, 0.5, 10, P.opt);
    CHECK(std::abs(p.grad_slope + 3.0) <= 0.05);

    std::ostringstream os;
    write_growth_csv(os, g);
    CHECK(os.str().rfind("r,grad_norm,T\n", 0) == 0);
}

TEST_CASE("exactly one boundary crossing") {
    const Setup L = linear();
    CHECK(boundary_crossings(L.field, L.spec.h, Vec{{0.3, 0.2}}, L.opt, 10.0) == 1);
    CHECK(boundary_crossings(L.field, L.spec.h, Vec{{2.0, -1.0}}, L.opt, 10.0) == 1);
    const Setup P = polar();
    CHECK(boundary_crossings(P.field, P.spec.h, Vec{{0.5, 1.0}}, P.opt, 10.0) == 1);
}

TEST_CASE("hitting CSV") {
    const Setup L = linear();
    std::vector<HittingResult> rows;
    HittingResult ok;
    grad_hitting_time(L.field, L.spec.h, Vec{{2.0, 0.0}}, L.opt, &ok);
    rows.push_back(ok);
    rows.push_back(hitting_time(L.field, L.spec.h, Vec{{0.0, 0.0}}, L.opt));
    std::ostringstream os;
    write_hitting_csv(os, rows, 2, true);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "x1,x2,T,xhit1,xhit2,gradT1,gradT2,status");
    std::getline(in, line);
    CHECK(line.rfind("2,0,0.69314718", 0) == 0);
    CHECK(line.substr(line.size() - 3) == ",ok");
    std::getline(in, line);
    CHECK(line == "0,0,nan,nan,nan,nan,nan,origin_too_close");
}
