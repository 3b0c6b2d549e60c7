#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "clbf/errors.hpp"
#include "clbf/model.hpp"

using namespace clbf;

namespace {

SystemSpec example(std::string_view name) { return load_system(example_config(name)); }

}  // namespace

TEST_CASE("built-in examples load") {
    for (const auto& name : example_names()) {
        CAPTURE(name);
        CHECK_NOTHROW((void)example(name));
    }
    const SystemSpec polar = example("polar");
    CHECK(polar.external());
    CHECK(polar.chart == Chart::polar);
    CHECK(example_config("polar")["V"] == "4*r^2 + r^5*sin(th)");
    const auto lin = example_config("linear");
    CHECK(lin["f"] == nlohmann::json::array({"0", "0"}));
    CHECK(lin["g"] == nlohmann::json::array({nlohmann::json::array({"1", "0"}), nlohmann::json::array({"0", "1"})}));
    CHECK_THROWS_AS((void)example_config("nope"), ConfigError);
}

TEST_CASE("config validation errors") {
    auto doc = example_config("linear");
    SUBCASE("origin outside safe set") {
        doc["h"] = "-1 - x1^2";
        try {
            (void)load_system(doc);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("origin outside safe set") != std::string::npos);
        }
    }
    SUBCASE("V(0) != 0") {
        doc["V"] = "1 + x1^2 + x2^2";
        CHECK_THROWS_AS((void)load_system(doc), ConfigError);
    }
    SUBCASE("f(0) != 0") {
        doc["f"] = {"1", "0"};
        CHECK_THROWS_AS((void)load_system(doc), ConfigError);
    }
    SUBCASE("V not positive on the box") {
        doc["V"] = "x1^2 - x2^2";
        CHECK_THROWS_AS((void)load_system(doc), ConfigError);
    }
    SUBCASE("unknown key") {
        doc["extra"] = 1;
        CHECK_THROWS_AS((void)load_system(doc), ConfigError);
    }
    SUBCASE("both f,g and closed_loop") {
        doc["closed_loop"] = {"-x1", "-x2"};
        CHECK_THROWS_AS((void)load_system(doc), ConfigError);
    }
    SUBCASE("bad expression names the field") {
        doc["V"] = "x1^2 + y";
        try {
            (void)load_system(doc);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).rfind("V:", 0) == 0);
        }
    }
    SUBCASE("dimension mismatch") {
        doc["f"] = {"0"};
        CHECK_THROWS_AS((void)load_system(doc), ConfigError);
    }
}

TEST_CASE("eval_dynamics examples") {
    const SystemSpec lin = example("linear");
    CHECK(eval_dynamics(lin, Vec{{1.0, 0.0}}, Vec{{0.0, 0.0}}).isZero());
    CHECK(eval_dynamics(lin, Vec{{1.0, 0.0}}, Vec{{-1.0, 0.0}}).isApprox(Vec{{-1.0, 0.0}}));
    const SystemSpec polar = example("polar");
    CHECK(eval_dynamics(polar, Vec{{1.0, 0.0}}, Vec()).isApprox(Vec{{-1.0, 1.0}}));
}

TEST_CASE("eval_dynamics is affine in u") {
    const SystemSpec di = example("double_integrator");
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int k = 0; k < 100; ++k) {
        const Vec x{{U(rng), U(rng)}};
        const Vec u1 = Vec::Constant(1, U(rng)), u2 = Vec::Constant(1, U(rng));
        const Vec r = eval_dynamics(di, x, u1 + u2) - eval_dynamics(di, x, u1) - eval_dynamics(di, x, u2) +
                      eval_dynamics(di, x, Vec::Zero(1));
        CHECK(r.cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("field_jacobian") {
    const SystemSpec polar = example("polar");
    const VectorField F = expression_field(polar.closed_loop);
    JacobianSource src{};
    const Mat J = field_jacobian(F, Vec{{1.0, 0.0}}, &src);
    CHECK(src == JacobianSource::automatic_differentiation);
    CHECK(J(0, 0) == doctest::Approx(-3.0));
    CHECK(J(0, 1) == 0.0);
    CHECK(J(1, 0) == doctest::Approx(-0.5));
    CHECK(J(1, 1) == 0.0);

    VectorField neg;
    neg.dim = 2;
    neg.eval = [](const Vec& x) { return Vec(-x); };
    const Mat Jn = field_jacobian(neg, Vec{{0.3, -2.0}}, &src);
    CHECK(src == JacobianSource::finite_difference);
    CHECK((Jn + Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-8);

    const VectorField kink = expression_field({expr::Expression::parse("abs(x1)", {"x1"})});
    CHECK_THROWS_AS((void)field_jacobian(kink, Vec::Zero(1)), DomainError);
}

TEST_CASE("check_linearization") {
    const SystemSpec lin = example("linear");
    const auto good = check_linearization(lin, -Mat::Identity(2, 2));
    CHECK(good.pass);
    CHECK(good.A.isZero());
    CHECK(good.B.isIdentity());
    CHECK((good.P - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((good.M + 2.0 * Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(good.hessian_asymmetry <= 1e-6);

    CHECK_FALSE(check_linearization(lin, Mat::Identity(2, 2)).pass);
    CHECK_FALSE(check_linearization(lin, Mat::Zero(2, 2)).pass);

    auto doc = example_config("linear");
    doc["V"] = "x1^2 + x2^4";
    CHECK_THROWS_AS((void)check_linearization(load_system(doc), -Mat::Identity(2, 2)), CertificateError);
}

TEST_CASE("cholesky pivots") {
    Mat a(2, 2);
    a << 4, 2, 2, 3;
    const auto p = cholesky_pivots(a);
    REQUIRE(p.size() == 2);
    CHECK(p[0] == doctest::Approx(4.0));
    CHECK(p[1] == doctest::Approx(2.0));
    const auto z = cholesky_pivots(Mat::Zero(2, 2));
    CHECK(z.size() == 1);
    CHECK(z[0] == 0.0);
}

TEST_CASE("small_control_probe") {
    const SystemSpec lin = example("linear");
    const auto rows = small_control_probe(lin, {1.0, 0.1, 0.01, std::numeric_limits<double>::infinity()});
    for (const auto& r : rows) {
        CAPTURE(r.eps);
        CHECK(r.pass);
        CHECK(r.delta > 0.0);
    }

    // no control authority near the origin and an increasing drift
    nlohmann::json doc = {
        {"state_dim", 1},         {"input_dim", 1},      {"f", {"x1"}},       {"g", {{"0"}}},
        {"V", "x1^2"},            {"h", "1 - x1^2"},     {"controller", "sontag"},
        {"domain_box", {{-2, 2}}}};
    const SystemSpec bad = load_system(doc);
    for (const auto& r : small_control_probe(bad, {1.0, 0.1})) CHECK_FALSE(r.pass);
}
