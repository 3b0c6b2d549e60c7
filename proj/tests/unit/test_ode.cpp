#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "clbf/errors.hpp"
#include "clbf/ode.hpp"

using namespace clbf;
using namespace clbf::ode;

namespace {

Vec decay(const Vec& x) { return -x; }

Vec polar_field(const Vec& x) { return Vec{{-x[0] * x[0] * x[0], 1.0 / std::sqrt(x[0])}}; }

Vec scalar(double v) { return Vec::Constant(1, v); }

}  // namespace

TEST_CASE("exponential decay forward and backward") {
    const Trajectory fwd = integrate(decay, scalar(1.0), 0.0, 1.0);
    CHECK(fwd.status() == Status::completed);
    CHECK(fwd.final_state()[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-8));
    CHECK(std::abs(fwd.interpolate(0.5)[0] - std::exp(-0.5)) <= 1e-7);

    const Trajectory bwd = integrate(decay, scalar(1.0), 0.0, -1.0);
    CHECK(bwd.direction() == Direction::backward);
    CHECK(std::abs(bwd.final_state()[0] - std::numbers::e) <= 1e-7);
    CHECK(std::abs(bwd.interpolate(-0.5)[0] - std::exp(0.5)) <= 1e-7);
}

TEST_CASE("polar flow reaches r = 1 at the closed-form time") {
    const Trajectory t = integrate(polar_field, Vec{{2.0, 0.0}}, 0.0, 0.375);
    CHECK(std::abs(t.final_state()[0] - 1.0) <= 1e-7);
}

TEST_CASE("segments tile the span and interpolation hits stored states") {
    const Trajectory t = integrate(polar_field, Vec{{2.0, 0.0}}, 0.0, 3.0);
    const auto& segs = t.segments();
    REQUIRE(segs.size() > 1);
    CHECK(segs.front().t0 == 0.0);
    CHECK(segs.back().t1 == 3.0);
    for (std::size_t k = 0; k < segs.size(); ++k) {
        if (k > 0) CHECK(segs[k].t0 == segs[k - 1].t1);
        CHECK((t.interpolate(segs[k].t0) - segs[k].y0).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK(t.interpolate(3.0) == t.final_state());
    CHECK_THROWS_AS((void)t.interpolate(3.5), std::out_of_range);
    CHECK_THROWS_AS((void)t.interpolate(-0.1), std::out_of_range);
}

TEST_CASE("semigroup and inversion") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(0.5, 2.0), S(0.05, 1.0);
    const OdeTolerances tol;
    for (int k = 0; k < 20; ++k) {
        const Vec x0{{U(rng), U(rng)}};
        const double s = S(rng), t = S(rng);
        const Vec direct = integrate(polar_field, x0, 0.0, s + t).final_state();
        const Vec mid = integrate(polar_field, x0, 0.0, s).final_state();
        const Vec split = integrate(polar_field, mid, 0.0, t).final_state();
        const double bound = 10.0 * (tol.atol + tol.rtol * direct.cwiseAbs().maxCoeff());
        CHECK((direct - split).cwiseAbs().maxCoeff() <= bound);
        const Vec back = integrate(polar_field, direct, 0.0, -(s + t)).final_state();
        CHECK((back - x0).cwiseAbs().maxCoeff() <= 10.0 * (tol.atol + tol.rtol * x0.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("event detection") {
    const auto half = [](const Vec& x) { return x[0] - 0.5; };
    const EventResult ev = detect_event(decay, scalar(1.0), half, 10.0, Direction::forward);
    REQUIRE(ev.found);
    CHECK(std::abs(ev.t - std::numbers::ln2) <= 1e-8);
    CHECK(std::abs(half(ev.x)) <= 1e-10 * 1.5);

    const EventResult zero = detect_event(decay, scalar(0.5), half, 10.0, Direction::forward);
    REQUIRE(zero.found);
    CHECK(zero.t == 0.0);
    CHECK(zero.x[0] == 0.5);

    const auto never = [](const Vec& x) { return x[0] + 1.0; };
    CHECK_FALSE(detect_event(decay, scalar(1.0), never, 10.0, Direction::forward).found);

    const EventResult back = detect_event(decay, scalar(0.25), half, 10.0, Direction::backward);
    REQUIRE(back.found);
    CHECK(std::abs(back.t + std::numbers::ln2) <= 1e-8);
}

TEST_CASE("integration failure is reported") {
    // x' = x^2 blows up at t = 1
    const auto blow = [](const Vec& x) { return Vec(x.cwiseProduct(x)); };
    const Trajectory t = integrate(blow, scalar(1.0), 0.0, 2.0);
    CHECK(t.status() == Status::step_failure);
    CHECK(t.t_end() < 1.0 + 1e-6);
    CHECK_FALSE(t.message().empty());
    const auto never = [](const Vec&) { return 1.0; };
    CHECK_THROWS_AS((void)detect_event(blow, scalar(1.0), never, 2.0, Direction::forward), IntegrationError);

    // domain errors reject steps and eventually end the run
    const auto sqrt_field = [](const Vec& x) {
        if (x[0] < 0.0) throw DomainError("sqrt of negative", "sqrt(x1)");
        return Vec(-Vec::Constant(1, 1.0));
    };
    const Trajectory d = integrate(sqrt_field, scalar(0.5), 0.0, 2.0);
    CHECK(d.status() == Status::step_failure);
    CHECK(d.final_state()[0] >= 0.0);
    CHECK(d.final_state()[0] <= 1e-6);
}

TEST_CASE("variational equation") {
    const auto jac_decay = [](const Vec& x) { return Mat(-Mat::Identity(x.size(), x.size())); };
    const VariationalResult v = integrate_variational(decay, jac_decay, Vec{{1.0, 2.0}}, 0.0, 1.0);
    CHECK((v.final_phi() - std::exp(-1.0) * Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-7);
    CHECK(v.phi(0.0) == Mat::Identity(2, 2));

    Mat A(2, 2);
    A << 0, 1, -1, 0;
    const auto rot = [A](const Vec& x) { return Vec(A * x); };
    const auto jrot = [A](const Vec&) { return A; };
    const VariationalResult r = integrate_variational(rot, jrot, Vec{{1.0, 0.0}}, 0.0, std::numbers::pi / 2);
    Mat expected(2, 2);
    expected << 0, 1, -1, 0;
    CHECK((r.final_phi() - expected).cwiseAbs().maxCoeff() <= 1e-7);

    // Φ columns against finite differences of the flow map; det Φ > 0
    const auto jpolar = [](const Vec& x) {
        Mat J(2, 2);
        J << -3.0 * x[0] * x[0], 0.0, -0.5 * std::pow(x[0], -1.5), 0.0;
        return J;
    };
    const Vec x0{{1.3, 0.4}};
    const VariationalResult p = integrate_variational(polar_field, jpolar, x0, 0.0, 0.8);
    for (int j = 0; j < 2; ++j) {
        Vec xp = x0, xm = x0;
        xp[j] += 1e-5;
        xm[j] -= 1e-5;
        const Vec col = (integrate(polar_field, xp, 0.0, 0.8).final_state() -
                         integrate(polar_field, xm, 0.0, 0.8).final_state()) /
                        2e-5;
        CHECK((col - p.final_phi().col(j)).norm() <= 1e-4 * std::max(1.0, col.norm()));
    }
    for (const auto& seg : p.augmented().segments()) CHECK(p.phi(seg.t1).determinant() > 0.0);
    CHECK((p.final_state() - integrate(polar_field, x0, 0.0, 0.8).final_state()).norm() <= 1e-8);
}

TEST_CASE("trajectory CSV") {
    const Trajectory t = integrate(decay, Vec{{1.0, 2.0}}, 0.0, 1.0);
    std::ostringstream os;
    t.write_csv(os, 3);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,x1,x2");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
}
