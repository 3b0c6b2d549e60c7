#include "clbf/sampling.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <boost/math/special_functions/erf.hpp>
#include <boost/random/sobol.hpp>

namespace clbf {

Chart parse_chart(std::string_view name) {
    if (name == "cartesian") return Chart::cartesian;
    if (name == "polar") return Chart::polar;
    throw std::invalid_argument("unknown chart `" + std::string(name) + "`");
}

std::string_view chart_name(Chart chart) { return chart == Chart::polar ? "polar" : "cartesian"; }

double chart_radius(Chart chart, const Vec& x) {
    if (chart == Chart::polar) return std::abs(x[0]);
    return x.norm();
}

Vec point_on_ray(Chart chart, const Vec& direction, double s) {
    if (chart == Chart::polar) {
        Vec p(2);
        p << s, std::atan2(direction[1], direction[0]);
        return p;
    }
    return s * direction;
}

bool Box::contains(const Vec& x, double slack) const {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
    }
    return true;
}

double Box::inscribed_radius(Chart chart) const {
    if (chart == Chart::polar) return hi[0];
    double r = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < lo.size(); ++i) r = std::min({r, -lo[i], hi[i]});
    return r;
}

double Box::circumscribed_radius(Chart chart) const {
    if (chart == Chart::polar) return std::max(std::abs(lo[0]), std::abs(hi[0]));
    return lo.cwiseAbs().cwiseMax(hi.cwiseAbs()).norm();
}

struct QuasiRandom::Impl {
    explicit Impl(int dim) : engine(static_cast<std::size_t>(dim)) {}
    boost::random::sobol engine;
};

QuasiRandom::QuasiRandom(int dim, std::uint64_t seed) : impl_(std::make_shared<Impl>(dim)), dim_(dim) {
    // Skip the all-zero first point; each seed starts a disjoint block.
    impl_->engine.seed(1 + seed * (std::uint64_t{1} << 20));
}

Vec QuasiRandom::next() {
    constexpr double scale = 1.0 / 18446744073709551616.0;  // 2^-64
    Vec u(dim_);
    for (int i = 0; i < dim_; ++i) u[i] = static_cast<double>(impl_->engine()) * scale;
    return u;
}

std::vector<Vec> box_samples(const Box& box, int count, std::uint64_t seed) {
    QuasiRandom q(static_cast<int>(box.lo.size()), seed);
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const Vec u = q.next();
        out.push_back(box.lo + u.cwiseProduct(box.hi - box.lo));
    }
    return out;
}

std::vector<Vec> sphere_directions(int dim, int count, std::uint64_t seed) {
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(count));
    if (dim == 1) {
        for (int k = 0; k < count; ++k) out.push_back(Vec::Constant(1, k % 2 == 0 ? 1.0 : -1.0));
        return out;
    }
    if (dim == 2) {
        for (int k = 0; k < count; ++k) {
            const double a = 2.0 * std::numbers::pi * k / count;
            Vec d(2);
            d << std::cos(a), std::sin(a);
            out.push_back(d);
        }
        return out;
    }
    QuasiRandom q(dim, seed);
    while (static_cast<int>(out.size()) < count) {
        Vec g = q.next();
        for (int i = 0; i < dim; ++i) {
            const double p = std::clamp(2.0 * g[i] - 1.0, -1.0 + 1e-15, 1.0 - 1e-15);
            g[i] = std::numbers::sqrt2 * boost::math::erf_inv(p);
        }
        const double norm = g.norm();
        if (norm > 1e-12) out.push_back(g / norm);
    }
    return out;
}

std::vector<Vec> unit_ball_samples(int dim, int count, std::uint64_t seed) {
    QuasiRandom q(dim + 1, seed);
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        Vec u = q.next();
        Vec g(dim);
        for (int i = 0; i < dim; ++i) {
            const double p = std::clamp(2.0 * u[i] - 1.0, -1.0 + 1e-15, 1.0 - 1e-15);
            g[i] = std::numbers::sqrt2 * boost::math::erf_inv(p);
        }
        const double norm = g.norm();
        if (norm < 1e-12) continue;
        const double radius = std::pow(std::max(u[dim], 1e-300), 1.0 / dim);
        out.push_back(g * (radius / norm));
    }
    return out;
}

}  // namespace clbf
