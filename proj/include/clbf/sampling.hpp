#pragma once

// Low-discrepancy sample sets and the coordinate chart used to measure
// distance from the origin.

#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace clbf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// How state coordinates map to the physical plane. `polar` states are (r, θ):
/// the origin is r = 0 and rays from it keep θ fixed.
enum class Chart { cartesian, polar };

Chart parse_chart(std::string_view name);
std::string_view chart_name(Chart chart);

/// Distance from the origin in physical space.
double chart_radius(Chart chart, const Vec& x);

/// Point at physical distance s along the unit direction `direction`.
Vec point_on_ray(Chart chart, const Vec& direction, double s);

struct Box {
    Vec lo;
    Vec hi;

    bool contains(const Vec& x, double slack = 0.0) const;
    /// Largest s such that the chart ball of radius s about the origin stays in the box.
    double inscribed_radius(Chart chart) const;
    /// Upper bound on the chart radius of any box point.
    double circumscribed_radius(Chart chart) const;
};

/// Seeded Sobol points in [0,1)^dim. Identical seeds give identical streams.
class QuasiRandom {
public:
    QuasiRandom(int dim, std::uint64_t seed);
    Vec next();

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    int dim_;
};

/// `count` quasi-random points of the box, in sequence order.
std::vector<Vec> box_samples(const Box& box, int count, std::uint64_t seed);

/// `count` quasi-uniform unit directions in physical space (n = 2: equally
/// spaced angles starting at 0).
std::vector<Vec> sphere_directions(int dim, int count, std::uint64_t seed = 0);

/// Quasi-uniform points of the unit ball (radius distributed as u^(1/dim)).
std::vector<Vec> unit_ball_samples(int dim, int count, std::uint64_t seed);

}  // namespace clbf
