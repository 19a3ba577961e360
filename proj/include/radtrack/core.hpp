#pragma once

// Shared geometric and kinematic types plus the exact geometry kernels used
// across the tracker: rotated BEV IoU and Doppler projection.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace radtrack {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat4 = Eigen::Matrix4d;
using Mat7 = Eigen::Matrix<double, 7, 7>;
using Covariance7 = Mat7;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wraps an angle into (-pi, pi].
inline double yaw_normalize(double theta) {
    if (!std::isfinite(theta)) {
        throw InvalidArgument("yaw_normalize: non-finite angle");
    }
    double r = std::remainder(theta, kTwoPi);
    if (r <= -kPi) r += kTwoPi;
    return r;
}

/// Oriented 3D box: center, extents and heading about +z.
struct Box3D {
    double x = 0.0, y = 0.0, z = 0.0;
    double l = 1.0, w = 1.0, h = 1.0;
    double yaw = 0.0;

    Box3D() = default;
    Box3D(double cx, double cy, double cz, double length, double width, double height, double heading)
        : x(cx), y(cy), z(cz), l(length), w(width), h(height), yaw(0.0) {
        if (!(l > 0.0) || !(w > 0.0) || !(h > 0.0)) {
            throw InvalidArgument("Box3D: extents must be positive");
        }
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(l) ||
            !std::isfinite(w) || !std::isfinite(h)) {
            throw InvalidArgument("Box3D: non-finite field");
        }
        yaw = yaw_normalize(heading);
    }

    Vec3 center() const { return {x, y, z}; }
    Vec4 pose() const { return {x, y, z, yaw}; }

    /// Parameters in the fixed order x, y, z, l, w, h, yaw.
    std::array<double, 7> params() const { return {x, y, z, l, w, h, yaw}; }

    bool operator==(const Box3D&) const = default;
};

/// Fused per-frame radar observation. Doppler is the signed radial velocity,
/// negative when the target approaches the sensor.
struct Detection {
    Box3D box;
    double doppler = 0.0;
    double confidence = 1.0;
    std::array<double, 7> box_std{};  // x, y, z, l, w, h, yaw

    void validate() const {
        if (!(confidence >= 0.0 && confidence <= 1.0)) {
            throw InvalidArgument("Detection: confidence outside [0, 1]");
        }
        for (double s : box_std) {
            if (!(s >= 0.0)) throw InvalidArgument("Detection: negative box_std");
        }
        if (!std::isfinite(doppler)) throw InvalidArgument("Detection: non-finite doppler");
    }

    bool operator==(const Detection&) const = default;
};

/// Filter state: pose plus linear velocity. Vector layout is
/// [x, y, z, yaw, vx, vy, vz].
struct KinematicState {
    double x = 0.0, y = 0.0, z = 0.0;
    double yaw = 0.0;
    double vx = 0.0, vy = 0.0, vz = 0.0;

    Vec3 position() const { return {x, y, z}; }
    Vec3 velocity() const { return {vx, vy, vz}; }
    Vec4 pose() const { return {x, y, z, yaw}; }

    Vec7 to_vector() const {
        Vec7 v;
        v << x, y, z, yaw, vx, vy, vz;
        return v;
    }

    static KinematicState from_vector(const Vec7& v) {
        return {v(0), v(1), v(2), yaw_normalize(v(3)), v(4), v(5), v(6)};
    }

    bool finite() const { return to_vector().allFinite(); }

    bool operator==(const KinematicState&) const = default;
};

/// Symmetric within a relative tolerance and eigenvalues >= -tol * trace.
inline bool is_valid_covariance(const Mat7& p, double tol = 1e-9) {
    if (!p.allFinite()) return false;
    const double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
    if ((p - p.transpose()).cwiseAbs().maxCoeff() > tol * scale) return false;
    Eigen::SelfAdjointEigenSolver<Mat7> es(0.5 * (p + p.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -tol * std::max(1.0, std::abs(p.trace()));
}

namespace detail {

struct Point2 {
    double x, y;
};

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Counter-clockwise footprint corners.
inline std::array<Point2, 4> footprint(const Box3D& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = 0.5 * b.l, hw = 0.5 * b.w;
    const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
    std::array<Point2, 4> out{};
    for (std::size_t i = 0; i < 4; ++i) {
        out[i] = {b.x + c * local[i][0] - s * local[i][1], b.y + s * local[i][0] + c * local[i][1]};
    }
    return out;
}

inline double polygon_area(const std::vector<Point2>& poly) {
    double a = 0.0;
    for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * std::abs(a);
}

// Sutherland-Hodgman clip of a convex subject polygon by a convex CCW clip polygon.
inline std::vector<Point2> clip_convex(std::vector<Point2> subject, const std::array<Point2, 4>& clip) {
    for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
        const Point2 a = clip[e];
        const Point2 b = clip[(e + 1) % clip.size()];
        std::vector<Point2> input;
        input.swap(subject);
        for (std::size_t i = 0; i < input.size(); ++i) {
            const Point2 cur = input[i];
            const Point2 prev = input[(i + input.size() - 1) % input.size()];
            const double dc = cross(a, b, cur);
            const double dp = cross(a, b, prev);
            const bool cur_in = dc >= 0.0;
            const bool prev_in = dp >= 0.0;
            if (cur_in != prev_in) {
                const double t = dp / (dp - dc);
                subject.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
            }
            if (cur_in) subject.push_back(cur);
        }
    }
    return subject;
}

}  // namespace detail

/// Intersection-over-union of the two yaw-rotated footprints in the x-y plane.
inline double bev_iou(const Box3D& a, const Box3D& b) {
    // Circumscribed-circle reject.
    const double ra = 0.5 * std::hypot(a.l, a.w);
    const double rb = 0.5 * std::hypot(b.l, b.w);
    if (std::hypot(a.x - b.x, a.y - b.y) >= ra + rb) return 0.0;

    // Clip both ways and average so the result is exactly symmetric.
    const auto fa = detail::footprint(a);
    const auto fb = detail::footprint(b);
    // Shoelace areas keep identical boxes at exactly 1.
    const double area_a = detail::polygon_area({fa.begin(), fa.end()});
    const double area_b = detail::polygon_area({fb.begin(), fb.end()});
    const double i1 =
        detail::polygon_area(detail::clip_convex(std::vector<detail::Point2>(fa.begin(), fa.end()), fb));
    const double i2 =
        detail::polygon_area(detail::clip_convex(std::vector<detail::Point2>(fb.begin(), fb.end()), fa));
    const double inter = std::min({0.5 * (i1 + i2), area_a, area_b});
    const double uni = area_a + area_b - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

/// Projection of the state velocity onto the sensor-to-target line of sight.
inline double radial_velocity(const KinematicState& state, const Vec3& sensor_origin) {
    const Vec3 los = state.position() - sensor_origin;
    const double range = los.norm();
    if (!(range > 0.0)) {
        throw GeometryError("radial_velocity: target coincides with sensor origin");
    }
    return state.velocity().dot(los) / range;
}

/// Circular mean of angles, accumulated relative to the first angle so that a
/// set of identical angles returns that angle bit-exactly.
inline double circular_mean(const std::vector<double>& angles) {
    if (angles.empty()) return 0.0;
    const double ref = angles.front();
    double s = 0.0, c = 0.0;
    for (double a : angles) {
        s += std::sin(a - ref);
        c += std::cos(a - ref);
    }
    if (s == 0.0 && c == 0.0) return yaw_normalize(ref);
    return yaw_normalize(ref + std::atan2(s, c));
}

/// Arithmetic mean accumulated relative to the first value (exact for
/// constant inputs).
inline double stable_mean(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const double ref = values.front();
    double acc = 0.0;
    for (double v : values) acc += v - ref;
    return ref + acc / static_cast<double>(values.size());
}

}  // namespace radtrack
