#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace cureg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kDegToRad = std::numbers::pi / 180.0;

/// Wraps an angle in degrees into (-180, 180].
inline double wrap_degrees(double deg) {
    double r = std::fmod(deg, 360.0);
    if (r <= -180.0) r += 360.0;
    if (r > 180.0) r -= 360.0;
    return r;
}

/// Rigid pose of a slice plane relative to a volume.
/// Translations in millimeters, rotations in degrees, applied as Rz(rz)*Ry(ry)*Rx(rx)
/// about the volume's physical center.
struct Pose {
    double tx = 0, ty = 0, tz = 0;
    double rx = 0, ry = 0, rz = 0;

    static Pose from_array(const std::array<double, 6>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5]};
    }
    std::array<double, 6> to_array() const { return {tx, ty, tz, rx, ry, rz}; }

    Vec3 translation() const { return {tx, ty, tz}; }
    Vec3 rotation() const { return {rx, ry, rz}; }

    bool is_finite() const {
        for (double v : to_array())
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Same pose with angles stored in (-180, 180].
    Pose canonical() const {
        return {tx, ty, tz, wrap_degrees(rx), wrap_degrees(ry), wrap_degrees(rz)};
    }

    friend bool operator==(const Pose&, const Pose&) = default;
};

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// Lattice geometry of a frame (rank 2) or volume (rank 3).
/// Axis order of `shape` and `spacing` is x, y, z; data is stored z-major (z, then y, then x).
/// For frames x is the column (width) axis and y the row (height) axis; nz = 1.
struct GridSpec {
    std::array<std::size_t, 3> shape{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    Vec3 center = Vec3::Zero();
    int rank = 3;

    static GridSpec volume(std::size_t nx, std::size_t ny, std::size_t nz, double spacing_mm,
                           Vec3 center = Vec3::Zero()) {
        GridSpec g;
        g.shape = {nx, ny, nz};
        g.spacing = {spacing_mm, spacing_mm, spacing_mm};
        g.center = center;
        g.rank = 3;
        g.validate();
        return g;
    }

    static GridSpec plane(std::size_t width, std::size_t height, double spacing_mm) {
        GridSpec g;
        g.shape = {width, height, 1};
        g.spacing = {spacing_mm, spacing_mm, 1.0};
        g.rank = 2;
        g.validate();
        return g;
    }

    std::size_t nx() const { return shape[0]; }
    std::size_t ny() const { return shape[1]; }
    std::size_t nz() const { return shape[2]; }
    std::size_t width() const { return shape[0]; }
    std::size_t height() const { return shape[1]; }
    std::size_t depth() const { return shape[2]; }
    std::size_t size() const { return shape[0] * shape[1] * shape[2]; }

    void validate() const {
        if (rank != 2 && rank != 3) throw std::invalid_argument("GridSpec: rank must be 2 or 3");
        for (int a = 0; a < 3; ++a) {
            if (shape[a] < 1) throw std::invalid_argument("GridSpec: counts must be >= 1");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                throw std::invalid_argument("GridSpec: spacings must be positive and finite");
        }
        if (rank == 2 && shape[2] != 1) throw std::invalid_argument("GridSpec: 2D grid must have nz == 1");
        if (!center.allFinite()) throw std::invalid_argument("GridSpec: center must be finite");
    }

    friend bool operator==(const GridSpec& a, const GridSpec& b) {
        return a.shape == b.shape && a.spacing == b.spacing && a.center == b.center && a.rank == b.rank;
    }
};

inline Mat3 rotation_x(double deg) {
    const double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
    Mat3 m;
    m << 1, 0, 0, 0, c, -s, 0, s, c;
    return m;
}

inline Mat3 rotation_y(double deg) {
    const double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
    Mat3 m;
    m << c, 0, s, 0, 1, 0, -s, 0, c;
    return m;
}

inline Mat3 rotation_z(double deg) {
    const double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
    Mat3 m;
    m << c, -s, 0, s, c, 0, 0, 0, 1;
    return m;
}

/// Rz(rz) * Ry(ry) * Rx(rx), angles in degrees.
inline Mat3 rotation_from_euler(double rx, double ry, double rz) {
    if (!std::isfinite(rx) || !std::isfinite(ry) || !std::isfinite(rz))
        throw std::invalid_argument("rotation_from_euler: non-finite angle");
    return rotation_z(rz) * rotation_y(ry) * rotation_x(rx);
}

/// Partial derivatives of Rz*Ry*Rx with respect to (rx, ry, rz) in degrees.
inline std::array<Mat3, 3> rotation_derivatives(double rx, double ry, double rz) {
    const Mat3 Rx = rotation_x(rx), Ry = rotation_y(ry), Rz = rotation_z(rz);
    auto d_of = [](double deg, int axis) {
        const double c = std::cos(deg * kDegToRad), s = std::sin(deg * kDegToRad);
        Mat3 m = Mat3::Zero();
        if (axis == 0) m << 0, 0, 0, 0, -s, -c, 0, c, -s;
        if (axis == 1) m << -s, 0, c, 0, 0, 0, -c, 0, -s;
        if (axis == 2) m << -s, -c, 0, c, -s, 0, 0, 0, 0;
        return Mat3(m * kDegToRad);
    };
    return {Rz * Ry * d_of(rx, 0), Rz * d_of(ry, 1) * Rx, d_of(rz, 2) * Ry * Rx};
}

/// Maps slice-plane physical points p to volume physical points R*p + t + c (c = volume center).
inline RigidTransform pose_to_transform(const Pose& pose, const GridSpec& volume) {
    if (!pose.is_finite()) throw std::invalid_argument("pose_to_transform: non-finite pose");
    RigidTransform t;
    t.rotation = rotation_from_euler(pose.rx, pose.ry, pose.rz);
    t.translation = pose.translation() + volume.center;
    return t;
}

struct PoseDecomposition {
    Pose pose;
    bool gimbal_locked = false;
};

inline constexpr double kGimbalToleranceDeg = 1e-7;

/// Inverse of pose_to_transform. At |ry| = 90 deg the decomposition is not unique; rz is set to 0
/// and the result is flagged.
inline PoseDecomposition transform_to_pose(const RigidTransform& t, const GridSpec& volume) {
    const Mat3& R = t.rotation;
    PoseDecomposition out;
    const double cy = std::hypot(R(0, 0), R(1, 0));
    const double ry = std::atan2(-R(2, 0), cy) / kDegToRad;
    double rx = 0, rz = 0;
    if (std::abs(std::abs(ry) - 90.0) < kGimbalToleranceDeg) {
        out.gimbal_locked = true;
        rx = ry > 0 ? std::atan2(R(0, 1), R(1, 1)) / kDegToRad : std::atan2(-R(0, 1), R(1, 1)) / kDegToRad;
        rz = 0.0;
    } else {
        rx = std::atan2(R(2, 1), R(2, 2)) / kDegToRad;
        rz = std::atan2(R(1, 0), R(0, 0)) / kDegToRad;
    }
    const Vec3 tr = t.translation - volume.center;
    out.pose = Pose{tr.x(), tr.y(), tr.z(), rx, ry, rz}.canonical();
    return out;
}

/// In-plane physical offset of pixel (u = column, v = row) from the slice center, z = 0.
inline Vec3 slice_local_point(const GridSpec& slice, double u, double v) {
    return {(u - (static_cast<double>(slice.width()) - 1.0) / 2.0) * slice.spacing[0],
            (v - (static_cast<double>(slice.height()) - 1.0) / 2.0) * slice.spacing[1], 0.0};
}

/// Volume-space physical location of every slice pixel, row-major (v, u).
inline std::vector<Vec3> slice_points(const Pose& pose, const GridSpec& slice, const GridSpec& volume) {
    const RigidTransform tf = pose_to_transform(pose, volume);
    std::vector<Vec3> pts;
    pts.reserve(slice.width() * slice.height());
    for (std::size_t v = 0; v < slice.height(); ++v)
        for (std::size_t u = 0; u < slice.width(); ++u)
            pts.push_back(tf.apply(slice_local_point(slice, static_cast<double>(u), static_cast<double>(v))));
    return pts;
}

/// Four corners then the center, as (row, col) = (0,0), (0,W-1), (H-1,0), (H-1,W-1), ((H-1)/2,(W-1)/2).
inline std::array<Vec3, 5> five_point_set(const Pose& pose, const GridSpec& slice, const GridSpec& volume) {
    const RigidTransform tf = pose_to_transform(pose, volume);
    const double w1 = static_cast<double>(slice.width()) - 1.0;
    const double h1 = static_cast<double>(slice.height()) - 1.0;
    const std::array<std::array<double, 2>, 5> rc{{{0, 0}, {0, w1}, {h1, 0}, {h1, w1}, {h1 / 2.0, w1 / 2.0}}};
    std::array<Vec3, 5> out;
    for (std::size_t i = 0; i < 5; ++i) out[i] = tf.apply(slice_local_point(slice, rc[i][1], rc[i][0]));
    return out;
}

}  // namespace cureg
