#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cureg/geometry.hpp"
#include "cureg/image.hpp"

namespace cureg {

struct TrilinearSample {
    double value = 0.0;
    Vec3 gradient = Vec3::Zero();  ///< d value / d point, per millimeter
};

namespace detail {

// Continuous voxel coordinates within this distance of a lattice site are snapped onto it, so
// lattice-aligned sampling is exact despite the mm <-> index round trip.
inline constexpr double kLatticeSnap = 1e-9;

inline double to_index(double mm, double center, double spacing, std::size_t n) {
    double idx = (mm - center) / spacing + (static_cast<double>(n) - 1.0) / 2.0;
    const double r = std::round(idx);
    if (std::abs(idx - r) < kLatticeSnap) idx = r;
    return idx;
}

struct Cell {
    std::size_t i0 = 0, i1 = 0;
    double f = 0.0;
};

// Cell bracketing a continuous index known to lie in [0, n-1]. The last site uses the cell below it
// with f = 1 so a gradient is still defined there.
inline Cell cell_of(double idx, std::size_t n) {
    Cell c;
    if (n == 1) return c;
    auto i0 = static_cast<std::size_t>(std::floor(idx));
    if (i0 >= n - 1) i0 = n - 2;
    c.i0 = i0;
    c.i1 = i0 + 1;
    c.f = idx - static_cast<double>(i0);
    return c;
}

}  // namespace detail

/// Trilinear interpolation at a physical point. Points outside the [0, n-1] voxel cube on any axis
/// yield value 0 and gradient 0.
inline TrilinearSample trilinear_sample(const Volume& vol, const Vec3& point) {
    TrilinearSample out;
    const GridSpec& g = vol.spec;
    std::array<double, 3> idx;
    for (int a = 0; a < 3; ++a) {
        idx[a] = detail::to_index(point[a], g.center[a], g.spacing[a], g.shape[a]);
        if (!(idx[a] >= 0.0 && idx[a] <= static_cast<double>(g.shape[a]) - 1.0)) return out;
    }
    const detail::Cell cx = detail::cell_of(idx[0], g.nx());
    const detail::Cell cy = detail::cell_of(idx[1], g.ny());
    const detail::Cell cz = detail::cell_of(idx[2], g.nz());
    const std::size_t nx = g.nx(), ny = g.ny();
    auto at = [&](std::size_t x, std::size_t y, std::size_t z) {
        return static_cast<double>(vol.data[(z * ny + y) * nx + x]);
    };
    const double c000 = at(cx.i0, cy.i0, cz.i0), c100 = at(cx.i1, cy.i0, cz.i0);
    const double c010 = at(cx.i0, cy.i1, cz.i0), c110 = at(cx.i1, cy.i1, cz.i0);
    const double c001 = at(cx.i0, cy.i0, cz.i1), c101 = at(cx.i1, cy.i0, cz.i1);
    const double c011 = at(cx.i0, cy.i1, cz.i1), c111 = at(cx.i1, cy.i1, cz.i1);
    const double fx = cx.f, fy = cy.f, fz = cz.f;
    const double gx = 1.0 - fx, gy = 1.0 - fy, gz = 1.0 - fz;

    out.value = gz * (gy * (gx * c000 + fx * c100) + fy * (gx * c010 + fx * c110)) +
                fz * (gy * (gx * c001 + fx * c101) + fy * (gx * c011 + fx * c111));

    const double dfx = gz * (gy * (c100 - c000) + fy * (c110 - c010)) + fz * (gy * (c101 - c001) + fy * (c111 - c011));
    const double dfy = gz * (gx * (c010 - c000) + fx * (c110 - c100)) + fz * (gx * (c011 - c001) + fx * (c111 - c101));
    const double dfz = gy * (gx * (c001 - c000) + fx * (c101 - c100)) + fy * (gx * (c011 - c010) + fx * (c111 - c110));
    out.gradient = {g.nx() > 1 ? dfx / g.spacing[0] : 0.0, g.ny() > 1 ? dfy / g.spacing[1] : 0.0,
                    g.nz() > 1 ? dfz / g.spacing[2] : 0.0};
    return out;
}

/// Slice intensities in double precision, row-major (v, u).
inline std::vector<double> sample_slice(const Volume& vol, const Pose& pose, const GridSpec& slice) {
    const RigidTransform tf = pose_to_transform(pose, vol.spec);
    std::vector<double> out(slice.width() * slice.height());
    for (std::size_t v = 0; v < slice.height(); ++v)
        for (std::size_t u = 0; u < slice.width(); ++u) {
            const Vec3 p = tf.apply(slice_local_point(slice, static_cast<double>(u), static_cast<double>(v)));
            out[v * slice.width() + u] = trilinear_sample(vol, p).value;
        }
    return out;
}

inline Frame extract_slice(const Volume& vol, const Pose& pose, const GridSpec& slice) {
    Frame f(slice);
    const std::vector<double> vals = sample_slice(vol, pose, slice);
    for (std::size_t i = 0; i < vals.size(); ++i) f.data[i] = static_cast<float>(vals[i]);
    return f;
}

/// Per-pixel derivative of the sampled slice with respect to (tx, ty, tz, rx, ry, rz).
/// Rotation columns are per degree.
struct SliceJacobian {
    std::vector<double> values;                 ///< sampled intensities, row-major
    std::vector<std::array<double, 6>> d_pose;  ///< row-major, one 6-vector per pixel
};

inline SliceJacobian extract_slice_jacobian(const Volume& vol, const Pose& pose, const GridSpec& slice) {
    const RigidTransform tf = pose_to_transform(pose, vol.spec);
    const std::array<Mat3, 3> dR = rotation_derivatives(pose.rx, pose.ry, pose.rz);
    SliceJacobian J;
    const std::size_t n = slice.width() * slice.height();
    J.values.resize(n);
    J.d_pose.resize(n);
    for (std::size_t v = 0; v < slice.height(); ++v)
        for (std::size_t u = 0; u < slice.width(); ++u) {
            const Vec3 local = slice_local_point(slice, static_cast<double>(u), static_cast<double>(v));
            const TrilinearSample s = trilinear_sample(vol, tf.apply(local));
            const std::size_t i = v * slice.width() + u;
            J.values[i] = s.value;
            auto& row = J.d_pose[i];
            row[0] = s.gradient.x();
            row[1] = s.gradient.y();
            row[2] = s.gradient.z();
            for (int k = 0; k < 3; ++k) row[3 + k] = s.gradient.dot(dR[k] * local);
        }
    return J;
}

/// Resamples `vol` on the `out` lattice placed by `pose`. Out-grid points are taken relative to
/// the out grid's own center (z along the slice normal) and mapped with the volume-centered pivot.
inline Volume extract_subvolume(const Volume& vol, const Pose& pose, const GridSpec& out) {
    if (out.rank != 3) throw std::invalid_argument("extract_subvolume: output grid must be 3D");
    const RigidTransform tf = pose_to_transform(pose, vol.spec);
    Volume res(out);
    const double cx = (static_cast<double>(out.nx()) - 1.0) / 2.0;
    const double cy = (static_cast<double>(out.ny()) - 1.0) / 2.0;
    const double cz = (static_cast<double>(out.nz()) - 1.0) / 2.0;
    for (std::size_t z = 0; z < out.nz(); ++z)
        for (std::size_t y = 0; y < out.ny(); ++y)
            for (std::size_t x = 0; x < out.nx(); ++x) {
                const Vec3 local{(static_cast<double>(x) - cx) * out.spacing[0],
                                 (static_cast<double>(y) - cy) * out.spacing[1],
                                 (static_cast<double>(z) - cz) * out.spacing[2]};
                res.at(x, y, z) = static_cast<float>(trilinear_sample(vol, tf.apply(local)).value);
            }
    return res;
}

}  // namespace cureg
