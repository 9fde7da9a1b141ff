#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "cureg/geometry.hpp"
#include "cureg/image.hpp"
#include "cureg/resample.hpp"

namespace cureg {

using Rng = std::mt19937_64;

/// Independent generator for one (seed, stream, index) triple, so per-volume work is reproducible
/// regardless of the order or parallelism it runs in.
inline Rng child_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

/// Uniform perturbation: translations in [-trans_range, trans_range] mm, rotations in
/// [-rot_range, rot_range] degrees.
inline Pose random_pose(Rng& rng, double trans_range = 10.0, double rot_range = 20.0) {
    if (!(trans_range > 0.0) || !(rot_range > 0.0))
        throw std::invalid_argument("random_pose: ranges must be positive");
    std::uniform_real_distribution<double> t(-trans_range, trans_range), r(-rot_range, rot_range);
    Pose p;
    p.tx = t(rng);
    p.ty = t(rng);
    p.tz = t(rng);
    p.rx = r(rng);
    p.ry = r(rng);
    p.rz = r(rng);
    return p;
}

struct PhantomParams {
    double shell_thickness_mm = 5.0;
    double smoothing_sigma_mm = 1.5;
    double shell_intensity = 0.85;
    double chamber_intensity = 0.1;
    double background_intensity = 0.3;
    double texture_amplitude = 0.07;
    int texture_waves = 6;
};

struct Phantom {
    Volume volume;
    Volume mask;
};

namespace detail {

inline void gaussian_smooth_axis(Volume& v, int axis, double sigma_vox) {
    if (sigma_vox <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_vox)));
    std::vector<double> k(2 * radius + 1);
    double ksum = 0;
    for (int i = -radius; i <= radius; ++i) ksum += k[i + radius] = std::exp(-0.5 * i * i / (sigma_vox * sigma_vox));
    for (auto& w : k) w /= ksum;

    const auto n = v.spec.shape;
    const std::size_t len = n[axis];
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? n[0] : n[0] * n[1];
    std::vector<double> line(len);
    const std::size_t lines = v.data.size() / len;
    for (std::size_t l = 0; l < lines; ++l) {
        // Base offset of line l: enumerate the other two axes.
        std::size_t base;
        if (axis == 0) base = l * n[0];
        else if (axis == 1) base = (l / n[0]) * n[0] * n[1] + (l % n[0]);
        else base = l;
        for (std::size_t i = 0; i < len; ++i) line[i] = v.data[base + i * stride];
        for (std::size_t i = 0; i < len; ++i) {
            double acc = 0;
            for (int j = -radius; j <= radius; ++j) {
                const long src = std::clamp<long>(static_cast<long>(i) + j, 0, static_cast<long>(len) - 1);
                acc += k[j + radius] * line[static_cast<std::size_t>(src)];
            }
            v.data[base + i * stride] = static_cast<float>(acc);
        }
    }
}

}  // namespace detail

/// Smooth synthetic heart-like volume: an ellipsoidal bright shell (the epicardium band) around a
/// dark chamber, over a low-frequency textured background, Gaussian-smoothed and min-max
/// normalized to [0, 1]. The mask is 1 inside the shell band.
inline Phantom make_phantom(Rng& rng, const GridSpec& spec, const PhantomParams& prm = {}) {
    if (spec.rank != 3) throw std::invalid_argument("make_phantom: grid must be 3D");
    const double half_xy = 0.5 * std::min(spec.nx() * spec.spacing[0], spec.ny() * spec.spacing[1]);
    const double half_z = 0.5 * spec.nz() * spec.spacing[2];
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    const Vec3 center = spec.center + Vec3(uni(-0.1, 0.1) * half_xy, uni(-0.1, 0.1) * half_xy, uni(-0.2, 0.2) * half_z);
    const Vec3 axes(uni(0.45, 0.65) * half_xy, uni(0.45, 0.65) * half_xy, uni(0.6, 0.9) * half_xy);
    const Mat3 orient = rotation_from_euler(uni(-15, 15), uni(-15, 15), uni(-180, 180));
    const double r_mean = std::cbrt(axes.x() * axes.y() * axes.z());

    struct Wave {
        Vec3 k;
        double phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < prm.texture_waves; ++i) {
        Vec3 dir(uni(-1, 1), uni(-1, 1), uni(-1, 1));
        if (dir.norm() < 1e-6) dir = Vec3::UnitX();
        const double wavelength = uni(8.0, 25.0);
        waves.push_back({dir.normalized() * (2.0 * std::numbers::pi / wavelength), uni(0, 2 * std::numbers::pi),
                         prm.texture_amplitude * uni(0.5, 1.0)});
    }

    Phantom ph{Volume(spec), Volume(spec)};
    const double cx = (spec.nx() - 1) / 2.0, cy = (spec.ny() - 1) / 2.0, cz = (spec.nz() - 1) / 2.0;
    for (std::size_t z = 0; z < spec.nz(); ++z)
        for (std::size_t y = 0; y < spec.ny(); ++y)
            for (std::size_t x = 0; x < spec.nx(); ++x) {
                const Vec3 p = spec.center + Vec3((x - cx) * spec.spacing[0], (y - cy) * spec.spacing[1],
                                                  (z - cz) * spec.spacing[2]);
                const Vec3 q = orient.transpose() * (p - center);
                const double rho = Vec3(q.x() / axes.x(), q.y() / axes.y(), q.z() / axes.z()).norm();
                const double d = (rho - 1.0) * r_mean;  // approximate signed distance to the mid-shell
                double texture = 0;
                for (const auto& w : waves) texture += w.amp * std::sin(w.k.dot(p) + w.phase);
                double val;
                bool shell = false;
                if (std::abs(d) <= 0.5 * prm.shell_thickness_mm) {
                    val = prm.shell_intensity + 0.5 * texture;
                    shell = true;
                } else if (d < 0) {
                    val = prm.chamber_intensity + 0.3 * texture;
                } else {
                    val = prm.background_intensity + texture;
                }
                ph.volume.at(x, y, z) = static_cast<float>(val);
                ph.mask.at(x, y, z) = shell ? 1.0f : 0.0f;
            }

    for (int a = 0; a < 3; ++a) detail::gaussian_smooth_axis(ph.volume, a, prm.smoothing_sigma_mm / spec.spacing[a]);
    const auto [mn, mx] = std::minmax_element(ph.volume.data.begin(), ph.volume.data.end());
    const double lo = *mn, range = std::max(1e-12, static_cast<double>(*mx) - lo);
    for (auto& v : ph.volume.data) v = static_cast<float>(std::clamp((v - lo) / range, 0.0, 1.0));
    return ph;
}

struct SampleConfig {
    GridSpec slice = GridSpec::plane(128, 128, 0.62);
    GridSpec volume = GridSpec::volume(128, 128, 32, 0.62);  ///< grid of the identity-resampled volume
    double delta_mm = 1.24;                                   ///< spacing between adjacent frames
    double trans_range_mm = 10.0;
    double rot_range_deg = 20.0;
};

struct Sample {
    Volume volume;
    Frame anchor;
    std::array<Frame, 3> adjacent;
    Frame mask;
    Pose pose_gt;
    std::array<double, 3> dist_gt{};
};

/// Pose of adjacent frame i: the anchor pose moved i * delta along its own slice normal.
inline Pose adjacent_pose(const Pose& anchor, int i, double delta_mm) {
    const Vec3 normal = rotation_from_euler(anchor.rx, anchor.ry, anchor.rz).col(2);
    const Vec3 t = anchor.translation() + (i * delta_mm) * normal;
    return {t.x(), t.y(), t.z(), anchor.rx, anchor.ry, anchor.rz};
}

/// Draws one registration sample: a random pose, the anchor slice and epicardium mask at it,
/// three parallel neighbours along the slice normal, and the identity-resampled volume.
inline Sample generate_sample(const Volume& vol, const Volume& mask_vol, Rng& rng, const SampleConfig& cfg = {}) {
    if (!(vol.spec == mask_vol.spec)) throw std::invalid_argument("generate_sample: volume and mask grids differ");
    Sample s;
    s.pose_gt = random_pose(rng, cfg.trans_range_mm, cfg.rot_range_deg);
    s.anchor = extract_slice(vol, s.pose_gt, cfg.slice);
    s.mask = extract_slice(mask_vol, s.pose_gt, cfg.slice);
    for (int i = 1; i <= 3; ++i) {
        s.adjacent[i - 1] = extract_slice(vol, adjacent_pose(s.pose_gt, i, cfg.delta_mm), cfg.slice);
        s.dist_gt[i - 1] = i * cfg.delta_mm;
    }
    s.volume = extract_subvolume(vol, Pose{}, cfg.volume);
    return s;
}

}  // namespace cureg
