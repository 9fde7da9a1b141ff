#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cureg/geometry.hpp"
#include "cureg/image.hpp"
#include "cureg/network.hpp"
#include "cureg/ops.hpp"
#include "cureg/resample.hpp"
#include "cureg/simulate.hpp"

namespace cureg {

// ---- differentiable resampling ------------------------------------------------------------------

/// Slice of `vol` at a pose given as a [6] tensor (tx, ty, tz mm; rx, ry, rz degrees) -> [H, W].
/// The gradient flows to the pose only, through the analytic slice Jacobian.
template <class T>
Tensor<T> resample_slice(const Volume& vol, const Tensor<T>& pose, const GridSpec& slice) {
    if (pose.numel() != 6) throw ad::ShapeError("resample_slice: pose must have 6 elements, got " + ad::to_string(pose.shape()));
    const auto pv = pose.values();
    const Pose p{static_cast<double>(pv[0]), static_cast<double>(pv[1]), static_cast<double>(pv[2]),
                 static_cast<double>(pv[3]), static_cast<double>(pv[4]), static_cast<double>(pv[5])};
    SliceJacobian J = extract_slice_jacobian(vol, p, slice);
    std::vector<T> out(J.values.begin(), J.values.end());
    return ad::make_result<T>({slice.height(), slice.width()}, std::move(out), {pose}, "resample_slice",
                              [jac = std::move(J.d_pose)](ad::Node<T>& n) {
                                  ad::Node<T>& np = *n.parents[0];
                                  std::array<double, 6> acc{};
                                  for (std::size_t i = 0; i < jac.size(); ++i)
                                      for (int k = 0; k < 6; ++k) acc[k] += static_cast<double>(n.grad[i]) * jac[i][k];
                                  for (int k = 0; k < 6; ++k) np.grad[k] += static_cast<T>(acc[k]);
                              });
}

// ---- loss terms ---------------------------------------------------------------------------------

/// Mean over components of 0.5 x^2 / beta for |x| < beta, |x| - 0.5 beta otherwise.
template <class T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& truth, T beta = T(1)) {
    using namespace ad;
    if (pred.shape() != truth.shape())
        throw ShapeError("smooth_l1: shapes " + to_string(pred.shape()) + " and " + to_string(truth.shape()) + " differ");
    const Tensor<T> a = abs(sub(pred, truth));
    const Tensor<T> over = relu(shift(a, -beta));  // |x| - beta where positive
    const Tensor<T> q = sub(a, over);               // min(|x|, beta)
    return mean_all(add(scale(mul(q, q), T(0.5) / beta), over));
}

/// Area average over non-overlapping factor x factor blocks.
inline Frame downsample_area(const Frame& f, std::size_t factor) {
    const std::size_t w = f.spec.width(), h = f.spec.height();
    if (factor == 0 || w % factor || h % factor)
        throw std::invalid_argument("downsample_area: " + std::to_string(w) + "x" + std::to_string(h) +
                                    " is not divisible by " + std::to_string(factor));
    Frame out(GridSpec::plane(w / factor, h / factor, f.spec.spacing[0] * static_cast<double>(factor)));
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t y = 0; y < h / factor; ++y)
        for (std::size_t x = 0; x < w / factor; ++x) {
            double s = 0;
            for (std::size_t dy = 0; dy < factor; ++dy)
                for (std::size_t dx = 0; dx < factor; ++dx) s += f.at(x * factor + dx, y * factor + dy);
            out.at(x, y) = static_cast<float>(s * inv);
        }
    return out;
}

/// Mean squared error between the epicardium channel of a [2, H', W'] prompt and a target [H', W'].
template <class T>
Tensor<T> prompt_loss(const Tensor<T>& prompt, const Tensor<T>& target) {
    using namespace ad;
    if (prompt.rank() != 3 || target.rank() != 2 || prompt.dim(1) != target.dim(0) || prompt.dim(2) != target.dim(1))
        throw ShapeError("prompt_loss: prompt " + to_string(prompt.shape()) + " vs target " + to_string(target.shape()));
    const Tensor<T> e = reshape(slice(prompt, 0, 0, 1), target.shape());
    const Tensor<T> diff = sub(e, target);
    return mean_all(mul(diff, diff));
}

template <class T>
Tensor<T> reg_loss(const Tensor<T>& d_pred, const Tensor<T>& d_true) {
    if (d_pred.numel() != 3 || d_true.numel() != 3) throw ad::ShapeError("reg_loss: expected 3-vectors");
    return smooth_l1(d_pred, d_true);
}

// ---- SSIM / MS-SSIM -----------------------------------------------------------------------------

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double dynamic_range = 1.0;
    int scales = 3;
};

namespace detail {

template <class T>
Tensor<T> gaussian_kernel(const SsimOptions& o) {
    std::vector<double> g(static_cast<std::size_t>(o.window));
    double s = 0;
    const int r = o.window / 2;
    for (int i = 0; i < o.window; ++i) s += g[i] = std::exp(-0.5 * (i - r) * (i - r) / (o.sigma * o.sigma));
    std::vector<T> k(g.size() * g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) k[i * g.size() + j] = static_cast<T>(g[i] * g[j] / (s * s));
    const auto w = static_cast<std::size_t>(o.window);
    return Tensor<T>::constant({1, 1, w, w}, std::move(k));
}

// Gaussian-weighted local mean with zero padding, renormalized by the in-image window mass.
template <class T>
struct LocalMean {
    Tensor<T> kernel, inv_mass;
    std::size_t pad;

    LocalMean(std::size_t h, std::size_t w, const SsimOptions& o) : kernel(gaussian_kernel<T>(o)), pad(o.window / 2) {
        const Tensor<T> ones = Tensor<T>::full({1, h, w}, T(1));
        const Tensor<T> mass = ad::conv2d(ones, kernel, Tensor<T>(), {1, 1}, {pad, pad});
        std::vector<T> inv(mass.numel());
        for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = T(1) / mass[i];
        inv_mass = Tensor<T>::constant({1, h, w}, std::move(inv));
    }
    Tensor<T> operator()(const Tensor<T>& x) const {
        return ad::mul(ad::conv2d(x, kernel, Tensor<T>(), {1, 1}, {pad, pad}), inv_mass);
    }
};

// a, b: [1, H, W]
template <class T>
Tensor<T> ssim_single(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& o) {
    using namespace ad;
    const LocalMean<T> G(a.dim(1), a.dim(2), o);
    const T c1 = static_cast<T>((0.01 * o.dynamic_range) * (0.01 * o.dynamic_range));
    const T c2 = static_cast<T>((0.03 * o.dynamic_range) * (0.03 * o.dynamic_range));
    const Tensor<T> mu_a = G(a), mu_b = G(b);
    const Tensor<T> mu_ab = mul(mu_a, mu_b);
    const Tensor<T> var_a = sub(G(mul(a, a)), mul(mu_a, mu_a));
    const Tensor<T> var_b = sub(G(mul(b, b)), mul(mu_b, mu_b));
    const Tensor<T> cov = sub(G(mul(a, b)), mu_ab);
    const Tensor<T> num = mul(shift(scale(mu_ab, T(2)), c1), shift(scale(cov, T(2)), c2));
    const Tensor<T> den = mul(shift(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1), shift(add(var_a, var_b), c2));
    return mean_all(div(num, den));
}

template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
    const Tensor<T> k = Tensor<T>::full({1, 1, 2, 2}, T(0.25));
    return ad::conv2d(x, k, Tensor<T>(), {2, 2}, {0, 0});
}

template <class T>
Tensor<T> as_image3(const Tensor<T>& x) {
    if (x.rank() == 2) return ad::reshape(x, {1, x.dim(0), x.dim(1)});
    if (x.rank() == 3 && x.dim(0) == 1) return x;
    throw ad::ShapeError("ssim: expected an [H, W] image, got " + ad::to_string(x.shape()));
}

}  // namespace detail

/// Single-scale SSIM of two [H, W] tensors.
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, SsimOptions o = {}) {
    if (a.shape() != b.shape())
        throw ad::ShapeError("ssim: shapes " + ad::to_string(a.shape()) + " and " + ad::to_string(b.shape()) + " differ");
    const Tensor<T> x = cureg::detail::as_image3(a), y = cureg::detail::as_image3(b);
    if (x.dim(1) < static_cast<std::size_t>(o.window) || x.dim(2) < static_cast<std::size_t>(o.window))
        throw std::invalid_argument("ssim: image " + ad::to_string(a.shape()) + " is smaller than the " +
                                    std::to_string(o.window) + "-pixel window");
    return cureg::detail::ssim_single(x, y, o);
}

/// Smallest image side accepted by msssim: the coarsest pyramid level must keep 8 pixels.
inline std::size_t msssim_min_side(int scales) { return std::size_t{8} << (scales - 1); }

/// Multi-scale SSIM: per-scale SSIM on a 2x average-pooled pyramid, combined with equal weights.
template <class T>
Tensor<T> msssim(const Tensor<T>& a, const Tensor<T>& b, SsimOptions o = {}) {
    using namespace ad;
    if (a.shape() != b.shape())
        throw ShapeError("msssim: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
    if (o.scales < 1) throw std::invalid_argument("msssim: scales must be >= 1");
    Tensor<T> x = cureg::detail::as_image3(a), y = cureg::detail::as_image3(b);
    const std::size_t need = msssim_min_side(o.scales);
    if (x.dim(1) < need || x.dim(2) < need)
        throw std::invalid_argument("msssim: image " + to_string(a.shape()) + " is smaller than " +
                                    std::to_string(need) + "x" + std::to_string(need) + " needed for " +
                                    std::to_string(o.scales) + " scales");
    std::vector<Tensor<T>> per_scale;
    for (int s = 0; s < o.scales; ++s) {
        if (s > 0) {
            if (x.dim(1) % 2 || x.dim(2) % 2) {
                x = slice(slice(x, 1, 0, x.dim(1) & ~std::size_t{1}), 2, 0, x.dim(2) & ~std::size_t{1});
                y = slice(slice(y, 1, 0, y.dim(1) & ~std::size_t{1}), 2, 0, y.dim(2) & ~std::size_t{1});
            }
            x = cureg::detail::avg_pool2(x);
            y = cureg::detail::avg_pool2(y);
        }
        per_scale.push_back(reshape(cureg::detail::ssim_single(x, y, o), {1}));
    }
    return reduce(Reduce::Mean, concat(per_scale, 0), 0);
}

template <class T>
Tensor<T> frame_tensor(const Frame& f) {
    return Tensor<T>::constant({f.spec.height(), f.spec.width()}, std::vector<T>(f.data.begin(), f.data.end()));
}

inline double msssim(const Frame& a, const Frame& b, SsimOptions o = {}) {
    return msssim(frame_tensor<double>(a), frame_tensor<double>(b), o).item();
}
inline double ssim(const Frame& a, const Frame& b, SsimOptions o = {}) {
    return ssim(frame_tensor<double>(a), frame_tensor<double>(b), o).item();
}

// ---- total loss ---------------------------------------------------------------------------------

struct LossWeights {
    double trans = 1.0, rot = 1.0, prompt = 0.1, reg = 0.1, sim = 0.5;
};

template <class T>
struct LossTerms {
    Tensor<T> total, trans, rot, prompt, reg, sim;
};

/// Ground truth used by the loss, in tensor form.
template <class T>
struct LossTarget {
    const Volume* volume = nullptr;  ///< sample volume the predicted pose is resampled from
    Frame anchor;
    Tensor<T> mask_small;  ///< [H', W'] area-averaged epicardium mask
    Tensor<T> translation, rotation, dist;
};

template <class T>
LossTarget<T> make_loss_target(const Sample& s, std::size_t prompt_h) {
    LossTarget<T> t;
    t.volume = &s.volume;
    t.anchor = s.anchor;
    const std::size_t factor = s.mask.spec.height() / prompt_h;
    const Frame small = downsample_area(s.mask, factor);
    t.mask_small = frame_tensor<T>(small);
    const auto p = s.pose_gt.to_array();
    t.translation = Tensor<T>::constant({3}, {T(p[0]), T(p[1]), T(p[2])});
    t.rotation = Tensor<T>::constant({3}, {T(p[3]), T(p[4]), T(p[5])});
    t.dist = Tensor<T>::constant({3}, {T(s.dist_gt[0]), T(s.dist_gt[1]), T(s.dist_gt[2])});
    return t;
}

/// Weighted sum of the translation, rotation, prompt, inter-frame distance, and similarity terms.
/// The similarity term compares the anchor with the slice resampled at the predicted pose.
template <class T>
LossTerms<T> total_loss(const Prediction<T>& pred, const LossTarget<T>& tgt, const LossWeights& w,
                        const SsimOptions& so = {}) {
    using namespace ad;
    LossTerms<T> L;
    L.trans = smooth_l1(pred.translation, tgt.translation);
    L.rot = smooth_l1(pred.rotation, tgt.rotation);
    L.prompt = prompt_loss(pred.prompt, tgt.mask_small);
    L.reg = reg_loss(pred.dist, tgt.dist);
    const Tensor<T> resampled = resample_slice(*tgt.volume, pred.pose_tensor(), tgt.anchor.spec);
    L.sim = shift(scale(msssim(resampled, frame_tensor<T>(tgt.anchor), so), T(-1)), T(1));
    L.total = add(add(add(add(scale(L.trans, T(w.trans)), scale(L.rot, T(w.rot))), scale(L.prompt, T(w.prompt))),
                      scale(L.reg, T(w.reg))),
                  scale(L.sim, T(w.sim)));
    return L;
}

// ---- metrics ------------------------------------------------------------------------------------

/// Mean distance between corresponding corner and center points of the two slice placements.
inline double dist_err(const Pose& pred, const Pose& truth, const GridSpec& slice, const GridSpec& volume) {
    const auto a = five_point_set(pred, slice, volume), b = five_point_set(truth, slice, volume);
    double s = 0;
    for (int i = 0; i < 5; ++i) s += (a[i] - b[i]).norm();
    return s / 5.0;
}

struct TeRe {
    double te = 0, re = 0;
};

/// L1 translation error (mm) and L1 rotation error (degrees, differences wrapped).
inline TeRe te_re(const Pose& pred, const Pose& truth) {
    TeRe r;
    const auto a = pred.to_array(), b = truth.to_array();
    for (int k = 0; k < 3; ++k) r.te += std::abs(a[k] - b[k]);
    for (int k = 3; k < 6; ++k) r.re += std::abs(wrap_degrees(a[k] - b[k]));
    return r;
}

/// Pearson correlation. If either input is constant the value is 1 when both are the same
/// constant and 0 otherwise.
template <class A, class B>
double ncc(std::span<const A> a, std::span<const B> b) {
    if (a.size() != b.size()) throw std::invalid_argument("ncc: length mismatch");
    const std::size_t n = a.size();
    if (n == 0) throw std::invalid_argument("ncc: empty input");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) {
        if (saa != 0.0 || sbb != 0.0) return 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (static_cast<double>(a[i]) != static_cast<double>(b[i])) return 0.0;
        return 1.0;
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double ncc(const Frame& a, const Frame& b) {
    return ncc(std::span<const float>(a.data), std::span<const float>(b.data));
}

/// Correlation between predicted and true 6-parameter vectors of one sample.
inline double para_ncc(const Pose& pred, const Pose& truth) {
    const auto a = pred.to_array(), b = truth.to_array();
    return ncc(std::span<const double>(a), std::span<const double>(b));
}

/// Per-parameter correlation across samples: element k correlates parameter k of all predictions
/// with parameter k of all ground truths.
inline std::array<double, 6> para_ncc_across(const std::vector<Pose>& pred, const std::vector<Pose>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("para_ncc_across: length mismatch");
    std::array<double, 6> out{};
    if (pred.empty()) return out;
    for (int k = 0; k < 6; ++k) {
        std::vector<double> a, b;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            a.push_back(pred[i].to_array()[k]);
            b.push_back(truth[i].to_array()[k]);
        }
        out[k] = ncc(std::span<const double>(a), std::span<const double>(b));
    }
    return out;
}

}  // namespace cureg
