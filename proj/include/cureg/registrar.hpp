#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cureg/dataset.hpp"
#include "cureg/losses.hpp"
#include "cureg/network.hpp"
#include "cureg/resample.hpp"

namespace cureg {

// ---- classical registration ---------------------------------------------------------------------

enum class Objective { Ncc, Msssim };

struct OptimizerConfig {
    std::size_t max_evals = 3000;
    double init_step_mm = 2.0;
    double init_step_deg = 4.0;
    double min_step_mm = 0.05;
    double min_step_deg = 0.1;
    double shrink = 0.5;
    std::size_t restarts = 0;  ///< extra runs from seeded jittered inits
    double jitter_mm = 2.0;
    double jitter_deg = 4.0;
    std::uint64_t seed = 0;
    Objective objective = Objective::Ncc;

    void validate() const {
        if (max_evals < 1) throw std::invalid_argument("OptimizerConfig: max_evals must be >= 1");
        if (!(shrink > 0.0 && shrink < 1.0)) throw std::invalid_argument("OptimizerConfig: shrink must lie in (0, 1)");
        if (!(init_step_mm > 0 && init_step_deg > 0 && min_step_mm > 0 && min_step_deg > 0))
            throw std::invalid_argument("OptimizerConfig: step sizes must be positive");
    }
};

struct ClassicalResult {
    Pose pose;
    double objective = 0.0;
    std::vector<double> trace;  ///< best objective after each evaluation, nondecreasing
    std::size_t evals = 0;
    bool exhausted = false;  ///< max_evals reached before the steps converged
    std::size_t best_run = 0;
};

inline double registration_objective(const Volume& vol, const Frame& frame, const Pose& p, Objective obj) {
    const Frame s = extract_slice(vol, p, frame.spec);
    return obj == Objective::Ncc ? ncc(frame, s) : msssim(frame, s);
}

namespace detail {

// Coordinate pattern search from `start`; evaluations are counted against `budget`.
inline ClassicalResult pattern_search(const Volume& vol, const Frame& frame, const Pose& start,
                                      const OptimizerConfig& cfg, std::size_t budget) {
    ClassicalResult r;
    std::array<double, 6> x = start.to_array();
    std::array<double, 6> step{cfg.init_step_mm, cfg.init_step_mm, cfg.init_step_mm,
                               cfg.init_step_deg, cfg.init_step_deg, cfg.init_step_deg};
    double fx = -std::numeric_limits<double>::infinity();
    auto eval = [&](const std::array<double, 6>& p) {
        double f = registration_objective(vol, frame, Pose::from_array(p), cfg.objective);
        if (!std::isfinite(f)) f = -std::numeric_limits<double>::infinity();
        ++r.evals;
        r.trace.push_back(std::max(fx, f));
        return f;
    };
    fx = eval(x);
    auto converged = [&] { return step[0] < cfg.min_step_mm && step[3] < cfg.min_step_deg; };
    while (!converged() && r.evals < budget) {
        bool improved = false;
        for (int k = 0; k < 6 && r.evals < budget; ++k) {
            if (step[k] < (k < 3 ? cfg.min_step_mm : cfg.min_step_deg)) continue;
            for (double sign : {1.0, -1.0}) {
                if (r.evals >= budget) break;
                std::array<double, 6> c = x;
                c[k] += sign * step[k];
                double fc = eval(c);
                if (!(fc > fx)) continue;
                improved = true;
                // Keep moving while the same step pays off.
                while (fc > fx) {
                    x = c;
                    fx = fc;
                    if (r.evals >= budget) break;
                    c[k] += sign * step[k];
                    fc = eval(c);
                }
                break;
            }
        }
        if (!improved)
            for (auto& s : step) s *= cfg.shrink;
    }
    r.exhausted = !converged();
    r.pose = Pose::from_array(x);
    r.objective = fx;
    return r;
}

}  // namespace detail

/// Derivative-free pose search maximizing the similarity between `frame` and the slice of `vol`.
/// Restarts begin from seeded jitters of `init`; the best run wins (ties go to the earliest).
inline ClassicalResult classical_register(const Volume& vol, const Frame& frame, const Pose& init,
                                          const OptimizerConfig& cfg = {}) {
    cfg.validate();
    if (!init.is_finite()) throw std::invalid_argument("classical_register: non-finite init pose");
    const std::size_t runs = cfg.restarts + 1;
    const std::size_t per_run = std::max<std::size_t>(1, cfg.max_evals / runs);
    ClassicalResult best;
    std::vector<double> trace;
    std::size_t evals = 0;
    bool exhausted = false;
    for (std::size_t run = 0; run < runs; ++run) {
        Pose start = init;
        if (run > 0) {
            Rng rng = child_rng(cfg.seed, 3, run);
            const Pose j = random_pose(rng, cfg.jitter_mm, cfg.jitter_deg);
            const auto a = init.to_array(), b = j.to_array();
            std::array<double, 6> s{};
            for (int k = 0; k < 6; ++k) s[k] = a[k] + b[k];
            start = Pose::from_array(s);
        }
        ClassicalResult r = detail::pattern_search(vol, frame, start, cfg, per_run);
        evals += r.evals;
        exhausted = exhausted || r.exhausted;
        const double prior = trace.empty() ? -std::numeric_limits<double>::infinity() : trace.back();
        for (double v : r.trace) trace.push_back(std::max(prior, v));
        if (run == 0 || r.objective > best.objective) {
            best = std::move(r);
            best.best_run = run;
        }
    }
    best.trace = std::move(trace);
    best.evals = evals;
    best.exhausted = exhausted;
    best.pose = best.pose.canonical();
    return best;
}

// ---- network registration -----------------------------------------------------------------------

/// One-shot prediction from a single frame; the anchor is repeated into all four input channels.
template <class T>
Prediction<T> nn_register(const ParamStore<T>& ps, const NetConfig& cfg, const Volume& vol, const Frame& frame) {
    if (frame.spec.height() != cfg.slice_h || frame.spec.width() != cfg.slice_w)
        throw ConfigError("nn_register: frame is " + std::to_string(frame.spec.width()) + "x" +
                          std::to_string(frame.spec.height()) + " but the checkpoint expects " +
                          std::to_string(cfg.slice_w) + "x" + std::to_string(cfg.slice_h));
    if (vol.spec.nz() != cfg.vol_d || vol.spec.ny() != cfg.vol_h || vol.spec.nx() != cfg.vol_w)
        throw ConfigError("nn_register: volume grid does not match the checkpoint configuration");
    return cureg_forward(ps, cfg, repeated_frame_tensor<T>(frame), volume_tensor<T>(vol));
}

// ---- training -----------------------------------------------------------------------------------

struct TrainConfig {
    std::size_t steps = 200;
    std::size_t batch = 8;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double clip_norm = 10.0;  ///< global gradient-norm clip; 0 disables
    std::uint64_t seed = 0;
    LossWeights weights;

    void validate() const {
        if (steps < 1 || batch < 1) throw std::invalid_argument("TrainConfig: steps and batch must be >= 1");
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("TrainConfig: learning rate must be >= 0");
    }
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t step, double value, const std::string& what = "loss")
        : std::runtime_error("training diverged at step " + std::to_string(step) + " (" + what + " " +
                             std::to_string(value) + ")"),
          step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

template <class T>
class Adam {
public:
    Adam(const ParamStore<T>& ps, double lr, double b1, double b2, double eps) : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {
        for (const auto& t : ps.tensors()) {
            m_.emplace_back(t.numel(), 0.0);
            v_.emplace_back(t.numel(), 0.0);
        }
    }

    void step(ParamStore<T>& ps) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            Tensor<T> p = ps.tensors()[i];
            auto val = p.mutable_values();
            const auto g = p.grad();
            if (g.empty()) continue;
            for (std::size_t k = 0; k < val.size(); ++k) {
                const double gk = static_cast<double>(g[k]);
                m_[i][k] = b1_ * m_[i][k] + (1 - b1_) * gk;
                v_[i][k] = b2_ * v_[i][k] + (1 - b2_) * gk * gk;
                const double upd = lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
                val[k] = static_cast<T>(static_cast<double>(val[k]) - upd);
            }
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Scales all gradients so their joint L2 norm is at most max_norm; returns the norm before clipping.
template <class T>
double clip_grad_norm(ParamStore<T>& ps, double max_norm) {
    double sq = 0;
    for (const auto& t : ps.tensors())
        for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& t : ps.tensors()) {
            Tensor<T> h = t;
            if (h.grad().empty()) continue;
            for (auto& g : h.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * s);
        }
    }
    return norm;
}

/// Training samples, loaded once; volumes shared between the transforms of one patient.
struct SampleSet {
    std::vector<Sample> samples;

    static SampleSet load(const std::filesystem::path& root, const DatasetManifest& m, const std::string& split) {
        SampleSet s;
        std::map<std::string, Volume> volumes;
        for (std::size_t i : m.indices(split)) {
            const ManifestEntry& e = m.entries[i];
            Sample smp;
            auto it = volumes.find(e.volume);
            if (it == volumes.end()) it = volumes.emplace(e.volume, read_volume(root / e.volume)).first;
            smp.volume = it->second;
            smp.anchor = read_frame(root / e.anchor);
            smp.mask = read_frame(root / e.mask);
            for (int k = 0; k < 3; ++k) smp.adjacent[k] = read_frame(root / e.adjacent[k]);
            smp.pose_gt = e.pose_gt;
            smp.dist_gt = e.dist_gt;
            s.samples.push_back(std::move(smp));
        }
        return s;
    }
};

struct TrainResult {
    ParamStore<float> params;
    std::vector<double> history;  ///< mean total loss of the mini-batch at each step
};

/// Mini-batch Adam on the hybrid loss. Samples are visited in seeded per-epoch permutations;
/// gradients are averaged over the batch in a fixed serial order, so runs are bit-reproducible.
inline TrainResult train(const std::vector<Sample>& data, const NetConfig& net, const TrainConfig& cfg,
                         const std::function<void(std::size_t, double)>& on_step = {}) {
    cfg.validate();
    net.validate();
    if (data.empty()) throw std::invalid_argument("train: no training samples");
    TrainResult res{init_params<float>(net, cfg.seed), {}};
    ParamStore<float>& ps = res.params;
    Adam<float> opt(ps, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);

    std::vector<LossTarget<float>> targets;
    std::vector<Tensor<float>> frames, volumes;
    for (const Sample& s : data) {
        targets.push_back(make_loss_target<float>(s, net.feat_h()));
        frames.push_back(frames_tensor<float>(s.anchor, s.adjacent));
        volumes.push_back(volume_tensor<float>(s.volume));
    }

    Rng rng = child_rng(cfg.seed, 4, 0);
    std::vector<std::size_t> order(data.size());
    std::size_t cursor = order.size();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        ps.zero_grad();
        double batch_loss = 0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
                cursor = 0;
            }
            const std::size_t i = order[cursor++];
            const Prediction<float> pred = cureg_forward(ps, net, frames[i], volumes[i]);
            const LossTerms<float> L = total_loss(pred, targets[i], cfg.weights);
            const double v = L.total.item();
            if (!std::isfinite(v)) throw TrainingDiverged(step, v);
            batch_loss += v;
            ad::backward(ad::scale(L.total, 1.0f / static_cast<float>(cfg.batch)));
        }
        batch_loss /= static_cast<double>(cfg.batch);
        const double gnorm = clip_grad_norm(ps, cfg.clip_norm);
        if (!std::isfinite(gnorm)) throw TrainingDiverged(step, gnorm, "gradient norm");
        opt.step(ps);
        res.history.push_back(batch_loss);
        if (on_step) on_step(step, batch_loss);
    }
    return res;
}

// ---- evaluation ---------------------------------------------------------------------------------

struct EvalRow {
    std::string id;
    Pose pred, truth;
    double dist_err = 0, img_ncc = 0, img_ssim = 0, te = 0, re = 0, para_ncc = 0;  ///< similarities in %
    double seconds = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_dist_err = 0, mean_img_ncc = 0, mean_img_ssim = 0, mean_te = 0, mean_re = 0, mean_para_ncc = 0;
    std::array<double, 6> para_ncc_per_parameter{};  ///< % across samples, tx ty tz rx ry rz
    double fps = 0;

    void finalize() {
        const double n = static_cast<double>(rows.size());
        double sd = 0, sn = 0, ss = 0, st = 0, sr = 0, sp = 0, secs = 0;
        std::vector<Pose> pred, truth;
        for (const auto& r : rows) {
            sd += r.dist_err;
            sn += r.img_ncc;
            ss += r.img_ssim;
            st += r.te;
            sr += r.re;
            sp += r.para_ncc;
            secs += r.seconds;
            pred.push_back(r.pred);
            truth.push_back(r.truth);
        }
        mean_dist_err = sd / n;
        mean_img_ncc = sn / n;
        mean_img_ssim = ss / n;
        mean_te = st / n;
        mean_re = sr / n;
        mean_para_ncc = sp / n;
        para_ncc_per_parameter = para_ncc_across(pred, truth);
        for (auto& v : para_ncc_per_parameter) v *= 100.0;
        fps = secs > 0 ? n / secs : std::numeric_limits<double>::infinity();
    }
};

using RegisterFn = std::function<Pose(const Sample&)>;

inline EvalRow evaluate_one(const std::string& id, const Sample& s, const Pose& pred, double seconds) {
    EvalRow r;
    r.id = id;
    r.pred = pred;
    r.truth = s.pose_gt;
    r.seconds = seconds;
    r.dist_err = dist_err(pred, s.pose_gt, s.anchor.spec, s.volume.spec);
    const Frame resampled = extract_slice(s.volume, pred, s.anchor.spec);
    r.img_ncc = 100.0 * ncc(s.anchor, resampled);
    r.img_ssim = 100.0 * ssim(s.anchor, resampled);
    const TeRe tr = te_re(pred, s.pose_gt);
    r.te = tr.te;
    r.re = tr.re;
    r.para_ncc = 100.0 * para_ncc(pred, s.pose_gt);
    return r;
}

/// Registers every sample of `split` and scores it against its ground truth. Image scores compare
/// the input anchor with the slice resampled at the predicted pose.
inline EvalReport evaluate(const std::filesystem::path& root, const DatasetManifest& m, const RegisterFn& fn,
                           const std::string& split = "test") {
    const auto idx = m.indices(split);
    if (idx.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
    EvalReport rep;
    for (std::size_t i : idx) {
        const Sample s = load_sample(root, m.entries[i]);
        const auto t0 = std::chrono::steady_clock::now();
        const Pose pred = fn(s);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rep.rows.push_back(evaluate_one(m.entries[i].id, s, pred, secs));
    }
    rep.finalize();
    return rep;
}

}  // namespace cureg
