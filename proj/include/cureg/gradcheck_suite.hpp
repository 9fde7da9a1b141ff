#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cureg/dataset.hpp"
#include "cureg/gradcheck.hpp"
#include "cureg/losses.hpp"
#include "cureg/network.hpp"

// Named finite-difference checks over every differentiable block, run in 64-bit mode at toy shapes.

namespace cureg {

struct GradcheckCase {
    std::string name;
    std::function<ad::GradcheckReport()> run;
};

struct GradcheckOutcome {
    std::string name;
    ad::GradcheckReport report;
    double seconds = 0;
};

namespace detail::gc {

inline Tensor<double> random_tensor(Shape shape, unsigned seed, double lo = -1, double hi = 1, bool grad = true) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor<double>::make(std::move(shape), std::move(v), grad);
}

// Weighted sum with fixed random weights so every output element matters.
inline Tensor<double> probe(const Tensor<double>& y, unsigned seed) {
    return ad::sum_all(ad::mul(y, random_tensor(y.shape(), seed, -1, 1, false)));
}

inline std::vector<Tensor<double>> with_prefix(const ParamStore<double>& ps, const std::vector<std::string>& prefixes) {
    std::vector<Tensor<double>> out;
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (const auto& p : prefixes)
            if (ps.names()[i].rfind(p, 0) == 0) {
                out.push_back(ps.tensors()[i]);
                break;
            }
    return out;
}

inline NetConfig toy_net() {
    NetConfig c;
    c.d = 4;
    c.m = 8;
    c.frame_hidden = 6;
    c.head_hidden = 5;
    c.slice_h = c.slice_w = 32;
    c.vol_d = 8;
    c.vol_h = c.vol_w = 32;
    return c;
}

inline ParamStore<double> toy_params(unsigned seed, double amp) {
    auto ps = init_params<double>(toy_net(), seed);
    perturb_params(ps, seed + 1, amp);
    return ps;
}

inline DatasetConfig toy_dataset() {
    DatasetConfig cfg;
    cfg.n_volumes = 1;
    cfg.seed = 77;
    cfg.sample.slice = GridSpec::plane(32, 32, 2.48);
    cfg.sample.volume = GridSpec::volume(32, 32, 8, 2.48);
    return cfg;
}

inline ad::GradcheckOptions opts(std::size_t max_elements = 0) {
    ad::GradcheckOptions o;
    o.h = 1e-6;  // keeps central differences clear of ReLU and interpolation kinks
    o.tol = 1e-4;
    o.max_elements_per_input = max_elements;
    return o;
}

}  // namespace detail::gc

inline std::vector<GradcheckCase> gradcheck_cases() {
    using namespace detail::gc;
    using ad::gradcheck;
    std::vector<GradcheckCase> cases;
    auto reg = [&](std::string name, std::function<ad::GradcheckReport()> f) { cases.push_back({std::move(name), std::move(f)}); };

    reg("elementwise", [] {
        const auto a = random_tensor({3, 4}, 1), b = random_tensor({3, 4}, 2, 0.5, 2.0), c = random_tensor({4}, 3);
        return gradcheck(
            [&] {
                using namespace ad;
                const auto e = add(sub(mul(a, b), div(a, b)), c);
                return add(add(probe(relu(e), 4), probe(silu(e), 5)), add(probe(softplus(e), 6), probe(shift(scale(e, 2.5), 1.0), 7)));
            },
            {a, b, c}, opts());
    });
    reg("matmul", [] {
        const auto a = random_tensor({3, 5}, 11), b = random_tensor({5, 4}, 12);
        return gradcheck([&] { return probe(ad::add(ad::matmul(a, b), ad::transpose(ad::matmul(ad::transpose(b), ad::transpose(a)))), 13); }, {a, b},
                         opts());
    });
    reg("softmax", [] {
        const auto x = random_tensor({3, 4, 5}, 21, -2, 2);
        return gradcheck([&] { return ad::add(probe(ad::softmax(x, 0), 22), probe(ad::softmax(x, 2), 23)); }, {x}, opts());
    });
    reg("reduce", [] {
        const auto x = random_tensor({3, 4, 5}, 31);
        return gradcheck(
            [&] {
                using namespace ad;
                return add(add(probe(reduce(Reduce::Sum, x, 0), 32), probe(reduce(Reduce::Mean, x, 1), 33)),
                           add(probe(reduce(Reduce::Max, x, 2), 34), probe(slice(concat<double>({x, x}, 1), 1, 2, 6), 35)));
            },
            {x}, opts());
    });
    reg("conv2d", [] {
        const auto x = random_tensor({3, 9, 9}, 41), w = random_tensor({4, 3, 3, 3}, 42), b = random_tensor({4}, 43);
        return gradcheck([&] { return ad::add(probe(ad::conv2d(x, w, b, {1, 1}, {1, 1}), 44), probe(ad::conv2d(x, w, b, {2, 2}, {0, 0}), 45)); },
                         {x, w, b}, opts());
    });
    reg("conv3d", [] {
        const auto x = random_tensor({2, 5, 7, 7}, 51), w = random_tensor({3, 2, 3, 3, 3}, 52), b = random_tensor({3}, 53);
        return gradcheck([&] { return ad::add(probe(ad::conv3d(x, w, b, {1, 1, 1}, {1, 1, 1}), 54), probe(ad::conv3d(x, w, b, {1, 2, 2}, {0, 0, 0}), 55)); },
                         {x, w, b}, opts());
    });
    reg("frame_encoder", [] {
        const auto ps = toy_params(61, 0.05);
        const auto x = random_tensor({4, 16, 16}, 63, 0, 1);
        auto in = with_prefix(ps, {"frame."});
        in.push_back(x);
        return gradcheck([&] { return probe(frame_encoder(ps, x), 64); }, in, opts(24));
    });
    reg("volume_encoder", [] {
        const auto ps = toy_params(71, 0.05);
        const auto x = random_tensor({1, 8, 16, 16}, 73, 0, 1);
        auto in = with_prefix(ps, {"vol."});
        in.push_back(x);
        return gradcheck([&] { return probe(volume_encoder(ps, x), 74); }, in, opts(24));
    });
    reg("prompt", [] {
        const auto ps = toy_params(81, 0.1);
        const auto fs = random_tensor({4, 4, 4}, 83);
        auto in = with_prefix(ps, {"prompt."});
        in.push_back(fs);
        return gradcheck([&] { return probe(project_prompt(ps, prompt_head(ps, fs), {4, 3, 4, 4}), 84); }, in, opts());
    });
    reg("pgca", [] {
        const auto ps = toy_params(91, 0.1);
        const auto P = random_tensor({4, 8}, 92), C = random_tensor({4, 8}, 93), E = random_tensor({4, 8}, 94);
        auto in = with_prefix(ps, {"pgca_s."});
        in.insert(in.end(), {P, C, E});
        return gradcheck([&] { return probe(pgca(ps, "pgca_s", P, C, E).z, 95); }, in, opts());
    });
    reg("vlga", [] {
        const auto ps = toy_params(101, 0.1);
        const auto zs = random_tensor({4, 16}, 102), zv = random_tensor({4, 16}, 103);
        auto in = with_prefix(ps, {"vlga."});
        in.insert(in.end(), {zs, zv});
        return gradcheck([&] { return probe(vlga(ps, zs, zv).z, 104); }, in, opts());
    });
    reg("heads", [] {
        const auto ps = toy_params(111, 0.2);
        const auto Z = random_tensor({16, 10}, 112);
        auto in = with_prefix(ps, {"head_"});
        in.push_back(Z);
        return gradcheck(
            [&] {
                const auto p = heads(ps, toy_net(), Z);
                return ad::add(ad::add(probe(p.translation, 113), probe(p.rotation, 114)), probe(p.dist, 115));
            },
            in, opts());
    });
    reg("loss_translation", [] {
        const auto p = random_tensor({3}, 121, -4, 4), t = random_tensor({3}, 122, -4, 4, false);
        return gradcheck([&] { return smooth_l1(p, t); }, {p}, opts());
    });
    reg("loss_rotation", [] {
        const auto p = random_tensor({3}, 131, -0.8, 0.8), t = random_tensor({3}, 132, -0.1, 0.1, false);
        return gradcheck([&] { return smooth_l1(p, t); }, {p}, opts());
    });
    reg("loss_prompt", [] {
        const auto logits = random_tensor({2, 4, 4}, 141, -2, 2), mask = random_tensor({4, 4}, 142, 0, 1, false);
        return gradcheck([&] { return prompt_loss(ad::softmax(logits, 0), mask); }, {logits}, opts());
    });
    reg("loss_reg", [] {
        const auto d = random_tensor({3}, 151, 0, 5), t = random_tensor({3}, 152, 0, 5, false);
        return gradcheck([&] { return reg_loss(d, t); }, {d}, opts());
    });
    reg("loss_similarity", [] {
        const Sample s = regenerate_sample(toy_dataset(), 0, 0);
        const auto x = frame_tensor<double>(extract_slice(s.volume, Pose{1, -1, 0.5, 2, -2, 3}, s.anchor.spec));
        const Tensor<double> a = Tensor<double>::parameter(x.shape(), {x.values().begin(), x.values().end()});
        const auto y = frame_tensor<double>(s.anchor);
        return gradcheck([&] { return ad::shift(ad::scale(msssim(a, y), -1.0), 1.0); }, {a}, opts(64));
    });
    reg("resample_pose", [] {
        const Sample s = regenerate_sample(toy_dataset(), 0, 1);
        const auto pose = Tensor<double>::parameter({6}, {0.7, 0.2, -0.4, 1.5, -1.0, 2.0});
        const auto target = frame_tensor<double>(s.anchor);
        return gradcheck(
            [&] {
                const auto r = resample_slice(s.volume, pose, s.anchor.spec);
                return ad::add(probe(r, 161), ad::shift(ad::scale(msssim(r, target), -1.0), 1.0));
            },
            {pose}, opts());
    });
    reg("full_pipeline", [] {
        const NetConfig net = toy_net();
        const auto ps = toy_params(171, 0.1);
        const Sample s = regenerate_sample(toy_dataset(), 0, 2);
        const LossTarget<double> tgt = make_loss_target<double>(s, net.feat_h());
        const auto frames = frames_tensor<double>(s.anchor, s.adjacent);
        const auto vol = volume_tensor<double>(s.volume);
        return gradcheck([&] { return total_loss(cureg_forward(ps, net, frames, vol), tgt, LossWeights{}).total; },
                         ps.tensors(), opts(32));
    });
    return cases;
}

/// Runs every case whose name contains `filter` (all when empty).
inline std::vector<GradcheckOutcome> run_gradcheck_suite(const std::string& filter = {},
                                                         const std::function<void(const GradcheckOutcome&)>& on_case = {}) {
    std::vector<GradcheckOutcome> out;
    for (const auto& c : gradcheck_cases()) {
        if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
        const auto t0 = std::chrono::steady_clock::now();
        GradcheckOutcome o{c.name, c.run(), 0};
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (on_case) on_case(o);
        out.push_back(std::move(o));
    }
    return out;
}

}  // namespace cureg
