#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <numeric>
#include <random>

#include "cureg/gradcheck.hpp"
#include "cureg/network.hpp"

using namespace cureg;
using ad::gradcheck;
using ad::Reduce;

namespace {

NetConfig toy_config(std::size_t d = 4, std::size_t m = 8) {
    NetConfig c;
    c.d = d;
    c.m = m;
    c.frame_hidden = 6;
    c.head_hidden = 5;
    c.slice_h = c.slice_w = 32;
    c.vol_d = 8;
    c.vol_h = c.vol_w = 32;
    return c;
}

template <class T>
Tensor<T> random_tensor(Shape shape, unsigned seed, double lo = -1, double hi = 1, bool grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(ad::numel(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>::make(std::move(shape), std::move(v), grad);
}

std::vector<Tensor<double>> params_with_prefix(const ParamStore<double>& ps, const std::string& prefix) {
    std::vector<Tensor<double>> out;
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (ps.names()[i].rfind(prefix, 0) == 0) out.push_back(ps.tensors()[i]);
    return out;
}

// Weighted sum with fixed random weights so every output element matters.
Tensor<double> probe(const Tensor<double>& y, unsigned seed) {
    return ad::sum_all(ad::mul(y, random_tensor<double>(y.shape(), seed)));
}

ad::GradcheckOptions net_opts() {
    ad::GradcheckOptions o;
    o.h = 1e-6;  // keeps central differences clear of ReLU kinks
    o.tol = 1e-4;
    return o;
}

}  // namespace

TEST_CASE("frame encoder output shape at full size") {
    NetConfig c;  // 128 x 128, d = 32
    const auto ps = init_params<float>(c, 1);
    const auto y = frame_encoder(ps, random_tensor<float>({4, 128, 128}, 2, 0, 1));
    CHECK(y.shape() == Shape{32, 16, 16});
    CHECK_THROWS_AS(frame_encoder(ps, random_tensor<float>({3, 128, 128}, 2)), ad::ShapeError);
}

TEST_CASE("frame encoder maps zero input to zero and is sensitive to frame order") {
    const NetConfig c = toy_config();
    const auto ps = init_params<double>(c, 3);
    const auto zero = frame_encoder(ps, Tensor<double>::zeros({4, 32, 32}));
    for (double v : zero.values()) CHECK(v == 0.0);

    const auto x = random_tensor<double>({4, 32, 32}, 4, 0, 1);
    std::vector<double> perm(x.values().begin(), x.values().end());
    const std::size_t plane = 32 * 32;
    std::swap_ranges(perm.begin() + plane, perm.begin() + 2 * plane, perm.begin() + 3 * plane);
    const auto a = frame_encoder(ps, x);
    const auto b = frame_encoder(ps, Tensor<double>::constant({4, 32, 32}, perm));
    double diff = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("volume encoder output shape at full size") {
    NetConfig c;
    const auto ps = init_params<float>(c, 1);
    const auto y = volume_encoder(ps, random_tensor<float>({1, 32, 128, 128}, 5, 0, 1));
    CHECK(y.shape() == Shape{32, 16, 16, 16});
}

TEST_CASE("volume encoder rejects inputs too small for its strides") {
    const auto ps = init_params<double>(toy_config(), 1);
    CHECK_THROWS_AS(volume_encoder(ps, Tensor<double>::zeros({1, 1, 4, 4})), ad::ShapeError);
    CHECK_THROWS_AS(volume_encoder(ps, Tensor<double>::zeros({2, 8, 32, 32})), ad::ShapeError);
}

TEST_CASE("volume encoder response to a constant input is constant away from the border") {
    NetConfig c = toy_config();
    c.vol_d = 32;
    c.vol_h = c.vol_w = 64;
    c.slice_h = c.slice_w = 64;
    auto ps = init_params<double>(c, 7);
    perturb_params(ps, 8, 0.05);  // non-zero biases too
    const auto y = volume_encoder(ps, Tensor<double>::full({1, 32, 64, 64}, 0.7));
    REQUIRE(y.shape() == Shape{4, 16, 8, 8});
    // Receptive-field margin: 2 + 1 + 1 cells in depth on the output grid; 1 cell in-plane.
    for (std::size_t ch = 0; ch < 4; ++ch) {
        const double ref = y[((ch * 16 + 6) * 8 + 3) * 8 + 3];
        for (std::size_t z = 4; z < 12; ++z)
            for (std::size_t yy = 2; yy < 6; ++yy)
                for (std::size_t x = 2; x < 6; ++x) CHECK(y[((ch * 16 + z) * 8 + yy) * 8 + x] == Catch::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("prompt head yields per-pixel probabilities") {
    const NetConfig c = toy_config();
    auto ps = init_params<double>(c, 2);
    const auto fs = random_tensor<double>({4, 4, 4}, 3);
    const auto p = prompt_head(ps, fs);
    REQUIRE(p.shape() == Shape{2, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::abs(p[i] + p[16 + i] - 1.0) < 1e-6);
        CHECK(p[i] >= 0.0);
        CHECK(p[i] <= 1.0);
    }
    Tensor<double> w = ps["prompt.head.w"];
    for (auto& v : w.mutable_values()) v = 0;
    const auto tie = prompt_head(ps, fs);
    for (double v : tie.values()) CHECK(v == 0.5);
}

TEST_CASE("project_prompt tiles a zero-preserving lift of the prompt") {
    const NetConfig c = toy_config();
    auto ps = init_params<double>(c, 2);
    const auto zero = project_prompt(ps, Tensor<double>::zeros({2, 4, 4}), {4, 4, 4, 4});
    for (double v : zero.values()) CHECK(v == 0.0);

    const auto E = project_prompt(ps, random_tensor<double>({2, 4, 4}, 9, 0, 1), {4, 4, 4, 4});
    REQUIRE(E.shape() == Shape{4, 64});
    for (std::size_t ch = 0; ch < 4; ++ch)
        for (std::size_t z = 1; z < 4; ++z)
            for (std::size_t i = 0; i < 16; ++i) CHECK(E[ch * 64 + z * 16 + i] == E[ch * 64 + i]);
    CHECK_THROWS_AS(project_prompt(ps, Tensor<double>::zeros({2, 4, 4}), {4, 4, 5, 4}), ad::ShapeError);
}

TEST_CASE("pgca with zero parameters is the identity on P") {
    const NetConfig c = toy_config();
    auto ps = init_params<double>(c, 2);
    for (const char* w : {".wq", ".wk", ".wv", ".wg", ".f_att", ".f_prompt"})
        for (auto& v : Tensor<double>(ps[std::string("pgca_s") + w]).mutable_values()) v = 0;
    const auto P = random_tensor<double>({4, 8}, 1), C = random_tensor<double>({4, 8}, 2), E = random_tensor<double>({4, 8}, 3);
    const auto r = pgca(ps, "pgca_s", P, C, E);
    CHECK(std::equal(r.z.values().begin(), r.z.values().end(), P.values().begin()));
    CHECK_THROWS_AS(pgca(ps, "pgca_s", P, random_tensor<double>({4, 9}, 2), E), ad::ShapeError);
}

TEST_CASE("pgca attention rows sum to one") {
    auto ps = init_params<double>(toy_config(), 5);
    perturb_params(ps, 6, 0.5);
    const auto r = pgca(ps, "pgca_v", random_tensor<double>({4, 8}, 1, -3, 3), random_tensor<double>({4, 8}, 2, -3, 3),
                        random_tensor<double>({4, 8}, 3));
    REQUIRE(r.attention.shape() == Shape{4, 4});
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) s += r.attention[i * 4 + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("cross_interact shapes and zero-parameter pass-through") {
    const NetConfig c = toy_config();
    auto ps = init_params<double>(c, 2);
    const auto fs = random_tensor<double>({4, 4, 4}, 1), fv = random_tensor<double>({4, 4, 4, 4}, 2);
    const auto E = random_tensor<double>({4, 64}, 3);
    auto r = cross_interact(ps, fs, fv, E);
    CHECK(r.z_s.shape() == Shape{4, 64});
    CHECK(r.z_v.shape() == Shape{4, 64});

    for (const char* dir : {"pgca_s", "pgca_v"})
        for (const char* w : {".wq", ".wk", ".wv", ".wg", ".f_att", ".f_prompt"})
            for (auto& v : Tensor<double>(ps[std::string(dir) + w]).mutable_values()) v = 0;
    r = cross_interact(ps, fs, fv, E);
    const auto tiled = tile_depth(fs, 4);
    CHECK(std::equal(r.z_s.values().begin(), r.z_s.values().end(), tiled.values().begin()));
    CHECK(std::equal(r.z_v.values().begin(), r.z_v.values().end(), fv.values().begin()));
}

TEST_CASE("vlga shape and permutation invariance of the global vector") {
    auto ps = init_params<double>(toy_config(4, 8), 3);
    perturb_params(ps, 4, 0.1);
    const std::size_t L = 16;
    const auto zs = random_tensor<double>({4, L}, 1), zv = random_tensor<double>({4, L}, 2);
    const auto r = vlga(ps, zs, zv);
    REQUIRE(r.z.shape() == Shape{16, L});

    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
    auto permute = [&](const Tensor<double>& x) {
        std::vector<double> v(x.numel());
        for (std::size_t ch = 0; ch < x.dim(0); ++ch)
            for (std::size_t l = 0; l < L; ++l) v[ch * L + l] = x[ch * L + perm[l]];
        return Tensor<double>::constant(x.shape(), v);
    };
    const auto rp = vlga(ps, permute(zs), permute(zv));
    CHECK(std::equal(rp.global.values().begin(), rp.global.values().end(), r.global.values().begin()));
    const auto expected = permute(r.z);
    CHECK(std::equal(rp.z.values().begin(), rp.z.values().end(), expected.values().begin()));
}

TEST_CASE("heads with zero weights give the identity pose and the softplus distance floor") {
    const NetConfig c = toy_config();
    auto ps = init_params<double>(c, 1);
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (ps.names()[i].rfind("head_", 0) == 0)
            for (auto& v : Tensor<double>(ps.tensors()[i]).mutable_values()) v = 0;
    const auto p = heads(ps, c, random_tensor<double>({16, 10}, 3));
    for (int k = 0; k < 3; ++k) {
        CHECK(p.translation[k] == 0.0);
        CHECK(p.rotation[k] == 0.0);
        CHECK(p.dist[k] == Catch::Approx(std::log(2.0) * c.dist_scale).epsilon(1e-15));
    }
}

TEST_CASE("distance head output is non-negative") {
    const NetConfig c = toy_config();
    for (unsigned s = 0; s < 20; ++s) {
        auto ps = init_params<double>(c, s);
        perturb_params(ps, s + 100, 2.0);
        const auto p = heads(ps, c, random_tensor<double>({16, 10}, s, -5, 5));
        for (int k = 0; k < 3; ++k) CHECK(p.dist[k] >= 0.0);
    }
}

TEST_CASE("untrained forward predicts the identity and is deterministic") {
    const NetConfig c = toy_config();
    const auto ps = init_params<float>(c, 11);
    const auto frames = random_tensor<float>({4, 32, 32}, 1, 0, 1), vol = random_tensor<float>({1, 8, 32, 32}, 2, 0, 1);
    const auto a = cureg_forward(ps, c, frames, vol), b = cureg_forward(ps, c, frames, vol);
    CHECK(a.pose() == Pose{});
    CHECK(std::equal(a.prompt.values().begin(), a.prompt.values().end(), b.prompt.values().begin()));
    CHECK(a.prompt.shape() == Shape{2, 4, 4});
    CHECK_THROWS_AS(cureg_forward(ps, c, random_tensor<float>({4, 16, 16}, 1), vol), ConfigError);
}

TEST_CASE("gradcheck: frame encoder") {
    auto ps = init_params<double>(toy_config(), 21);
    perturb_params(ps, 22, 0.05);
    const auto x = random_tensor<double>({4, 16, 16}, 23, 0, 1, true);
    auto inputs = params_with_prefix(ps, "frame.");
    inputs.push_back(x);
    auto o = net_opts();
    o.max_elements_per_input = 24;
    const auto rep = gradcheck([&] { return probe(frame_encoder(ps, x), 24); }, inputs, o);
    INFO("max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("gradcheck: volume encoder at 16x16x8") {
    auto ps = init_params<double>(toy_config(), 31);
    perturb_params(ps, 32, 0.05);
    const auto x = random_tensor<double>({1, 8, 16, 16}, 33, 0, 1, true);
    auto inputs = params_with_prefix(ps, "vol.");
    inputs.push_back(x);
    auto o = net_opts();
    o.max_elements_per_input = 24;
    const auto rep = gradcheck([&] { return probe(volume_encoder(ps, x), 34); }, inputs, o);
    INFO("max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("gradcheck: prompt head and projection") {
    auto ps = init_params<double>(toy_config(), 41);
    perturb_params(ps, 42, 0.1);
    const auto fs = random_tensor<double>({4, 4, 4}, 43, -1, 1, true);
    auto inputs = params_with_prefix(ps, "prompt.");
    inputs.push_back(fs);
    const auto rep = gradcheck([&] { return probe(project_prompt(ps, prompt_head(ps, fs), {4, 3, 4, 4}), 44); },
                               inputs, net_opts());
    INFO("max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("gradcheck: pgca at d=4, L=8") {
    auto ps = init_params<double>(toy_config(), 51);
    perturb_params(ps, 52, 0.1);
    const auto P = random_tensor<double>({4, 8}, 1, -1, 1, true), C = random_tensor<double>({4, 8}, 2, -1, 1, true),
               E = random_tensor<double>({4, 8}, 3, -1, 1, true);
    auto inputs = params_with_prefix(ps, "pgca_s.");
    inputs.insert(inputs.end(), {P, C, E});
    const auto rep = gradcheck([&] { return probe(pgca(ps, "pgca_s", P, C, E).z, 53); }, inputs, net_opts());
    INFO("max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("gradcheck: cross_interact") {
    auto ps = init_params<double>(toy_config(), 61);
    perturb_params(ps, 62, 0.1);
    const auto fs = random_tensor<double>({4, 2, 2}, 1, -1, 1, true), fv = random_tensor<double>({4, 3, 2, 2}, 2, -1, 1, true);
    const auto E = random_tensor<double>({4, 12}, 3, -1, 1, true);
    auto inputs = params_with_prefix(ps, "pgca_");
    inputs.insert(inputs.end(), {fs, fv, E});
    const auto rep = gradcheck(
        [&] {
            const auto r = cross_interact(ps, fs, fv, E);
            return ad::add(probe(r.z_s, 63), probe(r.z_v, 64));
        },
        inputs, net_opts());
    INFO("max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("gradcheck: vlga at d=4, m=8, L=16") {
    auto ps = init_params<double>(toy_config(4, 8), 71);
    perturb_params(ps, 72, 0.1);
    const auto zs = random_tensor<double>({4, 16}, 1, -1, 1, true), zv = random_tensor<double>({4, 16}, 2, -1, 1, true);
    auto inputs = params_with_prefix(ps, "vlga.");
    inputs.insert(inputs.end(), {zs, zv});
    const auto rep = gradcheck([&] { return probe(vlga(ps, zs, zv).z, 73); }, inputs, net_opts());
    INFO("max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("gradcheck: heads") {
    const NetConfig c = toy_config();
    auto ps = init_params<double>(c, 81);
    perturb_params(ps, 82, 0.2);
    const auto Z = random_tensor<double>({16, 10}, 1, -1, 1, true);
    auto inputs = params_with_prefix(ps, "head_");
    inputs.push_back(Z);
    const auto rep = gradcheck(
        [&] {
            const auto p = heads(ps, c, Z);
            return ad::add(ad::add(probe(p.translation, 83), probe(p.rotation, 84)), probe(p.dist, 85));
        },
        inputs, net_opts());
    INFO("max rel err " << rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("checkpoint round trip") {
    const NetConfig c = toy_config();
    auto ps = init_params<float>(c, 91);
    perturb_params(ps, 92, 0.1);
    const auto path = std::filesystem::temp_directory_path() / "cureg_test_ckpt.bin";
    save_checkpoint(path, c, ps);
    const auto ck = load_checkpoint<float>(path);
    CHECK(ck.config == c);
    REQUIRE(ck.params.size() == ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(ck.params.names()[i] == ps.names()[i]);
        const auto a = ck.params.tensors()[i].values(), b = ps.tensors()[i].values();
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    {
        std::ofstream(path, std::ios::binary | std::ios::app) << "x";
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
}
