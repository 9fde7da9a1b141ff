#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cureg/image.hpp"
#include "cureg/io.hpp"
#include "cureg/ops.hpp"

namespace cureg {

using ad::Shape;
using ad::Tensor;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct NetConfig {
    std::size_t d = 32;             ///< feature channels of both branches
    std::size_t m = 64;             ///< VLGA perceptron width
    std::size_t frame_hidden = 64;  ///< width of the 4 -> hidden -> 3 channel-normalizing stage
    std::size_t head_hidden = 64;
    std::size_t slice_h = 128, slice_w = 128;
    std::size_t vol_d = 32, vol_h = 128, vol_w = 128;
    double trans_scale = 10.0;  ///< mm per unit of translation-head output
    double rot_scale = 20.0;    ///< degrees per unit of rotation-head output
    double dist_scale = 2.0;    ///< mm per unit of softplus distance-head output

    std::size_t c1() const { return std::max<std::size_t>(2, d / 4); }
    std::size_t c2() const { return std::max<std::size_t>(2, d / 2); }
    std::size_t feat_h() const { return slice_h / 8; }
    std::size_t feat_w() const { return slice_w / 8; }
    std::size_t feat_d() const { return vol_d / 2; }
    std::size_t tokens() const { return feat_d() * feat_h() * feat_w(); }

    void validate() const {
        if (d < 1 || m < 1 || frame_hidden < 1 || head_hidden < 1) throw ConfigError("NetConfig: widths must be >= 1");
        if (slice_h % 8 || slice_w % 8 || slice_h == 0 || slice_w == 0)
            throw ConfigError("NetConfig: slice size must be a positive multiple of 8");
        if (vol_h % 8 || vol_w % 8 || vol_d % 2 || vol_d == 0 || vol_h == 0 || vol_w == 0)
            throw ConfigError("NetConfig: volume H, W must be multiples of 8 and D a multiple of 2");
        if (vol_h / 8 != feat_h() || vol_w / 8 != feat_w())
            throw ConfigError("NetConfig: slice and volume must reduce to the same in-plane feature grid");
    }

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

inline nlohmann::ordered_json to_json(const NetConfig& c) {
    return {{"d", c.d},
            {"m", c.m},
            {"frame_hidden", c.frame_hidden},
            {"head_hidden", c.head_hidden},
            {"slice_h", c.slice_h},
            {"slice_w", c.slice_w},
            {"vol_d", c.vol_d},
            {"vol_h", c.vol_h},
            {"vol_w", c.vol_w},
            {"trans_scale", c.trans_scale},
            {"rot_scale", c.rot_scale},
            {"dist_scale", c.dist_scale}};
}

inline NetConfig net_config_from_json(const nlohmann::ordered_json& j) {
    NetConfig c;
    c.d = j.at("d");
    c.m = j.at("m");
    c.frame_hidden = j.at("frame_hidden");
    c.head_hidden = j.at("head_hidden");
    c.slice_h = j.at("slice_h");
    c.slice_w = j.at("slice_w");
    c.vol_d = j.at("vol_d");
    c.vol_h = j.at("vol_h");
    c.vol_w = j.at("vol_w");
    c.trans_scale = j.at("trans_scale");
    c.rot_scale = j.at("rot_scale");
    c.dist_scale = j.at("dist_scale");
    c.validate();
    return c;
}

/// Named parameter tensors in insertion order.
template <class T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Shape shape, std::vector<T> values) {
        if (index_.count(name)) throw std::logic_error("ParamStore: duplicate parameter " + name);
        index_[name] = tensors_.size();
        names_.push_back(name);
        tensors_.push_back(Tensor<T>::parameter(std::move(shape), std::move(values)));
        return tensors_.back();
    }

    const Tensor<T>& operator[](const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
        return tensors_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<Tensor<T>>& tensors() const { return tensors_; }
    std::size_t size() const { return tensors_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& t : tensors_) t.zero_grad();
    }

    /// Deep copy with values converted to U.
    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (std::size_t i = 0; i < tensors_.size(); ++i) {
            const auto v = tensors_[i].values();
            out.add(names_[i], tensors_[i].shape(), std::vector<U>(v.begin(), v.end()));
        }
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::map<std::string, std::size_t> index_;
};

namespace detail {

template <class T>
struct Initializer {
    ParamStore<T>& store;
    std::mt19937_64 rng;

    // Uniform with variance gain / fan_in.
    void uniform(const std::string& name, Shape shape, std::size_t fan_in, double gain = 1.0) {
        const double a = std::sqrt(3.0 * gain / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-a, a);
        std::vector<T> v(ad::numel(shape));
        for (auto& x : v) x = static_cast<T>(u(rng));
        store.add(name, std::move(shape), std::move(v));
    }
    void zeros(const std::string& name, Shape shape) {
        const std::size_t n = ad::numel(shape);
        store.add(name, std::move(shape), std::vector<T>(n, T(0)));
    }
    void conv2(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, double gain = 1.0) {
        uniform(name + ".w", {cout, cin, k, k}, cin * k * k, gain);
        zeros(name + ".b", {cout});
    }
    void conv3(const std::string& name, std::size_t cout, std::size_t cin, std::array<std::size_t, 3> k,
               double gain = 1.0) {
        uniform(name + ".w", {cout, cin, k[0], k[1], k[2]}, cin * k[0] * k[1] * k[2], gain);
        zeros(name + ".b", {cout});
    }
    void linear(const std::string& name, std::size_t out, std::size_t in, double gain = 1.0) {
        uniform(name + ".w", {out, in}, in, gain);
        zeros(name + ".b", {out, 1});
    }
};

}  // namespace detail

/// Fresh parameters for `cfg`, deterministic in `seed`. Biases and the final head layers start at
/// zero, so an untrained network predicts the identity pose.
template <class T>
ParamStore<T> init_params(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> ps;
    detail::Initializer<T> in{ps, std::mt19937_64(seed)};
    const std::size_t d = cfg.d, c1 = cfg.c1(), c2 = cfg.c2();

    in.conv2("frame.norm1", cfg.frame_hidden, 4, 1, 2.0);
    in.conv2("frame.norm2", 3, cfg.frame_hidden, 1);
    const std::array<std::size_t, 4> fch{3, c1, c2, d};
    for (int s = 0; s < 3; ++s) {
        const std::string p = "frame.stage" + std::to_string(s);
        in.conv2(p + ".down", fch[s + 1], fch[s], 2);
        in.conv2(p + ".res1", fch[s + 1], fch[s + 1], 3, 2.0);
        in.conv2(p + ".res2", fch[s + 1], fch[s + 1], 3, 0.25);
    }

    in.conv3("vol.block0.down", c1, 1, {2, 2, 2});
    in.conv3("vol.block0.conv", c1, c1, {5, 5, 5}, 0.5);
    in.conv3("vol.block1.down", c2, c1, {1, 2, 2});
    in.conv3("vol.block1.conv", c2, c2, {3, 3, 3}, 0.5);
    in.conv3("vol.block2.down", d, c2, {1, 2, 2});
    in.conv3("vol.block2.conv", d, d, {3, 3, 3}, 0.5);
    in.conv3("vol.proj0", d, c1, {1, 4, 4}, 1.0 / 3.0);
    in.conv3("vol.proj1", d, c2, {1, 2, 2}, 1.0 / 3.0);
    in.conv3("vol.proj2", d, d, {1, 1, 1}, 1.0 / 3.0);

    in.conv2("prompt.head", 2, d, 1);
    in.conv2("prompt.proj1", d, 2, 1, 2.0);
    in.conv2("prompt.proj2", d, d, 1);

    for (const char* dir : {"pgca_s", "pgca_v"}) {
        const std::string p = dir;
        for (const char* w : {".wq", ".wk", ".wv", ".wg"}) in.uniform(p + w, {d, d}, d);
        in.uniform(p + ".f_att", {d, d}, d, 0.25);
        in.uniform(p + ".f_prompt", {d, d}, d, 0.25);
    }

    in.linear("vlga.mlp1", cfg.m, 2 * d, 2.0);
    in.linear("vlga.mlp2", cfg.m, cfg.m);

    const std::size_t zin = 2 * d + cfg.m;
    for (const char* h : {"head_t", "head_r", "head_d"}) {
        in.linear(std::string(h) + ".fc1", cfg.head_hidden, zin, 2.0);
        in.zeros(std::string(h) + ".fc2.w", {3, cfg.head_hidden});
        in.zeros(std::string(h) + ".fc2.b", {3, 1});
    }
    return ps;
}

/// Adds uniform noise in [-amplitude, amplitude] to every parameter, zero-initialized ones
/// included. Used to move checks away from the degenerate all-zero head.
template <class T>
void perturb_params(ParamStore<T>& ps, std::uint64_t seed, double amplitude) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amplitude, amplitude);
    for (const auto& t : ps.tensors()) {
        Tensor<T> h = t;
        for (auto& v : h.mutable_values()) v += static_cast<T>(u(rng));
    }
}

// ---- blocks -------------------------------------------------------------------------------------

namespace detail {

template <class T>
Tensor<T> conv2_named(const ParamStore<T>& ps, const std::string& name, const Tensor<T>& x, std::size_t stride,
                      std::size_t pad) {
    return ad::conv2d(x, ps[name + ".w"], ps[name + ".b"], {stride, stride}, {pad, pad});
}

template <class T>
Tensor<T> conv3_named(const ParamStore<T>& ps, const std::string& name, const Tensor<T>& x,
                      std::array<std::size_t, 3> stride, std::size_t pad) {
    return ad::conv3d(x, ps[name + ".w"], ps[name + ".b"], stride, {pad, pad, pad});
}

// x [in, L] -> w x + b, b broadcast over L.
template <class T>
Tensor<T> linear_named(const ParamStore<T>& ps, const std::string& name, const Tensor<T>& x) {
    return ad::add(ad::matmul(ps[name + ".w"], x), ps[name + ".b"]);
}

}  // namespace detail

/// Four stacked frames [4, H, W] -> F_s [d, H/8, W/8].
template <class T>
Tensor<T> frame_encoder(const ParamStore<T>& ps, const Tensor<T>& frames) {
    using namespace ad;
    if (frames.rank() != 3 || frames.dim(0) != 4)
        throw ShapeError("frame_encoder: expected [4 x H x W], got " + to_string(frames.shape()));
    Tensor<T> h = relu(cureg::detail::conv2_named(ps, "frame.norm1", frames, 1, 0));
    h = cureg::detail::conv2_named(ps, "frame.norm2", h, 1, 0);
    for (int s = 0; s < 3; ++s) {
        const std::string p = "frame.stage" + std::to_string(s);
        const Tensor<T> y = cureg::detail::conv2_named(ps, p + ".down", h, 2, 0);
        Tensor<T> r = cureg::detail::conv2_named(ps, p + ".res1", relu(y), 1, 1);
        r = cureg::detail::conv2_named(ps, p + ".res2", relu(r), 1, 1);
        h = add(y, r);
    }
    return h;
}

/// Volume [1, D, H, W] -> F_v [d, D/2, H/8, W/8]. Three strided blocks (inner kernels 5, 3, 3);
/// each block output is projected to d channels on the final grid and the three are summed.
template <class T>
Tensor<T> volume_encoder(const ParamStore<T>& ps, const Tensor<T>& vol) {
    using namespace ad;
    if (vol.rank() != 4 || vol.dim(0) != 1)
        throw ShapeError("volume_encoder: expected [1 x D x H x W], got " + to_string(vol.shape()));
    auto block = [&](const std::string& p, const Tensor<T>& x, std::array<std::size_t, 3> stride, std::size_t pad) {
        const Tensor<T> y = cureg::detail::conv3_named(ps, p + ".down", x, stride, 0);
        return add(y, cureg::detail::conv3_named(ps, p + ".conv", relu(y), {1, 1, 1}, pad));
    };
    const Tensor<T> y0 = block("vol.block0", vol, {2, 2, 2}, 2);
    const Tensor<T> y1 = block("vol.block1", y0, {1, 2, 2}, 1);
    const Tensor<T> y2 = block("vol.block2", y1, {1, 2, 2}, 1);
    Tensor<T> out = cureg::detail::conv3_named(ps, "vol.proj0", y0, {1, 4, 4}, 0);
    out = add(out, cureg::detail::conv3_named(ps, "vol.proj1", y1, {1, 2, 2}, 0));
    return add(out, cureg::detail::conv3_named(ps, "vol.proj2", y2, {1, 1, 1}, 0));
}

/// F_s -> [2, H', W'] channel probabilities; channel 0 is the epicardium.
template <class T>
Tensor<T> prompt_head(const ParamStore<T>& ps, const Tensor<T>& fs) {
    return ad::softmax(cureg::detail::conv2_named(ps, "prompt.head", fs, 1, 0), 0);
}

/// [c, H', W'] -> [c, depth * H' * W'], the map repeated for every depth slab.
template <class T>
Tensor<T> tile_depth(const Tensor<T>& x, std::size_t depth) {
    using namespace ad;
    if (x.rank() != 3) throw ShapeError("tile_depth: expected [C x H x W], got " + to_string(x.shape()));
    const Tensor<T> slab = reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)});
    const Tensor<T> tiled = concat(std::vector<Tensor<T>>(depth, slab), 1);
    return reshape(tiled, {x.dim(0), depth * x.dim(1) * x.dim(2)});
}

/// Prompt [2, H', W'] -> E [d, L] matching a feature volume of shape [d, D', H', W'].
template <class T>
Tensor<T> project_prompt(const ParamStore<T>& ps, const Tensor<T>& prompt, const Shape& target) {
    using namespace ad;
    if (prompt.rank() != 3 || target.size() != 4 || prompt.dim(1) != target[2] || prompt.dim(2) != target[3])
        throw ShapeError("project_prompt: prompt " + to_string(prompt.shape()) + " does not match features " +
                         to_string(target));
    Tensor<T> e = relu(cureg::detail::conv2_named(ps, "prompt.proj1", prompt, 1, 0));
    e = cureg::detail::conv2_named(ps, "prompt.proj2", e, 1, 0);
    return tile_depth(e, target[1]);
}

template <class T>
struct PgcaResult {
    Tensor<T> z;
    Tensor<T> attention;  ///< d x d, rows sum to 1
};

/// Gated cross-dimensional channel attention with an additive prompt term:
/// z = P + F_att (G * (A V)) + F_prompt E, A = softmax(Q K^T / sqrt(d)) over key channels.
template <class T>
PgcaResult<T> pgca(const ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& P, const Tensor<T>& C,
                   const Tensor<T>& E) {
    using namespace ad;
    if (P.rank() != 2 || P.shape() != C.shape() || P.shape() != E.shape())
        throw ShapeError("pgca: P " + to_string(P.shape()) + ", C " + to_string(C.shape()) + ", E " +
                         to_string(E.shape()) + " must share one d x L shape");
    const std::size_t d = P.dim(0);
    const Tensor<T> Q = matmul(ps[prefix + ".wq"], C);
    const Tensor<T> K = matmul(ps[prefix + ".wk"], P);
    const Tensor<T> V = silu(matmul(ps[prefix + ".wv"], P));
    const Tensor<T> G = silu(matmul(ps[prefix + ".wg"], P));
    const Tensor<T> A = softmax(scale(matmul(Q, transpose(K)), T(1) / std::sqrt(static_cast<T>(d))), 1);
    const Tensor<T> att = matmul(ps[prefix + ".f_att"], mul(G, matmul(A, V)));
    const Tensor<T> prm = matmul(ps[prefix + ".f_prompt"], E);
    return {add(add(P, att), prm), A};
}

template <class T>
struct CrossResult {
    Tensor<T> z_s, z_v;
    Tensor<T> attention_s, attention_v;
};

/// Bi-directional PGCA. F_s is tiled along depth to the token count of F_v.
template <class T>
CrossResult<T> cross_interact(const ParamStore<T>& ps, const Tensor<T>& fs, const Tensor<T>& fv, const Tensor<T>& E) {
    using namespace ad;
    if (fs.rank() != 3 || fv.rank() != 4 || fs.dim(0) != fv.dim(0) || fs.dim(1) != fv.dim(2) || fs.dim(2) != fv.dim(3))
        throw ShapeError("cross_interact: F_s " + to_string(fs.shape()) + " incompatible with F_v " +
                         to_string(fv.shape()));
    const Tensor<T> s = tile_depth(fs, fv.dim(1));
    const Tensor<T> v = reshape(fv, {fv.dim(0), fv.numel() / fv.dim(0)});
    auto rs = pgca(ps, "pgca_s", s, v, E);
    auto rv = pgca(ps, "pgca_v", v, s, E);
    return {rs.z, rv.z, rs.attention, rv.attention};
}

template <class T>
struct VlgaResult {
    Tensor<T> z;       ///< (2d + m) x L
    Tensor<T> global;  ///< m
};

/// Per-position pairing of the two branches concatenated with a max-pooled global descriptor.
template <class T>
VlgaResult<T> vlga(const ParamStore<T>& ps, const Tensor<T>& zs, const Tensor<T>& zv) {
    using namespace ad;
    if (zs.rank() != 2 || zs.shape() != zv.shape())
        throw ShapeError("vlga: z_s " + to_string(zs.shape()) + " and z_v " + to_string(zv.shape()) + " differ");
    const std::size_t L = zs.dim(1);
    const Tensor<T> pair = concat<T>({zs, zv}, 0);
    Tensor<T> h = relu(cureg::detail::linear_named(ps, "vlga.mlp1", pair));
    h = cureg::detail::linear_named(ps, "vlga.mlp2", h);
    const std::size_t m = h.dim(0);
    const Tensor<T> glo = reduce(Reduce::Max, h, 1);
    const Tensor<T> spread = add(Tensor<T>::zeros({m, L}), reshape(glo, {m, 1}));
    return {concat<T>({pair, spread}, 0), glo};
}

template <class T>
struct Prediction {
    Tensor<T> translation;  ///< [3] mm
    Tensor<T> rotation;     ///< [3] degrees
    Tensor<T> dist;         ///< [3] mm, non-negative
    Tensor<T> prompt;       ///< [2, H', W']

    Tensor<T> pose_tensor() const { return ad::concat<T>({translation, rotation}, 0); }
    Pose pose() const {
        return Pose{static_cast<double>(translation[0]), static_cast<double>(translation[1]),
                    static_cast<double>(translation[2]), static_cast<double>(rotation[0]),
                    static_cast<double>(rotation[1]), static_cast<double>(rotation[2])}
            .canonical();
    }
};

/// Mean over positions then three independent two-layer perceptrons.
template <class T>
Prediction<T> heads(const ParamStore<T>& ps, const NetConfig& cfg, const Tensor<T>& Z) {
    using namespace ad;
    const Tensor<T> g = reshape(reduce(Reduce::Mean, Z, 1), {Z.dim(0), 1});
    auto mlp = [&](const std::string& p) {
        const Tensor<T> h = relu(cureg::detail::linear_named(ps, p + ".fc1", g));
        return reshape(cureg::detail::linear_named(ps, p + ".fc2", h), {3});
    };
    Prediction<T> out;
    out.translation = scale(mlp("head_t"), static_cast<T>(cfg.trans_scale));
    out.rotation = scale(mlp("head_r"), static_cast<T>(cfg.rot_scale));
    out.dist = scale(softplus(mlp("head_d")), static_cast<T>(cfg.dist_scale));
    return out;
}

template <class T>
struct ForwardTrace {
    Tensor<T> fs, fv, E;
    CrossResult<T> cross;
    VlgaResult<T> vlga;
};

/// frames [4, H, W] and volume [1, D, H, W] -> Prediction.
template <class T>
Prediction<T> cureg_forward(const ParamStore<T>& ps, const NetConfig& cfg, const Tensor<T>& frames,
                            const Tensor<T>& volume, ForwardTrace<T>* trace = nullptr) {
    if (frames.shape() != Shape{4, cfg.slice_h, cfg.slice_w})
        throw ConfigError("cureg_forward: frames " + ad::to_string(frames.shape()) + " do not match the configured " +
                          std::to_string(cfg.slice_h) + "x" + std::to_string(cfg.slice_w) + " slice");
    if (volume.shape() != Shape{1, cfg.vol_d, cfg.vol_h, cfg.vol_w})
        throw ConfigError("cureg_forward: volume " + ad::to_string(volume.shape()) + " does not match the configured " +
                          std::to_string(cfg.vol_d) + "x" + std::to_string(cfg.vol_h) + "x" +
                          std::to_string(cfg.vol_w) + " volume");
    const Tensor<T> fs = frame_encoder(ps, frames);
    const Tensor<T> prompt = prompt_head(ps, fs);
    const Tensor<T> fv = volume_encoder(ps, volume);
    const Tensor<T> E = project_prompt(ps, prompt, fv.shape());
    const CrossResult<T> cr = cross_interact(ps, fs, fv, E);
    const VlgaResult<T> vr = vlga(ps, cr.z_s, cr.z_v);
    Prediction<T> pred = heads(ps, cfg, vr.z);
    pred.prompt = prompt;
    if (trace) *trace = {fs, fv, E, cr, vr};
    return pred;
}

// ---- tensors from images ------------------------------------------------------------------------

template <class T>
Tensor<T> frames_tensor(const Frame& anchor, const std::array<Frame, 3>& adjacent) {
    const std::size_t h = anchor.spec.height(), w = anchor.spec.width();
    std::vector<T> v;
    v.reserve(4 * h * w);
    v.insert(v.end(), anchor.data.begin(), anchor.data.end());
    for (const Frame& f : adjacent) {
        if (!(f.spec == anchor.spec)) throw ad::ShapeError("frames_tensor: adjacent frame grid differs from the anchor");
        v.insert(v.end(), f.data.begin(), f.data.end());
    }
    return Tensor<T>::constant({4, h, w}, std::move(v));
}

/// The single-frame inference input: the anchor repeated in all four channels.
template <class T>
Tensor<T> repeated_frame_tensor(const Frame& anchor) {
    return frames_tensor<T>(anchor, {anchor, anchor, anchor});
}

template <class T>
Tensor<T> volume_tensor(const Volume& vol) {
    return Tensor<T>::constant({1, vol.spec.nz(), vol.spec.ny(), vol.spec.nx()},
                               std::vector<T>(vol.data.begin(), vol.data.end()));
}

// ---- checkpoint ---------------------------------------------------------------------------------
//
// "CUREGCKP" | u32 version | u64 json length | json NetConfig | u32 tensor count |
// per tensor: u32 name length, name, u32 rank, u64 dims[rank], float32-le values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    os.write(buf, sizeof(U));
}

template <class U>
U get_le(std::istream& is, const std::filesystem::path& path) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw IoError(path.string() + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<U>(v);
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const NetConfig& cfg, const ParamStore<T>& ps) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write("CUREGCKP", 8);
    detail::put_le<std::uint32_t>(os, kCheckpointVersion);
    const std::string js = to_json(cfg).dump();
    detail::put_le<std::uint64_t>(os, js.size());
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string& name = ps.names()[i];
        const Tensor<T>& t = ps.tensors()[i];
        detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t dim : t.shape()) detail::put_le<std::uint64_t>(os, dim);
        for (T v : t.values()) detail::put_f32le(os, static_cast<float>(v));
    }
    if (!os) throw IoError("write failed for " + path.string());
}

template <class T>
struct Checkpoint {
    NetConfig config;
    ParamStore<T> params;
};

/// Loads a checkpoint and checks it against the architecture built from its own config.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::string(magic, 8) != "CUREGCKP") throw IoError(path.string() + ": not a checkpoint");
    const auto version = detail::get_le<std::uint32_t>(is, path);
    if (version != kCheckpointVersion)
        throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto js_len = detail::get_le<std::uint64_t>(is, path);
    if (js_len > (1u << 20)) throw IoError(path.string() + ": corrupt config header");
    std::string js(js_len, '\0');
    if (!is.read(js.data(), static_cast<std::streamsize>(js_len))) throw IoError(path.string() + ": truncated checkpoint");
    Checkpoint<T> ck;
    try {
        ck.config = net_config_from_json(nlohmann::ordered_json::parse(js));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad config header: " + e.what());
    }
    const ParamStore<T> ref = init_params<T>(ck.config, 0);
    const auto count = detail::get_le<std::uint32_t>(is, path);
    if (count != ref.size()) throw IoError(path.string() + ": tensor count does not match the configured architecture");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto nlen = detail::get_le<std::uint32_t>(is, path);
        if (nlen > 4096) throw IoError(path.string() + ": corrupt tensor name");
        std::string name(nlen, '\0');
        if (!is.read(name.data(), nlen)) throw IoError(path.string() + ": truncated checkpoint");
        const auto rank = detail::get_le<std::uint32_t>(is, path);
        if (rank > 8) throw IoError(path.string() + ": corrupt tensor rank");
        Shape shape(rank);
        for (auto& dim : shape) dim = detail::get_le<std::uint64_t>(is, path);
        if (!ref.contains(name) || ref[name].shape() != shape)
            throw IoError(path.string() + ": tensor " + name + " " + ad::to_string(shape) +
                          " does not match the configured architecture");
        std::string raw(ad::numel(shape) * 4, '\0');
        if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size())))
            throw IoError(path.string() + ": truncated checkpoint");
        std::vector<T> vals(ad::numel(shape));
        for (std::size_t k = 0; k < vals.size(); ++k) vals[k] = static_cast<T>(detail::get_f32le(raw.data() + 4 * k));
        ck.params.add(name, shape, std::move(vals));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes after checkpoint");
    return ck;
}

}  // namespace cureg
