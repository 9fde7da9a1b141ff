#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cureg/gradcheck_suite.hpp"
#include "cureg/registrar.hpp"

using namespace cureg;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Usage problems detected after parsing (bad combinations, empty selections) exit with code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

const CLI::Validator AtLeastOne(
    [](std::string& v) {
        try {
            if (std::stod(v) >= 1) return std::string{};
        } catch (const std::exception&) {
        }
        return "must be a number >= 1, got '" + v + "'";
    },
    ">=1");

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string numeric_tag(int precision) { return precision == 64 ? "float64" : "float32"; }

ojson pose_json(const Pose& p) {
    return ojson{{"tx", p.tx}, {"ty", p.ty}, {"tz", p.tz}, {"rx", p.rx}, {"ry", p.ry}, {"rz", p.rz}};
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw IoError("write failed for " + path.string());
}

std::string fmt(double v, int digits = 6) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

DatasetManifest load_manifest(const fs::path& data) { return read_manifest(data / "manifest.json"); }

// ---- simulate -----------------------------------------------------------------------------------

struct SimulateOpts {
    fs::path out;
    std::size_t volumes = 10, transforms = 4;
    std::uint64_t seed = 0;
    double split = 0.9;
    std::size_t slice_size = 128, volume_size = 128, volume_depth = 32;
    double slice_spacing = 0.62, volume_spacing = 0.62, delta = 1.24, trans_range = 10.0, rot_range = 20.0;
    unsigned threads = 0;
};

void add_simulate(CLI::App& app, SimulateOpts& o) {
    app.add_option("--out", o.out, "dataset directory")->required();
    app.add_option("--volumes", o.volumes, "number of phantom volumes")->check(AtLeastOne)->capture_default_str();
    app.add_option("--transforms", o.transforms, "transforms per volume")->check(AtLeastOne)->capture_default_str();
    app.add_option("--seed", o.seed, "dataset seed")->capture_default_str();
    app.add_option("--split", o.split, "fraction of volumes in the train split")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    app.add_option("--slice-size", o.slice_size, "frame width and height (pixels)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--slice-spacing", o.slice_spacing, "frame pixel spacing (mm)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--volume-size", o.volume_size, "volume width and height (voxels)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--volume-depth", o.volume_depth, "volume depth (voxels)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--volume-spacing", o.volume_spacing, "voxel spacing (mm)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--delta", o.delta, "adjacent frame spacing (mm)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--trans-range", o.trans_range, "translation range (+/- mm)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--rot-range", o.rot_range, "rotation range (+/- degrees)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--threads", o.threads, "worker threads, 0 = all cores")->capture_default_str();
}

int run_simulate(const SimulateOpts& o) {
    DatasetConfig cfg;
    cfg.n_volumes = o.volumes;
    cfg.transforms_per_volume = o.transforms;
    cfg.seed = o.seed;
    cfg.split_fraction = o.split;
    cfg.threads = o.threads;
    cfg.sample.slice = GridSpec::plane(o.slice_size, o.slice_size, o.slice_spacing);
    cfg.sample.volume = GridSpec::volume(o.volume_size, o.volume_size, o.volume_depth, o.volume_spacing);
    cfg.sample.delta_mm = o.delta;
    cfg.sample.trans_range_mm = o.trans_range;
    cfg.sample.rot_range_deg = o.rot_range;
    const DatasetManifest m = build_dataset(cfg, o.out);
    std::cout << "entries " << m.entries.size() << "\ntrain " << m.count("train") << "\ntest " << m.count("test")
              << "\nmanifest " << (o.out / "manifest.json").string() << "\n";
    return 0;
}

// ---- train --------------------------------------------------------------------------------------

struct TrainOpts {
    fs::path data, out, history;
    std::size_t steps = 200, batch = 8, d = 32, m = 64, frame_hidden = 64, head_hidden = 64;
    double lr = 1e-3, clip = 10.0;
    std::uint64_t seed = 0;
    double w_trans = 1.0, w_rot = 1.0, w_prompt = 0.1, w_reg = 0.1, w_sim = 0.5;
    std::size_t log_every = 10;
};

void add_train(CLI::App& app, TrainOpts& o) {
    app.add_option("--data", o.data, "dataset directory")->required();
    app.add_option("--out", o.out, "checkpoint path")->required();
    app.add_option("--history", o.history, "loss history table (default: <out>.loss.tsv)");
    app.add_option("--steps", o.steps, "optimizer steps")->check(AtLeastOne)->capture_default_str();
    app.add_option("--batch", o.batch, "mini-batch size")->check(AtLeastOne)->capture_default_str();
    app.add_option("--lr", o.lr, "Adam learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
    app.add_option("--clip", o.clip, "global gradient-norm clip, 0 disables")->check(CLI::NonNegativeNumber)->capture_default_str();
    app.add_option("--seed", o.seed, "initialization and shuffling seed")->capture_default_str();
    app.add_option("--d", o.d, "feature channels")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--m", o.m, "VLGA perceptron width")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--frame-hidden", o.frame_hidden, "frame input stage width")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--head-hidden", o.head_hidden, "head hidden width")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--w-trans", o.w_trans, "translation loss weight")->capture_default_str();
    app.add_option("--w-rot", o.w_rot, "rotation loss weight")->capture_default_str();
    app.add_option("--w-prompt", o.w_prompt, "prompt loss weight")->capture_default_str();
    app.add_option("--w-reg", o.w_reg, "distance loss weight")->capture_default_str();
    app.add_option("--w-sim", o.w_sim, "similarity loss weight")->capture_default_str();
    app.add_option("--log-every", o.log_every, "print the loss every N steps, 0 = never")->capture_default_str();
}

NetConfig net_for(const DatasetManifest& m, std::size_t d, std::size_t mm, std::size_t fh, std::size_t hh) {
    NetConfig c;
    c.d = d;
    c.m = mm;
    c.frame_hidden = fh;
    c.head_hidden = hh;
    const GridSpec& s = m.config.sample.slice;
    const GridSpec& v = m.config.sample.volume;
    c.slice_w = s.width();
    c.slice_h = s.height();
    c.vol_w = v.nx();
    c.vol_h = v.ny();
    c.vol_d = v.nz();
    c.validate();
    return c;
}

int run_train(const TrainOpts& o) {
    const DatasetManifest m = load_manifest(o.data);
    const NetConfig net = net_for(m, o.d, o.m, o.frame_hidden, o.head_hidden);
    const SampleSet set = SampleSet::load(o.data, m, "train");
    if (set.samples.empty()) throw UsageError("train split of " + o.data.string() + " is empty");
    TrainConfig cfg;
    cfg.steps = o.steps;
    cfg.batch = o.batch;
    cfg.lr = o.lr;
    cfg.clip_norm = o.clip;
    cfg.seed = o.seed;
    cfg.weights = {o.w_trans, o.w_rot, o.w_prompt, o.w_reg, o.w_sim};
    std::cout << "numeric float32\ntrain samples " << set.samples.size() << "\nparameters "
              << init_params<float>(net, 0).scalar_count() << "\n";
    const TrainResult r = train(set.samples, net, cfg, [&](std::size_t step, double loss) {
        if (o.log_every && (step % o.log_every == 0 || step + 1 == cfg.steps))
            std::cout << "step " << step << " loss " << fmt(loss) << "\n" << std::flush;
    });
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    save_checkpoint(o.out, net, r.params);
    std::ostringstream h;
    h << "# numeric float32\nstep\tloss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < r.history.size(); ++i) h << i << "\t" << r.history[i] << "\n";
    const fs::path hist = o.history.empty() ? fs::path(o.out.string() + ".loss.tsv") : o.history;
    write_text(hist, h.str());
    std::cout << "checkpoint " << o.out.string() << "\nhistory " << hist.string() << "\n";
    return 0;
}

// ---- shared registration plumbing ---------------------------------------------------------------

struct MethodOpts {
    std::string method = "nn";
    fs::path checkpoint;
    int precision = 32;
    std::size_t max_evals = 3000, restarts = 0;
    double init_step_mm = 2.0, init_step_deg = 4.0;
    std::string objective = "ncc";
    std::uint64_t seed = 0;
};

void add_method(CLI::App& app, MethodOpts& o, const std::vector<std::string>& methods) {
    app.add_option("--method", o.method, "registration method")->check(CLI::IsMember(methods))->capture_default_str();
    app.add_option("--checkpoint", o.checkpoint, "network checkpoint (method nn)");
    app.add_option("--precision", o.precision, "network arithmetic width in bits")->check(CLI::IsMember({32, 64}))->capture_default_str();
    app.add_option("--max-evals", o.max_evals, "classical: objective evaluation budget")->check(AtLeastOne)->capture_default_str();
    app.add_option("--restarts", o.restarts, "classical: extra jittered restarts")->capture_default_str();
    app.add_option("--init-step-mm", o.init_step_mm, "classical: initial translation step")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--init-step-deg", o.init_step_deg, "classical: initial rotation step")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--objective", o.objective, "classical: similarity objective")->check(CLI::IsMember({"ncc", "msssim"}))->capture_default_str();
    app.add_option("--seed", o.seed, "classical: restart seed")->capture_default_str();
}

OptimizerConfig optimizer_config(const MethodOpts& o) {
    OptimizerConfig c;
    c.max_evals = o.max_evals;
    c.restarts = o.restarts;
    c.init_step_mm = o.init_step_mm;
    c.init_step_deg = o.init_step_deg;
    c.objective = o.objective == "msssim" ? Objective::Msssim : Objective::Ncc;
    c.seed = o.seed;
    return c;
}

struct RegResult {
    Pose pose;
    ojson extra = ojson::object();
};

// Builds a registrar over (volume, frame) for the chosen method.
std::function<RegResult(const Volume&, const Frame&)> make_registrar(const MethodOpts& o) {
    if (o.method == "classical") {
        const OptimizerConfig cfg = optimizer_config(o);
        return [cfg](const Volume& v, const Frame& f) {
            const ClassicalResult r = classical_register(v, f, Pose{}, cfg);
            return RegResult{r.pose, ojson{{"objective", r.objective}, {"evals", r.evals}, {"exhausted", r.exhausted}}};
        };
    }
    if (o.checkpoint.empty()) throw UsageError("--method nn requires --checkpoint");
    if (o.precision == 64) {
        auto ck = std::make_shared<Checkpoint<double>>(load_checkpoint<double>(o.checkpoint));
        return [ck](const Volume& v, const Frame& f) {
            const auto p = nn_register(ck->params, ck->config, v, f);
            return RegResult{p.pose(), ojson{{"dist", {p.dist[0], p.dist[1], p.dist[2]}}}};
        };
    }
    auto ck = std::make_shared<Checkpoint<float>>(load_checkpoint<float>(o.checkpoint));
    return [ck](const Volume& v, const Frame& f) {
        const auto p = nn_register(ck->params, ck->config, v, f);
        return RegResult{p.pose(), ojson{{"dist", {p.dist[0], p.dist[1], p.dist[2]}}}};
    };
}

// ---- register -----------------------------------------------------------------------------------

struct RegisterOpts {
    MethodOpts method;
    fs::path data, volume, frame, out;
    std::string id, split;
};

void add_register(CLI::App& app, RegisterOpts& o) {
    add_method(app, o.method, {"nn", "classical"});
    app.add_option("--out", o.out, "output directory")->required();
    auto* data = app.add_option("--data", o.data, "dataset directory");
    app.add_option("--id", o.id, "manifest entry to register")->needs(data);
    app.add_option("--split", o.split, "register every entry of this split")->needs(data)->excludes("--id");
    auto* vol = app.add_option("--volume", o.volume, "volume container")->excludes(data);
    app.add_option("--frame", o.frame, "frame container")->needs(vol);
}

int run_register(const RegisterOpts& o) {
    struct Job {
        std::string id;
        Volume volume;
        Frame frame;
        std::optional<Pose> truth;
    };
    std::vector<Job> jobs;
    if (!o.volume.empty()) {
        if (o.frame.empty()) throw UsageError("--volume requires --frame");
        jobs.push_back({o.frame.stem().string(), read_volume(o.volume), read_frame(o.frame), std::nullopt});
    } else if (!o.data.empty()) {
        const DatasetManifest m = load_manifest(o.data);
        for (const ManifestEntry& e : m.entries) {
            const bool pick = !o.id.empty() ? e.id == o.id : (o.split.empty() || e.split == o.split);
            if (!pick) continue;
            Sample s = load_sample(o.data, e);
            jobs.push_back({e.id, std::move(s.volume), std::move(s.anchor), s.pose_gt});
        }
        if (jobs.empty()) throw UsageError("no manifest entries match the selection");
    } else {
        throw UsageError("give either --data or --volume and --frame");
    }

    const auto reg = make_registrar(o.method);
    fs::create_directories(o.out);
    for (const Job& j : jobs) {
        const auto t0 = Clock::now();
        const RegResult r = reg(j.volume, j.frame);
        const double secs = seconds_since(t0);
        const Frame resampled = extract_slice(j.volume, r.pose, j.frame.spec);
        Frame diff(j.frame.spec);
        for (std::size_t i = 0; i < diff.data.size(); ++i) diff.data[i] = std::abs(resampled.data[i] - j.frame.data[i]);
        write_frame(o.out / (j.id + "_resampled.ctr"), resampled);
        write_frame(o.out / (j.id + "_diff.ctr"), diff);
        ojson out{{"id", j.id},
                  {"method", o.method.method},
                  {"numeric", o.method.method == "nn" ? numeric_tag(o.method.precision) : "float64"},
                  {"pose", pose_json(r.pose)},
                  {"img_ncc", ncc(j.frame, resampled)}};
        for (auto& [k, v] : r.extra.items()) out[k] = v;
        if (j.truth) {
            out["truth"] = pose_json(*j.truth);
            out["dist_err"] = dist_err(r.pose, *j.truth, j.frame.spec, j.volume.spec);
        }
        write_text(o.out / (j.id + "_pose.json"), out.dump(1) + "\n");
        std::cout << j.id << "  tx " << fmt(r.pose.tx, 3) << " ty " << fmt(r.pose.ty, 3) << " tz " << fmt(r.pose.tz, 3)
                  << " rx " << fmt(r.pose.rx, 3) << " ry " << fmt(r.pose.ry, 3) << " rz " << fmt(r.pose.rz, 3);
        if (j.truth) std::cout << "  dist_err " << fmt(out["dist_err"].get<double>(), 3);
        std::cout << "  (" << fmt(secs, 3) << " s)\n";
    }
    return 0;
}

// ---- evaluate -----------------------------------------------------------------------------------

struct EvaluateOpts {
    MethodOpts method;
    fs::path data, tsv, json;
    std::string split = "test";
};

void add_evaluate(CLI::App& app, EvaluateOpts& o) {
    add_method(app, o.method, {"nn", "classical", "truth", "identity"});
    app.add_option("--data", o.data, "dataset directory")->required();
    app.add_option("--split", o.split, "split to evaluate")->capture_default_str();
    app.add_option("--tsv", o.tsv, "per-sample table output");
    app.add_option("--json", o.json, "structured report output");
}

int run_evaluate(const EvaluateOpts& o) {
    const DatasetManifest m = load_manifest(o.data);
    if (m.count(o.split) == 0) throw UsageError("split '" + o.split + "' is empty");
    RegisterFn fn;
    if (o.method.method == "truth") {
        fn = [](const Sample& s) { return s.pose_gt; };
    } else if (o.method.method == "identity") {
        fn = [](const Sample&) { return Pose{}; };
    } else {
        auto reg = make_registrar(o.method);
        fn = [reg](const Sample& s) { return reg(s.volume, s.anchor).pose; };
    }
    const EvalReport rep = evaluate(o.data, m, fn, o.split);
    const std::string numeric = o.method.method == "nn" ? numeric_tag(o.method.precision) : "float64";

    std::ostringstream tsv;
    tsv << "# method " << o.method.method << " numeric " << numeric << " split " << o.split << "\n";
    tsv << "id\ttx\tty\ttz\trx\try\trz\tdist_err_mm\timg_ncc_pct\timg_ssim_pct\tte_mm\tre_deg\tpara_ncc_pct\n";
    tsv << std::setprecision(10);
    for (const EvalRow& r : rep.rows) {
        tsv << r.id;
        for (double v : r.pred.to_array()) tsv << "\t" << v;
        tsv << "\t" << r.dist_err << "\t" << r.img_ncc << "\t" << r.img_ssim << "\t" << r.te << "\t" << r.re << "\t"
            << r.para_ncc << "\n";
    }
    ojson rows = ojson::array();
    for (const EvalRow& r : rep.rows)
        rows.push_back({{"id", r.id},
                        {"pred", pose_json(r.pred)},
                        {"truth", pose_json(r.truth)},
                        {"dist_err_mm", r.dist_err},
                        {"img_ncc_pct", r.img_ncc},
                        {"img_ssim_pct", r.img_ssim},
                        {"te_mm", r.te},
                        {"re_deg", r.re},
                        {"para_ncc_pct", r.para_ncc}});
    const auto& pp = rep.para_ncc_per_parameter;
    ojson js{{"format_version", 1},
             {"method", o.method.method},
             {"numeric", numeric},
             {"split", o.split},
             {"count", rep.rows.size()},
             {"mean",
              {{"dist_err_mm", rep.mean_dist_err},
               {"img_ncc_pct", rep.mean_img_ncc},
               {"img_ssim_pct", rep.mean_img_ssim},
               {"te_mm", rep.mean_te},
               {"re_deg", rep.mean_re},
               {"para_ncc_pct", rep.mean_para_ncc}}},
             {"para_ncc_per_parameter_pct", {{"tx", pp[0]}, {"ty", pp[1]}, {"tz", pp[2]}, {"rx", pp[3]}, {"ry", pp[4]}, {"rz", pp[5]}}},
             {"rows", rows}};
    if (!o.tsv.empty()) write_text(o.tsv, tsv.str());
    if (!o.json.empty()) write_text(o.json, js.dump(1) + "\n");

    std::cout << "method " << o.method.method << "  numeric " << numeric << "  split " << o.split << "  n "
              << rep.rows.size() << "\n"
              << "DistErr  " << fmt(rep.mean_dist_err, 3) << " mm\n"
              << "Img-NCC  " << fmt(rep.mean_img_ncc, 2) << " %\n"
              << "Img-SSIM " << fmt(rep.mean_img_ssim, 2) << " %\n"
              << "TE       " << fmt(rep.mean_te, 3) << " mm\n"
              << "RE       " << fmt(rep.mean_re, 3) << " deg\n"
              << "Para-NCC " << fmt(rep.mean_para_ncc, 2) << " %\n"
              << "FPS      " << fmt(rep.fps, 2) << "\n";
    return 0;
}

// ---- gradcheck ----------------------------------------------------------------------------------

struct GradcheckOpts {
    std::string filter;
};

int run_gradcheck(const GradcheckOpts& o) {
    const auto t0 = Clock::now();
    std::cout << "numeric float64\n";
    std::printf("%-18s %-6s %12s %9s %9s\n", "block", "result", "max_rel_err", "checked", "seconds");
    bool ok = true;
    const auto out = run_gradcheck_suite(o.filter, [&](const GradcheckOutcome& c) {
        ok = ok && c.report.pass;
        std::printf("%-18s %-6s %12.3e %9zu %9.2f\n", c.name.c_str(), c.report.pass ? "PASS" : "FAIL",
                    c.report.max_rel_err, c.report.checked, c.seconds);
        std::fflush(stdout);
    });
    if (out.empty()) throw UsageError("no gradcheck case matches '" + o.filter + "'");
    std::printf("total %.2f s, %s\n", seconds_since(t0), ok ? "all passed" : "FAILURES");
    return ok ? 0 : 1;
}

// ---- benchmark ----------------------------------------------------------------------------------

struct BenchmarkOpts {
    fs::path checkpoint;
    int precision = 32;
    std::size_t d = 32, iters = 5, cases = 3;
    std::uint64_t seed = 0;
};

void add_benchmark(CLI::App& app, BenchmarkOpts& o) {
    app.add_option("--checkpoint", o.checkpoint, "network checkpoint (default: untrained network at full size)");
    app.add_option("--precision", o.precision, "network arithmetic width in bits")->check(CLI::IsMember({32, 64}))->capture_default_str();
    app.add_option("--d", o.d, "feature channels of the untrained network")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--iters", o.iters, "timed forward passes")->check(AtLeastOne)->capture_default_str();
    app.add_option("--cases", o.cases, "classical registrations to time, 0 skips")->capture_default_str();
    app.add_option("--seed", o.seed, "sample seed")->capture_default_str();
}

template <class T>
double forward_fps(const ParamStore<T>& ps, const NetConfig& net, const Sample& s, std::size_t iters) {
    nn_register(ps, net, s.volume, s.anchor);  // warm-up
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < iters; ++i) nn_register(ps, net, s.volume, s.anchor);
    return static_cast<double>(iters) / seconds_since(t0);
}

int run_benchmark(const BenchmarkOpts& o) {
    NetConfig net;
    net.d = o.d;
    std::optional<Checkpoint<double>> ck64;
    std::optional<Checkpoint<float>> ck32;
    if (!o.checkpoint.empty()) {
        if (o.precision == 64) {
            ck64 = load_checkpoint<double>(o.checkpoint);
            net = ck64->config;
        } else {
            ck32 = load_checkpoint<float>(o.checkpoint);
            net = ck32->config;
        }
    }
    DatasetConfig dc;
    dc.seed = o.seed;
    dc.n_volumes = 1;
    dc.sample.slice = GridSpec::plane(net.slice_w, net.slice_h, 0.62 * 128.0 / static_cast<double>(net.slice_w));
    dc.sample.volume = GridSpec::volume(net.vol_w, net.vol_h, net.vol_d, 0.62 * 128.0 / static_cast<double>(net.vol_w));
    const Sample s = regenerate_sample(dc, 0, 0);

    double fps;
    if (o.precision == 64)
        fps = forward_fps(ck64 ? ck64->params : init_params<double>(net, o.seed), net, s, o.iters);
    else
        fps = forward_fps(ck32 ? ck32->params : init_params<float>(net, o.seed), net, s, o.iters);
    std::cout << "numeric " << numeric_tag(o.precision) << "\nnetwork d " << net.d << "  frame " << net.slice_w << "x"
              << net.slice_h << "  volume " << net.vol_w << "x" << net.vol_h << "x" << net.vol_d << "\n"
              << "forward FPS " << fmt(fps, 3) << "\n";

    if (o.cases > 0) {
        double total = 0;
        for (std::size_t i = 0; i < o.cases; ++i) {
            Rng rng = child_rng(o.seed, 10, i);
            const Pose truth = random_pose(rng, 4.0, 8.0);
            const Frame frame = extract_slice(s.volume, truth, s.anchor.spec);
            const auto t0 = Clock::now();
            classical_register(s.volume, frame, Pose{});
            total += seconds_since(t0);
        }
        std::cout << "classical seconds/case " << fmt(total / static_cast<double>(o.cases), 3) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CU-Reg slice-to-volume registration toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI/TOML file with option values; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_version_flag("--version", "cureg 1.0");

    SimulateOpts sim;
    TrainOpts tr;
    RegisterOpts rg;
    EvaluateOpts ev;
    GradcheckOpts gc;
    BenchmarkOpts bm;
    add_simulate(*app.add_subcommand("simulate", "synthesize a phantom dataset"), sim);
    add_train(*app.add_subcommand("train", "train the network on a dataset"), tr);
    add_register(*app.add_subcommand("register", "register frames to volumes"), rg);
    add_evaluate(*app.add_subcommand("evaluate", "score a registration method on a split"), ev);
    auto* gcs = app.add_subcommand("gradcheck", "finite-difference check of every differentiable block");
    gcs->add_option("--filter", gc.filter, "only run checks whose name contains this text");
    add_benchmark(*app.add_subcommand("benchmark", "time the network forward pass and classical registration"), bm);
    for (auto* sub : app.get_subcommands({})) sub->allow_config_extras(CLI::config_extras_mode::error);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "simulate") return run_simulate(sim);
        if (cmd == "train") return run_train(tr);
        if (cmd == "register") return run_register(rg);
        if (cmd == "evaluate") return run_evaluate(ev);
        if (cmd == "gradcheck") return run_gradcheck(gc);
        if (cmd == "benchmark") return run_benchmark(bm);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
