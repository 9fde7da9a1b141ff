#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cureg/io.hpp"
#include "cureg/simulate.hpp"

namespace cureg {

inline constexpr int kManifestVersion = 1;

// Rng streams for child_rng, one per independent random process.
inline constexpr std::uint64_t kStreamPhantom = 0;
inline constexpr std::uint64_t kStreamSample = 1;
inline constexpr std::uint64_t kStreamSplit = 2;

struct DatasetConfig {
    std::size_t n_volumes = 10;
    std::size_t transforms_per_volume = 4;
    std::uint64_t seed = 0;
    double split_fraction = 0.9;  ///< fraction of volumes assigned to train
    SampleConfig sample;
    /// Grid the phantom is generated on. Defaults to the sample volume grid, so the
    /// identity-resampled sample volume is the phantom itself.
    std::optional<GridSpec> phantom_grid;
    PhantomParams phantom;
    unsigned threads = 0;  ///< 0 = hardware concurrency

    GridSpec phantom_spec() const { return phantom_grid.value_or(sample.volume); }
};

struct ManifestEntry {
    std::string id;
    std::size_t volume_id = 0;
    std::size_t transform = 0;
    std::string split;  ///< "train" or "test"
    std::string volume, anchor, mask;
    std::array<std::string, 3> adjacent;
    Pose pose_gt;
    std::array<double, 3> dist_gt{};
};

struct DatasetManifest {
    int format_version = kManifestVersion;
    DatasetConfig config;
    std::vector<ManifestEntry> entries;

    std::size_t count(const std::string& split) const {
        return static_cast<std::size_t>(
            std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
    }
    std::vector<std::size_t> indices(const std::string& split) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].split == split) out.push_back(i);
        return out;
    }
};

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson grid_to_json(const GridSpec& g) {
    ojson j;
    j["rank"] = g.rank;
    j["shape"] = g.shape;
    j["spacing"] = g.spacing;
    j["center"] = {g.center.x(), g.center.y(), g.center.z()};
    return j;
}

inline GridSpec grid_from_json(const ojson& j) {
    GridSpec g;
    g.rank = j.at("rank").get<int>();
    g.shape = j.at("shape").get<std::array<std::size_t, 3>>();
    g.spacing = j.at("spacing").get<std::array<double, 3>>();
    const auto c = j.at("center").get<std::array<double, 3>>();
    g.center = Vec3(c[0], c[1], c[2]);
    g.validate();
    return g;
}

inline std::string volume_name(std::size_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%05zu", v);
    return buf;
}

}  // namespace detail

/// Volumes assigned to the train split: a seeded permutation of volume ids, the first
/// round(n * fraction) of which train. Splitting per volume keeps a patient out of both sets.
inline std::vector<bool> split_volumes(std::size_t n_volumes, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("split fraction must lie in [0, 1]");
    std::vector<std::size_t> perm(n_volumes);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = child_rng(seed, kStreamSplit, 0);
    // Fisher-Yates with an explicit draw so the permutation does not depend on the std library.
    for (std::size_t i = n_volumes; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n_volumes) * fraction));
    std::vector<bool> train(n_volumes, false);
    for (std::size_t i = 0; i < n_train; ++i) train[perm[i]] = true;
    return train;
}

inline Phantom volume_phantom(const DatasetConfig& cfg, std::size_t volume_id) {
    Rng rng = child_rng(cfg.seed, kStreamPhantom, volume_id);
    return make_phantom(rng, cfg.phantom_spec(), cfg.phantom);
}

/// All samples of one volume, in transform order. Depends only on (seed, volume_id).
inline std::vector<Sample> volume_samples(const DatasetConfig& cfg, const Phantom& ph, std::size_t volume_id) {
    Rng rng = child_rng(cfg.seed, kStreamSample, volume_id);
    std::vector<Sample> out;
    for (std::size_t t = 0; t < cfg.transforms_per_volume; ++t) out.push_back(generate_sample(ph.volume, ph.mask, rng, cfg.sample));
    return out;
}

/// Rebuilds one sample from the generator without reading any files.
inline Sample regenerate_sample(const DatasetConfig& cfg, std::size_t volume_id, std::size_t transform) {
    if (transform >= cfg.transforms_per_volume) throw std::out_of_range("regenerate_sample: transform index");
    const Phantom ph = volume_phantom(cfg, volume_id);
    return volume_samples(cfg, ph, volume_id).at(transform);
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
    using detail::ojson;
    const DatasetConfig& c = m.config;
    ojson j;
    j["format_version"] = m.format_version;
    j["seed"] = c.seed;
    j["pose_convention"] = "R = Rz*Ry*Rx (degrees), world = R*p + t + volume_center, p = slice-plane offset from slice center (mm)";
    j["n_volumes"] = c.n_volumes;
    j["transforms_per_volume"] = c.transforms_per_volume;
    j["split_fraction"] = c.split_fraction;
    j["slice_grid"] = detail::grid_to_json(c.sample.slice);
    j["volume_grid"] = detail::grid_to_json(c.sample.volume);
    j["phantom_grid"] = detail::grid_to_json(c.phantom_spec());
    j["delta_mm"] = c.sample.delta_mm;
    j["trans_range_mm"] = c.sample.trans_range_mm;
    j["rot_range_deg"] = c.sample.rot_range_deg;
    j["counts"] = {{"total", m.entries.size()}, {"train", m.count("train")}, {"test", m.count("test")}};
    ojson entries = ojson::array();
    for (const auto& e : m.entries) {
        ojson je;
        je["id"] = e.id;
        je["volume_id"] = e.volume_id;
        je["transform"] = e.transform;
        je["split"] = e.split;
        je["volume"] = e.volume;
        je["anchor"] = e.anchor;
        je["adjacent"] = e.adjacent;
        je["mask"] = e.mask;
        je["pose_gt"] = e.pose_gt.to_array();
        je["dist_gt"] = e.dist_gt;
        entries.push_back(std::move(je));
    }
    j["entries"] = std::move(entries);
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::ordered_json& j) {
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestVersion)
        throw IoError("unsupported manifest format_version " + std::to_string(m.format_version));
    DatasetConfig& c = m.config;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.n_volumes = j.at("n_volumes").get<std::size_t>();
    c.transforms_per_volume = j.at("transforms_per_volume").get<std::size_t>();
    c.split_fraction = j.at("split_fraction").get<double>();
    c.sample.slice = detail::grid_from_json(j.at("slice_grid"));
    c.sample.volume = detail::grid_from_json(j.at("volume_grid"));
    c.phantom_grid = detail::grid_from_json(j.at("phantom_grid"));
    c.sample.delta_mm = j.at("delta_mm").get<double>();
    c.sample.trans_range_mm = j.at("trans_range_mm").get<double>();
    c.sample.rot_range_deg = j.at("rot_range_deg").get<double>();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.id = je.at("id").get<std::string>();
        e.volume_id = je.at("volume_id").get<std::size_t>();
        e.transform = je.at("transform").get<std::size_t>();
        e.split = je.at("split").get<std::string>();
        if (e.split != "train" && e.split != "test") throw IoError("manifest entry " + e.id + ": bad split '" + e.split + "'");
        e.volume = je.at("volume").get<std::string>();
        e.anchor = je.at("anchor").get<std::string>();
        e.adjacent = je.at("adjacent").get<std::array<std::string, 3>>();
        e.mask = je.at("mask").get<std::string>();
        e.pose_gt = Pose::from_array(je.at("pose_gt").get<std::array<double, 6>>());
        e.dist_gt = je.at("dist_gt").get<std::array<double, 3>>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << manifest_to_json(m).dump(1) << "\n";
    if (!os) throw IoError("write failed for " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open manifest " + path.string());
    try {
        return manifest_from_json(nlohmann::ordered_json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

/// Generates n_volumes phantoms with transforms_per_volume samples each and writes them under
/// out_dir together with out_dir/manifest.json. Volumes are processed in parallel; every volume
/// uses its own rng, so the bytes do not depend on the thread count.
inline DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (cfg.n_volumes < 1) throw std::invalid_argument("build_dataset: n_volumes must be >= 1");
    if (cfg.transforms_per_volume < 1) throw std::invalid_argument("build_dataset: transforms_per_volume must be >= 1");
    std::error_code ec;
    for (const char* sub : {"volumes", "frames", "masks"}) {
        fs::create_directories(out_dir / sub, ec);
        if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
    }

    const std::vector<bool> train = split_volumes(cfg.n_volumes, cfg.split_fraction, cfg.seed);
    DatasetManifest m;
    m.config = cfg;
    m.config.phantom_grid = cfg.phantom_spec();
    m.entries.resize(cfg.n_volumes * cfg.transforms_per_volume);

    auto work = [&](std::size_t v) {
        const Phantom ph = volume_phantom(cfg, v);
        const std::vector<Sample> samples = volume_samples(cfg, ph, v);
        const std::string vname = detail::volume_name(v);
        const std::string vol_rel = "volumes/" + vname + ".ctr";
        write_volume(out_dir / vol_rel, samples.front().volume);
        for (std::size_t t = 0; t < samples.size(); ++t) {
            const Sample& s = samples[t];
            ManifestEntry& e = m.entries[v * cfg.transforms_per_volume + t];
            e.id = vname + "_t" + std::to_string(t);
            e.volume_id = v;
            e.transform = t;
            e.split = train[v] ? "train" : "test";
            e.volume = vol_rel;
            e.anchor = "frames/" + e.id + "_anchor.ctr";
            e.mask = "masks/" + e.id + "_mask.ctr";
            write_frame(out_dir / e.anchor, s.anchor);
            write_frame(out_dir / e.mask, s.mask);
            for (int i = 0; i < 3; ++i) {
                e.adjacent[i] = "frames/" + e.id + "_adj" + std::to_string(i + 1) + ".ctr";
                write_frame(out_dir / e.adjacent[i], s.adjacent[i]);
            }
            e.pose_gt = s.pose_gt;
            e.dist_gt = s.dist_gt;
        }
    };

    const unsigned hw = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    const unsigned n_threads = static_cast<unsigned>(std::min<std::size_t>(hw, cfg.n_volumes));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t v; (v = next++) < cfg.n_volumes;) {
            try {
                work(v);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = cfg.n_volumes;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < n_threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);

    write_manifest(out_dir / "manifest.json", m);
    return m;
}

/// Reads the files of one manifest entry back from disk; paths are relative to root.
inline Sample load_sample(const std::filesystem::path& root, const ManifestEntry& e) {
    Sample s;
    s.volume = read_volume(root / e.volume);
    s.anchor = read_frame(root / e.anchor);
    s.mask = read_frame(root / e.mask);
    for (int i = 0; i < 3; ++i) s.adjacent[i] = read_frame(root / e.adjacent[i]);
    s.pose_gt = e.pose_gt;
    s.dist_gt = e.dist_gt;
    return s;
}

}  // namespace cureg
