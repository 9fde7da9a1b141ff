#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cureg/simulate.hpp"

using namespace cureg;

TEST_CASE("random_pose is deterministic for a reset rng") {
    Rng a(42), b(42);
    CHECK(random_pose(a) == random_pose(b));
    CHECK(random_pose(a) == random_pose(b));
}

TEST_CASE("random_pose draws are uniform over the declared box") {
    Rng rng(7);
    const int n = 100000;
    const double tr = 10.0, rr = 20.0;
    std::array<double, 6> lo, hi, sum{};
    lo.fill(1e9);
    hi.fill(-1e9);
    for (int i = 0; i < n; ++i) {
        const auto p = random_pose(rng, tr, rr).to_array();
        for (int k = 0; k < 6; ++k) {
            lo[k] = std::min(lo[k], p[k]);
            hi[k] = std::max(hi[k], p[k]);
            sum[k] += p[k];
        }
    }
    for (int k = 0; k < 6; ++k) {
        const double range = k < 3 ? tr : rr;
        CHECK(lo[k] >= -range);
        CHECK(hi[k] <= range);
        // Extremes land close to the box edges for this many draws.
        CHECK(lo[k] < -0.99 * range);
        CHECK(hi[k] > 0.99 * range);
        const double sigma = range / std::sqrt(3.0) / std::sqrt(static_cast<double>(n));
        CHECK(std::abs(sum[k] / n) < 3.0 * sigma);
    }
}

TEST_CASE("random_pose rejects non-positive ranges") {
    Rng rng(1);
    CHECK_THROWS_AS(random_pose(rng, 0.0, 20.0), std::invalid_argument);
    CHECK_THROWS_AS(random_pose(rng, 10.0, -1.0), std::invalid_argument);
}

TEST_CASE("child_rng streams are reproducible and distinct") {
    Rng a = child_rng(5, 0, 3), b = child_rng(5, 0, 3), c = child_rng(5, 1, 3), d = child_rng(5, 0, 4);
    const auto x = a();
    CHECK(x == b());
    CHECK(x != c());
    CHECK(x != d());
}

TEST_CASE("phantom mask fraction and intensity range over 100 seeds") {
    const GridSpec spec = GridSpec::volume(64, 64, 16, 1.24);
    for (std::uint64_t s = 0; s < 100; ++s) {
        Rng rng = child_rng(s, 0, 0);
        const Phantom ph = make_phantom(rng, spec);
        double frac = 0;
        for (float m : ph.mask.data) {
            REQUIRE((m == 0.0f || m == 1.0f));
            frac += m;
        }
        frac /= static_cast<double>(ph.mask.data.size());
        CHECK(frac >= 0.02);
        CHECK(frac <= 0.30);
        const auto [mn, mx] = std::minmax_element(ph.volume.data.begin(), ph.volume.data.end());
        CHECK(*mn >= 0.0f);
        CHECK(*mx <= 1.0f);
    }
}

TEST_CASE("phantom is bit-identical for the same seed") {
    const GridSpec spec = GridSpec::volume(32, 32, 8, 2.48);
    Rng a(9), b(9), c(10);
    const Phantom pa = make_phantom(a, spec), pb = make_phantom(b, spec), pc = make_phantom(c, spec);
    CHECK(pa.volume.data == pb.volume.data);
    CHECK(pa.mask.data == pb.mask.data);
    CHECK(pa.volume.data != pc.volume.data);
}

TEST_CASE("phantom requires a 3D grid") {
    Rng rng(1);
    CHECK_THROWS_AS(make_phantom(rng, GridSpec::plane(16, 16, 1.0)), std::invalid_argument);
}

namespace {

SampleConfig small_config() {
    SampleConfig cfg;
    cfg.slice = GridSpec::plane(32, 32, 2.48);
    cfg.volume = GridSpec::volume(32, 32, 8, 2.48);
    return cfg;
}

}  // namespace

TEST_CASE("generate_sample construction") {
    const SampleConfig cfg = small_config();
    Rng prng(3);
    const Phantom ph = make_phantom(prng, cfg.volume);
    Rng rng(11);
    const Sample s = generate_sample(ph.volume, ph.mask, rng, cfg);

    CHECK(s.dist_gt[0] == 1.24);
    CHECK(s.dist_gt[1] == 2.48);
    CHECK(s.dist_gt[2] == Catch::Approx(3.72).margin(1e-15));

    // anchor equals a fresh extraction at the same pose, exactly
    CHECK(extract_slice(ph.volume, s.pose_gt, cfg.slice).data == s.anchor.data);
    CHECK(extract_slice(ph.mask, s.pose_gt, cfg.slice).data == s.mask.data);
    for (float m : s.mask.data) {
        CHECK(m >= 0.0f);
        CHECK(m <= 1.0f);
    }
    for (const Frame& f : s.adjacent) CHECK(f.spec == s.anchor.spec);
    CHECK(s.mask.spec == s.anchor.spec);
    // phantom grid equals the sample grid, so identity resampling is a copy
    CHECK(s.volume.data == ph.volume.data);
}

TEST_CASE("dist_gt equals the distance between anchor and adjacent translations") {
    const SampleConfig cfg = small_config();
    Rng prng(4);
    const Phantom ph = make_phantom(prng, cfg.volume);
    Rng rng(12);
    for (int k = 0; k < 50; ++k) {
        const Sample s = generate_sample(ph.volume, ph.mask, rng, cfg);
        for (int i = 1; i <= 3; ++i) {
            const Pose adj = adjacent_pose(s.pose_gt, i, cfg.delta_mm);
            CHECK(std::abs((adj.translation() - s.pose_gt.translation()).norm() - s.dist_gt[i - 1]) < 1e-9);
            CHECK(adj.rotation() == s.pose_gt.rotation());
            // the frame really is the slice at the shifted pose
            if (k == 0) CHECK(extract_slice(ph.volume, adj, cfg.slice).data == s.adjacent[i - 1].data);
        }
        for (int c = 0; c < 3; ++c) CHECK(std::abs(s.pose_gt.translation()[c]) <= cfg.trans_range_mm);
        for (int c = 0; c < 3; ++c) CHECK(std::abs(s.pose_gt.rotation()[c]) <= cfg.rot_range_deg);
    }
}

TEST_CASE("generate_sample rejects mismatched grids") {
    const SampleConfig cfg = small_config();
    Volume a(GridSpec::volume(32, 32, 8, 2.48)), b(GridSpec::volume(32, 32, 9, 2.48));
    Rng rng(1);
    CHECK_THROWS_AS(generate_sample(a, b, rng, cfg), std::invalid_argument);
}
