#include <doctest.h>

#include <algorithm>
#include <set>

#include "angioseg/error.hpp"
#include "angioseg/postprocess.hpp"
#include "angioseg/rng.hpp"
#include "oracles.hpp"

using namespace angioseg;

namespace {

BinaryMask random_binary(int w, int h, double p, Rng& rng) {
    BinaryMask m(w, h, 0);
    for (auto& v : m.data) v = rng.uniform() < p ? 255 : 0;
    return m;
}

void fill_rect(ClassMask& m, int x0, int y0, int x1, int y1, int c) {
    for (int y = std::max(0, y0); y < std::min(m.height, y1); ++y) {
        for (int x = std::max(0, x0); x < std::min(m.width, x1); ++x) m.at(x, y) = static_cast<std::uint8_t>(c);
    }
}

// Rectangles of random classes plus scattered single-pixel specks.
ClassMask random_scene(int size, Rng& rng) {
    ClassMask m(size, size, 0);
    const int rects = 1 + static_cast<int>(rng.below(5));
    for (int r = 0; r < rects; ++r) {
        const int x = static_cast<int>(rng.below(size)), y = static_cast<int>(rng.below(size));
        const int w = 3 + static_cast<int>(rng.below(20)), h = 3 + static_cast<int>(rng.below(20));
        fill_rect(m, x, y, x + w, y + h, 1 + static_cast<int>(rng.below(4)));
    }
    for (int s = 0; s < 30; ++s) {
        m.at(static_cast<int>(rng.below(size)), static_cast<int>(rng.below(size))) =
            static_cast<std::uint8_t>(rng.below(5));
    }
    return m;
}

}  // namespace

TEST_SUITE("postprocess") {

TEST_CASE("morphology examples") {
    BinaryMask dot(7, 7, 0);
    dot.at(3, 3) = 255;
    const auto d = morphology(dot, MorphOp::dilate, 3);
    for (int y = 0; y < 7; ++y) {
        for (int x = 0; x < 7; ++x) CHECK((d.at(x, y) == 255) == (x >= 2 && x <= 4 && y >= 2 && y <= 4));
    }
    BinaryMask scene(16, 16, 0);
    scene.at(1, 1) = 255;
    for (int y = 6; y < 11; ++y) {
        for (int x = 6; x < 11; ++x) scene.at(x, y) = 255;
    }
    BinaryMask block = scene;
    block.at(1, 1) = 0;
    CHECK(morphology(scene, MorphOp::open, 3) == block);
    try {
        morphology(scene, MorphOp::open, 4);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::configuration);
    }
}

TEST_CASE("border counts as background") {
    const BinaryMask full(5, 5, 255);
    const auto e = morphology(full, MorphOp::erode, 3);
    CHECK(e.at(0, 0) == 0);
    CHECK(e.at(2, 2) == 255);
    CHECK(std::count(e.data.begin(), e.data.end(), std::uint8_t{255}) == 9);
}

TEST_CASE("opening is idempotent") {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const auto m = random_binary(20, 20, 0.3 + 0.4 * rng.uniform(), rng);
        const auto once = morphology(m, MorphOp::open, t % 2 ? 3 : 5);
        CHECK(morphology(once, MorphOp::open, t % 2 ? 3 : 5) == once);
    }
}

TEST_CASE("connected components") {
    BinaryMask two(7, 4, 0);
    for (int y = 0; y < 4; ++y) {
        two.at(0, y) = two.at(1, y) = 255;
        two.at(4, y) = 255;
    }
    two.at(5, 0) = 255;
    const auto l = connected_components(two);
    REQUIRE(l.blobs.size() == 2);
    CHECK(l.blobs[0].pixel_count == 8);
    CHECK(l.blobs[1].pixel_count == 5);
    CHECK(l.blobs[1].min_x == 4);
    CHECK(l.blobs[1].max_x == 5);
    CHECK(connected_components(BinaryMask(5, 5, 0)).blobs.empty());
    BinaryMask diag(3, 3, 0);
    diag.at(0, 0) = diag.at(1, 1) = 255;
    CHECK(connected_components(diag).blobs.size() == 1);

    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        const auto m = random_binary(24, 24, 0.4, rng);
        const auto lab = connected_components(m);
        std::vector<std::int64_t> sizes;
        for (const auto& b : lab.blobs) sizes.push_back(b.pixel_count);
        std::sort(sizes.begin(), sizes.end());
        CHECK(sizes == oracle::component_sizes(m.data, 24, 24));
        for (std::size_t k = 0; k < lab.blobs.size(); ++k) CHECK(lab.blobs[k].label == static_cast<int>(k) + 1);
    }
}

TEST_CASE("hole filling") {
    BinaryMask ring(5, 5, 0);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 5; ++x) ring.at(x, y) = 255;
    }
    ring.at(2, 2) = 0;
    const auto filled = fill_holes(ring);
    CHECK(std::count(filled.data.begin(), filled.data.end(), std::uint8_t{255}) == 25);

    BinaryMask solid(8, 8, 0);
    for (int y = 2; y < 6; ++y) {
        for (int x = 2; x < 6; ++x) solid.at(x, y) = 255;
    }
    CHECK(fill_holes(solid) == solid);

    BinaryMask notch(6, 6, 255);
    notch.at(0, 3) = 0;
    notch.at(1, 3) = 0;
    CHECK(fill_holes(notch) == notch);

    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const auto m = random_binary(20, 20, 0.6, rng);
        CHECK(fill_holes(m).data == oracle::fill_holes(m.data, 20, 20));
    }
}

TEST_CASE("refine examples") {
    RefineConfig cfg;
    SUBCASE("speck removed") {
        ClassMask m(64, 64, 0);
        fill_rect(m, 10, 10, 30, 30, 3);
        ClassMask want = m;
        m.at(50, 50) = 3;
        m.at(51, 50) = 3;
        CHECK(refine_mask(m, cfg) == want);
    }
    SUBCASE("clean mask unchanged") {
        ClassMask m(64, 64, 0);
        fill_rect(m, 5, 5, 25, 15, 1);
        fill_rect(m, 30, 30, 50, 60, 4);
        CHECK(refine_mask(m, cfg) == m);
    }
    SUBCASE("oversized blob removed") {
        ClassMask m(128, 128, 0);
        fill_rect(m, 0, 0, 100, 100, 5);
        fill_rect(m, 110, 110, 125, 125, 2);
        const auto r = refine_mask(m, cfg);
        CHECK(std::count(r.data.begin(), r.data.end(), std::uint8_t{5}) == 0);
        CHECK(std::count(r.data.begin(), r.data.end(), std::uint8_t{2}) == 225);
    }
    SUBCASE("holes filled") {
        ClassMask m(64, 64, 0);
        fill_rect(m, 10, 10, 40, 40, 2);
        const ClassMask want = m;
        fill_rect(m, 20, 20, 24, 24, 0);
        CHECK(refine_mask(m, cfg) == want);
    }
    SUBCASE("config validation") {
        cfg.kernel = 2;
        CHECK_THROWS_AS(refine_mask(ClassMask(8, 8, 0), cfg), Error);
        cfg.kernel = 3;
        cfg.min_size = 100;
        cfg.max_size = 50;
        CHECK_THROWS_AS(cfg.validate(), Error);
    }
}

TEST_CASE("overlapping repaired layers go to the larger blob") {
    ClassMask m(40, 40, 0);
    fill_rect(m, 5, 5, 25, 25, 1);
    fill_rect(m, 12, 12, 17, 17, 2);
    RefineConfig cfg;
    cfg.min_size = 4;
    // Hole filling makes class 1 cover the class-2 island; the 400 px blob wins.
    const auto r = refine_mask(m, cfg);
    CHECK(r.at(14, 14) == 1);
    CHECK(std::count(r.data.begin(), r.data.end(), std::uint8_t{2}) == 0);
    cfg.fill_holes = false;
    CHECK(refine_mask(m, cfg) == m);
}

TEST_CASE("refine is idempotent and keeps the class set") {
    Rng rng(4);
    RefineConfig cfg;
    cfg.min_size = 6;
    cfg.max_size = 900;
    for (int t = 0; t < 100; ++t) {
        const ClassMask m = random_scene(48, rng);
        const ClassMask once = refine_mask(m, cfg);
        CHECK(refine_mask(once, cfg) == once);
        const std::set<int> before(m.data.begin(), m.data.end());
        for (auto v : once.data) CHECK(before.count(v) == 1);
    }
}

TEST_CASE("scaled size bounds") {
    const auto full = RefineConfig::scaled_for(512, 512);
    CHECK(full.min_size == 64);
    CHECK(full.max_size == 8192);
    const auto small = RefineConfig::scaled_for(128, 128);
    CHECK(small.min_size == 4);
    CHECK(small.max_size == 512);
}

}
