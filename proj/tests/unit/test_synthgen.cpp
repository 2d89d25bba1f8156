#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "angioseg/annio.hpp"
#include "angioseg/error.hpp"
#include "angioseg/synthgen.hpp"
#include "oracles.hpp"

using namespace angioseg;

namespace {

SynthConfig small(int count, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.count = count;
    cfg.width = 48;
    cfg.height = 48;
    cfg.seed = seed;
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("deterministic under seed") {
    const auto a = generate(small(10, 3));
    const auto b = generate(small(10, 3));
    REQUIRE(a.samples.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(a.samples[i].image == b.samples[i].image);
        CHECK(a.samples[i].mask == b.samples[i].mask);
        CHECK(a.samples[i].plane == b.samples[i].plane);
    }
    CHECK(a.coco_json == b.coco_json);
    CHECK(generate(small(10, 4)).coco_json != a.coco_json);
}

TEST_CASE("classes respect the plane of each image") {
    const auto cfg = small(60, 5);
    const auto ds = generate(cfg);
    const auto allowed = cfg.allowed_sets();
    REQUIRE(static_cast<int>(allowed.size()) == cfg.planes);
    std::set<int> seen;
    for (const auto& s : ds.samples) {
        const auto& ok = allowed[static_cast<std::size_t>(s.plane)];
        CHECK(ds.views.plane_of(s.image_id) == s.plane);
        for (auto v : s.mask.data) {
            if (v == 0) continue;
            seen.insert(v);
            CHECK(std::find(ok.begin(), ok.end(), v) != ok.end());
        }
        const std::set<int> present(s.mask.data.begin(), s.mask.data.end());
        CHECK(present.size() >= 3);  // background plus at least two tubes
    }
    CHECK(seen == std::set<int>(cfg.classes.begin(), cfg.classes.end()));
    for (const auto& [plane, classes] : ds.views.plane_classes) {
        CHECK(classes == allowed[static_cast<std::size_t>(plane)]);
    }
}

TEST_CASE("tubes are darker than the background") {
    const auto ds = generate(small(20, 6));
    double fg = 0.0, bg = 0.0;
    std::int64_t nf = 0, nb = 0;
    for (const auto& s : ds.samples) {
        for (std::size_t i = 0; i < s.mask.size(); ++i) {
            if (s.mask.data[i]) {
                fg += s.image.data[i];
                ++nf;
            } else {
                bg += s.image.data[i];
                ++nb;
            }
        }
    }
    CHECK(fg / nf < bg / nb - 30.0);
}

TEST_CASE("annotation json round-trips to the emitted masks") {
    const auto ds = generate(small(25, 7));
    const AnnotationSet set = parse_coco(ds.coco_json);
    CHECK(set.images.size() == 25);
    for (const auto& s : ds.samples) {
        CHECK(build_class_mask(set, s.image_id) == s.mask);
        // Polygons against an independent point-in-polygon raster.
        ClassMask redo(s.mask.width, s.mask.height, 0);
        for (const auto& ann : set.annotations) {
            if (ann.image_id != s.image_id) continue;
            for (const auto& poly : ann.polygons) {
                const auto r = oracle::raster(poly, s.mask.width, s.mask.height);
                for (std::size_t i = 0; i < r.size(); ++i) {
                    if (r[i]) redo.data[i] = static_cast<std::uint8_t>(ann.category_id);
                }
            }
        }
        CHECK(redo == s.mask);
    }
}

TEST_CASE("configuration checks") {
    auto cfg = small(5, 1);
    cfg.classes = {1, 27};
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small(5, 1);
    cfg.planes = 12;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small(5, 1);
    cfg.min_tube_width = 0.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small(5, 1);
    cfg.plane_classes = {{1, 2}, {3, 9}, {4}};
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.plane_classes = {{1, 2}, {3, 4}, {5, 6}};
    CHECK_NOTHROW(cfg.validate());
    for (const auto& s : generate(cfg).samples) {
        for (auto v : s.mask.data) {
            if (v) CHECK((v - 1) / 2 == s.plane);
        }
    }
}

TEST_CASE("dataset directory layout") {
    const auto dir = std::filesystem::temp_directory_path() / "angioseg_synth_test";
    std::filesystem::remove_all(dir);
    const auto ds = generate(small(4, 8));
    write_dataset(ds, dir);
    CHECK(std::filesystem::exists(dir / "images" / "000001.pgm"));
    CHECK(std::filesystem::exists(dir / "masks" / "000004.pgm"));
    CHECK(slurp(dir / "annotations.json") == ds.coco_json);
    const auto views = load_view_table(dir / "views.tsv");
    CHECK(views.image_plane == ds.views.image_plane);
    const auto bytes = slurp(dir / "masks" / "000002.pgm");
    const auto mask = decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
    CHECK(mask.data == ds.samples[1].mask.data);
    std::filesystem::remove_all(dir);
}

}
