#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "angioseg/error.hpp"
#include "angioseg/rng.hpp"
#include "angioseg/splitsample.hpp"
#include "oracles.hpp"

using namespace angioseg;

namespace {

DatasetIndex make_index(const std::vector<std::vector<Segment>>& per_image) {
    DatasetIndex index;
    std::int64_t id = 1;
    for (const auto& segs : per_image) {
        ImageRecord rec;
        rec.image_id = id++;
        rec.segments = segs;
        rec.background_pixels = 100;
        index.images.push_back(rec);
    }
    return index;
}

std::vector<std::int64_t> alloc(const std::vector<std::int64_t>& n, std::int64_t v) {
    std::vector<std::pair<int, std::int64_t>> counts;
    for (std::size_t i = 0; i < n.size(); ++i) counts.emplace_back(static_cast<int>(i) + 1, n[i]);
    return allocate_validation(counts, v);
}

}  // namespace

TEST_SUITE("splitsample") {

TEST_CASE("stats rows") {
    SUBCASE("table row average") {
        DatasetIndex index;
        ImageRecord rec;
        rec.image_id = 1;
        // 404 segments totalling 650,624 px.
        for (int i = 0; i < 404; ++i) rec.segments.push_back({1, i < 248 ? 1610 : 1611});
        rec.background_pixels = 0;
        index.images.push_back(rec);
        std::int64_t total = 0;
        for (auto& s : rec.segments) total += s.size;
        REQUIRE(total == 248 * 1610 + 156 * 1611);
        // Adjust one segment so the total hits the target exactly.
        index.images[0].segments[0].size += 650624 - total;
        const auto rows = dataset_stats(index);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].count == 404);
        CHECK(rows[0].total_pixels == 650624);
        CHECK(rows[0].avg_size == doctest::Approx(1610.46).epsilon(1e-12));
    }
    SUBCASE("singleton") {
        const auto rows = dataset_stats(make_index({{{3, 3}}}));
        const auto& r = rows.back();
        CHECK(r.class_id == 3);
        CHECK(r.min_size == 3);
        CHECK(r.max_size == 3);
        CHECK(r.avg_size == 3.0);
    }
    SUBCASE("two segments") {
        const auto rows = dataset_stats(make_index({{{2, 10}}, {{2, 30}}}));
        const auto& r = rows.back();
        CHECK(r.avg_size == 20.0);
        CHECK(r.min_size == 10);
        CHECK(r.max_size == 30);
    }
    SUBCASE("shares include background and sum to 100") {
        const auto rows = dataset_stats(make_index({{{2, 10}, {5, 40}}, {{2, 30}}}));
        CHECK(rows.front().class_id == 0);
        double sum = 0.0;
        for (const auto& r : rows) {
            CHECK(r.min_size <= r.avg_size);
            CHECK(r.avg_size <= r.max_size);
            sum += r.share_pct;
        }
        CHECK(sum == doctest::Approx(100.0));
        CHECK(format_stats_tsv(rows).find("class_id\tclass_name") == 0);
    }
}

TEST_CASE("index from masks counts connected instances") {
    ClassMask m(8, 8, 0);
    m.at(0, 0) = 1;
    m.at(1, 1) = 1;  // diagonal neighbour joins the same instance
    m.at(5, 5) = 1;
    m.at(7, 0) = 4;
    const std::vector<std::pair<std::int64_t, ClassMask>> items{{7, m}};
    const auto index = index_from_masks(items);
    REQUIRE(index.images.size() == 1);
    CHECK(index.images[0].segments.size() == 3);
    CHECK(index.images[0].background_pixels == 60);
    CHECK(index.class_counts()[1] == 2);
    CHECK(index.total_segments() == 3);
}

TEST_CASE("allocation examples") {
    CHECK(alloc({20, 80}, 25) == std::vector<std::int64_t>{20, 5});
    const auto even = alloc({30, 30}, 10);
    CHECK(even[0] == even[1]);
}

TEST_CASE("allocation matches an exact rational oracle") {
    Rng rng(2024);
    for (int t = 0; t < 1000; ++t) {
        const int c = 1 + static_cast<int>(rng.below(26));
        std::vector<std::int64_t> n;
        for (int i = 0; i < c; ++i) n.push_back(1 + static_cast<std::int64_t>(rng.below(t % 3 == 0 ? 5 : 2000)));
        const auto v = static_cast<std::int64_t>(rng.below(500));
        const auto got = alloc(n, v);
        CHECK(got == oracle::allocate(n, v));
        std::int64_t sum = 0;
        for (auto q : got) {
            CHECK(q >= 0);
            sum += q;
        }
        CHECK(sum == v);
    }
}

TEST_CASE("allocation ties go to the lower class id") {
    CHECK(alloc({10, 10, 10}, 1) == std::vector<std::int64_t>{1, 0, 0});
    CHECK(alloc({10, 10, 10}, 2) == std::vector<std::int64_t>{1, 1, 0});
}

TEST_CASE("stratified split") {
    std::vector<std::vector<Segment>> imgs;
    for (int i = 0; i < 40; ++i) imgs.push_back({{1 + i % 2, 20 + 7 * i}});
    const auto index = make_index(imgs);

    SUBCASE("deterministic") {
        CHECK(stratified_split(index, 10, 50, 3).assignment == stratified_split(index, 10, 50, 3).assignment);
    }
    SUBCASE("small segments go first") {
        const auto r = stratified_split(index, 4, 50, 3);
        // class 1 sizes: 20, 34, 48 are below 50 (i = 0, 2, 4); class 2: 27, 41 (i = 1, 3)
        CHECK(r.ids(Split::val) == std::vector<std::int64_t>{1, 2, 3, 4});
        for (const auto& a : r.allocations) CHECK(a.small_first == 2);
    }
    SUBCASE("no small segments means seeded uniform picks") {
        const auto a = stratified_split(index, 10, 1, 3);
        const auto b = stratified_split(index, 10, 1, 4);
        CHECK(a.ids(Split::val).size() == 10);
        CHECK(a.assignment != b.assignment);
        for (const auto& al : a.allocations) CHECK(al.small_first == 0);
    }
    SUBCASE("quota clipping warns") {
        std::vector<std::vector<Segment>> lop;
        for (int i = 0; i < 30; ++i) lop.push_back({{1, 100}});
        lop.push_back({{2, 100}});
        const auto r = stratified_split(make_index(lop), 20, 10, 1);
        CHECK_FALSE(r.warnings.empty());
        CHECK(r.assignment.at(31) == Split::val);
    }
    SUBCASE("rejects bad targets") {
        CHECK_THROWS_AS(stratified_split(index, 0, 10, 1), Error);
        CHECK_THROWS_AS(stratified_split(index, 40, 10, 1), Error);
        CHECK_THROWS_AS(stratified_split(index, 5, 0, 1), Error);
    }
    SUBCASE("text roundtrip") {
        const auto r = stratified_split(index, 10, 50, 3);
        CHECK(parse_split(format_split(r)) == r.assignment);
        CHECK_THROWS_AS(parse_split("1\tmaybe\n"), Error);
    }
}

TEST_CASE("class frequency scores") {
    SUBCASE("quarter") {
        const auto t = class_frequency_scores(make_index({{{1, 5}}, {{2, 5}, {2, 5}, {2, 5}}}));
        CHECK(t.score(1) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("table counts") {
        std::vector<std::vector<Segment>> imgs(1);
        for (int i = 0; i < 404; ++i) imgs[0].push_back({1, 4});
        for (int i = 0; i < 6180 - 404; ++i) imgs[0].push_back({2, 4});
        const auto t = class_frequency_scores(make_index(imgs));
        CHECK(t.classes[0].frequency == doctest::Approx(0.065372).epsilon(1e-5));
        CHECK(t.score(1) == doctest::Approx(0.255680).epsilon(1e-5));
        double sum = 0.0;
        for (const auto& c : t.classes) sum += c.frequency;
        CHECK(std::abs(sum - 1.0) < 1e-12);
        CHECK(t.excluded.size() == static_cast<std::size_t>(kMaxClassId - 2));
    }
    SUBCASE("single class") {
        const auto t = class_frequency_scores(make_index({{{9, 5}, {9, 6}}}));
        CHECK(t.score(9) == 1.0);
        CHECK_THROWS_AS(t.score(3), Error);
    }
}

TEST_CASE("image weights") {
    WeightTable t;
    t.classes = {{1, 1, 0.25, 0.5}, {2, 1, 0.0625, 0.25}, {3, 1, 0.0, 0.0}};
    const auto index = make_index({{{1, 4}, {2, 4}}, {{1, 4}}, {}, {{3, 4}}});
    DatasetIndex first_three = index;
    first_three.images.pop_back();
    const auto intent = image_weights(first_three, t, WeightMode::intent);
    const auto literal = image_weights(first_three, t, WeightMode::as_written);
    CHECK(intent.at(1) == 4.0);
    CHECK(literal.at(1) == 2.0);
    CHECK(intent.at(2) == 2.0);
    CHECK(literal.at(2) == 2.0);
    CHECK(intent.at(3) == 1.0);
    try {
        image_weights(index, t);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::undefined_reciprocal);
    }
}

TEST_CASE("intent weights are monotone under class superset") {
    Rng rng(5);
    std::vector<std::vector<Segment>> imgs;
    for (int i = 0; i < 200; ++i) {
        std::vector<Segment> segs;
        const int k = 1 + static_cast<int>(rng.below(4));
        for (int j = 0; j < k; ++j) segs.push_back({1 + static_cast<int>(rng.below(8)), 10});
        imgs.push_back(segs);
    }
    const auto index = make_index(imgs);
    const auto w = image_weights(index, class_frequency_scores(index));
    auto classes = [&](std::size_t i) {
        std::set<int> s;
        for (const auto& seg : index.images[i].segments) s.insert(seg.class_id);
        return s;
    };
    int compared = 0;
    for (std::size_t x = 0; x < imgs.size(); ++x) {
        for (std::size_t y = 0; y < imgs.size(); ++y) {
            const auto cx = classes(x), cy = classes(y);
            if (std::includes(cx.begin(), cx.end(), cy.begin(), cy.end())) {
                CHECK(w.at(index.images[x].image_id) >= w.at(index.images[y].image_id));
                ++compared;
            }
        }
    }
    CHECK(compared > 200);
}

TEST_CASE("weighted sampling") {
    CHECK(weighted_sample({{5, 1.0}}, 20, 1) == std::vector<std::int64_t>(20, 5));
    const auto draws = weighted_sample({{1, 1.0}, {2, 1.0}}, 10000, 99);
    const auto ones = std::count(draws.begin(), draws.end(), 1);
    CHECK(std::abs(ones - 5000) <= 150);
    CHECK(weighted_sample({{1, 1.0}, {2, 3.0}}, 50, 7) == weighted_sample({{1, 1.0}, {2, 3.0}}, 50, 7));
    const auto skew = weighted_sample({{1, 1.0}, {2, 3.0}}, 20000, 8);
    const double frac = static_cast<double>(std::count(skew.begin(), skew.end(), 2)) / 20000.0;
    CHECK(std::abs(frac - 0.75) < 3 * std::sqrt(0.75 * 0.25 / 20000.0));
    try {
        weighted_sample({}, 3, 1);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::empty_population);
    }
}

}
