#include "angioseg/splitsample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/multiprecision/cpp_int.hpp>
#include <fmt/format.h>

#include "angioseg/error.hpp"
#include "angioseg/postprocess.hpp"
#include "angioseg/rng.hpp"

namespace angioseg {

namespace {

using boost::multiprecision::cpp_int;

struct SegmentRef {
    std::int64_t image_id;
    std::size_t index;
    std::int64_t size;
};

}  // namespace

std::int64_t DatasetIndex::total_segments() const {
    std::int64_t n = 0;
    for (const auto& img : images) n += static_cast<std::int64_t>(img.segments.size());
    return n;
}

std::vector<std::int64_t> DatasetIndex::class_counts() const {
    std::vector<std::int64_t> counts(num_classes + 1, 0);
    for (const auto& img : images) {
        for (const auto& seg : img.segments) ++counts.at(seg.class_id);
    }
    return counts;
}

const ImageRecord& DatasetIndex::image(std::int64_t image_id) const {
    auto it = std::lower_bound(images.begin(), images.end(), image_id,
                               [](const ImageRecord& r, std::int64_t id) { return r.image_id < id; });
    if (it == images.end() || it->image_id != image_id) {
        throw Error(ErrorKind::lookup, fmt::format("image {} not in dataset index", image_id));
    }
    return *it;
}

void DatasetIndex::validate() const {
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (i > 0 && images[i].image_id <= images[i - 1].image_id) {
            throw Error(ErrorKind::domain, "dataset index images must be in strictly ascending id order");
        }
        for (const auto& seg : images[i].segments) {
            if (seg.size < 1) throw Error(ErrorKind::domain, fmt::format("image {}: empty segment", images[i].image_id));
            if (seg.class_id < 1 || seg.class_id > num_classes) {
                throw Error(ErrorKind::domain, fmt::format("image {}: class {} out of range", images[i].image_id, seg.class_id));
            }
        }
    }
}

DatasetIndex index_from_annotations(const AnnotationSet& set) {
    DatasetIndex index;
    std::map<std::int64_t, ImageRecord> records;
    for (const auto& [id, info] : set.images) records[id].image_id = id;
    for (const auto& ann : set.annotations) {
        const ImageInfo& info = set.image(ann.image_id);
        BinaryMask uni(info.width, info.height, 0);
        for (const auto& poly : ann.polygons) {
            const auto layer = rasterize_polygon(poly, info.width, info.height);
            for (std::size_t i = 0; i < layer.size(); ++i) uni.data[i] |= layer.data[i];
        }
        const auto size = std::count(uni.data.begin(), uni.data.end(), std::uint8_t{255});
        if (size > 0) records[ann.image_id].segments.push_back({ann.category_id, static_cast<std::int64_t>(size)});
    }
    for (auto& [id, rec] : records) {
        const ClassMask mask = build_class_mask(set, id);
        rec.background_pixels = std::count(mask.data.begin(), mask.data.end(), std::uint8_t{0});
        index.images.push_back(std::move(rec));
    }
    return index;
}

DatasetIndex index_from_masks(std::span<const std::pair<std::int64_t, ClassMask>> masks) {
    DatasetIndex index;
    for (const auto& [id, mask] : masks) {
        ImageRecord rec;
        rec.image_id = id;
        rec.background_pixels = std::count(mask.data.begin(), mask.data.end(), std::uint8_t{0});
        std::set<int> present(mask.data.begin(), mask.data.end());
        for (int c : present) {
            if (c == 0) continue;
            BinaryMask layer(mask.width, mask.height, 0);
            for (std::size_t i = 0; i < mask.size(); ++i) layer.data[i] = mask.data[i] == c ? 255 : 0;
            for (const auto& blob : connected_components(layer).blobs) rec.segments.push_back({c, blob.pixel_count});
        }
        index.images.push_back(std::move(rec));
    }
    std::sort(index.images.begin(), index.images.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.image_id < b.image_id; });
    return index;
}

std::vector<StatsRow> dataset_stats(const DatasetIndex& index) {
    std::map<int, StatsRow> rows;
    auto add = [&](int class_id, std::int64_t size) {
        auto [it, fresh] = rows.try_emplace(class_id);
        StatsRow& r = it->second;
        if (fresh) {
            r.class_id = class_id;
            r.min_size = size;
            r.max_size = size;
        }
        ++r.count;
        r.total_pixels += size;
        r.min_size = std::min(r.min_size, size);
        r.max_size = std::max(r.max_size, size);
    };
    for (const auto& img : index.images) {
        if (img.background_pixels > 0) add(0, img.background_pixels);
        for (const auto& seg : img.segments) add(seg.class_id, seg.size);
    }
    std::int64_t all_pixels = 0;
    for (const auto& [c, r] : rows) all_pixels += r.total_pixels;

    std::vector<StatsRow> out;
    for (auto& [c, r] : rows) {
        r.avg_size = std::round(static_cast<double>(r.total_pixels) * 100.0 / static_cast<double>(r.count)) / 100.0;
        r.share_pct = all_pixels > 0 ? 100.0 * static_cast<double>(r.total_pixels) / static_cast<double>(all_pixels) : 0.0;
        out.push_back(r);
    }
    return out;
}

std::string class_label(int class_id) {
    static const char* const kLabels[] = {"Background", "1",  "2",  "3",   "4",   "5",   "6",   "7",   "8",
                                          "9",          "9a", "10", "10a", "11",  "12",  "12a", "13",  "14",
                                          "14a",        "15", "16", "16a", "16b", "16c", "12b", "14b", "Stenosis"};
    if (class_id < 0 || class_id > kMaxClassId) return std::to_string(class_id);
    return kLabels[class_id];
}

std::string format_stats_tsv(std::span<const StatsRow> rows) {
    std::string out =
        "class_id\tclass_name\tsegments\ttotal_pixels\tmin_size\tmax_size\tavg_size\tdataset_pct\n";
    for (const auto& r : rows) {
        out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{:.2f}\t{:.4f}\n", r.class_id, class_label(r.class_id), r.count,
                           r.total_pixels, r.min_size, r.max_size, r.avg_size, r.share_pct);
    }
    return out;
}

std::vector<std::int64_t> SplitResult::ids(Split which) const {
    std::vector<std::int64_t> out;
    for (const auto& [id, s] : assignment) {
        if (s == which) out.push_back(id);
    }
    return out;
}

std::vector<std::int64_t> allocate_validation(std::span<const std::pair<int, std::int64_t>> class_counts,
                                              std::int64_t target) {
    if (class_counts.empty()) throw Error(ErrorKind::domain, "no classes to allocate");
    if (target < 0) throw Error(ErrorKind::domain, "validation target must be >= 0");
    // P_i / sum P_j = (1/n_i) / sum (1/n_j) = w_i / W with w_i = lcm / n_i.
    cpp_int lcm = 1;
    for (const auto& [c, n] : class_counts) {
        if (n < 1) throw Error(ErrorKind::domain, fmt::format("class {} has no segments", c));
        lcm = boost::multiprecision::lcm(lcm, cpp_int(n));
    }
    std::vector<cpp_int> weight;
    cpp_int total = 0;
    for (const auto& [c, n] : class_counts) {
        weight.push_back(lcm / n);
        total += weight.back();
    }
    std::vector<std::int64_t> quota(class_counts.size());
    std::vector<cpp_int> remainder(class_counts.size());
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < class_counts.size(); ++i) {
        const cpp_int scaled = weight[i] * target;
        quota[i] = static_cast<std::int64_t>(scaled / total);
        remainder[i] = scaled % total;
        assigned += quota[i];
    }
    std::vector<std::size_t> order(class_counts.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
        return class_counts[a].first < class_counts[b].first;
    });
    for (std::int64_t k = 0; k < target - assigned; ++k) ++quota[order[static_cast<std::size_t>(k)]];
    return quota;
}

SplitResult stratified_split(const DatasetIndex& index, std::int64_t target, double threshold, std::uint64_t seed) {
    index.validate();
    const auto n_images = static_cast<std::int64_t>(index.images.size());
    if (target <= 0 || target >= n_images) {
        throw Error(ErrorKind::domain,
                    fmt::format("validation target {} must satisfy 0 < V < {} (image count)", target, n_images));
    }
    if (!(threshold > 0.0)) throw Error(ErrorKind::domain, "segment-size threshold must be > 0");

    std::map<int, std::vector<SegmentRef>> by_class;
    for (const auto& img : index.images) {
        for (std::size_t k = 0; k < img.segments.size(); ++k) {
            by_class[img.segments[k].class_id].push_back({img.image_id, k, img.segments[k].size});
        }
    }
    if (by_class.empty()) throw Error(ErrorKind::domain, "dataset index has no segments");

    std::vector<std::pair<int, std::int64_t>> counts;
    for (const auto& [c, segs] : by_class) counts.emplace_back(c, static_cast<std::int64_t>(segs.size()));
    const auto quotas = allocate_validation(counts, target);
    const double total_n = static_cast<double>(index.total_segments());

    SplitResult result;
    result.target = target;
    result.threshold = threshold;
    result.seed = seed;
    for (const auto& img : index.images) result.assignment[img.image_id] = Split::train;

    std::size_t ci = 0;
    for (auto& [c, segs] : by_class) {
        ClassAllocation alloc;
        alloc.class_id = c;
        alloc.segments = static_cast<std::int64_t>(segs.size());
        alloc.proportion = total_n / static_cast<double>(segs.size());
        alloc.quota = quotas[ci++];
        alloc.granted = std::min(alloc.quota, alloc.segments);
        if (alloc.granted < alloc.quota) {
            result.warnings.push_back(fmt::format("class {}: validation quota {} clipped to {} available segments", c,
                                                  alloc.quota, alloc.segments));
        }
        // Small segments first, ascending size; the rest by seeded uniform choice.
        std::stable_sort(segs.begin(), segs.end(), [](const SegmentRef& a, const SegmentRef& b) {
            if (a.size != b.size) return a.size < b.size;
            if (a.image_id != b.image_id) return a.image_id < b.image_id;
            return a.index < b.index;
        });
        const auto small = static_cast<std::int64_t>(
            std::count_if(segs.begin(), segs.end(), [&](const SegmentRef& s) { return static_cast<double>(s.size) < threshold; }));
        alloc.small_first = std::min(small, alloc.granted);
        std::vector<SegmentRef> chosen(segs.begin(), segs.begin() + alloc.small_first);
        std::vector<SegmentRef> pool(segs.begin() + alloc.small_first, segs.end());
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        const auto extra = alloc.granted - alloc.small_first;
        for (std::int64_t k = 0; k < extra; ++k) {
            const auto pick = k + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(pool.size() - k)));
            std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick)]);
            chosen.push_back(pool[static_cast<std::size_t>(k)]);
        }
        for (const auto& s : chosen) result.assignment[s.image_id] = Split::val;
        result.allocations.push_back(alloc);
    }
    return result;
}

std::string format_split(const SplitResult& split) {
    std::string out;
    for (const auto& [id, s] : split.assignment) out += fmt::format("{}\t{}\n", id, s == Split::val ? "val" : "train");
    return out;
}

std::map<std::int64_t, Split> parse_split(std::string_view text) {
    std::map<std::int64_t, Split> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::int64_t id = 0;
        std::string which;
        if (!(fields >> id >> which) || (which != "train" && which != "val")) {
            throw Error(ErrorKind::parse, fmt::format("split line {}: expected `image_id<TAB>train|val`", line_no));
        }
        out[id] = which == "val" ? Split::val : Split::train;
    }
    return out;
}

double WeightTable::score(int class_id) const {
    for (const auto& c : classes) {
        if (c.class_id == class_id) return c.score;
    }
    throw Error(ErrorKind::lookup, fmt::format("class {} has no frequency score", class_id));
}

WeightTable class_frequency_scores(const DatasetIndex& index) {
    const auto counts = index.class_counts();
    const std::int64_t total = index.total_segments();
    if (total <= 0) throw Error(ErrorKind::domain, "dataset has no segments");
    WeightTable table;
    for (int c = 1; c <= index.num_classes; ++c) {
        if (counts[c] == 0) {
            table.excluded.push_back(c);
            continue;
        }
        const double f = static_cast<double>(counts[c]) / static_cast<double>(total);
        table.classes.push_back({c, counts[c], f, std::sqrt(f)});
    }
    return table;
}

std::map<std::int64_t, double> image_weights(const DatasetIndex& index, const WeightTable& table, WeightMode mode) {
    std::map<std::int64_t, double> out;
    for (const auto& img : index.images) {
        std::set<int> present;
        for (const auto& seg : img.segments) present.insert(seg.class_id);
        if (present.empty()) {
            out[img.image_id] = 1.0;
            continue;
        }
        double lowest_score = INFINITY;
        double lowest_reciprocal = INFINITY;
        for (int c : present) {
            const double s = table.score(c);
            if (!(s > 0.0)) {
                throw Error(ErrorKind::undefined_reciprocal,
                            fmt::format("image {}: class {} has score {}", img.image_id, c, s));
            }
            lowest_score = std::min(lowest_score, s);
            lowest_reciprocal = std::min(lowest_reciprocal, 1.0 / s);
        }
        out[img.image_id] = mode == WeightMode::intent ? 1.0 / lowest_score : lowest_reciprocal;
    }
    return out;
}

std::vector<std::int64_t> weighted_sample(const std::map<std::int64_t, double>& weights, std::size_t batch,
                                          std::uint64_t seed) {
    if (weights.empty()) throw Error(ErrorKind::empty_population, "cannot sample from an empty weight map");
    if (batch < 1) throw Error(ErrorKind::domain, "batch must be >= 1");
    std::vector<std::int64_t> ids;
    std::vector<double> cumulative;
    double acc = 0.0;
    for (const auto& [id, w] : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) {
            throw Error(ErrorKind::domain, fmt::format("image {} has non-positive sampling weight {}", id, w));
        }
        acc += w;
        ids.push_back(id);
        cumulative.push_back(acc);
    }
    Rng rng(seed);
    std::vector<std::int64_t> out;
    out.reserve(batch);
    for (std::size_t k = 0; k < batch; ++k) {
        const double u = rng.uniform() * acc;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        out.push_back(ids[static_cast<std::size_t>(it - cumulative.begin())]);
    }
    return out;
}

}  // namespace angioseg
