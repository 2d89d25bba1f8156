#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "angioseg/annio.hpp"
#include "angioseg/types.hpp"

namespace angioseg {

struct Segment {
    int class_id = 0;
    std::int64_t size = 0;  // px
};

struct ImageRecord {
    std::int64_t image_id = 0;
    std::vector<Segment> segments;
    std::int64_t background_pixels = 0;
};

/// Per-image segment inventory. Images are kept in ascending image_id order.
struct DatasetIndex {
    std::vector<ImageRecord> images;
    int num_classes = kMaxClassId;

    std::int64_t total_segments() const;
    /// n_i for i = 0..num_classes (slot 0 unused).
    std::vector<std::int64_t> class_counts() const;
    const ImageRecord& image(std::int64_t image_id) const;
    void validate() const;
};

/// One segment per annotation; size is the rasterized area of the
/// annotation's polygons. Background is what the flattened mask leaves at 0.
DatasetIndex index_from_annotations(const AnnotationSet& set);
/// One segment per 8-connected instance of each class.
DatasetIndex index_from_masks(std::span<const std::pair<std::int64_t, ClassMask>> masks);

/// Table-1 style row. Class 0 is the background row.
struct StatsRow {
    int class_id = 0;
    std::int64_t count = 0;
    std::int64_t total_pixels = 0;
    std::int64_t min_size = 0;
    std::int64_t max_size = 0;
    double avg_size = 0.0;   // rounded to 2 decimals
    double share_pct = 0.0;  // of all annotated pixels incl. background
};

std::vector<StatsRow> dataset_stats(const DatasetIndex& index);
std::string format_stats_tsv(std::span<const StatsRow> rows);

/// Display label of a class id (SYNTAX segment name; 0 background, 26 stenosis).
std::string class_label(int class_id);

// --- difficulty-aware stratified split ------------------------------------

enum class Split { train, val };

struct ClassAllocation {
    int class_id = 0;
    std::int64_t segments = 0;  // n_i
    double proportion = 0.0;    // P_i = N / n_i
    std::int64_t quota = 0;     // V_i after largest-remainder rounding
    std::int64_t granted = 0;   // min(V_i, n_i)
    std::int64_t small_first = 0;  // picked from segments below the threshold
};

struct SplitResult {
    std::int64_t target = 0;  // V
    double threshold = 0.0;   // S_t
    std::uint64_t seed = 0;
    std::vector<ClassAllocation> allocations;
    std::map<std::int64_t, Split> assignment;
    std::vector<std::string> warnings;

    std::vector<std::int64_t> ids(Split which) const;
};

/// V_i = round(P_i V / sum_j P_j), P_i = N / n_i, with largest-remainder
/// rounding (ties to the lower class id) so the quotas sum to V exactly.
/// Classes must have n_i > 0; exact integer arithmetic throughout.
std::vector<std::int64_t> allocate_validation(std::span<const std::pair<int, std::int64_t>> class_counts,
                                              std::int64_t target);

SplitResult stratified_split(const DatasetIndex& index, std::int64_t target, double threshold, std::uint64_t seed);
std::string format_split(const SplitResult& split);
std::map<std::int64_t, Split> parse_split(std::string_view text);

// --- class-frequency weighting --------------------------------------------

enum class WeightMode { intent, as_written };

struct ClassScore {
    int class_id = 0;
    std::int64_t count = 0;
    double frequency = 0.0;  // F_c
    double score = 0.0;      // S_c = sqrt(F_c)
};

struct WeightTable {
    std::vector<ClassScore> classes;
    std::vector<int> excluded;  // classes with no segments

    double score(int class_id) const;
};

WeightTable class_frequency_scores(const DatasetIndex& index);

/// intent: S_x = 1 / min_c S_c (rare classes boost the image).
/// as_written: S_x = min_c (1 / S_c). Images without segments weigh 1.
std::map<std::int64_t, double> image_weights(const DatasetIndex& index, const WeightTable& table,
                                             WeightMode mode = WeightMode::intent);

/// Draws with replacement, probability proportional to weight.
std::vector<std::int64_t> weighted_sample(const std::map<std::int64_t, double>& weights, std::size_t batch,
                                          std::uint64_t seed);

}  // namespace angioseg
