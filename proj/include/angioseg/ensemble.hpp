#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "angioseg/types.hpp"

namespace angioseg {

enum class EnsembleWeighting { uniform, performance };

/// Pixelwise convex combination of member maps (soft voting). Empty
/// `weights` means uniform 1/B. Per element the weighted terms are summed
/// in ascending value order, so the result does not depend on member order.
ProbabilityMap ensemble_average(std::span<const ProbabilityMap> maps, std::span<const double> weights = {});

/// Weights proportional to each member's mean F1; all-zero falls back to uniform.
std::vector<double> performance_weights(std::span<const double> mean_f1);

/// Per-pixel argmax over all channels, ties to the lowest class id.
ClassMask decode_argmax(const ProbabilityMap& map);

struct SubsetEvaluation {
    std::uint32_t bitmask = 0;  // bit i set = member i included
    std::vector<int> members;
    double mean_f1 = 0.0;
};

struct SubsetSearchResult {
    SubsetEvaluation best;
    std::vector<SubsetEvaluation> evaluated;  // ascending bitmask
};

inline constexpr int kMaxSearchMembers = 8;

/// Exhaustive search over the 2^B - 1 non-empty member subsets.
/// `predictions[b][k]` is member b's map for validation image k.
/// For performance weighting, `member_scores` supplies each member's mean F1
/// (defaults to the member's own score on this validation set).
SubsetSearchResult subset_search(const std::vector<std::vector<ProbabilityMap>>& predictions,
                                 const std::vector<ClassMask>& ground_truth, EnsembleWeighting weighting,
                                 std::span<const double> member_scores = {});

/// `subset-bitmask<TAB>mean_f1` lines; bitmask written member 0 first.
std::string format_search_log(const SubsetSearchResult& result, int members);

}  // namespace angioseg
