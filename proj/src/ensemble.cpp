#include "angioseg/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "angioseg/error.hpp"
#include "angioseg/lossmetric.hpp"

namespace angioseg {

namespace {

double mean_f1_of(const std::vector<ProbabilityMap>& maps, const std::vector<ClassMask>& gt) {
    std::vector<double> scores;
    scores.reserve(maps.size());
    for (std::size_t k = 0; k < maps.size(); ++k) scores.push_back(image_f1(decode_argmax(maps[k]), gt[k]).f1);
    return mean_f1(scores);
}

bool better(const SubsetEvaluation& a, const SubsetEvaluation& b) {
    if (a.mean_f1 != b.mean_f1) return a.mean_f1 > b.mean_f1;
    if (a.members.size() != b.members.size()) return a.members.size() < b.members.size();
    return std::lexicographical_compare(a.members.begin(), a.members.end(), b.members.begin(), b.members.end());
}

}  // namespace

ProbabilityMap ensemble_average(std::span<const ProbabilityMap> maps, std::span<const double> weights) {
    if (maps.empty()) throw Error(ErrorKind::domain, "ensemble of zero members");
    const ProbabilityMap& first = maps.front();
    for (const auto& m : maps) {
        if (m.channels != first.channels || m.height != first.height || m.width != first.width ||
            m.data.size() != first.data.size()) {
            throw Error(ErrorKind::dimension, fmt::format("member map {}x{}x{} differs from {}x{}x{}", m.channels,
                                                          m.height, m.width, first.channels, first.height, first.width));
        }
    }
    const bool uniform = weights.empty();
    if (!uniform) {
        if (weights.size() != maps.size()) {
            throw Error(ErrorKind::dimension,
                        fmt::format("{} weights for {} ensemble members", weights.size(), maps.size()));
        }
        double sum = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::domain, "ensemble weights must be >= 0");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::domain, fmt::format("ensemble weights sum to {}", sum));
    }

    ProbabilityMap out(first.channels, first.height, first.width);
    std::vector<double> terms(maps.size());
    const double inv_b = 1.0 / static_cast<double>(maps.size());
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        for (std::size_t b = 0; b < maps.size(); ++b) {
            const double v = maps[b].data[i];
            terms[b] = uniform ? v : weights[b] * v;
        }
        std::sort(terms.begin(), terms.end());
        double acc = 0.0;
        for (double t : terms) acc += t;
        out.data[i] = static_cast<float>(uniform ? acc * inv_b : acc);
    }
    return out;
}

std::vector<double> performance_weights(std::span<const double> mean_f1) {
    if (mean_f1.empty()) throw Error(ErrorKind::domain, "no member scores");
    double sum = 0.0;
    for (double s : mean_f1) {
        if (!(s >= 0.0)) throw Error(ErrorKind::domain, "member scores must be >= 0");
        sum += s;
    }
    std::vector<double> w(mean_f1.size(), 1.0 / static_cast<double>(mean_f1.size()));
    if (sum > 0.0) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = mean_f1[i] / sum;
    }
    return w;
}

ClassMask decode_argmax(const ProbabilityMap& map) {
    ClassMask out(map.width, map.height, 0);
    const std::size_t plane = map.plane();
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        float best_p = map.data[i];
        for (int c = 1; c < map.channels; ++c) {
            const float p = map.data[c * plane + i];
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

SubsetSearchResult subset_search(const std::vector<std::vector<ProbabilityMap>>& predictions,
                                 const std::vector<ClassMask>& ground_truth, EnsembleWeighting weighting,
                                 std::span<const double> member_scores) {
    const int members = static_cast<int>(predictions.size());
    if (members < 1) throw Error(ErrorKind::domain, "subset search needs at least one member");
    if (members > kMaxSearchMembers) {
        throw Error(ErrorKind::domain, fmt::format("subset search supports at most {} members", kMaxSearchMembers));
    }
    for (const auto& p : predictions) {
        if (p.size() != ground_truth.size()) {
            throw Error(ErrorKind::dimension, "every member needs one prediction per validation image");
        }
    }
    if (ground_truth.empty()) throw Error(ErrorKind::domain, "subset search needs validation images");

    std::vector<double> scores(member_scores.begin(), member_scores.end());
    if (weighting == EnsembleWeighting::performance && scores.empty()) {
        for (const auto& p : predictions) scores.push_back(mean_f1_of(p, ground_truth));
    }
    if (weighting == EnsembleWeighting::performance && static_cast<int>(scores.size()) != members) {
        throw Error(ErrorKind::dimension, "one performance score per member required");
    }

    SubsetSearchResult result;
    for (std::uint32_t mask = 1; mask < (1u << members); ++mask) {
        SubsetEvaluation eval;
        eval.bitmask = mask;
        for (int b = 0; b < members; ++b) {
            if (mask & (1u << b)) eval.members.push_back(b);
        }
        std::vector<double> weights;
        if (weighting == EnsembleWeighting::performance) {
            std::vector<double> sub;
            for (int b : eval.members) sub.push_back(scores[static_cast<std::size_t>(b)]);
            weights = performance_weights(sub);
        }
        std::vector<double> per_image;
        std::vector<ProbabilityMap> maps(eval.members.size());
        for (std::size_t k = 0; k < ground_truth.size(); ++k) {
            for (std::size_t j = 0; j < eval.members.size(); ++j) maps[j] = predictions[static_cast<std::size_t>(eval.members[j])][k];
            per_image.push_back(image_f1(decode_argmax(ensemble_average(maps, weights)), ground_truth[k]).f1);
        }
        eval.mean_f1 = mean_f1(per_image);
        if (result.evaluated.empty() || better(eval, result.best)) result.best = eval;
        result.evaluated.push_back(std::move(eval));
    }
    return result;
}

std::string format_search_log(const SubsetSearchResult& result, int members) {
    std::string out;
    for (const auto& e : result.evaluated) {
        std::string bits;
        for (int b = 0; b < members; ++b) bits.push_back((e.bitmask >> b) & 1u ? '1' : '0');
        out += fmt::format("{}\t{:.6f}\n", bits, e.mean_f1);
    }
    return out;
}

}  // namespace angioseg
