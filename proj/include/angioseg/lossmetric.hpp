#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "angioseg/types.hpp"

namespace angioseg {

inline constexpr double kProbabilityFloor = 1e-7;

struct ComboLossConfig {
    double alpha = 0.5;  // focal weight; (1 - alpha) goes to Tversky
    double gamma = 2.0;  // focusing exponent shared by both terms
    double tversky_alpha = 0.3;  // false-positive weight
    double tversky_beta = 0.7;   // false-negative weight
    double smooth = 1.0;

    void validate() const;
};

struct Shape3 {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const noexcept { return plane() * channels; }
};

/// Per-pixel ground-truth class ids; `valid` empty means every pixel counts.
struct PixelTargets {
    int height = 0;
    int width = 0;
    std::vector<int> labels;
    std::vector<std::uint8_t> valid;

    static PixelTargets from_mask(const ClassMask& mask);
    bool is_valid(std::size_t i) const { return valid.empty() || valid[i] != 0; }
};

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d probs, same layout as probs
};

/// Mean over valid pixels of -(1 - p_t)^gamma ln p_t, p_t floored.
LossResult focal_loss(std::span<const double> probs, Shape3 shape, const PixelTargets& targets, double gamma);

/// Focal-Tversky: mean over foreground classes present in the targets of
/// (1 - TI_c)^gamma, TI_c computed on soft probabilities.
LossResult tversky_loss(std::span<const double> probs, Shape3 shape, const PixelTargets& targets, double t_alpha,
                        double t_beta, double gamma, double smooth);

LossResult combo_loss(std::span<const double> probs, Shape3 shape, const PixelTargets& targets,
                      const ComboLossConfig& cfg);

LossResult cross_entropy(std::span<const double> class_probs, int label);

struct ClassConfusion {
    int class_id = 0;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct ImageScore {
    std::vector<ClassConfusion> classes;  // foreground classes in pred or gt
    double f1 = 0.0;
};

/// Union-macro per-image F1: mean of per-class F1 over the foreground classes
/// present in either mask; 1.0 when neither has foreground.
ImageScore image_f1(const ClassMask& pred, const ClassMask& gt);

double mean_f1(std::span<const double> scores);

/// Central-difference check of an analytic gradient. Returns the max over
/// coordinates of |analytic - numeric| / max(1, |numeric|).
double finite_diff_check(const std::function<LossResult(std::span<const double>)>& fn,
                         std::span<const double> point, double eps);

}  // namespace angioseg
