#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "angioseg/lossmetric.hpp"
#include "angioseg/types.hpp"

namespace angioseg {

/// Small U-shaped segmentation net with an auxiliary acquisition-plane head.
struct NetConfig {
    int height = 64;
    int width = 64;
    int base_channels = 8;
    int depth = 2;  // number of 2x downsamplings
    int out_classes = 2;
    int view_classes = kNumViewPlanes;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

enum class LayerGroup : int { encoder = 0, bottleneck = 1, decoder = 2, head = 3 };
inline constexpr int kNumLayerGroups = 4;

struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> momentum;
};

struct ParamGroup {
    std::string name;
    std::vector<ParamTensor> tensors;
};

struct ModelState {
    NetConfig config;
    std::vector<ParamGroup> groups;  // encoder, bottleneck, decoder, head
    std::uint64_t step = 0;
    int completed_stage = 0;  // last pipeline stage that produced this state

    std::size_t parameter_count() const;
    const ParamTensor& tensor(std::string_view name) const;
    ParamTensor& tensor(std::string_view name);

    friend bool operator==(const ModelState&, const ModelState&);
};

bool operator==(const ParamTensor& a, const ParamTensor& b);

ModelState init_model(const NetConfig& cfg);

struct ForwardResult {
    std::vector<double> seg_probs;   // out_classes x H x W
    std::vector<double> view_probs;  // view_classes
    Shape3 seg_shape;
};

ForwardResult forward(const ModelState& model, const GrayImage& img);

/// Float32 probability map of the segmentation output.
ProbabilityMap to_probability_map(const ForwardResult& result);

struct TrainSample {
    const GrayImage* image = nullptr;
    const ClassMask* target = nullptr;  // labels < out_classes
    int view_label = -1;                // < 0: no view term
};

struct LossSettings {
    ComboLossConfig combo;
    double view_weight = 1.0;  // lambda on the plane cross-entropy
};

/// Flat parameter gradient in checkpoint (group) order.
double loss_and_gradient(const ModelState& model, std::span<const TrainSample> batch, const LossSettings& loss,
                         std::vector<double>* gradient, std::vector<ClassMask>* predictions = nullptr);

/// One SGD-with-momentum step, per-group learning rates (0 freezes a group).
/// Returns the pre-update batch loss. A non-finite loss or gradient aborts
/// with a diagnostics error and leaves the model untouched.
double train_step(ModelState& model, std::span<const TrainSample> batch, const LossSettings& loss,
                  std::span<const double> group_rates, double momentum = 0.9,
                  std::vector<ClassMask>* predictions = nullptr);

/// Replace the segmentation head of a binary model with a freshly seeded one.
ModelState adapt_output_head(const ModelState& model, int new_classes, std::uint64_t seed);

/// Geometric progression from base/400 (earliest group) to base/4 (latest).
std::vector<double> discriminative_lrs(double base, int groups);

std::vector<double> flatten_parameters(const ModelState& model);
void assign_parameters(ModelState& model, std::span<const double> flat);

// ARTCKPT1 checkpoint: magic, config block, f64 parameters then f64 momentum.
std::vector<std::uint8_t> encode_checkpoint(const ModelState& model);
ModelState decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
/// Also checks the stored configuration against `expected`.
ModelState load_checkpoint(const std::filesystem::path& path, const NetConfig& expected);

}  // namespace angioseg
