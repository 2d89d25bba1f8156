#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "angioseg/imgproc.hpp"
#include "angioseg/nnet.hpp"
#include "angioseg/types.hpp"

namespace angioseg {

inline constexpr int kNumStages = 5;

/// image_id -> acquisition plane, plane -> classes that may appear in it.
struct ViewLabelTable {
    std::map<std::int64_t, int> image_plane;
    std::map<int, std::vector<int>> plane_classes;

    void validate() const;
    /// Plane of an image, or -1 when the image is not listed.
    int plane_of(std::int64_t image_id) const;
};

std::string format_view_table(const ViewLabelTable& table);
ViewLabelTable parse_view_table(std::string_view text);
ViewLabelTable load_view_table(const std::filesystem::path& path);
void save_view_table(const ViewLabelTable& table, const std::filesystem::path& path);

enum class Sampler { uniform, class_weighted, curriculum };

std::string_view sampler_name(Sampler s);
Sampler parse_sampler(std::string_view name);

struct StageConfig {
    int stage = 1;
    int epochs = 20;
    double base_lr = 0.05;
    int warm_epochs = 0;  // head-only epochs at base_lr before unfreezing
    Sampler sampler = Sampler::uniform;
    bool multi_target = false;
    int batch_size = 4;
    double momentum = 0.9;
    int curriculum_warmup = 4;
    double curriculum_q0 = 0.5;
    double curriculum_beta = 0.8;
    bool augment = false;
    AugmentConfig augmentation;

    /// Toy-scale defaults for stage k (20 epochs for stage 1, 10 after).
    static StageConfig defaults(int stage);
    void validate() const;
};

struct Example {
    std::int64_t image_id = 0;
    GrayImage image;
    ClassMask mask;
};

struct StageData {
    std::vector<Example> train;
    std::vector<Example> val;
    std::optional<ViewLabelTable> views;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mean_f1 = 0.0;
};

struct StageReport {
    int stage = 0;
    std::vector<EpochRecord> epochs;

    std::string format() const;  // epoch<TAB>train_loss<TAB>val_mean_f1
};

struct StageResult {
    ModelState model;
    StageReport report;
};

/// Stage 1 builds a fresh binary model from `net`; stage k >= 2 needs the
/// state produced by stage k-1 and ignores `net`.
StageResult run_stage(const StageConfig& stage, const ModelState* model_in, const StageData& data,
                      const NetConfig& net, const LossSettings& loss, std::uint64_t seed);

/// Mean F1 of a model on labelled examples. A binary model is scored against
/// binarized ground truth.
double evaluate_model(const ModelState& model, std::span<const Example> examples);

ClassMask predict_mask(const ModelState& model, const GrayImage& img);

/// Naive multi-class adaptation of a binary model: every foreground pixel is
/// labelled with the most frequent training class.
double naive_adaptation_f1(const ModelState& binary, const StageData& data);

// --- curriculum -------------------------------------------------------------

struct CurriculumState {
    std::map<std::int64_t, double> initial;     // d0
    std::map<std::int64_t, double> difficulty;  // running d
};

/// cv / (1 + cv) of the 8-connected instance sizes; 0 with fewer than two.
double initial_difficulty(const ClassMask& mask);

CurriculumState init_curriculum(std::span<const Example> examples);

/// d <- beta d + (1 - beta)(1 - f1).
void update_difficulty(CurriculumState& state, std::int64_t image_id, double f1, double beta);

/// q(e): linear ramp from q0 to 1 reached at the last warmup epoch.
double inclusion_quantile(int epoch, int warmup_epochs, double q0 = 0.5);

/// The ceil(q n) easiest images (ties to lower id) get 1 + d, the rest 0.
std::map<std::int64_t, double> curriculum_probabilities(const CurriculumState& state, int epoch, int warmup_epochs,
                                                        double q0 = 0.5);

// --- dataset directories ----------------------------------------------------

/// Numeric stems of the .pgm files in `dir`, ascending.
std::vector<std::int64_t> list_image_ids(const std::filesystem::path& dir);
std::filesystem::path image_file(const std::filesystem::path& dir, std::int64_t image_id,
                                 std::string_view extension = ".pgm");
std::vector<Example> load_examples(const std::filesystem::path& images, const std::filesystem::path& masks,
                                   std::span<const std::int64_t> ids);

}  // namespace angioseg
