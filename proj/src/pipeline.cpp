#include "angioseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "angioseg/annio.hpp"
#include "angioseg/error.hpp"
#include "angioseg/lossmetric.hpp"
#include "angioseg/postprocess.hpp"
#include "angioseg/rng.hpp"
#include "angioseg/splitsample.hpp"

namespace angioseg {

namespace {

ClassMask binary_target(const ClassMask& mask) {
    ClassMask out(mask.width, mask.height, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) out.data[i] = mask.data[i] ? 1 : 0;
    return out;
}

std::vector<double> head_only_rates(double lr) {
    std::vector<double> r(kNumLayerGroups, 0.0);
    r[static_cast<int>(LayerGroup::head)] = lr;
    return r;
}

void check_prerequisites(const StageConfig& stage, const ModelState* model_in, const StageData& data) {
    if (stage.stage >= 2) {
        if (!model_in) {
            throw Error(ErrorKind::sequencing,
                        fmt::format("stage {} requires the stage-{} checkpoint, none given", stage.stage, stage.stage - 1));
        }
        if (model_in->completed_stage != stage.stage - 1) {
            throw Error(ErrorKind::sequencing,
                        fmt::format("stage {} requires the stage-{} checkpoint, got a stage-{} checkpoint", stage.stage,
                                    stage.stage - 1, model_in->completed_stage));
        }
    }
    if (stage.multi_target || stage.stage == 5) {
        if (!data.views) {
            throw Error(ErrorKind::configuration, fmt::format("stage {} needs a view label table", stage.stage));
        }
        data.views->validate();
    }
    if (data.train.empty()) throw Error(ErrorKind::empty_population, "no training images");
}

/// Image order for one epoch: `count` draws, or a shuffled pass for the uniform sampler.
std::vector<std::size_t> epoch_order(const StageConfig& stage, const StageData& data,
                                     const std::map<std::int64_t, double>& weights, std::uint64_t seed) {
    const std::size_t n = data.train.size();
    std::vector<std::size_t> order;
    if (stage.sampler == Sampler::uniform) {
        order.resize(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(seed);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        return order;
    }
    std::map<std::int64_t, std::size_t> position;
    for (std::size_t i = 0; i < n; ++i) position[data.train[i].image_id] = i;
    std::map<std::int64_t, double> active;
    for (const auto& [id, w] : weights) {
        if (w > 0.0) active.emplace(id, w);
    }
    for (std::int64_t id : weighted_sample(active, n, seed)) order.push_back(position.at(id));
    return order;
}

}  // namespace

// --- view table ---------------------------------------------------------------

void ViewLabelTable::validate() const {
    for (const auto& [id, plane] : image_plane) {
        if (plane < 0 || plane >= kNumViewPlanes) {
            throw Error(ErrorKind::domain, fmt::format("image {} has plane {} outside 0..{}", id, plane, kNumViewPlanes - 1));
        }
    }
    for (const auto& [plane, classes] : plane_classes) {
        if (plane < 0 || plane >= kNumViewPlanes) {
            throw Error(ErrorKind::domain, fmt::format("plane id {} outside 0..{}", plane, kNumViewPlanes - 1));
        }
        if (classes.empty()) throw Error(ErrorKind::domain, fmt::format("plane {} allows no classes", plane));
        for (int c : classes) {
            if (c < 1 || c > kMaxClassId) throw Error(ErrorKind::domain, fmt::format("plane {} lists class {}", plane, c));
        }
    }
}

int ViewLabelTable::plane_of(std::int64_t image_id) const {
    auto it = image_plane.find(image_id);
    return it == image_plane.end() ? -1 : it->second;
}

std::string format_view_table(const ViewLabelTable& table) {
    std::string out;
    for (const auto& [id, plane] : table.image_plane) out += fmt::format("{}\t{}\n", id, plane);
    for (const auto& [plane, classes] : table.plane_classes) {
        out += fmt::format("plane\t{}\t{}\n", plane, fmt::join(classes, ","));
    }
    return out;
}

ViewLabelTable parse_view_table(std::string_view text) {
    ViewLabelTable table;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& why) {
        throw Error(ErrorKind::parse, fmt::format("view table line {}: {}", lineno, why));
    };
    auto to_int = [&](const std::string& s) -> std::int64_t {
        std::size_t used = 0;
        std::int64_t v = 0;
        try {
            v = std::stoll(s, &used);
        } catch (const std::exception&) {
            fail(fmt::format("'{}' is not an integer", s));
        }
        if (used != s.size()) fail(fmt::format("'{}' is not an integer", s));
        return v;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string col;
        while (std::getline(ls, col, '\t')) cols.push_back(col);
        if (cols.size() == 3 && cols[0] == "plane") {
            const int plane = static_cast<int>(to_int(cols[1]));
            std::vector<int> classes;
            std::istringstream cs(cols[2]);
            std::string c;
            while (std::getline(cs, c, ',')) classes.push_back(static_cast<int>(to_int(c)));
            if (!table.plane_classes.emplace(plane, std::move(classes)).second) fail("duplicate plane entry");
        } else if (cols.size() == 2) {
            if (!table.image_plane.emplace(to_int(cols[0]), static_cast<int>(to_int(cols[1]))).second) {
                fail("duplicate image entry");
            }
        } else {
            fail("expected 'image_id<TAB>plane' or 'plane<TAB>id<TAB>classes'");
        }
    }
    table.validate();
    return table;
}

ViewLabelTable load_view_table(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_view_table(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void save_view_table(const ViewLabelTable& table, const std::filesystem::path& path) {
    const std::string text = format_view_table(table);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// --- stage configuration ----------------------------------------------------

std::string_view sampler_name(Sampler s) {
    switch (s) {
        case Sampler::uniform: return "uniform";
        case Sampler::class_weighted: return "class-weighted";
        case Sampler::curriculum: return "curriculum";
    }
    return "uniform";
}

Sampler parse_sampler(std::string_view name) {
    if (name == "uniform") return Sampler::uniform;
    if (name == "class-weighted") return Sampler::class_weighted;
    if (name == "curriculum") return Sampler::curriculum;
    throw Error(ErrorKind::configuration,
                fmt::format("unknown sampler '{}' (uniform, class-weighted, curriculum)", name));
}

StageConfig StageConfig::defaults(int stage) {
    StageConfig cfg;
    cfg.stage = stage;
    cfg.epochs = stage == 1 ? 20 : 10;
    cfg.base_lr = stage == 1 ? 0.05 : 0.2;
    cfg.warm_epochs = (stage == 2 || stage == 5) ? 1 : 0;
    cfg.sampler = stage == 3 ? Sampler::class_weighted : stage == 4 ? Sampler::curriculum : Sampler::uniform;
    cfg.multi_target = stage == 5;
    return cfg;
}

void StageConfig::validate() const {
    if (stage < 1 || stage > kNumStages) throw Error(ErrorKind::configuration, fmt::format("stage {} outside 1..5", stage));
    if (epochs < 1) throw Error(ErrorKind::configuration, "epochs must be >= 1");
    if (warm_epochs < 0 || warm_epochs > epochs) {
        throw Error(ErrorKind::configuration, fmt::format("warm epochs {} outside 0..{}", warm_epochs, epochs));
    }
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw Error(ErrorKind::configuration, "base_lr must be > 0");
    if (batch_size < 1) throw Error(ErrorKind::configuration, "batch size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::configuration, "momentum must be in [0, 1)");
    if (curriculum_warmup < 1) throw Error(ErrorKind::configuration, "curriculum warmup must be >= 1");
    if (!(curriculum_q0 > 0.0 && curriculum_q0 <= 1.0)) throw Error(ErrorKind::configuration, "q0 must be in (0, 1]");
    if (!(curriculum_beta >= 0.0 && curriculum_beta <= 1.0)) {
        throw Error(ErrorKind::configuration, "curriculum beta must be in [0, 1]");
    }
    if (stage == 1 && multi_target) throw Error(ErrorKind::configuration, "stage 1 is binary; multi-target needs stage >= 2");
    if (augment) augmentation.validate();
}

std::string StageReport::format() const {
    std::string out;
    for (const auto& e : epochs) out += fmt::format("{}\t{:.6f}\t{:.6f}\n", e.epoch, e.train_loss, e.val_mean_f1);
    return out;
}

// --- training ---------------------------------------------------------------

ClassMask predict_mask(const ModelState& model, const GrayImage& img) {
    const ForwardResult r = forward(model, img);
    ClassMask out(img.width, img.height, 0);
    const std::size_t plane = out.size();
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int c = 1; c < r.seg_shape.channels; ++c) {
            if (r.seg_probs[c * plane + i] > r.seg_probs[best * plane + i]) best = c;
        }
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

double evaluate_model(const ModelState& model, std::span<const Example> examples) {
    if (examples.empty()) throw Error(ErrorKind::empty_population, "no validation images");
    const bool binary = model.config.out_classes == 2;
    std::vector<double> scores;
    scores.reserve(examples.size());
    for (const auto& ex : examples) {
        const ClassMask pred = predict_mask(model, ex.image);
        scores.push_back(image_f1(pred, binary ? binary_target(ex.mask) : ex.mask).f1);
    }
    return mean_f1(scores);
}

double naive_adaptation_f1(const ModelState& binary, const StageData& data) {
    if (binary.config.out_classes != 2) throw Error(ErrorKind::configuration, "naive adaptation needs a binary model");
    std::vector<std::int64_t> pixels(kNumMaskClasses, 0);
    for (const auto& ex : data.train) {
        for (std::uint8_t v : ex.mask.data) ++pixels[v];
    }
    int common = 1;
    for (int c = 2; c < kNumMaskClasses; ++c) {
        if (pixels[c] > pixels[common]) common = c;
    }
    if (data.val.empty()) throw Error(ErrorKind::empty_population, "no validation images");
    std::vector<double> scores;
    for (const auto& ex : data.val) {
        ClassMask pred = predict_mask(binary, ex.image);
        for (auto& v : pred.data) v = v ? static_cast<std::uint8_t>(common) : 0;
        scores.push_back(image_f1(pred, ex.mask).f1);
    }
    return mean_f1(scores);
}

StageResult run_stage(const StageConfig& stage, const ModelState* model_in, const StageData& data,
                      const NetConfig& net, const LossSettings& loss, std::uint64_t seed) {
    stage.validate();
    loss.combo.validate();
    check_prerequisites(stage, model_in, data);

    const std::uint64_t stage_seed = derive_seed(seed, static_cast<std::uint64_t>(stage.stage));
    StageResult result;
    result.report.stage = stage.stage;
    if (stage.stage == 1) {
        NetConfig cfg = net;
        cfg.out_classes = 2;
        cfg.seed = seed;
        result.model = init_model(cfg);
    } else if (stage.stage == 2) {
        result.model = adapt_output_head(*model_in, kNumMaskClasses, stage_seed);
    } else {
        result.model = *model_in;
    }
    ModelState& model = result.model;
    const bool binary = stage.stage == 1;

    std::vector<ClassMask> targets;
    targets.reserve(data.train.size());
    for (const auto& ex : data.train) targets.push_back(binary ? binary_target(ex.mask) : ex.mask);

    std::map<std::int64_t, double> class_weights;
    if (stage.sampler == Sampler::class_weighted) {
        std::vector<std::pair<std::int64_t, ClassMask>> masks;
        for (const auto& ex : data.train) masks.emplace_back(ex.image_id, ex.mask);
        const DatasetIndex index = index_from_masks(masks);
        class_weights = image_weights(index, class_frequency_scores(index), WeightMode::intent);
    }
    CurriculumState curriculum;
    if (stage.sampler == Sampler::curriculum) curriculum = init_curriculum(data.train);

    const std::vector<double> full_rates =
        binary ? std::vector<double>(kNumLayerGroups, stage.base_lr) : discriminative_lrs(stage.base_lr, kNumLayerGroups);
    const std::vector<double> warm_rates = head_only_rates(stage.base_lr);

    LossSettings stage_loss = loss;
    if (!stage.multi_target) stage_loss.view_weight = 0.0;

    std::vector<GrayImage> augmented(static_cast<std::size_t>(stage.batch_size));
    std::vector<ClassMask> predictions;
    for (int epoch = 0; epoch < stage.epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(stage_seed, static_cast<std::uint64_t>(epoch));
        std::map<std::int64_t, double> weights;
        if (stage.sampler == Sampler::class_weighted) weights = class_weights;
        if (stage.sampler == Sampler::curriculum) {
            weights = curriculum_probabilities(curriculum, epoch, stage.curriculum_warmup, stage.curriculum_q0);
        }
        const std::vector<std::size_t> order = epoch_order(stage, data, weights, epoch_seed);
        const std::vector<double>& rates = epoch < stage.warm_epochs ? warm_rates : full_rates;

        double loss_sum = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(stage.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(stage.batch_size));
            std::vector<TrainSample> batch;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                const Example& ex = data.train[i];
                const GrayImage* image = &ex.image;
                if (stage.augment) {
                    AugmentConfig aug = stage.augmentation;
                    aug.seed = derive_seed(epoch_seed, 1000003ull * (k + 1));
                    augmented[k - start] = compose_augment(ex.image, aug);
                    image = &augmented[k - start];
                }
                int view = -1;
                if (stage.multi_target) view = data.views->plane_of(ex.image_id);
                batch.push_back({image, &targets[i], view});
            }
            const bool track = stage.sampler == Sampler::curriculum;
            loss_sum += train_step(model, batch, stage_loss, rates, stage.momentum, track ? &predictions : nullptr);
            ++steps;
            if (track) {
                for (std::size_t k = start; k < end; ++k) {
                    const std::size_t i = order[k];
                    update_difficulty(curriculum, data.train[i].image_id,
                                      image_f1(predictions[k - start], targets[i]).f1, stage.curriculum_beta);
                }
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / steps;
        rec.val_mean_f1 = data.val.empty() ? 0.0 : evaluate_model(model, data.val);
        result.report.epochs.push_back(rec);
    }
    model.completed_stage = stage.stage;
    return result;
}

// --- curriculum -------------------------------------------------------------

double initial_difficulty(const ClassMask& mask) {
    std::vector<double> sizes;
    for (int c = 1; c < kNumMaskClasses; ++c) {
        BinaryMask layer(mask.width, mask.height, 0);
        bool any = false;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask.data[i] == c) {
                layer.data[i] = 255;
                any = true;
            }
        }
        if (!any) continue;
        for (const auto& b : connected_components(layer).blobs) sizes.push_back(static_cast<double>(b.pixel_count));
    }
    if (sizes.size() < 2) return 0.0;
    const double n = static_cast<double>(sizes.size());
    double mean = 0.0;
    for (double s : sizes) mean += s;
    mean /= n;
    double var = 0.0;
    for (double s : sizes) var += (s - mean) * (s - mean);
    const double cv = std::sqrt(var / n) / mean;
    return cv / (1.0 + cv);
}

CurriculumState init_curriculum(std::span<const Example> examples) {
    CurriculumState state;
    for (const auto& ex : examples) {
        const double d0 = initial_difficulty(ex.mask);
        state.initial[ex.image_id] = d0;
        state.difficulty[ex.image_id] = d0;
    }
    return state;
}

void update_difficulty(CurriculumState& state, std::int64_t image_id, double f1, double beta) {
    if (!(f1 >= 0.0 && f1 <= 1.0)) throw Error(ErrorKind::domain, fmt::format("f1 {} outside [0, 1]", f1));
    auto it = state.difficulty.find(image_id);
    if (it == state.difficulty.end()) throw Error(ErrorKind::lookup, fmt::format("image {} not in curriculum", image_id));
    it->second = beta * it->second + (1.0 - beta) * (1.0 - f1);
}

double inclusion_quantile(int epoch, int warmup_epochs, double q0) {
    if (warmup_epochs < 1) throw Error(ErrorKind::domain, "warmup epochs must be >= 1");
    if (warmup_epochs == 1) return 1.0;
    const double t = std::min(1.0, static_cast<double>(std::max(epoch, 0)) / (warmup_epochs - 1));
    return q0 + (1.0 - q0) * t;
}

std::map<std::int64_t, double> curriculum_probabilities(const CurriculumState& state, int epoch, int warmup_epochs,
                                                        double q0) {
    const double q = inclusion_quantile(epoch, warmup_epochs, q0);
    std::vector<std::pair<double, std::int64_t>> ranked;
    for (const auto& [id, d] : state.difficulty) ranked.emplace_back(d, id);
    std::sort(ranked.begin(), ranked.end());
    const auto included =
        static_cast<std::size_t>(std::ceil(q * static_cast<double>(ranked.size()) - 1e-9));
    std::map<std::int64_t, double> out;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        out[ranked[k].second] = k < included ? 1.0 + ranked[k].first : 0.0;
    }
    return out;
}

// --- dataset directories ----------------------------------------------------

std::vector<std::int64_t> list_image_ids(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) {
        throw Error(ErrorKind::io, fmt::format("{}: not a directory", dir.string()));
    }
    std::vector<std::int64_t> ids;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
        const std::string stem = entry.path().stem().string();
        if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            continue;
        }
        ids.push_back(std::stoll(stem));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::filesystem::path image_file(const std::filesystem::path& dir, std::int64_t image_id, std::string_view extension) {
    return dir / fmt::format("{:06d}{}", image_id, extension);
}

std::vector<Example> load_examples(const std::filesystem::path& images, const std::filesystem::path& masks,
                                   std::span<const std::int64_t> ids) {
    std::vector<Example> out;
    out.reserve(ids.size());
    for (std::int64_t id : ids) {
        Example ex;
        ex.image_id = id;
        ex.image = read_pgm(image_file(images, id));
        ex.mask = read_class_mask(image_file(masks, id));
        if (ex.mask.width != ex.image.width || ex.mask.height != ex.image.height) {
            throw Error(ErrorKind::dimension, fmt::format("image {} and its mask differ in size", id));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace angioseg
