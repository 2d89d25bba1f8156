#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "angioseg/annio.hpp"
#include "angioseg/ensemble.hpp"
#include "angioseg/error.hpp"
#include "angioseg/lossmetric.hpp"
#include "angioseg/nnet.hpp"
#include "angioseg/pipeline.hpp"
#include "angioseg/postprocess.hpp"
#include "angioseg/splitsample.hpp"
#include "angioseg/synthgen.hpp"
#include "config.hpp"

namespace fs = std::filesystem;
using namespace angioseg;
using cli::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, fmt::format("{}: cannot create directory: {}", dir.string(), ec.message()));
}

std::vector<std::pair<std::int64_t, ClassMask>> load_masks(const fs::path& dir) {
    std::vector<std::pair<std::int64_t, ClassMask>> out;
    for (std::int64_t id : list_image_ids(dir)) out.emplace_back(id, read_class_mask(image_file(dir, id)));
    return out;
}

DatasetIndex dataset_index(const RunConfig& cfg) {
    if (!cfg.get("data.annotations").empty()) return index_from_annotations(load_coco(cfg.path("data.annotations")));
    if (!cfg.get("data.masks").empty()) return index_from_masks(load_masks(cfg.path("data.masks")));
    throw Error(ErrorKind::configuration, "data.annotations or data.masks is required");
}

SplitResult compute_split(const RunConfig& cfg, const DatasetIndex& index) {
    std::int64_t v = cfg.get_int64("split.val_count");
    if (v == 0) v = std::max<std::int64_t>(1, static_cast<std::int64_t>(index.images.size()) / 5);
    return stratified_split(index, v, cfg.get_double("split.threshold"), cfg.get_u64("split.seed"));
}

std::map<std::int64_t, Split> resolve_split(const RunConfig& cfg) {
    if (!cfg.get("data.split").empty()) return parse_split(read_text(cfg.path("data.split")));
    return compute_split(cfg, index_from_masks(load_masks(cfg.path("data.masks")))).assignment;
}

ComboLossConfig combo_config(const RunConfig& cfg) {
    ComboLossConfig c;
    c.alpha = cfg.get_double("loss.alpha");
    c.gamma = cfg.get_double("loss.gamma");
    c.tversky_alpha = cfg.get_double("loss.tversky_alpha");
    c.tversky_beta = cfg.get_double("loss.tversky_beta");
    c.smooth = cfg.get_double("loss.smooth");
    c.validate();
    return c;
}

// --- commands -----------------------------------------------------------------

int cmd_convert(const RunConfig& cfg) {
    const AnnotationSet set = load_coco(cfg.path("data.annotations"));
    const std::string policy = cfg.get("convert.overlap");
    OverlapPolicy overlap;
    if (policy == "last-wins") {
        overlap = OverlapPolicy::last_wins;
    } else if (policy == "first-wins") {
        overlap = OverlapPolicy::first_wins;
    } else {
        throw Error(ErrorKind::configuration, fmt::format("convert.overlap: unknown policy '{}'", policy));
    }
    const fs::path out = cfg.path("convert.out");
    make_dir(out);
    const std::string binary_out = cfg.get("convert.binary_out");
    if (!binary_out.empty()) make_dir(binary_out);
    for (const auto& [id, info] : set.images) {
        const ClassMask mask = build_class_mask(set, id, overlap);
        write_mask(mask, image_file(out, id));
        if (!binary_out.empty()) write_mask(binarize_mask(mask), image_file(binary_out, id));
    }
    fmt::print("convert: {} masks from {} annotations -> {}\n", set.images.size(), set.annotations.size(), out.string());
    return kExitOk;
}

int cmd_stats(const RunConfig& cfg) {
    const auto rows = dataset_stats(dataset_index(cfg));
    const std::string text = format_stats_tsv(rows);
    if (cfg.get("stats.out").empty()) {
        fmt::print("{}", text);
    } else {
        write_text(cfg.path("stats.out"), text);
        fmt::print("stats: {} rows -> {}\n", rows.size(), cfg.get("stats.out"));
    }
    return kExitOk;
}

int cmd_split(const RunConfig& cfg) {
    const DatasetIndex index = dataset_index(cfg);
    const SplitResult split = compute_split(cfg, index);
    for (const auto& w : split.warnings) fmt::print(stderr, "warning: {}\n", w);
    write_text(cfg.path("split.out"), format_split(split));
    fmt::print("split: {} train / {} val -> {}\n", split.ids(Split::train).size(), split.ids(Split::val).size(),
               cfg.get("split.out"));
    return kExitOk;
}

int cmd_weights(const RunConfig& cfg) {
    const DatasetIndex index = dataset_index(cfg);
    const std::string mode_name = cfg.get("weights.mode");
    WeightMode mode;
    if (mode_name == "intent") {
        mode = WeightMode::intent;
    } else if (mode_name == "as-written") {
        mode = WeightMode::as_written;
    } else {
        throw Error(ErrorKind::configuration, fmt::format("weights.mode: unknown mode '{}'", mode_name));
    }
    const WeightTable table = class_frequency_scores(index);
    const auto weights = image_weights(index, table, mode);
    std::string text;
    for (const auto& c : table.classes) {
        text += fmt::format("class\t{}\t{}\t{:.8f}\t{:.8f}\n", c.class_id, c.count, c.frequency, c.score);
    }
    for (const auto& [id, w] : weights) text += fmt::format("{}\t{:.8f}\n", id, w);
    write_text(cfg.path("weights.out"), text);
    fmt::print("weights: {} classes, {} images -> {}\n", table.classes.size(), weights.size(), cfg.get("weights.out"));
    return kExitOk;
}

int cmd_synth(const RunConfig& cfg) {
    SynthConfig sc;
    sc.count = cfg.get_int("synth.count");
    sc.width = cfg.get_int("synth.width");
    sc.height = cfg.get_int("synth.height");
    sc.classes = cfg.get_int_list("synth.classes");
    sc.planes = cfg.get_int("synth.planes");
    sc.min_branches = cfg.get_int("synth.min_branches");
    sc.max_branches = cfg.get_int("synth.max_branches");
    sc.min_tube_width = cfg.get_double("synth.min_width");
    sc.max_tube_width = cfg.get_double("synth.max_width");
    sc.noise = cfg.get_double("synth.noise");
    sc.seed = cfg.get_u64("synth.seed");
    const SynthDataset data = generate(sc);
    const fs::path out = cfg.path("synth.out");
    write_dataset(data, out);
    fmt::print("synth: {} images, {} annotations -> {}\n", data.samples.size(), data.annotations.annotations.size(),
               out.string());
    return kExitOk;
}

StageConfig stage_config(const RunConfig& cfg, int stage) {
    const std::string sec = fmt::format("stage{}.", stage);
    StageConfig s = StageConfig::defaults(stage);
    s.epochs = cfg.get_int(sec + "epochs");
    s.base_lr = cfg.get_double(sec + "base_lr");
    s.warm_epochs = cfg.get_int(sec + "warm_epochs");
    s.sampler = parse_sampler(cfg.get(sec + "sampler"));
    s.multi_target = cfg.get_bool(sec + "multi_target");
    s.batch_size = cfg.get_int(sec + "batch_size");
    s.augment = cfg.get_bool(sec + "augment");
    s.momentum = cfg.get_double("train.momentum");
    s.curriculum_warmup = cfg.get_int("train.curriculum_warmup");
    s.curriculum_q0 = cfg.get_double("train.curriculum_q0");
    s.curriculum_beta = cfg.get_double("train.curriculum_beta");
    s.validate();
    return s;
}

int cmd_train(const RunConfig& cfg, int stage) {
    if (stage < 1 || stage > kNumStages) throw Error(ErrorKind::configuration, fmt::format("--stage {} outside 1..5", stage));
    const StageConfig sc = stage_config(cfg, stage);
    const fs::path out = cfg.path("train.out");

    std::optional<ModelState> init;
    if (stage >= 2) {
        const fs::path ckpt = cfg.get("train.init").empty() ? out / fmt::format("stage{}.ckpt", stage - 1)
                                                            : cfg.path("train.init");
        if (!fs::exists(ckpt)) {
            throw Error(ErrorKind::sequencing,
                        fmt::format("stage {} needs the stage-{} checkpoint {}, which does not exist", stage, stage - 1,
                                    ckpt.string()));
        }
        init = load_checkpoint(ckpt);
    }

    const fs::path images = cfg.path("data.images");
    const fs::path masks = cfg.path("data.masks");
    const auto assignment = resolve_split(cfg);
    std::vector<std::int64_t> train_ids, val_ids;
    for (const auto& [id, which] : assignment) (which == Split::train ? train_ids : val_ids).push_back(id);
    StageData data;
    data.train = load_examples(images, masks, train_ids);
    data.val = load_examples(images, masks, val_ids);
    if (!cfg.get("data.views").empty()) data.views = load_view_table(cfg.path("data.views"));
    if (data.train.empty()) throw Error(ErrorKind::empty_population, "split has no training images");

    NetConfig net;
    net.height = data.train.front().image.height;
    net.width = data.train.front().image.width;
    net.base_channels = cfg.get_int("net.base_channels");
    net.depth = cfg.get_int("net.depth");
    if (init) {
        NetConfig expected = net;
        expected.out_classes = init->config.out_classes;
        expected.seed = init->config.seed;
        if (!(expected == init->config)) {
            throw Error(ErrorKind::configuration,
                        fmt::format("input checkpoint was built for base {} depth {} at {}x{}, configuration asks for "
                                    "base {} depth {} at {}x{}",
                                    init->config.base_channels, init->config.depth, init->config.width,
                                    init->config.height, net.base_channels, net.depth, net.width, net.height));
        }
    }
    LossSettings loss;
    loss.combo = combo_config(cfg);
    loss.view_weight = cfg.get_double("loss.view_weight");

    const StageResult result = run_stage(sc, init ? &*init : nullptr, data, net, loss, cfg.get_u64("train.seed"));
    make_dir(out);
    const fs::path ckpt_out = out / fmt::format("stage{}.ckpt", stage);
    save_checkpoint(result.model, ckpt_out);
    write_text(out / fmt::format("stage{}_report.tsv", stage), result.report.format());
    const auto& last = result.report.epochs.back();
    fmt::print("train: stage {} {} epochs, final loss {:.6f}, val mean F1 {:.6f} -> {}\n", stage, sc.epochs,
               last.train_loss, last.val_mean_f1, ckpt_out.string());
    return kExitOk;
}

int cmd_predict(const RunConfig& cfg) {
    const ModelState model = load_checkpoint(cfg.path("predict.checkpoint"));
    const fs::path images = cfg.path("data.images");
    const std::string subset = cfg.get("predict.subset");
    std::vector<std::int64_t> ids;
    if (subset == "all") {
        ids = list_image_ids(images);
    } else if (subset == "val" || subset == "train") {
        const Split want = subset == "val" ? Split::val : Split::train;
        for (const auto& [id, which] : resolve_split(cfg)) {
            if (which == want) ids.push_back(id);
        }
    } else {
        throw Error(ErrorKind::configuration, fmt::format("predict.subset: unknown subset '{}'", subset));
    }
    const fs::path out = cfg.path("predict.out");
    make_dir(out);
    for (std::int64_t id : ids) {
        const ForwardResult r = forward(model, read_pgm(image_file(images, id)));
        const ProbabilityMap map = to_probability_map(r);
        write_probmap(map, image_file(out, id, ".prob"));
        write_mask(decode_argmax(map), image_file(out, id));
    }
    fmt::print("predict: {} images -> {}\n", ids.size(), out.string());
    return kExitOk;
}

int cmd_ensemble(const RunConfig& cfg) {
    const auto members = cfg.get_list("ensemble.members");
    if (members.empty()) throw Error(ErrorKind::configuration, "ensemble.members is required");
    const std::string wname = cfg.get("ensemble.weighting");
    EnsembleWeighting weighting;
    if (wname == "uniform") {
        weighting = EnsembleWeighting::uniform;
    } else if (wname == "performance") {
        weighting = EnsembleWeighting::performance;
    } else {
        throw Error(ErrorKind::configuration, fmt::format("ensemble.weighting: unknown weighting '{}'", wname));
    }

    // Images every member predicted, in ascending id order.
    std::vector<std::int64_t> ids;
    for (std::size_t m = 0; m < members.size(); ++m) {
        std::vector<std::int64_t> mine;
        for (const auto& e : fs::directory_iterator(members[m])) {
            if (e.path().extension() == ".prob") mine.push_back(std::stoll(e.path().stem().string()));
        }
        std::sort(mine.begin(), mine.end());
        if (m == 0) {
            ids = mine;
        } else {
            std::vector<std::int64_t> common;
            std::set_intersection(ids.begin(), ids.end(), mine.begin(), mine.end(), std::back_inserter(common));
            ids = common;
        }
    }
    if (ids.empty()) throw Error(ErrorKind::empty_population, "ensemble members share no predictions");
    std::vector<std::vector<ProbabilityMap>> maps(members.size());
    for (std::size_t m = 0; m < members.size(); ++m) {
        for (std::int64_t id : ids) maps[m].push_back(read_probmap(image_file(members[m], id, ".prob")));
    }

    std::vector<int> chosen(members.size());
    for (std::size_t m = 0; m < members.size(); ++m) chosen[m] = static_cast<int>(m);
    std::vector<double> member_scores;
    const fs::path out = cfg.path("ensemble.out");
    make_dir(out);
    const bool needs_gt = cfg.get_bool("ensemble.search") || weighting == EnsembleWeighting::performance;
    std::vector<ClassMask> gt;
    if (needs_gt) {
        const fs::path masks = cfg.path("data.masks");
        for (std::int64_t id : ids) gt.push_back(read_class_mask(image_file(masks, id)));
        for (const auto& member : maps) {
            std::vector<double> s;
            for (std::size_t k = 0; k < ids.size(); ++k) s.push_back(image_f1(decode_argmax(member[k]), gt[k]).f1);
            member_scores.push_back(mean_f1(s));
        }
    }
    if (cfg.get_bool("ensemble.search")) {
        const SubsetSearchResult result = subset_search(maps, gt, weighting, member_scores);
        write_text(out / "search.tsv", format_search_log(result, static_cast<int>(members.size())));
        chosen = result.best.members;
    }
    std::vector<double> weights;
    if (weighting == EnsembleWeighting::performance) {
        std::vector<double> sub;
        for (int m : chosen) sub.push_back(member_scores[static_cast<std::size_t>(m)]);
        weights = performance_weights(sub);
    }
    std::vector<ProbabilityMap> current(chosen.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        for (std::size_t j = 0; j < chosen.size(); ++j) current[j] = maps[static_cast<std::size_t>(chosen[j])][k];
        const ProbabilityMap avg = ensemble_average(current, weights);
        write_probmap(avg, image_file(out, ids[k], ".prob"));
        write_mask(decode_argmax(avg), image_file(out, ids[k]));
    }
    fmt::print("ensemble: members [{}] over {} images -> {}\n", fmt::join(chosen, ","), ids.size(), out.string());
    return kExitOk;
}

int cmd_refine(const RunConfig& cfg) {
    const fs::path in = cfg.path("refine.input");
    const fs::path out = cfg.path("refine.out");
    make_dir(out);
    const auto ids = list_image_ids(in);
    for (std::int64_t id : ids) {
        const ClassMask mask = read_class_mask(image_file(in, id));
        RefineConfig rc = RefineConfig::scaled_for(mask.width, mask.height);
        rc.kernel = cfg.get_int("refine.kernel");
        if (cfg.get("refine.min_size") != "auto") rc.min_size = cfg.get_int64("refine.min_size");
        if (cfg.get("refine.max_size") != "auto") rc.max_size = cfg.get_int64("refine.max_size");
        rc.fill_holes = cfg.get_bool("refine.fill_holes");
        rc.passes = cfg.get_int("refine.passes");
        write_mask(refine_mask(mask, rc), image_file(out, id));
    }
    fmt::print("refine: {} masks -> {}\n", ids.size(), out.string());
    return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg) {
    const fs::path pred = cfg.path("evaluate.predictions");
    const fs::path gt = cfg.path("data.masks");
    const auto ids = list_image_ids(pred);
    if (ids.empty()) throw Error(ErrorKind::empty_population, fmt::format("{}: no predictions", pred.string()));
    std::string report;
    std::vector<double> scores;
    for (std::int64_t id : ids) {
        const double f1 = image_f1(read_class_mask(image_file(pred, id)), read_class_mask(image_file(gt, id))).f1;
        scores.push_back(f1);
        report += fmt::format("{}\t{:.6f}\n", id, f1);
    }
    const double mean = mean_f1(scores);
    report += fmt::format("MEAN\t{:.6f}\n", mean);
    if (!cfg.get("evaluate.out").empty()) write_text(cfg.path("evaluate.out"), report);
    fmt::print("evaluate: {} images, mean F1 {:.6f}\n", ids.size(), mean);
    return kExitOk;
}

struct Command {
    std::string name;
    std::string description;
};

const std::vector<Command>& commands() {
    static const std::vector<Command> c = {
        {"convert", "rasterize COCO polygon annotations into class masks"},
        {"stats", "per-class segment statistics"},
        {"split", "size-stratified train/validation split"},
        {"weights", "class-frequency scores and per-image sampling weights"},
        {"synth", "generate a synthetic angiogram dataset"},
        {"train", "run one training stage (--stage 1..5)"},
        {"predict", "write probability maps and masks for a checkpoint"},
        {"ensemble", "average member predictions, optionally searching subsets"},
        {"refine", "morphological post-processing of class masks"},
        {"evaluate", "per-image and mean F1 against ground-truth masks"},
    };
    return c;
}

/// Rejects unknown --options before CLI11 sees them so a suggestion can be offered.
std::optional<std::string> unknown_option(const std::vector<std::string>& args, const std::vector<std::string>& known) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0 || a == "--") continue;
        const std::string name = a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2);
        if (std::find(known.begin(), known.end(), name) != known.end()) continue;
        const std::string near = cli::suggest(name, known);
        return near.empty() ? fmt::format("unknown option '--{}'", name)
                            : fmt::format("unknown option '--{}' (did you mean '--{}'?)", name, near);
    }
    return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coronary vessel segmentation pipeline on grayscale angiograms"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "show help for every subcommand");

    std::map<std::string, std::string> flag_values;
    std::map<std::string, std::string> config_paths;
    std::map<std::string, CLI::App*> subs;
    std::map<std::string, std::vector<std::string>> known;
    int stage = 0;
    for (const auto& cmd : commands()) {
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.description);
        subs[cmd.name] = sub;
        sub->add_option("--config", config_paths[cmd.name], "sectioned key = value configuration file");
        known[cmd.name] = {"config", "help"};
        if (cmd.name == "train") {
            sub->add_option("--stage", stage, "stage to run (1..5)")->required();
            known[cmd.name].push_back("stage");
        }
        for (const cli::KeySpec* k : cli::keys_for(cli::command_sections(cmd.name))) {
            std::string help = k->help;
            if (!k->default_value.empty()) help += fmt::format(" [default: {}]", k->default_value);
            sub->add_option("--" + k->key, flag_values[cmd.name + "/" + k->key], help);
            known[cmd.name].push_back(k->key);
        }
    }

    if (argc >= 2) {
        const std::string name = argv[1];
        std::vector<std::string> rest(argv + 2, argv + argc);
        if (known.count(name)) {
            if (auto msg = unknown_option(rest, known[name])) {
                fmt::print(stderr, "error: {}\n", *msg);
                return kExitUsage;
            }
        } else if (name.rfind("-", 0) != 0) {
            std::vector<std::string> names;
            for (const auto& c : commands()) names.push_back(c.name);
            const std::string near = cli::suggest(name, names);
            fmt::print(stderr, "error: unknown command '{}'{}\n", name,
                       near.empty() ? "" : fmt::format(" (did you mean '{}'?)", near));
            return kExitUsage;
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    std::string active;
    for (const auto& [name, sub] : subs) {
        if (sub->parsed()) active = name;
    }
    try {
        RunConfig cfg;
        if (!config_paths[active].empty()) cfg.load_file(config_paths[active]);
        for (const cli::KeySpec* k : cli::keys_for(cli::command_sections(active))) {
            if (subs[active]->count("--" + k->key) > 0) cfg.set(k->key, flag_values[active + "/" + k->key]);
        }
        if (active == "convert") return cmd_convert(cfg);
        if (active == "stats") return cmd_stats(cfg);
        if (active == "split") return cmd_split(cfg);
        if (active == "weights") return cmd_weights(cfg);
        if (active == "synth") return cmd_synth(cfg);
        if (active == "train") return cmd_train(cfg, stage);
        if (active == "predict") return cmd_predict(cfg);
        if (active == "ensemble") return cmd_ensemble(cfg);
        if (active == "refine") return cmd_refine(cfg);
        if (active == "evaluate") return cmd_evaluate(cfg);
    } catch (const Error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return e.kind() == ErrorKind::configuration ? kExitUsage : kExitData;
    } catch (const fs::filesystem_error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
