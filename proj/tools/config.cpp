#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "angioseg/error.hpp"
#include "angioseg/pipeline.hpp"

namespace angioseg::cli {

namespace {

std::vector<KeySpec> build_schema() {
    std::vector<KeySpec> s = {
        {"data.images", "", "directory of input images (<id>.pgm)"},
        {"data.masks", "", "directory of ground-truth class masks (<id>.pgm)"},
        {"data.annotations", "", "COCO annotation file"},
        {"data.views", "", "view label table (image_id<TAB>plane lines)"},
        {"data.split", "", "split file (id<TAB>train|val); computed from split.* when empty"},

        {"synth.out", "synth", "output directory"},
        {"synth.count", "200", "number of images"},
        {"synth.width", "64", "image width"},
        {"synth.height", "64", "image height"},
        {"synth.classes", "1,2,3,4,5,6", "class ids in use"},
        {"synth.planes", "3", "number of acquisition planes"},
        {"synth.min_branches", "2", "fewest tubes per image"},
        {"synth.max_branches", "5", "most tubes per image"},
        {"synth.min_width", "2", "narrowest tube, px"},
        {"synth.max_width", "4.5", "widest tube, px"},
        {"synth.noise", "6", "background texture amplitude"},
        {"synth.seed", "0", "generator seed"},

        {"convert.out", "masks", "output directory for class masks"},
        {"convert.binary_out", "", "optional directory for binary masks"},
        {"convert.overlap", "last-wins", "overlap policy: last-wins or first-wins"},

        {"stats.out", "", "report file (stdout when empty)"},

        {"split.out", "split.tsv", "split file to write"},
        {"split.val_count", "0", "validation images (0: one fifth of the dataset)"},
        {"split.threshold", "30", "segment size below which segments are taken first, px"},
        {"split.seed", "0", "split seed"},

        {"weights.out", "weights.tsv", "weight table to write"},
        {"weights.mode", "intent", "intent or as-written"},

        {"net.base_channels", "8", "channels of the first level"},
        {"net.depth", "2", "number of 2x downsamplings"},

        {"loss.alpha", "0.5", "focal share of the combo loss"},
        {"loss.gamma", "2", "focusing exponent"},
        {"loss.tversky_alpha", "0.3", "Tversky false-positive weight"},
        {"loss.tversky_beta", "0.7", "Tversky false-negative weight"},
        {"loss.smooth", "1", "Tversky smoothing"},
        {"loss.view_weight", "1", "weight of the plane cross-entropy in multi-target stages"},

        {"train.out", "run", "directory for checkpoints and reports"},
        {"train.init", "", "input checkpoint (default <train.out>/stage<N-1>.ckpt)"},
        {"train.seed", "0", "training seed"},
        {"train.momentum", "0.9", "SGD momentum"},
        {"train.curriculum_warmup", "4", "epochs until every image is included"},
        {"train.curriculum_q0", "0.5", "initial inclusion quantile"},
        {"train.curriculum_beta", "0.8", "difficulty smoothing factor"},
    };
    for (int k = 1; k <= kNumStages; ++k) {
        const StageConfig d = StageConfig::defaults(k);
        const std::string sec = fmt::format("stage{}.", k);
        s.push_back({sec + "epochs", std::to_string(d.epochs), fmt::format("stage {} epochs", k)});
        s.push_back({sec + "base_lr", fmt::format("{}", d.base_lr), fmt::format("stage {} base learning rate", k)});
        s.push_back({sec + "warm_epochs", std::to_string(d.warm_epochs), fmt::format("stage {} head-only epochs", k)});
        s.push_back({sec + "sampler", std::string(sampler_name(d.sampler)),
                     "uniform, class-weighted or curriculum"});
        s.push_back({sec + "multi_target", d.multi_target ? "true" : "false", "add the plane cross-entropy"});
        s.push_back({sec + "batch_size", std::to_string(d.batch_size), "images per step"});
        s.push_back({sec + "augment", "false", "apply the augmentation chain to training images"});
    }
    std::vector<KeySpec> tail = {
        {"predict.checkpoint", "", "checkpoint to run"},
        {"predict.subset", "val", "val, train or all"},
        {"predict.out", "pred", "output directory (<id>.prob, <id>.pgm)"},

        {"ensemble.members", "", "comma-separated prediction directories"},
        {"ensemble.weighting", "uniform", "uniform or performance"},
        {"ensemble.search", "false", "search all member subsets on data.masks"},
        {"ensemble.out", "ensemble", "output directory"},

        {"refine.input", "", "directory of class masks"},
        {"refine.out", "refined", "output directory"},
        {"refine.kernel", "3", "structuring element size (odd)"},
        {"refine.min_size", "auto", "smallest kept component, px (auto: scaled to image area)"},
        {"refine.max_size", "auto", "largest kept component, px (auto: scaled to image area)"},
        {"refine.fill_holes", "true", "fill enclosed holes"},
        {"refine.passes", "1", "open-close applications per repair round"},

        {"evaluate.predictions", "", "directory of predicted class masks"},
        {"evaluate.out", "", "report file (stdout only when empty)"},
    };
    s.insert(s.end(), tail.begin(), tail.end());
    return s;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, std::string_view what) {
    throw Error(ErrorKind::configuration, fmt::format("{}: '{}' is not {}", key, value, what));
}

}  // namespace

const std::vector<KeySpec>& schema() {
    static const std::vector<KeySpec> s = build_schema();
    return s;
}

std::vector<std::string> command_sections(std::string_view command) {
    if (command == "convert") return {"data", "convert"};
    if (command == "stats") return {"data", "stats"};
    if (command == "split") return {"data", "split"};
    if (command == "weights") return {"data", "weights"};
    if (command == "synth") return {"synth"};
    if (command == "train") return {"data", "split", "net", "loss", "train", "stage1", "stage2", "stage3", "stage4", "stage5"};
    if (command == "predict") return {"data", "split", "predict"};
    if (command == "ensemble") return {"data", "ensemble"};
    if (command == "refine") return {"refine"};
    if (command == "evaluate") return {"data", "evaluate"};
    return {};
}

std::vector<const KeySpec*> keys_for(const std::vector<std::string>& sections) {
    std::vector<const KeySpec*> out;
    for (const auto& k : schema()) {
        const std::string sec = k.key.substr(0, k.key.find('.'));
        if (std::find(sections.begin(), sections.end(), sec) != sections.end()) out.push_back(&k);
    }
    return out;
}

std::string suggest(std::string_view word, const std::vector<std::string>& candidates) {
    std::string best;
    std::size_t best_d = std::max<std::size_t>(2, word.size() / 3) + 1;
    for (const auto& c : candidates) {
        const std::size_t d = edit_distance(word, c);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

RunConfig::RunConfig() {
    for (const auto& k : schema()) defaults_[k.key] = values_[k.key] = k.default_value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, fmt::format("{}: cannot open config file", path.string()));
    CLI::ConfigINI ini;
    std::vector<CLI::ConfigItem> items;
    try {
        items = ini.from_config(in);
    } catch (const CLI::Error& e) {
        throw Error(ErrorKind::parse, fmt::format("{}: {}", path.string(), e.what()));
    }
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        std::string key;
        for (const auto& p : item.parents) key += p + ".";
        key += item.name;
        std::string value;
        for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
        set(key, value);
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) {
        std::vector<std::string> names;
        for (const auto& k : schema()) names.push_back(k.key);
        const std::string near = suggest(key, names);
        throw Error(ErrorKind::configuration,
                    near.empty() ? fmt::format("unknown key '{}'", key)
                                 : fmt::format("unknown key '{}' (did you mean '{}'?)", key, near));
    }
    it->second = value;
}

bool RunConfig::is_set(const std::string& key) const { return get(key) != defaults_.at(key); }

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorKind::lookup, fmt::format("no configuration key '{}'", key));
    return it->second;
}

std::filesystem::path RunConfig::path(const std::string& key) const {
    const std::string& v = get(key);
    if (v.empty()) throw Error(ErrorKind::configuration, fmt::format("{} is required", key));
    return v;
}

std::int64_t RunConfig::get_int64(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t used = 0;
    std::int64_t out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        bad_value(key, v, "an integer");
    }
    if (used != v.size()) bad_value(key, v, "an integer");
    return out;
}

int RunConfig::get_int(const std::string& key) const {
    const std::int64_t v = get_int64(key);
    if (v < INT32_MIN || v > INT32_MAX) bad_value(key, get(key), "a 32-bit integer");
    return static_cast<int>(v);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t used = 0;
    std::uint64_t out = 0;
    if (v.empty() || v[0] == '-') bad_value(key, v, "a non-negative integer");
    try {
        out = std::stoull(v, &used);
    } catch (const std::exception&) {
        bad_value(key, v, "a non-negative integer");
    }
    if (used != v.size()) bad_value(key, v, "a non-negative integer");
    return out;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        bad_value(key, v, "a number");
    }
    if (used != v.size()) bad_value(key, v, "a number");
    return out;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "a boolean");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& item : get_list(key)) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            bad_value(key, get(key), "a list of integers");
        }
        if (used != item.size()) bad_value(key, get(key), "a list of integers");
        out.push_back(v);
    }
    return out;
}

}  // namespace angioseg::cli
