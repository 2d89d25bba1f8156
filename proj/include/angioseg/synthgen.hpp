#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "angioseg/annio.hpp"
#include "angioseg/pipeline.hpp"
#include "angioseg/types.hpp"

namespace angioseg {

struct SynthConfig {
    int count = 200;
    int width = 64;
    int height = 64;
    std::vector<int> classes{1, 2, 3, 4, 5, 6};
    int planes = 3;
    /// Allowed classes per plane; empty derives them from `classes` and `planes`.
    std::vector<std::vector<int>> plane_classes;
    int min_branches = 2;
    int max_branches = 5;
    double min_tube_width = 2.0;
    double max_tube_width = 4.5;
    double noise = 6.0;  // std of the background texture, grey levels
    std::uint64_t seed = 0;

    void validate() const;
    /// plane_classes, or the default layout: plane p drops every class whose
    /// index is congruent to p modulo the plane count.
    std::vector<std::vector<int>> allowed_sets() const;
};

struct SynthSample {
    std::int64_t image_id = 0;
    int plane = 0;
    GrayImage image;
    ClassMask mask;
};

struct SynthDataset {
    std::vector<SynthSample> samples;
    AnnotationSet annotations;
    ViewLabelTable views;
    std::string coco_json;
};

SynthDataset generate(const SynthConfig& cfg);

/// images/, masks/ (six-digit id .pgm), annotations.json, views.tsv.
void write_dataset(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace angioseg
