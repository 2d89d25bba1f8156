#pragma once

#include <cstdint>
#include <vector>

#include "angioseg/types.hpp"

namespace angioseg {

struct RefineConfig {
    int kernel = 3;                // odd square structuring element
    std::int64_t min_size = 64;    // px, components below are dropped
    std::int64_t max_size = 8192;  // px, components above are dropped
    bool fill_holes = true;
    int passes = 1;  // open-close applications per repair round

    void validate() const;
    /// Defaults are calibrated for 512x512; scale the size bounds by area.
    static RefineConfig scaled_for(int width, int height);
};

enum class MorphOp { erode, dilate, open, close };

/// Square structuring element; pixels outside the raster count as background.
BinaryMask morphology(const BinaryMask& mask, MorphOp op, int kernel);

struct Blob {
    int label = 0;
    std::int64_t pixel_count = 0;
    int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
};

struct BlobLabeling {
    int width = 0;
    int height = 0;
    std::vector<int> labels;  // 0 = background, blobs numbered from 1 in raster order
    std::vector<Blob> blobs;  // blobs[k].label == k + 1
};

/// 8-connected labeling.
BlobLabeling connected_components(const BinaryMask& mask);

/// Background regions that cannot reach the border (4-connected) become foreground.
BinaryMask fill_holes(const BinaryMask& mask);

/// Per class: open-close, fill holes, drop out-of-range components, then
/// recompose (larger blob wins). Rounds repeat until the mask is stable.
ClassMask refine_mask(const ClassMask& mask, const RefineConfig& cfg);

}  // namespace angioseg
