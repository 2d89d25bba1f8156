#include "angioseg/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "angioseg/error.hpp"

namespace angioseg {

namespace {

/// Min (erode) or max (dilate) over a k x k window; out-of-raster reads as 0.
BinaryMask window_extreme(const BinaryMask& in, int kernel, bool take_min) {
    const int r = kernel / 2;
    const int w = in.width, h = in.height;
    BinaryMask rows(w, h, 0), out(w, h, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::uint8_t acc = take_min ? 255 : 0;
            for (int d = -r; d <= r; ++d) {
                const int xx = x + d;
                const std::uint8_t v = (xx < 0 || xx >= w) ? 0 : in.at(xx, y);
                acc = take_min ? std::min(acc, v) : std::max(acc, v);
            }
            rows.at(x, y) = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::uint8_t acc = take_min ? 255 : 0;
            for (int d = -r; d <= r; ++d) {
                const int yy = y + d;
                const std::uint8_t v = (yy < 0 || yy >= h) ? 0 : rows.at(x, yy);
                acc = take_min ? std::min(acc, v) : std::max(acc, v);
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

constexpr int kMaxRefineRounds = 64;

ClassMask refine_pass(const ClassMask& mask, const RefineConfig& cfg) {
    std::set<int> present(mask.data.begin(), mask.data.end());
    present.erase(0);

    // Winning class and the size of its blob, per pixel.
    std::vector<std::int64_t> claim_size(mask.size(), 0);
    ClassMask out(mask.width, mask.height, 0);
    for (int c : present) {
        BinaryMask layer(mask.width, mask.height, 0);
        for (std::size_t i = 0; i < mask.size(); ++i) layer.data[i] = mask.data[i] == c ? 255 : 0;
        for (int k = 0; k < cfg.passes; ++k) {
            layer = morphology(layer, MorphOp::open, cfg.kernel);
            layer = morphology(layer, MorphOp::close, cfg.kernel);
        }
        if (cfg.fill_holes) layer = fill_holes(layer);
        const BlobLabeling lab = connected_components(layer);
        for (std::size_t i = 0; i < layer.size(); ++i) {
            const int l = lab.labels[i];
            if (l == 0) continue;
            const std::int64_t size = lab.blobs[static_cast<std::size_t>(l - 1)].pixel_count;
            if (size < cfg.min_size || size > cfg.max_size) continue;
            // Ascending class order: strict > keeps the lower id on ties.
            if (size > claim_size[i]) {
                claim_size[i] = size;
                out.data[i] = static_cast<std::uint8_t>(c);
            }
        }
    }
    return out;
}

}  // namespace

void RefineConfig::validate() const {
    if (kernel < 3 || kernel % 2 == 0) {
        throw Error(ErrorKind::configuration, fmt::format("structuring element size {} must be odd and >= 3", kernel));
    }
    if (!(min_size < max_size)) throw Error(ErrorKind::configuration, "min segment size must be below max size");
    if (passes < 1) throw Error(ErrorKind::configuration, "refine passes must be >= 1");
}

RefineConfig RefineConfig::scaled_for(int width, int height) {
    RefineConfig cfg;
    const double scale = static_cast<double>(width) * height / (512.0 * 512.0);
    cfg.min_size = std::max<std::int64_t>(1, std::llround(64.0 * scale));
    cfg.max_size = std::max<std::int64_t>(cfg.min_size + 1, std::llround(8192.0 * scale));
    return cfg;
}

BinaryMask morphology(const BinaryMask& mask, MorphOp op, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) {
        throw Error(ErrorKind::configuration, fmt::format("structuring element size {} must be odd", kernel));
    }
    switch (op) {
        case MorphOp::erode: return window_extreme(mask, kernel, true);
        case MorphOp::dilate: return window_extreme(mask, kernel, false);
        case MorphOp::open: return window_extreme(window_extreme(mask, kernel, true), kernel, false);
        case MorphOp::close: return window_extreme(window_extreme(mask, kernel, false), kernel, true);
    }
    return mask;
}

BlobLabeling connected_components(const BinaryMask& mask) {
    BlobLabeling out;
    out.width = mask.width;
    out.height = mask.height;
    out.labels.assign(mask.size(), 0);
    std::vector<int> stack;
    for (int y0 = 0; y0 < mask.height; ++y0) {
        for (int x0 = 0; x0 < mask.width; ++x0) {
            const int start = y0 * mask.width + x0;
            if (!mask.data[start] || out.labels[start]) continue;
            Blob blob;
            blob.label = static_cast<int>(out.blobs.size()) + 1;
            blob.min_x = blob.max_x = x0;
            blob.min_y = blob.max_y = y0;
            out.labels[start] = blob.label;
            stack.assign(1, start);
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                const int px = p % mask.width, py = p / mask.width;
                ++blob.pixel_count;
                blob.min_x = std::min(blob.min_x, px);
                blob.max_x = std::max(blob.max_x, px);
                blob.min_y = std::min(blob.min_y, py);
                blob.max_y = std::max(blob.max_y, py);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = px + dx, ny = py + dy;
                        if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
                        const int q = ny * mask.width + nx;
                        if (mask.data[q] && !out.labels[q]) {
                            out.labels[q] = blob.label;
                            stack.push_back(q);
                        }
                    }
                }
            }
            out.blobs.push_back(blob);
        }
    }
    return out;
}

BinaryMask fill_holes(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    std::vector<std::uint8_t> outside(mask.size(), 0);
    std::vector<int> stack;
    auto seed = [&](int x, int y) {
        const int p = y * w + x;
        if (!mask.data[p] && !outside[p]) {
            outside[p] = 1;
            stack.push_back(p);
        }
    };
    for (int x = 0; x < w; ++x) {
        seed(x, 0);
        seed(x, h - 1);
    }
    for (int y = 0; y < h; ++y) {
        seed(0, y);
        seed(w - 1, y);
    }
    while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % w, py = p / w;
        if (px > 0) seed(px - 1, py);
        if (px + 1 < w) seed(px + 1, py);
        if (py > 0) seed(px, py - 1);
        if (py + 1 < h) seed(px, py + 1);
    }
    BinaryMask out(w, h, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) out.data[i] = (mask.data[i] || !outside[i]) ? 255 : 0;
    return out;
}

ClassMask refine_mask(const ClassMask& mask, const RefineConfig& cfg) {
    cfg.validate();
    // Repeat until stable so that refining a refined mask changes nothing.
    ClassMask current = refine_pass(mask, cfg);
    for (int round = 1; round < kMaxRefineRounds; ++round) {
        ClassMask next = refine_pass(current, cfg);
        if (next == current) break;
        current = std::move(next);
    }
    return current;
}

}  // namespace angioseg
