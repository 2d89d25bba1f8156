#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace angioseg {

inline constexpr int kMaxClassId = 26;
inline constexpr int kNumMaskClasses = kMaxClassId + 1;  // incl. background
inline constexpr int kNumViewPlanes = 11;

/// Row-major 8-bit raster. The tag keeps class masks, binary masks and
/// intensity images from being mixed up at compile time.
template <class Tag>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Grid() = default;
    Grid(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::size_t size() const noexcept { return data.size(); }
    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

struct ClassTag {};
struct BinaryTag {};
struct GrayTag {};

/// Class ids 0..26 per pixel, 0 = background.
using ClassMask = Grid<ClassTag>;
/// Values exactly 0 or 255.
using BinaryMask = Grid<BinaryTag>;
/// 8-bit intensities.
using GrayImage = Grid<GrayTag>;

/// Per-pixel class distribution, class-major then row-major. Stored as
/// float32 since that is the on-disk carrier precision.
struct ProbabilityMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    ProbabilityMap() = default;
    ProbabilityMap(int c, int h, int w)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0f) {}

    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
    float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const ProbabilityMap&, const ProbabilityMap&) = default;
};

}  // namespace angioseg
