#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "angioseg/types.hpp"

namespace angioseg {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

using Polygon = std::vector<Point>;

struct AnnotationRecord {
    std::int64_t annotation_id = 0;
    std::int64_t image_id = 0;
    int category_id = 0;
    std::vector<Polygon> polygons;
};

struct ImageInfo {
    int width = 0;
    int height = 0;
    std::string file_name;
};

struct AnnotationSet {
    std::map<std::int64_t, ImageInfo> images;
    std::vector<AnnotationRecord> annotations;  // document order
    std::map<int, std::string> categories;

    const ImageInfo& image(std::int64_t image_id) const;
};

enum class OverlapPolicy { last_wins, first_wins };

/// Parses the COCO subset (images, annotations with polygon segmentations,
/// categories). RLE segmentations are rejected.
AnnotationSet parse_coco(std::string_view document_text);
AnnotationSet load_coco(const std::filesystem::path& path);

/// Pixel (x, y) is foreground iff its center (x+0.5, y+0.5) is inside the
/// polygon under the even-odd rule.
BinaryMask rasterize_polygon(std::span<const Point> polygon, int width, int height);

ClassMask build_class_mask(const AnnotationSet& set, std::int64_t image_id,
                           OverlapPolicy policy = OverlapPolicy::last_wins);

BinaryMask binarize_mask(const ClassMask& mask);

/// Validating conversions between raster flavours.
ClassMask as_class_mask(const BinaryMask& mask);
ClassMask to_class_mask(const GrayImage& raw);    // throws if any value > 26
BinaryMask to_binary_mask(const GrayImage& raw);  // throws unless values are 0/255

// Binary PGM ("P5", maxval 255). Class ids and intensities map directly to bytes.
std::vector<std::uint8_t> encode_pgm(int width, int height, std::span<const std::uint8_t> pixels);
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);

template <class Tag>
void write_mask(const Grid<Tag>& grid, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);
ClassMask read_class_mask(const std::filesystem::path& path);
BinaryMask read_binary_mask(const std::filesystem::path& path);

// ARTPROB1: magic, u32 C,H,W little-endian, then C*H*W float32 little-endian.
std::vector<std::uint8_t> encode_probmap(const ProbabilityMap& map);
ProbabilityMap decode_probmap(std::span<const std::uint8_t> bytes);
void write_probmap(const ProbabilityMap& map, const std::filesystem::path& path);
ProbabilityMap read_probmap(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace angioseg
