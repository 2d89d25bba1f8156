#include "angioseg/annio.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <json.hpp>

#include "angioseg/error.hpp"

namespace angioseg {

namespace {

using json = nlohmann::json;

Polygon polygon_from_flat(const json& flat, std::int64_t annotation_id) {
    if (!flat.is_array()) {
        throw Error(ErrorKind::parse, fmt::format("annotation {}: polygon is not an array", annotation_id));
    }
    if (flat.size() % 2 != 0) {
        throw Error(ErrorKind::parse,
                    fmt::format("annotation {}: polygon has an odd number of coordinates ({})", annotation_id,
                                flat.size()));
    }
    Polygon poly;
    poly.reserve(flat.size() / 2);
    for (std::size_t i = 0; i < flat.size(); i += 2) {
        const double x = flat[i].get<double>();
        const double y = flat[i + 1].get<double>();
        if (!std::isfinite(x) || !std::isfinite(y)) {
            throw Error(ErrorKind::domain, fmt::format("annotation {}: non-finite coordinate", annotation_id));
        }
        poly.push_back({x, y});
    }
    if (poly.size() < 3) {
        throw Error(ErrorKind::degenerate_polygon,
                    fmt::format("annotation {}: polygon has {} vertices, need at least 3", annotation_id,
                                poly.size()));
    }
    return poly;
}

const json& require_array(const json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_array()) {
        throw Error(ErrorKind::parse, fmt::format("document has no `{}` array", key));
    }
    return *it;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr char kProbMagic[8] = {'A', 'R', 'T', 'P', 'R', 'O', 'B', '1'};

}  // namespace

const ImageInfo& AnnotationSet::image(std::int64_t image_id) const {
    auto it = images.find(image_id);
    if (it == images.end()) throw Error(ErrorKind::lookup, fmt::format("unknown image id {}", image_id));
    return it->second;
}

AnnotationSet parse_coco(std::string_view document_text) {
    json doc;
    try {
        doc = json::parse(document_text.begin(), document_text.end());
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::parse, fmt::format("malformed JSON at byte {}: {}", e.byte, e.what()));
    }
    if (!doc.is_object()) throw Error(ErrorKind::parse, "top-level JSON value is not an object");

    AnnotationSet set;
    try {
        for (const auto& img : require_array(doc, "images")) {
            const auto id = img.at("id").get<std::int64_t>();
            ImageInfo info{img.at("width").get<int>(), img.at("height").get<int>(),
                           img.value("file_name", std::string{})};
            if (info.width < 1 || info.height < 1) {
                throw Error(ErrorKind::domain, fmt::format("image {} has non-positive size", id));
            }
            set.images.emplace(id, std::move(info));
        }
        for (const auto& cat : require_array(doc, "categories")) {
            set.categories.emplace(cat.at("id").get<int>(), cat.value("name", std::string{}));
        }
        for (const auto& ann : require_array(doc, "annotations")) {
            AnnotationRecord rec;
            rec.annotation_id = ann.at("id").get<std::int64_t>();
            rec.image_id = ann.at("image_id").get<std::int64_t>();
            rec.category_id = ann.at("category_id").get<int>();
            if (!set.images.contains(rec.image_id)) {
                throw Error(ErrorKind::referential, fmt::format("annotation {} references missing image {}",
                                                                rec.annotation_id, rec.image_id));
            }
            if (rec.category_id < 1 || rec.category_id > kMaxClassId) {
                throw Error(ErrorKind::domain, fmt::format("annotation {}: category id {} outside 1..{}",
                                                           rec.annotation_id, rec.category_id, kMaxClassId));
            }
            const json& seg = ann.at("segmentation");
            if (seg.is_object()) {
                throw Error(ErrorKind::unsupported_format,
                            fmt::format("annotation {}: RLE segmentations are not supported", rec.annotation_id));
            }
            if (!seg.is_array()) {
                throw Error(ErrorKind::parse,
                            fmt::format("annotation {}: segmentation is not a polygon list", rec.annotation_id));
            }
            for (const auto& flat : seg) rec.polygons.push_back(polygon_from_flat(flat, rec.annotation_id));
            set.annotations.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, fmt::format("unexpected document structure: {}", e.what()));
    }
    return set;
}

AnnotationSet load_coco(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_coco(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

BinaryMask rasterize_polygon(std::span<const Point> polygon, int width, int height) {
    if (polygon.size() < 3) {
        throw Error(ErrorKind::degenerate_polygon,
                    fmt::format("polygon has {} vertices, need at least 3", polygon.size()));
    }
    if (width < 1 || height < 1) throw Error(ErrorKind::domain, "raster size must be positive");

    BinaryMask out(width, height, 0);
    std::vector<double> crossings;
    const std::size_t n = polygon.size();
    for (int y = 0; y < height; ++y) {
        const double cy = y + 0.5;
        crossings.clear();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Point& a = polygon[i];
            const Point& b = polygon[j];
            if ((a.y > cy) != (b.y > cy)) crossings.push_back((b.x - a.x) * (cy - a.y) / (b.y - a.y) + a.x);
        }
        if (crossings.empty()) continue;
        std::sort(crossings.begin(), crossings.end());
        // A center is inside iff an odd number of crossings lie strictly to its right.
        std::size_t first_right = 0;
        for (int x = 0; x < width; ++x) {
            const double cx = x + 0.5;
            while (first_right < crossings.size() && !(cx < crossings[first_right])) ++first_right;
            if ((crossings.size() - first_right) % 2 == 1) out.at(x, y) = 255;
        }
    }
    return out;
}

ClassMask build_class_mask(const AnnotationSet& set, std::int64_t image_id, OverlapPolicy policy) {
    const ImageInfo& info = set.image(image_id);
    ClassMask mask(info.width, info.height, 0);
    for (const auto& rec : set.annotations) {
        if (rec.image_id != image_id) continue;
        const auto value = static_cast<std::uint8_t>(rec.category_id);
        for (const auto& poly : rec.polygons) {
            const BinaryMask layer = rasterize_polygon(poly, info.width, info.height);
            for (std::size_t i = 0; i < layer.size(); ++i) {
                if (!layer.data[i]) continue;
                if (policy == OverlapPolicy::last_wins || mask.data[i] == 0) mask.data[i] = value;
            }
        }
    }
    return mask;
}

BinaryMask binarize_mask(const ClassMask& mask) {
    BinaryMask out(mask.width, mask.height, 0);
    std::transform(mask.data.begin(), mask.data.end(), out.data.begin(),
                   [](std::uint8_t v) -> std::uint8_t { return v > 0 ? 255 : 0; });
    return out;
}

ClassMask as_class_mask(const BinaryMask& mask) {
    ClassMask out(mask.width, mask.height, 0);
    std::transform(mask.data.begin(), mask.data.end(), out.data.begin(),
                   [](std::uint8_t v) -> std::uint8_t { return v ? 1 : 0; });
    return out;
}

ClassMask to_class_mask(const GrayImage& raw) {
    for (auto v : raw.data) {
        if (v > kMaxClassId) throw Error(ErrorKind::domain, fmt::format("class id {} exceeds {}", v, kMaxClassId));
    }
    ClassMask out;
    out.width = raw.width;
    out.height = raw.height;
    out.data = raw.data;
    return out;
}

BinaryMask to_binary_mask(const GrayImage& raw) {
    for (auto v : raw.data) {
        if (v != 0 && v != 255) throw Error(ErrorKind::domain, fmt::format("binary mask value {} is not 0/255", v));
    }
    BinaryMask out;
    out.width = raw.width;
    out.height = raw.height;
    out.data = raw.data;
    return out;
}

std::vector<std::uint8_t> encode_pgm(int width, int height, std::span<const std::uint8_t> pixels) {
    if (pixels.size() != static_cast<std::size_t>(width) * height) {
        throw Error(ErrorKind::size_mismatch, "pixel buffer does not match raster size");
    }
    const std::string header = fmt::format("P5\n{} {}\n255\n", width, height);
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        std::string magic;
        for (std::size_t i = 0; i < std::min<std::size_t>(2, bytes.size()); ++i) magic.push_back(static_cast<char>(bytes[i]));
        throw Error(ErrorKind::format, fmt::format("expected PGM magic \"P5\", found \"{}\"", magic));
    }
    std::size_t pos = 2;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* what) {
        skip_space();
        long value = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos]) && digits < 9) {
            value = value * 10 + (bytes[pos++] - '0');
            ++digits;
        }
        if (digits == 0) throw Error(ErrorKind::format, fmt::format("PGM header: missing {}", what));
        return value;
    };
    const long width = read_int("width");
    const long height = read_int("height");
    const long maxval = read_int("maxval");
    if (width < 1 || height < 1) throw Error(ErrorKind::format, "PGM header: non-positive size");
    if (maxval != 255) throw Error(ErrorKind::unsupported_depth, fmt::format("PGM maxval {} (only 255 supported)", maxval));
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw Error(ErrorKind::format, "PGM header: missing separator");
    ++pos;
    const std::size_t expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    const std::size_t actual = bytes.size() - pos;
    if (actual != expected) {
        throw Error(ErrorKind::size_mismatch,
                    fmt::format("PGM payload has {} bytes, expected {}", actual, expected));
    }
    GrayImage img(static_cast<int>(width), static_cast<int>(height));
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), img.data.begin());
    return img;
}

template <class Tag>
void write_mask(const Grid<Tag>& grid, const std::filesystem::path& path) {
    write_file_bytes(path, encode_pgm(grid.width, grid.height, grid.data));
}

template void write_mask(const ClassMask&, const std::filesystem::path&);
template void write_mask(const BinaryMask&, const std::filesystem::path&);
template void write_mask(const GrayImage&, const std::filesystem::path&);

GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path)); }
ClassMask read_class_mask(const std::filesystem::path& path) { return to_class_mask(read_pgm(path)); }
BinaryMask read_binary_mask(const std::filesystem::path& path) { return to_binary_mask(read_pgm(path)); }

std::vector<std::uint8_t> encode_probmap(const ProbabilityMap& map) {
    const std::size_t count = static_cast<std::size_t>(map.channels) * map.height * map.width;
    if (map.channels < 1 || map.height < 1 || map.width < 1 || map.data.size() != count) {
        throw Error(ErrorKind::dimension, "probability map shape does not match its payload");
    }
    for (std::size_t i = 0; i < count; ++i) {
        const float v = map.data[i];
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw Error(ErrorKind::validity, fmt::format("probability map value {} at index {} is not in [0,1]", v, i));
        }
    }
    std::vector<std::uint8_t> out(std::begin(kProbMagic), std::end(kProbMagic));
    out.reserve(20 + 4 * count);
    put_u32(out, static_cast<std::uint32_t>(map.channels));
    put_u32(out, static_cast<std::uint32_t>(map.height));
    put_u32(out, static_cast<std::uint32_t>(map.width));
    for (float v : map.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

ProbabilityMap decode_probmap(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kProbMagic, 8) != 0) {
        throw Error(ErrorKind::format, "missing ARTPROB1 magic");
    }
    if (bytes.size() < 20) {
        throw Error(ErrorKind::size_mismatch, fmt::format("probability map header truncated: {} bytes", bytes.size()));
    }
    const std::uint32_t c = get_u32(bytes.data() + 8);
    const std::uint32_t h = get_u32(bytes.data() + 12);
    const std::uint32_t w = get_u32(bytes.data() + 16);
    const std::uint64_t expected = 20 + 4ULL * c * h * w;
    if (bytes.size() != expected) {
        throw Error(ErrorKind::size_mismatch,
                    fmt::format("probability map has {} bytes, expected {} for {}x{}x{}", bytes.size(), expected, c, h, w));
    }
    ProbabilityMap map(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < map.data.size(); ++i) map.data[i] = std::bit_cast<float>(get_u32(bytes.data() + 20 + 4 * i));
    return map;
}

void write_probmap(const ProbabilityMap& map, const std::filesystem::path& path) {
    write_file_bytes(path, encode_probmap(map));
}

ProbabilityMap read_probmap(const std::filesystem::path& path) { return decode_probmap(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open {}", path.string()));
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, fmt::format("cannot write {}", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, fmt::format("short write to {}", path.string()));
}

}  // namespace angioseg
