#include "angioseg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "angioseg/error.hpp"
#include "angioseg/imgproc.hpp"
#include "angioseg/rng.hpp"

namespace angioseg {

namespace {

constexpr int kCurveSamples = 16;
constexpr int kMaxAttempts = 24;

// Coordinates snap to 1/64 px so they survive a JSON round trip exactly.
double snap(double v) { return std::round(v * 64.0) / 64.0; }

struct Tube {
    int class_id = 0;
    Polygon outline;
    BinaryMask mask;
};

Polygon tube_outline(Point p0, Point p1, Point p2, double width) {
    std::vector<Point> left, right;
    for (int i = 0; i < kCurveSamples; ++i) {
        const double t = static_cast<double>(i) / (kCurveSamples - 1);
        const double u = 1.0 - t;
        const Point p{u * u * p0.x + 2 * u * t * p1.x + t * t * p2.x, u * u * p0.y + 2 * u * t * p1.y + t * t * p2.y};
        double tx = 2 * u * (p1.x - p0.x) + 2 * t * (p2.x - p1.x);
        double ty = 2 * u * (p1.y - p0.y) + 2 * t * (p2.y - p1.y);
        const double len = std::hypot(tx, ty);
        tx /= len;
        ty /= len;
        const double h = width / 2.0;
        left.push_back({snap(p.x - ty * h), snap(p.y + tx * h)});
        right.push_back({snap(p.x + ty * h), snap(p.y - tx * h)});
    }
    Polygon poly = left;
    poly.insert(poly.end(), right.rbegin(), right.rend());
    return poly;
}

/// True when the candidate touches (8-neighbourhood) any occupied pixel.
bool touches(const BinaryMask& candidate, const ClassMask& occupied) {
    const int w = candidate.width, h = candidate.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!candidate.at(x, y)) continue;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx >= 0 && ny >= 0 && nx < w && ny < h && occupied.at(nx, ny)) return true;
                }
            }
        }
    }
    return false;
}

SynthSample render(const SynthConfig& cfg, const std::vector<std::vector<int>>& allowed, std::int64_t image_id,
                   std::vector<Tube>& tubes) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(image_id)));
    const int k_total = static_cast<int>(cfg.classes.size());
    SynthSample s;
    s.image_id = image_id;
    s.plane = static_cast<int>(rng.below(allowed.size()));

    std::vector<int> pool = allowed[static_cast<std::size_t>(s.plane)];
    const int want = std::min<int>(rng.range(cfg.min_branches, cfg.max_branches), static_cast<int>(pool.size()));
    std::vector<int> chosen;
    for (int i = 0; i < want; ++i) {
        const auto j = static_cast<std::size_t>(rng.below(pool.size()));
        chosen.push_back(pool[j]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }
    std::sort(chosen.begin(), chosen.end());

    const double W = cfg.width, H = cfg.height;
    s.mask = ClassMask(cfg.width, cfg.height, 0);
    tubes.clear();
    for (int class_id : chosen) {
        const int k = static_cast<int>(std::find(cfg.classes.begin(), cfg.classes.end(), class_id) - cfg.classes.begin());
        const double frac = k_total > 1 ? static_cast<double>(k) / (k_total - 1) : 0.0;
        const double band = H / k_total;
        const double centre = band * (k + 0.5);
        const double width = cfg.min_tube_width + (cfg.max_tube_width - cfg.min_tube_width) * frac;
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            const double shrink = 1.0 - static_cast<double>(attempt) / kMaxAttempts;
            const Point p0{rng.uniform(0.02, 0.3) * W, centre + rng.uniform(-0.3, 0.3) * band * shrink};
            const Point p2{rng.uniform(0.7, 0.98) * W, centre + rng.uniform(-0.3, 0.3) * band * shrink};
            const Point p1{rng.uniform(0.35, 0.65) * W, centre + rng.uniform(-0.9, 0.9) * band * shrink};
            Polygon outline = tube_outline(p0, p1, p2, width * rng.uniform(0.85, 1.15));
            BinaryMask m = rasterize_polygon(outline, cfg.width, cfg.height);
            if (std::count(m.data.begin(), m.data.end(), 255) == 0 || touches(m, s.mask)) continue;
            for (std::size_t i = 0; i < m.size(); ++i) {
                if (m.data[i]) s.mask.data[i] = static_cast<std::uint8_t>(class_id);
            }
            tubes.push_back({class_id, std::move(outline), std::move(m)});
            break;
        }
    }

    // Smooth background texture plus pixel noise; vessels darker by a class-dependent contrast.
    double phase[3], fx[3], fy[3];
    for (int i = 0; i < 3; ++i) {
        phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        fx[i] = rng.uniform(-3.0, 3.0) / W;
        fy[i] = rng.uniform(-3.0, 3.0) / H;
    }
    const double base = rng.uniform(165.0, 190.0);
    s.image = GrayImage(cfg.width, cfg.height, 0);
    for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
            double v = base;
            for (int i = 0; i < 3; ++i) {
                v += cfg.noise * std::sin(2.0 * std::numbers::pi * (fx[i] * x + fy[i] * y) + phase[i]);
            }
            v += 0.5 * cfg.noise * rng.normal();
            const int c = s.mask.at(x, y);
            if (c) {
                const int k = static_cast<int>(std::find(cfg.classes.begin(), cfg.classes.end(), c) - cfg.classes.begin());
                v -= 55.0 + 60.0 * (k_total > 1 ? static_cast<double>(k) / (k_total - 1) : 0.0);
            }
            s.image.at(x, y) = to_byte(v);
        }
    }
    return s;
}

}  // namespace

void SynthConfig::validate() const {
    if (count < 1) throw Error(ErrorKind::configuration, "synthetic count must be >= 1");
    if (width < 8 || height < 8) throw Error(ErrorKind::configuration, "synthetic images must be at least 8x8");
    if (classes.empty()) throw Error(ErrorKind::configuration, "no synthetic classes");
    std::set<int> seen;
    for (int c : classes) {
        if (c < 1 || c > kMaxClassId) throw Error(ErrorKind::configuration, fmt::format("class {} outside 1..26", c));
        if (!seen.insert(c).second) throw Error(ErrorKind::configuration, fmt::format("class {} listed twice", c));
    }
    if (planes < 1 || planes > kNumViewPlanes) {
        throw Error(ErrorKind::configuration, fmt::format("plane count {} outside 1..{}", planes, kNumViewPlanes));
    }
    if (!plane_classes.empty()) {
        if (static_cast<int>(plane_classes.size()) != planes) {
            throw Error(ErrorKind::configuration, "one allowed-class set per plane required");
        }
        for (const auto& set : plane_classes) {
            if (set.empty()) throw Error(ErrorKind::configuration, "allowed-class sets must be non-empty");
            for (int c : set) {
                if (!seen.count(c)) throw Error(ErrorKind::configuration, fmt::format("plane class {} is not in use", c));
            }
        }
    }
    if (min_branches < 1 || min_branches > max_branches) {
        throw Error(ErrorKind::configuration, "branch range must satisfy 1 <= min <= max");
    }
    if (!(min_tube_width >= 1.0) || min_tube_width > max_tube_width) {
        throw Error(ErrorKind::configuration, "tube widths must satisfy 1 <= min <= max");
    }
    if (!(noise >= 0.0)) throw Error(ErrorKind::configuration, "noise must be >= 0");
}

std::vector<std::vector<int>> SynthConfig::allowed_sets() const {
    if (!plane_classes.empty()) return plane_classes;
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(planes));
    for (int p = 0; p < planes; ++p) {
        for (std::size_t k = 0; k < classes.size(); ++k) {
            if (planes == 1 || static_cast<int>(k % static_cast<std::size_t>(planes)) != p) sets[p].push_back(classes[k]);
        }
        if (sets[p].size() < 2) sets[p] = classes;
        std::sort(sets[p].begin(), sets[p].end());
    }
    return sets;
}

SynthDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    const auto allowed = cfg.allowed_sets();
    SynthDataset out;
    for (std::size_t p = 0; p < allowed.size(); ++p) out.views.plane_classes[static_cast<int>(p)] = allowed[p];

    nlohmann::json doc;
    doc["images"] = nlohmann::json::array();
    doc["annotations"] = nlohmann::json::array();
    doc["categories"] = nlohmann::json::array();
    for (int c : cfg.classes) doc["categories"].push_back({{"id", c}, {"name", std::to_string(c)}});

    std::int64_t annotation_id = 0;
    std::vector<Tube> tubes;
    for (std::int64_t id = 1; id <= cfg.count; ++id) {
        SynthSample s = render(cfg, allowed, id, tubes);
        out.views.image_plane[id] = s.plane;
        doc["images"].push_back(
            {{"id", id}, {"width", cfg.width}, {"height", cfg.height}, {"file_name", fmt::format("{:06d}.pgm", id)}});
        for (const auto& t : tubes) {
            nlohmann::json flat = nlohmann::json::array();
            double x0 = t.outline[0].x, x1 = x0, y0 = t.outline[0].y, y1 = y0;
            for (const auto& p : t.outline) {
                flat.push_back(p.x);
                flat.push_back(p.y);
                x0 = std::min(x0, p.x);
                x1 = std::max(x1, p.x);
                y0 = std::min(y0, p.y);
                y1 = std::max(y1, p.y);
            }
            doc["annotations"].push_back({{"id", ++annotation_id},
                                          {"image_id", id},
                                          {"category_id", t.class_id},
                                          {"segmentation", nlohmann::json::array({flat})},
                                          {"area", std::count(t.mask.data.begin(), t.mask.data.end(), 255)},
                                          {"bbox", {x0, y0, x1 - x0, y1 - y0}},
                                          {"iscrowd", 0}});
        }
        out.samples.push_back(std::move(s));
    }
    out.coco_json = doc.dump(1);
    out.annotations = parse_coco(out.coco_json);
    return out;
}

void write_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    std::filesystem::create_directories(dir / "masks", ec);
    if (ec) throw Error(ErrorKind::io, fmt::format("{}: cannot create directory: {}", dir.string(), ec.message()));
    for (const auto& s : data.samples) {
        write_mask(s.image, image_file(dir / "images", s.image_id));
        write_mask(s.mask, image_file(dir / "masks", s.image_id));
    }
    write_file_bytes(dir / "annotations.json",
                     std::span(reinterpret_cast<const std::uint8_t*>(data.coco_json.data()), data.coco_json.size()));
    save_view_table(data.views, dir / "views.tsv");
}

}  // namespace angioseg
