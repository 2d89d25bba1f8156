#include "angioseg/imgproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "angioseg/error.hpp"
#include "angioseg/rng.hpp"

namespace angioseg {

namespace {

void validate_tone(const ToneCurve& tone) {
    for (std::size_t i = 0; i < tone.points.size(); ++i) {
        const auto& p = tone.points[i];
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
            throw Error(ErrorKind::configuration, fmt::format("tone point ({}, {}) outside [0,1]^2", p.x, p.y));
        }
        if (i > 0 && !(p.x > tone.points[i - 1].x)) {
            throw Error(ErrorKind::configuration, "tone curve control points must be strictly increasing in x");
        }
    }
}

double apply_tone(const ToneCurve& tone, double t) {
    const auto& pts = tone.points;
    if (t <= pts.front().x) return pts.front().y;
    if (t >= pts.back().x) return pts.back().y;
    auto hi = std::upper_bound(pts.begin(), pts.end(), t,
                               [](double v, const ToneCurve::ControlPoint& p) { return v < p.x; });
    auto lo = hi - 1;
    return lo->y + (t - lo->x) * (hi->y - lo->y) / (hi->x - lo->x);
}

double lerp(double a, double b, double t) { return a + t * (b - a); }

/// Separable blur of a double buffer, reflect-101 borders.
std::vector<double> blur_buffer(const std::vector<double>& src, int w, int h, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;

    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * src[y * w + reflect101(x + i, w)];
            tmp[y * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[reflect101(y + i, h) * w + x];
            out[y * w + x] = acc;
        }
    }
    return out;
}

}  // namespace

void AugmentConfig::validate() const {
    if (clahe) {
        if (clahe->tiles < 1) throw Error(ErrorKind::configuration, "CLAHE tile count must be >= 1");
        if (!(clahe->clip_limit > 0.0)) throw Error(ErrorKind::configuration, "CLAHE clip limit must be > 0");
    }
    if (gabor && !(gabor->sigma > 0.0)) throw Error(ErrorKind::configuration, "Gabor sigma must be > 0");
    if (gamma_tone) {
        if (!(gamma_tone->gamma_lo > 0.0) || gamma_tone->gamma_lo > gamma_tone->gamma_hi) {
            throw Error(ErrorKind::configuration, "gamma range must satisfy 0 < lo <= hi");
        }
        validate_tone(gamma_tone->tone);
    }
    if (degrade) {
        if (!(degrade->noise_lo > 0.0) || degrade->noise_lo > degrade->noise_hi) {
            throw Error(ErrorKind::configuration, "noise range must satisfy 0 < lo <= hi");
        }
        if (degrade->blur_sigma < 0.0) throw Error(ErrorKind::configuration, "blur sigma must be >= 0");
    }
}

std::uint8_t to_byte(double v) noexcept {
    const double r = std::floor(v + 0.5);
    if (!(r > 0.0)) return 0;
    if (r >= 255.0) return 255;
    return static_cast<std::uint8_t>(r);
}

int reflect101(int i, int n) noexcept {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = std::abs(i) % period;
    return i >= n ? period - i : i;
}

GrayImage clahe(const GrayImage& img, double clip_limit, int tiles) {
    if (tiles < 1) throw Error(ErrorKind::configuration, "CLAHE tile count must be >= 1");
    if (!(clip_limit > 0.0)) throw Error(ErrorKind::configuration, "CLAHE clip limit must be > 0");
    if (tiles > img.width || tiles > img.height) {
        throw Error(ErrorKind::configuration,
                    fmt::format("{}x{} CLAHE tiles do not fit a {}x{} image", tiles, tiles, img.width, img.height));
    }
    // Equal-sized tiles; the grid overhang reads reflected pixels.
    const int tile_w = (img.width + tiles - 1) / tiles;
    const int tile_h = (img.height + tiles - 1) / tiles;
    const long area = static_cast<long>(tile_w) * tile_h;
    const long limit = std::max(1L, static_cast<long>(clip_limit * static_cast<double>(area) / 256.0));

    std::vector<std::array<double, 256>> luts(static_cast<std::size_t>(tiles) * tiles);
    for (int ty = 0; ty < tiles; ++ty) {
        for (int tx = 0; tx < tiles; ++tx) {
            std::array<long, 256> hist{};
            for (int y = ty * tile_h; y < (ty + 1) * tile_h; ++y) {
                const int sy = reflect101(y, img.height);
                for (int x = tx * tile_w; x < (tx + 1) * tile_w; ++x) ++hist[img.at(reflect101(x, img.width), sy)];
            }
            long clipped = 0;
            for (long& h : hist) {
                if (h > limit) {
                    clipped += h - limit;
                    h = limit;
                }
            }
            const long batch = clipped / 256;
            long residual = clipped - batch * 256;
            for (long& h : hist) h += batch;
            if (residual > 0) {
                const long step = std::max(256 / residual, 1L);
                for (long i = 0; i < 256 && residual > 0; i += step, --residual) ++hist[i];
            }
            auto& lut = luts[static_cast<std::size_t>(ty) * tiles + tx];
            long cdf = 0;
            for (int v = 0; v < 256; ++v) {
                cdf += hist[v];
                lut[v] = 255.0 * static_cast<double>(cdf) / static_cast<double>(area);
            }
        }
    }

    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        const double tyf = (y + 0.5) / tile_h - 0.5;
        const int ty1 = static_cast<int>(std::floor(tyf));
        const double fy = tyf - ty1;
        const int ya = std::clamp(ty1, 0, tiles - 1), yb = std::clamp(ty1 + 1, 0, tiles - 1);
        for (int x = 0; x < img.width; ++x) {
            const double txf = (x + 0.5) / tile_w - 0.5;
            const int tx1 = static_cast<int>(std::floor(txf));
            const double fx = txf - tx1;
            const int xa = std::clamp(tx1, 0, tiles - 1), xb = std::clamp(tx1 + 1, 0, tiles - 1);
            const int v = img.at(x, y);
            const double top = lerp(luts[ya * tiles + xa][v], luts[ya * tiles + xb][v], fx);
            const double bottom = lerp(luts[yb * tiles + xa][v], luts[yb * tiles + xb][v], fx);
            out.at(x, y) = to_byte(lerp(top, bottom, fy));
        }
    }
    return out;
}

GrayImage point_transform(const GrayImage& img, double gamma, const ToneCurve& tone) {
    if (!(gamma > 0.0)) throw Error(ErrorKind::configuration, "gamma must be > 0");
    validate_tone(tone);
    std::array<std::uint8_t, 256> lut{};
    for (int v = 0; v < 256; ++v) {
        double g = 255.0 * std::pow(v / 255.0, gamma);
        if (!tone.points.empty()) g = 255.0 * apply_tone(tone, g / 255.0);
        lut[v] = to_byte(g);
    }
    GrayImage out(img.width, img.height);
    std::transform(img.data.begin(), img.data.end(), out.data.begin(), [&](std::uint8_t v) { return lut[v]; });
    return out;
}

std::vector<double> gabor_kernel(const GaborParams& p, int& radius) {
    if (!(p.sigma > 0.0)) throw Error(ErrorKind::configuration, "Gabor sigma must be > 0");
    radius = static_cast<int>(std::ceil(3.0 * p.sigma));
    const int side = 2 * radius + 1;
    std::vector<double> k(static_cast<std::size_t>(side) * side);
    const double c = std::cos(p.orientation), s = std::sin(p.orientation);
    double sum = 0.0, abs_sum = 0.0;
    for (int v = -radius; v <= radius; ++v) {
        for (int u = -radius; u <= radius; ++u) {
            const double xr = u * c + v * s;
            const double yr = -u * s + v * c;
            const double g = std::exp(-(xr * xr + p.aspect * p.aspect * yr * yr) / (2.0 * p.sigma * p.sigma)) *
                             std::cos(2.0 * std::numbers::pi * xr / p.wavelength);
            k[(v + radius) * side + (u + radius)] = g;
            sum += g;
            abs_sum += std::abs(g);
        }
    }
    // Unit DC gain keeps mean brightness; near-zero-DC kernels fall back to L1 scaling.
    const double norm = std::abs(sum) > 1e-3 * abs_sum ? sum : abs_sum;
    for (double& g : k) g /= norm;
    return k;
}

GrayImage gabor(const GrayImage& img, const GaborParams& params) {
    int radius = 0;
    const auto k = gabor_kernel(params, radius);
    const int side = 2 * radius + 1;
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int v = -radius; v <= radius; ++v) {
                const int sy = reflect101(y + v, img.height);
                const double* row = &k[(v + radius) * side];
                for (int u = -radius; u <= radius; ++u) acc += row[u + radius] * img.at(reflect101(x + u, img.width), sy);
            }
            out.at(x, y) = to_byte(acc);
        }
    }
    return out;
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    if (sigma < 0.0) throw Error(ErrorKind::configuration, "blur sigma must be >= 0");
    if (sigma == 0.0) return img;
    std::vector<double> buf(img.data.begin(), img.data.end());
    const auto blurred = blur_buffer(buf, img.width, img.height, sigma);
    GrayImage out(img.width, img.height);
    std::transform(blurred.begin(), blurred.end(), out.data.begin(), to_byte);
    return out;
}

GrayImage degrade(const GrayImage& img, double noise_lo, double noise_hi, double blur_sigma, std::uint64_t seed) {
    if (!(noise_lo > 0.0) || noise_lo > noise_hi) {
        throw Error(ErrorKind::configuration, "noise range must satisfy 0 < lo <= hi");
    }
    if (blur_sigma < 0.0) throw Error(ErrorKind::configuration, "blur sigma must be >= 0");
    Rng rng(seed);
    GrayImage noisy(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) noisy.data[i] = to_byte(img.data[i] * rng.uniform(noise_lo, noise_hi));
    return gaussian_blur(noisy, blur_sigma);
}

GrayImage compose_augment(const GrayImage& img, const AugmentConfig& cfg) {
    cfg.validate();
    GrayImage out = img;
    if (cfg.clahe) out = clahe(out, cfg.clahe->clip_limit, cfg.clahe->tiles);
    if (cfg.gabor) out = gabor(out, *cfg.gabor);
    if (cfg.gamma_tone) {
        Rng rng(derive_seed(cfg.seed, 0));
        const double gamma = rng.uniform(cfg.gamma_tone->gamma_lo, cfg.gamma_tone->gamma_hi);
        out = point_transform(out, gamma, cfg.gamma_tone->tone);
    }
    if (cfg.degrade) {
        out = degrade(out, cfg.degrade->noise_lo, cfg.degrade->noise_hi, cfg.degrade->blur_sigma,
                      derive_seed(cfg.seed, 1));
    }
    return out;
}

}  // namespace angioseg
