#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "angioseg/types.hpp"

namespace angioseg {

struct ClaheParams {
    double clip_limit = 2.0;  // in units of the mean bin height (tile_area / 256)
    int tiles = 8;            // n x n grid
};

struct ToneCurve {
    struct ControlPoint {
        double x;
        double y;
    };
    std::vector<ControlPoint> points;  // empty = identity

    static ToneCurve identity() { return ToneCurve{{{0.0, 0.0}, {1.0, 1.0}}}; }
};

struct GaborParams {
    double wavelength = 8.0;   // px
    double orientation = 0.0;  // rad
    double sigma = 3.0;        // px
    double aspect = 0.5;
};

struct DegradeParams {
    double noise_lo = 0.9;
    double noise_hi = 1.1;
    double blur_sigma = 0.8;
};

struct GammaToneParams {
    double gamma_lo = 1.0;
    double gamma_hi = 1.0;
    ToneCurve tone;
};

/// Each stage is enabled iff its optional is engaged. CLAHE is off by default.
struct AugmentConfig {
    std::optional<ClaheParams> clahe;
    std::optional<GaborParams> gabor = GaborParams{};
    std::optional<GammaToneParams> gamma_tone = GammaToneParams{};
    std::optional<DegradeParams> degrade = DegradeParams{};
    std::uint64_t seed = 0;

    static AugmentConfig disabled() { return AugmentConfig{std::nullopt, std::nullopt, std::nullopt, std::nullopt, 0}; }
    void validate() const;
};

/// Round half up, clamped to the byte range.
std::uint8_t to_byte(double v) noexcept;

/// Reflect-101 index into [0, n): -1 -> 1, n -> n-2.
int reflect101(int i, int n) noexcept;

GrayImage clahe(const GrayImage& img, double clip_limit, int tiles);

/// v <- 255 * (v/255)^gamma, then through the tone curve.
GrayImage point_transform(const GrayImage& img, double gamma, const ToneCurve& tone);

/// Real-part Gabor kernel truncated at +-ceil(3 sigma), scaled to unit DC gain.
std::vector<double> gabor_kernel(const GaborParams& params, int& radius);
GrayImage gabor(const GrayImage& img, const GaborParams& params);

GrayImage gaussian_blur(const GrayImage& img, double sigma);

GrayImage degrade(const GrayImage& img, double noise_lo, double noise_hi, double blur_sigma, std::uint64_t seed);

/// Fixed order: CLAHE -> Gabor -> gamma/tone -> degrade.
GrayImage compose_augment(const GrayImage& img, const AugmentConfig& cfg);

}  // namespace angioseg
