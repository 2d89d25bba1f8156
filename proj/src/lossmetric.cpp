#include "angioseg/lossmetric.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "angioseg/error.hpp"

namespace angioseg {

namespace {

void check_shape(std::span<const double> probs, Shape3 shape, const PixelTargets& targets) {
    if (probs.size() != shape.size() || targets.height != shape.height || targets.width != shape.width ||
        targets.labels.size() != shape.plane() || (!targets.valid.empty() && targets.valid.size() != shape.plane())) {
        throw Error(ErrorKind::dimension,
                    fmt::format("probabilities {}x{}x{} ({} values) do not match targets {}x{}", shape.channels,
                                shape.height, shape.width, probs.size(), targets.height, targets.width));
    }
    for (int label : targets.labels) {
        if (label < 0 || label >= shape.channels) {
            throw Error(ErrorKind::dimension, fmt::format("target class {} outside {} channels", label, shape.channels));
        }
    }
}

/// gamma * q^(gamma-1), with the 0 * inf corner defined as 0.
double focus_slope(double q, double gamma) {
    if (gamma == 0.0 || (q == 0.0 && gamma < 1.0)) return 0.0;
    return gamma * std::pow(q, gamma - 1.0);
}

}  // namespace

void ComboLossConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::configuration, "combo alpha must be in [0,1]");
    if (!(gamma >= 0.0)) throw Error(ErrorKind::configuration, "gamma must be >= 0");
    if (!(tversky_alpha >= 0.0 && tversky_alpha <= 1.0 && tversky_beta >= 0.0 && tversky_beta <= 1.0)) {
        throw Error(ErrorKind::configuration, "Tversky weights must be in [0,1]");
    }
    if (!(smooth > 0.0)) throw Error(ErrorKind::configuration, "smooth must be > 0");
}

PixelTargets PixelTargets::from_mask(const ClassMask& mask) {
    PixelTargets t;
    t.height = mask.height;
    t.width = mask.width;
    t.labels.assign(mask.data.begin(), mask.data.end());
    return t;
}

LossResult focal_loss(std::span<const double> probs, Shape3 shape, const PixelTargets& targets, double gamma) {
    check_shape(probs, shape, targets);
    LossResult r;
    r.grad.assign(probs.size(), 0.0);
    const std::size_t plane = shape.plane();
    std::size_t valid = 0;
    for (std::size_t i = 0; i < plane; ++i) valid += targets.is_valid(i) ? 1 : 0;
    if (valid == 0) return r;
    const double inv = 1.0 / static_cast<double>(valid);

    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        if (!targets.is_valid(i)) continue;
        const std::size_t k = static_cast<std::size_t>(targets.labels[i]) * plane + i;
        const double p = probs[k];
        const double pf = std::max(p, kProbabilityFloor);
        const double q = std::max(0.0, 1.0 - pf);
        const double lnp = std::log(pf);
        sum += -std::pow(q, gamma) * lnp;
        if (p >= kProbabilityFloor) r.grad[k] = inv * (focus_slope(q, gamma) * lnp - std::pow(q, gamma) / pf);
    }
    r.loss = sum * inv;
    return r;
}

LossResult tversky_loss(std::span<const double> probs, Shape3 shape, const PixelTargets& targets, double t_alpha,
                        double t_beta, double gamma, double smooth) {
    check_shape(probs, shape, targets);
    LossResult r;
    r.grad.assign(probs.size(), 0.0);
    const std::size_t plane = shape.plane();

    std::set<int> present;
    for (std::size_t i = 0; i < plane; ++i) {
        if (targets.is_valid(i) && targets.labels[i] > 0) present.insert(targets.labels[i]);
    }
    if (present.empty()) return r;
    const double inv_k = 1.0 / static_cast<double>(present.size());

    for (int c : present) {
        const double* pc = probs.data() + static_cast<std::size_t>(c) * plane;
        double tp = 0.0, fp = 0.0, fn = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            if (!targets.is_valid(i)) continue;
            if (targets.labels[i] == c) {
                tp += pc[i];
                fn += 1.0 - pc[i];
            } else {
                fp += pc[i];
            }
        }
        const double num = tp + smooth;
        const double den = tp + t_alpha * fp + t_beta * fn + smooth;
        const double ti = num / den;
        const double q = std::max(0.0, 1.0 - ti);
        r.loss += inv_k * std::pow(q, gamma);

        const double dl_dti = -inv_k * focus_slope(q, gamma);
        if (dl_dti == 0.0) continue;
        // d TI / d p for a pixel with g = 1 and g = 0.
        const double d_pos = (den - num * (1.0 - t_beta)) / (den * den);
        const double d_neg = (-num * t_alpha) / (den * den);
        double* gc = r.grad.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            if (!targets.is_valid(i)) continue;
            gc[i] = dl_dti * (targets.labels[i] == c ? d_pos : d_neg);
        }
    }
    return r;
}

LossResult combo_loss(std::span<const double> probs, Shape3 shape, const PixelTargets& targets,
                      const ComboLossConfig& cfg) {
    cfg.validate();
    LossResult f = focal_loss(probs, shape, targets, cfg.gamma);
    const LossResult t = tversky_loss(probs, shape, targets, cfg.tversky_alpha, cfg.tversky_beta, cfg.gamma, cfg.smooth);
    const double a = cfg.alpha, b = 1.0 - cfg.alpha;
    f.loss = a * f.loss + b * t.loss;
    for (std::size_t i = 0; i < f.grad.size(); ++i) f.grad[i] = a * f.grad[i] + b * t.grad[i];
    return f;
}

LossResult cross_entropy(std::span<const double> class_probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= class_probs.size()) {
        throw Error(ErrorKind::domain, fmt::format("label {} outside {} classes", label, class_probs.size()));
    }
    double sum = 0.0;
    for (double p : class_probs) sum += p;
    if (std::abs(sum - 1.0) > 1e-6) {
        throw Error(ErrorKind::domain, fmt::format("class probabilities sum to {}, not 1", sum));
    }
    LossResult r;
    r.grad.assign(class_probs.size(), 0.0);
    const double p = class_probs[static_cast<std::size_t>(label)];
    r.loss = -std::log(std::max(p, kProbabilityFloor));
    if (p >= kProbabilityFloor) r.grad[static_cast<std::size_t>(label)] = -1.0 / p;
    return r;
}

ImageScore image_f1(const ClassMask& pred, const ClassMask& gt) {
    if (pred.width != gt.width || pred.height != gt.height) {
        throw Error(ErrorKind::dimension, fmt::format("prediction {}x{} vs ground truth {}x{}", pred.width, pred.height,
                                                      gt.width, gt.height));
    }
    std::array<ClassConfusion, 256> table{};
    std::array<bool, 256> seen{};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred.data[i], g = gt.data[i];
        if (p == g) {
            if (p != 0) ++table[p].tp;
        } else {
            if (p != 0) ++table[p].fp;
            if (g != 0) ++table[g].fn;
        }
        seen[p] = seen[p] || p != 0;
        seen[g] = seen[g] || g != 0;
    }
    ImageScore score;
    for (int c = 1; c < 256; ++c) {
        if (!seen[c]) continue;
        ClassConfusion cc = table[c];
        cc.class_id = c;
        if (cc.tp + cc.fp > 0) cc.precision = static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fp);
        if (cc.tp + cc.fn > 0) cc.recall = static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fn);
        const std::int64_t den = 2 * cc.tp + cc.fp + cc.fn;
        cc.f1 = den > 0 ? 2.0 * static_cast<double>(cc.tp) / static_cast<double>(den) : 0.0;
        score.classes.push_back(cc);
    }
    if (score.classes.empty()) {
        score.f1 = 1.0;
    } else {
        double sum = 0.0;
        for (const auto& cc : score.classes) sum += cc.f1;
        score.f1 = sum / static_cast<double>(score.classes.size());
    }
    return score;
}

double mean_f1(std::span<const double> scores) {
    if (scores.empty()) throw Error(ErrorKind::domain, "mean F1 of an empty set");
    // Sorted summation keeps the result independent of input order.
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double s : sorted) sum += s;
    return sum / static_cast<double>(sorted.size());
}

double finite_diff_check(const std::function<LossResult(std::span<const double>)>& fn,
                         std::span<const double> point, double eps) {
    const LossResult base = fn(point);
    std::vector<double> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double up = fn(x).loss;
        x[i] = saved - eps;
        const double down = fn(x).loss;
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        worst = std::max(worst, std::abs(base.grad[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

}  // namespace angioseg
