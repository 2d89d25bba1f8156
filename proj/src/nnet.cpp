#include "angioseg/nnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include <Eigen/Core>
#include <fmt/format.h>

#include "angioseg/annio.hpp"
#include "angioseg/error.hpp"
#include "angioseg/rng.hpp"

namespace angioseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr char kCkptMagic[8] = {'A', 'R', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::size_t kCkptHeader = 8 + 6 * 4 + 8 + 8 + 4;

struct LayerSpec {
    std::string name;
    LayerGroup group;
    int cin;
    int cout;
    int kernel;  // 3, or 1 for the heads
};

struct Slot {
    int group = 0;
    int tensor = 0;  // weight; bias follows
    int cin = 0;
    int cout = 0;
    int kernel = 1;
};

struct Plan {
    std::vector<Slot> enc1, enc2;
    Slot mid1, mid2;
    std::vector<Slot> up, dec1, dec2;  // indexed by level
    Slot seg, view;
};

int level_channels(const NetConfig& cfg, int level) { return cfg.base_channels << level; }

std::vector<LayerSpec> layer_specs(const NetConfig& cfg) {
    std::vector<LayerSpec> specs;
    int in = 1;
    for (int l = 0; l < cfg.depth; ++l) {
        const int c = level_channels(cfg, l);
        specs.push_back({fmt::format("enc{}_conv1", l), LayerGroup::encoder, in, c, 3});
        specs.push_back({fmt::format("enc{}_conv2", l), LayerGroup::encoder, c, c, 3});
        in = c;
    }
    const int cd = level_channels(cfg, cfg.depth);
    specs.push_back({"mid_conv1", LayerGroup::bottleneck, in, cd, 3});
    specs.push_back({"mid_conv2", LayerGroup::bottleneck, cd, cd, 3});
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const int c = level_channels(cfg, l);
        specs.push_back({fmt::format("dec{}_up", l), LayerGroup::decoder, level_channels(cfg, l + 1), c, 3});
        specs.push_back({fmt::format("dec{}_conv1", l), LayerGroup::decoder, 2 * c, c, 3});
        specs.push_back({fmt::format("dec{}_conv2", l), LayerGroup::decoder, c, c, 3});
    }
    specs.push_back({"seg_head", LayerGroup::head, level_channels(cfg, 0), cfg.out_classes, 1});
    specs.push_back({"view_head", LayerGroup::head, cd, cfg.view_classes, 1});
    return specs;
}

Plan make_plan(const NetConfig& cfg) {
    Plan plan;
    plan.up.resize(cfg.depth);
    plan.dec1.resize(cfg.depth);
    plan.dec2.resize(cfg.depth);
    int counters[kNumLayerGroups] = {0, 0, 0, 0};
    for (const auto& s : layer_specs(cfg)) {
        const int g = static_cast<int>(s.group);
        Slot slot{g, counters[g], s.cin, s.cout, s.kernel};
        counters[g] += 2;
        int level = -1;
        if (s.name.size() > 3 && std::isdigit(static_cast<unsigned char>(s.name[3]))) level = s.name[3] - '0';
        if (s.name.ends_with("_up")) {
            plan.up[level] = slot;
        } else if (s.name.starts_with("enc")) {
            (s.name.ends_with("conv1") ? plan.enc1 : plan.enc2).push_back(slot);
        } else if (s.name == "mid_conv1") {
            plan.mid1 = slot;
        } else if (s.name == "mid_conv2") {
            plan.mid2 = slot;
        } else if (s.name.starts_with("dec")) {
            (s.name.ends_with("conv1") ? plan.dec1 : plan.dec2)[level] = slot;
        } else if (s.name == "seg_head") {
            plan.seg = slot;
        } else {
            plan.view = slot;
        }
    }
    return plan;
}

ParamTensor he_tensor(const std::string& name, std::vector<int> shape, int fan_in, Rng& rng) {
    ParamTensor t;
    t.name = name;
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    t.shape = std::move(shape);
    t.values.resize(n);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (double& v : t.values) v = stddev * rng.normal();
    t.momentum.assign(n, 0.0);
    return t;
}

ParamTensor zero_tensor(const std::string& name, int n) {
    return ParamTensor{name, {n}, std::vector<double>(static_cast<std::size_t>(n), 0.0),
                       std::vector<double>(static_cast<std::size_t>(n), 0.0)};
}

void push_layer(ParamGroup& group, const LayerSpec& s, Rng& rng) {
    const bool linear = s.name == "view_head";
    std::vector<int> shape = linear ? std::vector<int>{s.cout, s.cin} : std::vector<int>{s.cout, s.cin, s.kernel, s.kernel};
    group.tensors.push_back(he_tensor(s.name + ".weight", shape, s.cin * s.kernel * s.kernel, rng));
    group.tensors.push_back(zero_tensor(s.name + ".bias", s.cout));
}

// --- tensors and primitive layers -------------------------------------------

struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

struct ConvRecord {
    std::vector<double> col;  // im2col of the input (the input itself for 1x1)
    Tensor out;               // post-activation output
    int in_channels = 0;
};

using Grads = std::vector<std::vector<std::vector<double>>>;

Grads zero_grads(const ModelState& m) {
    Grads g(m.groups.size());
    for (std::size_t i = 0; i < m.groups.size(); ++i) {
        for (const auto& t : m.groups[i].tensors) g[i].emplace_back(t.values.size(), 0.0);
    }
    return g;
}

void im2col3(const Tensor& x, std::vector<double>& col) {
    const int h = x.h, w = x.w;
    const std::size_t hw = x.plane();
    col.assign(static_cast<std::size_t>(x.c) * 9 * hw, 0.0);
    for (int ci = 0; ci < x.c; ++ci) {
        const double* src = x.v.data() + ci * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* row = col.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * hw;
                const int dy = ky - 1, dx = kx - 1;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    std::memcpy(row + y * w + x0, src + sy * w + x0 + dx, sizeof(double) * static_cast<std::size_t>(x1 - x0));
                }
            }
        }
    }
}

void col2im3(const std::vector<double>& col, Tensor& dx) {
    const int h = dx.h, w = dx.w;
    const std::size_t hw = dx.plane();
    for (int ci = 0; ci < dx.c; ++ci) {
        double* dst = dx.v.data() + ci * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* row = col.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * hw;
                const int dy = ky - 1, ddx = kx - 1;
                const int x0 = std::max(0, -ddx), x1 = std::min(w, w - ddx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    double* d = dst + sy * w + ddx;
                    const double* s = row + y * w;
                    for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
                }
            }
        }
    }
}

class Net {
public:
    Net(const ModelState& m) : model_(m), plan_(make_plan(m.config)) {}

    const double* weight(const Slot& s) const { return model_.groups[s.group].tensors[s.tensor].values.data(); }
    const double* bias(const Slot& s) const { return model_.groups[s.group].tensors[s.tensor + 1].values.data(); }

    void conv(const Tensor& x, const Slot& s, bool relu, ConvRecord& rec) const {
        const std::size_t hw = x.plane();
        rec.in_channels = x.c;
        rec.out = Tensor(s.cout, x.h, x.w);
        const int k = s.cin * s.kernel * s.kernel;
        if (s.kernel == 3) {
            im2col3(x, rec.col);
        } else {
            rec.col = x.v;
        }
        MatMap y(rec.out.v.data(), s.cout, static_cast<Eigen::Index>(hw));
        y.noalias() = ConstMatMap(weight(s), s.cout, k) * ConstMatMap(rec.col.data(), k, static_cast<Eigen::Index>(hw));
        const double* b = bias(s);
        for (int o = 0; o < s.cout; ++o) {
            double* row = rec.out.v.data() + o * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double v = row[i] + b[o];
                row[i] = relu && v < 0.0 ? 0.0 : v;
            }
        }
    }

    /// `dy` is the gradient w.r.t. the recorded output (post-activation when relu).
    /// Returns the input gradient unless `need_dx` is false.
    Tensor conv_back(const ConvRecord& rec, const Slot& s, bool relu, Tensor dy, Grads& g, bool need_dx = true) const {
        const std::size_t hw = rec.out.plane();
        if (relu) {
            for (std::size_t i = 0; i < dy.v.size(); ++i) {
                if (rec.out.v[i] <= 0.0) dy.v[i] = 0.0;
            }
        }
        const int k = s.cin * s.kernel * s.kernel;
        const auto n = static_cast<Eigen::Index>(hw);
        ConstMatMap dym(dy.v.data(), s.cout, n);
        ConstMatMap colm(rec.col.data(), k, n);
        MatMap(g[s.group][s.tensor].data(), s.cout, k).noalias() += dym * colm.transpose();
        double* db = g[s.group][s.tensor + 1].data();
        for (int o = 0; o < s.cout; ++o) {
            const double* row = dy.v.data() + o * hw;
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) acc += row[i];
            db[o] += acc;
        }
        if (!need_dx) return {};
        Tensor dx(rec.in_channels, rec.out.h, rec.out.w);
        if (s.kernel == 3) {
            std::vector<double> dcol(static_cast<std::size_t>(k) * hw);
            MatMap(dcol.data(), k, n).noalias() = ConstMatMap(weight(s), s.cout, k).transpose() * dym;
            col2im3(dcol, dx);
        } else {
            MatMap(dx.v.data(), k, n).noalias() = ConstMatMap(weight(s), s.cout, k).transpose() * dym;
        }
        return dx;
    }

    struct Trace {
        Tensor input;
        std::vector<ConvRecord> enc1, enc2, up, dec1, dec2;
        std::vector<Tensor> pooled;
        std::vector<std::vector<int>> pool_arg;
        std::vector<Tensor> upsampled, concat;
        ConvRecord mid1, mid2, seg;
        std::vector<double> seg_probs, gap, view_probs;
    };

    void run(const GrayImage& img, Trace& t) const {
        const NetConfig& cfg = model_.config;
        if (img.width != cfg.width || img.height != cfg.height) {
            throw Error(ErrorKind::dimension, fmt::format("image {}x{} does not match network input {}x{}", img.width,
                                                          img.height, cfg.width, cfg.height));
        }
        const int d = cfg.depth;
        t.input = Tensor(1, img.height, img.width);
        for (std::size_t i = 0; i < img.size(); ++i) t.input.v[i] = (img.data[i] - 127.5) / 127.5;
        t.enc1.resize(d);
        t.enc2.resize(d);
        t.pooled.resize(d);
        t.pool_arg.resize(d);
        t.up.resize(d);
        t.dec1.resize(d);
        t.dec2.resize(d);
        t.upsampled.resize(d);
        t.concat.resize(d);

        const Tensor* x = &t.input;
        for (int l = 0; l < d; ++l) {
            conv(*x, plan_.enc1[l], true, t.enc1[l]);
            conv(t.enc1[l].out, plan_.enc2[l], true, t.enc2[l]);
            maxpool(t.enc2[l].out, t.pooled[l], t.pool_arg[l]);
            x = &t.pooled[l];
        }
        conv(*x, plan_.mid1, true, t.mid1);
        conv(t.mid1.out, plan_.mid2, true, t.mid2);
        const Tensor* y = &t.mid2.out;
        for (int l = d - 1; l >= 0; --l) {
            upsample(*y, t.upsampled[l]);
            conv(t.upsampled[l], plan_.up[l], true, t.up[l]);
            const Tensor& skip = t.enc2[l].out;
            t.concat[l] = Tensor(skip.c + t.up[l].out.c, skip.h, skip.w);
            std::copy(skip.v.begin(), skip.v.end(), t.concat[l].v.begin());
            std::copy(t.up[l].out.v.begin(), t.up[l].out.v.end(), t.concat[l].v.begin() + static_cast<std::ptrdiff_t>(skip.v.size()));
            conv(t.concat[l], plan_.dec1[l], true, t.dec1[l]);
            conv(t.dec1[l].out, plan_.dec2[l], true, t.dec2[l]);
            y = &t.dec2[l].out;
        }
        conv(*y, plan_.seg, false, t.seg);
        t.seg_probs = t.seg.out.v;
        softmax_channels(t.seg_probs, t.seg.out.c, t.seg.out.plane());

        const Tensor& bottom = t.mid2.out;
        t.gap.assign(static_cast<std::size_t>(bottom.c), 0.0);
        for (int c = 0; c < bottom.c; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < bottom.plane(); ++i) acc += bottom.v[c * bottom.plane() + i];
            t.gap[c] = acc / static_cast<double>(bottom.plane());
        }
        const double* wv = weight(plan_.view);
        const double* bv = bias(plan_.view);
        t.view_probs.assign(static_cast<std::size_t>(plan_.view.cout), 0.0);
        for (int o = 0; o < plan_.view.cout; ++o) {
            double acc = bv[o];
            for (int c = 0; c < bottom.c; ++c) acc += wv[o * bottom.c + c] * t.gap[c];
            t.view_probs[o] = acc;
        }
        softmax_channels(t.view_probs, plan_.view.cout, 1);
    }

    void back(const Trace& t, const std::vector<double>& d_seg_probs, const std::vector<double>& d_view_probs,
              Grads& g) const {
        const int d = model_.config.depth;
        Tensor dlogits(t.seg.out.c, t.seg.out.h, t.seg.out.w);
        softmax_back(t.seg_probs, d_seg_probs, dlogits.v, dlogits.c, dlogits.plane());
        Tensor dy = conv_back(t.seg, plan_.seg, false, std::move(dlogits), g);

        for (int l = 0; l < d; ++l) {
            Tensor dc1 = conv_back(t.dec2[l], plan_.dec2[l], true, std::move(dy), g);
            Tensor dcat = conv_back(t.dec1[l], plan_.dec1[l], true, std::move(dc1), g);
            const std::size_t skip_n = t.enc2[l].out.v.size();
            skip_grads_[l] = Tensor(t.enc2[l].out.c, t.enc2[l].out.h, t.enc2[l].out.w);
            std::copy(dcat.v.begin(), dcat.v.begin() + static_cast<std::ptrdiff_t>(skip_n), skip_grads_[l].v.begin());
            Tensor dup(t.up[l].out.c, t.up[l].out.h, t.up[l].out.w);
            std::copy(dcat.v.begin() + static_cast<std::ptrdiff_t>(skip_n), dcat.v.end(), dup.v.begin());
            Tensor dups = conv_back(t.up[l], plan_.up[l], true, std::move(dup), g);
            dy = upsample_back(dups);
        }

        // View head: softmax -> linear -> global average pool of the bottleneck.
        const Tensor& bottom = t.mid2.out;
        std::vector<double> dvl(t.view_probs.size());
        softmax_back(t.view_probs, d_view_probs, dvl, static_cast<int>(dvl.size()), 1);
        double* gw = g[plan_.view.group][plan_.view.tensor].data();
        double* gb = g[plan_.view.group][plan_.view.tensor + 1].data();
        const double* wv = weight(plan_.view);
        const double inv_area = 1.0 / static_cast<double>(bottom.plane());
        for (int o = 0; o < plan_.view.cout; ++o) {
            gb[o] += dvl[o];
            for (int c = 0; c < bottom.c; ++c) gw[o * bottom.c + c] += dvl[o] * t.gap[c];
        }
        for (int c = 0; c < bottom.c; ++c) {
            double dgap = 0.0;
            for (int o = 0; o < plan_.view.cout; ++o) dgap += wv[o * bottom.c + c] * dvl[o];
            if (dgap == 0.0) continue;
            double* row = dy.v.data() + c * bottom.plane();
            for (std::size_t i = 0; i < bottom.plane(); ++i) row[i] += dgap * inv_area;
        }

        Tensor dm1 = conv_back(t.mid2, plan_.mid2, true, std::move(dy), g);
        Tensor dx = conv_back(t.mid1, plan_.mid1, true, std::move(dm1), g);
        for (int l = d - 1; l >= 0; --l) {
            Tensor db = maxpool_back(dx, t.pool_arg[l], t.enc2[l].out);
            for (std::size_t i = 0; i < db.v.size(); ++i) db.v[i] += skip_grads_[l].v[i];
            Tensor da = conv_back(t.enc2[l], plan_.enc2[l], true, std::move(db), g);
            dx = conv_back(t.enc1[l], plan_.enc1[l], true, std::move(da), g, l > 0);
        }
    }

    void prepare_backward() const { skip_grads_.assign(static_cast<std::size_t>(model_.config.depth), Tensor{}); }

private:
    static void softmax_channels(std::vector<double>& v, int channels, std::size_t plane) {
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = v[i];
            for (int c = 1; c < channels; ++c) mx = std::max(mx, v[c * plane + i]);
            double sum = 0.0;
            for (int c = 0; c < channels; ++c) {
                double& e = v[c * plane + i];
                e = std::exp(e - mx);
                sum += e;
            }
            for (int c = 0; c < channels; ++c) v[c * plane + i] /= sum;
        }
    }

    static void softmax_back(const std::vector<double>& p, const std::vector<double>& dp, std::vector<double>& dz,
                             int channels, std::size_t plane) {
        for (std::size_t i = 0; i < plane; ++i) {
            double dot = 0.0;
            for (int c = 0; c < channels; ++c) dot += p[c * plane + i] * dp[c * plane + i];
            for (int c = 0; c < channels; ++c) dz[c * plane + i] = p[c * plane + i] * (dp[c * plane + i] - dot);
        }
    }

    static void maxpool(const Tensor& x, Tensor& out, std::vector<int>& arg) {
        out = Tensor(x.c, x.h / 2, x.w / 2);
        arg.assign(out.v.size(), 0);
        for (int c = 0; c < x.c; ++c) {
            for (int y = 0; y < out.h; ++y) {
                for (int xx = 0; xx < out.w; ++xx) {
                    int best = c * static_cast<int>(x.plane()) + (2 * y) * x.w + 2 * xx;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const int idx = c * static_cast<int>(x.plane()) + (2 * y + dy) * x.w + 2 * xx + dx;
                            if (x.v[idx] > x.v[best]) best = idx;
                        }
                    }
                    const std::size_t o = c * out.plane() + static_cast<std::size_t>(y) * out.w + xx;
                    out.v[o] = x.v[best];
                    arg[o] = best;
                }
            }
        }
    }

    static Tensor maxpool_back(const Tensor& dout, const std::vector<int>& arg, const Tensor& like) {
        Tensor dx(like.c, like.h, like.w);
        for (std::size_t o = 0; o < dout.v.size(); ++o) dx.v[arg[o]] += dout.v[o];
        return dx;
    }

    static void upsample(const Tensor& x, Tensor& out) {
        out = Tensor(x.c, x.h * 2, x.w * 2);
        for (int c = 0; c < x.c; ++c) {
            for (int y = 0; y < out.h; ++y) {
                for (int xx = 0; xx < out.w; ++xx) {
                    out.v[c * out.plane() + static_cast<std::size_t>(y) * out.w + xx] =
                        x.v[c * x.plane() + static_cast<std::size_t>(y / 2) * x.w + xx / 2];
                }
            }
        }
    }

    static Tensor upsample_back(const Tensor& dout) {
        Tensor dx(dout.c, dout.h / 2, dout.w / 2);
        for (int c = 0; c < dout.c; ++c) {
            for (int y = 0; y < dout.h; ++y) {
                for (int xx = 0; xx < dout.w; ++xx) {
                    dx.v[c * dx.plane() + static_cast<std::size_t>(y / 2) * dx.w + xx / 2] +=
                        dout.v[c * dout.plane() + static_cast<std::size_t>(y) * dout.w + xx];
                }
            }
        }
        return dx;
    }

    const ModelState& model_;
    Plan plan_;
    mutable std::vector<Tensor> skip_grads_;
};

ClassMask argmax_mask(const std::vector<double>& probs, int channels, int height, int width) {
    ClassMask out(width, height, 0);
    const std::size_t plane = out.size();
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int c = 1; c < channels; ++c) {
            if (probs[c * plane + i] > probs[best * plane + i]) best = c;
        }
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

double compute(const ModelState& model, std::span<const TrainSample> batch, const LossSettings& loss, Grads& grads,
               std::vector<ClassMask>* predictions) {
    if (batch.empty()) throw Error(ErrorKind::domain, "empty training batch");
    const NetConfig& cfg = model.config;
    Net net(model);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    Net::Trace trace;
    if (predictions) predictions->clear();
    for (const auto& sample : batch) {
        if (!sample.image || !sample.target) throw Error(ErrorKind::domain, "training sample without image or target");
        net.run(*sample.image, trace);
        const Shape3 shape{cfg.out_classes, cfg.height, cfg.width};
        LossResult seg = combo_loss(trace.seg_probs, shape, PixelTargets::from_mask(*sample.target), loss.combo);
        double sample_loss = seg.loss;
        std::vector<double> dview(trace.view_probs.size(), 0.0);
        if (sample.view_label >= 0 && loss.view_weight != 0.0) {
            const LossResult ce = cross_entropy(trace.view_probs, sample.view_label);
            sample_loss += loss.view_weight * ce.loss;
            for (std::size_t i = 0; i < dview.size(); ++i) dview[i] = loss.view_weight * ce.grad[i] * inv_b;
        }
        total += sample_loss * inv_b;
        for (double& v : seg.grad) v *= inv_b;
        net.prepare_backward();
        net.back(trace, seg.grad, dview, grads);
        if (predictions) predictions->push_back(argmax_mask(trace.seg_probs, cfg.out_classes, cfg.height, cfg.width));
    }
    return total;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void NetConfig::validate() const {
    if (depth < 1 || depth > 6) throw Error(ErrorKind::configuration, fmt::format("depth {} outside 1..6", depth));
    if (base_channels < 1) throw Error(ErrorKind::configuration, "base channels must be >= 1");
    if (height < 1 || width < 1 || height % (1 << depth) != 0 || width % (1 << depth) != 0) {
        throw Error(ErrorKind::configuration,
                    fmt::format("input {}x{} is not divisible by 2^{}", height, width, depth));
    }
    if (out_classes != 2 && out_classes != kNumMaskClasses) {
        throw Error(ErrorKind::configuration, fmt::format("out_classes {} must be 2 or {}", out_classes, kNumMaskClasses));
    }
    if (view_classes < 1) throw Error(ErrorKind::configuration, "view classes must be >= 1");
}

bool operator==(const ParamTensor& a, const ParamTensor& b) {
    return a.name == b.name && a.shape == b.shape && a.values == b.values && a.momentum == b.momentum;
}

bool operator==(const ModelState& a, const ModelState& b) {
    if (!(a.config == b.config) || a.step != b.step || a.completed_stage != b.completed_stage ||
        a.groups.size() != b.groups.size()) {
        return false;
    }
    for (std::size_t g = 0; g < a.groups.size(); ++g) {
        if (a.groups[g].name != b.groups[g].name || a.groups[g].tensors != b.groups[g].tensors) return false;
    }
    return true;
}

std::size_t ModelState::parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) {
        for (const auto& t : g.tensors) n += t.values.size();
    }
    return n;
}

const ParamTensor& ModelState::tensor(std::string_view name) const {
    for (const auto& g : groups) {
        for (const auto& t : g.tensors) {
            if (t.name == name) return t;
        }
    }
    throw Error(ErrorKind::lookup, fmt::format("no parameter tensor named {}", name));
}

ParamTensor& ModelState::tensor(std::string_view name) {
    return const_cast<ParamTensor&>(static_cast<const ModelState&>(*this).tensor(name));
}

ModelState init_model(const NetConfig& cfg) {
    cfg.validate();
    ModelState m;
    m.config = cfg;
    m.groups = {{"encoder", {}}, {"bottleneck", {}}, {"decoder", {}}, {"head", {}}};
    Rng rng(cfg.seed);
    for (const auto& s : layer_specs(cfg)) push_layer(m.groups[static_cast<int>(s.group)], s, rng);
    return m;
}

ForwardResult forward(const ModelState& model, const GrayImage& img) {
    Net net(model);
    Net::Trace trace;
    net.run(img, trace);
    ForwardResult r;
    r.seg_shape = {model.config.out_classes, model.config.height, model.config.width};
    r.seg_probs = std::move(trace.seg_probs);
    r.view_probs = std::move(trace.view_probs);
    return r;
}

ProbabilityMap to_probability_map(const ForwardResult& result) {
    ProbabilityMap map(result.seg_shape.channels, result.seg_shape.height, result.seg_shape.width);
    for (std::size_t i = 0; i < map.data.size(); ++i) map.data[i] = static_cast<float>(result.seg_probs[i]);
    return map;
}

double loss_and_gradient(const ModelState& model, std::span<const TrainSample> batch, const LossSettings& loss,
                         std::vector<double>* gradient, std::vector<ClassMask>* predictions) {
    Grads grads = zero_grads(model);
    const double value = compute(model, batch, loss, grads, predictions);
    if (gradient) {
        gradient->clear();
        for (const auto& g : grads) {
            for (const auto& t : g) gradient->insert(gradient->end(), t.begin(), t.end());
        }
    }
    return value;
}

double train_step(ModelState& model, std::span<const TrainSample> batch, const LossSettings& loss,
                  std::span<const double> group_rates, double momentum, std::vector<ClassMask>* predictions) {
    if (group_rates.size() != model.groups.size()) {
        throw Error(ErrorKind::configuration,
                    fmt::format("{} learning rates for {} layer groups", group_rates.size(), model.groups.size()));
    }
    Grads grads = zero_grads(model);
    const double value = compute(model, batch, loss, grads, predictions);
    if (!std::isfinite(value)) {
        throw Error(ErrorKind::diagnostics, fmt::format("non-finite loss {} at step {}", value, model.step));
    }
    for (std::size_t g = 0; g < grads.size(); ++g) {
        for (std::size_t t = 0; t < grads[g].size(); ++t) {
            for (double v : grads[g][t]) {
                if (!std::isfinite(v)) {
                    throw Error(ErrorKind::diagnostics, fmt::format("non-finite gradient in {} at step {}",
                                                                    model.groups[g].tensors[t].name, model.step));
                }
            }
        }
    }
    for (std::size_t g = 0; g < grads.size(); ++g) {
        const double lr = group_rates[g];
        if (lr == 0.0) continue;
        for (std::size_t t = 0; t < grads[g].size(); ++t) {
            ParamTensor& p = model.groups[g].tensors[t];
            const auto& dg = grads[g][t];
            for (std::size_t i = 0; i < dg.size(); ++i) {
                p.momentum[i] = momentum * p.momentum[i] + dg[i];
                p.values[i] -= lr * p.momentum[i];
            }
        }
    }
    ++model.step;
    return value;
}

ModelState adapt_output_head(const ModelState& model, int new_classes, std::uint64_t seed) {
    if (model.config.out_classes != 2) {
        throw Error(ErrorKind::configuration,
                    fmt::format("head adaptation needs a binary model, got {} classes", model.config.out_classes));
    }
    ModelState out = model;
    out.config.out_classes = new_classes;
    out.config.validate();
    const int c0 = model.config.base_channels;
    Rng rng(derive_seed(seed, 0x5e6));
    out.tensor("seg_head.weight") = he_tensor("seg_head.weight", {new_classes, c0, 1, 1}, c0, rng);
    out.tensor("seg_head.bias") = zero_tensor("seg_head.bias", new_classes);
    return out;
}

std::vector<double> discriminative_lrs(double base, int groups) {
    if (groups < 1) throw Error(ErrorKind::domain, "need at least one layer group");
    if (groups == 1) return {base / 4.0};
    std::vector<double> rates(static_cast<std::size_t>(groups));
    const double lo = base / 400.0;
    for (int k = 0; k < groups; ++k) rates[k] = lo * std::pow(100.0, static_cast<double>(k) / (groups - 1));
    rates.back() = base / 4.0;
    return rates;
}

std::vector<double> flatten_parameters(const ModelState& model) {
    std::vector<double> flat;
    flat.reserve(model.parameter_count());
    for (const auto& g : model.groups) {
        for (const auto& t : g.tensors) flat.insert(flat.end(), t.values.begin(), t.values.end());
    }
    return flat;
}

void assign_parameters(ModelState& model, std::span<const double> flat) {
    if (flat.size() != model.parameter_count()) {
        throw Error(ErrorKind::dimension,
                    fmt::format("{} values for {} parameters", flat.size(), model.parameter_count()));
    }
    std::size_t k = 0;
    for (auto& g : model.groups) {
        for (auto& t : g.tensors) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k),
                      flat.begin() + static_cast<std::ptrdiff_t>(k + t.values.size()), t.values.begin());
            k += t.values.size();
        }
    }
}

std::vector<std::uint8_t> encode_checkpoint(const ModelState& model) {
    const NetConfig& c = model.config;
    for (const auto& g : model.groups) {
        for (const auto& t : g.tensors) {
            for (double v : t.values) {
                if (!std::isfinite(v)) throw Error(ErrorKind::validity, fmt::format("non-finite parameter in {}", t.name));
            }
        }
    }
    std::vector<std::uint8_t> out(std::begin(kCkptMagic), std::end(kCkptMagic));
    out.reserve(kCkptHeader + 16 * model.parameter_count());
    for (int v : {c.height, c.width, c.base_channels, c.depth, c.out_classes, c.view_classes}) {
        put_u32(out, static_cast<std::uint32_t>(v));
    }
    put_u64(out, c.seed);
    put_u64(out, model.step);
    put_u32(out, static_cast<std::uint32_t>(model.completed_stage));
    for (const auto& g : model.groups) {
        for (const auto& t : g.tensors) {
            for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    for (const auto& g : model.groups) {
        for (const auto& t : g.tensors) {
            for (double v : t.momentum) put_u64(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

ModelState decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kCkptMagic, 8) != 0) {
        throw Error(ErrorKind::format, "missing ARTCKPT1 magic (wrong format or version)");
    }
    if (bytes.size() < kCkptHeader) {
        throw Error(ErrorKind::corruption,
                    fmt::format("checkpoint header truncated: {} bytes, expected at least {}", bytes.size(), kCkptHeader));
    }
    NetConfig cfg;
    const std::uint8_t* p = bytes.data() + 8;
    cfg.height = static_cast<int>(get_le(p, 4));
    cfg.width = static_cast<int>(get_le(p + 4, 4));
    cfg.base_channels = static_cast<int>(get_le(p + 8, 4));
    cfg.depth = static_cast<int>(get_le(p + 12, 4));
    cfg.out_classes = static_cast<int>(get_le(p + 16, 4));
    cfg.view_classes = static_cast<int>(get_le(p + 20, 4));
    cfg.seed = get_le(p + 24, 8);
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw Error(ErrorKind::corruption, fmt::format("checkpoint config block invalid: {}", e.what()));
    }
    ModelState model = init_model(cfg);
    model.step = get_le(p + 32, 8);
    model.completed_stage = static_cast<int>(get_le(p + 40, 4));
    const std::size_t n = model.parameter_count();
    const std::size_t expected = kCkptHeader + 16 * n;
    if (bytes.size() != expected) {
        throw Error(ErrorKind::corruption,
                    fmt::format("checkpoint has {} bytes, expected {} for its configuration", bytes.size(), expected));
    }
    const std::uint8_t* q = bytes.data() + kCkptHeader;
    for (auto& g : model.groups) {
        for (auto& t : g.tensors) {
            for (double& v : t.values) {
                v = std::bit_cast<double>(get_le(q, 8));
                q += 8;
            }
        }
    }
    for (auto& g : model.groups) {
        for (auto& t : g.tensors) {
            for (double& v : t.momentum) {
                v = std::bit_cast<double>(get_le(q, 8));
                q += 8;
            }
        }
    }
    return model;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
    write_file_bytes(path, encode_checkpoint(model));
}

ModelState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

ModelState load_checkpoint(const std::filesystem::path& path, const NetConfig& expected) {
    ModelState m = load_checkpoint(path);
    NetConfig stored = m.config;
    NetConfig want = expected;
    stored.seed = want.seed = 0;
    if (!(stored == want)) {
        throw Error(ErrorKind::configuration,
                    fmt::format("checkpoint {} was built for {}x{} base {} depth {} classes {}, expected {}x{} base {} "
                                "depth {} classes {}",
                                path.string(), m.config.height, m.config.width, m.config.base_channels, m.config.depth,
                                m.config.out_classes, expected.height, expected.width, expected.base_channels,
                                expected.depth, expected.out_classes));
    }
    return m;
}

}  // namespace angioseg
