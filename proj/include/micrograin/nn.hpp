// Minimal float32 neural-network kernel: NCHW tensors, 3x3 convolutions via
// im2col + dense GEMM, a two-level U-Net with per-block embedding injection,
// and an Adam optimizer. Everything is single-threaded and deterministic.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "micrograin/errors.hpp"
#include "micrograin/rng.hpp"

namespace micrograin::nn {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<MatF>;
using CMapF = Eigen::Map<const MatF>;

struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("Tensor: non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        v.assign(n, 0.0f);
    }

    std::size_t size() const { return v.size(); }
    int dim(int k) const { return shape[static_cast<std::size_t>(k)]; }
};

// A learnable tensor and its gradient accumulator.
struct Param {
    Tensor w;
    Tensor g;
    std::string name;

    explicit Param(std::vector<int> shape, std::string n = "")
        : w(shape), g(std::move(shape)), name(std::move(n)) {}

    void zero_grad() { std::fill(g.v.begin(), g.v.end(), 0.0f); }
};

// ---------------------------------------------------------------------------
// Elementwise SiLU x * sigmoid(x).

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

struct SiLU {
    Tensor cache;

    Tensor forward(const Tensor& x) {
        cache = x;
        Tensor y = x;
        for (float& t : y.v) t = t * sigmoid(t);
        return y;
    }

    Tensor backward(const Tensor& gy) {
        Tensor gx = gy;
        for (std::size_t k = 0; k < gx.v.size(); ++k) {
            const float x = cache.v[k];
            const float s = sigmoid(x);
            gx.v[k] *= s * (1.0f + x * (1.0f - s));
        }
        return gx;
    }
};

// ---------------------------------------------------------------------------
// Fully connected layer on {N, in} tensors.

struct Linear {
    Param w;  // {out, in}
    Param b;  // {out}
    Tensor cache_x;

    Linear(int in, int out, const std::string& name)
        : w({out, in}, name + ".w"), b({out}, name + ".b") {}

    void init(Rng& rng) {
        const float limit = std::sqrt(6.0f / static_cast<float>(w.w.dim(1)));
        for (float& x : w.w.v) x = limit * (2.0f * static_cast<float>(rng.uniform()) - 1.0f);
        std::fill(b.w.v.begin(), b.w.v.end(), 0.0f);
    }

    Tensor forward(const Tensor& x) {
        if (x.shape.size() != 2 || x.dim(1) != w.w.dim(1))
            throw ShapeError("Linear: bad input shape");
        cache_x = x;
        const int n = x.dim(0), in = w.w.dim(1), out = w.w.dim(0);
        Tensor y({n, out});
        CMapF xm(x.v.data(), n, in);
        CMapF wm(w.w.v.data(), out, in);
        MapF ym(y.v.data(), n, out);
        ym.noalias() = xm * wm.transpose();
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < out; ++c) y.v[static_cast<std::size_t>(r) * out + c] += b.w.v[static_cast<std::size_t>(c)];
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const int n = cache_x.dim(0), in = w.w.dim(1), out = w.w.dim(0);
        CMapF gym(gy.v.data(), n, out);
        CMapF xm(cache_x.v.data(), n, in);
        MapF gwm(w.g.v.data(), out, in);
        gwm.noalias() += gym.transpose() * xm;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < out; ++c) b.g.v[static_cast<std::size_t>(c)] += gy.v[static_cast<std::size_t>(r) * out + c];
        Tensor gx({n, in});
        MapF gxm(gx.v.data(), n, in);
        CMapF wm(w.w.v.data(), out, in);
        gxm.noalias() = gym * wm;
        return gx;
    }
};

// ---------------------------------------------------------------------------
// 3x3 same-padding convolution on {N, C, H, W} tensors.

struct Conv3x3 {
    Param w;  // {out_c, in_c * 9}
    Param b;  // {out_c}
    Tensor cache_x;

    Conv3x3(int in_c, int out_c, const std::string& name)
        : w({out_c, in_c * 9}, name + ".w"), b({out_c}, name + ".b") {}

    void init(Rng& rng) {
        const float limit = std::sqrt(6.0f / static_cast<float>(w.w.dim(1)));
        for (float& x : w.w.v) x = limit * (2.0f * static_cast<float>(rng.uniform()) - 1.0f);
        std::fill(b.w.v.begin(), b.w.v.end(), 0.0f);
    }

    void init_zero() {
        std::fill(w.w.v.begin(), w.w.v.end(), 0.0f);
        std::fill(b.w.v.begin(), b.w.v.end(), 0.0f);
    }

    int in_channels() const { return w.w.dim(1) / 9; }
    int out_channels() const { return w.w.dim(0); }

    static void im2col(const float* x, int c_in, int h, int w_, std::vector<float>& col) {
        col.assign(static_cast<std::size_t>(c_in) * 9 * h * w_, 0.0f);
        for (int c = 0; c < c_in; ++c) {
            for (int di = -1; di <= 1; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    const std::size_t row = static_cast<std::size_t>((c * 3 + di + 1) * 3 + dj + 1);
                    float* dst = col.data() + row * h * w_;
                    const float* src = x + static_cast<std::size_t>(c) * h * w_;
                    for (int i = 0; i < h; ++i) {
                        const int si = i + di;
                        if (si < 0 || si >= h) continue;
                        for (int j = 0; j < w_; ++j) {
                            const int sj = j + dj;
                            if (sj < 0 || sj >= w_) continue;
                            dst[i * w_ + j] = src[si * w_ + sj];
                        }
                    }
                }
            }
        }
    }

    Tensor forward(const Tensor& x) {
        if (x.shape.size() != 4 || x.dim(1) != in_channels())
            throw ShapeError("Conv3x3: bad input shape");
        cache_x = x;
        const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w_ = x.dim(3);
        const int c_out = out_channels();
        Tensor y({n, c_out, h, w_});
        std::vector<float> col;
        CMapF wm(w.w.v.data(), c_out, c_in * 9);
        for (int item = 0; item < n; ++item) {
            im2col(x.v.data() + static_cast<std::size_t>(item) * c_in * h * w_, c_in, h, w_, col);
            CMapF cm(col.data(), c_in * 9, h * w_);
            MapF ym(y.v.data() + static_cast<std::size_t>(item) * c_out * h * w_, c_out, h * w_);
            ym.noalias() = wm * cm;
            for (int c = 0; c < c_out; ++c) ym.row(c).array() += b.w.v[static_cast<std::size_t>(c)];
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const int n = cache_x.dim(0), c_in = cache_x.dim(1), h = cache_x.dim(2), w_ = cache_x.dim(3);
        const int c_out = out_channels();
        Tensor gx(cache_x.shape);
        std::vector<float> col, gcol(static_cast<std::size_t>(c_in) * 9 * h * w_);
        CMapF wm(w.w.v.data(), c_out, c_in * 9);
        MapF gwm(w.g.v.data(), c_out, c_in * 9);
        for (int item = 0; item < n; ++item) {
            im2col(cache_x.v.data() + static_cast<std::size_t>(item) * c_in * h * w_, c_in, h, w_, col);
            CMapF cm(col.data(), c_in * 9, h * w_);
            CMapF gym(gy.v.data() + static_cast<std::size_t>(item) * c_out * h * w_, c_out, h * w_);
            gwm.noalias() += gym * cm.transpose();
            for (int c = 0; c < c_out; ++c) b.g.v[static_cast<std::size_t>(c)] += gym.row(c).sum();
            MapF gcm(gcol.data(), c_in * 9, h * w_);
            gcm.noalias() = wm.transpose() * gym;
            // col2im: scatter-add the nine shifted views back onto gx
            float* gxi = gx.v.data() + static_cast<std::size_t>(item) * c_in * h * w_;
            for (int c = 0; c < c_in; ++c) {
                for (int di = -1; di <= 1; ++di) {
                    for (int dj = -1; dj <= 1; ++dj) {
                        const std::size_t row = static_cast<std::size_t>((c * 3 + di + 1) * 3 + dj + 1);
                        const float* src = gcol.data() + row * h * w_;
                        float* dst = gxi + static_cast<std::size_t>(c) * h * w_;
                        for (int i = 0; i < h; ++i) {
                            const int si = i + di;
                            if (si < 0 || si >= h) continue;
                            for (int j = 0; j < w_; ++j) {
                                const int sj = j + dj;
                                if (sj < 0 || sj >= w_) continue;
                                dst[si * w_ + sj] += src[i * w_ + j];
                            }
                        }
                    }
                }
            }
        }
        return gx;
    }
};

// ---------------------------------------------------------------------------
// Resolution plumbing: 2x2 average pooling, nearest-neighbor upsampling, and
// channel concatenation, each with an explicit adjoint.

inline Tensor avg_pool2(const Tensor& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size");
    Tensor y({n, c, h / 2, w / 2});
    for (int nc = 0; nc < n * c; ++nc) {
        const float* src = x.v.data() + static_cast<std::size_t>(nc) * h * w;
        float* dst = y.v.data() + static_cast<std::size_t>(nc) * (h / 2) * (w / 2);
        for (int i = 0; i < h / 2; ++i)
            for (int j = 0; j < w / 2; ++j)
                dst[i * (w / 2) + j] =
                    0.25f * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] +
                             src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]);
    }
    return y;
}

inline Tensor avg_pool2_backward(const Tensor& gy) {
    const int n = gy.dim(0), c = gy.dim(1), h2 = gy.dim(2), w2 = gy.dim(3);
    Tensor gx({n, c, 2 * h2, 2 * w2});
    for (int nc = 0; nc < n * c; ++nc) {
        const float* src = gy.v.data() + static_cast<std::size_t>(nc) * h2 * w2;
        float* dst = gx.v.data() + static_cast<std::size_t>(nc) * 4 * h2 * w2;
        for (int i = 0; i < h2; ++i)
            for (int j = 0; j < w2; ++j) {
                const float g = 0.25f * src[i * w2 + j];
                dst[2 * i * 2 * w2 + 2 * j] = g;
                dst[2 * i * 2 * w2 + 2 * j + 1] = g;
                dst[(2 * i + 1) * 2 * w2 + 2 * j] = g;
                dst[(2 * i + 1) * 2 * w2 + 2 * j + 1] = g;
            }
    }
    return gx;
}

inline Tensor upsample2(const Tensor& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({n, c, 2 * h, 2 * w});
    for (int nc = 0; nc < n * c; ++nc) {
        const float* src = x.v.data() + static_cast<std::size_t>(nc) * h * w;
        float* dst = y.v.data() + static_cast<std::size_t>(nc) * 4 * h * w;
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
    return y;
}

inline Tensor upsample2_backward(const Tensor& gy) {
    const int n = gy.dim(0), c = gy.dim(1), h2 = gy.dim(2), w2 = gy.dim(3);
    if (h2 % 2 || w2 % 2) throw ShapeError("upsample2_backward: odd spatial size");
    Tensor gx({n, c, h2 / 2, w2 / 2});
    for (int nc = 0; nc < n * c; ++nc) {
        const float* src = gy.v.data() + static_cast<std::size_t>(nc) * h2 * w2;
        float* dst = gx.v.data() + static_cast<std::size_t>(nc) * (h2 / 2) * (w2 / 2);
        for (int i = 0; i < h2; ++i)
            for (int j = 0; j < w2; ++j) dst[(i / 2) * (w2 / 2) + j / 2] += src[i * w2 + j];
    }
    return gx;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: mismatched shapes");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor y({n, ca + cb, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int item = 0; item < n; ++item) {
        std::copy_n(a.v.data() + static_cast<std::size_t>(item) * ca * plane, ca * plane,
                    y.v.data() + static_cast<std::size_t>(item) * (ca + cb) * plane);
        std::copy_n(b.v.data() + static_cast<std::size_t>(item) * cb * plane, cb * plane,
                    y.v.data() + (static_cast<std::size_t>(item) * (ca + cb) + ca) * plane);
    }
    return y;
}

inline std::pair<Tensor, Tensor> split_channels(const Tensor& y, int ca) {
    const int n = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3);
    Tensor a({n, ca, h, w}), b({n, c - ca, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int item = 0; item < n; ++item) {
        std::copy_n(y.v.data() + static_cast<std::size_t>(item) * c * plane, ca * plane,
                    a.v.data() + static_cast<std::size_t>(item) * ca * plane);
        std::copy_n(y.v.data() + (static_cast<std::size_t>(item) * c + ca) * plane,
                    (c - ca) * plane, b.v.data() + static_cast<std::size_t>(item) * (c - ca) * plane);
    }
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Conv block: conv → SiLU → add projected embedding → conv → SiLU. The
// embedding carries summed time and condition information; projecting it per
// block injects it at every resolution.

struct ConvBlock {
    Conv3x3 conv1;
    Conv3x3 conv2;
    Linear proj;
    SiLU act1, act2;

    ConvBlock(int in_c, int out_c, int emb_dim, const std::string& name)
        : conv1(in_c, out_c, name + ".conv1"),
          conv2(out_c, out_c, name + ".conv2"),
          proj(emb_dim, out_c, name + ".proj") {}

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
        proj.init(rng);
    }

    Tensor forward(const Tensor& x, const Tensor& emb) {
        Tensor h = act1.forward(conv1.forward(x));
        const Tensor e = proj.forward(emb);  // {N, out_c}
        const int n = h.dim(0), c = h.dim(1);
        const std::size_t plane = static_cast<std::size_t>(h.dim(2)) * h.dim(3);
        for (int item = 0; item < n; ++item)
            for (int ch = 0; ch < c; ++ch) {
                const float bias = e.v[static_cast<std::size_t>(item) * c + ch];
                float* p = h.v.data() + (static_cast<std::size_t>(item) * c + ch) * plane;
                for (std::size_t k = 0; k < plane; ++k) p[k] += bias;
            }
        return act2.forward(conv2.forward(h));
    }

    Tensor backward(const Tensor& gy) {
        Tensor gh = conv2.backward(act2.backward(gy));
        // adjoint of the broadcast add: reduce over the spatial plane
        const int n = gh.dim(0), c = gh.dim(1);
        const std::size_t plane = static_cast<std::size_t>(gh.dim(2)) * gh.dim(3);
        Tensor ge({n, c});
        for (int item = 0; item < n; ++item)
            for (int ch = 0; ch < c; ++ch) {
                const float* p = gh.v.data() + (static_cast<std::size_t>(item) * c + ch) * plane;
                float acc = 0.0f;
                for (std::size_t k = 0; k < plane; ++k) acc += p[k];
                ge.v[static_cast<std::size_t>(item) * c + ch] = acc;
            }
        proj.backward(ge);  // embedding inputs carry no upstream parameters
        return conv1.backward(act1.backward(gh));
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&conv1.w);
        out.push_back(&conv1.b);
        out.push_back(&conv2.w);
        out.push_back(&conv2.b);
        out.push_back(&proj.w);
        out.push_back(&proj.b);
    }
};

// ---------------------------------------------------------------------------
// Two-channel U-Net with three resolution levels (s, s/2, s/4) and skip
// connections. The final convolution starts at zero so an untrained network
// predicts zero noise.

struct UNet {
    int base;
    int emb_dim;
    ConvBlock enc1, enc2, mid, dec2, dec1;
    Conv3x3 out_conv;

    // caches for the skip-connection adjoints
    Tensor skip1, skip2;

    UNet(int base_width = 32, int embedding_dim = 256)
        : base(base_width),
          emb_dim(embedding_dim),
          enc1(2, base, embedding_dim, "enc1"),
          enc2(base, 2 * base, embedding_dim, "enc2"),
          mid(2 * base, 2 * base, embedding_dim, "mid"),
          dec2(4 * base, base, embedding_dim, "dec2"),
          dec1(2 * base, base, embedding_dim, "dec1"),
          out_conv(base, 2, "out") {}

    void init(std::uint64_t seed) {
        Rng rng(seed);
        enc1.init(rng);
        enc2.init(rng);
        mid.init(rng);
        dec2.init(rng);
        dec1.init(rng);
        out_conv.init_zero();
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        enc1.collect(out);
        enc2.collect(out);
        mid.collect(out);
        dec2.collect(out);
        dec1.collect(out);
        out.push_back(&out_conv.w);
        out.push_back(&out_conv.b);
        return out;
    }

    void zero_grad() {
        for (Param* p : params()) p->zero_grad();
    }

    Tensor forward(const Tensor& x, const Tensor& emb) {
        if (x.shape.size() != 4 || x.dim(1) != 2)
            throw ShapeError("UNet: expected {N, 2, H, W}");
        if (x.dim(2) % 4 || x.dim(3) % 4)
            throw ShapeError("UNet: spatial size must be divisible by 4");
        skip1 = enc1.forward(x, emb);                       // {N, b, H, W}
        skip2 = enc2.forward(avg_pool2(skip1), emb);        // {N, 2b, H/2, W/2}
        Tensor m = mid.forward(avg_pool2(skip2), emb);      // {N, 2b, H/4, W/4}
        Tensor d2 = dec2.forward(concat_channels(upsample2(m), skip2), emb);
        Tensor d1 = dec1.forward(concat_channels(upsample2(d2), skip1), emb);
        return out_conv.forward(d1);
    }

    Tensor backward(const Tensor& gy) {
        Tensor gd1 = out_conv.backward(gy);
        Tensor gcat1 = dec1.backward(gd1);
        auto [gup2, gskip1a] = split_channels(gcat1, base);
        Tensor gd2 = upsample2_backward(gup2);
        Tensor gcat2 = dec2.backward(gd2);
        auto [gupm, gskip2a] = split_channels(gcat2, 2 * base);
        Tensor gm = upsample2_backward(gupm);
        Tensor gskip2b = avg_pool2_backward(mid.backward(gm));
        for (std::size_t k = 0; k < gskip2a.v.size(); ++k) gskip2a.v[k] += gskip2b.v[k];
        Tensor gskip1b = avg_pool2_backward(enc2.backward(gskip2a));
        for (std::size_t k = 0; k < gskip1a.v.size(); ++k) gskip1a.v[k] += gskip1b.v[k];
        return enc1.backward(gskip1a);
    }
};

// ---------------------------------------------------------------------------
// Adam with fixed hyperparameters; state is kept positionally aligned with
// the parameter list.

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<std::vector<float>> m, v;

    void step(const std::vector<Param*>& params) {
        if (m.empty()) {
            for (Param* p : params) {
                m.emplace_back(p->w.size(), 0.0f);
                v.emplace_back(p->w.size(), 0.0f);
            }
        }
        if (m.size() != params.size()) throw ShapeError("Adam: parameter list changed");
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param& p = *params[i];
            for (std::size_t k = 0; k < p.w.size(); ++k) {
                const double g = p.g.v[k];
                const double mk = beta1 * m[i][k] + (1.0 - beta1) * g;
                const double vk = beta2 * v[i][k] + (1.0 - beta2) * g * g;
                m[i][k] = static_cast<float>(mk);
                v[i][k] = static_cast<float>(vk);
                p.w.v[k] -= static_cast<float>(lr * (mk / c1) / (std::sqrt(vk / c2) + eps));
            }
        }
    }
};

}  // namespace micrograin::nn
