// Conditional denoising diffusion over 2-channel images: noise schedule,
// closed-form forward noising, epsilon-prediction training, ancestral
// sampling, time/condition embeddings, and checkpoint persistence.
#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "micrograin/dataset.hpp"
#include "micrograin/errors.hpp"
#include "micrograin/io.hpp"
#include "micrograin/nn.hpp"
#include "micrograin/rng.hpp"

namespace micrograin::diffusion {

// ---------------------------------------------------------------------------
// Variance schedule. Index convention: betas[t - 1] holds beta_t for
// t = 1..t_d, matching the 1-based chain notation.

struct NoiseSchedule {
    int t_d = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    static NoiseSchedule linear(int t_d, double beta_start = 1e-4, double beta_end = 0.02) {
        if (t_d < 1) throw ConfigError("NoiseSchedule: need at least one step");
        NoiseSchedule s;
        s.t_d = t_d;
        s.betas.resize(static_cast<std::size_t>(t_d));
        for (int t = 0; t < t_d; ++t)
            s.betas[static_cast<std::size_t>(t)] =
                t_d == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (t_d - 1.0);
        s.finalize();
        s.validate();
        return s;
    }

    static NoiseSchedule from_betas(std::vector<double> b) {
        NoiseSchedule s;
        s.t_d = static_cast<int>(b.size());
        s.betas = std::move(b);
        s.finalize();
        s.validate();
        return s;
    }

    void finalize() {
        alphas.resize(betas.size());
        alpha_bars.resize(betas.size());
        double bar = 1.0;
        for (std::size_t t = 0; t < betas.size(); ++t) {
            alphas[t] = 1.0 - betas[t];
            bar *= alphas[t];
            alpha_bars[t] = bar;
        }
    }

    void validate() const {
        if (t_d < 1 || betas.size() != static_cast<std::size_t>(t_d))
            throw ConfigError("NoiseSchedule: inconsistent length");
        for (std::size_t t = 0; t < betas.size(); ++t) {
            if (!(betas[t] > 0.0 && betas[t] < 1.0))
                throw ConfigError("NoiseSchedule: beta outside (0, 1)");
            if (t > 0 && betas[t] < betas[t - 1])
                throw ConfigError("NoiseSchedule: betas must be non-decreasing");
            if (t > 0 && !(alpha_bars[t] < alpha_bars[t - 1]))
                throw ConfigError("NoiseSchedule: alpha_bar must decrease");
        }
        if (!(alpha_bars.back() < 0.01))
            throw ConfigError("NoiseSchedule: terminal alpha_bar must be below 0.01");
    }

    double beta(int t) const { return betas[static_cast<std::size_t>(t - 1)]; }
    double alpha(int t) const { return alphas[static_cast<std::size_t>(t - 1)]; }
    double alpha_bar(int t) const { return alpha_bars[static_cast<std::size_t>(t - 1)]; }
};

// ---------------------------------------------------------------------------
// Forward (noising) process.

// Closed-form marginal: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline nn::Tensor q_sample(const nn::Tensor& x0, int t, const nn::Tensor& noise,
                           const NoiseSchedule& s) {
    if (t < 1 || t > s.t_d) throw ConfigError("q_sample: timestep out of range");
    if (x0.v.size() != noise.v.size()) throw ShapeError("q_sample: shape mismatch");
    const float a = static_cast<float>(std::sqrt(s.alpha_bar(t)));
    const float b = static_cast<float>(std::sqrt(1.0 - s.alpha_bar(t)));
    nn::Tensor xt = x0;
    for (std::size_t k = 0; k < xt.v.size(); ++k) xt.v[k] = a * x0.v[k] + b * noise.v[k];
    return xt;
}

// Single chain step: x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps.
inline nn::Tensor q_step(const nn::Tensor& x_prev, int t, const nn::Tensor& noise,
                         const NoiseSchedule& s) {
    if (t < 1 || t > s.t_d) throw ConfigError("q_step: timestep out of range");
    const float a = static_cast<float>(std::sqrt(1.0 - s.beta(t)));
    const float b = static_cast<float>(std::sqrt(s.beta(t)));
    nn::Tensor xt = x_prev;
    for (std::size_t k = 0; k < xt.v.size(); ++k) xt.v[k] = a * x_prev.v[k] + b * noise.v[k];
    return xt;
}

// ---------------------------------------------------------------------------
// Embeddings. Time uses the usual sinusoidal positional encoding; the three
// condition values are tiled across the vector with the remainder zeroed.
// The two are summed before injection into the network.

inline std::vector<float> embed_time(int t, int dim = 256) {
    if (dim % 2) throw ConfigError("embed_time: dimension must be even");
    std::vector<float> out(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / (half - 1.0));
        out[static_cast<std::size_t>(2 * i)] = static_cast<float>(std::sin(t * freq));
        out[static_cast<std::size_t>(2 * i + 1)] = static_cast<float>(std::cos(t * freq));
    }
    return out;
}

inline std::vector<float> embed_condition(const std::array<double, 3>& c, int dim = 256) {
    std::vector<float> out(static_cast<std::size_t>(dim), 0.0f);
    const int filled = 3 * (dim / 3);
    for (int k = 0; k < filled; ++k) out[static_cast<std::size_t>(k)] = static_cast<float>(c[static_cast<std::size_t>(k % 3)]);
    return out;
}

// One embedding row per batch item: embed_time(t_i) + embed_condition(c_i).
inline nn::Tensor make_embedding(const std::vector<int>& ts,
                                 const std::vector<std::array<double, 3>>& conds, int dim) {
    if (ts.size() != conds.size()) throw ShapeError("make_embedding: batch size mismatch");
    nn::Tensor emb({static_cast<int>(ts.size()), dim});
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const auto te = embed_time(ts[i], dim);
        const auto ce = embed_condition(conds[i], dim);
        for (int k = 0; k < dim; ++k)
            emb.v[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)] =
                te[static_cast<std::size_t>(k)] + ce[static_cast<std::size_t>(k)];
    }
    return emb;
}

// Affine maps between image space [0, 1] and diffusion space [-1, 1].
inline void to_signed(std::vector<float>& v) {
    for (float& x : v) x = 2.0f * x - 1.0f;
}
inline void from_signed(std::vector<float>& v) {
    for (float& x : v) x = std::clamp(0.5f * (x + 1.0f), 0.0f, 1.0f);
}

// ---------------------------------------------------------------------------
// Training state.

struct TrainState {
    nn::UNet net;
    nn::Adam opt;
    NoiseSchedule sched;
    dataset::NormStats stats;
    int rows = 64;
    int cols = 64;
    long step_count = 0;
    std::vector<double> loss_history;
    std::uint64_t rng_seed = 0;

    TrainState(int base_width, int emb_dim, NoiseSchedule s, std::uint64_t seed)
        : net(base_width, emb_dim), sched(std::move(s)), rng_seed(seed) {
        net.init(seed);
    }
};

// One optimizer update on a batch already mapped to [-1, 1]. Timesteps and
// noise are drawn from a counter-based stream keyed on (rng_seed, step), so
// resuming from a checkpoint replays the identical trajectory.
inline double train_step(TrainState& state, const nn::Tensor& x0,
                         const std::vector<std::array<double, 3>>& conds) {
    const int n = x0.dim(0);
    if (static_cast<std::size_t>(n) != conds.size())
        throw ShapeError("train_step: batch size mismatch");

    Rng rng(hash_counters(state.rng_seed, static_cast<std::uint64_t>(state.step_count), 1));
    std::vector<int> ts(static_cast<std::size_t>(n));
    for (int& t : ts) t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(state.sched.t_d)));

    nn::Tensor noise(x0.shape);
    for (float& v : noise.v) v = rng.normal_f();

    const std::size_t item = x0.v.size() / static_cast<std::size_t>(n);
    nn::Tensor xt = x0;
    for (int i = 0; i < n; ++i) {
        const float a = static_cast<float>(std::sqrt(state.sched.alpha_bar(ts[static_cast<std::size_t>(i)])));
        const float b = static_cast<float>(std::sqrt(1.0 - state.sched.alpha_bar(ts[static_cast<std::size_t>(i)])));
        for (std::size_t k = i * item; k < (static_cast<std::size_t>(i) + 1) * item; ++k)
            xt.v[k] = a * x0.v[k] + b * noise.v[k];
    }

    const nn::Tensor emb = make_embedding(ts, conds, state.net.emb_dim);
    nn::Tensor eps_hat = state.net.forward(xt, emb);

    double loss = 0.0;
    nn::Tensor grad(eps_hat.shape);
    const double scale = 1.0 / static_cast<double>(eps_hat.v.size());
    for (std::size_t k = 0; k < eps_hat.v.size(); ++k) {
        const double d = static_cast<double>(eps_hat.v[k]) - static_cast<double>(noise.v[k]);
        loss += d * d * scale;
        grad.v[k] = static_cast<float>(2.0 * d * scale);
    }
    if (!std::isfinite(loss))
        throw NonFiniteLoss("train_step: loss diverged at step " + std::to_string(state.step_count));

    state.net.zero_grad();
    state.net.backward(grad);
    state.opt.step(state.net.params());
    state.loss_history.push_back(loss);
    ++state.step_count;
    return loss;
}

// ---------------------------------------------------------------------------
// Reverse (sampling) process. The denoiser is a callable
// (x {1,2,H,W}, t, cond) -> eps_hat so tests can swap in analytic stubs.

template <class Denoiser>
nn::Tensor p_sample_raw(Denoiser&& eps, const NoiseSchedule& s, int rows, int cols,
                        const std::array<double, 3>& cond, Rng& rng) {
    nn::Tensor x({1, 2, rows, cols});
    for (float& v : x.v) v = rng.normal_f();
    for (int t = s.t_d; t >= 1; --t) {
        const nn::Tensor eps_hat = eps(x, t, cond);
        if (eps_hat.v.size() != x.v.size()) throw ShapeError("p_sample_raw: denoiser shape");
        const float inv_sqrt_a = static_cast<float>(1.0 / std::sqrt(s.alpha(t)));
        const float coef = static_cast<float>(s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t)));
        const float sigma = static_cast<float>(std::sqrt(s.beta(t)));
        for (std::size_t k = 0; k < x.v.size(); ++k) {
            float v = inv_sqrt_a * (x.v[k] - coef * eps_hat.v[k]);
            if (t > 1) v += sigma * rng.normal_f();
            x.v[k] = v;
        }
    }
    return x;
}

// Full sampling loop with the trained network; the result is mapped back to
// image space [0, 1].
inline nn::Tensor p_sample_loop(TrainState& state, const std::array<double, 3>& cond,
                                std::uint64_t seed) {
    Rng rng(hash_counters(seed, 2));
    auto eps = [&](const nn::Tensor& x, int t, const std::array<double, 3>& c) {
        return state.net.forward(x, make_embedding({t}, {c}, state.net.emb_dim));
    };
    nn::Tensor x = p_sample_raw(eps, state.sched, state.rows, state.cols, cond, rng);
    from_signed(x.v);
    return x;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, a JSON metadata record (schedule, embedding
// layout, normalization statistics, loss history), then raw little-endian
// float32 payloads for every parameter followed by the Adam moments.

inline void save_checkpoint(const std::string& path, TrainState& state) {
    json meta;
    meta["version"] = 1;
    meta["base_width"] = state.net.base;
    meta["emb_dim"] = state.net.emb_dim;
    meta["rows"] = state.rows;
    meta["cols"] = state.cols;
    meta["betas"] = state.sched.betas;
    meta["step_count"] = state.step_count;
    meta["loss_history"] = state.loss_history;
    meta["rng_seed"] = state.rng_seed;
    meta["norm_stats"] = {{"min", state.stats.min}, {"max", state.stats.max}};
    meta["adam"] = {{"t", state.opt.t}, {"lr", state.opt.lr}, {"present", !state.opt.m.empty()}};
    json plist = json::array();
    for (nn::Param* p : state.net.params())
        plist.push_back({{"name", p->name}, {"shape", p->w.shape}});
    meta["params"] = plist;

    const std::string blob = meta.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const char magic[4] = {'M', 'G', 'C', 'K'};
    out.write(magic, 4);
    const std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint32_t len = static_cast<std::uint32_t>(blob.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    for (nn::Param* p : state.net.params())
        out.write(reinterpret_cast<const char*>(p->w.v.data()),
                  static_cast<std::streamsize>(4 * p->w.v.size()));
    if (!state.opt.m.empty()) {
        for (const auto& m : state.opt.m)
            out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(4 * m.size()));
        for (const auto& v : state.opt.v)
            out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(4 * v.size()));
    }
    if (!out) throw IoError("short write: " + path);
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MGCK", 4) != 0) throw IoError("bad checkpoint magic: " + path);
    std::uint32_t version = 0, len = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || version != 1) throw IoError("unsupported checkpoint version: " + path);
    std::string blob(len, '\0');
    in.read(blob.data(), len);
    if (!in) throw IoError("truncated checkpoint metadata: " + path);
    const json meta = json::parse(blob);

    NoiseSchedule sched = NoiseSchedule::from_betas(meta.at("betas").get<std::vector<double>>());
    TrainState state(meta.at("base_width").get<int>(), meta.at("emb_dim").get<int>(),
                     std::move(sched), meta.at("rng_seed").get<std::uint64_t>());
    state.rows = meta.at("rows").get<int>();
    state.cols = meta.at("cols").get<int>();
    state.step_count = meta.at("step_count").get<long>();
    state.loss_history = meta.at("loss_history").get<std::vector<double>>();
    state.stats.min = meta.at("norm_stats").at("min").get<std::array<double, 3>>();
    state.stats.max = meta.at("norm_stats").at("max").get<std::array<double, 3>>();

    const json& plist = meta.at("params");
    const std::vector<nn::Param*> params = state.net.params();
    if (plist.size() != params.size()) throw IoError("checkpoint parameter list mismatch: " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (plist[i].at("shape").get<std::vector<int>>() != params[i]->w.shape)
            throw IoError("checkpoint shape mismatch for " + params[i]->name);
        in.read(reinterpret_cast<char*>(params[i]->w.v.data()),
                static_cast<std::streamsize>(4 * params[i]->w.v.size()));
    }
    state.opt.t = meta.at("adam").at("t").get<long>();
    state.opt.lr = meta.at("adam").at("lr").get<double>();
    if (meta.at("adam").at("present").get<bool>()) {
        for (nn::Param* p : params) state.opt.m.emplace_back(p->w.v.size(), 0.0f);
        for (nn::Param* p : params) state.opt.v.emplace_back(p->w.v.size(), 0.0f);
        for (auto& m : state.opt.m)
            in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(4 * m.size()));
        for (auto& v : state.opt.v)
            in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(4 * v.size()));
    }
    if (!in) throw IoError("truncated checkpoint payload: " + path);
    return state;
}

}  // namespace micrograin::diffusion
