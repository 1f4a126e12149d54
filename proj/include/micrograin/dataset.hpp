// Training-data construction: raster compression, stripe-coded temperature
// images (encode + matched-filter decode), symmetry augmentation, condition
// normalization, and on-disk dataset layout.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "micrograin/errors.hpp"
#include "micrograin/field.hpp"
#include "micrograin/io.hpp"
#include "micrograin/rng.hpp"

namespace micrograin::dataset {

// ---------------------------------------------------------------------------
// Compression: non-overlapping 5x5 mean pooling followed by binarization at
// 0.5 (ties count as crystal).

inline Field2D compress(const Field2D& phi) {
    if (phi.rows % 5 != 0 || phi.cols % 5 != 0)
        throw ShapeError("compress: dimensions must be divisible by 5");
    Field2D out(phi.rows / 5, phi.cols / 5);
    for (int i = 0; i < out.rows; ++i) {
        for (int j = 0; j < out.cols; ++j) {
            double sum = 0.0;
            for (int di = 0; di < 5; ++di)
                for (int dj = 0; dj < 5; ++dj) sum += phi.at(5 * i + di, 5 * j + dj);
            out.at(i, j) = sum / 25.0 >= 0.5 ? 1.0 : 0.0;
        }
    }
    return out;
}

inline Microstructure compress(const Microstructure& m) {
    return Microstructure::from_phi(compress(m.to_phi()), m.tc, m.seed);
}

// ---------------------------------------------------------------------------
// Temperature stripe images: a horizontal sinusoid whose frequency encodes
// the process temperature, f = 2 / (Tc - 140) cycles per pixel column.

struct IpptImage {
    Field2D pixels;
    double tc = 0.0;
};

inline double stripe_frequency(double tc) {
    if (!(tc > 140.0))
        throw FrequencyDomainError("stripe_frequency: need Tc > 140, got " + std::to_string(tc));
    return 2.0 / (tc - 140.0);
}

inline IpptImage make_ippt(double tc, int rows = 64, int cols = 64) {
    const double f = stripe_frequency(tc);
    IpptImage img{Field2D(rows, cols), tc};
    for (int j = 0; j < cols; ++j) {
        const double p = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * f * j);
        for (int i = 0; i < rows; ++i) img.pixels.at(i, j) = p;
    }
    return img;
}

struct DecodeResult {
    double tc = 0.0;
    double confidence = 0.0;  // normalized spectral correlation in [0, 1]
    bool low_confidence = true;
};

// Matched-filter decode: row-average the image, then score each candidate
// temperature by the fraction of signal energy captured by the in-phase and
// quadrature sinusoids at its frequency. Quadrature makes the score blind to
// horizontal mirroring, which the augmentation group introduces.
inline DecodeResult decode_ippt(const Field2D& img, const std::vector<double>& candidates) {
    if (candidates.empty()) throw ConfigError("decode_ippt: empty candidate list");
    const int w = img.cols;

    std::vector<double> sig(w, 0.0);
    for (int i = 0; i < img.rows; ++i)
        for (int j = 0; j < w; ++j) sig[j] += img.at(i, j);
    double mean = 0.0;
    for (double& s : sig) {
        s /= img.rows;
        mean += s;
    }
    mean /= w;
    double norm2 = 0.0;
    for (double& s : sig) {
        s -= mean;
        norm2 += s * s;
    }

    DecodeResult best;
    best.tc = candidates.front();
    if (norm2 < 1e-24) return best;  // constant image: nothing to correlate

    for (double tc : candidates) {
        const double f = stripe_frequency(tc);
        std::vector<double> ts(w), tco(w);
        double ms = 0.0, mc = 0.0;
        for (int j = 0; j < w; ++j) {
            ts[j] = std::sin(2.0 * std::numbers::pi * f * j);
            tco[j] = std::cos(2.0 * std::numbers::pi * f * j);
            ms += ts[j];
            mc += tco[j];
        }
        ms /= w;
        mc /= w;
        double ss = 0.0;
        for (int j = 0; j < w; ++j) {
            ts[j] -= ms;
            tco[j] -= mc;
            ss += ts[j] * ts[j];
        }
        if (ss < 1e-24) continue;
        const double sn = std::sqrt(ss);
        double proj = 0.0;
        for (int j = 0; j < w; ++j) {
            ts[j] /= sn;
            proj += tco[j] * ts[j];
        }
        double cc = 0.0;
        for (int j = 0; j < w; ++j) {
            tco[j] -= proj * ts[j];
            cc += tco[j] * tco[j];
        }
        double rs = 0.0, rc = 0.0;
        for (int j = 0; j < w; ++j) rs += sig[j] * ts[j];
        if (cc > 1e-24) {
            const double cn = std::sqrt(cc);
            for (int j = 0; j < w; ++j) rc += sig[j] * tco[j] / cn;
        }
        const double score = std::sqrt((rs * rs + rc * rc) / norm2);
        if (score > best.confidence) {
            best.confidence = score;
            best.tc = tc;
        }
    }
    best.low_confidence = best.confidence < 0.5;
    return best;
}

// ---------------------------------------------------------------------------
// Condition normalization. Statistics come from the training split only and
// travel with the dataset so sampling can undo them verbatim.

struct NormStats {
    std::array<double, 3> min{0.0, 0.0, 0.0};
    std::array<double, 3> max{1.0, 1.0, 1.0};

    void validate() const {
        for (int k = 0; k < 3; ++k)
            if (!(max[k] > min[k]))
                throw DegenerateRange("NormStats: max <= min in component " + std::to_string(k));
    }
};

inline NormStats stats_from(const std::vector<std::array<double, 3>>& raws) {
    if (raws.empty()) throw ConfigError("stats_from: no condition rows");
    NormStats s;
    s.min = s.max = raws.front();
    for (const auto& r : raws)
        for (int k = 0; k < 3; ++k) {
            s.min[k] = std::min(s.min[k], r[k]);
            s.max[k] = std::max(s.max[k], r[k]);
        }
    s.validate();
    return s;
}

// Values outside the training range are clamped; `clamped` reports it.
inline std::array<double, 3> normalize(const std::array<double, 3>& raw, const NormStats& s,
                                       bool* clamped = nullptr) {
    s.validate();
    if (clamped) *clamped = false;
    std::array<double, 3> out{};
    for (int k = 0; k < 3; ++k) {
        double v = (raw[k] - s.min[k]) / (s.max[k] - s.min[k]);
        if (v < 0.0 || v > 1.0) {
            v = std::clamp(v, 0.0, 1.0);
            if (clamped) *clamped = true;
        }
        out[k] = v;
    }
    return out;
}

inline std::array<double, 3> denormalize(const std::array<double, 3>& unit, const NormStats& s) {
    s.validate();
    std::array<double, 3> out{};
    for (int k = 0; k < 3; ++k) out[k] = s.min[k] + unit[k] * (s.max[k] - s.min[k]);
    return out;
}

// ---------------------------------------------------------------------------
// Training samples: 2-channel images (0 = binary microstructure, 1 = stripe
// pattern), stored channel-major.

struct TrainingSample {
    int rows = 64;
    int cols = 64;
    std::vector<float> image;  // shape {2, rows, cols}
    std::array<double, 3> raw_condition{};  // D1111, D2222, D1212 in MPa
    std::array<double, 3> condition{};      // normalized to [0, 1]
    double tc = 0.0;
    std::uint64_t seed = 0;
    std::string augment = "identity";

    std::string id() const {
        return "t" + std::to_string(static_cast<long>(std::llround(tc))) + "_s" +
               std::to_string(seed) + "_" + augment;
    }

    float& px(int ch, int i, int j) { return image[(static_cast<std::size_t>(ch) * rows + i) * cols + j]; }
    float px(int ch, int i, int j) const {
        return image[(static_cast<std::size_t>(ch) * rows + i) * cols + j];
    }
};

inline TrainingSample make_sample(const Microstructure& m, const IpptImage& ippt,
                                  const std::array<double, 3>& raw) {
    if (m.rows != ippt.pixels.rows || m.cols != ippt.pixels.cols)
        throw ShapeError("make_sample: channel shapes differ");
    TrainingSample s;
    s.rows = m.rows;
    s.cols = m.cols;
    s.image.resize(static_cast<std::size_t>(2) * m.rows * m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) {
            s.px(0, i, j) = static_cast<float>(m.at(i, j));
            s.px(1, i, j) = static_cast<float>(ippt.pixels.at(i, j));
        }
    s.raw_condition = raw;
    s.tc = m.tc;
    s.seed = m.seed;
    return s;
}

namespace detail {

enum class Sym { identity, rot180, flip, flip_rot180 };

inline TrainingSample apply_sym(const TrainingSample& s, Sym op, const char* tag) {
    TrainingSample out = s;
    out.augment = tag;
    for (int ch = 0; ch < 2; ++ch)
        for (int i = 0; i < s.rows; ++i)
            for (int j = 0; j < s.cols; ++j) {
                int si = i, sj = j;
                if (op == Sym::rot180) {
                    si = s.rows - 1 - i;
                    sj = s.cols - 1 - j;
                } else if (op == Sym::flip) {
                    si = s.rows - 1 - i;
                } else if (op == Sym::flip_rot180) {
                    sj = s.cols - 1 - j;
                }
                out.px(ch, i, j) = s.px(ch, si, sj);
            }
    return out;
}

}  // namespace detail

// The four symmetries that leave D1111, D2222, D1212 invariant: identity,
// half-turn, mirror across the horizontal axis, and their composition (a
// mirror across the vertical axis). Conditions are copied unchanged.
inline std::array<TrainingSample, 4> augment(const TrainingSample& s) {
    using detail::Sym;
    return {detail::apply_sym(s, Sym::identity, "identity"),
            detail::apply_sym(s, Sym::rot180, "rot180"),
            detail::apply_sym(s, Sym::flip, "flip"),
            detail::apply_sym(s, Sym::flip_rot180, "flip_rot180")};
}

// ---------------------------------------------------------------------------
// Split assignment: one seeded shuffle of base-sample indices, sliced by
// ratio. Augmented variants are derived after splitting so they can never
// straddle a split boundary.

struct Splits {
    std::vector<std::size_t> train, val, test;
};

inline Splits build_splits(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("build_splits: ratios must sum to 1");
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    Rng rng(seed);
    rng.shuffle(ids);

    const std::size_t n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n))));
    const std::size_t n_val = std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));

    Splits s;
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    return s;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/manifest.json plus one float32 tensor per sample in
// <dir>/samples/<id>.mgt (shape {2, rows, cols}).

struct SampleMeta {
    std::string id;
    std::string file;
    double tc = 0.0;
    std::uint64_t seed = 0;
    std::string augment = "identity";
    std::array<double, 3> raw_condition{};
    std::array<double, 3> condition{};
};

struct Manifest {
    int rows = 64;
    int cols = 64;
    std::uint64_t seed = 0;
    std::vector<double> temps;
    NormStats stats;
    json provenance = json::object();
    std::vector<SampleMeta> train, val, test;
};

namespace detail {

inline json meta_to_json(const SampleMeta& m) {
    json j;
    j["id"] = m.id;
    j["file"] = m.file;
    j["tc"] = m.tc;
    j["seed"] = m.seed;
    j["augment"] = m.augment;
    j["raw_condition"] = m.raw_condition;
    j["condition"] = m.condition;
    return j;
}

inline SampleMeta meta_from_json(const json& j) {
    SampleMeta m;
    m.id = j.at("id").get<std::string>();
    m.file = j.at("file").get<std::string>();
    m.tc = j.at("tc").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.augment = j.at("augment").get<std::string>();
    m.raw_condition = j.at("raw_condition").get<std::array<double, 3>>();
    m.condition = j.at("condition").get<std::array<double, 3>>();
    return m;
}

inline json split_to_json(const std::vector<SampleMeta>& split) {
    json arr = json::array();
    for (const auto& m : split) arr.push_back(meta_to_json(m));
    return arr;
}

inline std::vector<SampleMeta> split_from_json(const json& arr) {
    std::vector<SampleMeta> out;
    out.reserve(arr.size());
    for (const auto& j : arr) out.push_back(meta_from_json(j));
    return out;
}

}  // namespace detail

inline SampleMeta save_sample(const std::string& dir, const TrainingSample& s) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "samples");
    SampleMeta meta;
    meta.id = s.id();
    meta.file = "samples/" + meta.id + ".mgt";
    meta.tc = s.tc;
    meta.seed = s.seed;
    meta.augment = s.augment;
    meta.raw_condition = s.raw_condition;
    meta.condition = s.condition;

    TensorFile t;
    t.shape = {2, static_cast<std::uint32_t>(s.rows), static_cast<std::uint32_t>(s.cols)};
    t.data = s.image;
    write_tensor_f32((fs::path(dir) / meta.file).string(), t);
    return meta;
}

inline TrainingSample load_sample(const std::string& dir, const SampleMeta& meta) {
    namespace fs = std::filesystem;
    TensorFile t = read_tensor_f32((fs::path(dir) / meta.file).string());
    if (t.shape.size() != 3 || t.shape[0] != 2)
        throw ShapeError("load_sample: expected a {2, rows, cols} tensor in " + meta.file);
    TrainingSample s;
    s.rows = static_cast<int>(t.shape[1]);
    s.cols = static_cast<int>(t.shape[2]);
    s.image = std::move(t.data);
    s.raw_condition = meta.raw_condition;
    s.condition = meta.condition;
    s.tc = meta.tc;
    s.seed = meta.seed;
    s.augment = meta.augment;
    return s;
}

inline void write_manifest(const std::string& dir, const Manifest& m) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["seed"] = m.seed;
    j["temps"] = m.temps;
    j["norm_stats"] = {{"min", m.stats.min}, {"max", m.stats.max}};
    j["provenance"] = m.provenance;
    j["counts"] = {{"train", m.train.size()}, {"val", m.val.size()}, {"test", m.test.size()}};
    j["splits"] = {{"train", detail::split_to_json(m.train)},
                   {"val", detail::split_to_json(m.val)},
                   {"test", detail::split_to_json(m.test)}};
    write_json((fs::path(dir) / "manifest.json").string(), j);
}

inline Manifest read_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    const json j = read_json((fs::path(dir) / "manifest.json").string());
    Manifest m;
    m.rows = j.at("rows").get<int>();
    m.cols = j.at("cols").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.temps = j.at("temps").get<std::vector<double>>();
    m.stats.min = j.at("norm_stats").at("min").get<std::array<double, 3>>();
    m.stats.max = j.at("norm_stats").at("max").get<std::array<double, 3>>();
    m.stats.validate();
    m.provenance = j.at("provenance");
    m.train = detail::split_from_json(j.at("splits").at("train"));
    m.val = detail::split_from_json(j.at("splits").at("val"));
    m.test = detail::split_from_json(j.at("splits").at("test"));
    return m;
}

}  // namespace micrograin::dataset
