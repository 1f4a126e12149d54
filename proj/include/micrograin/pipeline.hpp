// End-to-end orchestration: dataset generation, model training, conditional
// sampling, temperature decoding, re-homogenization of generated rasters,
// correlation reporting, nearest-neighbor novelty checks, and the inverse
// (E, nu) -> Tc demonstration.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "micrograin/config.hpp"
#include "micrograin/dataset.hpp"
#include "micrograin/diffusion.hpp"
#include "micrograin/homogenization.hpp"
#include "micrograin/phase_field.hpp"

namespace micrograin::pipeline {

// ---------------------------------------------------------------------------
// Isotropic stiffness triple from engineering constants; the inverse of
// homogenization::effective_constants on isotropic matrices.

inline std::array<double, 3> dmat_from_constants(double e, double nu) {
    if (!(e > 0.0)) throw ConfigError("dmat_from_constants: Young's modulus must be positive");
    if (!(nu >= 0.0)) throw ConfigError("dmat_from_constants: Poisson ratio must be non-negative");
    if (nu >= 0.5 - 1e-9)
        throw PoissonLimit("dmat_from_constants: Poisson ratio too close to 0.5");
    const double mu = e / (2.0 * (1.0 + nu));
    const double lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    return {lambda + 2.0 * mu, lambda + 2.0 * mu, mu};
}

// ---------------------------------------------------------------------------
// Image-channel views.

inline Field2D channel_field(const std::vector<float>& image, int ch, int rows, int cols) {
    if (image.size() != static_cast<std::size_t>(2) * rows * cols)
        throw ShapeError("channel_field: image size does not match shape");
    Field2D f(rows, cols);
    const std::size_t off = static_cast<std::size_t>(ch) * rows * cols;
    for (std::size_t k = 0; k < f.v.size(); ++k) f.v[k] = image[off + k];
    return f;
}

inline Microstructure threshold_channel(const std::vector<float>& image, int rows, int cols,
                                        double tc, std::uint64_t seed) {
    return Microstructure::from_phi(channel_field(image, 0, rows, cols), tc, seed);
}

// ---------------------------------------------------------------------------
// Dataset generation. The raster is simulated at cfg.grid; grids divisible
// by five are mean-pooled 5x down (e.g. 320 -> 64) before imaging, and
// everything downstream (stiffness label included) uses the imaged raster.

inline dataset::TrainingSample generate_base_sample(const RunConfig& cfg, double tc,
                                                    std::uint64_t seed) {
    phase_field::NucleationParams nuc = cfg.nucleation;
    nuc.rng_seed = seed;
    Microstructure m = phase_field::run(tc, cfg.grid, cfg.grid, cfg.sim_steps, cfg.phase, nuc);
    if (cfg.grid % 5 == 0) m = dataset::compress(m);
    const auto res = homogenization::homogenize(m, cfg.materials);
    return dataset::make_sample(m, dataset::make_ippt(tc, m.rows, m.cols),
                                {res.d.d1111, res.d.d2222, res.d.d1212});
}

inline dataset::Manifest gen_dataset(const RunConfig& cfg, const std::string& out_dir,
                                     std::ostream* log = nullptr) {
    cfg.validate();
    std::vector<dataset::TrainingSample> base;
    base.reserve(cfg.temps.size() * static_cast<std::size_t>(cfg.per_temp));
    for (std::size_t ti = 0; ti < cfg.temps.size(); ++ti) {
        for (int k = 0; k < cfg.per_temp; ++k) {
            const std::uint64_t seed = hash_counters(cfg.seed, ti, static_cast<std::uint64_t>(k));
            base.push_back(generate_base_sample(cfg, cfg.temps[ti], seed));
            if (log)
                *log << "sample " << base.size() << "/" << cfg.temps.size() * cfg.per_temp
                     << " tc=" << cfg.temps[ti] << " D1111=" << base.back().raw_condition[0]
                     << "\n";
        }
    }

    const dataset::Splits splits = dataset::build_splits(base.size(), cfg.split_ratios, cfg.seed);
    std::vector<std::array<double, 3>> train_raws;
    train_raws.reserve(splits.train.size());
    for (std::size_t id : splits.train) train_raws.push_back(base[id].raw_condition);
    const dataset::NormStats stats = dataset::stats_from(train_raws);

    dataset::Manifest man;
    man.rows = base.front().rows;
    man.cols = base.front().cols;
    man.seed = cfg.seed;
    man.temps = cfg.temps;
    man.stats = stats;
    man.provenance["per_temp"] = cfg.per_temp;
    man.provenance["grid"] = cfg.grid;
    man.provenance["sim_steps"] = cfg.sim_steps;

    int clamped_rows = 0;
    auto finalize = [&](std::size_t id) {
        bool clamped = false;
        base[id].condition = dataset::normalize(base[id].raw_condition, stats, &clamped);
        if (clamped) ++clamped_rows;
    };
    namespace fs = std::filesystem;
    for (std::size_t id : splits.train) {
        finalize(id);
        for (const dataset::TrainingSample& v : dataset::augment(base[id]))
            man.train.push_back(dataset::save_sample(out_dir, v));
    }
    for (std::size_t id : splits.val) {
        finalize(id);
        man.val.push_back(dataset::save_sample(out_dir, base[id]));
    }
    for (std::size_t id : splits.test) {
        finalize(id);
        man.test.push_back(dataset::save_sample(out_dir, base[id]));
    }
    man.provenance["clamped_rows"] = clamped_rows;
    write_manifest(out_dir, man);

    if (cfg.write_previews) {
        fs::create_directories(fs::path(out_dir) / "previews");
        for (const dataset::TrainingSample& s : base) {
            const Microstructure m =
                threshold_channel(s.image, s.rows, s.cols, s.tc, s.seed);
            write_microstructure_png(
                (fs::path(out_dir) / "previews" / (s.id() + ".png")).string(), m);
        }
    }
    return man;
}

// ---------------------------------------------------------------------------
// Training loop over a dataset directory.

inline diffusion::TrainState train_model(const RunConfig& cfg, const std::string& data_dir,
                                         std::ostream* log = nullptr) {
    const dataset::Manifest man = dataset::read_manifest(data_dir);
    if (man.train.empty()) throw ConfigError("train_model: dataset has no training split");

    const std::size_t n = man.train.size();
    const std::size_t item = static_cast<std::size_t>(2) * man.rows * man.cols;
    std::vector<float> images(n * item);
    std::vector<std::array<double, 3>> conds(n);
    for (std::size_t i = 0; i < n; ++i) {
        dataset::TrainingSample s = dataset::load_sample(data_dir, man.train[i]);
        if (s.rows != man.rows || s.cols != man.cols)
            throw ShapeError("train_model: sample shape disagrees with manifest");
        diffusion::to_signed(s.image);
        std::copy(s.image.begin(), s.image.end(), images.begin() + static_cast<std::ptrdiff_t>(i * item));
        conds[i] = s.condition;
    }

    diffusion::TrainState state(cfg.base_width, cfg.emb_dim,
                                diffusion::NoiseSchedule::linear(cfg.t_d, cfg.beta_start, cfg.beta_end),
                                cfg.seed);
    state.rows = man.rows;
    state.cols = man.cols;
    state.stats = man.stats;
    state.opt.lr = cfg.lr;

    const int batch = std::min<int>(cfg.batch, static_cast<int>(n));
    nn::Tensor x0({batch, 2, man.rows, man.cols});
    std::vector<std::array<double, 3>> batch_conds(static_cast<std::size_t>(batch));
    const long report_every = std::max<long>(1, cfg.train_steps / 10);
    for (long step = 0; step < cfg.train_steps; ++step) {
        Rng brng(hash_counters(cfg.seed, static_cast<std::uint64_t>(step), 0));
        for (int b = 0; b < batch; ++b) {
            const std::size_t pick = brng.uniform_index(n);
            std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(pick * item), item,
                        x0.v.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b) * item));
            batch_conds[static_cast<std::size_t>(b)] = conds[pick];
        }
        const double loss = diffusion::train_step(state, x0, batch_conds);
        if (log && (step % report_every == 0 || step + 1 == cfg.train_steps))
            *log << "step " << step + 1 << "/" << cfg.train_steps << " loss " << loss << "\n";
    }
    return state;
}

// ---------------------------------------------------------------------------
// Validation: sampled (or supplied) images are thresholded, decoded, and
// re-homogenized; agreement with the requested conditions is summarized by
// per-component Pearson correlations and per-temperature quartiles.

struct ImageRecord {
    std::string id;
    std::array<double, 3> condition{};  // normalized
    std::vector<float> image;           // {2, rows, cols}
};

struct ValidationRow {
    std::string id;
    std::array<double, 3> condition{};
    std::array<double, 3> d_input{};  // MPa
    double decoded_tc = 0.0;
    double decode_confidence = 0.0;
    bool decode_low_confidence = true;
    std::array<double, 3> d_xfem{};
    double e = 0.0;
    double nu = 0.0;
    double crystal_fraction = 0.0;
    bool failed = false;
    std::string error;
};

struct Quartiles {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
    int n = 0;
};

struct ValidationReport {
    std::vector<ValidationRow> rows;
    std::array<std::optional<double>, 3> pearson;  // D1111, D2222, D1212
    std::map<long, std::array<Quartiles, 3>> per_temp;  // keyed by rounded decoded Tc
    int n_failed = 0;
};

inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 3) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
        sxy += (x[k] - mx) * (y[k] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

inline Quartiles quartiles(std::vector<double> xs) {
    Quartiles q;
    q.n = static_cast<int>(xs.size());
    if (xs.empty()) return q;
    std::sort(xs.begin(), xs.end());
    auto at = [&](double p) {
        const double h = p * static_cast<double>(xs.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(h);
        const std::size_t hi = std::min(lo + 1, xs.size() - 1);
        return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
    };
    q.min = xs.front();
    q.q1 = at(0.25);
    q.median = at(0.5);
    q.q3 = at(0.75);
    q.max = xs.back();
    return q;
}

inline ValidationReport validate_records(const std::vector<ImageRecord>& records, int rows,
                                         int cols, const homogenization::PhaseMaterials& mat,
                                         const dataset::NormStats& stats,
                                         const std::vector<double>& candidates) {
    ValidationReport report;
    report.rows.reserve(records.size());
    for (std::size_t k = 0; k < records.size(); ++k) {
        const ImageRecord& rec = records[k];
        ValidationRow row;
        row.id = rec.id;
        row.condition = rec.condition;
        row.d_input = dataset::denormalize(rec.condition, stats);
        try {
            const dataset::DecodeResult dec =
                dataset::decode_ippt(channel_field(rec.image, 1, rows, cols), candidates);
            row.decoded_tc = dec.tc;
            row.decode_confidence = dec.confidence;
            row.decode_low_confidence = dec.low_confidence;

            const Microstructure m = threshold_channel(rec.image, rows, cols, dec.tc, k);
            row.crystal_fraction = m.crystal_fraction;
            const auto res = homogenization::homogenize(m, mat);
            row.d_xfem = {res.d.d1111, res.d.d2222, res.d.d1212};
            const auto [e, nu] = homogenization::effective_constants(res.d);
            row.e = e;
            row.nu = nu;
        } catch (const std::exception& ex) {
            row.failed = true;
            row.error = ex.what();
            ++report.n_failed;
        }
        report.rows.push_back(std::move(row));
    }

    std::array<std::vector<double>, 3> ins, outs;
    std::map<long, std::array<std::vector<double>, 3>> groups;
    for (const ValidationRow& row : report.rows) {
        if (row.failed) continue;
        for (int c = 0; c < 3; ++c) {
            ins[static_cast<std::size_t>(c)].push_back(row.d_input[static_cast<std::size_t>(c)]);
            outs[static_cast<std::size_t>(c)].push_back(row.d_xfem[static_cast<std::size_t>(c)]);
            groups[std::llround(row.decoded_tc)][static_cast<std::size_t>(c)].push_back(
                row.d_xfem[static_cast<std::size_t>(c)]);
        }
    }
    for (int c = 0; c < 3; ++c)
        report.pearson[static_cast<std::size_t>(c)] =
            pearson(ins[static_cast<std::size_t>(c)], outs[static_cast<std::size_t>(c)]);
    for (auto& [tc, comps] : groups) {
        std::array<Quartiles, 3> qs;
        for (int c = 0; c < 3; ++c) qs[static_cast<std::size_t>(c)] = quartiles(comps[static_cast<std::size_t>(c)]);
        report.per_temp[tc] = qs;
    }
    return report;
}

inline ValidationReport validate_model(diffusion::TrainState& state,
                                       const std::vector<std::array<double, 3>>& conditions,
                                       int n_per_condition, std::uint64_t seed,
                                       const homogenization::PhaseMaterials& mat,
                                       const std::vector<double>& candidates,
                                       std::ostream* log = nullptr) {
    std::vector<ImageRecord> records;
    records.reserve(conditions.size() * static_cast<std::size_t>(n_per_condition));
    for (std::size_t ci = 0; ci < conditions.size(); ++ci) {
        for (int k = 0; k < n_per_condition; ++k) {
            ImageRecord rec;
            rec.id = "c" + std::to_string(ci) + "_k" + std::to_string(k);
            rec.condition = conditions[ci];
            rec.image =
                diffusion::p_sample_loop(state, conditions[ci],
                                         hash_counters(seed, ci, static_cast<std::uint64_t>(k)))
                    .v;
            records.push_back(std::move(rec));
            if (log) *log << "sampled " << records.size() << "/"
                          << conditions.size() * static_cast<std::size_t>(n_per_condition) << "\n";
        }
    }
    return validate_records(records, state.rows, state.cols, mat, state.stats, candidates);
}

// ---------------------------------------------------------------------------
// Inverse demonstration: engineering constants in, proposed process
// temperature and achieved constants out.

struct DemoRequest {
    double e_target = 0.0;
    double nu_target = 0.0;
};

struct DemoResult {
    std::array<double, 3> d_target{};
    std::array<double, 3> condition{};
    bool clamped = false;
    double tc_proposed = 0.0;
    double decode_confidence = 0.0;
    bool decode_low_confidence = true;
    std::array<double, 3> d_achieved{};
    double e_achieved = 0.0;
    double nu_achieved = 0.0;
    std::vector<float> image;
    int rows = 0, cols = 0;
    bool failed = false;
    std::string error;
};

inline DemoResult demo(diffusion::TrainState& state, const DemoRequest& req,
                       const homogenization::PhaseMaterials& mat,
                       const std::vector<double>& candidates, std::uint64_t seed) {
    DemoResult out;
    out.d_target = dmat_from_constants(req.e_target, req.nu_target);
    out.condition = dataset::normalize(out.d_target, state.stats, &out.clamped);
    out.rows = state.rows;
    out.cols = state.cols;
    out.image = diffusion::p_sample_loop(state, out.condition, seed).v;
    try {
        const dataset::DecodeResult dec =
            dataset::decode_ippt(channel_field(out.image, 1, state.rows, state.cols), candidates);
        out.tc_proposed = dec.tc;
        out.decode_confidence = dec.confidence;
        out.decode_low_confidence = dec.low_confidence;
        const Microstructure m = threshold_channel(out.image, state.rows, state.cols, dec.tc, seed);
        const auto res = homogenization::homogenize(m, mat);
        out.d_achieved = {res.d.d1111, res.d.d2222, res.d.d1212};
        const auto [e, nu] = homogenization::effective_constants(res.d);
        out.e_achieved = e;
        out.nu_achieved = nu;
    } catch (const std::exception& ex) {
        out.failed = true;
        out.error = ex.what();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Novelty screening: nearest-training-image mean-squared pixel distance per
// generated image.

inline std::vector<double> neighbor_distances(const std::vector<std::vector<float>>& generated,
                                              const std::vector<std::vector<float>>& training) {
    if (training.empty()) throw ConfigError("neighbor_distances: empty training set");
    std::vector<double> out;
    out.reserve(generated.size());
    for (const auto& g : generated) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& t : training) {
            if (t.size() != g.size()) throw ShapeError("neighbor_distances: image size mismatch");
            double acc = 0.0;
            for (std::size_t k = 0; k < g.size(); ++k) {
                const double d = static_cast<double>(g[k]) - static_cast<double>(t[k]);
                acc += d * d;
            }
            best = std::min(best, acc / static_cast<double>(g.size()));
        }
        out.push_back(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Deterministic text output. All floating-point values go through one
// fixed format so identical reports are byte-identical.

inline std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline std::string csv_safe(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

inline void write_validation_csv(const std::string& path, const ValidationReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "id,cond_1,cond_2,cond_3,d_in_1111,d_in_2222,d_in_1212,decoded_tc,confidence,"
           "low_confidence,d_x_1111,d_x_2222,d_x_1212,e,nu,crystal_fraction,failed,error\n";
    for (const ValidationRow& r : report.rows) {
        out << csv_safe(r.id);
        for (double v : r.condition) out << "," << fmt_g(v);
        for (double v : r.d_input) out << "," << fmt_g(v);
        out << "," << fmt_g(r.decoded_tc) << "," << fmt_g(r.decode_confidence) << ","
            << (r.decode_low_confidence ? 1 : 0);
        for (double v : r.d_xfem) out << "," << fmt_g(v);
        out << "," << fmt_g(r.e) << "," << fmt_g(r.nu) << "," << fmt_g(r.crystal_fraction) << ","
            << (r.failed ? 1 : 0) << "," << csv_safe(r.error) << "\n";
    }
    if (!out) throw IoError("short write: " + path);
}

inline json report_summary(const ValidationReport& report) {
    json j;
    j["n_rows"] = report.rows.size();
    j["n_failed"] = report.n_failed;
    const char* names[3] = {"d1111", "d2222", "d1212"};
    for (int c = 0; c < 3; ++c) {
        const auto& p = report.pearson[static_cast<std::size_t>(c)];
        j["pearson"][names[c]] = p ? json(*p) : json(nullptr);
    }
    for (const auto& [tc, comps] : report.per_temp) {
        json g;
        for (int c = 0; c < 3; ++c) {
            const Quartiles& q = comps[static_cast<std::size_t>(c)];
            g[names[c]] = {{"min", q.min}, {"q1", q.q1},   {"median", q.median},
                           {"q3", q.q3},   {"max", q.max}, {"n", q.n}};
        }
        j["per_temp"][std::to_string(tc)] = g;
    }
    return j;
}

}  // namespace micrograin::pipeline
