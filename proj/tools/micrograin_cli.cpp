// Command-line front end for the full workflow: dataset generation,
// homogenization of exported rasters, diffusion training and conditional
// sampling, generated-set validation, the inverse stiffness demonstration,
// and a nearest-neighbor novelty report.
#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "micrograin/config.hpp"
#include "micrograin/dataset.hpp"
#include "micrograin/diffusion.hpp"
#include "micrograin/errors.hpp"
#include "micrograin/homogenization.hpp"
#include "micrograin/io.hpp"
#include "micrograin/pipeline.hpp"
#include "micrograin/rng.hpp"

namespace fs = std::filesystem;
using namespace micrograin;

namespace {

// --config / --seed are accepted by every subcommand; --seed wins over the
// seed stored in the config file.
struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    CLI::Option* config_opt = nullptr;
    CLI::Option* seed_opt = nullptr;

    void attach(CLI::App* sub) {
        config_opt = sub->add_option("--config", config_path, "JSON run configuration file");
        seed_opt = sub->add_option("--seed", seed, "master seed (overrides the config)");
    }

    RunConfig make_config() const {
        RunConfig cfg;
        if (config_opt->count()) cfg = load_config(config_path);
        if (seed_opt->count()) cfg.seed = seed;
        cfg.validate();
        return cfg;
    }
};

std::vector<double> decode_candidates(const RunConfig& cfg, const std::vector<double>& temps) {
    if (!cfg.decode_candidates.empty()) return cfg.decode_candidates;
    if (!temps.empty()) return temps;
    return cfg.temps;
}

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

// Raster inputs for homogenization and the novelty report: a grayscale PNG
// (optional sidecar JSON supplies Tc and seed), a {rows, cols} phi tensor,
// or a {2, rows, cols} training image whose channel 0 is the phi field.
bool raster_extension(const fs::path& p) {
    return p.extension() == ".png" || p.extension() == ".mgt";
}

std::vector<fs::path> collect_rasters(const std::string& input) {
    std::vector<fs::path> files;
    if (fs::is_directory(input)) {
        for (const auto& entry : fs::directory_iterator(input))
            if (entry.is_regular_file() && raster_extension(entry.path()))
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IoError("no .png or .mgt rasters in " + input);
    } else if (fs::is_regular_file(input)) {
        files.emplace_back(input);
    } else {
        throw IoError("input not found: " + input);
    }
    return files;
}

Microstructure load_raster(const fs::path& path) {
    if (path.extension() == ".png") {
        double tc = 0.0;
        std::uint64_t seed = 0;
        const fs::path sidecar = fs::path(path).replace_extension(".json");
        if (fs::exists(sidecar)) {
            const json meta = read_json(sidecar.string());
            if (meta.contains("tc")) tc = meta.at("tc").get<double>();
            if (meta.contains("seed")) seed = meta.at("seed").get<std::uint64_t>();
        }
        return read_microstructure_png(path.string(), tc, seed);
    }
    const TensorFile t = read_tensor_f32(path.string());
    if (t.shape.size() == 2) {
        Field2D phi(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
        for (std::size_t k = 0; k < t.data.size(); ++k) phi.v[k] = t.data[k];
        return Microstructure::from_phi(phi, 0.0, 0);
    }
    if (t.shape.size() == 3 && t.shape[0] == 2)
        return pipeline::threshold_channel(t.data, static_cast<int>(t.shape[1]),
                                           static_cast<int>(t.shape[2]), 0.0, 0);
    throw ShapeError("raster tensor must be {rows, cols} or {2, rows, cols}: " + path.string());
}

// Microstructure channel as flat floats, for pixel-space distance reports.
std::vector<float> raster_pixels(const fs::path& path) {
    if (path.extension() == ".png") {
        const GrayImage img = read_png_gray8(path.string());
        std::vector<float> px(img.pixels.size());
        for (std::size_t k = 0; k < px.size(); ++k)
            px[k] = static_cast<float>(img.pixels[k]) / 255.0f;
        return px;
    }
    const TensorFile t = read_tensor_f32(path.string());
    if (t.shape.size() == 2) return t.data;
    if (t.shape.size() == 3 && t.shape[0] == 2) {
        const std::size_t plane = t.data.size() / 2;
        return std::vector<float>(t.data.begin(),
                                  t.data.begin() + static_cast<std::ptrdiff_t>(plane));
    }
    throw ShapeError("raster tensor must be {rows, cols} or {2, rows, cols}: " + path.string());
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const Common& common, const RunConfig& overrides, const CLI::App* sub,
                 const std::string& out_dir) {
    RunConfig cfg = common.make_config();
    if (sub->count("--temps")) cfg.temps = overrides.temps;
    if (sub->count("--per-temp")) cfg.per_temp = overrides.per_temp;
    if (sub->count("--grid")) cfg.grid = overrides.grid;
    if (sub->count("--sim-steps")) cfg.sim_steps = overrides.sim_steps;
    if (sub->count("--previews")) cfg.write_previews = true;
    cfg.validate();

    const dataset::Manifest man = pipeline::gen_dataset(cfg, out_dir, &std::cout);
    std::printf("dataset written to %s: %zu train / %zu val / %zu test samples (%dx%d)\n",
                out_dir.c_str(), man.train.size(), man.val.size(), man.test.size(), man.rows,
                man.cols);
    return 0;
}

// ---------------------------------------------------------------------------
// homogenize

int cmd_homogenize(const Common& common, const std::string& input,
                   const std::string& materials_path, const CLI::Option* materials_opt,
                   const std::string& out_csv, const std::string& stress_dir) {
    RunConfig cfg = common.make_config();
    if (materials_opt->count()) cfg.materials = load_config(materials_path).materials;

    const std::vector<fs::path> files = collect_rasters(input);
    homogenization::HomogenizeOptions opt;
    opt.nodal_stress = !stress_dir.empty();
    if (opt.nodal_stress) fs::create_directories(stress_dir);

    std::string csv =
        "id,rows,cols,tc,crystal_fraction,d1111,d1122,d1112,d2222,d2212,d1212,e,nu\n";
    for (const fs::path& file : files) {
        const std::string id = file.stem().string();
        const Microstructure m = load_raster(file);
        const auto res = homogenization::homogenize(m, cfg.materials, opt);
        const auto [e, nu] = homogenization::effective_constants(res.d);
        csv += pipeline::csv_safe(id);
        csv += ',' + std::to_string(m.rows) + ',' + std::to_string(m.cols);
        for (double v : {m.tc, res.crystal_fraction, res.d.d1111, res.d.d1122, res.d.d1112,
                         res.d.d2222, res.d.d2212, res.d.d1212, e, nu})
            csv += ',' + pipeline::fmt_g(v);
        csv += '\n';
        if (opt.nodal_stress) {
            TensorFile t;
            t.shape = {3, 3, static_cast<std::uint32_t>(res.stress_rows),
                       static_cast<std::uint32_t>(res.stress_cols)};
            t.data = res.nodal_stress;
            const fs::path base = fs::path(stress_dir) / (id + "_stress");
            write_tensor_f32(base.string() + ".mgt", t);
            json meta;
            meta["shape"] = {3, 3, res.stress_rows, res.stress_cols};
            meta["layout"] = "load case (e11, e22, g12) x stress component (s11, s22, s12)";
            meta["crystal_fraction"] = res.crystal_fraction;
            write_json(base.string() + ".json", meta);
        }
        std::printf("homogenized %s: d1111 %s MPa, fraction %.4f\n", id.c_str(),
                    pipeline::fmt_g(res.d.d1111).c_str(), res.crystal_fraction);
    }

    ensure_parent_dir(out_csv);
    std::ofstream out(out_csv, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + out_csv);
    out << csv;
    std::printf("report written to %s (%zu rows)\n", out_csv.c_str(), files.size());
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const Common& common, const std::string& data_dir, const std::string& out_ckpt,
              long steps, const CLI::Option* steps_opt) {
    RunConfig cfg = common.make_config();
    if (steps_opt->count()) cfg.train_steps = steps;
    cfg.validate();

    diffusion::TrainState state = pipeline::train_model(cfg, data_dir, &std::cout);
    ensure_parent_dir(out_ckpt);
    diffusion::save_checkpoint(out_ckpt, state);
    const double last = state.loss_history.empty() ? 0.0 : state.loss_history.back();
    std::printf("checkpoint written to %s (%ld steps, last loss %.6f)\n", out_ckpt.c_str(),
                state.step_count, last);
    return 0;
}

// ---------------------------------------------------------------------------
// sample

int cmd_sample(const Common& common, const std::string& ckpt, const std::array<double, 3>& raw,
               int n, const std::string& out_dir) {
    const RunConfig cfg = common.make_config();
    diffusion::TrainState state = diffusion::load_checkpoint(ckpt);

    bool clamped = false;
    const std::array<double, 3> cond = dataset::normalize(raw, state.stats, &clamped);
    if (clamped)
        std::fprintf(stderr,
                     "warning: requested stiffness lies outside the training range; clamped\n");

    const std::vector<double> cands = decode_candidates(cfg, {});
    fs::create_directories(out_dir);

    json entries = json::array();
    for (int k = 0; k < n; ++k) {
        const std::uint64_t draw_seed =
            hash_counters(cfg.seed, 0, static_cast<std::uint64_t>(k));
        const nn::Tensor img = diffusion::p_sample_loop(state, cond, draw_seed);
        const std::string id = "s" + std::to_string(k);
        TensorFile t;
        t.shape = {2, static_cast<std::uint32_t>(state.rows),
                   static_cast<std::uint32_t>(state.cols)};
        t.data = img.v;
        write_tensor_f32((fs::path(out_dir) / (id + ".mgt")).string(), t);

        const dataset::DecodeResult dec = dataset::decode_ippt(
            pipeline::channel_field(img.v, 1, state.rows, state.cols), cands);
        const Microstructure m =
            pipeline::threshold_channel(img.v, state.rows, state.cols, dec.tc, draw_seed);
        write_microstructure_png((fs::path(out_dir) / (id + ".png")).string(), m);

        json e;
        e["id"] = id;
        e["tc_decoded"] = dec.tc;
        e["decode_confidence"] = dec.confidence;
        e["decode_low_confidence"] = dec.low_confidence;
        e["crystal_fraction"] = m.crystal_fraction;
        entries.push_back(std::move(e));
        std::printf("sampled %s: Tc %.0f (confidence %.3f), fraction %.4f\n", id.c_str(), dec.tc,
                    dec.confidence, m.crystal_fraction);
    }

    json summary;
    summary["condition_raw"] = raw;
    summary["condition_normalized"] = cond;
    summary["clamped"] = clamped;
    summary["seed"] = cfg.seed;
    summary["rows"] = state.rows;
    summary["cols"] = state.cols;
    summary["samples"] = std::move(entries);
    write_json((fs::path(out_dir) / "samples.json").string(), summary);
    std::printf("wrote %d samples to %s\n", n, out_dir.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// validate

int cmd_validate(const Common& common, const std::string& ckpt, const std::string& data_dir,
                 int n_per, int max_conditions, const std::string& out_csv,
                 std::string summary_path) {
    const RunConfig cfg = common.make_config();
    diffusion::TrainState state = diffusion::load_checkpoint(ckpt);
    const dataset::Manifest man = dataset::read_manifest(data_dir);
    if (man.test.empty()) throw ConfigError("validate: dataset has no held-out test rows");

    std::vector<std::array<double, 3>> conditions;
    for (const auto& meta : man.test) conditions.push_back(meta.condition);
    if (max_conditions > 0 && static_cast<std::size_t>(max_conditions) < conditions.size())
        conditions.resize(static_cast<std::size_t>(max_conditions));

    const pipeline::ValidationReport report =
        pipeline::validate_model(state, conditions, n_per, cfg.seed, cfg.materials,
                                 decode_candidates(cfg, man.temps), &std::cout);

    ensure_parent_dir(out_csv);
    pipeline::write_validation_csv(out_csv, report);
    if (summary_path.empty())
        summary_path = fs::path(out_csv).replace_extension(".json").string();
    ensure_parent_dir(summary_path);
    write_json(summary_path, pipeline::report_summary(report));

    std::printf("validated %zu samples (%d failed); report %s, summary %s\n", report.rows.size(),
                report.n_failed, out_csv.c_str(), summary_path.c_str());
    const char* names[3] = {"d1111", "d2222", "d1212"};
    for (int c = 0; c < 3; ++c) {
        const auto& r = report.pearson[static_cast<std::size_t>(c)];
        if (r)
            std::printf("pearson %s: %.4f\n", names[c], *r);
        else
            std::printf("pearson %s: undefined\n", names[c]);
    }
    return report.n_failed == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// demo

int cmd_demo(const Common& common, const std::string& ckpt, double e_target, double nu_target,
             const std::string& out_dir) {
    const RunConfig cfg = common.make_config();
    if (!(e_target > 0.0)) throw ConfigError("demo: target Young's modulus must be positive");
    if (!(nu_target > 0.0 && nu_target < 0.5))
        throw ConfigError("demo: target Poisson ratio must lie in (0, 0.5)");

    diffusion::TrainState state = diffusion::load_checkpoint(ckpt);
    const pipeline::DemoRequest req{e_target, nu_target};
    const pipeline::DemoResult res =
        pipeline::demo(state, req, cfg.materials, decode_candidates(cfg, {}), cfg.seed);

    if (res.clamped)
        std::fprintf(stderr, "warning: target stiffness lies outside the training range; clamped\n");
    std::printf("target: E %.1f MPa, nu %.4f -> D (%s, %s, %s) MPa\n", e_target, nu_target,
                pipeline::fmt_g(res.d_target[0]).c_str(), pipeline::fmt_g(res.d_target[1]).c_str(),
                pipeline::fmt_g(res.d_target[2]).c_str());
    if (res.failed) {
        std::fprintf(stderr, "demo sample failed: %s\n", res.error.c_str());
        return 1;
    }
    std::printf("proposed Tc: %.0f degC (confidence %.3f%s)\n", res.tc_proposed,
                res.decode_confidence, res.decode_low_confidence ? ", low" : "");
    std::printf("achieved: E %.1f MPa, nu %.4f; D (%s, %s, %s) MPa\n", res.e_achieved,
                res.nu_achieved, pipeline::fmt_g(res.d_achieved[0]).c_str(),
                pipeline::fmt_g(res.d_achieved[1]).c_str(),
                pipeline::fmt_g(res.d_achieved[2]).c_str());

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        TensorFile t;
        t.shape = {2, static_cast<std::uint32_t>(res.rows), static_cast<std::uint32_t>(res.cols)};
        t.data = res.image;
        write_tensor_f32((fs::path(out_dir) / "demo.mgt").string(), t);
        const Microstructure m = pipeline::threshold_channel(res.image, res.rows, res.cols,
                                                             res.tc_proposed, cfg.seed);
        write_microstructure_png((fs::path(out_dir) / "demo.png").string(), m);
        json j;
        j["e_target"] = e_target;
        j["nu_target"] = nu_target;
        j["d_target"] = res.d_target;
        j["condition_normalized"] = res.condition;
        j["clamped"] = res.clamped;
        j["tc_proposed"] = res.tc_proposed;
        j["decode_confidence"] = res.decode_confidence;
        j["decode_low_confidence"] = res.decode_low_confidence;
        j["d_achieved"] = res.d_achieved;
        j["e_achieved"] = res.e_achieved;
        j["nu_achieved"] = res.nu_achieved;
        j["crystal_fraction"] = m.crystal_fraction;
        write_json((fs::path(out_dir) / "demo.json").string(), j);
        std::printf("demo artifacts written to %s\n", out_dir.c_str());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// report-neighbors

int cmd_report_neighbors(const std::string& generated_dir, const std::string& data_dir,
                         const std::string& out_json) {
    const dataset::Manifest man = dataset::read_manifest(data_dir);
    std::vector<std::vector<float>> training;
    training.reserve(man.train.size());
    const std::size_t plane = static_cast<std::size_t>(man.rows) * man.cols;
    for (const auto& meta : man.train) {
        dataset::TrainingSample s = dataset::load_sample(data_dir, meta);
        training.emplace_back(s.image.begin(),
                              s.image.begin() + static_cast<std::ptrdiff_t>(plane));
    }

    const std::vector<fs::path> files = collect_rasters(generated_dir);
    std::vector<std::vector<float>> generated;
    std::vector<std::string> ids;
    for (const fs::path& file : files) {
        generated.push_back(raster_pixels(file));
        ids.push_back(file.filename().string());
    }

    const std::vector<double> dist = pipeline::neighbor_distances(generated, training);
    const pipeline::Quartiles q = pipeline::quartiles(dist);

    json j;
    j["n_generated"] = generated.size();
    j["n_training"] = training.size();
    json per = json::object();
    for (std::size_t k = 0; k < ids.size(); ++k) per[ids[k]] = dist[k];
    j["distances"] = std::move(per);
    j["summary"] = {{"min", q.min}, {"q1", q.q1},   {"median", q.median},
                    {"q3", q.q3},   {"max", q.max}, {"n", q.n}};

    if (!out_json.empty()) {
        ensure_parent_dir(out_json);
        write_json(out_json, j);
        std::printf("neighbor report written to %s\n", out_json.c_str());
    } else {
        std::cout << j.dump(2) << "\n";
    }
    std::printf("nearest-training distance: median %.6f, min %.6f over %zu generated images\n",
                q.median, q.min, generated.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "micrograin: phase-field crystallization, XFEM homogenization, and a "
        "stiffness-conditioned diffusion model"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data",
                                   "simulate microstructures and write a training dataset");
    Common gen_common;
    gen_common.attach(gen);
    RunConfig gen_overrides;
    std::string gen_out;
    gen->add_option("--temps", gen_overrides.temps, "crystallization temperatures, degC");
    gen->add_option("--per-temp", gen_overrides.per_temp, "samples per temperature");
    gen->add_option("--grid", gen_overrides.grid, "simulation grid size");
    gen->add_option("--sim-steps", gen_overrides.sim_steps, "phase-field steps per sample");
    gen->add_flag("--previews", "also write PNG previews of each base microstructure");
    gen->add_option("--out", gen_out, "output dataset directory")->required();

    // homogenize
    auto* hom = app.add_subcommand("homogenize",
                                   "compute effective stiffness for exported rasters");
    Common hom_common;
    hom_common.attach(hom);
    std::string hom_input, hom_materials, hom_out, hom_stress;
    hom->add_option("--input", hom_input, "raster file or directory (.png or .mgt)")->required();
    auto* hom_mat_opt =
        hom->add_option("--materials", hom_materials, "config file supplying phase materials");
    hom->add_option("--out", hom_out, "output CSV report")->required();
    hom->add_option("--stress-out", hom_stress,
                    "directory for per-case nodal stress dumps (flat f32 tensors)");

    // train
    auto* train = app.add_subcommand("train", "train the conditional diffusion model");
    Common train_common;
    train_common.attach(train);
    std::string train_data, train_out;
    long train_steps = 0;
    train->add_option("--data", train_data, "dataset directory")->required();
    auto* train_steps_opt =
        train->add_option("--steps", train_steps, "training steps (overrides the config)");
    train->add_option("--out", train_out, "output checkpoint file")->required();

    // sample
    auto* sample = app.add_subcommand("sample", "draw conditional samples from a checkpoint");
    Common sample_common;
    sample_common.attach(sample);
    std::string sample_ckpt, sample_out;
    std::array<double, 3> sample_d{};
    int sample_n = 4;
    sample->add_option("--ckpt", sample_ckpt, "checkpoint file")->required();
    sample->add_option("--d1111", sample_d[0], "target D1111, MPa")->required();
    sample->add_option("--d2222", sample_d[1], "target D2222, MPa")->required();
    sample->add_option("--d1212", sample_d[2], "target D1212, MPa")->required();
    sample->add_option("--n", sample_n, "number of samples");
    sample->add_option("--out", sample_out, "output directory")->required();

    // validate
    auto* val = app.add_subcommand(
        "validate", "sample at held-out test conditions and re-homogenize the results");
    Common val_common;
    val_common.attach(val);
    std::string val_ckpt, val_data, val_out, val_summary;
    int val_n = 4, val_max = 0;
    val->add_option("--ckpt", val_ckpt, "checkpoint file")->required();
    val->add_option("--data", val_data, "dataset directory (conditions from the test split)")
        ->required();
    val->add_option("--n", val_n, "samples per condition");
    val->add_option("--max-conditions", val_max, "cap on test conditions (0 = all)");
    val->add_option("--out", val_out, "output CSV report")->required();
    val->add_option("--summary", val_summary, "summary JSON path (default: CSV path with .json)");

    // demo
    auto* demo = app.add_subcommand(
        "demo", "propose a process temperature for target engineering constants");
    Common demo_common;
    demo_common.attach(demo);
    std::string demo_ckpt, demo_out;
    double demo_e = 0.0, demo_nu = 0.0;
    demo->add_option("--ckpt", demo_ckpt, "checkpoint file")->required();
    demo->add_option("--e", demo_e, "target Young's modulus, MPa")->required();
    demo->add_option("--nu", demo_nu, "target Poisson ratio")->required();
    demo->add_option("--out", demo_out, "directory for the sampled image and summary");

    // report-neighbors
    auto* nbr = app.add_subcommand(
        "report-neighbors", "nearest-training pixel distance for a set of generated images");
    std::string nbr_generated, nbr_data, nbr_out;
    nbr->add_option("--generated", nbr_generated, "directory of generated rasters")->required();
    nbr->add_option("--data", nbr_data, "dataset directory")->required();
    nbr->add_option("--out", nbr_out, "output JSON (default: print to stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_common, gen_overrides, gen, gen_out);
        if (hom->parsed())
            return cmd_homogenize(hom_common, hom_input, hom_materials, hom_mat_opt, hom_out,
                                  hom_stress);
        if (train->parsed())
            return cmd_train(train_common, train_data, train_out, train_steps, train_steps_opt);
        if (sample->parsed())
            return cmd_sample(sample_common, sample_ckpt, sample_d, sample_n, sample_out);
        if (val->parsed())
            return cmd_validate(val_common, val_ckpt, val_data, val_n, val_max, val_out,
                                val_summary);
        if (demo->parsed()) return cmd_demo(demo_common, demo_ckpt, demo_e, demo_nu, demo_out);
        if (nbr->parsed()) return cmd_report_neighbors(nbr_generated, nbr_data, nbr_out);
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return 1;
    }
    return 0;
}
