// JSON-backed run configuration: every tunable in one struct with defaults,
// overridden by whatever keys a config file provides.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "micrograin/errors.hpp"
#include "micrograin/homogenization.hpp"
#include "micrograin/io.hpp"
#include "micrograin/phase_field.hpp"

namespace micrograin {

struct RunConfig {
    std::uint64_t seed = 0;

    phase_field::PhaseParams phase;
    phase_field::NucleationParams nucleation;
    homogenization::PhaseMaterials materials;

    // dataset generation
    std::vector<double> temps{160.0, 180.0, 200.0};
    int per_temp = 8;
    int grid = 64;        // simulation grid; multiples of 5 are pooled 5x down
    int sim_steps = 5000;
    std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
    bool write_previews = false;

    // diffusion schedule and network
    int t_d = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int base_width = 32;
    int emb_dim = 256;

    // training loop
    double lr = 1e-3;
    int batch = 8;
    long train_steps = 2000;

    // decoding / validation
    std::vector<double> decode_candidates;  // empty: use the dataset temps

    void validate() const {
        phase.validate();
        nucleation.validate();
        materials.validate();
        if (temps.empty()) throw ConfigError("config: temps must not be empty");
        if (per_temp < 1) throw ConfigError("config: per_temp must be positive");
        if (grid < 8) throw ConfigError("config: grid too small");
        if (sim_steps < 1) throw ConfigError("config: sim_steps must be positive");
        if (batch < 1) throw ConfigError("config: batch must be positive");
        if (train_steps < 0) throw ConfigError("config: train_steps must be non-negative");
        if (base_width < 1) throw ConfigError("config: base_width must be positive");
        if (emb_dim < 6 || emb_dim % 2)
            throw ConfigError("config: emb_dim must be even and at least 6");
    }
};

namespace detail {

template <class T>
void fetch(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
    RunConfig c;
    using detail::fetch;
    fetch(j, "seed", c.seed);

    if (j.contains("phase_field")) {
        const json& p = j.at("phase_field");
        fetch(p, "mobility", c.phase.mobility);
        fetch(p, "barrier_height", c.phase.barrier_height);
        fetch(p, "grad_coeff", c.phase.grad_coeff);
        fetch(p, "thermal_diffusivity", c.phase.thermal_diffusivity);
        fetch(p, "latent_ratio", c.phase.latent_ratio);
        fetch(p, "a_k", c.phase.a_k);
        fetch(p, "gamma", c.phase.gamma);
        fetch(p, "anisotropy_strength", c.phase.anisotropy_strength);
        fetch(p, "anisotropy_mode", c.phase.anisotropy_mode);
        fetch(p, "dx", c.phase.dx);
        fetch(p, "dt", c.phase.dt);
    }
    if (j.contains("nucleation")) {
        const json& p = j.at("nucleation");
        fetch(p, "n0", c.nucleation.n0);
        fetch(p, "c1", c.nucleation.c1);
        fetch(p, "c2", c.nucleation.c2);
        fetch(p, "t_inf", c.nucleation.t_inf);
        fetch(p, "hw_slope", c.nucleation.hw_slope);
        fetch(p, "hw_intercept", c.nucleation.hw_intercept);
        fetch(p, "initial_nuclei", c.nucleation.initial_nuclei);
        fetch(p, "tc_support_min", c.nucleation.tc_support_min);
        fetch(p, "tc_support_max", c.nucleation.tc_support_max);
    }
    if (j.contains("materials")) {
        const json& p = j.at("materials");
        fetch(p, "e_crystal", c.materials.e_crystal);
        fetch(p, "nu_crystal", c.materials.nu_crystal);
        fetch(p, "e_amorph", c.materials.e_amorph);
        fetch(p, "nu_amorph", c.materials.nu_amorph);
        if (p.contains("formulation")) {
            const std::string f = p.at("formulation").get<std::string>();
            if (f == "plane_strain")
                c.materials.formulation = homogenization::Formulation::plane_strain;
            else if (f == "plane_stress")
                c.materials.formulation = homogenization::Formulation::plane_stress;
            else
                throw ConfigError("config: unknown formulation '" + f + "'");
        }
    }
    if (j.contains("dataset")) {
        const json& p = j.at("dataset");
        fetch(p, "temps", c.temps);
        fetch(p, "per_temp", c.per_temp);
        fetch(p, "grid", c.grid);
        fetch(p, "sim_steps", c.sim_steps);
        fetch(p, "split_ratios", c.split_ratios);
        fetch(p, "write_previews", c.write_previews);
    }
    if (j.contains("schedule")) {
        const json& p = j.at("schedule");
        fetch(p, "t_d", c.t_d);
        fetch(p, "beta_start", c.beta_start);
        fetch(p, "beta_end", c.beta_end);
    }
    if (j.contains("net")) {
        const json& p = j.at("net");
        fetch(p, "base_width", c.base_width);
        fetch(p, "emb_dim", c.emb_dim);
    }
    if (j.contains("train")) {
        const json& p = j.at("train");
        fetch(p, "lr", c.lr);
        fetch(p, "batch", c.batch);
        fetch(p, "train_steps", c.train_steps);
    }
    if (j.contains("validate")) {
        const json& p = j.at("validate");
        fetch(p, "decode_candidates", c.decode_candidates);
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) { return config_from_json(read_json(path)); }

inline json config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["phase_field"] = {{"mobility", c.phase.mobility},
                        {"barrier_height", c.phase.barrier_height},
                        {"grad_coeff", c.phase.grad_coeff},
                        {"thermal_diffusivity", c.phase.thermal_diffusivity},
                        {"latent_ratio", c.phase.latent_ratio},
                        {"a_k", c.phase.a_k},
                        {"gamma", c.phase.gamma},
                        {"anisotropy_strength", c.phase.anisotropy_strength},
                        {"anisotropy_mode", c.phase.anisotropy_mode},
                        {"dx", c.phase.dx},
                        {"dt", c.phase.dt}};
    j["nucleation"] = {{"n0", c.nucleation.n0},
                       {"c1", c.nucleation.c1},
                       {"c2", c.nucleation.c2},
                       {"t_inf", c.nucleation.t_inf},
                       {"hw_slope", c.nucleation.hw_slope},
                       {"hw_intercept", c.nucleation.hw_intercept},
                       {"initial_nuclei", c.nucleation.initial_nuclei},
                       {"tc_support_min", c.nucleation.tc_support_min},
                       {"tc_support_max", c.nucleation.tc_support_max}};
    j["materials"] = {{"e_crystal", c.materials.e_crystal},
                      {"nu_crystal", c.materials.nu_crystal},
                      {"e_amorph", c.materials.e_amorph},
                      {"nu_amorph", c.materials.nu_amorph},
                      {"formulation",
                       c.materials.formulation == homogenization::Formulation::plane_strain
                           ? "plane_strain"
                           : "plane_stress"}};
    j["dataset"] = {{"temps", c.temps},       {"per_temp", c.per_temp},
                    {"grid", c.grid},         {"sim_steps", c.sim_steps},
                    {"split_ratios", c.split_ratios}, {"write_previews", c.write_previews}};
    j["schedule"] = {{"t_d", c.t_d}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
    j["net"] = {{"base_width", c.base_width}, {"emb_dim", c.emb_dim}};
    j["train"] = {{"lr", c.lr}, {"batch", c.batch}, {"train_steps", c.train_steps}};
    j["validate"] = {{"decode_candidates", c.decode_candidates}};
    return j;
}

}  // namespace micrograin
