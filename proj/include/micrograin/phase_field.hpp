// Coupled Allen-Cahn / heat-conduction solver for isothermal crystal growth,
// with stochastic temperature-dependent nucleation. Explicit time stepping on
// a periodic grid; crystallinity is an order parameter clamped to [0, 1].
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "micrograin/errors.hpp"
#include "micrograin/field.hpp"
#include "micrograin/rng.hpp"

namespace micrograin::phase_field {

// Material / discretization constants for the order-parameter and heat
// equations. Values not fixed by measurement are tunable; defaults satisfy
// the explicit-stability bound and give branched growth at Tc = 160 within
// the default step budget.
struct PhaseParams {
    double mobility = 450.0;              // interface mobility M_p
    double barrier_height = 1.0;          // double-well height W
    double grad_coeff = 0.00425;          // gradient-energy coefficient eps
    double thermal_diffusivity = 1.0;     // alpha
    double latent_ratio = 70.0;           // latent heat over heat capacity, in deg C
    double a_k = 0.9;                     // driving-force amplitude
    double gamma = 10.0;                  // driving-force sharpness
    double anisotropy_strength = 0.0;     // delta; 0 = isotropic growth
    int anisotropy_mode = 4;              // j-fold symmetry of eps(theta)
    double dx = 0.03;                     // grid spacing
    double dt = 2.0e-4;                   // timestep

    // Largest stable explicit timestep for the faster of the two diffusive
    // sub-problems.
    double stability_limit() const {
        const double diff = std::max(thermal_diffusivity,
                                     mobility * grad_coeff * grad_coeff);
        return dx * dx / (4.0 * diff);
    }

    void validate() const {
        if (!(barrier_height > 0.0) || !(grad_coeff > 0.0) || !(mobility > 0.0))
            throw ConfigError("phase params: W, eps, M_p must be positive");
        if (!(thermal_diffusivity >= 0.0))
            throw ConfigError("phase params: thermal diffusivity must be >= 0");
        if (!(dx > 0.0) || !(dt > 0.0))
            throw ConfigError("phase params: dx and dt must be positive");
        if (anisotropy_strength < 0.0 || anisotropy_mode < 1)
            throw ConfigError("phase params: anisotropy out of range");
        if (dt > stability_limit())
            throw ConfigError("phase params: dt " + std::to_string(dt) +
                              " exceeds explicit-stability limit " +
                              std::to_string(stability_limit()));
    }
};

// Nucleation-rate model plus the linear crystallization-to-melting
// temperature map Tm = a*Tc + b. All temperatures in deg C.
struct NucleationParams {
    double n0 = 4.0e6;           // rate prefactor, nuclei per (area * time)
    double c1 = 750.0;           // molecular-motion activation temperature
    double c2 = 5.0e4;           // thermodynamic barrier scale, temperature^2
    double t_inf = 70.0;         // arrest temperature; no nucleation below
    double hw_slope = 0.0948;    // melting-line slope a
    double hw_intercept = 253.7; // melting-line intercept b
    int initial_nuclei = 2;      // single-cell seeds placed at t = 0
    std::uint64_t rng_seed = 0;
    double tc_support_min = 150.0; // supported crystallization range
    double tc_support_max = 210.0;

    void validate() const {
        if (n0 < 0.0 || c1 < 0.0 || c2 < 0.0)
            throw ConfigError("nucleation params: rate parameters must be >= 0");
        if (!(hw_slope > 0.0) || !(hw_slope < 1.0))
            throw ConfigError("nucleation params: melting-line slope must lie in (0,1)");
        if (initial_nuclei < 0)
            throw ConfigError("nucleation params: initial nucleus count must be >= 0");
        if (!(tc_support_min < tc_support_max))
            throw ConfigError("nucleation params: empty Tc support range");
        // Tm(Tc) > Tc must hold across the supported range; the map is linear
        // with slope < 1, so checking the upper endpoint suffices.
        if (hw_slope * tc_support_max + hw_intercept <= tc_support_max)
            throw ConfigError("nucleation params: melting line crosses Tc inside support");
    }
};

// Melting point from the linear crystallization/melting relation.
inline double melting_point(double tc, const NucleationParams& n) {
    return n.hw_slope * tc + n.hw_intercept;
}

// Evolving simulation state: order parameter, temperature, step counter.
struct PhaseState {
    Field2D phi;
    Field2D temp;
    long step = 0;
    double tc = 0.0;

    PhaseState(int rows, int cols, double tc_)
        : phi(rows, cols, 0.0), temp(rows, cols, tc_), tc(tc_) {}
};

inline double dimensionless_temp(double t, double tc, double tm) {
    if (tm == tc) throw DegenerateRange("dimensionless_temp: Tm equals Tc");
    return (t - tc) / (tm - tc);
}

// Supercooling driving force m(T^): arctan-shaped, odd around T^ = 1,
// bounded by a_k/2 in magnitude.
inline double chemical_driving_force(double t_hat, const PhaseParams& p) {
    return (p.a_k / std::numbers::pi) * std::atan(p.gamma * (1.0 - t_hat));
}

// Volumetric nucleation rate at temperature t; zero outside (t_inf, tm).
inline double nucleation_rate(double t, const NucleationParams& n, double tm) {
    if (t <= n.t_inf || t >= tm) return 0.0;
    const double arg = -n.c1 / (t - n.t_inf)
                       - n.c2 * (t + tm) / (t * t * (tm - t));
    return n.n0 * std::exp(arg);
}

// Converts the continuous rate into one Bernoulli trial per amorphous cell.
// Draws are indexed by (seed, step, cell) so sweep order cannot change the
// outcome.
inline void nucleate(PhaseState& s, const NucleationParams& n, double dt, double dx) {
    if (n.n0 == 0.0) return;
    const double tm = melting_point(s.tc, n);
    const double cell_area = dx * dx;
    const int rows = s.phi.rows, cols = s.phi.cols;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            if (s.phi.at(i, j) >= 0.5) continue;
            const double r = nucleation_rate(s.temp.at(i, j), n, tm);
            if (r <= 0.0) continue;
            const double p = std::min(1.0, r * dt * cell_area);
            const std::uint64_t cell = static_cast<std::uint64_t>(i) * cols + j;
            const double u = unit_double(hash_counters(
                n.rng_seed, static_cast<std::uint64_t>(s.step), cell));
            if (u < p) s.phi.at(i, j) = 1.0;
        }
    }
}

namespace detail {

// Shared scratch for one explicit update; reused across steps by run().
struct StepScratch {
    Field2D phi_next{1, 1};
    Field2D temp_next{1, 1};

    void resize(int rows, int cols) {
        if (phi_next.rows != rows || phi_next.cols != cols) {
            phi_next = Field2D(rows, cols);
            temp_next = Field2D(rows, cols);
        }
    }
};

// One explicit update of phi and T. The isotropic path uses the plain
// five-point Laplacian; with anisotropy enabled the divergence term is
// evaluated in flux form (face-averaged eps^2), which degenerates to the
// same five-point stencil when eps is constant, plus the two skew terms
// built from eps * d(eps)/d(theta).
inline void step_impl(PhaseState& s, const PhaseParams& p,
                      const NucleationParams& n, StepScratch& ws) {
    const int rows = s.phi.rows, cols = s.phi.cols;
    ws.resize(rows, cols);
    const double tm = melting_point(s.tc, n);
    const double inv_dx2 = 1.0 / (p.dx * p.dx);
    const double eps2 = p.grad_coeff * p.grad_coeff;
    const bool anisotropic = p.anisotropy_strength > 0.0;

    // Cell-centered eps^2 and eps*eps' from the local interface normal.
    Field2D a_field{1, 1}, b_field{1, 1};
    if (anisotropic) {
        a_field = Field2D(rows, cols);
        b_field = Field2D(rows, cols);
        for (int i = 0; i < rows; ++i) {
            const int im = i == 0 ? rows - 1 : i - 1;
            const int ip = i == rows - 1 ? 0 : i + 1;
            for (int j = 0; j < cols; ++j) {
                const int jm = j == 0 ? cols - 1 : j - 1;
                const int jp = j == cols - 1 ? 0 : j + 1;
                const double gx = (s.phi.at(i, jp) - s.phi.at(i, jm)) / (2.0 * p.dx);
                const double gy = (s.phi.at(ip, j) - s.phi.at(im, j)) / (2.0 * p.dx);
                const double theta = std::atan2(gy, gx);
                const double eps = p.grad_coeff *
                    (1.0 + p.anisotropy_strength * std::cos(p.anisotropy_mode * theta));
                const double deps = -p.grad_coeff * p.anisotropy_strength *
                    p.anisotropy_mode * std::sin(p.anisotropy_mode * theta);
                a_field.at(i, j) = eps * eps;
                b_field.at(i, j) = eps * deps;
            }
        }
    }

    double phi_sum = 0.0, temp_sum = 0.0;
    for (int i = 0; i < rows; ++i) {
        const int im = i == 0 ? rows - 1 : i - 1;
        const int ip = i == rows - 1 ? 0 : i + 1;
        for (int j = 0; j < cols; ++j) {
            const int jm = j == 0 ? cols - 1 : j - 1;
            const int jp = j == cols - 1 ? 0 : j + 1;
            const double phi = s.phi.at(i, j);
            const double t = s.temp.at(i, j);

            double grad_term;
            if (!anisotropic) {
                grad_term = eps2 * inv_dx2 *
                    (s.phi.at(i, jp) + s.phi.at(i, jm) +
                     s.phi.at(ip, j) + s.phi.at(im, j) - 4.0 * phi);
            } else {
                const double a = a_field.at(i, j);
                const double a_e = 0.5 * (a + a_field.at(i, jp));
                const double a_w = 0.5 * (a + a_field.at(i, jm));
                const double a_n = 0.5 * (a + a_field.at(ip, j));
                const double a_s = 0.5 * (a + a_field.at(im, j));
                grad_term = inv_dx2 *
                    (a_e * (s.phi.at(i, jp) - phi) - a_w * (phi - s.phi.at(i, jm)) +
                     a_n * (s.phi.at(ip, j) - phi) - a_s * (phi - s.phi.at(im, j)));
                // d/dy(b * dphi/dx) - d/dx(b * dphi/dy), central differences.
                const auto dphidx = [&](int ii, int jj) {
                    const int l = jj == 0 ? cols - 1 : jj - 1;
                    const int r = jj == cols - 1 ? 0 : jj + 1;
                    return (s.phi.at(ii, r) - s.phi.at(ii, l)) / (2.0 * p.dx);
                };
                const auto dphidy = [&](int ii, int jj) {
                    const int d = ii == 0 ? rows - 1 : ii - 1;
                    const int u = ii == rows - 1 ? 0 : ii + 1;
                    return (s.phi.at(u, jj) - s.phi.at(d, jj)) / (2.0 * p.dx);
                };
                grad_term +=
                    (b_field.at(ip, j) * dphidx(ip, j) -
                     b_field.at(im, j) * dphidx(im, j)) / (2.0 * p.dx) -
                    (b_field.at(i, jp) * dphidy(i, jp) -
                     b_field.at(i, jm) * dphidy(i, jm)) / (2.0 * p.dx);
            }

            const double t_hat = (t - s.tc) / (tm - s.tc);
            const double m = chemical_driving_force(t_hat, p);
            const double reaction =
                p.barrier_height * phi * (0.5 - phi - m) * (1.0 - phi);
            double phi_next = phi + p.dt * p.mobility * (grad_term - reaction);
            if (phi_next < 0.0) phi_next = 0.0;
            if (phi_next > 1.0) phi_next = 1.0;

            const double lap_t = inv_dx2 *
                (s.temp.at(i, jp) + s.temp.at(i, jm) +
                 s.temp.at(ip, j) + s.temp.at(im, j) - 4.0 * t);
            const double temp_next = t + p.dt * p.thermal_diffusivity * lap_t +
                                     p.latent_ratio * (phi_next - phi);

            ws.phi_next.at(i, j) = phi_next;
            ws.temp_next.at(i, j) = temp_next;
            phi_sum += phi_next;
            temp_sum += temp_next;
        }
    }
    if (!std::isfinite(phi_sum) || !std::isfinite(temp_sum))
        throw NumericBlowup("field became non-finite at step " +
                            std::to_string(s.step) + "; reduce dt");

    s.phi.v.swap(ws.phi_next.v);
    s.temp.v.swap(ws.temp_next.v);
    nucleate(s, n, p.dt, p.dx);
    ++s.step;
}

} // namespace detail

// One explicit update: order parameter, temperature, nucleation, clamp.
inline void step(PhaseState& s, const PhaseParams& p, const NucleationParams& n) {
    p.validate();
    detail::StepScratch ws;
    detail::step_impl(s, p, n, ws);
}

inline PhaseState init_state(double tc, int rows, int cols) {
    return PhaseState(rows, cols, tc);
}

// Places `count` distinct single-cell nuclei at seeded-random positions.
inline void seed_nuclei(PhaseState& s, int count, std::uint64_t seed) {
    const std::size_t cells = s.phi.v.size();
    if (static_cast<std::size_t>(count) > cells)
        throw ConfigError("seed_nuclei: more nuclei than grid cells");
    Rng rng(seed);
    std::vector<std::size_t> taken;
    while (taken.size() < static_cast<std::size_t>(count)) {
        const std::size_t k = rng.uniform_index(cells);
        bool fresh = true;
        for (std::size_t t : taken)
            if (t == k) { fresh = false; break; }
        if (fresh) {
            taken.push_back(k);
            s.phi.v[k] = 1.0;
        }
    }
}

// Full labeled-growth run: uniform melt at Tc, seeded nuclei, fixed step
// count, thresholded binary raster out.
inline Microstructure run(double tc, int rows, int cols, long steps,
                          const PhaseParams& p, const NucleationParams& n) {
    p.validate();
    n.validate();
    if (tc < n.tc_support_min || tc > n.tc_support_max)
        throw ConfigError("run: Tc " + std::to_string(tc) +
                          " outside supported range [" +
                          std::to_string(n.tc_support_min) + ", " +
                          std::to_string(n.tc_support_max) + "]");
    if (steps < 0) throw ConfigError("run: negative step count");

    PhaseState s = init_state(tc, rows, cols);
    seed_nuclei(s, n.initial_nuclei, n.rng_seed);
    detail::StepScratch ws;
    for (long k = 0; k < steps; ++k) detail::step_impl(s, p, n, ws);
    return Microstructure::from_phi(s.phi, tc, n.rng_seed);
}

// Discrete free energy: double-well + driving term per cell plus
// forward-difference gradient energy, integrated over the periodic grid.
// With frozen uniform temperature and nucleation off, step() is an explicit
// gradient descent on this functional.
inline double free_energy(const PhaseState& s, const PhaseParams& p,
                          const NucleationParams& n) {
    const double tm = melting_point(s.tc, n);
    const double inv_dx2 = 1.0 / (p.dx * p.dx);
    const double eps2 = p.grad_coeff * p.grad_coeff;
    const int rows = s.phi.rows, cols = s.phi.cols;
    double f = 0.0;
    for (int i = 0; i < rows; ++i) {
        const int ip = i == rows - 1 ? 0 : i + 1;
        for (int j = 0; j < cols; ++j) {
            const int jp = j == cols - 1 ? 0 : j + 1;
            const double phi = s.phi.at(i, j);
            const double t_hat = (s.temp.at(i, j) - s.tc) / (tm - s.tc);
            const double m = chemical_driving_force(t_hat, p);
            const double one_m = 1.0 - phi;
            const double doub = p.barrier_height *
                (0.25 * phi * phi * one_m * one_m +
                 m * (phi * phi * phi / 3.0 - 0.5 * phi * phi));
            const double dxphi = s.phi.at(i, jp) - phi;
            const double dyphi = s.phi.at(ip, j) - phi;
            const double grad = 0.5 * eps2 * inv_dx2 * (dxphi * dxphi + dyphi * dyphi);
            f += doub + grad;
        }
    }
    return f * p.dx * p.dx;
}

} // namespace micrograin::phase_field
