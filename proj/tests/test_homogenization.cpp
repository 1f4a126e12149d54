#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "micrograin/homogenization.hpp"
#include "micrograin/phase_field.hpp"

using namespace micrograin;
using namespace micrograin::homogenization;

namespace {

Microstructure uniform_raster(int n, std::uint8_t value) {
    return Microstructure(n, n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, value), 160.0, 0);
}

Microstructure vertical_stripes(int n) {
    std::vector<std::uint8_t> cells(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cells[static_cast<std::size_t>(i) * n + j] = j < n / 2 ? 1 : 0;
    return Microstructure(n, n, cells, 160.0, 0);
}

Microstructure grown_sample(double tc, std::uint64_t seed, int n = 48, int steps = 2500) {
    phase_field::PhaseParams p;
    phase_field::NucleationParams nu;
    nu.rng_seed = seed;
    return phase_field::run(tc, n, n, steps, p, nu);
}

// Plain constant-strain-triangle assembly without any enrichment; written
// independently of the library path as an oracle.
Eigen::MatrixXd plain_fem_stiffness(int n, const Eigen::Matrix3d& d) {
    const int dofs = 2 * n * n;
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(dofs, dofs);
    auto add_tri = [&](std::array<int, 3> ids, std::array<double, 3> x,
                       std::array<double, 3> y) {
        const double det = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]);
        const double area = 0.5 * std::abs(det);
        Eigen::Matrix<double, 3, 6> b = Eigen::Matrix<double, 3, 6>::Zero();
        const double bx[3] = {(y[1] - y[2]) / det, (y[2] - y[0]) / det, (y[0] - y[1]) / det};
        const double by[3] = {(x[2] - x[1]) / det, (x[0] - x[2]) / det, (x[1] - x[0]) / det};
        for (int v = 0; v < 3; ++v) {
            b(0, 2 * v) = bx[v];
            b(1, 2 * v + 1) = by[v];
            b(2, 2 * v) = by[v];
            b(2, 2 * v + 1) = bx[v];
        }
        const Eigen::Matrix<double, 6, 6> ke = area * b.transpose() * d * b;
        for (int a = 0; a < 6; ++a)
            for (int c = 0; c < 6; ++c)
                k(2 * ids[a / 2] + a % 2, 2 * ids[c / 2] + c % 2) += ke(a, c);
    };
    for (int i = 0; i + 1 < n; ++i) {
        for (int j = 0; j + 1 < n; ++j) {
            const int n00 = i * n + j, n01 = n00 + 1, n10 = n00 + n, n11 = n10 + 1;
            const double x0 = j, y0 = i;
            add_tri({n00, n01, n11}, {x0, x0 + 1, x0 + 1}, {y0, y0, y0 + 1});
            add_tri({n00, n11, n10}, {x0, x0 + 1, x0}, {y0, y0 + 1, y0 + 1});
        }
    }
    return k;
}

} // namespace

TEST_CASE("mesh: counts, cuts, and interface midpoints") {
    // single phase: nothing is cut or enriched
    auto [mesh1, ls1] = build_mesh(uniform_raster(8, 1));
    CHECK(mesh1.tris.size() == 2u * 7 * 7);
    CHECK(mesh1.cuts.empty());
    CHECK(mesh1.n_enriched == 0);
    CHECK(ls1.perturbed == 0);
    for (double psi : ls1.psi.v) CHECK(psi == 1.0);

    // counting oracle at full scale
    auto [mesh320, ls320] = build_mesh(uniform_raster(320, 0));
    CHECK(mesh320.tris.size() == 2u * 319 * 319);

    // 2x2 half-crystal: crossings sit at edge midpoints (psi = +/-1)
    Microstructure half(2, 2, {1, 0, 1, 0}, 160.0, 0);
    auto [mesh2, ls2] = build_mesh(half);
    REQUIRE(mesh2.tris.size() == 2);
    REQUIRE(mesh2.cuts.size() == 2);
    CHECK(mesh2.n_enriched == 4);
    for (const CutElement& cut : mesh2.cuts) {
        REQUIRE(cut.parts.size() == 3);
        // subelement areas partition the parent exactly
        const Tri& tri = mesh2.tris[cut.tri];
        std::array<double, 3> px, py;
        for (int k = 0; k < 3; ++k) {
            px[k] = mesh2.node_x(tri.n[k]);
            py[k] = mesh2.node_y(tri.n[k]);
        }
        const double parent = detail::tri_area(px, py);
        double sum = 0.0;
        for (const SubTri& s : cut.parts) sum += detail::tri_area(s.x, s.y);
        CHECK_THAT(sum, Catch::Matchers::WithinRel(parent, 1e-12));
        // crossing points: any subtriangle vertex that is not a mesh node
        // must lie at x = 0.5 by symmetric interpolation
        for (const SubTri& s : cut.parts)
            for (int v = 0; v < 3; ++v) {
                const bool is_node = (s.x[v] == 0.0 || s.x[v] == 1.0) &&
                                     (s.y[v] == 0.0 || s.y[v] == 1.0);
                if (!is_node) CHECK(s.x[v] == 0.5);
            }
    }

    // exact-zero level set values are nudged and counted
    Field2D phi_mid(2, 2, 0.5);
    phi_mid.at(0, 0) = 1.0;
    auto [mesh3, ls3] = build_mesh(phi_mid);
    CHECK(ls3.perturbed == 3);
    for (double psi : ls3.psi.v) CHECK(psi > 0.0);

    CHECK_THROWS_AS(build_mesh(Field2D(1, 5, 0.0)), ShapeError);
}

TEST_CASE("ramp function: node values, single-phase collapse, oracle") {
    // zero at every node
    for (int corner = 0; corner < 3; ++corner) {
        std::array<double, 3> shape{0.0, 0.0, 0.0};
        shape[corner] = 1.0;
        CHECK(ramp({0.7, -0.2, 0.5}, shape) == 0.0);
    }

    // all signs equal: identically zero across the element
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const double l1 = rng.uniform(), l2 = rng.uniform() * (1.0 - l1);
        const std::array<double, 3> shape{l1, l2, 1.0 - l1 - l2};
        CHECK_THAT(ramp({0.3, 0.9, 0.1}, shape), Catch::Matchers::WithinAbs(0.0, 1e-15));
        // and nonnegative in general (triangle inequality)
        const std::array<double, 3> psi{rng.uniform() * 2 - 1, rng.uniform() * 2 - 1,
                                        rng.uniform() * 2 - 1};
        CHECK(ramp(psi, shape) >= -1e-15);
    }

    // barycenter of a cut element, against a hand evaluation:
    // R = (|1| + |-1| + |1e-12|)/3 - |(1 - 1 + 1e-12)/3| = 2/3 (+ 1e-12 terms)
    const std::array<double, 3> third{1.0 / 3, 1.0 / 3, 1.0 / 3};
    CHECK_THAT(ramp({1.0, -1.0, 1e-12}, third),
               Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-9));
}

TEST_CASE("assembly: matches plain FEM on single-phase input") {
    const PhaseMaterials mat;
    const int n = 6;
    auto [mesh, ls] = build_mesh(uniform_raster(n, 1));
    StiffnessSystem sys = assemble(mesh, mat, ls);
    CHECK(sys.n_enriched == 0);
    CHECK(sys.crystal_fraction == 1.0);

    const Eigen::MatrixXd oracle = plain_fem_stiffness(
        n, isotropic_stiffness(mat.e_crystal, mat.nu_crystal, mat.formulation));
    const Eigen::MatrixXd dense(sys.k);
    REQUIRE(dense.rows() == oracle.rows());
    CHECK((dense - oracle).cwiseAbs().maxCoeff() <= 1e-9 * oracle.cwiseAbs().maxCoeff());
}

TEST_CASE("assembly: symmetry, rigid-body kernel, enriched bookkeeping") {
    const PhaseMaterials mat;
    Microstructure m = grown_sample(180.0, 7, 32, 1200);
    auto [mesh, ls] = build_mesh(m);
    REQUIRE(!mesh.cuts.empty());
    StiffnessSystem sys = assemble(mesh, mat, ls);

    CHECK(sys.n_enriched == 2 * mesh.n_enriched);

    const Eigen::SparseMatrix<double> kt = sys.k.transpose();
    double max_abs = 0.0, max_diff = 0.0;
    for (int c = 0; c < sys.k.outerSize(); ++c)
        for (Eigen::SparseMatrix<double>::InnerIterator it(sys.k, c); it; ++it) {
            max_abs = std::max(max_abs, std::abs(it.value()));
            max_diff = std::max(max_diff, std::abs(it.value() - kt.coeff(it.row(), it.col())));
        }
    CHECK(max_diff <= 1e-9 * max_abs);

    // x-translation of all standard DOFs is in the kernel
    Eigen::VectorXd rigid = Eigen::VectorXd::Zero(sys.k.rows());
    for (int node = 0; node < sys.n_nodes; ++node) rigid[2 * node] = 1.0;
    const double knorm = max_abs * rigid.norm();
    CHECK((sys.k * rigid).norm() <= 1e-8 * knorm);

    // crystal fraction is an area fraction
    CHECK(sys.crystal_fraction > 0.0);
    CHECK(sys.crystal_fraction < 1.0);
}

TEST_CASE("pure phases reproduce isotropic elasticity exactly") {
    const PhaseMaterials mat;

    for (int n : {8, 16, 33}) {
        auto rc = homogenize(uniform_raster(n, 1), mat);
        CHECK_THAT(rc.d.d1111, Catch::Matchers::WithinRel(31111.111111111110, 1e-6));
        CHECK_THAT(rc.d.d2222, Catch::Matchers::WithinRel(31111.111111111110, 1e-6));
        CHECK_THAT(rc.d.d1122, Catch::Matchers::WithinRel(7777.7777777777774, 1e-6));
        CHECK_THAT(rc.d.d1212, Catch::Matchers::WithinRel(11666.666666666666, 1e-6));
        CHECK(std::abs(rc.d.d1112) <= 1e-6 * rc.d.d1111);
        CHECK(std::abs(rc.d.d2212) <= 1e-6 * rc.d.d1111);
        CHECK_FALSE(rc.bounds_warning);

        auto [e, nu] = effective_constants(rc.d);
        CHECK_THAT(e, Catch::Matchers::WithinRel(28000.0, 1e-9));
        CHECK_THAT(nu, Catch::Matchers::WithinRel(0.2, 1e-9));
    }

    auto ra = homogenize(uniform_raster(16, 0), mat);
    CHECK_THAT(ra.d.d1111, Catch::Matchers::WithinRel(321.42857142857144, 1e-6));
    CHECK_THAT(ra.d.d1212, Catch::Matchers::WithinRel(53.571428571428569, 1e-6));
    auto [e, nu] = effective_constants(ra.d);
    CHECK_THAT(e, Catch::Matchers::WithinRel(150.0, 1e-9));
    CHECK_THAT(nu, Catch::Matchers::WithinRel(0.4, 1e-9));
}

TEST_CASE("plane stress variant") {
    PhaseMaterials mat;
    mat.formulation = Formulation::plane_stress;
    auto rc = homogenize(uniform_raster(12, 1), mat);
    CHECK_THAT(rc.d.d1111, Catch::Matchers::WithinRel(28000.0 / (1.0 - 0.04), 1e-6));
    CHECK_THAT(rc.d.d1122, Catch::Matchers::WithinRel(0.2 * 28000.0 / (1.0 - 0.04), 1e-6));
    CHECK_THAT(rc.d.d1212, Catch::Matchers::WithinRel(11666.666666666666, 1e-6));
}

TEST_CASE("laminate stripes match the closed form") {
    const PhaseMaterials mat;
    auto res = homogenize(vertical_stripes(64), mat);
    CHECK_THAT(res.crystal_fraction, Catch::Matchers::WithinRel(0.5, 1e-12));

    // closed form for layers stacked along x: with a = 1/D11, b = D12/D11,
    // c = D22 - D12^2/D11, g = 1/D33 per phase and <.> the fraction-weighted
    // mean: D11* = 1/<a>, D12* = <b>/<a>, D22* = <c> + <b>^2/<a>,
    // D33* = 1/<g>.
    const Eigen::Matrix3d dc = isotropic_stiffness(mat.e_crystal, mat.nu_crystal, mat.formulation);
    const Eigen::Matrix3d da = isotropic_stiffness(mat.e_amorph, mat.nu_amorph, mat.formulation);
    auto mean = [](double u, double v) { return 0.5 * (u + v); };
    const double a = mean(1.0 / dc(0, 0), 1.0 / da(0, 0));
    const double b = mean(dc(0, 1) / dc(0, 0), da(0, 1) / da(0, 0));
    const double c = mean(dc(1, 1) - dc(0, 1) * dc(0, 1) / dc(0, 0),
                          da(1, 1) - da(0, 1) * da(0, 1) / da(0, 0));
    const double g = mean(1.0 / dc(2, 2), 1.0 / da(2, 2));

    CHECK_THAT(res.d.d1111, Catch::Matchers::WithinRel(1.0 / a, 0.01));
    CHECK_THAT(res.d.d1122, Catch::Matchers::WithinRel(b / a, 0.01));
    CHECK_THAT(res.d.d2222, Catch::Matchers::WithinRel(c + b * b / a, 0.01));
    CHECK_THAT(res.d.d1212, Catch::Matchers::WithinRel(1.0 / g, 0.01));
}

TEST_CASE("grown samples: bounds, symmetry, rotation covariance") {
    const PhaseMaterials mat;
    const Eigen::Matrix3d dc = isotropic_stiffness(mat.e_crystal, mat.nu_crystal, mat.formulation);
    const Eigen::Matrix3d da = isotropic_stiffness(mat.e_amorph, mat.nu_amorph, mat.formulation);

    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const double tc = seed % 2 ? 160.0 : 200.0;
        Microstructure m = grown_sample(tc, seed);
        auto res = homogenize(m, mat);

        CHECK(res.asymmetry <= 1e-6);
        CHECK_FALSE(res.bounds_warning);
        const double f = res.crystal_fraction;
        for (double x : {res.d.d1111, res.d.d2222}) {
            CHECK(x <= voigt_bound(f, dc(0, 0), da(0, 0)) * (1.0 + 1e-3));
            CHECK(x >= reuss_bound(f, dc(0, 0), da(0, 0)) * (1.0 - 1e-3));
        }

        if (seed <= 2) {
            Microstructure rot = Microstructure::from_phi(rot90_field(m.to_phi()), m.tc, m.seed);
            auto rr = homogenize(rot, mat);
            CHECK_THAT(rr.d.d1111, Catch::Matchers::WithinRel(res.d.d2222, 1e-6));
            CHECK_THAT(rr.d.d2222, Catch::Matchers::WithinRel(res.d.d1111, 1e-6));
            CHECK_THAT(rr.d.d1212, Catch::Matchers::WithinRel(res.d.d1212, 1e-6));
        }
    }
}

TEST_CASE("adding crystal never softens the 11 response") {
    const PhaseMaterials mat;
    Microstructure m = grown_sample(180.0, 21, 32, 1500);

    double prev = homogenize(m, mat).d.d1111;
    Rng rng(5);
    for (int round = 0; round < 3; ++round) {
        // flip a batch of amorphous cells to crystal: nested rasters
        int flipped = 0;
        while (flipped < 40) {
            const std::size_t k = rng.uniform_index(m.cells.size());
            if (!m.cells[k]) {
                m.cells[k] = 1;
                ++flipped;
            }
        }
        m.recompute_fraction();
        const double next = homogenize(m, mat).d.d1111;
        CHECK(next >= prev * (1.0 - 1e-12));
        prev = next;
    }
}

TEST_CASE("effective constants: round trip and degeneracy guard") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const double e = 50.0 + rng.uniform() * 50000.0;
        const double nu = 0.02 + rng.uniform() * 0.46;
        const Eigen::Matrix3d d = isotropic_stiffness(e, nu, Formulation::plane_strain);
        auto [e2, nu2] = effective_constants(ElasticityMatrix::from_voigt(d));
        CHECK_THAT(e2, Catch::Matchers::WithinRel(e, 1e-9));
        CHECK_THAT(nu2, Catch::Matchers::WithinRel(nu, 1e-9));
    }

    ElasticityMatrix bad;
    bad.d1111 = bad.d2222 = 10.0;
    bad.d1212 = 10.0; // M == D1212
    CHECK_THROWS_AS(effective_constants(bad), DegenerateModuli);
    bad.d1212 = -1.0;
    CHECK_THROWS_AS(effective_constants(bad), DegenerateModuli);
}

TEST_CASE("homogenize is deterministic and reports stress fields on request") {
    const PhaseMaterials mat;
    Microstructure m = grown_sample(160.0, 3, 32, 1500);

    HomogenizeOptions opt;
    opt.nodal_stress = true;
    auto a = homogenize(m, mat, opt);
    auto b = homogenize(m, mat, opt);
    CHECK(a.d.d1111 == b.d.d1111);
    CHECK(a.d.d1212 == b.d.d1212);
    CHECK(a.nodal_stress == b.nodal_stress);

    REQUIRE(a.nodal_stress.size() == static_cast<std::size_t>(9) * m.rows * m.cols);
    CHECK(a.stress_rows == m.rows);
    // the e11 load case should produce nontrivial s11 somewhere
    double max_s11 = 0.0;
    for (int node = 0; node < m.rows * m.cols; ++node)
        max_s11 = std::max(max_s11, std::abs(static_cast<double>(a.nodal_stress[node])));
    CHECK(max_s11 > 0.0);
}
