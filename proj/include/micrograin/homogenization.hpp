// Effective elasticity of a two-phase raster: triangulated grid, level-set
// interface with ramp enrichment on cut elements, periodic boundary
// conditions through eliminated key degrees of freedom, three unit macro
// strains, and volume-averaged stress.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "micrograin/errors.hpp"
#include "micrograin/field.hpp"

namespace micrograin::homogenization {

enum class Formulation { plane_strain, plane_stress };

struct PhaseMaterials {
    double e_crystal = 28000.0; // MPa
    double nu_crystal = 0.2;
    double e_amorph = 150.0; // MPa
    double nu_amorph = 0.4;
    Formulation formulation = Formulation::plane_strain;

    void validate() const {
        if (!(e_crystal > 0.0) || !(e_amorph > 0.0))
            throw ConfigError("materials: Young's moduli must be positive");
        if (!(nu_crystal > 0.0 && nu_crystal < 0.5) ||
            !(nu_amorph > 0.0 && nu_amorph < 0.5))
            throw PoissonLimit("materials: Poisson ratios must lie in (0, 0.5)");
    }
};

// Isotropic 3x3 stiffness in Voigt order (s11, s22, s12) vs (e11, e22, g12).
inline Eigen::Matrix3d isotropic_stiffness(double e, double nu, Formulation f) {
    Eigen::Matrix3d d = Eigen::Matrix3d::Zero();
    if (f == Formulation::plane_strain) {
        const double lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        const double mu = e / (2.0 * (1.0 + nu));
        d(0, 0) = d(1, 1) = lam + 2.0 * mu;
        d(0, 1) = d(1, 0) = lam;
        d(2, 2) = mu;
    } else {
        const double k = e / (1.0 - nu * nu);
        d(0, 0) = d(1, 1) = k;
        d(0, 1) = d(1, 0) = k * nu;
        d(2, 2) = e / (2.0 * (1.0 + nu));
    }
    return d;
}

// Symmetric plane elasticity matrix in expanded component naming.
struct ElasticityMatrix {
    double d1111 = 0.0;
    double d1122 = 0.0;
    double d1112 = 0.0;
    double d2222 = 0.0;
    double d2212 = 0.0;
    double d1212 = 0.0;

    Eigen::Matrix3d voigt() const {
        Eigen::Matrix3d m;
        m << d1111, d1122, d1112, d1122, d2222, d2212, d1112, d2212, d1212;
        return m;
    }

    static ElasticityMatrix from_voigt(const Eigen::Matrix3d& m) {
        return {m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)};
    }

    // Component relabeling under a quarter turn of the material axes:
    // 1111 and 2222 trade places, the coupling terms pick up a sign.
    ElasticityMatrix quarter_turn() const {
        return {d2222, d1122, -d2212, d1111, -d1112, d1212};
    }
};

// Signed nodal level set; positive = crystal. Exact zeros are nudged to the
// crystal side so every node has a definite phase, and the nudge count is
// kept for reporting.
struct LevelSetField {
    Field2D psi;
    long perturbed = 0;
};

struct Tri {
    std::array<int, 3> n; // node ids, counterclockwise
};

struct SubTri {
    std::array<double, 3> x;
    std::array<double, 3> y;
    int sign = 0; // +1 crystal side, -1 amorphous side
};

struct CutElement {
    int tri = -1;
    std::vector<SubTri> parts;
};

struct Mesh {
    int rows = 0; // node grid
    int cols = 0;
    double dx = 1.0;
    std::vector<Tri> tris;
    std::vector<CutElement> cuts;
    std::vector<int> cut_of_tri;   // -1 for uncut
    std::vector<int> enrich_index; // per node, -1 or enriched slot
    int n_enriched = 0;
    long merged_slivers = 0;

    double node_x(int id) const { return (id % cols) * dx; }
    double node_y(int id) const { return (id / cols) * dx; }
};

// Ramp enrichment over one element, in shape-function coordinates:
// R = sum |psi_i| N_i - |sum psi_i N_i|. Zero at nodes and identically zero
// when all nodal signs agree.
inline double ramp(const std::array<double, 3>& psi, const std::array<double, 3>& shape) {
    double abs_sum = 0.0, sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        abs_sum += std::abs(psi[i]) * shape[i];
        sum += psi[i] * shape[i];
    }
    return abs_sum - std::abs(sum);
}

namespace detail {

inline double tri_area(const std::array<double, 3>& x, const std::array<double, 3>& y) {
    return 0.5 * std::abs((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]));
}

// Splits a sign-changing triangle into three subtriangles along the linear
// psi = 0 chord. Node `a` carries the minority sign; the crossings sit at
// t = psi_a / (psi_a - psi_other) along the two edges from `a`.
inline std::vector<SubTri> split_triangle(const std::array<double, 3>& px,
                                          const std::array<double, 3>& py,
                                          const std::array<double, 3>& psi) {
    int a = -1;
    if ((psi[0] > 0) == (psi[1] > 0)) a = 2;
    else if ((psi[0] > 0) == (psi[2] > 0)) a = 1;
    else a = 0;
    const int b = (a + 1) % 3, c = (a + 2) % 3;

    const double tb = psi[a] / (psi[a] - psi[b]);
    const double tc = psi[a] / (psi[a] - psi[c]);
    const double pbx = px[a] + tb * (px[b] - px[a]);
    const double pby = py[a] + tb * (py[b] - py[a]);
    const double pcx = px[a] + tc * (px[c] - px[a]);
    const double pcy = py[a] + tc * (py[c] - py[a]);

    const int sign_a = psi[a] > 0 ? 1 : -1;
    std::vector<SubTri> parts;
    parts.push_back({{px[a], pbx, pcx}, {py[a], pby, pcy}, sign_a});
    parts.push_back({{pbx, px[b], px[c]}, {pby, py[b], py[c]}, -sign_a});
    parts.push_back({{pbx, px[c], pcx}, {pby, py[c], pcy}, -sign_a});
    return parts;
}

} // namespace detail

// Builds the two-triangle-per-cell mesh (fixed diagonal from each cell's
// low corner to its high corner) and the nodal level set psi = 2*phi - 1.
inline std::pair<Mesh, LevelSetField> build_mesh(const Field2D& phi, double dx = 1.0) {
    if (phi.rows < 2 || phi.cols < 2)
        throw ShapeError("build_mesh: need at least a 2x2 node grid");

    LevelSetField ls;
    ls.psi = Field2D(phi.rows, phi.cols);
    for (std::size_t k = 0; k < phi.v.size(); ++k) {
        double psi = 2.0 * phi.v[k] - 1.0;
        if (psi == 0.0) {
            psi = 1e-12;
            ++ls.perturbed;
        }
        ls.psi.v[k] = psi;
    }

    Mesh mesh;
    mesh.rows = phi.rows;
    mesh.cols = phi.cols;
    mesh.dx = dx;
    mesh.tris.reserve(static_cast<std::size_t>(phi.rows - 1) * (phi.cols - 1) * 2);
    for (int i = 0; i + 1 < phi.rows; ++i) {
        for (int j = 0; j + 1 < phi.cols; ++j) {
            const int n00 = i * phi.cols + j;
            const int n01 = n00 + 1;
            const int n10 = n00 + phi.cols;
            const int n11 = n10 + 1;
            mesh.tris.push_back({{n00, n01, n11}});
            mesh.tris.push_back({{n00, n11, n10}});
        }
    }

    mesh.cut_of_tri.assign(mesh.tris.size(), -1);
    mesh.enrich_index.assign(static_cast<std::size_t>(phi.rows) * phi.cols, -1);
    for (std::size_t t = 0; t < mesh.tris.size(); ++t) {
        const Tri& tri = mesh.tris[t];
        std::array<double, 3> psi, px, py;
        for (int k = 0; k < 3; ++k) {
            psi[k] = ls.psi.v[tri.n[k]];
            px[k] = mesh.node_x(tri.n[k]);
            py[k] = mesh.node_y(tri.n[k]);
        }
        const bool cut = !((psi[0] > 0) == (psi[1] > 0) && (psi[1] > 0) == (psi[2] > 0));
        if (!cut) continue;

        auto parts = detail::split_triangle(px, py, psi);
        const double parent_area = detail::tri_area(px, py);
        bool sliver = false;
        for (const SubTri& s : parts)
            if (detail::tri_area(s.x, s.y) < 1e-14 * parent_area) sliver = true;
        if (sliver) {
            // Interface grazes a vertex; treat the element as single-phase by
            // the sign of psi at its centroid.
            ++mesh.merged_slivers;
            continue;
        }

        mesh.cut_of_tri[t] = static_cast<int>(mesh.cuts.size());
        mesh.cuts.push_back({static_cast<int>(t), std::move(parts)});
        for (int k = 0; k < 3; ++k) {
            int& slot = mesh.enrich_index[tri.n[k]];
            if (slot < 0) slot = mesh.n_enriched++;
        }
    }
    return {std::move(mesh), std::move(ls)};
}

inline std::pair<Mesh, LevelSetField> build_mesh(const Microstructure& m, double dx = 1.0) {
    return build_mesh(m.to_phi(), dx);
}

// Assembled free-free system: standard DOFs (2 per node) first, then
// enriched DOFs (2 per enriched node). No boundary conditions applied yet.
struct StiffnessSystem {
    Eigen::SparseMatrix<double> k;
    int n_nodes = 0;
    int n_std = 0;      // standard DOF count
    int n_enriched = 0; // enriched DOF count
    double crystal_fraction = 0.0; // area-weighted over the mesh
};

namespace detail {

// Constant gradients of the three linear shape functions on a triangle.
struct ShapeGrads {
    std::array<double, 3> bx, by;
    double area;
};

inline ShapeGrads shape_grads(const std::array<double, 3>& x,
                              const std::array<double, 3>& y) {
    const double det = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]);
    ShapeGrads g;
    g.area = 0.5 * std::abs(det);
    g.bx = {(y[1] - y[2]) / det, (y[2] - y[0]) / det, (y[0] - y[1]) / det};
    g.by = {(x[2] - x[1]) / det, (x[0] - x[2]) / det, (x[1] - x[0]) / det};
    return g;
}

// Barycentric coordinates of (qx, qy) in the triangle (x, y).
inline std::array<double, 3> barycentric(const std::array<double, 3>& x,
                                         const std::array<double, 3>& y,
                                         double qx, double qy) {
    const double det = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]);
    const double l1 = ((x[1] - qx) * (y[2] - qy) - (x[2] - qx) * (y[1] - qy)) / det;
    const double l2 = ((x[2] - qx) * (y[0] - qy) - (x[0] - qx) * (y[2] - qy)) / det;
    return {l1, l2, 1.0 - l1 - l2};
}

// Strain-displacement rows for one DOF pair given the gradient of its basis
// function: columns (ux, uy) contribute (e11, e22, g12) = (gx*ux, gy*uy,
// gy*ux + gx*uy).
inline void add_b_column(Eigen::Matrix<double, 3, Eigen::Dynamic>& b, int col,
                         double gx, double gy) {
    b(0, col) = gx;
    b(1, col) = 0.0;
    b(2, col) = gy;
    b(0, col + 1) = 0.0;
    b(1, col + 1) = gy;
    b(2, col + 1) = gx;
}

struct ElementQuad {
    // One integration point: weight (area share), B matrix evaluated there,
    // and the phase stiffness that applies.
    double weight;
    int sign;
    Eigen::Matrix<double, 3, Eigen::Dynamic> b;
};

// Integration-point decomposition of one element: a single centroid point
// for uncut elements (constant strain), or three mid-edge points per
// subtriangle for cut ones (their enriched basis is quadratic).
inline std::vector<ElementQuad> element_quadrature(const Mesh& mesh,
                                                   const LevelSetField& ls,
                                                   std::size_t t) {
    const Tri& tri = mesh.tris[t];
    std::array<double, 3> px, py, psi;
    for (int k = 0; k < 3; ++k) {
        px[k] = mesh.node_x(tri.n[k]);
        py[k] = mesh.node_y(tri.n[k]);
        psi[k] = ls.psi.v[tri.n[k]];
    }
    const ShapeGrads g = shape_grads(px, py);
    std::vector<ElementQuad> out;

    const int cut = mesh.cut_of_tri[t];
    if (cut < 0) {
        const double psic = (psi[0] + psi[1] + psi[2]) / 3.0;
        ElementQuad q;
        q.weight = g.area;
        q.sign = psic > 0 ? 1 : -1;
        q.b.resize(3, 6);
        for (int k = 0; k < 3; ++k) add_b_column(q.b, 2 * k, g.bx[k], g.by[k]);
        out.push_back(std::move(q));
        return out;
    }

    for (const SubTri& s : mesh.cuts[cut].parts) {
        const double sub_area = tri_area(s.x, s.y);
        // ramp restricted to this side of the interface: R = sum c_k N_k
        // with c_k = |psi_k| - sign * psi_k, linear over the subtriangle.
        std::array<double, 3> c;
        double rgx = 0.0, rgy = 0.0;
        for (int k = 0; k < 3; ++k) {
            c[k] = std::abs(psi[k]) - s.sign * psi[k];
            rgx += c[k] * g.bx[k];
            rgy += c[k] * g.by[k];
        }
        for (int e = 0; e < 3; ++e) {
            const double qx = 0.5 * (s.x[e] + s.x[(e + 1) % 3]);
            const double qy = 0.5 * (s.y[e] + s.y[(e + 1) % 3]);
            const auto n = barycentric(px, py, qx, qy);
            double r = 0.0;
            for (int k = 0; k < 3; ++k) r += c[k] * n[k];

            ElementQuad q;
            q.weight = sub_area / 3.0;
            q.sign = s.sign;
            q.b.resize(3, 12);
            for (int k = 0; k < 3; ++k) {
                add_b_column(q.b, 2 * k, g.bx[k], g.by[k]);
                // enriched basis N_k * R: product-rule gradient
                add_b_column(q.b, 6 + 2 * k, r * g.bx[k] + n[k] * rgx,
                             r * g.by[k] + n[k] * rgy);
            }
            out.push_back(std::move(q));
        }
    }
    return out;
}

// Element DOF ids: standard pairs for the three nodes, then enriched pairs
// when the element is cut.
inline std::vector<int> element_dofs(const Mesh& mesh, std::size_t t, int n_std) {
    const Tri& tri = mesh.tris[t];
    std::vector<int> dofs;
    for (int k = 0; k < 3; ++k) {
        dofs.push_back(2 * tri.n[k]);
        dofs.push_back(2 * tri.n[k] + 1);
    }
    if (mesh.cut_of_tri[t] >= 0) {
        for (int k = 0; k < 3; ++k) {
            const int slot = mesh.enrich_index[tri.n[k]];
            dofs.push_back(n_std + 2 * slot);
            dofs.push_back(n_std + 2 * slot + 1);
        }
    }
    return dofs;
}

} // namespace detail

inline StiffnessSystem assemble(const Mesh& mesh, const PhaseMaterials& mat,
                                const LevelSetField& ls) {
    mat.validate();
    const Eigen::Matrix3d d_c = isotropic_stiffness(mat.e_crystal, mat.nu_crystal, mat.formulation);
    const Eigen::Matrix3d d_a = isotropic_stiffness(mat.e_amorph, mat.nu_amorph, mat.formulation);

    StiffnessSystem sys;
    sys.n_nodes = mesh.rows * mesh.cols;
    sys.n_std = 2 * sys.n_nodes;
    sys.n_enriched = 2 * mesh.n_enriched;
    const int n = sys.n_std + sys.n_enriched;

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(mesh.tris.size() * 36 + mesh.cuts.size() * 108);
    double crystal_area = 0.0, total_area = 0.0;

    for (std::size_t t = 0; t < mesh.tris.size(); ++t) {
        const auto quads = detail::element_quadrature(mesh, ls, t);
        const auto dofs = detail::element_dofs(mesh, t, sys.n_std);
        const int m = static_cast<int>(dofs.size());
        Eigen::MatrixXd ke = Eigen::MatrixXd::Zero(m, m);
        for (const auto& q : quads) {
            const Eigen::Matrix3d& d = q.sign > 0 ? d_c : d_a;
            ke.noalias() += q.weight * q.b.transpose() * d * q.b;
            total_area += q.weight;
            if (q.sign > 0) crystal_area += q.weight;
        }
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b)
                trips.emplace_back(dofs[a], dofs[b], ke(a, b));
    }

    sys.crystal_fraction = crystal_area / total_area;
    sys.k.resize(n, n);
    sys.k.setFromTriplets(trips.begin(), trips.end());
    return sys;
}

// ---------------------------------------------------------------------------
// Periodic homogenization

struct HomogenizeOptions {
    // Average with the quarter-turned solve so the reported D transforms
    // exactly under 90-degree rotations despite the fixed mesh diagonal.
    bool rotation_average = true;
    // Collect nodal-averaged stress per load case (3 cases x 3 components).
    bool nodal_stress = false;
};

struct HomogenizeResult {
    ElasticityMatrix d;
    double asymmetry = 0.0; // max relative asymmetry before symmetrization
    bool bounds_warning = false;
    double crystal_fraction = 0.0; // mesh-area weighted
    long perturbed_nodes = 0;
    long merged_slivers = 0;
    // filled only when options.nodal_stress is set: {3 cases, 3, rows, cols}
    std::vector<float> nodal_stress;
    int stress_rows = 0;
    int stress_cols = 0;
};

namespace detail {

// Macro strain tensors for the three unit load cases (e11, e22, g12).
inline Eigen::Matrix2d macro_strain(int pattern) {
    Eigen::Matrix2d e = Eigen::Matrix2d::Zero();
    if (pattern == 0) e(0, 0) = 1.0;
    if (pattern == 1) e(1, 1) = 1.0;
    if (pattern == 2) e(0, 1) = e(1, 0) = 0.5;
    return e;
}

struct PeriodicMap {
    // reduced index per full DOF, -1 for the pinned corner
    std::vector<int> red;
    // paired master node per node (or self)
    std::vector<int> master;
    // slave-node coordinate offset (dx, dy) against its master
    std::vector<Eigen::Vector2d> delta;
    int n_reduced = 0;
};

inline PeriodicMap periodic_map(const Mesh& mesh, int n_std, int n_enr) {
    PeriodicMap pm;
    const int nodes = mesh.rows * mesh.cols;
    pm.master.resize(nodes);
    pm.delta.assign(nodes, Eigen::Vector2d::Zero());
    const double lx = (mesh.cols - 1) * mesh.dx;
    const double ly = (mesh.rows - 1) * mesh.dx;
    for (int i = 0; i < mesh.rows; ++i) {
        for (int j = 0; j < mesh.cols; ++j) {
            const int id = i * mesh.cols + j;
            const bool right = j == mesh.cols - 1;
            const bool top = i == mesh.rows - 1;
            int mi = top ? 0 : i, mj = right ? 0 : j;
            pm.master[id] = mi * mesh.cols + mj;
            pm.delta[id] = Eigen::Vector2d(right ? lx : 0.0, top ? ly : 0.0);
        }
    }
    pm.red.assign(n_std + n_enr, -1);
    int next = 0;
    for (int node = 0; node < nodes; ++node) {
        if (pm.master[node] != node) continue; // slave, resolved below
        if (node == 0) continue;               // pinned corner
        pm.red[2 * node] = next++;
        pm.red[2 * node + 1] = next++;
    }
    for (int node = 0; node < nodes; ++node) {
        const int m = pm.master[node];
        if (m == node) continue;
        pm.red[2 * node] = pm.red[2 * m];
        pm.red[2 * node + 1] = pm.red[2 * m + 1];
    }
    for (int d = n_std; d < n_std + n_enr; ++d) pm.red[d] = next++;
    pm.n_reduced = next;
    return pm;
}

// Offset vector g: u_full = P u_red + g, with g carrying the macro-strain
// jumps on slave nodes (pinned corner included as zero).
inline Eigen::VectorXd offsets(const PeriodicMap& pm, const Eigen::Matrix2d& e,
                               int n_std, int n_enr) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n_std + n_enr);
    const int nodes = n_std / 2;
    for (int node = 0; node < nodes; ++node) {
        const Eigen::Vector2d off = e * pm.delta[node];
        g[2 * node] = off[0];
        g[2 * node + 1] = off[1];
    }
    return g;
}

inline Eigen::SparseMatrix<double> projection(const PeriodicMap& pm, int n) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(n);
    for (int d = 0; d < n; ++d)
        if (pm.red[d] >= 0) trips.emplace_back(d, pm.red[d], 1.0);
    Eigen::SparseMatrix<double> p(n, pm.n_reduced);
    p.setFromTriplets(trips.begin(), trips.end());
    return p;
}

struct RawResult {
    Eigen::Matrix3d d;
    double crystal_fraction;
    long perturbed_nodes = 0;
    long merged_slivers = 0;
    // per pattern, nodal-averaged stress (3 components x nodes)
    std::vector<Eigen::MatrixXd> nodal_stress;
};

// Single-orientation homogenization: one factorization, three load cases.
inline RawResult homogenize_raw(const Field2D& phi, const PhaseMaterials& mat,
                                bool want_stress) {
    auto [mesh, ls] = build_mesh(phi);
    StiffnessSystem sys = assemble(mesh, mat, ls);
    const int n = sys.n_std + sys.n_enriched;
    const PeriodicMap pm = periodic_map(mesh, sys.n_std, sys.n_enriched);
    const Eigen::SparseMatrix<double> p = projection(pm, n);
    const Eigen::SparseMatrix<double> k_red =
        Eigen::SparseMatrix<double>(p.transpose()) * sys.k * p;

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    solver.compute(k_red);
    if (solver.info() != Eigen::Success)
        throw SolveFailure("periodic stiffness factorization failed");

    const Eigen::Matrix3d d_c =
        isotropic_stiffness(mat.e_crystal, mat.nu_crystal, mat.formulation);
    const Eigen::Matrix3d d_a =
        isotropic_stiffness(mat.e_amorph, mat.nu_amorph, mat.formulation);

    RawResult out;
    out.crystal_fraction = sys.crystal_fraction;
    out.perturbed_nodes = ls.perturbed;
    out.merged_slivers = mesh.merged_slivers;
    const double total_area = (mesh.rows - 1) * (mesh.cols - 1) * mesh.dx * mesh.dx;

    for (int pattern = 0; pattern < 3; ++pattern) {
        const Eigen::VectorXd g = offsets(pm, macro_strain(pattern), sys.n_std, sys.n_enriched);
        const Eigen::VectorXd rhs = -(p.transpose() * (sys.k * g));
        const Eigen::VectorXd u_red = solver.solve(rhs);
        if (solver.info() != Eigen::Success)
            throw SolveFailure("periodic solve failed");
        const double rel_res = (k_red * u_red - rhs).norm() /
                               std::max(rhs.norm(), 1e-300);
        if (rel_res > 1e-8)
            throw SolveFailure("periodic solve residual " + std::to_string(rel_res));
        const Eigen::VectorXd u = p * u_red + g;

        // Volume-averaged stress; element stress is evaluated at the same
        // integration points used for the stiffness, so the average is exact
        // for the piecewise-polynomial solution.
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        Eigen::MatrixXd node_acc;
        Eigen::VectorXd node_w;
        if (want_stress) {
            node_acc = Eigen::MatrixXd::Zero(3, sys.n_nodes);
            node_w = Eigen::VectorXd::Zero(sys.n_nodes);
        }
        for (std::size_t t = 0; t < mesh.tris.size(); ++t) {
            const auto quads = element_quadrature(mesh, ls, t);
            const auto dofs = element_dofs(mesh, t, sys.n_std);
            Eigen::VectorXd ue(dofs.size());
            for (std::size_t a = 0; a < dofs.size(); ++a) ue[a] = u[dofs[a]];
            Eigen::Vector3d elem_mean = Eigen::Vector3d::Zero();
            double elem_area = 0.0;
            for (const auto& q : quads) {
                const Eigen::Matrix3d& d = q.sign > 0 ? d_c : d_a;
                const Eigen::Vector3d sig = d * (q.b * ue);
                mean += q.weight * sig;
                elem_mean += q.weight * sig;
                elem_area += q.weight;
            }
            if (want_stress) {
                elem_mean /= elem_area;
                for (int k = 0; k < 3; ++k) {
                    const int node = mesh.tris[t].n[k];
                    node_acc.col(node) += elem_area * elem_mean;
                    node_w[node] += elem_area;
                }
            }
        }
        mean /= total_area;
        out.d.col(pattern) = mean;
        if (want_stress) {
            for (int node = 0; node < sys.n_nodes; ++node)
                node_acc.col(node) /= std::max(node_w[node], 1e-300);
            out.nodal_stress.push_back(std::move(node_acc));
        }
    }
    return out;
}

} // namespace detail

// Voigt (arithmetic) and Reuss (harmonic) mixture bounds for one stiffness
// entry at crystal fraction f.
inline double voigt_bound(double f, double dc, double da) {
    return f * dc + (1.0 - f) * da;
}
inline double reuss_bound(double f, double dc, double da) {
    return 1.0 / (f / dc + (1.0 - f) / da);
}

inline HomogenizeResult homogenize(const Microstructure& m, const PhaseMaterials& mat,
                                   const HomogenizeOptions& opt = {}) {
    mat.validate();
    const Field2D phi = m.to_phi();

    const auto rel_asymmetry = [](const Eigen::Matrix3d& d) {
        return (d - d.transpose()).cwiseAbs().maxCoeff() /
               std::max(d.cwiseAbs().maxCoeff(), 1e-300);
    };

    detail::RawResult raw = detail::homogenize_raw(phi, mat, opt.nodal_stress);
    HomogenizeResult res;
    res.asymmetry = rel_asymmetry(raw.d);
    res.perturbed_nodes = raw.perturbed_nodes;
    res.merged_slivers = raw.merged_slivers;
    Eigen::Matrix3d d_sym = 0.5 * (raw.d + raw.d.transpose());
    double fraction = raw.crystal_fraction;
    if (opt.rotation_average) {
        const detail::RawResult rot = detail::homogenize_raw(rot90_field(phi), mat, false);
        res.asymmetry = std::max(res.asymmetry, rel_asymmetry(rot.d));
        // Map the rotated-frame answer back: D undergoes the inverse quarter
        // turn, which relabels 1111<->2222 and flips the coupling signs.
        const Eigen::Matrix3d back =
            ElasticityMatrix::from_voigt(0.5 * (rot.d + rot.d.transpose()))
                .quarter_turn()
                .voigt();
        d_sym = 0.5 * (d_sym + back);
        fraction = 0.5 * (fraction + rot.crystal_fraction);
    }
    res.d = ElasticityMatrix::from_voigt(d_sym);
    res.crystal_fraction = fraction;

    const Eigen::Matrix3d d_c =
        isotropic_stiffness(mat.e_crystal, mat.nu_crystal, mat.formulation);
    const Eigen::Matrix3d d_a =
        isotropic_stiffness(mat.e_amorph, mat.nu_amorph, mat.formulation);
    for (int i : {0, 1}) {
        const double v = voigt_bound(fraction, d_c(i, i), d_a(i, i));
        const double r = reuss_bound(fraction, d_c(i, i), d_a(i, i));
        const double x = d_sym(i, i);
        if (x > v * (1.0 + 1e-3) || x < r * (1.0 - 1e-3)) res.bounds_warning = true;
    }

    if (opt.nodal_stress) {
        res.stress_rows = m.rows;
        res.stress_cols = m.cols;
        res.nodal_stress.reserve(static_cast<std::size_t>(9) * m.rows * m.cols);
        for (int pattern = 0; pattern < 3; ++pattern)
            for (int comp = 0; comp < 3; ++comp)
                for (int node = 0; node < m.rows * m.cols; ++node)
                    res.nodal_stress.push_back(
                        static_cast<float>(raw.nodal_stress[pattern](comp, node)));
    }
    return res;
}

// Isotropic constants recovered from an effective stiffness: exact inverse
// of the plane-strain construction.
inline std::pair<double, double> effective_constants(const ElasticityMatrix& d) {
    const double m = 0.5 * (d.d1111 + d.d2222);
    const double mu = d.d1212;
    if (!(mu > 0.0) || m <= mu)
        throw DegenerateModuli("effective_constants: need (D1111+D2222)/2 > D1212 > 0");
    const double e = mu * (3.0 * m - 4.0 * mu) / (m - mu);
    const double nu = (m - 2.0 * mu) / (2.0 * (m - mu));
    return {e, nu};
}

} // namespace micrograin::homogenization
