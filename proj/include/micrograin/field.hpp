// 2D scalar fields on a periodic grid and binarized microstructure rasters.
#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "micrograin/errors.hpp"

namespace micrograin {

// Row-major scalar field. Periodic neighbor access goes through wrap().
struct Field2D {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Field2D() = default;
    Field2D(int r, int c, double fill = 0.0) : rows(r), cols(c), v(checked_size(r, c), fill) {}

    static std::size_t checked_size(int r, int c) {
        if (r <= 0 || c <= 0) throw ShapeError("Field2D: non-positive dimensions");
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(c);
    }

    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }

    static int wrap(int i, int n) {
        i %= n;
        return i < 0 ? i + n : i;
    }

    double at_wrap(int i, int j) const { return at(wrap(i, rows), wrap(j, cols)); }

    std::size_t size() const { return v.size(); }

    bool same_shape(const Field2D& o) const { return rows == o.rows && cols == o.cols; }
};

// Binary crystal (1) / amorphous (0) raster with provenance.
struct Microstructure {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> cells;
    double tc = 0.0;              // crystallization temperature label, degC
    std::uint64_t seed = 0;
    double crystal_fraction = 0.0;

    Microstructure() = default;
    Microstructure(int r, int c, std::vector<std::uint8_t> data, double tc_, std::uint64_t seed_)
        : rows(r), cols(c), cells(std::move(data)), tc(tc_), seed(seed_) {
        if (cells.size() != static_cast<std::size_t>(r) * c)
            throw ShapeError("Microstructure: cell count does not match dimensions");
        recompute_fraction();
    }

    std::uint8_t at(int i, int j) const { return cells[static_cast<std::size_t>(i) * cols + j]; }
    std::uint8_t& at(int i, int j) { return cells[static_cast<std::size_t>(i) * cols + j]; }

    void recompute_fraction() {
        std::size_t n = 0;
        for (auto c : cells) n += c;
        crystal_fraction = cells.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(cells.size());
    }

    // phi >= 0.5 counts as crystal, matching the nucleation convention that
    // phi < 0.5 is amorphous.
    static Microstructure from_phi(const Field2D& phi, double tc, std::uint64_t seed) {
        std::vector<std::uint8_t> cells(phi.size());
        for (std::size_t k = 0; k < phi.size(); ++k) cells[k] = phi.v[k] >= 0.5 ? 1 : 0;
        return Microstructure(phi.rows, phi.cols, std::move(cells), tc, seed);
    }

    Field2D to_phi() const {
        Field2D f(rows, cols);
        for (std::size_t k = 0; k < cells.size(); ++k) f.v[k] = cells[k] ? 1.0 : 0.0;
        return f;
    }
};

// Quarter-turn counterclockwise: out(i, j) = in(j, R_out - 1 - i) with
// out dims (cols x rows). Used to cancel mesh-orientation bias.
inline Field2D rot90_field(const Field2D& in) {
    Field2D out(in.cols, in.rows);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j)
            out.at(i, j) = in.at(j, out.rows - 1 - i);
    return out;
}

inline Field2D rot180_field(const Field2D& in) {
    Field2D out(in.rows, in.cols);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j)
            out.at(i, j) = in.at(in.rows - 1 - i, in.cols - 1 - j);
    return out;
}

// Mirror across the horizontal axis (row order reversed).
inline Field2D flip_x1_field(const Field2D& in) {
    Field2D out(in.rows, in.cols);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j)
            out.at(i, j) = in.at(in.rows - 1 - i, j);
    return out;
}

// Crystal area divided by interface perimeter, in grid units. Periodic
// 4-neighborhood. Returns +inf for interface-free rasters.
inline double crystal_thickness(const Microstructure& m) {
    long area = 0;
    long edges = 0;
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            const int c = m.at(i, j);
            area += c;
            if (c != m.at((i + 1) % m.rows, j)) ++edges;
            if (c != m.at(i, (j + 1) % m.cols)) ++edges;
        }
    }
    if (edges == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(area) / static_cast<double>(edges);
}

} // namespace micrograin
