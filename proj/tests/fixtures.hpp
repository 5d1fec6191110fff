#pragma once

// Geometry builders shared by the unit tests.

#include "surfmap/raster.hpp"
#include "surfmap/vector.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace fixture {

using namespace surfmap;

inline Polygon rect_poly(double x0, double y0, double x1, double y1, GeologicClass cls = GeologicClass::Qal, std::string id = "p") {
    Polygon p;
    p.exterior = Rect{x0, y0, x1, y1}.ring();
    p.cls = cls;
    p.id = std::move(id);
    return p;
}

/// Simple polygon: vertices at increasing angles around a center with random radii.
inline Polygon star(std::mt19937& rng, double cx, double cy, double rmin, double rmax, int n) {
    std::uniform_real_distribution<double> rad(rmin, rmax);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    Polygon p;
    for (int i = 0; i < n; ++i) {
        const double t = (i + 0.5 + jitter(rng)) * 2.0 * std::numbers::pi / n;
        const double r = rad(rng);
        p.exterior.push_back({cx + r * std::cos(t), cy + r * std::sin(t)});
    }
    p.exterior.push_back(p.exterior.front());
    p.cls = GeologicClass::Qc;
    p.id = "star";
    return p;
}

inline GridGeometry grid(double ox, double oy, double px, int rows, int cols) {
    GridGeometry g;
    g.origin_x = ox;
    g.origin_y = oy;
    g.pixel_size = px;
    g.rows = rows;
    g.cols = cols;
    g.crs_id = "EPSG:3089";
    return g;
}

/// Quadrilaterals tiling the rectangle: an n x m lattice whose interior
/// vertices are jittered, each cell given a random class from `classes`.
inline std::vector<Polygon> jittered_tiling(std::mt19937& rng, const Rect& r, int n, int m, const std::vector<GeologicClass>& classes) {
    std::uniform_real_distribution<double> jit(-0.3, 0.3);
    std::uniform_int_distribution<std::size_t> pick(0, classes.size() - 1);
    const double dx = r.width() / m, dy = r.height() / n;
    std::vector<Point> v(static_cast<std::size_t>((n + 1) * (m + 1)));
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= m; ++j) {
            Point p{r.min_x + j * dx, r.min_y + i * dy};
            if (i > 0 && i < n) p.y += jit(rng) * dy;
            if (j > 0 && j < m) p.x += jit(rng) * dx;
            v[static_cast<std::size_t>(i * (m + 1) + j)] = p;
        }
    auto at = [&](int i, int j) { return v[static_cast<std::size_t>(i * (m + 1) + j)]; };
    std::vector<Polygon> out;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            Polygon p;
            p.exterior = {at(i, j), at(i, j + 1), at(i + 1, j + 1), at(i + 1, j), at(i, j)};
            p.cls = classes[pick(rng)];
            p.id = "t" + std::to_string(i) + "_" + std::to_string(j);
            out.push_back(std::move(p));
        }
    return out;
}

}  // namespace fixture
