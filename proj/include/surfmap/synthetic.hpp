#pragma once

// Small self-contained input set: a 1280 x 1280 pixel map at 5 ft with three
// geologic units, DEM and imagery tiles, line layers, a second region's patch
// index, model score tables and a ready-to-run config.

#include "surfmap/evalkit.hpp"
#include "surfmap/geojson.hpp"
#include "surfmap/patchgen.hpp"
#include "surfmap/pipeline.hpp"
#include "surfmap/raster.hpp"
#include "surfmap/raster_io.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace surfmap::synthetic {

constexpr double kX0 = 1'500'000.0;
constexpr double kY0 = 600'000.0;
constexpr double kSide = 6400.0;  // 1280 px at 5 ft
constexpr double kPixel = 5.0;
inline const std::string kCrs = "EPSG:3089";
inline const std::string kMapCode = "syn";

/// Uniform double in [0, 1) from raw generator output.
inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// x of the two unit boundaries at height y (local coordinates).
inline double boundary_x(int which, double y) {
    return which == 0 ? 2100.0 + 180.0 * std::sin(y / 700.0) : 4300.0 + 140.0 * std::cos(y / 900.0);
}

inline double valley_center(double y) { return 0.5 * (boundary_x(0, y) + boundary_x(1, y)); }

inline double elevation(double x, double y) {
    const double d = (x - valley_center(y)) / 1100.0;
    return 900.0 - 70.0 * std::exp(-d * d) + 35.0 * std::sin(x / 800.0) * std::cos(y / 1100.0) + 0.015 * y;
}

inline VectorLayer geology() {
    const double step = 400.0;
    std::vector<Point> b0, b1;
    for (double y = 0; y <= kSide + 1e-9; y += step) {
        b0.push_back({kX0 + boundary_x(0, y), kY0 + y});
        b1.push_back({kX0 + boundary_x(1, y), kY0 + y});
    }
    auto poly = [](std::vector<Point> left, std::vector<Point> right, GeologicClass cls, std::string id) {
        Polygon p;
        p.exterior = left;
        for (auto it = right.rbegin(); it != right.rend(); ++it) p.exterior.push_back(*it);
        p.exterior.push_back(p.exterior.front());
        p.cls = cls;
        p.id = std::move(id);
        normalize_orientation(p);
        return p;
    };
    const std::vector<Point> west{{kX0, kY0}, {kX0, kY0 + kSide}};
    const std::vector<Point> east{{kX0 + kSide, kY0}, {kX0 + kSide, kY0 + kSide}};
    VectorLayer l;
    l.polygons.push_back(poly(west, b0, GeologicClass::Qr, "unit_west"));
    l.polygons.push_back(poly(b0, b1, GeologicClass::Qal, "unit_valley"));
    l.polygons.push_back(poly(b1, east, GeologicClass::Qc, "unit_east"));
    return l;
}

inline void write_dem_tiles(const std::filesystem::path& dir, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(seed);
    const int n = 700;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            GridGeometry g;
            g.origin_x = kX0 - 52.5 + j * 3200.0;
            g.origin_y = kY0 + kSide + 52.5 - i * 3200.0;
            g.pixel_size = kPixel;
            g.rows = n;
            g.cols = n;
            g.crs_id = kCrs;
            Raster r(g, 0.0, "ft");
            for (int row = 0; row < n; ++row)
                for (int col = 0; col < n; ++col)
                    r.at(row, col) = elevation(g.center_x(col) - kX0, g.center_y(row) - kY0) + 0.05 * (unit(rng) - 0.5);
            write_geotiff((dir / ("dem_" + std::to_string(i) + std::to_string(j) + ".tif")).string(), r);
        }
}

inline void write_imagery_tiles(const std::filesystem::path& dir, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(seed + 1);
    const double px = 10.0;
    for (int j = 0; j < 2; ++j) {
        GridGeometry g;
        g.origin_x = kX0 - 100.0 + j * 3200.0;
        g.origin_y = kY0 + kSide + 100.0;
        g.pixel_size = px;
        g.rows = 660;
        g.cols = 340;
        g.crs_id = kCrs;
        std::vector<Raster> bands(4, Raster(g));
        for (int row = 0; row < g.rows; ++row)
            for (int col = 0; col < g.cols; ++col) {
                const double x = g.center_x(col) - kX0, y = g.center_y(row) - kY0;
                const int unit_idx = x < boundary_x(0, y) ? 0 : (x < boundary_x(1, y) ? 1 : 2);
                const double shade = (elevation(x, y) - 850.0) * 0.8;
                const double base[3][4] = {{120, 100, 80, 140}, {80, 120, 70, 190}, {140, 125, 100, 120}};
                for (int b = 0; b < 4; ++b)
                    bands[static_cast<std::size_t>(b)].at(row, col) =
                        std::clamp(std::round(base[unit_idx][b] + shade + 10.0 * (unit(rng) - 0.5)), 0.0, 254.0);
            }
        write_geotiff((dir / ("img_" + std::to_string(j) + ".tif")).string(), std::span<const Raster>(bands),
                      GeoTiffOptions{SampleType::UInt8, std::nullopt, true});
    }
}

inline VectorLayer lines(LineSource source) {
    VectorLayer l;
    if (source == LineSource::Hydro) {
        PolyLine river{{}, LineSource::Hydro, "river"};
        for (double y = -300; y <= kSide + 300; y += 200) river.points.push_back({kX0 + valley_center(y), kY0 + y});
        l.lines.push_back(river);
        l.lines.push_back({{{kX0 + 800, kY0 + 5200}, {kX0 + 1900, kY0 + 4300}, {kX0 + valley_center(3900), kY0 + 3900}}, LineSource::Hydro, "creek"});
    } else {
        l.lines.push_back({{{kX0 - 200, kY0 + 3100}, {kX0 + 3000, kY0 + 3300}, {kX0 + kSide + 200, kY0 + 2800}}, LineSource::Infra, "road"});
        l.lines.push_back({{{kX0 + 5000, kY0 - 100}, {kX0 + 5100, kY0 + 3000}}, LineSource::Infra, "lane"});
    }
    return l;
}

/// Patch index of a second, disjoint region (5 x 5 patches).
inline std::vector<PatchSpec> cross_region_patches() {
    const double side = 768 * kPixel;
    const double x0 = kX0 + 20000, y0 = kY0;
    Polygon p;
    p.exterior = Rect{x0, y0, x0 + side, y0 + side}.ring();
    GridGeometry g;
    g.origin_x = x0;
    g.origin_y = y0 + side;
    g.pixel_size = kPixel;
    g.rows = 768;
    g.cols = 768;
    g.crs_id = kCrs;
    return generate_grid(derive_aoi({p}), g, 256, 0.5, kMapCode + "x");
}

inline ScoreTable score_table(const std::vector<std::string>& ids, std::uint64_t seed, double noise) {
    std::mt19937_64 rng(seed);
    const double rate[kNumClasses] = {0.05, 0.6, 0.1, 0.15, 0.5, 0.2, 0.55};
    ScoreTable t;
    for (const auto& id : ids) {
        ScoreRow r;
        r.patch_id = id;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            r.targets[k] = unit(rng) < rate[k];
            const double logit = (r.targets[k] ? 1.5 : -1.5) + noise * (unit(rng) + unit(rng) + unit(rng) - 1.5) * 2.0;
            r.scores[k] = std::round(1e6 / (1.0 + std::exp(-logit))) / 1e6;
        }
        t.push_back(std::move(r));
    }
    return t;
}

/// Writes every input plus config.ini into dir; returns the config path.
inline std::filesystem::path write_inputs(const std::filesystem::path& dir, std::uint64_t seed = 42) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_geojson((dir / "geology.geojson").string(), geology());
    write_geojson((dir / "hydro.geojson").string(), lines(LineSource::Hydro));
    write_geojson((dir / "infra.geojson").string(), lines(LineSource::Infra));
    write_dem_tiles(dir / "dem", seed);
    write_imagery_tiles(dir / "imagery", seed);
    const auto cross = cross_region_patches();
    write_patch_index((dir / "cross_patches.geojson").string(), cross, kCrs);

    std::vector<std::string> in_ids, cross_ids;
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 9; ++c) in_ids.push_back(patch_id(kMapCode, r, c));
    for (const auto& p : cross) cross_ids.push_back(p.patch_id);
    fs::create_directories(dir / "scores");
    write_text_file((dir / "scores" / "DEM_in.csv").string(), score_table_csv(score_table(in_ids, seed + 2, 1.0)));
    write_text_file((dir / "scores" / "DEM_cross.csv").string(), score_table_csv(score_table(cross_ids, seed + 3, 1.6)));

    PipelineConfig cfg;
    cfg.crs = kCrs;
    cfg.map_code = kMapCode;
    cfg.n_test = 4;
    cfg.n_val = 2;
    cfg.seed = seed;
    cfg.cross_index = "cross_patches.geojson";
    cfg.models = {"DEM"};
    const fs::path path = dir / "config.ini";
    write_text_file(path.string(), config_template(cfg));
    return path;
}

}  // namespace surfmap::synthetic
