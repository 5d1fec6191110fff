#pragma once

// Overlapping patch grid over an area of interest, per-patch class labels,
// channel extraction and the patch index files.

#include "surfmap/geojson.hpp"
#include "surfmap/raster.hpp"
#include "surfmap/raster_io.hpp"
#include "surfmap/terrain.hpp"
#include "surfmap/util.hpp"
#include "surfmap/vector.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace surfmap {

struct PatchSpec {
    std::string patch_id;
    int pixel_row0 = 0;  ///< on the reference grid
    int pixel_col0 = 0;
    int size = 256;
    Rect geo_rect;
};

struct LabelRecord {
    std::string patch_id;
    std::array<bool, kNumClasses> onehot{};
    std::array<double, kNumClasses> proportions{};
};

/// Channels that are stored as 8-bit class or presence codes.
inline bool is_categorical_channel(const std::string& name) { return name == "mask" || name == "nhd" || name == "osm"; }

/// Ordered feature names of every per-patch file.
inline std::vector<std::string> channel_manifest(const TerrainConfig& cfg = {}) {
    std::vector<std::string> names{"mask", "red", "green", "blue", "nir", "dem", "nhd", "osm"};
    for (const char* prefix : {"slope", "prc", "plc"})
        for (double r : cfg.resolutions) names.push_back(std::string(prefix) + "_" + scale_token(r));
    for (const char* prefix : {"sds", "ep"})
        for (int k : cfg.kernels) names.push_back(std::string(prefix) + "_" + std::to_string(k));
    return names;
}

inline std::string patch_id(const std::string& map_code, int grid_row, int grid_col) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%04d_%04d", grid_row, grid_col);
    return map_code + buf;
}

namespace detail {

inline Polygon rect_polygon(const Rect& r) {
    Polygon p;
    p.exterior = r.ring();
    return p;
}

/// Corners and edge midpoints on or inside the AOI, and no AOI area missing.
inline bool rect_inside(const Rect& r, const MultiPolygon& aoi, const std::vector<Rect>& part_boxes) {
    const double mx = 0.5 * (r.min_x + r.max_x), my = 0.5 * (r.min_y + r.max_y);
    const Point probes[] = {{r.min_x, r.min_y}, {r.max_x, r.min_y}, {r.max_x, r.max_y}, {r.min_x, r.max_y},
                            {mx, r.min_y},      {r.max_x, my},      {mx, r.max_y},      {r.min_x, my}};
    for (const Point& p : probes)
        if (locate(p, aoi) == Location::Outside) return false;
    double covered = 0.0;
    for (std::size_t i = 0; i < aoi.size(); ++i)
        if (part_boxes[i].touches(r)) covered += rect_intersection_area(aoi[i], r);
    return std::abs(covered - r.area()) <= 1e-6;
}

}  // namespace detail

/// Row-major grid of size x size windows at stride size * (1 - overlap),
/// anchored at the first reference-grid corner inside the AOI bounding box;
/// only windows fully inside the AOI (and the reference raster) are kept.
inline std::vector<PatchSpec> generate_grid(const MultiPolygon& aoi, const GridGeometry& geom, int size = 256,
                                            double overlap = 0.5, const std::string& map_code = "map") {
    geom.validate();
    if (size < 1) throw std::invalid_argument("generate_grid: patch size must be positive");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw std::invalid_argument("generate_grid: overlap must be in [0, 1)");
    const double stride_f = size * (1.0 - overlap);
    const int stride = static_cast<int>(std::lround(stride_f));
    if (stride < 1 || std::abs(stride_f - stride) > 1e-9) throw std::invalid_argument("generate_grid: stride is not a whole number of pixels");
    if (aoi.empty()) throw std::invalid_argument("generate_grid: empty AOI");

    const Rect box = bounds(aoi);
    const double px = geom.pixel_size;
    const double eps = 1e-9;
    const int col_lo = std::max(0, static_cast<int>(std::ceil((box.min_x - geom.origin_x) / px - eps)));
    const int row_lo = std::max(0, static_cast<int>(std::ceil((geom.origin_y - box.max_y) / px - eps)));
    const int col_hi = std::min(geom.cols, static_cast<int>(std::floor((box.max_x - geom.origin_x) / px + eps)));
    const int row_hi = std::min(geom.rows, static_cast<int>(std::floor((geom.origin_y - box.min_y) / px + eps)));
    if (col_hi - col_lo < size || row_hi - row_lo < size) throw std::invalid_argument("generate_grid: AOI smaller than one patch");

    std::vector<Rect> part_boxes;
    for (const auto& p : aoi) part_boxes.push_back(bounds(p));

    struct Candidate {
        int gi, gj, r0, c0;
    };
    std::vector<Candidate> cands;
    for (int gi = 0, r0 = row_lo; r0 + size <= row_hi; ++gi, r0 += stride)
        for (int gj = 0, c0 = col_lo; c0 + size <= col_hi; ++gj, c0 += stride) cands.push_back({gi, gj, r0, c0});

    std::vector<std::uint8_t> keep(cands.size(), 0);
    std::vector<Rect> rects(cands.size());
    parallel_rows(static_cast<int>(cands.size()), [&](int b, int e) {
        for (int i = b; i < e; ++i) {
            const auto& c = cands[static_cast<std::size_t>(i)];
            const Rect r{geom.origin_x + c.c0 * px, geom.origin_y - (c.r0 + size) * px, geom.origin_x + (c.c0 + size) * px,
                         geom.origin_y - c.r0 * px};
            rects[static_cast<std::size_t>(i)] = r;
            keep[static_cast<std::size_t>(i)] = detail::rect_inside(r, aoi, part_boxes) ? 1 : 0;
        }
    });
    std::vector<PatchSpec> out;
    for (std::size_t i = 0; i < cands.size(); ++i)
        if (keep[i]) out.push_back({patch_id(map_code, cands[i].gi, cands[i].gj), cands[i].r0, cands[i].c0, size, rects[i]});
    return out;
}

/// Area fraction of each class inside the patch rectangle.
inline LabelRecord compute_labels(const PatchSpec& patch, const std::vector<Polygon>& geology) {
    LabelRecord rec;
    rec.patch_id = patch.patch_id;
    const double area = patch.geo_rect.area();
    if (!(area > 0.0)) return rec;
    std::array<double, kNumClasses> covered{};
    for (const auto& p : geology) {
        if (p.cls == GeologicClass::None) continue;
        if (!bounds(p).overlaps(patch.geo_rect)) continue;
        covered[static_cast<std::size_t>(class_index(p.cls))] += rect_intersection_area(p, patch.geo_rect);
    }
    const double threshold = 1.0 / (static_cast<double>(patch.size) * patch.size);
    for (std::size_t k = 0; k < covered.size(); ++k) {
        rec.proportions[k] = covered[k] / area;
        rec.onehot[k] = rec.proportions[k] >= threshold;
    }
    return rec;
}

inline std::vector<LabelRecord> compute_labels(const std::vector<PatchSpec>& patches, const std::vector<Polygon>& geology) {
    std::vector<LabelRecord> out(patches.size());
    parallel_rows(static_cast<int>(patches.size()), [&](int b, int e) {
        for (int i = b; i < e; ++i) out[static_cast<std::size_t>(i)] = compute_labels(patches[static_cast<std::size_t>(i)], geology);
    });
    return out;
}

using ChannelStack = std::vector<std::pair<std::string, Raster>>;

/// Windows of every manifest channel for one patch, in manifest order.
inline std::vector<Raster> extract_channels(const ChannelStack& stack, const PatchSpec& patch, const std::vector<std::string>& manifest) {
    std::map<std::string, const Raster*> by_name;
    for (const auto& [name, r] : stack) by_name[name] = &r;
    std::vector<Raster> out;
    out.reserve(manifest.size());
    for (const auto& name : manifest) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw std::invalid_argument("extract_channels: missing channel '" + name + "'");
        const Raster& r = *it->second;
        if (patch.pixel_row0 < 0 || patch.pixel_col0 < 0 || patch.pixel_row0 + patch.size > r.rows() || patch.pixel_col0 + patch.size > r.cols())
            throw std::out_of_range("extract_channels: patch " + patch.patch_id + " outside raster bounds");
        out.push_back(window(r, patch.pixel_row0, patch.pixel_col0, patch.size, patch.size));
    }
    return out;
}

inline std::string patch_file_name(const std::string& id, const std::string& feature) { return id + "_" + feature + ".tif"; }

/// Writes {patch_id}_{feature}.tif for every channel of every patch.
inline void write_patch_channels(const std::string& dir, const ChannelStack& stack, const std::vector<PatchSpec>& patches,
                                 const std::vector<std::string>& manifest) {
    std::filesystem::create_directories(dir);
    parallel_rows(static_cast<int>(patches.size()), [&](int b, int e) {
        for (int i = b; i < e; ++i) {
            const auto& p = patches[static_cast<std::size_t>(i)];
            const auto rasters = extract_channels(stack, p, manifest);
            for (std::size_t k = 0; k < manifest.size(); ++k) {
                const auto type = is_categorical_channel(manifest[k]) ? SampleType::UInt8 : SampleType::Float32;
                write_geotiff((std::filesystem::path(dir) / patch_file_name(p.patch_id, manifest[k])).string(), rasters[k],
                              GeoTiffOptions{type, std::nullopt, false});
            }
        }
    });
}

namespace detail {
inline void check_unique(const std::vector<PatchSpec>& patches) {
    std::set<std::string> seen;
    for (const auto& p : patches)
        if (!seen.insert(p.patch_id).second) throw std::invalid_argument("duplicate patch_id " + p.patch_id);
}
}  // namespace detail

inline nlohmann::ordered_json patch_index_json(const std::vector<PatchSpec>& patches, const std::string& crs_id = {}) {
    detail::check_unique(patches);
    nlohmann::ordered_json doc;
    doc["type"] = "FeatureCollection";
    if (!crs_id.empty()) doc["crs_id"] = crs_id;
    doc["features"] = nlohmann::ordered_json::array();
    for (const auto& p : patches) {
        nlohmann::ordered_json f;
        f["type"] = "Feature";
        f["id"] = p.patch_id;
        f["properties"] = {{"patch_id", p.patch_id}, {"pixel_row0", p.pixel_row0}, {"pixel_col0", p.pixel_col0}, {"size", p.size}};
        auto ring = nlohmann::ordered_json::array();
        for (const auto& pt : p.geo_rect.ring()) ring.push_back({pt.x, pt.y});
        f["geometry"] = {{"type", "Polygon"}, {"coordinates", nlohmann::ordered_json::array({ring})}};
        doc["features"].push_back(std::move(f));
    }
    return doc;
}

inline void write_patch_index(const std::string& path, const std::vector<PatchSpec>& patches, const std::string& crs_id = {}) {
    write_text_file(path, patch_index_json(patches, crs_id).dump(1) + "\n");
}

inline std::vector<PatchSpec> read_patch_index(const std::string& path) {
    std::vector<PatchSpec> out;
    try {
        const auto doc = nlohmann::json::parse(read_text_file(path));
        for (const auto& f : doc.at("features")) {
            PatchSpec p;
            const auto& props = f.at("properties");
            p.patch_id = props.at("patch_id").get<std::string>();
            p.pixel_row0 = props.at("pixel_row0").get<int>();
            p.pixel_col0 = props.at("pixel_col0").get<int>();
            p.size = props.at("size").get<int>();
            const auto ring = detail::json_points(f.at("geometry").at("coordinates").at(0));
            p.geo_rect = bounds(ring);
            out.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    detail::check_unique(out);
    return out;
}

inline std::string labels_csv(const std::vector<LabelRecord>& labels) {
    std::string s = "patch_id";
    for (const char* c : kClassNames) s += std::string(",") + c;
    for (const char* c : kClassNames) s += std::string(",p_") + c;
    s += "\n";
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (!seen.insert(l.patch_id).second) throw std::invalid_argument("duplicate patch_id " + l.patch_id);
        s += l.patch_id;
        for (bool b : l.onehot) s += b ? ",1" : ",0";
        for (double p : l.proportions) s += "," + fmt_double(p);
        s += "\n";
    }
    return s;
}

inline void write_labels(const std::string& path, const std::vector<LabelRecord>& labels) { write_text_file(path, labels_csv(labels)); }

inline std::vector<LabelRecord> read_labels(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || split(line, ',').size() != 1 + 2 * kNumClasses) throw IoError(path + ": bad labels header");
    std::vector<LabelRecord> out;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 1 + 2 * kNumClasses) throw IoError(path + ": bad labels row");
        LabelRecord r;
        r.patch_id = f[0];
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            r.onehot[k] = f[1 + k] == "1";
            r.proportions[k] = parse_double(f[1 + kNumClasses + k]);
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace surfmap
