#pragma once

// Stage-by-stage dataset build: configuration, run manifest and the stage
// implementations driven by the command-line tool.

#include "surfmap/evalkit.hpp"
#include "surfmap/geojson.hpp"
#include "surfmap/patchgen.hpp"
#include "surfmap/raster.hpp"
#include "surfmap/raster_io.hpp"
#include "surfmap/splits.hpp"
#include "surfmap/terrain.hpp"
#include "surfmap/util.hpp"
#include "surfmap/vector.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef SURFMAP_VERSION
#define SURFMAP_VERSION "0.0.0"
#endif

namespace surfmap {

namespace fs = std::filesystem;

/// Topology validation found problems; maps to exit code 1.
class ValidationFailure : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// ---- configuration ----

struct PipelineConfig {
    // [paths]
    std::string geology = "geology.geojson";
    std::string aoi;  ///< empty: derived from the geology layer
    std::string dem_tiles = "dem";
    std::string imagery_tiles = "imagery";
    std::string hydro = "hydro.geojson";
    std::string infra = "infra.geojson";
    std::string output = "out";
    // [grid]
    std::string crs = "EPSG:3089";
    double pixel_size = 5.0;
    int patch_size = 256;
    double overlap = 0.5;
    std::string map_code = "map";
    // [topology]
    double topology_tolerance = 25.0;
    // [terrain]
    TerrainConfig terrain;
    // [splits]
    std::size_t n_test = 1536;
    std::size_t n_val = 768;
    std::uint64_t seed = 42;
    std::string cross_index;  ///< patches.geojson of a second region
    std::size_t n_cross = 0;  ///< 0: every patch of the second region
    // [oversample]
    std::vector<std::string> oversample_classes{"Qaf", "Qat"};
    int oversample_factor = 2;
    // [modalities]
    std::vector<std::pair<std::string, std::vector<std::string>>> modalities{
        {"rgb", {"red", "green", "blue"}}, {"nir", {"nir"}}, {"dem", {"dem"}}, {"nhd", {"nhd"}}, {"osm", {"osm"}},
        {"slope", {"slope_5", "slope_10", "slope_20", "slope_50", "slope_100", "slope_200"}},
        {"prc", {"prc_5", "prc_10", "prc_20", "prc_50", "prc_100", "prc_200"}},
        {"plc", {"plc_5", "plc_10", "plc_20", "plc_50", "plc_100", "plc_200"}},
        {"sds", {"sds_5", "sds_11", "sds_21", "sds_51", "sds_101", "sds_201"}},
        {"ep", {"ep_5", "ep_11", "ep_21", "ep_51", "ep_101", "ep_201"}}};
    // [metrics]
    std::vector<std::string> models;
    std::string scores_dir = "scores";
    double threshold = 0.5;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;

    fs::path base_dir;  ///< relative paths resolve against the config file's directory

    std::string resolve(const std::string& p) const {
        if (p.empty()) return p;
        const fs::path path(p);
        return (path.is_absolute() ? path : base_dir / path).lexically_normal().string();
    }
    fs::path out_dir() const { return fs::path(resolve(output)); }
};

namespace detail {

inline std::string join(const std::vector<std::string>& v, const std::string& sep = ",") {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
    return s;
}

inline std::vector<std::string> list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    for (const auto& f : split(s, ',')) {
        const auto t = trim(f);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

template <typename T>
std::string join_numbers(const std::vector<T>& v) {
    std::vector<std::string> s;
    for (const auto& x : v) s.push_back(fmt_double(static_cast<double>(x)));
    return join(s);
}

}  // namespace detail

/// Ordered (section, key, value) triples of every setting.
inline std::vector<std::array<std::string, 3>> config_entries(const PipelineConfig& c) {
    std::vector<std::array<std::string, 3>> e{
        {"paths", "geology", c.geology},
        {"paths", "aoi", c.aoi},
        {"paths", "dem_tiles", c.dem_tiles},
        {"paths", "imagery_tiles", c.imagery_tiles},
        {"paths", "hydro", c.hydro},
        {"paths", "infra", c.infra},
        {"paths", "output", c.output},
        {"grid", "crs", c.crs},
        {"grid", "pixel_size", fmt_double(c.pixel_size)},
        {"grid", "patch_size", std::to_string(c.patch_size)},
        {"grid", "overlap", fmt_double(c.overlap)},
        {"grid", "map_code", c.map_code},
        {"topology", "tolerance", fmt_double(c.topology_tolerance)},
        {"terrain", "resolutions", detail::join_numbers(c.terrain.resolutions)},
        {"terrain", "kernels", detail::join_numbers(c.terrain.kernels)},
        {"terrain", "sigma_down", fmt_double(c.terrain.sigma_down)},
        {"terrain", "sigma_up", fmt_double(c.terrain.sigma_up)},
        {"splits", "n_test", std::to_string(c.n_test)},
        {"splits", "n_val", std::to_string(c.n_val)},
        {"splits", "seed", std::to_string(c.seed)},
        {"splits", "cross_index", c.cross_index},
        {"splits", "n_cross", std::to_string(c.n_cross)},
        {"oversample", "classes", detail::join(c.oversample_classes)},
        {"oversample", "factor", std::to_string(c.oversample_factor)},
    };
    for (const auto& [name, channels] : c.modalities) e.push_back({"modalities", name, detail::join(channels)});
    e.push_back({"metrics", "models", detail::join(c.models)});
    e.push_back({"metrics", "scores_dir", c.scores_dir});
    e.push_back({"metrics", "threshold", fmt_double(c.threshold)});
    e.push_back({"metrics", "focal_alpha", fmt_double(c.focal_alpha)});
    e.push_back({"metrics", "focal_gamma", fmt_double(c.focal_gamma)});
    return e;
}

inline nlohmann::ordered_json config_snapshot(const PipelineConfig& c) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [section, key, value] : config_entries(c)) j[section][key] = value;
    return j;
}

/// Parses an INI file; unknown sections or keys are errors.
inline PipelineConfig load_config(const std::string& path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw IoError(std::string("config: ") + e.what());
    }
    PipelineConfig c;
    c.base_dir = fs::absolute(fs::path(path)).parent_path();
    std::map<std::string, std::function<void(const std::string&)>> setters{
        {"paths.geology", [&](const std::string& v) { c.geology = v; }},
        {"paths.aoi", [&](const std::string& v) { c.aoi = v; }},
        {"paths.dem_tiles", [&](const std::string& v) { c.dem_tiles = v; }},
        {"paths.imagery_tiles", [&](const std::string& v) { c.imagery_tiles = v; }},
        {"paths.hydro", [&](const std::string& v) { c.hydro = v; }},
        {"paths.infra", [&](const std::string& v) { c.infra = v; }},
        {"paths.output", [&](const std::string& v) { c.output = v; }},
        {"grid.crs", [&](const std::string& v) { c.crs = v; }},
        {"grid.pixel_size", [&](const std::string& v) { c.pixel_size = parse_double(v); }},
        {"grid.patch_size", [&](const std::string& v) { c.patch_size = static_cast<int>(parse_double(v)); }},
        {"grid.overlap", [&](const std::string& v) { c.overlap = parse_double(v); }},
        {"grid.map_code", [&](const std::string& v) { c.map_code = v; }},
        {"topology.tolerance", [&](const std::string& v) { c.topology_tolerance = parse_double(v); }},
        {"terrain.resolutions",
         [&](const std::string& v) {
             c.terrain.resolutions.clear();
             for (const auto& s : detail::list(v)) c.terrain.resolutions.push_back(parse_double(s));
         }},
        {"terrain.kernels",
         [&](const std::string& v) {
             c.terrain.kernels.clear();
             for (const auto& s : detail::list(v)) c.terrain.kernels.push_back(static_cast<int>(parse_double(s)));
         }},
        {"terrain.sigma_down", [&](const std::string& v) { c.terrain.sigma_down = parse_double(v); }},
        {"terrain.sigma_up", [&](const std::string& v) { c.terrain.sigma_up = parse_double(v); }},
        {"splits.n_test", [&](const std::string& v) { c.n_test = std::stoull(v); }},
        {"splits.n_val", [&](const std::string& v) { c.n_val = std::stoull(v); }},
        {"splits.seed", [&](const std::string& v) { c.seed = std::stoull(v); }},
        {"splits.cross_index", [&](const std::string& v) { c.cross_index = v; }},
        {"splits.n_cross", [&](const std::string& v) { c.n_cross = std::stoull(v); }},
        {"oversample.classes", [&](const std::string& v) { c.oversample_classes = detail::list(v); }},
        {"oversample.factor", [&](const std::string& v) { c.oversample_factor = std::stoi(v); }},
        {"metrics.models", [&](const std::string& v) { c.models = detail::list(v); }},
        {"metrics.scores_dir", [&](const std::string& v) { c.scores_dir = v; }},
        {"metrics.threshold", [&](const std::string& v) { c.threshold = parse_double(v); }},
        {"metrics.focal_alpha", [&](const std::string& v) { c.focal_alpha = parse_double(v); }},
        {"metrics.focal_gamma", [&](const std::string& v) { c.focal_gamma = parse_double(v); }},
    };
    bool modalities_seen = false;
    for (const auto& [section, body] : tree) {
        if (section == "modalities") {
            if (!modalities_seen) c.modalities.clear();
            modalities_seen = true;
            for (const auto& [key, value] : body) c.modalities.emplace_back(key, detail::list(value.data()));
            continue;
        }
        if (body.empty()) throw IoError("config: unexpected top-level key '" + section + "'");
        for (const auto& [key, value] : body) {
            const auto it = setters.find(section + "." + key);
            if (it == setters.end()) throw IoError("config: unknown setting [" + section + "] " + key);
            try {
                it->second(trim(value.data()));
            } catch (const std::invalid_argument& e) {
                throw IoError("config: bad value for [" + section + "] " + key + ": " + e.what());
            } catch (const std::out_of_range& e) {
                throw IoError("config: value out of range for [" + section + "] " + key);
            }
        }
    }
    if (!(c.pixel_size > 0)) throw IoError("config: pixel_size must be positive");
    if (c.patch_size < 1) throw IoError("config: patch_size must be positive");
    return c;
}

/// Commented template with every default.
inline std::string config_template(const PipelineConfig& c = {}) {
    static const std::map<std::string, std::string> notes{
        {"paths.aoi", "Optional AOI polygon file; empty derives the AOI by dissolving the geology layer."},
        {"paths.dem_tiles", "Directory of DEM tiles (.tif or .asc); later files win where tiles overlap."},
        {"paths.imagery_tiles", "Directory of 4-band imagery tiles (red, green, blue, near-infrared)."},
        {"grid.pixel_size", "Reference grid spacing in CRS units (feet); every layer is aligned to it."},
        {"grid.patch_size", "Patch edge length in pixels."},
        {"grid.overlap", "Fraction shared by adjacent patches; stride = patch_size * (1 - overlap)."},
        {"topology.tolerance", "Overlap or gap area (square CRS units) below which topology issues are ignored."},
        {"terrain.resolutions", "DEM resolutions (feet) for slope and curvature channels."},
        {"terrain.kernels", "Window sizes (pixels) for elevation percentile and slope standard deviation."},
        {"terrain.sigma_down", "Gaussian sigma (pixels) applied to each resampled DEM."},
        {"terrain.sigma_up", "Gaussian sigma (pixels) applied after returning to the reference grid."},
        {"splits.n_test", "In-domain test patches drawn first."},
        {"splits.n_val", "Validation patches drawn next, none overlapping the test set."},
        {"splits.cross_index", "Optional patch index of a second region used as the cross-domain test set."},
        {"oversample.factor", "Copies of each training patch containing a listed class (1 disables)."},
        {"metrics.models", "Model names; each reads <scores_dir>/<model>_in.csv and optionally <model>_cross.csv."},
        {"metrics.threshold", "Probability at or above which a class is predicted present."},
    };
    std::string out = "; surfmap pipeline configuration. Relative paths resolve against this file's directory.\n";
    std::string section;
    for (const auto& [sec, key, value] : config_entries(c)) {
        if (sec != section) {
            out += "\n[" + sec + "]\n";
            if (sec == "modalities") out += "; Channel groups sharing one normalization mean and standard deviation.\n";
            section = sec;
        }
        if (const auto it = notes.find(sec + "." + key); it != notes.end()) out += "; " + it->second + "\n";
        out += key + " = " + value + "\n";
    }
    return out;
}

// ---- run manifest ----

const std::vector<std::string> kStages{"validate", "rasterize", "mosaic", "terrain", "patches", "splits", "stats", "metrics"};

struct StageRecord {
    std::string name;
    std::map<std::string, std::string> inputs;   ///< label -> sha256
    std::map<std::string, std::string> outputs;  ///< path relative to the output directory -> sha256
    std::string status = "ok";
    double seconds = 0.0;
};

class RunManifest {
  public:
    explicit RunManifest(fs::path path) : path_(std::move(path)) {
        if (!fs::exists(path_)) return;
        try {
            const auto doc = nlohmann::json::parse(read_text_file(path_.string()));
            for (const auto& [name, st] : doc.at("stages").items()) {
                StageRecord r;
                r.name = name;
                r.inputs = st.at("inputs").get<std::map<std::string, std::string>>();
                r.outputs = st.at("outputs").get<std::map<std::string, std::string>>();
                r.status = st.at("status").get<std::string>();
                r.seconds = st.at("seconds").get<double>();
                stages_[name] = std::move(r);
            }
            if (doc.contains("config")) config_ = doc["config"].dump();
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path_.string() + ": " + e.what());
        }
    }

    const StageRecord* find(const std::string& stage) const {
        const auto it = stages_.find(stage);
        return it == stages_.end() ? nullptr : &it->second;
    }
    const std::string& recorded_config() const { return config_; }

    /// Stage that last wrote the given relative output path, with its checksum.
    std::optional<std::pair<std::string, std::string>> producer(const std::string& rel) const {
        for (const auto& [name, st] : stages_)
            if (const auto it = st.outputs.find(rel); it != st.outputs.end()) return std::make_pair(name, it->second);
        return std::nullopt;
    }

    void record(StageRecord r) {
        // An output belongs to exactly one stage.
        for (auto& [name, st] : stages_)
            if (name != r.name)
                for (const auto& [rel, sum] : r.outputs) st.outputs.erase(rel);
        stages_[r.name] = std::move(r);
    }

    void save(const PipelineConfig& cfg) const {
        nlohmann::ordered_json doc;
        doc["tool"] = "surfmap";
        doc["version"] = SURFMAP_VERSION;
        doc["config"] = config_snapshot(cfg);
        doc["stages"] = nlohmann::ordered_json::object();
        for (const auto& name : kStages) {
            const auto it = stages_.find(name);
            if (it == stages_.end()) continue;
            const auto& st = it->second;
            nlohmann::ordered_json s;
            s["status"] = st.status;
            s["inputs"] = st.inputs;
            s["outputs"] = st.outputs;
            s["seconds"] = std::round(st.seconds * 1000.0) / 1000.0;
            doc["stages"][name] = std::move(s);
        }
        write_text_file(path_.string(), doc.dump(1) + "\n");
    }

  private:
    fs::path path_;
    std::map<std::string, StageRecord> stages_;
    std::string config_;
};

/// Exclusive per-output-directory lock; released on destruction.
class RunLock {
  public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".surfmap.lock") {
        fs::create_directories(dir);
        std::FILE* f = std::fopen(path_.string().c_str(), "wx");
        if (!f) throw IoError("output directory is locked by another run (" + path_.string() + "); remove the file if no run is active");
        std::fclose(f);
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

  private:
    fs::path path_;
};

// ---- stage context ----

struct RunOptions {
    bool resume = false;
    std::function<void(const std::string&)> log = [](const std::string&) {};
};

class StageContext {
  public:
    StageContext(const PipelineConfig& cfg, RunManifest& manifest, std::string stage)
        : cfg_(cfg), manifest_(manifest), out_(cfg.out_dir()) {
        rec_.name = std::move(stage);
    }

    const PipelineConfig& cfg() const { return cfg_; }
    fs::path out(const std::string& rel) const { return out_ / rel; }

    /// Registers a user-supplied input file.
    std::string raw_input(const std::string& configured) {
        const std::string path = cfg_.resolve(configured);
        if (!fs::is_regular_file(path)) throw IoError("missing input: " + path);
        rec_.inputs[configured] = sha256_file(path);
        return path;
    }

    /// Registers a product of an earlier stage, checking it has not drifted.
    std::string product_input(const std::string& rel) {
        const fs::path p = out_ / rel;
        if (!fs::is_regular_file(p)) throw IoError("missing input: " + p.string() + " (run the producing stage first)");
        const std::string sum = sha256_file(p.string());
        if (const auto prod = manifest_.producer(rel); prod && prod->first != rec_.name && prod->second != sum)
            throw IoError("input drift: " + rel + " changed since stage '" + prod->first + "' wrote it");
        rec_.inputs[rel] = sum;
        return p.string();
    }

    /// Registers a written output.
    void output(const std::string& rel) { rec_.outputs[rel] = sha256_file((out_ / rel).string()); }

    StageRecord& record() { return rec_; }

  private:
    const PipelineConfig& cfg_;
    RunManifest& manifest_;
    fs::path out_;
    StageRecord rec_;
};

// ---- stage implementations ----

namespace stages {

inline constexpr const char* kAoi = "validate/aoi.geojson";
inline constexpr const char* kGeology = "validate/geology_clipped.geojson";
inline constexpr const char* kPatchDir = "patches";
inline constexpr const char* kPatchIndex = "patches.geojson";
inline constexpr const char* kLabels = "labels.csv";
inline constexpr const char* kSplits = "splits.json";

inline std::string layer(const std::string& name) { return "layers/" + name + ".tif"; }

inline std::vector<std::string> tile_files(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("missing tile directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".tif" || ext == ".tiff" || ext == ".asc")) out.push_back(e.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no raster tiles in " + dir);
    return out;
}

/// Reference grid: the AOI bounds snapped outward to multiples of the pixel size.
inline GridGeometry reference_grid(const PipelineConfig& cfg, const MultiPolygon& aoi) {
    const Rect b = bounds(aoi);
    const double px = cfg.pixel_size;
    GridGeometry g;
    g.pixel_size = px;
    g.crs_id = cfg.crs;
    g.origin_x = std::floor(b.min_x / px + 1e-9) * px;
    g.origin_y = std::ceil(b.max_y / px - 1e-9) * px;
    g.cols = static_cast<int>(std::ceil((b.max_x - g.origin_x) / px - 1e-9));
    g.rows = static_cast<int>(std::ceil((g.origin_y - b.min_y) / px - 1e-9));
    g.validate();
    return g;
}

inline MultiPolygon read_aoi(const std::string& path) { return read_geojson(path).polygons; }

inline void write_layer(StageContext& ctx, const std::string& name, const Raster& r) {
    const std::string rel = layer(name);
    fs::create_directories(ctx.out("layers"));
    write_geotiff(ctx.out(rel).string(), r, GeoTiffOptions{is_categorical_channel(name) ? SampleType::UInt8 : SampleType::Float32, std::nullopt, false});
    ctx.output(rel);
}

inline void validate(StageContext& ctx) {
    const auto& cfg = ctx.cfg();
    const VectorLayer geology = read_geojson(ctx.raw_input(cfg.geology));
    const TopologyReport rep = validate_topology(geology.polygons, cfg.topology_tolerance);
    fs::create_directories(ctx.out("validate"));
    write_topology_report(ctx.out("validate/topology_report.csv").string(), ctx.out("validate/topology_summary.txt").string(), rep,
                          cfg.topology_tolerance);
    ctx.output("validate/topology_report.csv");
    ctx.output("validate/topology_summary.txt");
    if (!rep.empty()) {
        ctx.record().status = "failed";
        throw ValidationFailure("topology validation failed; see " + ctx.out("validate/topology_summary.txt").string());
    }
    MultiPolygon aoi = cfg.aoi.empty() ? derive_aoi(geology.polygons) : derive_aoi(read_aoi(ctx.raw_input(cfg.aoi)));
    VectorLayer aoi_layer;
    aoi_layer.polygons = aoi;
    write_geojson(ctx.out(kAoi).string(), aoi_layer);
    ctx.output(kAoi);
    VectorLayer clipped = clip(VectorLayer{geology.polygons, {}}, aoi);
    write_geojson(ctx.out(kGeology).string(), clipped);
    ctx.output(kGeology);
}

inline void rasterize_stage(StageContext& ctx) {
    const auto& cfg = ctx.cfg();
    const MultiPolygon aoi = read_aoi(ctx.product_input(kAoi));
    const VectorLayer geology = read_geojson(ctx.product_input(kGeology));
    const GridGeometry ref = reference_grid(cfg, aoi);
    write_layer(ctx, "mask", rasterize(geology, ref, RasterizeMode::OrdinalPolygons));
    const std::pair<const char*, std::string> sources[] = {{"nhd", cfg.hydro}, {"osm", cfg.infra}};
    for (const auto& [name, path] : sources) {
        VectorLayer lines = read_geojson(ctx.raw_input(path));
        lines.polygons.clear();
        write_layer(ctx, name, rasterize(clip(lines, aoi), ref, RasterizeMode::BinaryLines));
    }
}

inline void mosaic_stage(StageContext& ctx) {
    const auto& cfg = ctx.cfg();
    const GridGeometry ref = read_raster(ctx.product_input(layer("mask"))).geometry();
    const std::string dem_dir = cfg.resolve(cfg.dem_tiles);
    std::vector<Raster> dem;
    for (const auto& f : tile_files(dem_dir)) {
        ctx.raw_input((fs::path(cfg.dem_tiles) / f).string());
        dem.push_back(align_to(read_raster((fs::path(dem_dir) / f).string(), cfg.crs), ref));
    }
    Raster merged = mosaic(dem);
    merged.set_units("ft");
    write_layer(ctx, "dem", merged);

    const std::string img_dir = cfg.resolve(cfg.imagery_tiles);
    std::array<std::vector<Raster>, 4> bands;
    for (const auto& f : tile_files(img_dir)) {
        ctx.raw_input((fs::path(cfg.imagery_tiles) / f).string());
        const auto tile = read_raster_bands((fs::path(img_dir) / f).string(), cfg.crs);
        if (tile.size() != 4) throw IoError("imagery tile " + f + " has " + std::to_string(tile.size()) + " bands, expected 4");
        for (std::size_t b = 0; b < 4; ++b) bands[b].push_back(align_to(tile[b], ref));
    }
    const char* names[] = {"red", "green", "blue", "nir"};
    for (std::size_t b = 0; b < 4; ++b) write_layer(ctx, names[b], mosaic(bands[b]));
}

inline void terrain_stage(StageContext& ctx) {
    const Raster dem = read_raster(ctx.product_input(layer("dem")));
    for (const auto& [name, r] : terrain_stack(dem, ctx.cfg().terrain)) write_layer(ctx, name, r);
}

inline void patches_stage(StageContext& ctx) {
    const auto& cfg = ctx.cfg();
    const MultiPolygon aoi = read_aoi(ctx.product_input(kAoi));
    const VectorLayer geology = read_geojson(ctx.product_input(kGeology));
    const auto manifest = channel_manifest(cfg.terrain);
    ChannelStack stack;
    for (const auto& name : manifest) stack.emplace_back(name, read_raster(ctx.product_input(layer(name))));
    const GridGeometry ref = stack.front().second.geometry();
    for (const auto& [name, r] : stack)
        if (!aligned(r.geometry(), ref) || r.rows() != ref.rows || r.cols() != ref.cols) throw IoError("layer " + name + " is not on the reference grid");

    const auto patches = generate_grid(aoi, ref, cfg.patch_size, cfg.overlap, cfg.map_code);
    const auto labels = compute_labels(patches, geology.polygons);
    const fs::path dir = ctx.out(kPatchDir);
    fs::remove_all(dir);
    write_patch_channels(dir.string(), stack, patches, manifest);
    for (const auto& p : patches)
        for (const auto& name : manifest) ctx.output(std::string(kPatchDir) + "/" + patch_file_name(p.patch_id, name));
    write_patch_index(ctx.out(kPatchIndex).string(), patches, cfg.crs);
    ctx.output(kPatchIndex);
    write_labels(ctx.out(kLabels).string(), labels);
    ctx.output(kLabels);
}

inline void splits_stage(StageContext& ctx) {
    const auto& cfg = ctx.cfg();
    const auto patches = read_patch_index(ctx.product_input(kPatchIndex));
    const auto labels = read_labels(ctx.product_input(kLabels));
    const OverlapGraph graph = build_overlap_graph(patches);
    SplitManifest m = sample_splits(graph, cfg.n_test, cfg.n_val, cfg.seed);
    if (!cfg.cross_index.empty()) {
        std::vector<std::string> ids;
        for (const auto& p : read_patch_index(ctx.raw_input(cfg.cross_index))) ids.push_back(p.patch_id);
        assign_cross_domain(m, ids, cfg.n_cross);
    }
    auto doc = nlohmann::ordered_json::parse(splits_json(m, graph));
    doc["oversample"] = {{"classes", cfg.oversample_classes},
                         {"factor", cfg.oversample_factor},
                         {"train", oversample(m.members(Split::Train), labels, cfg.oversample_classes, cfg.oversample_factor)}};
    write_text_file(ctx.out(kSplits).string(), doc.dump(1) + "\n");
    ctx.output(kSplits);
}

inline void stats_stage(StageContext& ctx) {
    const auto& cfg = ctx.cfg();
    const auto labels = read_labels(ctx.product_input(kLabels));
    const auto patches = read_patch_index(ctx.product_input(kPatchIndex));
    const std::string splits_path = ctx.product_input(kSplits);
    const auto splits = read_splits(splits_path);
    const auto doc = nlohmann::json::parse(read_text_file(splits_path));

    std::string csv = stats_csv_header() + stats_csv_rows("all", dataset_stats(labels));
    for (const char* s : {"train", "val", "test_in"}) csv += stats_csv_rows(s, dataset_stats(select_labels(labels, splits.at(s))));
    if (doc.contains("oversample"))
        csv += stats_csv_rows("train_oversampled", dataset_stats(select_labels(labels, doc["oversample"]["train"].get<std::vector<std::string>>())));
    write_text_file(ctx.out("stats.csv").string(), csv);
    ctx.output("stats.csv");

    // Channel statistics over every patch pixel, counting overlapped pixels once per patch.
    const auto manifest = channel_manifest(cfg.terrain);
    std::vector<std::uint16_t> cover;
    std::map<std::string, std::array<long double, 3>> sums;  // count, sum, sum of squares
    std::string ch = "channel,count,mean,stddev\n";
    for (const auto& name : manifest) {
        const Raster r = read_raster(ctx.product_input(layer(name)));
        if (cover.empty()) {
            cover.assign(r.geometry().size(), 0);
            for (const auto& p : patches)
                for (int i = 0; i < p.size; ++i)
                    for (int j = 0; j < p.size; ++j) ++cover[static_cast<std::size_t>(p.pixel_row0 + i) * static_cast<std::size_t>(r.cols()) + static_cast<std::size_t>(p.pixel_col0 + j)];
        }
        if (cover.size() != r.geometry().size()) throw IoError("layer " + name + " is not on the reference grid");
        long double n = 0, s = 0;
        const auto v = r.values();
        for (std::size_t i = 0; i < v.size(); ++i)
            if (cover[i] && !r.is_nodata(i)) {
                n += cover[i];
                s += cover[i] * static_cast<long double>(v[i]);
            }
        const long double mean = n > 0 ? s / n : 0;
        long double ss = 0;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (cover[i] && !r.is_nodata(i)) ss += cover[i] * (v[i] - mean) * (v[i] - mean);
        sums[name] = {n, s, ss + n * mean * mean};
        ch += name + "," + std::to_string(static_cast<long long>(n)) + "," + metric_value(static_cast<double>(mean), 9) + "," +
              metric_value(n > 0 ? static_cast<double>(std::sqrt(ss / n)) : 0.0, 9) + "\n";
    }
    write_text_file(ctx.out("channel_stats.csv").string(), ch);
    ctx.output("channel_stats.csv");

    std::string mod = "modality,channels,count,mean,stddev\n";
    for (const auto& [name, channels] : cfg.modalities) {
        long double n = 0, s = 0, sq = 0;
        for (const auto& c : channels) {
            const auto it = sums.find(c);
            if (it == sums.end()) throw IoError("modality " + name + " lists unknown channel " + c);
            n += it->second[0];
            s += it->second[1];
            sq += it->second[2];
        }
        const long double mean = n > 0 ? s / n : 0;
        const long double var = n > 0 ? std::max<long double>(0, sq / n - mean * mean) : 0;
        mod += name + "," + detail::join(channels, ";") + "," + std::to_string(static_cast<long long>(n)) + "," +
               metric_value(static_cast<double>(mean), 9) + "," + metric_value(static_cast<double>(std::sqrt(var)), 9) + "\n";
    }
    write_text_file(ctx.out("modality_stats.csv").string(), mod);
    ctx.output("modality_stats.csv");
}

inline void metrics_stage(StageContext& ctx) {
    const auto& cfg = ctx.cfg();
    if (cfg.models.empty()) {
        ctx.record().status = "skipped";
        return;
    }
    fs::create_directories(ctx.out("metrics"));
    std::string metrics = metrics_csv_header();
    std::string summary = summary_csv_header();
    summary.insert(summary.size() - 1, ",mean_focal_loss");
    std::string delta = delta_auc_csv_header();
    bool any_delta = false;
    for (const auto& model : cfg.models) {
        std::optional<MetricReport> in, cross;
        for (const char* domain : {"in", "cross"}) {
            const std::string rel = (fs::path(cfg.scores_dir) / (model + "_" + domain + ".csv")).string();
            if (std::string(domain) == "cross" && !fs::exists(cfg.resolve(rel))) continue;
            const ScoreTable table = read_score_table(ctx.raw_input(rel));
            const MetricReport r = evaluate(table, cfg.threshold);
            double loss = 0.0;
            for (const auto& row : table) loss += focal_loss(row.scores, row.targets, cfg.focal_alpha, cfg.focal_gamma);
            loss /= static_cast<double>(table.size());
            metrics += metrics_csv_rows(model, domain, r);
            std::string row = summary_csv_row(model, domain, r);
            row.insert(row.size() - 1, "," + metric_value(loss));
            summary += row;
            (std::string(domain) == "in" ? in : cross) = r;
        }
        if (in && cross) {
            delta += delta_auc_csv_row(model, delta_auc(*in, *cross));
            any_delta = true;
        }
    }
    write_text_file(ctx.out("metrics/metrics.csv").string(), metrics);
    ctx.output("metrics/metrics.csv");
    write_text_file(ctx.out("metrics/metrics_summary.csv").string(), summary);
    ctx.output("metrics/metrics_summary.csv");
    if (any_delta) {
        write_text_file(ctx.out("metrics/delta_auc.csv").string(), delta);
        ctx.output("metrics/delta_auc.csv");
    }
}

}  // namespace stages

inline const std::map<std::string, std::function<void(StageContext&)>>& stage_table() {
    static const std::map<std::string, std::function<void(StageContext&)>> t{
        {"validate", stages::validate},          {"rasterize", stages::rasterize_stage}, {"mosaic", stages::mosaic_stage},
        {"terrain", stages::terrain_stage},      {"patches", stages::patches_stage},     {"splits", stages::splits_stage},
        {"stats", stages::stats_stage},          {"metrics", stages::metrics_stage}};
    return t;
}

namespace detail {

/// True when the prior record matches current inputs, config and outputs on disk.
inline bool up_to_date(const StageRecord& prior, const StageRecord& probe, const PipelineConfig& cfg, const RunManifest& manifest) {
    if (prior.status != "ok" && prior.status != "skipped") return false;
    if (manifest.recorded_config() != nlohmann::json::parse(config_snapshot(cfg).dump()).dump()) return false;
    if (prior.inputs != probe.inputs) return false;
    for (const auto& [rel, sum] : prior.outputs) {
        const fs::path p = cfg.out_dir() / rel;
        if (!fs::is_regular_file(p) || sha256_file(p.string()) != sum) return false;
    }
    return true;
}

/// Input checksums a stage would record, gathered without running it.
inline StageRecord probe_inputs(const std::string& stage, const StageRecord& prior, const PipelineConfig& cfg) {
    StageRecord r;
    for (const auto& [label, sum] : prior.inputs) {
        fs::path p = cfg.out_dir() / label;
        if (!fs::is_regular_file(p)) p = cfg.resolve(label);
        if (!fs::is_regular_file(p)) return StageRecord{stage, {}, {}, "missing", 0};
        r.inputs[label] = sha256_file(p.string());
    }
    // Tile directories can gain files without any recorded input changing.
    if (stage == "mosaic") {
        for (const auto* dir : {&cfg.dem_tiles, &cfg.imagery_tiles})
            for (const auto& f : stages::tile_files(cfg.resolve(*dir)))
                if (!r.inputs.count((fs::path(*dir) / f).string())) return StageRecord{stage, {}, {}, "missing", 0};
    }
    return r;
}

}  // namespace detail

/// Runs the named stages in order against one output directory.
inline void run_stages(const PipelineConfig& cfg, const std::vector<std::string>& names, const RunOptions& opt = {}) {
    const fs::path out = cfg.out_dir();
    RunLock lock(out);
    RunManifest manifest(out / "run_manifest.json");
    for (const auto& name : names) {
        const auto it = stage_table().find(name);
        if (it == stage_table().end()) throw std::invalid_argument("unknown stage '" + name + "'");
        if (opt.resume) {
            if (const StageRecord* prior = manifest.find(name)) {
                const StageRecord probe = detail::probe_inputs(name, *prior, cfg);
                if (probe.status != "missing" && detail::up_to_date(*prior, probe, cfg, manifest)) {
                    opt.log(name + ": up to date, skipped");
                    continue;
                }
            }
        }
        StageContext ctx(cfg, manifest, name);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            it->second(ctx);
        } catch (const ValidationFailure&) {
            ctx.record().seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            manifest.record(ctx.record());
            manifest.save(cfg);
            throw;
        }
        ctx.record().seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        opt.log(name + ": " + ctx.record().status + " (" + fmt_fixed(ctx.record().seconds, 2) + " s, " +
                std::to_string(ctx.record().outputs.size()) + " outputs)");
        manifest.record(ctx.record());
        manifest.save(cfg);
    }
}

}  // namespace surfmap
