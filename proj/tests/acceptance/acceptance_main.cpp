// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "surfmap/evalkit.hpp"
#include "surfmap/patchgen.hpp"
#include "surfmap/pipeline.hpp"
#include "surfmap/splits.hpp"
#include "surfmap/synthetic.hpp"
#include "surfmap/terrain.hpp"
#include "surfmap/vector.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <sstream>

using namespace surfmap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) detail << "first failure: " << what << "; ";
        pass = pass && ok;
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GridGeometry square_grid(int rows, int cols, double px) { return fixture::grid(0.0, rows * px, px, rows, cols); }

Raster random_dem(int rows, int cols, std::mt19937& rng, double px, bool integer_levels) {
    std::uniform_real_distribution<double> u(0.0, 100.0);
    std::uniform_int_distribution<int> lv(0, 9);
    Raster r(square_grid(rows, cols, px));
    for (auto& v : r.values()) v = integer_levels ? lv(rng) : u(rng);
    return r;
}

std::vector<double> values_of(const Raster& r) { return {r.values().begin(), r.values().end()}; }

// ---- criteria ----

void kernel_oracle(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937 rng(20240601);
    double worst[3] = {0, 0, 0};
    for (int t = 0; t < 20; ++t) {
        const Raster dem = random_dem(64, 64, rng, 5.0, false);
        const auto d = derivatives(dem);
        const auto padded = oracle::odd_pad2(values_of(dem), 64, 64);
        for (int i = 0; i < 64; ++i)
            for (int j = 0; j < 64; ++j) {
                const auto s = oracle::fit_quadratic(oracle::window5(padded, 64, i, j), 5.0);
                worst[0] = std::max(worst[0], std::abs(d[0].at(i, j) - oracle::slope(s)));
                worst[1] = std::max(worst[1], std::abs(d[1].at(i, j) - oracle::profile(s)));
                worst[2] = std::max(worst[2], std::abs(d[2].at(i, j) - oracle::planform(s)));
            }
    }
    const double secs = seconds_since(t0);
    o.require(worst[0] < 1e-9 && worst[1] < 1e-9 && worst[2] < 1e-9, "max |delta| >= 1e-9");
    o.require(secs < 10.0, "runtime >= 10 s");
    o.detail << "max |delta| slope " << worst[0] << ", profile " << worst[1] << ", planform " << worst[2] << "; " << secs << " s";
}

void analytic_terrain(Outcome& o) {
    const int n = 64;
    Raster plane(square_grid(n, n, 1.0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) plane.at(i, j) = plane.geometry().center_x(j);
    const auto d = derivatives(plane);
    double slope_err = 0, curv = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            slope_err = std::max(slope_err, std::abs(d[0].at(i, j) - 45.0));
            curv = std::max({curv, std::abs(d[1].at(i, j)), std::abs(d[2].at(i, j))});
        }
    o.require(slope_err <= 1e-9, "plane slope off 45 degrees");
    o.require(curv <= 1e-9, "plane curvature not 0");

    const int m = 65;
    const double c0 = 32.5;  // bowl minimum at the center of cell (32, 32)
    Raster bowl(square_grid(m, m, 1.0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const double x = bowl.geometry().center_x(j) - c0, y = bowl.geometry().center_y(i) - c0;
            bowl.at(i, j) = (x * x + y * y) / 2.0;
        }
    const auto b = derivatives(bowl);
    double bowl_err = 0;
    int points = 0;
    for (int k = 3; k < m - 3; ++k) {
        if (k == 32) continue;  // the minimum itself is flat
        for (auto [i, j] : {std::pair{32, k}, {k, 32}}) {
            bowl_err = std::max({bowl_err, std::abs(b[1].at(i, j) + 100.0), std::abs(b[2].at(i, j) + 100.0)});
            ++points;
        }
    }
    o.require(bowl_err <= 1e-6, "bowl curvature off -100");
    o.detail << "plane slope err " << slope_err << ", plane curvature " << curv << "; bowl max err " << bowl_err << " over " << points
             << " on-axis points";
}

void focal_statistics(Outcome& o) {
    std::mt19937 rng(77);
    const int ks[] = {5, 11, 21};
    long long ep_mismatch = 0, cells = 0;
    double sds_err = 0;
    for (int t = 0; t < 2; ++t) {
        const Raster dem = random_dem(128, 128, rng, 5.0, t == 1);
        const auto z = values_of(dem);
        const std::vector<bool> valid(z.size(), true);
        const auto ep = elevation_percentile_multi(dem, ks);
        const auto sds = focal_stddev_multi(derivative(dem, DerivativeKind::Slope), ks);
        const auto padded = oracle::odd_pad2(z, 128, 128);
        std::vector<double> slope(z.size());
        for (int i = 0; i < 128; ++i)
            for (int j = 0; j < 128; ++j)
                slope[static_cast<std::size_t>(i * 128 + j)] = oracle::slope(oracle::fit_quadratic(oracle::window5(padded, 128, i, j), 5.0));
        for (std::size_t k = 0; k < 3; ++k)
            for (int i = 0; i < 128; ++i)
                for (int j = 0; j < 128; ++j) {
                    const auto rc = oracle::rank_counts(z, valid, 128, 128, i, j, ks[k]);
                    const double expect = (rc.lower + 0.5 * rc.ties) / static_cast<double>(rc.valid - 1);
                    ep_mismatch += ep[k].at(i, j) != expect;
                    ++cells;
                    sds_err = std::max(sds_err, std::abs(sds[k].at(i, j) - oracle::window_stddev(slope, valid, 128, 128, i, j, ks[k])));
                }
    }
    o.require(ep_mismatch == 0, "EP differs from exhaustive count");
    o.require(sds_err < 1e-9, "SDS differs by >= 1e-9");
    o.detail << "EP mismatches " << ep_mismatch << " of " << cells << "; SDS max |delta| " << sds_err;
}

void patch_grid(Outcome& o) {
    const double px = 5.0;
    int rect_cases = 0;
    for (auto [a, b] : {std::pair{1280, 1280}, {256, 256}, {512, 768}, {1024, 384}, {2048, 1536}}) {
        const auto aoi = derive_aoi({fixture::rect_poly(0, 0, b * px, a * px)});
        const auto patches = generate_grid(aoi, square_grid(a, b, px), 256, 0.5, "a");
        o.require(patches.size() == static_cast<std::size_t>(((a - 256) / 128 + 1) * ((b - 256) / 128 + 1)), "rectangular AOI count");
        ++rect_cases;
        // Interior patches (not on the outer ring) overlap exactly 8 others.
        const int rows = (a - 256) / 128 + 1, cols = (b - 256) / 128 + 1;
        for (const auto& p : patches) {
            const int r = p.pixel_row0 / 128, c = p.pixel_col0 / 128;
            if (r == 0 || c == 0 || r == rows - 1 || c == cols - 1) continue;
            int n = 0;
            for (const auto& q : patches) {
                if (&q == &p) continue;
                const double w = std::min(p.geo_rect.max_x, q.geo_rect.max_x) - std::max(p.geo_rect.min_x, q.geo_rect.min_x);
                const double h = std::min(p.geo_rect.max_y, q.geo_rect.max_y) - std::max(p.geo_rect.min_y, q.geo_rect.min_y);
                n += w > 0 && h > 0;
            }
            o.require(n == 8, "interior patch overlap count");
        }
    }
    std::mt19937 rng(4242);
    std::size_t checked = 0;
    int aois = 0;
    const auto g = fixture::grid(0, 20000, px, 4000, 4000);
    while (aois < 50) {
        Polygon shape = fixture::star(rng, 10000, 10000, 3000, 9500, 6 + aois % 10);
        normalize_orientation(shape);
        if (std::abs(ring_signed_area(open_vertices(shape.exterior))) < 4 * 1280.0 * 1280.0) continue;
        std::vector<PatchSpec> patches;
        try {
            patches = generate_grid(derive_aoi({shape}), g, 256, 0.5, "s");
        } catch (const std::invalid_argument&) {
            continue;
        }
        ++aois;
        std::vector<std::vector<oracle::XY>> rings(1);
        for (const auto& p : shape.exterior) rings[0].push_back({p.x, p.y});
        for (const auto& p : patches) {
            const Rect& r = p.geo_rect;
            o.require(oracle::rect_inside_polygon(rings, r.min_x, r.min_y, r.max_x, r.max_y), "patch not contained in AOI");
            ++checked;
        }
    }
    o.detail << rect_cases << " rectangular AOIs matched the count formula; " << checked << " patches on " << aois
             << " non-convex AOIs fully contained";
}

void labels(Outcome& o) {
    std::mt19937 rng(99);
    double worst_sum = 0;
    std::size_t patches_checked = 0;
    const std::vector<GeologicClass> classes{GeologicClass::Qal, GeologicClass::Qc, GeologicClass::Qr, GeologicClass::Qaf, GeologicClass::Qca};
    for (int t = 0; t < 5; ++t) {
        Polygon shape = fixture::star(rng, 3200, 3200, 2000, 3100, 8);
        normalize_orientation(shape);
        const auto aoi = derive_aoi({shape});
        VectorLayer geo;
        geo.polygons = fixture::jittered_tiling(rng, Rect{0, 0, 6400, 6400}, 8, 6, classes);
        const auto clipped = clip(geo, aoi);
        for (const auto& l : compute_labels(generate_grid(aoi, square_grid(1280, 1280, 5.0), 256, 0.5, "l"), clipped.polygons)) {
            double s = 0;
            for (double p : l.proportions) s += p;
            worst_sum = std::max(worst_sum, std::abs(s - 1.0));
            ++patches_checked;
        }
    }
    o.require(patches_checked > 0 && worst_sum <= 1e-6, "proportions do not sum to 1");

    const PatchSpec half{"h", 0, 0, 256, Rect{0, 0, 1280, 1280}};
    const auto hl = compute_labels(half, {fixture::rect_poly(-100, -100, 640, 1500, GeologicClass::Qc), fixture::rect_poly(640, -100, 1500, 1500, GeologicClass::Qr)});
    o.require(hl.proportions[4] == 0.5 && hl.proportions[6] == 0.5 && hl.onehot[4] && hl.onehot[6], "half/half patch not (0.5, 0.5)");

    double worst_rel = 0;
    int polys = 0;
    const double px = 5.0;
    const auto g = square_grid(400, 400, px);
    for (int t = 0; t < 30; ++t) {
        VectorLayer layer;
        Polygon p = fixture::star(rng, 1000, 1000, 40 + 10 * t, 100 + 25 * t, 7 + t % 8);
        normalize_orientation(p);
        const double area = polygon_area(p);
        if (area < 100 * px * px) continue;
        layer.polygons.push_back(p);
        const Raster r = rasterize(layer, g, RasterizeMode::OrdinalPolygons);
        std::size_t cells = 0;
        for (double v : r.values()) cells += v != 0.0;
        worst_rel = std::max(worst_rel, std::abs(static_cast<double>(cells) * px * px - area) / area);
        ++polys;
    }
    o.require(worst_rel <= 0.02, "raster area differs from vector area by > 2%");
    o.detail << "max |sum - 1| " << worst_sum << " over " << patches_checked << " patches; half/half (" << hl.proportions[4] << ", "
             << hl.proportions[6] << "); raster vs vector area max rel err " << worst_rel << " over " << polys << " polygons";
}

void splits(Outcome& o) {
    const int n = 30, extent = 128 * (n + 1);
    const auto patches = generate_grid(derive_aoi({fixture::rect_poly(0, 0, extent * 5.0, extent * 5.0)}), square_grid(extent, extent, 5.0), 256, 0.5, "s");
    o.require(patches.size() == 900, "30 x 30 grid size");
    // Independent adjacency by brute-force rectangle tests.
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < patches.size(); ++i)
        for (std::size_t j = i + 1; j < patches.size(); ++j) {
            const Rect& a = patches[i].geo_rect;
            const Rect& b = patches[j].geo_rect;
            if (std::min(a.max_x, b.max_x) > std::max(a.min_x, b.min_x) && std::min(a.max_y, b.max_y) > std::max(a.min_y, b.min_y)) edges.emplace_back(i, j);
        }
    const auto graph = build_overlap_graph(patches);
    const std::size_t n_test = 60, n_val = 30;
    std::size_t crossing = 0, size_misses = 0, nondeterministic = 0, train_total = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto m = sample_splits(graph, n_test, n_val, seed);
        for (auto [i, j] : edges) {
            const Split a = m.assignment[i], b = m.assignment[j];
            if (a != Split::Unused && b != Split::Unused && a != b) ++crossing;
        }
        size_misses += m.count(Split::TestIn) != n_test || m.count(Split::Val) != n_val;
        train_total += m.count(Split::Train);
        nondeterministic += splits_json(m, graph) != splits_json(sample_splits(graph, n_test, n_val, seed), graph);
    }
    o.require(crossing == 0, "edge crosses split boundary");
    o.require(size_misses == 0, "requested sizes not met");
    o.require(nondeterministic == 0, "same seed gave different manifest bytes");
    o.detail << edges.size() << " overlap edges x 100 seeds: " << crossing << " crossing; sizes met " << 100 - size_misses
             << "/100; mean train " << train_total / 100.0 << "; manifest bytes stable";
}

void metrics(Outcome& o) {
    std::mt19937 rng(8);
    std::uniform_int_distribution<int> nsamp(1, 8), level(0, 8), bit(0, 1);
    long long mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = nsamp(rng);
        ScoreTable t(static_cast<std::size_t>(n));
        for (auto& row : t)
            for (std::size_t k = 0; k < 7; ++k) {
                row.scores[k] = level(rng) / 8.0;
                row.targets[k] = bit(rng);
            }
        const auto r = evaluate(t);
        long long wrong = 0, exact = 0;
        for (const auto& row : t) {
            bool ok = true;
            for (std::size_t k = 0; k < 7; ++k)
                if ((row.scores[k] >= 0.5) != row.targets[k]) {
                    ++wrong;
                    ok = false;
                }
            exact += ok;
        }
        mismatches += r.hamming_loss != static_cast<double>(wrong) / (7.0 * n);
        mismatches += r.subset_accuracy != static_cast<double>(exact) / n;
        auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
        for (std::size_t k = 0; k < 7; ++k) {
            std::vector<double> s;
            std::vector<int> y;
            int tp = 0, fp = 0, fn = 0;
            for (const auto& row : t) {
                s.push_back(row.scores[k]);
                y.push_back(row.targets[k]);
                const bool p = row.scores[k] >= 0.5;
                tp += p && row.targets[k];
                fp += p && !row.targets[k];
                fn += !p && row.targets[k];
            }
            mismatches += !same(r.per_class[k].ap, oracle::ap_thresholds(s, y));
            mismatches += !same(r.per_class[k].auroc, oracle::auroc_pairs(s, y));
            mismatches += r.per_class[k].f1 != (tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn));
        }
    }
    o.require(mismatches == 0, "metric differs from exhaustive oracle");

    const std::vector<double> in_domain_f1{0.704, 0.788, 0.000, 0.331, 0.887, 0.770, 0.965};
    const std::vector<double> cross_domain_f1{0.569, 0.686, 0.000, 0.092, 0.808, 0.679, 0.992};
    const double in_avg = macro_mean(in_domain_f1), cross_avg = macro_mean(cross_domain_f1);
    o.require(std::abs(in_avg - 0.635) <= 0.001, "in-domain macro F1");
    o.require(std::abs(cross_avg - 0.547) <= 0.001, "cross-domain macro F1");

    MetricReport in_r, cross_r;
    in_r.classes = cross_r.classes = std::vector<std::string>(kClassNames.begin(), kClassNames.end());
    in_r.per_class.resize(7);
    cross_r.per_class.resize(7);
    in_r.per_class[4].auroc = 0.967;
    cross_r.per_class[4].auroc = 0.955;
    const double qc = delta_auc(in_r, cross_r)[4];
    o.require(std::abs(qc - 0.012) < 1e-12 && metric_value(qc, 3) == "0.012", "delta AUC (DEM, Qc)");
    o.detail << "1000 tables, " << mismatches << " mismatches; macro F1 " << fmt_fixed(in_avg, 4) << " / " << fmt_fixed(cross_avg, 4)
             << "; delta AUC Qc " << metric_value(qc, 3);
}

std::map<std::string, std::string> tree_digest(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() != "run_manifest.json") out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path().string());
    return out;
}

std::string manifest_without_timings(const fs::path& p) {
    auto doc = nlohmann::json::parse(read_text_file(p.string()));
    for (auto& [name, st] : doc["stages"].items()) st.erase("seconds");
    return doc.dump();
}

void end_to_end(Outcome& o) {
    const fs::path dir = fs::temp_directory_path() / "surfmap_acceptance_e2e";
    fs::remove_all(dir);
    const std::string cli = SURFMAP_CLI_PATH;
    auto run = [&](const std::string& args) {
        const int rc = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };
    o.require(run("synth " + dir.string()) == 0, "synth failed");
    const std::string cfg = "--config " + (dir / "config.ini").string();

    double secs[2];
    std::map<std::string, std::string> digest[2];
    std::string manifest[2];
    for (int k = 0; k < 2; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        o.require(run(cfg + " all") == 0, "`all` exited non-zero");
        secs[k] = seconds_since(t0);
        o.require(secs[k] < 60.0, "`all` took >= 60 s");
        digest[k] = tree_digest(dir / "out");
        manifest[k] = manifest_without_timings(dir / "out" / "run_manifest.json");
    }
    const fs::path out = dir / "out";
    const auto names = channel_manifest();
    const std::regex pattern("syn_\\d{4}_\\d{4}_([a-z]+(_\\d+)?)\\.tif");
    std::size_t files = 0, well_named = 0;
    std::map<std::string, int> per_patch;
    for (const auto& e : fs::directory_iterator(out / "patches")) {
        ++files;
        const std::string f = e.path().filename().string();
        std::smatch m;
        if (std::regex_match(f, m, pattern) && std::find(names.begin(), names.end(), m[1].str()) != names.end()) {
            ++well_named;
            ++per_patch[f.substr(0, 13)];
        }
    }
    bool all38 = per_patch.size() == 81;
    for (const auto& [id, c] : per_patch) all38 = all38 && c == 38;
    o.require(files == 81 * 38 && well_named == files && all38, "patch files");

    const auto index = nlohmann::json::parse(read_text_file((out / "patches.geojson").string()));
    bool index_ok = index["type"] == "FeatureCollection" && index["features"].size() == 81;
    for (const auto& f : index["features"])
        index_ok = index_ok && f["geometry"]["type"] == "Polygon" && f["properties"]["patch_id"].is_string() &&
                   per_patch.count(f["properties"]["patch_id"].get<std::string>());
    o.require(index_ok, "patch index GeoJSON");
    const auto labels = read_labels((out / "labels.csv").string());
    o.require(labels.size() == 81, "labels.csv rows");
    std::set<GeologicClass> present;
    for (const auto& l : labels)
        for (std::size_t k = 0; k < 7; ++k)
            if (l.onehot[k]) present.insert(static_cast<GeologicClass>(k + 1));
    o.require(present.size() == 3, "three geologic classes in labels");
    o.require(fs::exists(out / "splits.json") && fs::exists(out / "stats.csv"), "splits.json / stats.csv");
    o.require(digest[0] == digest[1] && manifest[0] == manifest[1], "second run differs");
    o.detail << "runs " << fmt_fixed(secs[0], 1) << " s and " << fmt_fixed(secs[1], 1) << " s; " << files << " patch files (" << per_patch.size()
             << " patches x 38); " << labels.size() << " label rows; " << digest[0].size() << " output files byte-identical across runs";
    fs::remove_all(dir);
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
        {"kernel oracle equivalence", kernel_oracle}, {"analytic terrain", analytic_terrain}, {"focal statistics", focal_statistics},
        {"patch grid", patch_grid},                   {"labels", labels},                     {"splits", splits},
        {"metrics", metrics},                         {"end-to-end", end_to_end}};
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            check(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
