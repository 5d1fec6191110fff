#include "surfmap/geojson.hpp"
#include "surfmap/vector.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>
#include <random>

using namespace surfmap;

using fixture::grid;
using fixture::rect_poly;
using fixture::star;

TEST(Rings, AreaOrientationAndBounds) {
    Polygon p = rect_poly(0, 0, 4, 3);
    EXPECT_DOUBLE_EQ(ring_signed_area(open_vertices(p.exterior)), 12.0);
    std::reverse(p.exterior.begin(), p.exterior.end());
    EXPECT_DOUBLE_EQ(ring_signed_area(open_vertices(p.exterior)), -12.0);
    p.holes.push_back(Rect{1, 1, 2, 2}.ring());
    normalize_orientation(p);
    EXPECT_GT(ring_signed_area(open_vertices(p.exterior)), 0.0);
    EXPECT_LT(ring_signed_area(open_vertices(p.holes[0])), 0.0);
    EXPECT_DOUBLE_EQ(polygon_area(p), 11.0);
    const Rect b = bounds(p);
    EXPECT_EQ(b.max_x, 4.0);
    EXPECT_EQ(b.max_y, 3.0);
}

TEST(Rings, PointLocation) {
    Polygon p = rect_poly(0, 0, 4, 4);
    p.holes.push_back(Rect{1, 1, 2, 2}.ring());
    EXPECT_EQ(locate({3, 3}, p), Location::Inside);
    EXPECT_EQ(locate({1.5, 1.5}, p), Location::Outside);
    EXPECT_EQ(locate({1, 1.5}, p), Location::Boundary);
    EXPECT_EQ(locate({4, 2}, p), Location::Boundary);
    EXPECT_EQ(locate({5, 2}, p), Location::Outside);
}

TEST(Clip, RectIntersectionAreaExactCases) {
    const Polygon sq = rect_poly(0, 0, 10, 10);
    EXPECT_DOUBLE_EQ(rect_intersection_area(sq, {5, 5, 15, 15}), 25.0);
    EXPECT_DOUBLE_EQ(rect_intersection_area(sq, {2, 2, 3, 3}), 1.0);
    EXPECT_DOUBLE_EQ(rect_intersection_area(sq, {10, 0, 20, 10}), 0.0);
    Polygon tri;
    tri.exterior = {{0, 0}, {10, 0}, {0, 10}, {0, 0}};
    EXPECT_DOUBLE_EQ(rect_intersection_area(tri, {0, 0, 5, 5}), 25.0);
    EXPECT_DOUBLE_EQ(rect_intersection_area(tri, {5, 0, 10, 5}), 12.5);
    Polygon holed = sq;
    holed.holes.push_back(Rect{4, 4, 6, 6}.ring());
    normalize_orientation(holed);
    EXPECT_DOUBLE_EQ(rect_intersection_area(holed, {0, 0, 5, 5}), 24.0);
    EXPECT_THROW(rect_intersection_area(sq, {1, 1, 1, 2}), std::invalid_argument);
}

TEST(Clip, RectIntersectionOfConcaveShapesMatchesSampling) {
    std::mt19937 rng(7);
    for (int t = 0; t < 10; ++t) {
        const Polygon p = star(rng, 50, 50, 10, 40, 14);
        const Rect r{30, 35, 72, 61};
        const double exact = rect_intersection_area(p, r);
        const double approx = oracle::sampled_area(r.min_x, r.min_y, r.max_x, r.max_y, 800,
                                                   [&](double x, double y) { return locate(Point{x, y}, p) == Location::Inside; });
        EXPECT_NEAR(exact, approx, 0.01 * r.area());
    }
}

TEST(Decompose, TrapezoidsTileThePolygon) {
    std::mt19937 rng(3);
    for (int t = 0; t < 30; ++t) {
        Polygon p = star(rng, 0, 0, 5, 20, 9 + t % 12);
        normalize_orientation(p);
        const auto traps = trapezoids(MultiPolygon{p});
        double sum = 0.0;
        for (const auto& tr : traps) {
            const double a = ring_signed_area(tr);
            EXPECT_GE(a, 0.0);
            sum += a;
        }
        EXPECT_NEAR(sum, polygon_area(p), 1e-9 * polygon_area(p));
    }
}

TEST(Decompose, PolygonOverlapMatchesSampling) {
    std::mt19937 rng(5);
    for (int t = 0; t < 10; ++t) {
        Polygon a = star(rng, 0, 0, 5, 20, 12);
        Polygon b = star(rng, 8, 3, 5, 20, 12);
        normalize_orientation(a);
        normalize_orientation(b);
        const double exact = polygon_intersection_area(a, b);
        const Rect box{-30, -30, 40, 40};
        const double approx = oracle::sampled_area(box.min_x, box.min_y, box.max_x, box.max_y, 900, [&](double x, double y) {
            return locate(Point{x, y}, a) == Location::Inside && locate(Point{x, y}, b) == Location::Inside;
        });
        EXPECT_NEAR(exact, approx, 0.005 * box.area());
        EXPECT_NEAR(exact, polygon_intersection_area(b, a), 1e-9 * std::max(1.0, exact));
    }
}

TEST(Topology, CleanTilingHasEmptyReport) {
    std::vector<Polygon> layer{rect_poly(0, 0, 100, 100, GeologicClass::Qal, "a"), rect_poly(100, 0, 200, 100, GeologicClass::Qc, "b"),
                               rect_poly(0, 100, 50, 200, GeologicClass::Qr, "c"), rect_poly(50, 100, 200, 200, GeologicClass::Qr, "d")};
    const auto rep = validate_topology(layer);
    EXPECT_TRUE(rep.empty());
}

TEST(Topology, ReportsOverlapGapAndBadRings) {
    std::vector<Polygon> layer{rect_poly(0, 0, 100, 100, GeologicClass::Qal, "a"), rect_poly(90, 0, 200, 100, GeologicClass::Qc, "b")};
    auto rep = validate_topology(layer);
    ASSERT_EQ(rep.overlaps.size(), 1u);
    EXPECT_EQ(rep.overlaps[0].feature_a, "a");
    EXPECT_DOUBLE_EQ(rep.overlaps[0].area, 1000.0);
    EXPECT_TRUE(validate_topology(layer, 2000.0).empty());

    std::vector<Polygon> ring_layer;
    const double xs[] = {0, 10, 20, 30};
    int n = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i == 1 && j == 1) continue;
            ring_layer.push_back(rect_poly(xs[j], xs[i], xs[j + 1], xs[i + 1], GeologicClass::Qal, "r" + std::to_string(n++)));
        }
    rep = validate_topology(ring_layer);
    EXPECT_DOUBLE_EQ(rep.gap_area, 100.0);
    EXPECT_TRUE(validate_topology(ring_layer, 150.0).empty());

    Polygon open = rect_poly(0, 0, 1, 1, GeologicClass::Qal, "open");
    open.exterior.pop_back();
    Polygon bowtie;
    bowtie.id = "bowtie";
    bowtie.exterior = {{0, 0}, {10, 10}, {10, 0}, {0, 10}, {0, 0}};
    rep = validate_topology({open, bowtie, rect_poly(50, 50, 60, 60)});
    ASSERT_EQ(rep.invalid_rings.size(), 2u);
    EXPECT_EQ(rep.invalid_rings[0].feature_id, "open");
    EXPECT_EQ(rep.invalid_rings[1].feature_id, "bowtie");
    EXPECT_FALSE(rep.empty());
    EXPECT_THROW(validate_topology({}), std::invalid_argument);
}

TEST(Dissolve, AdjacentSquaresMergeWithTJunctions) {
    const auto aoi = derive_aoi({rect_poly(0, 0, 20, 20), rect_poly(20, 0, 30, 10), rect_poly(20, 10, 30, 20)});
    ASSERT_EQ(aoi.size(), 1u);
    EXPECT_TRUE(aoi[0].holes.empty());
    EXPECT_EQ(open_vertices(aoi[0].exterior).size(), 4u);
    EXPECT_DOUBLE_EQ(polygon_area(aoi[0]), 600.0);
}

TEST(Dissolve, RingOfTilesKeepsHoleAndSeparatesParts) {
    std::vector<Polygon> layer;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (!(i == 1 && j == 1)) layer.push_back(rect_poly(j * 10.0, i * 10.0, j * 10.0 + 10, i * 10.0 + 10));
    layer.push_back(rect_poly(100, 100, 110, 110));
    layer.push_back(rect_poly(110, 110, 120, 120));  // touches the previous one at a single corner
    const auto aoi = derive_aoi(layer);
    ASSERT_EQ(aoi.size(), 3u);
    EXPECT_DOUBLE_EQ(multipolygon_area(aoi), 800.0 + 200.0);
    int holes = 0;
    for (const auto& p : aoi) holes += static_cast<int>(p.holes.size());
    EXPECT_EQ(holes, 1);
}

TEST(Dissolve, RandomStarsInsideGridCells) {
    std::mt19937 rng(9);
    const Polygon s = star(rng, 0, 0, 5, 10, 10);
    const auto aoi = derive_aoi({s});
    ASSERT_EQ(aoi.size(), 1u);
    EXPECT_NEAR(polygon_area(aoi[0]), std::abs(ring_signed_area(open_vertices(s.exterior))), 1e-9);
}

TEST(ClipLayer, InsidePassesThroughAndCutsMatchArea) {
    const MultiPolygon aoi = derive_aoi({rect_poly(0, 0, 100, 100)});
    VectorLayer layer;
    layer.polygons.push_back(rect_poly(10, 10, 20, 20, GeologicClass::Qal, "in"));
    layer.polygons.push_back(rect_poly(90, 40, 130, 60, GeologicClass::Qc, "cut"));
    layer.polygons.push_back(rect_poly(200, 200, 210, 210, GeologicClass::Qr, "out"));
    layer.lines.push_back({{{-50, 50}, {50, 50}, {50, 150}}, LineSource::Hydro, "river"});
    const VectorLayer out = clip(layer, aoi);
    ASSERT_EQ(out.polygons.size(), 2u);
    EXPECT_EQ(out.polygons[0].exterior, layer.polygons[0].exterior);
    EXPECT_EQ(out.polygons[1].id, "cut");
    EXPECT_EQ(out.polygons[1].cls, GeologicClass::Qc);
    EXPECT_DOUBLE_EQ(polygon_area(out.polygons[1]), 200.0);
    ASSERT_EQ(out.lines.size(), 1u);
    ASSERT_EQ(out.lines[0].points.size(), 3u);
    EXPECT_EQ(out.lines[0].points.front(), (Point{0, 50}));
    EXPECT_EQ(out.lines[0].points.back(), (Point{50, 100}));
    const VectorLayer again = clip(out, aoi);
    ASSERT_EQ(again.polygons.size(), out.polygons.size());
    for (std::size_t i = 0; i < out.polygons.size(); ++i) EXPECT_EQ(again.polygons[i].exterior, out.polygons[i].exterior);
}

TEST(ClipLayer, ConcaveFeatureAgainstConcaveAoi) {
    std::mt19937 rng(12);
    for (int t = 0; t < 40; ++t) {
        Polygon a = star(rng, 0, 0, 20, 40, 16);
        Polygon f = star(rng, 15, 5, 10, 30, 12);
        normalize_orientation(a);
        const MultiPolygon aoi = derive_aoi({a});
        VectorLayer layer;
        layer.polygons.push_back(f);
        const VectorLayer out = clip(layer, aoi);
        double area = 0.0;
        for (const auto& p : out.polygons) {
            area += polygon_area(p);
            EXPECT_EQ(ring_problem(p.exterior).value_or("ok"), "ok");
        }
        EXPECT_NEAR(area, polygon_intersection_area(f, a), 1e-6 * area);
        const VectorLayer again = clip(out, aoi);
        EXPECT_EQ(again.polygons.size(), out.polygons.size());
    }
    VectorLayer layer;
    layer.polygons.push_back(rect_poly(0, 0, 1, 1));
    EXPECT_THROW(clip(layer, MultiPolygon{}), std::invalid_argument);
}

TEST(Rasterize, OrdinalCentersAndSharedEdges) {
    VectorLayer layer;
    layer.polygons.push_back(rect_poly(0, 0, 50, 100, GeologicClass::Qc, "left"));
    layer.polygons.push_back(rect_poly(50, 0, 100, 100, GeologicClass::Qr, "right"));
    const GridGeometry g = grid(0, 100, 5, 20, 20);
    const Raster r = rasterize(layer, g, RasterizeMode::OrdinalPolygons);
    int qc = 0, qr = 0;
    for (double v : r.values()) {
        qc += v == static_cast<double>(GeologicClass::Qc);
        qr += v == static_cast<double>(GeologicClass::Qr);
    }
    EXPECT_EQ(qc, 200);
    EXPECT_EQ(qr, 200);
    // Edges through cell centers go to exactly one polygon.
    VectorLayer shifted;
    shifted.polygons.push_back(rect_poly(0, 0, 52.5, 100, GeologicClass::Qc));
    shifted.polygons.push_back(rect_poly(52.5, 0, 100, 100, GeologicClass::Qr));
    const Raster s = rasterize(shifted, g, RasterizeMode::OrdinalPolygons);
    for (double v : s.values()) EXPECT_NE(v, 0.0);
    EXPECT_EQ(s.at(0, 10), static_cast<double>(GeologicClass::Qr));
}

TEST(Rasterize, AreaAgreesWithVectorForLargePolygons) {
    std::mt19937 rng(21);
    const GridGeometry g = grid(0, 400, 2, 200, 200);
    for (int t = 0; t < 20; ++t) {
        const Polygon p = star(rng, 200, 200, 40, 150, 12);
        VectorLayer layer;
        layer.polygons.push_back(p);
        const Raster r = rasterize(layer, g, RasterizeMode::OrdinalPolygons);
        long long cells = 0;
        for (double v : r.values()) cells += v != 0.0;
        ASSERT_GE(cells, 100);
        const double area = std::abs(ring_signed_area(open_vertices(p.exterior)));
        EXPECT_NEAR(cells * 4.0, area, 0.02 * area);
    }
}

TEST(Rasterize, BinaryLinesTouchEveryCrossedCell) {
    VectorLayer layer;
    layer.lines.push_back({{{0.5, 7.5}, {9.5, 7.5}}, LineSource::Infra, "road"});
    layer.lines.push_back({{{0.5, 0.5}, {3.5, 3.5}}, LineSource::Hydro, "creek"});
    const Raster r = rasterize(layer, grid(0, 10, 1, 10, 10), RasterizeMode::BinaryLines);
    for (int c = 0; c < 10; ++c) EXPECT_EQ(r.at(2, c), 1.0);
    for (int k = 0; k < 4; ++k) EXPECT_EQ(r.at(9 - k, k), 1.0);
    EXPECT_EQ(r.at(9, 1), 1.0);  // the diagonal passes exactly through the shared corner
    EXPECT_EQ(r.at(5, 5), 0.0);
    layer.polygons.push_back(rect_poly(5, 2, 8, 5, GeologicClass::None, "pond"));
    const Raster w = rasterize(layer, grid(0, 10, 1, 10, 10), RasterizeMode::BinaryLines);
    EXPECT_EQ(w.at(6, 6), 1.0);
    VectorLayer unlabeled;
    unlabeled.polygons.push_back(rect_poly(0, 0, 1, 1, GeologicClass::None));
    EXPECT_THROW(rasterize(unlabeled, grid(0, 10, 1, 10, 10), RasterizeMode::OrdinalPolygons), std::invalid_argument);
}

TEST(GeoJson, RoundTripAndErrors) {
    const auto dir = std::filesystem::temp_directory_path() / ("surfmap_vec_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    VectorLayer layer;
    Polygon p = rect_poly(0, 0, 10.125, 10, GeologicClass::Qaf, "p1");
    p.holes.push_back(Rect{1, 1, 2, 2}.ring());
    normalize_orientation(p);
    layer.polygons.push_back(p);
    layer.lines.push_back({{{0, 0}, {3, 4}}, LineSource::Infra, "l1"});
    const auto path = (dir / "layer.geojson").string();
    write_geojson(path, layer);
    const VectorLayer back = read_geojson(path);
    ASSERT_EQ(back.polygons.size(), 1u);
    EXPECT_EQ(back.polygons[0].exterior, p.exterior);
    EXPECT_EQ(back.polygons[0].holes[0], p.holes[0]);
    EXPECT_EQ(back.polygons[0].cls, GeologicClass::Qaf);
    EXPECT_EQ(back.polygons[0].id, "p1");
    ASSERT_EQ(back.lines.size(), 1u);
    EXPECT_EQ(back.lines[0].source, LineSource::Infra);

    EXPECT_THROW(parse_geojson(R"({"type":"FeatureCollection","features":[{"type":"Feature","properties":{"unit":"Qx"},
        "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}]})"),
                 IoError);
    EXPECT_THROW(parse_geojson("{"), IoError);
    EXPECT_THROW(read_geojson((dir / "missing.geojson").string()), IoError);
    const VectorLayer multi = parse_geojson(R"({"type":"FeatureCollection","features":[{"type":"Feature","id":7,"properties":{"unit":"Qr"},
        "geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1],[0,0]]],[[[5,5],[6,5],[6,6],[5,5]]]]}}]})");
    ASSERT_EQ(multi.polygons.size(), 2u);
    EXPECT_EQ(multi.polygons[1].id, "7");
}
