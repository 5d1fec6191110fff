#include "surfmap/raster.hpp"
#include "surfmap/raster_io.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace surfmap;

namespace {

GridGeometry grid(int rows, int cols, double px = 5.0, double ox = 1000.0, double oy = 2000.0) {
    GridGeometry g;
    g.origin_x = ox;
    g.origin_y = oy;
    g.pixel_size = px;
    g.rows = rows;
    g.cols = cols;
    g.crs_id = "EPSG:3089";
    return g;
}

Raster random_raster(int rows, int cols, unsigned seed) {
    Raster r(grid(rows, cols));
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (auto& v : r.values()) v = u(rng);
    return r;
}

std::filesystem::path temp_dir() {
    auto p = std::filesystem::temp_directory_path() / ("surfmap_raster_" + std::to_string(::getpid()));
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST(Grid, AlignmentNeedsWholePixelOffsets) {
    auto a = grid(10, 10);
    auto b = a;
    b.origin_x += 15.0;
    EXPECT_TRUE(aligned(a, b));
    b.origin_x += 2.5;
    EXPECT_FALSE(aligned(a, b));
    auto c = a;
    c.crs_id = "EPSG:4326";
    EXPECT_FALSE(aligned(a, c));
}

TEST(Grid, RejectsBadGeometry) {
    EXPECT_THROW(Raster(grid(0, 5)), std::invalid_argument);
    EXPECT_THROW(Raster(grid(5, 5, -1.0)), std::invalid_argument);
}

TEST(Reflect, MatchesMirrorOracle) {
    for (int n : {1, 2, 3, 7})
        for (int i = -20; i < 30; ++i) EXPECT_EQ(reflect_index(i, n), oracle::mirror(i, n)) << i << " " << n;
}

TEST(Cubic, KernelPartitionOfUnity) {
    for (double f = 0.0; f < 1.0; f += 0.05) {
        const auto t = detail::cubic_taps(10.0 + f, 100);
        EXPECT_NEAR(t.w[0] + t.w[1] + t.w[2] + t.w[3], 1.0, 1e-15);
    }
}

TEST(Resample, ReproducesQuadraticAwayFromEdges) {
    Raster r(grid(64, 64));
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j) {
            const double x = r.geometry().center_x(j), y = r.geometry().center_y(i);
            r.set(i, j, 0.3 * x - 0.2 * y + 1e-3 * (x - 1100) * (y - 1800));
        }
    const Raster out = resample(r, 10.0);
    EXPECT_EQ(out.rows(), 32);
    EXPECT_EQ(out.cols(), 32);
    EXPECT_DOUBLE_EQ(out.geometry().max_x(), r.geometry().max_x());
    EXPECT_DOUBLE_EQ(out.geometry().min_y(), r.geometry().min_y());
    for (int i = 3; i < 29; ++i)
        for (int j = 3; j < 29; ++j) {
            const double x = out.geometry().center_x(j), y = out.geometry().center_y(i);
            EXPECT_NEAR(out.at(i, j), 0.3 * x - 0.2 * y + 1e-3 * (x - 1100) * (y - 1800), 1e-9);
        }
}

TEST(Resample, ConstantStaysConstantEverywhere) {
    Raster r(grid(20, 30), 7.25);
    const Raster out = resample(r, 12.5);
    EXPECT_EQ(out.rows(), 8);
    EXPECT_EQ(out.cols(), 12);
    for (double v : out.values()) EXPECT_NEAR(v, 7.25, 1e-12);
}

TEST(Resample, NodataPropagates) {
    Raster r(grid(20, 20), 1.0);
    r.set_nodata(10, 10);
    const Raster out = resample(r, 10.0);
    EXPECT_FALSE(out.valid(5, 5));
    EXPECT_TRUE(out.valid(0, 0));
}

TEST(Resample, Errors) {
    Raster r(grid(8, 8));
    EXPECT_THROW(resample(r, 0.0), std::invalid_argument);
    for (std::size_t i = 0; i < r.geometry().size(); ++i) r.set_nodata(i, true);
    EXPECT_THROW(resample(r, 10.0), std::invalid_argument);
}

TEST(Align, IdentityOnSameGrid) {
    const Raster r = random_raster(16, 16, 3);
    const Raster out = align_to(r, r.geometry());
    for (std::size_t i = 0; i < out.values().size(); ++i) EXPECT_NEAR(out.values()[i], r.values()[i], 1e-12);
}

TEST(Align, OutsideExtentIsNodataAndCrsMustMatch) {
    const Raster r = random_raster(16, 16, 4);
    auto g = r.geometry();
    g.origin_x -= 50.0;
    const Raster out = align_to(r, g);
    EXPECT_FALSE(out.valid(0, 0));
    EXPECT_TRUE(out.valid(0, 15));
    g.crs_id = "EPSG:1";
    EXPECT_THROW(align_to(r, g), std::invalid_argument);
}

TEST(Gaussian, ImpulseResponseIsSeparableKernel) {
    Raster r(grid(31, 31), 0.0);
    r.set(15, 15, 1.0);
    const Raster s = gaussian_smooth(r, 1.0);
    const auto w = gaussian_kernel(1.0);
    ASSERT_EQ(w.size(), 7u);
    EXPECT_NEAR(s.at(15, 15), w[3] * w[3], 1e-15);
    EXPECT_NEAR(s.at(14, 17), w[2] * w[5], 1e-15);
    double total = 0;
    for (double v : s.values()) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Gaussian, ConstantPreservedWithNodata) {
    Raster r(grid(12, 12), 4.0);
    r.set_nodata(5, 5);
    const Raster s = gaussian_smooth(r, 1.5);
    EXPECT_FALSE(s.valid(5, 5));
    EXPECT_NEAR(s.at(5, 6), 4.0, 1e-12);
    EXPECT_NEAR(s.at(0, 0), 4.0, 1e-12);
}

TEST(Mosaic, LaterValidCellsWin) {
    Raster a(grid(4, 4, 5.0, 0.0, 20.0), 1.0);
    Raster b(grid(4, 4, 5.0, 10.0, 20.0), 2.0);
    b.set_nodata(0, 0);
    const Raster tiles[] = {a, b};
    const Raster m = mosaic(tiles);
    EXPECT_EQ(m.cols(), 6);
    EXPECT_EQ(m.rows(), 4);
    EXPECT_EQ(m.at(0, 2), 1.0);
    EXPECT_EQ(m.at(1, 2), 2.0);
    EXPECT_EQ(m.at(0, 5), 2.0);
    Raster c(grid(4, 4, 5.0, 2.0, 20.0));
    const Raster bad[] = {a, c};
    EXPECT_THROW(mosaic(bad), std::invalid_argument);
}

TEST(Mosaic, GapsAreNodata) {
    Raster a(grid(2, 2, 5.0, 0.0, 10.0), 1.0);
    Raster b(grid(2, 2, 5.0, 20.0, 10.0), 1.0);
    const Raster tiles[] = {a, b};
    const Raster m = mosaic(tiles);
    EXPECT_EQ(m.cols(), 6);
    EXPECT_FALSE(m.valid(0, 2));
}

TEST(Stats, MeanAndPopulationStddev) {
    Raster r(grid(1, 4));
    r.set(0, 0, 1);
    r.set(0, 1, 2);
    r.set(0, 2, 3);
    r.set_nodata(0, 3);
    const auto s = band_stats(r);
    EXPECT_EQ(s.valid_count, 3u);
    EXPECT_DOUBLE_EQ(s.mean, 2.0);
    EXPECT_NEAR(s.stddev, std::sqrt(2.0 / 3.0), 1e-15);
}

TEST(Transform, Log1pAndWindow) {
    Raster r(grid(3, 3), 0.0);
    r.set(1, 1, std::exp(1.0) - 1.0);
    const Raster l = log1p_transform(r);
    EXPECT_NEAR(l.at(1, 1), 1.0, 1e-15);
    const Raster w = window(l, 1, 1, 2, 2);
    EXPECT_EQ(w.at(0, 0), l.at(1, 1));
    EXPECT_DOUBLE_EQ(w.geometry().origin_x, r.geometry().origin_x + 5.0);
    EXPECT_THROW(window(l, 2, 2, 2, 2), std::out_of_range);
    r.set(0, 0, -1.0);
    EXPECT_THROW(log1p_transform(r), std::invalid_argument);
}

TEST(GeoTiff, Float32RoundTripKeepsGeometryAndNodata) {
    const auto dir = temp_dir();
    Raster r = random_raster(37, 53, 9);
    r.set_nodata(3, 4);
    const auto path = (dir / "f32.tif").string();
    write_geotiff(path, r);
    const auto back = read_geotiff(path);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].geometry(), r.geometry());
    EXPECT_FALSE(back[0].valid(3, 4));
    for (int i = 0; i < 37; ++i)
        for (int j = 0; j < 53; ++j)
            if (r.valid(i, j)) EXPECT_EQ(back[0].at(i, j), static_cast<double>(static_cast<float>(r.at(i, j))));
}

TEST(GeoTiff, MultiBandUInt8Deflate) {
    const auto dir = temp_dir();
    Raster a(grid(300, 70), 3.0), b(grid(300, 70), 200.0);
    b.set_nodata(299, 69);
    const Raster bands[] = {a, b};
    const auto path = (dir / "u8.tif").string();
    write_geotiff(path, bands, GeoTiffOptions{SampleType::UInt8, std::nullopt, true});
    const auto back = read_geotiff(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].at(150, 10), 3.0);
    EXPECT_EQ(back[1].at(0, 0), 200.0);
    EXPECT_FALSE(back[1].valid(299, 69));
}

TEST(GeoTiff, WritesAreDeterministic) {
    const auto dir = temp_dir();
    const Raster r = random_raster(20, 20, 1);
    write_geotiff((dir / "d1.tif").string(), r);
    write_geotiff((dir / "d2.tif").string(), r);
    EXPECT_EQ(sha256_file((dir / "d1.tif").string()), sha256_file((dir / "d2.tif").string()));
}

TEST(GeoTiff, MissingAndCorruptFiles) {
    const auto dir = temp_dir();
    EXPECT_THROW(read_geotiff((dir / "nope.tif").string()), IoError);
    write_text_file((dir / "bad.tif").string(), "not a tiff");
    EXPECT_THROW(read_geotiff((dir / "bad.tif").string()), IoError);
}

TEST(AsciiGrid, RoundTrip) {
    const auto dir = temp_dir();
    Raster r = random_raster(6, 9, 2);
    r.set_nodata(2, 2);
    const auto path = (dir / "g.asc").string();
    write_raster(path, r);
    const Raster back = read_raster(path, "EPSG:3089");
    EXPECT_EQ(back.geometry(), r.geometry());
    EXPECT_FALSE(back.valid(2, 2));
    EXPECT_EQ(back.at(5, 8), r.at(5, 8));
}
