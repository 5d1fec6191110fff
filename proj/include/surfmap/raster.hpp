#pragma once

// Canonical single-band raster plus the resampling, smoothing, mosaicking,
// alignment and statistics used by every later stage.
//
// Conventions: the grid origin is the top-left corner in ground units (feet),
// rows run south, columns run east, pixels are square. Cell (r, c) has its
// center at (origin_x + (c + 0.5) * px, origin_y - (r + 0.5) * px).

#include "surfmap/util.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace surfmap {

struct GridGeometry {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_size = 1.0;
    int rows = 1;
    int cols = 1;
    std::string crs_id;

    double min_x() const { return origin_x; }
    double max_x() const { return origin_x + cols * pixel_size; }
    double max_y() const { return origin_y; }
    double min_y() const { return origin_y - rows * pixel_size; }
    double center_x(int col) const { return origin_x + (col + 0.5) * pixel_size; }
    double center_y(int row) const { return origin_y - (row + 0.5) * pixel_size; }
    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }

    void validate() const {
        if (!(pixel_size > 0.0) || !std::isfinite(pixel_size))
            throw std::invalid_argument("grid: pixel size must be positive");
        if (rows < 1 || cols < 1) throw std::invalid_argument("grid: rows and cols must be >= 1");
        if (!std::isfinite(origin_x) || !std::isfinite(origin_y))
            throw std::invalid_argument("grid: origin must be finite");
    }

    bool operator==(const GridGeometry&) const = default;
};

/// Same CRS, same pixel size and origins that differ by whole pixels.
inline bool aligned(const GridGeometry& a, const GridGeometry& b, double tol_px = 1e-6) {
    if (a.crs_id != b.crs_id) return false;
    if (std::abs(a.pixel_size - b.pixel_size) > 1e-12 * std::max(a.pixel_size, b.pixel_size)) return false;
    const double dx = (a.origin_x - b.origin_x) / a.pixel_size;
    const double dy = (a.origin_y - b.origin_y) / a.pixel_size;
    return std::abs(dx - std::round(dx)) <= tol_px && std::abs(dy - std::round(dy)) <= tol_px;
}

class Raster {
public:
    Raster() = default;

    explicit Raster(GridGeometry geometry, double fill = 0.0, std::string units = {})
        : geometry_(std::move(geometry)), units_(std::move(units)) {
        geometry_.validate();
        values_.assign(geometry_.size(), fill);
        nodata_.assign(geometry_.size(), 0);
    }

    const GridGeometry& geometry() const { return geometry_; }
    int rows() const { return geometry_.rows; }
    int cols() const { return geometry_.cols; }
    const std::string& units() const { return units_; }
    void set_units(std::string u) { units_ = std::move(u); }

    std::size_t index(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(geometry_.cols) + static_cast<std::size_t>(c);
    }
    double at(int r, int c) const { return values_[index(r, c)]; }
    double& at(int r, int c) { return values_[index(r, c)]; }
    bool valid(int r, int c) const { return nodata_[index(r, c)] == 0; }
    bool is_nodata(std::size_t i) const { return nodata_[i] != 0; }

    void set(int r, int c, double v) {
        values_[index(r, c)] = v;
        nodata_[index(r, c)] = 0;
    }
    void set_nodata(int r, int c) {
        values_[index(r, c)] = 0.0;
        nodata_[index(r, c)] = 1;
    }
    void set_nodata(std::size_t i, bool nd) {
        nodata_[i] = nd ? 1 : 0;
        if (nd) values_[i] = 0.0;
    }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const std::uint8_t> nodata_mask() const { return nodata_; }

    std::size_t valid_count() const {
        return static_cast<std::size_t>(std::count(nodata_.begin(), nodata_.end(), std::uint8_t{0}));
    }

    /// Throws if a valid cell holds a non-finite value.
    void check_finite() const {
        for (std::size_t i = 0; i < values_.size(); ++i)
            if (nodata_[i] == 0 && !std::isfinite(values_[i]))
                throw std::invalid_argument("raster: non-finite value in a valid cell");
    }

private:
    GridGeometry geometry_;
    std::vector<double> values_;
    std::vector<std::uint8_t> nodata_;
    std::string units_;
};

struct BandStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t valid_count = 0;
};

/// Index into [0, n) with mirror reflection that does not repeat the edge
/// sample (... c b | a b c d | c b ...). Works for any offset.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

namespace detail {

constexpr double kCubicA = -0.5;

/// Keys cubic convolution kernel.
inline double cubic_weight(double s) {
    s = std::abs(s);
    if (s <= 1.0) return ((kCubicA + 2.0) * s - (kCubicA + 3.0)) * s * s + 1.0;
    if (s < 2.0) return ((kCubicA * s - 5.0 * kCubicA) * s + 8.0 * kCubicA) * s - 4.0 * kCubicA;
    return 0.0;
}

struct CubicTaps {
    std::array<int, 4> idx{};
    std::array<double, 4> w{};
};

inline CubicTaps cubic_taps(double u, int n) {
    CubicTaps t;
    const double base = std::floor(u);
    const double frac = u - base;
    const int i0 = static_cast<int>(base);
    for (int k = 0; k < 4; ++k) {
        t.idx[static_cast<std::size_t>(k)] = reflect_index(i0 - 1 + k, n);
        t.w[static_cast<std::size_t>(k)] = cubic_weight(frac - (k - 1));
    }
    return t;
}

/// Cubic-convolution resample of src onto every cell center of target.
/// When clip_to_extent is set, target centers outside src's footprint are nodata.
inline Raster interpolate_onto(const Raster& src, const GridGeometry& target, bool clip_to_extent) {
    const auto& sg = src.geometry();
    Raster out(target, 0.0, src.units());
    std::vector<CubicTaps> col_taps(static_cast<std::size_t>(target.cols));
    std::vector<std::uint8_t> col_outside(static_cast<std::size_t>(target.cols), 0);
    for (int c = 0; c < target.cols; ++c) {
        const double x = target.center_x(c);
        col_taps[static_cast<std::size_t>(c)] = cubic_taps((x - sg.origin_x) / sg.pixel_size - 0.5, sg.cols);
        col_outside[static_cast<std::size_t>(c)] = (x < sg.min_x() || x > sg.max_x()) ? 1 : 0;
    }
    parallel_rows(target.rows, [&](int rb, int re) {
        for (int r = rb; r < re; ++r) {
            const double y = target.center_y(r);
            const bool row_outside = y < sg.min_y() || y > sg.max_y();
            const CubicTaps rt = cubic_taps((sg.origin_y - y) / sg.pixel_size - 0.5, sg.rows);
            for (int c = 0; c < target.cols; ++c) {
                if (clip_to_extent && (row_outside || col_outside[static_cast<std::size_t>(c)])) {
                    out.set_nodata(r, c);
                    continue;
                }
                const CubicTaps& ct = col_taps[static_cast<std::size_t>(c)];
                double acc = 0.0;
                bool nodata = false;
                for (std::size_t i = 0; i < 4 && !nodata; ++i) {
                    if (rt.w[i] == 0.0) continue;
                    double row_acc = 0.0;
                    for (std::size_t j = 0; j < 4; ++j) {
                        if (ct.w[j] == 0.0) continue;
                        if (!src.valid(rt.idx[i], ct.idx[j])) {
                            nodata = true;
                            break;
                        }
                        row_acc += ct.w[j] * src.at(rt.idx[i], ct.idx[j]);
                    }
                    acc += rt.w[i] * row_acc;
                }
                if (nodata) out.set_nodata(r, c);
                else out.set(r, c, acc);
            }
        }
    });
    return out;
}

}  // namespace detail

/// Resamples to a new pixel size over the same ground extent using separable
/// Keys cubic convolution (a = -0.5) with reflect padding.
inline Raster resample(const Raster& r, double target_pixel_size) {
    if (!(target_pixel_size > 0.0) || !std::isfinite(target_pixel_size))
        throw std::invalid_argument("resample: target pixel size must be positive");
    if (r.valid_count() == 0) throw std::invalid_argument("resample: raster has no valid cells");
    const auto& g = r.geometry();
    GridGeometry out = g;
    out.pixel_size = target_pixel_size;
    out.rows = std::max(1, static_cast<int>(std::lround(g.rows * g.pixel_size / target_pixel_size)));
    out.cols = std::max(1, static_cast<int>(std::lround(g.cols * g.pixel_size / target_pixel_size)));
    return detail::interpolate_onto(r, out, false);
}

/// Resamples onto an arbitrary grid in the same CRS, without extent clipping.
inline Raster resample_to(const Raster& r, const GridGeometry& target) {
    if (r.geometry().crs_id != target.crs_id) throw std::invalid_argument("resample_to: CRS mismatch");
    target.validate();
    return detail::interpolate_onto(r, target, false);
}

/// Reprojects r onto exactly the reference grid; reference cells whose
/// centers fall outside r's footprint become nodata.
inline Raster align_to(const Raster& r, const GridGeometry& ref) {
    if (r.geometry().crs_id != ref.crs_id)
        throw std::invalid_argument("align_to: CRS mismatch ('" + r.geometry().crs_id + "' vs '" + ref.crs_id +
                                    "'); datum transforms are not supported");
    ref.validate();
    return detail::interpolate_onto(r, ref, true);
}

/// Normalized 1-D Gaussian weights for offsets -radius..radius, radius = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("gaussian: sigma must be positive");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
        w[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : w) v /= sum;
    return w;
}

/// Separable Gaussian smoothing with reflect padding. Nodata samples drop out
/// and the remaining weights are renormalized; nodata cells stay nodata.
inline Raster gaussian_smooth(const Raster& r, double sigma) {
    const auto w = gaussian_kernel(sigma);
    const int radius = static_cast<int>(w.size() / 2);
    const int rows = r.rows();
    const int cols = r.cols();

    auto pass = [&](const Raster& in, bool horizontal) {
        Raster out(in.geometry(), 0.0, in.units());
        parallel_rows(rows, [&](int rb, int re) {
            for (int row = rb; row < re; ++row) {
                for (int col = 0; col < cols; ++col) {
                    if (!in.valid(row, col)) {
                        out.set_nodata(row, col);
                        continue;
                    }
                    double acc = 0.0;
                    double wsum = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        const int rr = horizontal ? row : reflect_index(row + t, rows);
                        const int cc = horizontal ? reflect_index(col + t, cols) : col;
                        if (!in.valid(rr, cc)) continue;
                        const double wt = w[static_cast<std::size_t>(t + radius)];
                        acc += wt * in.at(rr, cc);
                        wsum += wt;
                    }
                    out.set(row, col, acc / wsum);
                }
            }
        });
        return out;
    };
    return pass(pass(r, true), false);
}

/// Merges pairwise-aligned tiles onto their bounding grid. Valid cells of a
/// later tile overwrite earlier ones; cells no tile covers are nodata.
inline Raster mosaic(std::span<const Raster> tiles) {
    if (tiles.empty()) throw std::invalid_argument("mosaic: no tiles");
    const auto& g0 = tiles.front().geometry();
    double min_x = g0.min_x(), max_x = g0.max_x(), min_y = g0.min_y(), max_y = g0.max_y();
    for (const auto& t : tiles) {
        const auto& g = t.geometry();
        if (std::abs(g.pixel_size - g0.pixel_size) > 1e-12 * g0.pixel_size)
            throw std::invalid_argument("mosaic: mixed pixel sizes");
        if (!aligned(g, g0)) throw std::invalid_argument("mosaic: tiles are not aligned");
        min_x = std::min(min_x, g.min_x());
        max_x = std::max(max_x, g.max_x());
        min_y = std::min(min_y, g.min_y());
        max_y = std::max(max_y, g.max_y());
    }
    GridGeometry out_geom = g0;
    out_geom.origin_x = min_x;
    out_geom.origin_y = max_y;
    out_geom.cols = static_cast<int>(std::lround((max_x - min_x) / g0.pixel_size));
    out_geom.rows = static_cast<int>(std::lround((max_y - min_y) / g0.pixel_size));
    Raster out(out_geom, 0.0, tiles.front().units());
    for (std::size_t i = 0; i < out_geom.size(); ++i) out.set_nodata(i, true);
    for (const auto& t : tiles) {
        const auto& g = t.geometry();
        const int dc = static_cast<int>(std::lround((g.origin_x - out_geom.origin_x) / g0.pixel_size));
        const int dr = static_cast<int>(std::lround((out_geom.origin_y - g.origin_y) / g0.pixel_size));
        for (int r = 0; r < t.rows(); ++r)
            for (int c = 0; c < t.cols(); ++c)
                if (t.valid(r, c)) out.set(r + dr, c + dc, t.at(r, c));
    }
    return out;
}

/// Population mean and standard deviation over valid cells.
inline BandStats band_stats(const Raster& r) {
    BandStats s;
    double sum = 0.0;
    const auto vals = r.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (r.is_nodata(i)) continue;
        sum += vals[i];
        ++s.valid_count;
    }
    if (s.valid_count == 0) throw std::invalid_argument("band_stats: raster has no valid cells");
    s.mean = sum / static_cast<double>(s.valid_count);
    double ss = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (r.is_nodata(i)) continue;
        const double d = vals[i] - s.mean;
        ss += d * d;
    }
    s.stddev = std::sqrt(ss / static_cast<double>(s.valid_count));
    return s;
}

/// v -> ln(1 + v) on valid cells.
inline Raster log1p_transform(const Raster& r) {
    Raster out = r;
    auto vals = out.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (out.is_nodata(i)) continue;
        if (vals[i] < 0.0) throw std::invalid_argument("log1p_transform: negative value");
        vals[i] = std::log1p(vals[i]);
    }
    out.set_units(r.units().empty() ? std::string("log1p") : r.units() + " log1p");
    return out;
}

/// Copies a window of r; the window must lie inside the raster.
inline Raster window(const Raster& r, int row0, int col0, int rows, int cols) {
    if (row0 < 0 || col0 < 0 || rows < 1 || cols < 1 || row0 + rows > r.rows() || col0 + cols > r.cols())
        throw std::out_of_range("window: outside raster bounds");
    GridGeometry g = r.geometry();
    g.origin_x += col0 * g.pixel_size;
    g.origin_y -= row0 * g.pixel_size;
    g.rows = rows;
    g.cols = cols;
    Raster out(g, 0.0, r.units());
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            if (r.valid(row0 + i, col0 + j)) out.set(i, j, r.at(row0 + i, col0 + j));
            else out.set_nodata(i, j);
        }
    return out;
}

}  // namespace surfmap
