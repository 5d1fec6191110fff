#pragma once

// Geomorphometric derivatives of a DEM: slope and curvatures from a local
// least-squares quadratic, their multi-resolution versions, and focal
// statistics (elevation percentile, standard deviation of slope).

#include "surfmap/raster.hpp"
#include "surfmap/util.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace surfmap {

/// z ~ a x^2 + b y^2 + c xy + d x + e y + f, x east and y north in ground
/// units, centered on the target cell.
struct QuadCoeffs {
    double a = 0, b = 0, c = 0, d = 0, e = 0, f = 0;
};

enum class DerivativeKind { Slope, ProfileCurvature, PlanformCurvature };

inline const char* derivative_prefix(DerivativeKind k) {
    switch (k) {
        case DerivativeKind::Slope: return "slope";
        case DerivativeKind::ProfileCurvature: return "prc";
        case DerivativeKind::PlanformCurvature: return "plc";
    }
    return "?";
}

/// Curvatures are reported in 1/ft multiplied by this factor.
constexpr double kCurvatureScale = 100.0;
/// Below this squared gradient a cell counts as flat and curvatures are 0.
constexpr double kFlatGradient2 = 1e-12;

using TerrainStack = std::vector<std::pair<std::string, Raster>>;

struct TerrainConfig {
    std::vector<double> resolutions{5, 10, 20, 50, 100, 200};
    std::vector<int> kernels{5, 11, 21, 51, 101, 201};
    double sigma_down = 1.0;  ///< Gaussian sigma (pixels) on each resampled DEM
    double sigma_up = 1.0;    ///< Gaussian sigma (pixels) after returning to the base grid
};

/// Least-squares quadratic over a 5x5 window given row-major (north row first).
///
/// The design is symmetric on offsets {-2..2}, so the normal equations have a
/// closed form: d and e decouple (sum x^2 = 50), c decouples (sum x^2 y^2 = 100),
/// and a, b, f come from a 3x3 block.
inline QuadCoeffs quad_fit(std::span<const double> window, double pixel_size) {
    if (window.size() != 25) throw std::invalid_argument("quad_fit: window must hold 5x5 values");
    if (!(pixel_size > 0.0)) throw std::invalid_argument("quad_fit: pixel size must be positive");
    double sz = 0, sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
    for (int r = 0; r < 5; ++r) {
        const double y = 2 - r;
        for (int c = 0; c < 5; ++c) {
            const double x = c - 2;
            const double z = window[static_cast<std::size_t>(r * 5 + c)];
            sz += z;
            sx += x * z;
            sy += y * z;
            sxy += x * y * z;
            sxx += x * x * z;
            syy += y * y * z;
        }
    }
    const double h = pixel_size;
    QuadCoeffs q;
    q.a = (sxx - 2.0 * sz) / 70.0 / (h * h);
    q.b = (syy - 2.0 * sz) / 70.0 / (h * h);
    q.c = sxy / 100.0 / (h * h);
    q.d = sx / 50.0 / h;
    q.e = sy / 50.0 / h;
    q.f = (sz - 50.0 * (sxx + syy - 4.0 * sz) / 70.0) / 25.0;
    return q;
}

inline double slope_degrees(const QuadCoeffs& q) {
    return std::atan(std::sqrt(q.d * q.d + q.e * q.e)) * 180.0 / std::numbers::pi;
}

/// Curvature along the gradient; negative where the surface is convex-up.
inline double profile_curvature(const QuadCoeffs& q) {
    const double g2 = q.d * q.d + q.e * q.e;
    if (g2 < kFlatGradient2) return 0.0;
    return -2.0 * (q.a * q.d * q.d + q.c * q.d * q.e + q.b * q.e * q.e) / g2 * kCurvatureScale;
}

/// Curvature across the gradient.
inline double planform_curvature(const QuadCoeffs& q) {
    const double g2 = q.d * q.d + q.e * q.e;
    if (g2 < kFlatGradient2) return 0.0;
    return -2.0 * (q.a * q.e * q.e - q.c * q.d * q.e + q.b * q.d * q.d) / g2 * kCurvatureScale;
}

inline double derivative_value(const QuadCoeffs& q, DerivativeKind kind) {
    switch (kind) {
        case DerivativeKind::Slope: return slope_degrees(q);
        case DerivativeKind::ProfileCurvature: return profile_curvature(q);
        case DerivativeKind::PlanformCurvature: return planform_curvature(q);
    }
    return 0.0;
}

namespace detail {

/// Sample of a grid extended past its edges by odd reflection,
/// z(-i) = 2 z(0) - z(i), applied per axis. Planes extend exactly.
/// Returns nullopt when a referenced cell is nodata.
inline std::optional<double> odd_reflect_sample(const Raster& r, int row, int col) {
    const int rows = r.rows(), cols = r.cols();
    auto along_rows = [&](int c) -> std::optional<double> {
        if (row >= 0 && row < rows) {
            if (!r.valid(row, c)) return std::nullopt;
            return r.at(row, c);
        }
        const int edge = row < 0 ? 0 : rows - 1;
        const int mirror = reflect_index(row, rows);
        if (!r.valid(edge, c) || !r.valid(mirror, c)) return std::nullopt;
        return 2.0 * r.at(edge, c) - r.at(mirror, c);
    };
    if (col >= 0 && col < cols) return along_rows(col);
    const auto e = along_rows(col < 0 ? 0 : cols - 1);
    const auto m = along_rows(reflect_index(col, cols));
    if (!e || !m) return std::nullopt;
    return 2.0 * *e - *m;
}

}  // namespace detail

/// All three derivatives in one pass (slope, profile, planform). Windows
/// that cross the raster edge are completed by odd reflection; a cell is
/// nodata when any sample its window draws on is nodata.
inline std::array<Raster, 3> derivatives(const Raster& dem) {
    if (dem.rows() < 5 || dem.cols() < 5) throw std::invalid_argument("derivative: raster smaller than the 5x5 window");
    const auto& g = dem.geometry();
    std::array<Raster, 3> out{Raster(g, 0.0, "degrees"), Raster(g, 0.0, "1/ft x100"), Raster(g, 0.0, "1/ft x100")};
    parallel_rows(g.rows, [&](int rb, int re) {
        std::array<double, 25> win{};
        for (int r = rb; r < re; ++r) {
            const bool row_inside = r >= 2 && r < g.rows - 2;
            for (int c = 0; c < g.cols; ++c) {
                const bool inside = row_inside && c >= 2 && c < g.cols - 2;
                bool ok = true;
                for (int i = 0; i < 5 && ok; ++i)
                    for (int j = 0; j < 5; ++j) {
                        const int rr = r + i - 2, cc = c + j - 2;
                        if (inside) {
                            if (!dem.valid(rr, cc)) {
                                ok = false;
                                break;
                            }
                            win[static_cast<std::size_t>(i * 5 + j)] = dem.at(rr, cc);
                        } else {
                            const auto v = detail::odd_reflect_sample(dem, rr, cc);
                            if (!v) {
                                ok = false;
                                break;
                            }
                            win[static_cast<std::size_t>(i * 5 + j)] = *v;
                        }
                    }
                if (!ok) {
                    for (auto& o : out) o.set_nodata(r, c);
                    continue;
                }
                const QuadCoeffs q = quad_fit(win, g.pixel_size);
                out[0].set(r, c, slope_degrees(q));
                out[1].set(r, c, profile_curvature(q));
                out[2].set(r, c, planform_curvature(q));
            }
        }
    });
    return out;
}

inline Raster derivative(const Raster& dem, DerivativeKind kind) {
    auto all = derivatives(dem);
    return std::move(all[static_cast<std::size_t>(kind)]);
}

inline std::string scale_token(double v) {
    if (v == std::round(v)) return std::to_string(static_cast<long long>(v));
    return fmt_double(v);
}

/// Slope, profile and planform curvature at every resolution, returned on
/// the input grid: resample, smooth, differentiate, resample back, smooth.
/// Slope channels are log1p-transformed. Order: all slope, all prc, all plc.
inline TerrainStack multiscale_derivatives(const Raster& dem, const TerrainConfig& cfg = {}) {
    const auto& base = dem.geometry();
    TerrainStack by_kind[3];
    for (double res : cfg.resolutions) {
        const bool native = std::abs(res - base.pixel_size) <= 1e-9 * base.pixel_size;
        Raster coarse = native ? dem : resample(dem, res);
        coarse = gaussian_smooth(coarse, cfg.sigma_down);
        auto derived = derivatives(coarse);
        for (std::size_t k = 0; k < 3; ++k) {
            Raster back = native ? std::move(derived[k]) : resample_to(derived[k], base);
            back = gaussian_smooth(back, cfg.sigma_up);
            if (k == 0) {
                // Cubic resampling can overshoot slightly below zero on steep breaks.
                for (auto& v : back.values()) v = std::max(v, 0.0);
                back = log1p_transform(back);
            }
            by_kind[k].emplace_back(std::string(derivative_prefix(static_cast<DerivativeKind>(k))) + "_" + scale_token(res),
                                    std::move(back));
        }
    }
    TerrainStack out;
    for (auto& kind : by_kind)
        for (auto& ch : kind) out.push_back(std::move(ch));
    return out;
}

namespace detail {

inline void check_kernel(int k) {
    if (k <= 1) throw std::invalid_argument("focal window must be larger than 1");
    if (k % 2 == 0) throw std::invalid_argument("focal window must be odd");
}

/// Reflect-padded copy of a raster's cell indices, shared by the focal kernels.
struct PaddedGrid {
    int rows = 0, cols = 0, pad = 0;
    int prows = 0, pcols = 0;
    std::vector<std::size_t> source;  // padded cell -> source cell

    PaddedGrid(int r, int c, int h) : rows(r), cols(c), pad(h), prows(r + 2 * h), pcols(c + 2 * h) {
        source.resize(static_cast<std::size_t>(prows) * static_cast<std::size_t>(pcols));
        for (int i = 0; i < prows; ++i) {
            const int sr = reflect_index(i - h, r);
            for (int j = 0; j < pcols; ++j)
                source[static_cast<std::size_t>(i) * pcols + j] =
                    static_cast<std::size_t>(sr) * c + static_cast<std::size_t>(reflect_index(j - h, c));
        }
    }
};

/// Summed-area table over a padded grid (one extra leading row and column).
template <typename T>
struct SummedArea {
    int w = 0;
    std::vector<T> s;
    T rect(int r0, int c0, int r1, int c1) const {  // inclusive bounds
        const auto at = [&](int r, int c) { return s[static_cast<std::size_t>(r) * w + c]; };
        return at(r1 + 1, c1 + 1) - at(r0, c1 + 1) - at(r1 + 1, c0) + at(r0, c0);
    }
};

template <typename T, typename F>
SummedArea<T> build_sat(const PaddedGrid& p, F value) {
    SummedArea<T> sat;
    sat.w = p.pcols + 1;
    sat.s.assign(static_cast<std::size_t>(p.prows + 1) * sat.w, T{});
    for (int i = 0; i < p.prows; ++i) {
        T row{};
        for (int j = 0; j < p.pcols; ++j) {
            row += value(p.source[static_cast<std::size_t>(i) * p.pcols + j]);
            sat.s[static_cast<std::size_t>(i + 1) * sat.w + j + 1] = sat.s[static_cast<std::size_t>(i) * sat.w + j + 1] + row;
        }
    }
    return sat;
}

/// 2-D Fenwick tree of counts.
class Fenwick2D {
public:
    Fenwick2D(int rows, int cols) : rows_(rows), cols_(cols), t_(static_cast<std::size_t>(rows + 1) * (cols + 1), 0) {}

    void add(int r, int c) {
        for (int i = r + 1; i <= rows_; i += i & -i)
            for (int j = c + 1; j <= cols_; j += j & -j) ++t_[static_cast<std::size_t>(i) * (cols_ + 1) + j];
    }
    /// Count in [0, r) x [0, c).
    int prefix(int r, int c) const {
        int s = 0;
        for (int i = r; i > 0; i -= i & -i)
            for (int j = c; j > 0; j -= j & -j) s += t_[static_cast<std::size_t>(i) * (cols_ + 1) + j];
        return s;
    }
    int rect(int r0, int c0, int r1, int c1) const {  // inclusive bounds
        return prefix(r1 + 1, c1 + 1) - prefix(r0, c1 + 1) - prefix(r1 + 1, c0) + prefix(r0, c0);
    }

private:
    int rows_, cols_;
    std::vector<int> t_;
};

inline bool too_sparse(long long valid, int k) {
    const long long total = static_cast<long long>(k) * k;
    return 2 * (total - valid) > total;
}

}  // namespace detail

/// Elevation percentile for several window sizes at once:
/// EP = (#lower + 0.5 * #ties) / (valid window cells - 1), the center excluded.
/// Windows use reflect padding; a cell is nodata when more than half its
/// window is nodata.
///
/// Counting is exact. Cells are swept in increasing elevation while a 2-D
/// Fenwick tree over the padded grid holds every cell inserted so far, so a
/// rectangle query gives the number of strictly lower cells in any window.
inline std::vector<Raster> elevation_percentile_multi(const Raster& dem, std::span<const int> ks) {
    if (ks.empty()) return {};
    for (int k : ks) detail::check_kernel(k);
    const int rows = dem.rows(), cols = dem.cols();
    const int pad = *std::max_element(ks.begin(), ks.end()) / 2;
    const detail::PaddedGrid grid(rows, cols, pad);
    const auto valid_sat = detail::build_sat<long long>(grid, [&](std::size_t s) { return dem.is_nodata(s) ? 0LL : 1LL; });

    std::vector<std::pair<double, std::uint32_t>> order;
    order.reserve(grid.source.size());
    for (std::size_t i = 0; i < grid.source.size(); ++i)
        if (!dem.is_nodata(grid.source[i])) order.emplace_back(dem.values()[grid.source[i]], static_cast<std::uint32_t>(i));
    std::sort(order.begin(), order.end());

    std::vector<Raster> out;
    for (std::size_t k = 0; k < ks.size(); ++k) {
        Raster r(dem.geometry(), 0.0, "fraction");
        for (std::size_t i = 0; i < dem.geometry().size(); ++i) r.set_nodata(i, true);
        out.push_back(std::move(r));
    }

    detail::Fenwick2D tree(grid.prows, grid.pcols);
    constexpr std::size_t kSmallGroup = 64;
    std::vector<int> lower;
    std::vector<std::uint32_t> centers;
    std::size_t g0 = 0;
    while (g0 < order.size()) {
        std::size_t g1 = g0;
        while (g1 < order.size() && order[g1].first == order[g0].first) ++g1;

        // Group members that sit on their own (unreflected) position.
        centers.clear();
        for (std::size_t m = g0; m < g1; ++m) {
            const auto p = order[m].second;
            const int pr = static_cast<int>(p / static_cast<std::uint32_t>(grid.pcols));
            const int pc = static_cast<int>(p % static_cast<std::uint32_t>(grid.pcols));
            if (pr >= pad && pr < pad + rows && pc >= pad && pc < pad + cols) centers.push_back(p);
        }
        lower.assign(centers.size() * ks.size(), 0);
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            const int pr = static_cast<int>(centers[ci] / static_cast<std::uint32_t>(grid.pcols));
            const int pc = static_cast<int>(centers[ci] % static_cast<std::uint32_t>(grid.pcols));
            for (std::size_t k = 0; k < ks.size(); ++k) {
                const int h = ks[k] / 2;
                lower[ci * ks.size() + k] = tree.rect(pr - h, pc - h, pr + h, pc + h);
            }
        }
        for (std::size_t m = g0; m < g1; ++m) {
            const auto p = order[m].second;
            tree.add(static_cast<int>(p / static_cast<std::uint32_t>(grid.pcols)), static_cast<int>(p % static_cast<std::uint32_t>(grid.pcols)));
        }
        const bool small = (g1 - g0) <= kSmallGroup;
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            const int pr = static_cast<int>(centers[ci] / static_cast<std::uint32_t>(grid.pcols));
            const int pc = static_cast<int>(centers[ci] % static_cast<std::uint32_t>(grid.pcols));
            const int r = pr - pad, c = pc - pad;
            for (std::size_t k = 0; k < ks.size(); ++k) {
                const int h = ks[k] / 2;
                const long long valid = valid_sat.rect(pr - h, pc - h, pr + h, pc + h);
                if (detail::too_sparse(valid, ks[k])) continue;
                int ties = 0;
                if (small) {
                    for (std::size_t m = g0; m < g1; ++m) {
                        const int qr = static_cast<int>(order[m].second / static_cast<std::uint32_t>(grid.pcols));
                        const int qc = static_cast<int>(order[m].second % static_cast<std::uint32_t>(grid.pcols));
                        if (qr >= pr - h && qr <= pr + h && qc >= pc - h && qc <= pc + h) ++ties;
                    }
                } else {
                    ties = tree.rect(pr - h, pc - h, pr + h, pc + h) - lower[ci * ks.size() + k];
                }
                ties -= 1;  // the center itself
                const double ep = (lower[ci * ks.size() + k] + 0.5 * ties) / static_cast<double>(valid - 1);
                out[k].set(r, c, ep);
            }
        }
        g0 = g1;
    }
    return out;
}

inline Raster elevation_percentile(const Raster& dem, int k) {
    const int ks[] = {k};
    return std::move(elevation_percentile_multi(dem, ks).front());
}

/// Population standard deviation over k x k windows (reflect padding, nodata
/// excluded, nodata when more than half the window is missing).
///
/// Values are quantized to a fixed-point grid fine enough (well under 1e-11
/// of the data range for windows up to 201 cells wide) that window sums and
/// sums of squares are exact 128-bit integers; the variance numerator
/// n * sum(q^2) - sum(q)^2 is then free of cancellation error.
inline std::vector<Raster> focal_stddev_multi(const Raster& r, std::span<const int> ks) {
    if (ks.empty()) return {};
    for (int k : ks) detail::check_kernel(k);
    const int rows = r.rows(), cols = r.cols();
    const int kmax = *std::max_element(ks.begin(), ks.end());
    const int pad = kmax / 2;
    const detail::PaddedGrid grid(rows, cols, pad);

    double maxabs = 0.0;
    for (std::size_t i = 0; i < r.geometry().size(); ++i)
        if (!r.is_nodata(i)) maxabs = std::max(maxabs, std::abs(r.values()[i]));
    const long long window_cells = static_cast<long long>(kmax) * kmax;
    const int count_bits = static_cast<int>(std::ceil(std::log2(static_cast<double>(window_cells))));
    const int budget = 62 - count_bits;  // |q| <= 2^(budget - 1)
    const int shift = maxabs > 0.0 ? budget - (std::ilogb(maxabs) + 1) - 1 : 0;
    std::vector<long long> q(r.geometry().size(), 0);
    for (std::size_t i = 0; i < q.size(); ++i)
        if (!r.is_nodata(i)) q[i] = std::llround(std::ldexp(r.values()[i], shift));

    using i128 = __int128;
    const auto cnt = detail::build_sat<long long>(grid, [&](std::size_t s) { return r.is_nodata(s) ? 0LL : 1LL; });
    const auto s1 = detail::build_sat<i128>(grid, [&](std::size_t s) { return static_cast<i128>(q[s]); });
    const auto s2 = detail::build_sat<i128>(grid, [&](std::size_t s) { return static_cast<i128>(q[s]) * q[s]; });

    std::vector<Raster> out;
    for (int k : ks) {
        Raster o(r.geometry(), 0.0, r.units());
        const int h = k / 2;
        parallel_rows(rows, [&](int rb, int re) {
            for (int i = rb; i < re; ++i)
                for (int j = 0; j < cols; ++j) {
                    const int pr = i + pad, pc = j + pad;
                    const long long n = cnt.rect(pr - h, pc - h, pr + h, pc + h);
                    if (!r.valid(i, j) || detail::too_sparse(n, k)) {
                        o.set_nodata(i, j);
                        continue;
                    }
                    const i128 a = s1.rect(pr - h, pc - h, pr + h, pc + h);
                    const i128 b = s2.rect(pr - h, pc - h, pr + h, pc + h);
                    const i128 num = static_cast<i128>(n) * b - a * a;
                    const long double sd = std::sqrt(static_cast<long double>(num)) / static_cast<long double>(n);
                    o.set(i, j, static_cast<double>(std::ldexp(sd, -shift)));
                }
        });
        out.push_back(std::move(o));
    }
    return out;
}

inline Raster focal_stddev(const Raster& r, int k) {
    const int ks[] = {k};
    return std::move(focal_stddev_multi(r, ks).front());
}

/// Standard deviation of native-resolution slope over k x k windows, log1p-transformed.
inline Raster slope_stddev(const Raster& dem, int k) {
    detail::check_kernel(k);
    return log1p_transform(focal_stddev(derivative(dem, DerivativeKind::Slope), k));
}

/// SDS and EP at every configured kernel, ordered sds_* then ep_*.
inline TerrainStack windowed_stack(const Raster& dem, const TerrainConfig& cfg = {}) {
    const Raster slope = derivative(dem, DerivativeKind::Slope);
    auto sds = focal_stddev_multi(slope, cfg.kernels);
    auto ep = elevation_percentile_multi(dem, cfg.kernels);
    TerrainStack out;
    for (std::size_t i = 0; i < cfg.kernels.size(); ++i)
        out.emplace_back("sds_" + std::to_string(cfg.kernels[i]), log1p_transform(sds[i]));
    for (std::size_t i = 0; i < cfg.kernels.size(); ++i)
        out.emplace_back("ep_" + std::to_string(cfg.kernels[i]), std::move(ep[i]));
    return out;
}

/// Every derivative channel (multi-scale, then windowed).
inline TerrainStack terrain_stack(const Raster& dem, const TerrainConfig& cfg = {}) {
    auto out = multiscale_derivatives(dem, cfg);
    for (auto& ch : windowed_stack(dem, cfg)) out.push_back(std::move(ch));
    return out;
}

}  // namespace surfmap
