#pragma once

// Integer-pixel normalized cross-correlation block matching, median filtering
// of the coarse estimates and bilinear transfer onto a mesh (initial guess for
// the Gauss-Newton registration).

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <tuple>
#include <ostream>
#include <vector>

#include "elastoreg/error.hpp"
#include "elastoreg/geometry.hpp"
#include "elastoreg/image.hpp"
#include "elastoreg/mesh.hpp"

namespace elastoreg {

struct BlockMatchConfig {
    double window_axial_mm = 5.0;
    double window_lateral_mm = 9.0;
    double overlap_axial = 0.25;
    double overlap_lateral = 0.40;
    /// Search radius in samples / scan lines; unset means 15% of the image size.
    std::optional<int> search_axial_px;
    std::optional<int> search_lateral_px;
    int median_rows = 5;
    int median_cols = 5;
    /// Peaks below this NCC are marked invalid (cycle skips at the image border,
    /// decorrelated windows). The default keeps every peak.
    double min_correlation = -1.0;
    /// Candidate windows may hang over the image border as long as this
    /// fraction of the window (per axis) stays inside; the correlation is
    /// then taken over the overlap. 1 keeps every candidate fully inside.
    double min_overlap = 1.0;

    void validate() const {
        require(window_axial_mm > 0 && window_lateral_mm > 0, "BlockMatchConfig: windows must be positive");
        require(overlap_axial >= 0 && overlap_axial < 1 && overlap_lateral >= 0 && overlap_lateral < 1,
                "BlockMatchConfig: overlaps must lie in [0, 1)");
        require((!search_axial_px || *search_axial_px >= 0) && (!search_lateral_px || *search_lateral_px >= 0),
                "BlockMatchConfig: search radius must be non-negative");
        require(min_overlap > 0.0 && min_overlap <= 1.0, "BlockMatchConfig: min_overlap must lie in (0, 1]");
        require(median_rows > 0 && median_cols > 0 && median_rows % 2 == 1 && median_cols % 2 == 1,
                "BlockMatchConfig: median filter size must be odd");
    }
};

struct CoarseEstimate {
    Vec2 center = Vec2::Zero();        // window center, mm
    Vec2 displacement = Vec2::Zero();  // mm (integer multiples of the spacings before filtering)
    double correlation = 0.0;          // peak NCC
    bool valid = false;
};

/// Row-major grid of window estimates; rows run axially.
struct CoarseDisplacementGrid {
    int rows = 0;
    int cols = 0;
    std::vector<CoarseEstimate> cells;

    CoarseEstimate& at(int r, int c) { return cells[static_cast<std::size_t>(r * cols + c)]; }
    const CoarseEstimate& at(int r, int c) const { return cells[static_cast<std::size_t>(r * cols + c)]; }
};

namespace detail {

// Summed-area table with a zero first row/column.
inline Eigen::MatrixXd integral_image(const Eigen::MatrixXd& a) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(a.rows() + 1, a.cols() + 1);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            s(i + 1, j + 1) = a(i, j) + s(i, j + 1) + s(i + 1, j) - s(i, j);
    return s;
}

inline double box_sum(const Eigen::MatrixXd& s, int i, int j, int h, int w) {
    return s(i + h, j + w) - s(i, j + w) - s(i + h, j) + s(i, j);
}

} // namespace detail

inline CoarseDisplacementGrid ncc_match(const RfImage& i1, const RfImage& i2, const BlockMatchConfig& cfg) {
    cfg.validate();
    require(i1.same_geometry(i2), "ncc_match: images must share geometry");
    const int wa = std::max(2, static_cast<int>(std::lround(cfg.window_axial_mm / i1.axial_spacing)));
    const int wl = std::max(1, static_cast<int>(std::lround(cfg.window_lateral_mm / i1.lateral_spacing)));
    require(wa <= i1.rows() && wl <= i1.cols(), "ncc_match: window larger than the image");
    const int step_a = std::max(1, static_cast<int>(std::lround(wa * (1.0 - cfg.overlap_axial))));
    const int step_l = std::max(1, static_cast<int>(std::lround(wl * (1.0 - cfg.overlap_lateral))));
    const int ra = cfg.search_axial_px.value_or(static_cast<int>(std::ceil(0.15 * i1.rows())));
    const int rl = cfg.search_lateral_px.value_or(static_cast<int>(std::ceil(0.15 * i1.cols())));

    const Eigen::MatrixXd& a = i1.samples;
    const Eigen::MatrixXd& b = i2.samples;
    const Eigen::MatrixXd sum_a = detail::integral_image(a);
    const Eigen::MatrixXd sum_a2 = detail::integral_image(a.cwiseProduct(a));
    const Eigen::MatrixXd sum_b = detail::integral_image(b);
    const Eigen::MatrixXd sum_b2 = detail::integral_image(b.cwiseProduct(b));
    const int min_rows = std::max(2, static_cast<int>(std::ceil(cfg.min_overlap * wa - 1e-9)));
    const int min_cols = std::max(1, static_cast<int>(std::ceil(cfg.min_overlap * wl - 1e-9)));

    CoarseDisplacementGrid grid;
    grid.rows = (i1.rows() - wa) / step_a + 1;
    grid.cols = (i1.cols() - wl) / step_l + 1;
    grid.cells.resize(static_cast<std::size_t>(grid.rows * grid.cols));
    const auto mag = [](int x, int y) { return x * x + y * y; };
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            const int i0 = r * step_a, j0 = c * step_l;
            CoarseEstimate& est = grid.at(r, c);
            est.center = i1.origin + Vec2((i0 + 0.5 * (wa - 1)) * i1.axial_spacing, (j0 + 0.5 * (wl - 1)) * i1.lateral_spacing);
            {
                const double n = static_cast<double>(wa) * wl;
                const double st = detail::box_sum(sum_a, i0, j0, wa, wl);
                if (!(detail::box_sum(sum_a2, i0, j0, wa, wl) - st * st / n > 0.0))
                    continue; // flat template
            }
            double best = -2.0;
            int best_di = 0, best_dj = 0;
            bool found = false;
            for (int dj = -rl; dj <= rl; ++dj) {
                // Overlap of the shifted window with i2, in template coordinates.
                const int cl = std::max(0, -(j0 + dj)), ch = std::min(wl, i2.cols() - (j0 + dj));
                if (ch - cl < min_cols)
                    continue;
                for (int di = -ra; di <= ra; ++di) {
                    const int rlo = std::max(0, -(i0 + di)), rhi = std::min(wa, i2.rows() - (i0 + di));
                    if (rhi - rlo < min_rows)
                        continue;
                    const int h = rhi - rlo, w = ch - cl;
                    const int ti = i0 + rlo, tj = j0 + cl, bi = i0 + di + rlo, bj = j0 + dj + cl;
                    const double n = static_cast<double>(h) * w;
                    const double st = detail::box_sum(sum_a, ti, tj, h, w);
                    const double sb = detail::box_sum(sum_b, bi, bj, h, w);
                    const double t_var = detail::box_sum(sum_a2, ti, tj, h, w) - st * st / n;
                    const double s2 = detail::box_sum(sum_b2, bi, bj, h, w);
                    const double c_var = s2 - sb * sb / n;
                    if (!(c_var > 1e-14 * s2) || !(t_var > 0.0))
                        continue;
                    const double cross = (a.block(ti, tj, h, w).array() * b.block(bi, bj, h, w).array()).sum() - st * sb / n;
                    const double ncc = cross / std::sqrt(t_var * c_var);
                    bool take = false;
                    if (!found || ncc > best + 1e-12)
                        take = true;
                    else if (ncc >= best - 1e-12) {
                        const int m_new = mag(di, dj), m_old = mag(best_di, best_dj);
                        take = m_new < m_old || (m_new == m_old && std::tie(di, dj) < std::tie(best_di, best_dj));
                    }
                    if (take) {
                        best = found ? std::max(best, ncc) : ncc;
                        best_di = di;
                        best_dj = dj;
                        found = true;
                    }
                }
            }
            if (found && best >= cfg.min_correlation) {
                est.displacement = Vec2(best_di * i1.axial_spacing, best_dj * i1.lateral_spacing);
                est.correlation = best;
                est.valid = true;
            }
        }
    }
    return grid;
}

/// Rectangle spanned by the window centers; to_initial_guess clamps onto it.
inline Rect grid_hull(const CoarseDisplacementGrid& grid) {
    require(grid.rows > 0 && grid.cols > 0, "grid_hull: empty grid");
    return {grid.at(0, 0).center, grid.at(grid.rows - 1, grid.cols - 1).center};
}

/// Hull of the window centers ncc_match would produce for `image`.
inline Rect block_match_hull(const RfImage& image, const BlockMatchConfig& cfg) {
    cfg.validate();
    const int wa = std::max(2, static_cast<int>(std::lround(cfg.window_axial_mm / image.axial_spacing)));
    const int wl = std::max(1, static_cast<int>(std::lround(cfg.window_lateral_mm / image.lateral_spacing)));
    require(wa <= image.rows() && wl <= image.cols(), "block_match_hull: window larger than the image");
    const int step_a = std::max(1, static_cast<int>(std::lround(wa * (1.0 - cfg.overlap_axial))));
    const int step_l = std::max(1, static_cast<int>(std::lround(wl * (1.0 - cfg.overlap_lateral))));
    const int last_r = (image.rows() - wa) / step_a, last_c = (image.cols() - wl) / step_l;
    const auto center = [&](int r, int c) -> Vec2 {
        return image.origin + Vec2((r * step_a + 0.5 * (wa - 1)) * image.axial_spacing,
                                   (c * step_l + 0.5 * (wl - 1)) * image.lateral_spacing);
    };
    return {center(0, 0), center(last_r, last_c)};
}

/// Component-wise median over a rows x cols neighborhood with edge replication;
/// invalid entries are excluded (an even count takes the mean of the middle pair).
inline CoarseDisplacementGrid median_filter_grid(const CoarseDisplacementGrid& grid, int rows = 5, int cols = 5) {
    require(rows > 0 && cols > 0 && rows % 2 == 1 && cols % 2 == 1, "median_filter_grid: size must be odd");
    CoarseDisplacementGrid out = grid;
    std::vector<double> vx, vy;
    const auto median = [](std::vector<double>& v) {
        const std::size_t n = v.size();
        std::sort(v.begin(), v.end());
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            vx.clear();
            vy.clear();
            for (int dr = -rows / 2; dr <= rows / 2; ++dr)
                for (int dc = -cols / 2; dc <= cols / 2; ++dc) {
                    const auto& e = grid.at(std::clamp(r + dr, 0, grid.rows - 1), std::clamp(c + dc, 0, grid.cols - 1));
                    if (!e.valid)
                        continue;
                    vx.push_back(e.displacement.x());
                    vy.push_back(e.displacement.y());
                }
            auto& o = out.at(r, c);
            o.valid = !vx.empty();
            if (o.valid)
                o.displacement = Vec2(median(vx), median(vy));
        }
    return out;
}

/// Bilinear interpolation of the grid at p; points beyond the grid hull are
/// clamped onto it. Entries still invalid count as zero displacement.
inline Vec2 sample_grid(const CoarseDisplacementGrid& grid, const Vec2& p) {
    require(grid.rows > 0 && grid.cols > 0 && !grid.cells.empty(), "sample_grid: empty grid");
    const auto value = [&grid](int r, int c) {
        const auto& e = grid.at(r, c);
        return e.valid ? e.displacement : Vec2::Zero();
    };
    const double x0 = grid.at(0, 0).center.x(), y0 = grid.at(0, 0).center.y();
    const double hx = grid.rows > 1 ? grid.at(1, 0).center.x() - x0 : 1.0;
    const double hy = grid.cols > 1 ? grid.at(0, 1).center.y() - y0 : 1.0;
    const double fx = std::clamp((p.x() - x0) / hx, 0.0, static_cast<double>(grid.rows - 1));
    const double fy = std::clamp((p.y() - y0) / hy, 0.0, static_cast<double>(grid.cols - 1));
    const int r = std::min(static_cast<int>(std::floor(fx)), std::max(grid.rows - 2, 0));
    const int c = std::min(static_cast<int>(std::floor(fy)), std::max(grid.cols - 2, 0));
    const double tx = grid.rows > 1 ? fx - r : 0.0, ty = grid.cols > 1 ? fy - c : 0.0;
    const int r1 = std::min(r + 1, grid.rows - 1), c1 = std::min(c + 1, grid.cols - 1);
    return (1 - tx) * (1 - ty) * value(r, c) + tx * (1 - ty) * value(r1, c) + (1 - tx) * ty * value(r, c1) +
           tx * ty * value(r1, c1);
}

/// Grid sampled at the mesh nodes.
inline NodalField to_initial_guess(const CoarseDisplacementGrid& grid, MeshPtr mesh) {
    NodalField out(mesh);
    for (int n = 0; n < mesh->num_nodes(); ++n)
        out.set(n, sample_grid(grid, mesh->node(n)));
    return out;
}

/// Matches, filters and samples in one go.
inline CoarseDisplacementGrid block_match(const RfImage& i1, const RfImage& i2, const BlockMatchConfig& cfg) {
    return median_filter_grid(ncc_match(i1, i2, cfg), cfg.median_rows, cfg.median_cols);
}

/// Coarse-grid dump: x_mm,y_mm,ux_mm,uy_mm,valid.
inline void write_coarse_grid_csv(std::ostream& os, const CoarseDisplacementGrid& grid) {
    os << "x_mm,y_mm,ux_mm,uy_mm,valid\n" << std::setprecision(17);
    for (const auto& e : grid.cells)
        os << e.center.x() << ',' << e.center.y() << ',' << e.displacement.x() << ',' << e.displacement.y() << ','
           << (e.valid ? 1 : 0) << '\n';
}

} // namespace elastoreg
