#pragma once

// Consistency check of the edge-jump TV form against a smooth regularization
// of a piecewise-constant tensor field.
//
// A per-element constant symmetric tensor A on a tensor-product grid is
// smoothed by blending linearly across a band of width `band_width` centered
// on every interior grid line. Inside the bands div A is finite and the
// integral of |div A| can be evaluated by quadrature on the refined mesh made
// of band cells (edge bands, corner squares) and interior cells. As the band
// width shrinks, the integral tends to the sum over interior edges of
// l * |[[A]] . n|; the corner squares contribute O(band_width^2).

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "elastoreg/error.hpp"
#include "elastoreg/mesh.hpp"

namespace elastoreg {

struct SymTensor {
    double xx = 0.0;
    double yy = 0.0;
    double xy = 0.0;
};

inline Vec2 traction(const SymTensor& a, const Vec2& n) { return {a.xx * n.x() + a.xy * n.y(), a.xy * n.x() + a.yy * n.y()}; }

/// Sum over interior edges of l_j |(A_right - A_left) . n_j|.
inline double edge_jump_sum(const QuadMesh& mesh, std::span<const SymTensor> a) {
    require(static_cast<int>(a.size()) == mesh.num_elements(), "edge_jump_sum: one tensor per element required");
    double sum = 0.0;
    for (const auto& e : mesh.interior_edges()) {
        const SymTensor& l = a[static_cast<std::size_t>(e.left)];
        const SymTensor& r = a[static_cast<std::size_t>(e.right)];
        sum += e.length * (traction(r, e.normal) - traction(l, e.normal)).norm();
    }
    return sum;
}

struct TvBandCheck {
    double band_integral = 0.0;
    double jump_sum = 0.0;
    double discrepancy = 0.0;   // |band - jump| / jump, or absolute when jump == 0
    int refined_elements = 0;
};

namespace detail {

inline std::vector<double> unique_sorted(std::vector<double> v, double tol) {
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v)
        if (out.empty() || x - out.back() > tol)
            out.push_back(x);
    return out;
}

// Piecewise-linear partition of unity over grid cells, blended across bands.
struct BandBlend {
    std::vector<double> lines;
    double width = 0.0;

    struct Term {
        int cell;
        double w;
        double dw;
    };

    int cell_of(double x) const {
        const auto it = std::upper_bound(lines.begin() + 1, lines.end() - 1, x);
        return static_cast<int>(it - lines.begin()) - 1;
    }

    int terms(double x, Term out[2]) const {
        const double h = 0.5 * width;
        for (std::size_t i = 1; i + 1 < lines.size(); ++i)
            if (std::abs(x - lines[i]) < h) {
                const double t = (x - (lines[i] - h)) / width;
                out[0] = {static_cast<int>(i) - 1, 1.0 - t, -1.0 / width};
                out[1] = {static_cast<int>(i), t, 1.0 / width};
                return 2;
            }
        out[0] = {cell_of(x), 1.0, 0.0};
        return 1;
    }

    // Grid lines plus band boundaries.
    std::vector<double> refined() const {
        std::vector<double> r = lines;
        for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
            r.push_back(lines[i] - 0.5 * width);
            r.push_back(lines[i] + 0.5 * width);
        }
        std::sort(r.begin(), r.end());
        return r;
    }
};

} // namespace detail

/// `coarse` must be an axis-aligned tensor grid; `a` holds one tensor per
/// coarse element. The band must be narrower than every grid cell so that the
/// refined mesh nests the coarse one.
inline TvBandCheck tv_limit_check(const QuadMesh& coarse, std::span<const SymTensor> a, double band_width,
                                  int quadrature_points = 6) {
    require(static_cast<int>(a.size()) == coarse.num_elements(), "tv_limit_check: one tensor per element required");
    require(band_width > 0.0, "tv_limit_check: band width must be positive");
    require(quadrature_points >= 1 && quadrature_points <= 20, "tv_limit_check: quadrature order out of range");
    const Vec2 span_xy = coarse.bbox_max() - coarse.bbox_min();
    const double tol = 1e-9 * std::max(span_xy.x(), span_xy.y());

    std::vector<double> xs, ys;
    for (const Vec2& p : coarse.nodes()) {
        xs.push_back(p.x());
        ys.push_back(p.y());
    }
    detail::BandBlend bx{detail::unique_sorted(xs, tol), band_width};
    detail::BandBlend by{detail::unique_sorted(ys, tol), band_width};
    const int cx = static_cast<int>(bx.lines.size()) - 1, cy = static_cast<int>(by.lines.size()) - 1;
    require(static_cast<int>(bx.lines.size() * by.lines.size()) == coarse.num_nodes() && cx * cy == coarse.num_elements(),
            "tv_limit_check: coarse mesh is not a tensor-product grid");

    // Element tensor by grid cell; every element must be exactly one cell.
    std::vector<int> cell_element(static_cast<std::size_t>(cx * cy), -1);
    for (int e = 0; e < coarse.num_elements(); ++e) {
        const Vec2 c = coarse.element_center(e);
        const int i = bx.cell_of(c.x()), j = by.cell_of(c.y());
        require(std::abs(coarse.element_area(e) - (bx.lines[i + 1] - bx.lines[i]) * (by.lines[j + 1] - by.lines[j])) <=
                    1e-9 * coarse.element_area(e),
                "tv_limit_check: coarse mesh is not a tensor-product grid");
        cell_element[static_cast<std::size_t>(j * cx + i)] = e;
    }

    // Each cell must keep a band-free core: half a band per interior side.
    for (const auto* b : {&bx, &by})
        for (std::size_t i = 0; i + 1 < b->lines.size(); ++i) {
            const int inner_sides = (i > 0) + (i + 2 < b->lines.size());
            if (!(0.5 * band_width * inner_sides < b->lines[i + 1] - b->lines[i] - tol))
                fail(ErrorKind::invalid_argument, "tv_limit_check: band width does not nest inside the coarse cells");
        }

    const std::vector<double> rx = bx.refined(), ry = by.refined();
    const auto [gp, gw] = gauss_legendre(quadrature_points);
    TvBandCheck out;
    double integral = 0.0;
    detail::BandBlend::Term tx[2], ty[2];
    for (std::size_t i = 0; i + 1 < rx.size(); ++i)
        for (std::size_t j = 0; j + 1 < ry.size(); ++j) {
            ++out.refined_elements;
            const double x0 = rx[i], x1 = rx[i + 1], y0 = ry[j], y1 = ry[j + 1];
            const double jac = 0.25 * (x1 - x0) * (y1 - y0);
            for (std::size_t p = 0; p < gp.size(); ++p)
                for (std::size_t q = 0; q < gp.size(); ++q) {
                    const double x = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * gp[p];
                    const double y = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * gp[q];
                    const int nx = bx.terms(x, tx), ny = by.terms(y, ty);
                    SymTensor ax, ay; // d/dx and d/dy of the blended tensor
                    for (int s = 0; s < nx; ++s)
                        for (int t = 0; t < ny; ++t) {
                            const SymTensor& v = a[static_cast<std::size_t>(
                                cell_element[static_cast<std::size_t>(ty[t].cell * cx + tx[s].cell)])];
                            const double wdx = tx[s].dw * ty[t].w, wdy = tx[s].w * ty[t].dw;
                            ax.xx += wdx * v.xx;
                            ax.yy += wdx * v.yy;
                            ax.xy += wdx * v.xy;
                            ay.xx += wdy * v.xx;
                            ay.yy += wdy * v.yy;
                            ay.xy += wdy * v.xy;
                        }
                    const Vec2 div(ax.xx + ay.xy, ax.xy + ay.yy);
                    integral += gw[p] * gw[q] * jac * div.norm();
                }
        }
    out.band_integral = integral;
    out.jump_sum = edge_jump_sum(coarse, a);
    out.discrepancy = out.jump_sum > 0 ? std::abs(integral - out.jump_sum) / out.jump_sum : std::abs(integral);
    return out;
}

} // namespace elastoreg
