#pragma once

// Raster exports of element-constant fields: binary PGM (P5) for viewing and
// CSV of element-center values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <vector>

#include "elastoreg/error.hpp"
#include "elastoreg/mesh.hpp"
#include "elastoreg/strain.hpp"

namespace elastoreg {

struct Raster {
    int rows = 0;
    int cols = 0;
    std::vector<double> values; // row-major, NaN outside the mesh
};

/// Samples a per-element value on a pixel grid over the mesh bounding box.
inline Raster rasterize(const QuadMesh& mesh, const std::vector<double>& element_values, double pixel_mm) {
    require(static_cast<int>(element_values.size()) == mesh.num_elements(), "rasterize: one value per element required");
    require(pixel_mm > 0, "rasterize: pixel size must be positive");
    const Vec2 lo = mesh.bbox_min(), span = mesh.bbox_max() - lo;
    Raster r;
    r.rows = std::max(1, static_cast<int>(std::floor(span.x() / pixel_mm)));
    r.cols = std::max(1, static_cast<int>(std::floor(span.y() / pixel_mm)));
    r.values.assign(static_cast<std::size_t>(r.rows * r.cols), std::numeric_limits<double>::quiet_NaN());
    for (int i = 0; i < r.rows; ++i)
        for (int j = 0; j < r.cols; ++j)
            if (auto loc = mesh.inverse_map(lo + Vec2((i + 0.5) * pixel_mm, (j + 0.5) * pixel_mm)))
                r.values[static_cast<std::size_t>(i * r.cols + j)] = element_values[static_cast<std::size_t>(loc->element)];
    return r;
}

/// 8-bit PGM, linear map of [lo, hi] to [0, 255]; NaN pixels are black.
inline void write_pgm(std::ostream& os, const Raster& r, double lo, double hi) {
    require(hi > lo, "write_pgm: empty value range");
    os << "P5\n" << r.cols << ' ' << r.rows << "\n255\n";
    for (double v : r.values) {
        const double t = std::isnan(v) ? 0.0 : std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        os.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(255.0 * t))));
    }
}

/// Full-range PGM; a constant field maps to mid-gray.
inline void write_pgm(std::ostream& os, const Raster& r) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : r.values)
        if (!std::isnan(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(hi > lo)) {
        const double c = std::isfinite(lo) ? lo : 0.0;
        lo = c - 1.0;
        hi = c + 1.0;
    }
    write_pgm(os, r, lo, hi);
}

/// x_mm,y_mm,exx,eyy,exy per element center.
inline void write_strain_csv(std::ostream& os, const StrainField& eps) {
    os << "x_mm,y_mm,exx,eyy,exy\n" << std::setprecision(17);
    for (int e = 0; e < eps.mesh->num_elements(); ++e) {
        const Vec2 c = eps.mesh->element_center(e);
        const Strain& s = eps.values[static_cast<std::size_t>(e)];
        os << c.x() << ',' << c.y() << ',' << s.xx << ',' << s.yy << ',' << s.xy << '\n';
    }
}

} // namespace elastoreg
