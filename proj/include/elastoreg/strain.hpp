#pragma once

#include <vector>

#include "elastoreg/geometry.hpp"
#include "elastoreg/mesh.hpp"

namespace elastoreg {

/// Symmetric small-strain tensor.
struct Strain {
    double xx = 0.0;
    double yy = 0.0;
    double xy = 0.0;

    double trace() const { return xx + yy; }
    /// Double-dot product with itself.
    double squared_norm() const { return xx * xx + yy * yy + 2.0 * xy * xy; }
    Strain operator-(const Strain& o) const { return {xx - o.xx, yy - o.yy, xy - o.xy}; }
    Strain operator*(double s) const { return {xx * s, yy * s, xy * s}; }
};

inline Strain symmetric_gradient(const Mat2& du) {
    return {du(0, 0), du(1, 1), 0.5 * (du(0, 1) + du(1, 0))};
}

/// Per-element strains evaluated at element centers.
struct StrainField {
    MeshPtr mesh;
    std::vector<Strain> values;
};

inline StrainField strain_from_displacement(const NodalField& u) {
    StrainField s{u.mesh, {}};
    s.values.reserve(static_cast<std::size_t>(u.mesh->num_elements()));
    for (int e = 0; e < u.mesh->num_elements(); ++e)
        s.values.push_back(symmetric_gradient(u.gradient(e, Vec2::Zero())));
    return s;
}

/// Area-weighted mean axial strain over elements whose centers lie inside `window`.
inline double window_mean_axial_strain(const NodalField& u, const Rect& window) {
    double sum = 0.0, area = 0.0;
    for (int e = 0; e < u.mesh->num_elements(); ++e) {
        if (!window.contains(u.mesh->element_center(e)))
            continue;
        const double a = u.mesh->element_area(e);
        sum += a * u.gradient(e, Vec2::Zero())(0, 0);
        area += a;
    }
    require(area > 0.0, "window_mean_axial_strain: no element centers inside the window");
    return sum / area;
}

} // namespace elastoreg
