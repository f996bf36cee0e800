#pragma once

// Error norms, strain ratio and elastographic contrast-to-noise ratio.
// All errors are relative L2 norms over the mesh domain, in percent.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "elastoreg/error.hpp"
#include "elastoreg/geometry.hpp"
#include "elastoreg/mesh.hpp"
#include "elastoreg/strain.hpp"

namespace elastoreg {

enum class DispComponent { x, y, total };
enum class StrainComponent { xx, yy, xy, total };

namespace detail {

inline void require_same_mesh(const QuadMesh& a, const QuadMesh& b, const char* what) {
    if (&a != &b && a.hash() != b.hash())
        fail(ErrorKind::incompatible, std::string(what) + ": fields live on different meshes");
}

inline double relative_percent(double err2, double ref2, const char* what) {
    if (!(ref2 > 0.0))
        fail(ErrorKind::undefined_metric, std::string(what) + ": reference field has zero norm");
    return 100.0 * std::sqrt(err2 / ref2);
}

inline double strain_component_sq(const Strain& s, StrainComponent c) {
    switch (c) {
    case StrainComponent::xx: return s.xx * s.xx;
    case StrainComponent::yy: return s.yy * s.yy;
    case StrainComponent::xy: return s.xy * s.xy;
    case StrainComponent::total: return s.squared_norm();
    }
    return 0.0;
}

} // namespace detail

/// 100 * ||u_t - u_m|| / ||u_t|| with L2 integrals by 3x3 Gauss quadrature.
inline double disp_error(const NodalField& truth, const NodalField& measured, DispComponent c) {
    detail::require_same_mesh(*truth.mesh, *measured.mesh, "disp_error");
    const QuadMesh& mesh = *truth.mesh;
    const auto& q = gauss3x3();
    double err2 = 0.0, ref2 = 0.0;
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const auto& el = mesh.element(e);
        for (std::size_t p = 0; p < q.points.size(); ++p) {
            const Eigen::Vector4d n = shape_values(q.points[p]);
            const double w = q.weights[p] * mesh.jacobian(e, q.points[p]).determinant();
            Vec2 t = Vec2::Zero(), m = Vec2::Zero();
            for (int a = 0; a < 4; ++a) {
                t += n[a] * truth.at(el[a]);
                m += n[a] * measured.at(el[a]);
            }
            const Vec2 d = t - m;
            switch (c) {
            case DispComponent::x:
                err2 += w * d.x() * d.x();
                ref2 += w * t.x() * t.x();
                break;
            case DispComponent::y:
                err2 += w * d.y() * d.y();
                ref2 += w * t.y() * t.y();
                break;
            case DispComponent::total:
                err2 += w * d.squaredNorm();
                ref2 += w * t.squaredNorm();
                break;
            }
        }
    }
    return detail::relative_percent(err2, ref2, "disp_error");
}

/// Strains are constant per element (center values), so the integrals are area sums.
inline double strain_error(const StrainField& truth, const StrainField& measured, StrainComponent c) {
    detail::require_same_mesh(*truth.mesh, *measured.mesh, "strain_error");
    require(truth.values.size() == measured.values.size(), "strain_error: element count mismatch");
    double err2 = 0.0, ref2 = 0.0;
    for (int e = 0; e < truth.mesh->num_elements(); ++e) {
        const double a = truth.mesh->element_area(e);
        const Strain& t = truth.values[static_cast<std::size_t>(e)];
        err2 += a * detail::strain_component_sq(t - measured.values[static_cast<std::size_t>(e)], c);
        ref2 += a * detail::strain_component_sq(t, c);
    }
    return detail::relative_percent(err2, ref2, "strain_error");
}

/// Inclusion region B (disk or polygon) and its complement A within the mesh.
/// Elements are assigned by their centers.
struct RoiMask {
    std::optional<Disk> disk;
    std::vector<Vec2> polygon;

    static RoiMask from_disk(const Disk& d) { return {d, {}}; }
    static RoiMask from_polygon(std::vector<Vec2> p) {
        require(p.size() >= 3, "RoiMask: polygon needs at least three vertices");
        return {std::nullopt, std::move(p)};
    }

    bool in_inclusion(const Vec2& p) const {
        if (disk)
            return disk->contains(p);
        bool inside = false;
        for (std::size_t i = 0, j = polygon.size() - 1; i < polygon.size(); j = i++) {
            const Vec2 &a = polygon[i], &b = polygon[j];
            if ((a.y() > p.y()) != (b.y() > p.y()) &&
                p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
                inside = !inside;
        }
        return inside;
    }
};

struct RegionStats {
    double mean = 0.0;
    double variance = 0.0;
    double area = 0.0;
    int elements = 0;
};

/// Area-weighted mean and variance of eps_xx over A (outside) and B (inside).
inline std::pair<RegionStats, RegionStats> axial_strain_stats(const StrainField& eps, const RoiMask& roi) {
    RegionStats a, b;
    const QuadMesh& mesh = *eps.mesh;
    for (int e = 0; e < mesh.num_elements(); ++e) {
        RegionStats& r = roi.in_inclusion(mesh.element_center(e)) ? b : a;
        const double w = mesh.element_area(e);
        r.mean += w * eps.values[static_cast<std::size_t>(e)].xx;
        r.area += w;
        ++r.elements;
    }
    for (RegionStats* r : {&a, &b})
        if (r->area > 0)
            r->mean /= r->area;
    for (int e = 0; e < mesh.num_elements(); ++e) {
        RegionStats& r = roi.in_inclusion(mesh.element_center(e)) ? b : a;
        const double d = eps.values[static_cast<std::size_t>(e)].xx - r.mean;
        r.variance += mesh.element_area(e) * d * d;
    }
    for (RegionStats* r : {&a, &b})
        if (r->area > 0)
            r->variance /= r->area;
    return {a, b};
}

/// Mean eps_xx outside the inclusion over mean eps_xx inside.
inline double strain_ratio(const StrainField& eps, const RoiMask& roi) {
    const auto [a, b] = axial_strain_stats(eps, roi);
    if (a.elements < 1 || b.elements < 1)
        fail(ErrorKind::undefined_metric, "strain_ratio: both regions need at least one element");
    if (b.mean == 0.0)
        fail(ErrorKind::undefined_metric, "strain_ratio: zero mean axial strain in the inclusion");
    return a.mean / b.mean;
}

struct CnrResult {
    double value = 0.0;
    bool defined = true; // false: both variances vanish, value is +inf
};

/// 2 (mean_A - mean_B)^2 / (var_A + var_B).
inline CnrResult cnr_e(const StrainField& eps, const RoiMask& roi) {
    const auto [a, b] = axial_strain_stats(eps, roi);
    if (a.elements < 2 || b.elements < 2)
        fail(ErrorKind::undefined_metric, "cnr_e: both regions need at least two elements");
    const double num = 2.0 * (a.mean - b.mean) * (a.mean - b.mean);
    const double den = a.variance + b.variance;
    if (den == 0.0)
        return {std::numeric_limits<double>::infinity(), false};
    return {num / den, true};
}

/// Everything reported for one measured field against its truth.
struct MetricSet {
    double disp_x = 0, disp_y = 0, disp_total = 0;
    double strain_xx = 0, strain_yy = 0, strain_xy = 0, strain_total = 0;
    double strain_ratio = 0;
    CnrResult cnr;
    bool all_defined = true;
};

inline MetricSet compute_metrics(const NodalField& truth, const NodalField& measured, const std::optional<RoiMask>& roi) {
    MetricSet m;
    m.disp_x = disp_error(truth, measured, DispComponent::x);
    m.disp_y = disp_error(truth, measured, DispComponent::y);
    m.disp_total = disp_error(truth, measured, DispComponent::total);
    const StrainField et = strain_from_displacement(truth), em = strain_from_displacement(measured);
    m.strain_xx = strain_error(et, em, StrainComponent::xx);
    m.strain_yy = strain_error(et, em, StrainComponent::yy);
    m.strain_xy = strain_error(et, em, StrainComponent::xy);
    m.strain_total = strain_error(et, em, StrainComponent::total);
    if (roi) {
        m.strain_ratio = strain_ratio(em, *roi);
        m.cnr = cnr_e(em, *roi);
        m.all_defined = m.cnr.defined;
    }
    return m;
}

/// (name, value) pairs in report order.
inline std::vector<std::pair<std::string_view, double>> metric_rows(const MetricSet& m, bool with_roi) {
    std::vector<std::pair<std::string_view, double>> rows = {
        {"disp_x_pct", m.disp_x},       {"disp_y_pct", m.disp_y},       {"disp_total_pct", m.disp_total},
        {"strain_xx_pct", m.strain_xx}, {"strain_yy_pct", m.strain_yy}, {"strain_xy_pct", m.strain_xy},
        {"strain_total_pct", m.strain_total}};
    if (with_roi) {
        rows.emplace_back("strain_ratio", m.strain_ratio);
        rows.emplace_back("cnr_e", m.cnr.value);
    }
    return rows;
}

} // namespace elastoreg
