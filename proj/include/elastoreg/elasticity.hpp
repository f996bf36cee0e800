#pragma once

// 2D linear elasticity on bilinear quads (plane strain / plane stress) used to
// generate ground-truth displacement sequences.
//
// The element stiffness uses selective reduced integration: the shear (mu)
// part with 3x3 Gauss points and the dilatational (lambda) part at the element
// center, which keeps nu -> 0.5 free of volumetric locking.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "elastoreg/geometry.hpp"
#include "elastoreg/mesh.hpp"
#include "elastoreg/strain.hpp"

namespace elastoreg {

enum class PlaneMode { plane_strain, plane_stress };

struct MaterialField {
    std::vector<double> young_modulus; // per element, MPa
    double poisson_ratio = 0.495;
    PlaneMode mode = PlaneMode::plane_strain;

    void validate(const QuadMesh& mesh) const {
        require(static_cast<int>(young_modulus.size()) == mesh.num_elements(),
                "MaterialField: one Young's modulus per element required");
        for (double e : young_modulus)
            require(e > 0.0, "MaterialField: Young's modulus must be positive");
        if (mode == PlaneMode::plane_strain)
            require(poisson_ratio >= 0.0 && poisson_ratio < 0.5, "MaterialField: plane strain needs 0 <= nu < 0.5");
        else
            require(poisson_ratio >= 0.0 && poisson_ratio <= 0.5, "MaterialField: plane stress needs 0 <= nu <= 0.5");
    }

    double shear_modulus(int e) const { return young_modulus[static_cast<std::size_t>(e)] / (2.0 * (1.0 + poisson_ratio)); }

    /// Effective 2D Lame parameter.
    double lambda(int e) const {
        const double E = young_modulus[static_cast<std::size_t>(e)], nu = poisson_ratio;
        if (mode == PlaneMode::plane_strain)
            return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        return E * nu / (1.0 - nu * nu);
    }
};

/// Per-node displacement constraint; unset components are traction free.
struct NodeConstraint {
    std::optional<double> ux;
    std::optional<double> uy;

    static NodeConstraint traction_free() { return {}; }
    static NodeConstraint fixed_xy() { return {0.0, 0.0}; }
    static NodeConstraint prescribed(const Vec2& u) { return {u.x(), u.y()}; }
    /// Normal component (axis 0 = x, 1 = y) set to `value`, tangential free.
    static NodeConstraint fixed_normal_slip(int axis, double value = 0.0) {
        NodeConstraint c;
        (axis == 0 ? c.ux : c.uy) = value;
        return c;
    }
};

struct BoundarySpec {
    std::map<int, NodeConstraint> constraints;

    void set(int node, const NodeConstraint& c) { constraints[node] = c; }
};

inline Eigen::Matrix<double, 8, 8> element_stiffness(const QuadMesh& mesh, int e, double mu, double lambda) {
    Eigen::Matrix<double, 8, 8> k = Eigen::Matrix<double, 8, 8>::Zero();
    const auto& q = gauss3x3();
    for (std::size_t p = 0; p < q.points.size(); ++p) {
        const ShapeGrad g = mesh.shape_gradients(e, q.points[p]);
        const double w = q.weights[p] * mesh.jacobian(e, q.points[p]).determinant();
        Eigen::Matrix<double, 3, 8> b = Eigen::Matrix<double, 3, 8>::Zero();
        for (int a = 0; a < 4; ++a) {
            b(0, 2 * a) = g(a, 0);
            b(1, 2 * a + 1) = g(a, 1);
            b(2, 2 * a) = g(a, 1);
            b(2, 2 * a + 1) = g(a, 0);
        }
        const Eigen::Vector3d d(2.0 * mu, 2.0 * mu, mu);
        k.noalias() += w * b.transpose() * d.asDiagonal() * b;
    }
    const ShapeGrad gc = mesh.shape_gradients(e, Vec2::Zero());
    const double area_c = 4.0 * mesh.jacobian(e, Vec2::Zero()).determinant();
    Eigen::Matrix<double, 8, 1> div;
    for (int a = 0; a < 4; ++a) {
        div(2 * a) = gc(a, 0);
        div(2 * a + 1) = gc(a, 1);
    }
    k.noalias() += lambda * area_c * div * div.transpose();
    return k;
}

inline Eigen::SparseMatrix<double> assemble_stiffness(const QuadMesh& mesh, const MaterialField& material) {
    material.validate(mesh);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(mesh.num_elements()) * 64);
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const auto ke = element_stiffness(mesh, e, material.shear_modulus(e), material.lambda(e));
        const auto& el = mesh.element(e);
        for (int a = 0; a < 8; ++a)
            for (int b = 0; b < 8; ++b)
                trips.emplace_back(2 * el[a / 2] + a % 2, 2 * el[b / 2] + b % 2, ke(a, b));
    }
    Eigen::SparseMatrix<double> k(mesh.num_dofs(), mesh.num_dofs());
    k.setFromTriplets(trips.begin(), trips.end());
    return k;
}

/// Static equilibrium with zero body force; constrained dofs are eliminated.
inline NodalField solve_static(MeshPtr mesh, const MaterialField& material, const BoundarySpec& bcs) {
    const int n = mesh->num_dofs();
    std::vector<std::optional<double>> fixed(static_cast<std::size_t>(n));
    for (const auto& [node, c] : bcs.constraints) {
        require(node >= 0 && node < mesh->num_nodes(), "solve_static: constrained node out of range");
        fixed[static_cast<std::size_t>(2 * node)] = c.ux;
        fixed[static_cast<std::size_t>(2 * node + 1)] = c.uy;
    }
    std::vector<int> free_index(static_cast<std::size_t>(n), -1);
    int n_free = 0;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        if (fixed[static_cast<std::size_t>(i)])
            u(i) = *fixed[static_cast<std::size_t>(i)];
        else
            free_index[static_cast<std::size_t>(i)] = n_free++;
    }
    if (n_free == 0)
        return NodalField(mesh, u);
    if (n_free == n)
        fail(ErrorKind::under_constrained, "solve_static: no displacement constraints");

    const Eigen::SparseMatrix<double> k = assemble_stiffness(*mesh, material);
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_free);
    for (int col = 0; col < k.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(k, col); it; ++it) {
            const int r = free_index[static_cast<std::size_t>(it.row())];
            if (r < 0)
                continue;
            const int c = free_index[static_cast<std::size_t>(it.col())];
            if (c >= 0)
                trips.emplace_back(r, c, it.value());
            else
                rhs(r) -= it.value() * u(it.col());
        }
    Eigen::SparseMatrix<double> kff(n_free, n_free);
    kff.setFromTriplets(trips.begin(), trips.end());

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(kff);
    if (solver.info() != Eigen::Success)
        fail(ErrorKind::under_constrained, "solve_static: stiffness factorization failed");
    const Eigen::VectorXd d = solver.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (!(d.minCoeff() > 1e-12 * dmax))
        fail(ErrorKind::under_constrained,
             "solve_static: singular constrained stiffness (min pivot " + std::to_string(d.minCoeff()) + ")");
    const Eigen::VectorXd uf = solver.solve(rhs);
    const double scale = std::max({rhs.norm(), (kff * uf).norm(), 1e-300});
    const double residual = (kff * uf - rhs).norm() / scale;
    if (solver.info() != Eigen::Success || !uf.allFinite() || residual > 1e-8)
        fail(ErrorKind::solver_failure, "solve_static: linear solve failed (relative residual " +
                                            std::to_string(residual) + ")");
    for (int i = 0; i < n; ++i)
        if (free_index[static_cast<std::size_t>(i)] >= 0)
            u(i) = uf(free_index[static_cast<std::size_t>(i)]);
    return NodalField(std::move(mesh), u);
}

/// Nodal forces K u; nonzero only at constrained nodes for an equilibrium solution.
inline Eigen::VectorXd nodal_forces(const NodalField& u, const MaterialField& material) {
    return assemble_stiffness(*u.mesh, material) * u.values;
}

/// Frames k = c_k * solution with c_k chosen so that the window-mean axial
/// strain of frame k equals -k * mean_step_strain (compression). Frame 0 is zero.
inline std::vector<NodalField> make_truth_frames(const NodalField& solution, int n_frames, double mean_step_strain,
                                                 const Rect& image_window) {
    require(n_frames >= 2, "make_truth_frames: need at least two frames");
    const double base = window_mean_axial_strain(solution, image_window);
    require(base != 0.0 && std::isfinite(base), "make_truth_frames: zero mean axial strain in the image window");
    std::vector<NodalField> frames;
    frames.reserve(static_cast<std::size_t>(n_frames));
    for (int k = 0; k < n_frames; ++k) {
        const double c = -k * mean_step_strain / base;
        frames.emplace_back(solution.mesh, Eigen::VectorXd(c * solution.values));
    }
    return frames;
}

/// 2D analogue of a compressed block with a circular inclusion. The block spans
/// x in [0, depth] (x = 0 at the transducer) and y in [0, width]. Displacements
/// are expressed in the frame of the compression plate: the plate region of the
/// top surface slips laterally with ux = 0, the bottom moves toward the plate
/// by `compression` with uy = 0, all other surfaces are traction free.
struct CompressionPhantom {
    double depth_mm = 40.0;
    double width_mm = 40.0;
    double element_mm = 0.5;
    double platen_mm = 12.5;
    double compression_mm = 0.4;
    double e_background = 10.0;
    double e_inclusion = 40.0;
    double poisson_ratio = 0.495;
    PlaneMode mode = PlaneMode::plane_stress;
    std::optional<Disk> inclusion;

    MeshPtr mesh() const {
        const int nx = std::max(1, static_cast<int>(std::lround(depth_mm / element_mm)));
        const int ny = std::max(1, static_cast<int>(std::lround(width_mm / element_mm)));
        return std::make_shared<const QuadMesh>(build_structured_mesh(depth_mm, width_mm, nx, ny));
    }

    MaterialField material(const QuadMesh& m) const {
        MaterialField mat;
        mat.poisson_ratio = poisson_ratio;
        mat.mode = mode;
        mat.young_modulus.resize(static_cast<std::size_t>(m.num_elements()), e_background);
        if (inclusion)
            for (int e = 0; e < m.num_elements(); ++e)
                if (inclusion->contains(m.element_center(e)))
                    mat.young_modulus[static_cast<std::size_t>(e)] = e_inclusion;
        return mat;
    }

    BoundarySpec boundary(const QuadMesh& m) const {
        BoundarySpec bcs;
        const double tol = 1e-9 * std::max(depth_mm, width_mm);
        for (int n = 0; n < m.num_nodes(); ++n) {
            const Vec2& p = m.node(n);
            if (std::abs(p.x() - depth_mm) < tol)
                bcs.set(n, NodeConstraint::prescribed({-compression_mm, 0.0}));
            else if (std::abs(p.x()) < tol && std::abs(p.y() - 0.5 * width_mm) <= 0.5 * platen_mm + tol)
                bcs.set(n, NodeConstraint::fixed_normal_slip(0, 0.0));
        }
        return bcs;
    }

    NodalField solve() const {
        auto m = mesh();
        return solve_static(m, material(*m), boundary(*m));
    }
};

} // namespace elastoreg
