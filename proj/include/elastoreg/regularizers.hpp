#pragma once

// Regularization terms for displacement registration on bilinear quad meshes.
//
//   strain                 (alpha/2) * int  sym(grad u) : sym(grad u)
//   strain_incompressible  the above + (alpha_i/2) * int (div u)^2
//   momentum_plane_*       alpha * sum_j l_j * sqrt(|[[A]]_j . n_j|^2 + delta)
//
// with A[u] = lambda_bar (div u) I + 2 sym(grad u). The momentum term is the
// edge-jump form of a total-variation penalty on div A: for a piecewise
// constant A the integral of |div A| collapses onto the interior edges.
// Each interior edge contributes the jump of A . n between its two elements,
// with sym(grad u) evaluated at the edge midpoint and the dilatation term at
// the element centers. The jump components are linear maps Kx, Ky of the
// nodal vector, so value, gradient and a Gauss-Newton Hessian (curvature of
// the square root dropped) are cheap sparse products.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Sparse>

#include "elastoreg/error.hpp"
#include "elastoreg/mesh.hpp"

namespace elastoreg {

enum class RegularizerKind { strain, strain_incompressible, momentum_plane_strain, momentum_plane_stress };

inline std::string_view to_string(RegularizerKind k) {
    switch (k) {
    case RegularizerKind::strain: return "strain";
    case RegularizerKind::strain_incompressible: return "strain_incompressible";
    case RegularizerKind::momentum_plane_strain: return "momentum_plane_strain";
    case RegularizerKind::momentum_plane_stress: return "momentum_plane_stress";
    }
    return "?";
}

inline RegularizerKind parse_regularizer_kind(std::string_view s) {
    if (s == "strain")
        return RegularizerKind::strain;
    if (s == "strain_incompressible")
        return RegularizerKind::strain_incompressible;
    if (s == "momentum_plane_strain")
        return RegularizerKind::momentum_plane_strain;
    if (s == "momentum_plane_stress")
        return RegularizerKind::momentum_plane_stress;
    fail(ErrorKind::invalid_argument, "unknown regularizer kind '" + std::string(s) + "'");
}

inline bool is_momentum(RegularizerKind k) {
    return k == RegularizerKind::momentum_plane_strain || k == RegularizerKind::momentum_plane_stress;
}

struct RegularizerSpec {
    RegularizerKind kind = RegularizerKind::strain;
    double alpha = 1.0;
    double alpha_i = 0.0;     // strain_incompressible only
    double lambda_bar = 2.0;  // momentum kinds only
    double delta = 1e-8;      // momentum kinds only

    static constexpr double default_delta = 1e-8;

    /// Plane strain lambda_bar = 2 nu / (1 - 2 nu).
    static double plane_strain_lambda_bar(double nu) {
        require(nu >= 0.0 && nu < 0.5, "plane_strain_lambda_bar: need 0 <= nu < 0.5");
        return 2.0 * nu / (1.0 - 2.0 * nu);
    }

    static RegularizerSpec strain(double alpha) { return {RegularizerKind::strain, alpha, 0.0, 0.0, 0.0}; }
    static RegularizerSpec strain_incompressible(double alpha) {
        return {RegularizerKind::strain_incompressible, alpha, 100.0 * alpha, 0.0, 0.0};
    }
    static RegularizerSpec strain_incompressible(double alpha, double alpha_i) {
        return {RegularizerKind::strain_incompressible, alpha, alpha_i, 0.0, 0.0};
    }
    static RegularizerSpec momentum_plane_strain(double alpha, double nu = 0.45, double delta = default_delta) {
        return {RegularizerKind::momentum_plane_strain, alpha, 0.0, plane_strain_lambda_bar(nu), delta};
    }
    static RegularizerSpec momentum_plane_stress(double alpha, double delta = default_delta) {
        return {RegularizerKind::momentum_plane_stress, alpha, 0.0, 2.0, delta};
    }

    /// Same regularizer with a different weight; alpha_i keeps its ratio to alpha.
    RegularizerSpec with_alpha(double a) const {
        RegularizerSpec s = *this;
        if (kind == RegularizerKind::strain_incompressible && alpha > 0)
            s.alpha_i = alpha_i * (a / alpha);
        s.alpha = a;
        return s;
    }

    void validate() const {
        require(alpha > 0.0 && std::isfinite(alpha), "RegularizerSpec: alpha must be positive");
        if (kind == RegularizerKind::strain_incompressible)
            require(alpha_i >= 0.0, "RegularizerSpec: alpha_i must be non-negative");
        if (is_momentum(kind)) {
            require(delta > 0.0, "RegularizerSpec: delta must be positive");
            require(lambda_bar >= 0.0 && std::isfinite(lambda_bar), "RegularizerSpec: lambda_bar must be finite and >= 0");
        }
    }
};

struct RegEval {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::SparseMatrix<double> gn_hessian;
};

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Kx, Ky: (interior edges) x (2 * nodes). Row j maps the nodal vector to the
/// x / y component of [[A]] . n at the midpoint of edge j (right minus left).
struct EdgeJumpOperators {
    SparseRows kx;
    SparseRows ky;
    Eigen::VectorXd lengths;
    double lambda_bar = 0.0;
    std::uint64_t mesh_hash = 0;

    int num_edges() const { return static_cast<int>(lengths.size()); }
};

/// Coefficients of (A . n)_x and (A . n)_y with respect to the 8 element dofs,
/// sym(grad u) taken at `local` and the dilatation at the element center.
inline Eigen::Matrix<double, 2, 8> traction_coefficients(const QuadMesh& mesh, int e, const Vec2& local, const Vec2& n,
                                                         double lambda_bar) {
    const ShapeGrad g = mesh.shape_gradients(e, local);
    const ShapeGrad gc = mesh.shape_gradients(e, Vec2::Zero());
    Eigen::Matrix<double, 2, 8> t;
    for (int a = 0; a < 4; ++a) {
        // d/d(ux_a)
        double axx = 2.0 * g(a, 0) + lambda_bar * gc(a, 0);
        double ayy = lambda_bar * gc(a, 0);
        double axy = g(a, 1);
        t(0, 2 * a) = axx * n.x() + axy * n.y();
        t(1, 2 * a) = axy * n.x() + ayy * n.y();
        // d/d(uy_a)
        axx = lambda_bar * gc(a, 1);
        ayy = 2.0 * g(a, 1) + lambda_bar * gc(a, 1);
        axy = g(a, 0);
        t(0, 2 * a + 1) = axx * n.x() + axy * n.y();
        t(1, 2 * a + 1) = axy * n.x() + ayy * n.y();
    }
    return t;
}

inline EdgeJumpOperators build_edge_operators(const QuadMesh& mesh, double lambda_bar) {
    const auto& edges = mesh.interior_edges();
    require(!edges.empty(), "build_edge_operators: mesh has no interior edges");
    require(lambda_bar >= 0.0 && std::isfinite(lambda_bar), "build_edge_operators: lambda_bar must be finite and >= 0");
    std::vector<Eigen::Triplet<double>> tx, ty;
    tx.reserve(edges.size() * 16);
    ty.reserve(edges.size() * 16);
    EdgeJumpOperators ops;
    ops.lengths.resize(static_cast<Eigen::Index>(edges.size()));
    for (std::size_t j = 0; j < edges.size(); ++j) {
        const auto& edge = edges[j];
        ops.lengths(static_cast<Eigen::Index>(j)) = edge.length;
        const std::pair<int, int> sides[2] = {{edge.left, edge.left_side}, {edge.right, edge.right_side}};
        for (int s = 0; s < 2; ++s) {
            const auto [e, side] = sides[s];
            const double sign = s == 0 ? -1.0 : 1.0;
            const auto t = traction_coefficients(mesh, e, side_midpoint_local(side), edge.normal, lambda_bar);
            const auto& el = mesh.element(e);
            for (int k = 0; k < 8; ++k) {
                const int dof = 2 * el[k / 2] + k % 2;
                tx.emplace_back(static_cast<int>(j), dof, sign * t(0, k));
                ty.emplace_back(static_cast<int>(j), dof, sign * t(1, k));
            }
        }
    }
    const auto rows = static_cast<Eigen::Index>(edges.size());
    ops.kx.resize(rows, mesh.num_dofs());
    ops.ky.resize(rows, mesh.num_dofs());
    ops.kx.setFromTriplets(tx.begin(), tx.end());
    ops.ky.setFromTriplets(ty.begin(), ty.end());
    ops.lambda_bar = lambda_bar;
    ops.mesh_hash = mesh.hash();
    return ops;
}

/// alpha * int sym(grad w) : sym(grad v) (3x3 Gauss) + alpha_i * int div w div v (element center).
inline Eigen::SparseMatrix<double> strain_regularizer_hessian(const QuadMesh& mesh, double alpha, double alpha_i) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(mesh.num_elements()) * 64);
    const auto& q = gauss3x3();
    for (int e = 0; e < mesh.num_elements(); ++e) {
        Eigen::Matrix<double, 8, 8> k = Eigen::Matrix<double, 8, 8>::Zero();
        for (std::size_t p = 0; p < q.points.size(); ++p) {
            const ShapeGrad g = mesh.shape_gradients(e, q.points[p]);
            const double w = q.weights[p] * mesh.jacobian(e, q.points[p]).determinant();
            // Rows: eps_xx, eps_yy, 2 eps_xy. eps:eps = xx^2 + yy^2 + (2xy)^2 / 2.
            Eigen::Matrix<double, 3, 8> b = Eigen::Matrix<double, 3, 8>::Zero();
            for (int a = 0; a < 4; ++a) {
                b(0, 2 * a) = g(a, 0);
                b(1, 2 * a + 1) = g(a, 1);
                b(2, 2 * a) = g(a, 1);
                b(2, 2 * a + 1) = g(a, 0);
            }
            const Eigen::Vector3d d(1.0, 1.0, 0.5);
            k.noalias() += (alpha * w) * b.transpose() * d.asDiagonal() * b;
        }
        if (alpha_i != 0.0) {
            const ShapeGrad gc = mesh.shape_gradients(e, Vec2::Zero());
            const double area = 4.0 * mesh.jacobian(e, Vec2::Zero()).determinant();
            Eigen::Matrix<double, 8, 1> div;
            for (int a = 0; a < 4; ++a) {
                div(2 * a) = gc(a, 0);
                div(2 * a + 1) = gc(a, 1);
            }
            k.noalias() += (alpha_i * area) * div * div.transpose();
        }
        const auto& el = mesh.element(e);
        for (int a = 0; a < 8; ++a)
            for (int b = 0; b < 8; ++b)
                trips.emplace_back(2 * el[a / 2] + a % 2, 2 * el[b / 2] + b % 2, k(a, b));
    }
    Eigen::SparseMatrix<double> h(mesh.num_dofs(), mesh.num_dofs());
    h.setFromTriplets(trips.begin(), trips.end());
    return h;
}

/// Quadratic strain regularizer (alpha_i = 0 gives the plain strain magnitude term).
inline RegEval eval_strain_reg(const NodalField& u, double alpha, double alpha_i) {
    RegEval r;
    r.gn_hessian = strain_regularizer_hessian(*u.mesh, alpha, alpha_i);
    r.gradient = r.gn_hessian * u.values;
    r.value = 0.5 * u.values.dot(r.gradient);
    return r;
}

inline RegEval eval_momentum_reg(const Eigen::VectorXd& u, const EdgeJumpOperators& ops, double alpha, double delta) {
    require(delta > 0.0, "eval_momentum_reg: delta must be positive");
    require(u.size() == ops.kx.cols(), "eval_momentum_reg: field size does not match the operators");
    const Eigen::VectorXd jx = ops.kx * u;
    const Eigen::VectorXd jy = ops.ky * u;
    const Eigen::ArrayXd s = (jx.array().square() + jy.array().square() + delta).sqrt();
    const Eigen::VectorXd d = (ops.lengths.array() / s).matrix();
    RegEval r;
    r.value = alpha * (ops.lengths.array() * s).sum();
    r.gradient = alpha * (ops.kx.transpose() * d.cwiseProduct(jx) + ops.ky.transpose() * d.cwiseProduct(jy));
    const Eigen::SparseMatrix<double> kx = ops.kx, ky = ops.ky;
    r.gn_hessian = alpha * (Eigen::SparseMatrix<double>(kx.transpose() * d.asDiagonal() * kx) +
                            Eigen::SparseMatrix<double>(ky.transpose() * d.asDiagonal() * ky));
    return r;
}

inline RegEval eval_momentum_reg(const NodalField& u, const EdgeJumpOperators& ops, double alpha, double delta) {
    require(u.mesh->hash() == ops.mesh_hash, "eval_momentum_reg: operators were built for a different mesh");
    return eval_momentum_reg(u.values, ops, alpha, delta);
}

/// A regularizer bound to a mesh; quadratic Hessians and edge operators are
/// built once and reused across evaluations.
class Regularizer {
public:
    Regularizer(RegularizerSpec spec, const QuadMesh& mesh) : spec_(spec) {
        spec_.validate();
        if (is_momentum(spec_.kind))
            ops_ = build_edge_operators(mesh, spec_.lambda_bar);
        else
            hessian_ = strain_regularizer_hessian(
                mesh, spec_.alpha, spec_.kind == RegularizerKind::strain_incompressible ? spec_.alpha_i : 0.0);
    }

    const RegularizerSpec& spec() const { return spec_; }
    const EdgeJumpOperators& edge_operators() const { return ops_; }

    RegEval evaluate(const Eigen::VectorXd& u) const {
        if (is_momentum(spec_.kind))
            return eval_momentum_reg(u, ops_, spec_.alpha, spec_.delta);
        RegEval r;
        r.gn_hessian = hessian_;
        r.gradient = hessian_ * u;
        r.value = 0.5 * u.dot(r.gradient);
        return r;
    }

    double value(const Eigen::VectorXd& u) const {
        if (is_momentum(spec_.kind)) {
            const Eigen::ArrayXd jx = ops_.kx * u, jy = ops_.ky * u;
            return spec_.alpha * (ops_.lengths.array() * (jx.square() + jy.square() + spec_.delta).sqrt()).sum();
        }
        return 0.5 * u.dot(hessian_ * u);
    }

private:
    RegularizerSpec spec_;
    EdgeJumpOperators ops_;
    Eigen::SparseMatrix<double> hessian_;
};

} // namespace elastoreg
