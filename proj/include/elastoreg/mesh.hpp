#pragma once

// Bilinear quadrilateral meshes: shape functions, quadrature, inverse mapping,
// interior-edge topology and nodal vector fields.
//
// Conventions used throughout the library:
//   * x is the axial (beam) direction, y the lateral direction, both in mm.
//   * Element nodes are counter-clockwise in the (x, y) plane; reference
//     corners are (-1,-1), (1,-1), (1,1), (-1,1).
//   * Nodal vector fields are interleaved: [ux0, uy0, ux1, uy1, ...].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "elastoreg/error.hpp"

namespace elastoreg {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using ShapeGrad = Eigen::Matrix<double, 4, 2>;

struct QuadratureRule {
    std::vector<Vec2> points;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
    require(n >= 1, "gauss_legendre: need at least one point");
    std::vector<double> x(n), w(n);
    for (int i = 0; i < n; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16)
                break;
        }
        x[i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return {x, w};
}

/// Tensor-product Gauss rule with n points per direction on [-1,1]^2.
inline QuadratureRule tensor_gauss_rule(int n) {
    auto [x, w] = gauss_legendre(n);
    QuadratureRule rule;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            rule.points.emplace_back(x[i], x[j]);
            rule.weights.push_back(w[i] * w[j]);
        }
    return rule;
}

inline const QuadratureRule& gauss3x3() {
    static const QuadratureRule rule = tensor_gauss_rule(3);
    return rule;
}

inline Eigen::Vector4d shape_values(const Vec2& local) {
    const double r = local.x(), s = local.y();
    return {0.25 * (1 - r) * (1 - s), 0.25 * (1 + r) * (1 - s), 0.25 * (1 + r) * (1 + s),
            0.25 * (1 - r) * (1 + s)};
}

/// Derivatives of the four shape functions with respect to the local coordinates.
inline ShapeGrad shape_local_gradients(const Vec2& local) {
    const double r = local.x(), s = local.y();
    ShapeGrad d;
    d << -0.25 * (1 - s), -0.25 * (1 - r), 0.25 * (1 - s), -0.25 * (1 + r), 0.25 * (1 + s),
        0.25 * (1 + r), -0.25 * (1 + s), 0.25 * (1 - r);
    return d;
}

struct InteriorEdge {
    std::array<int, 2> nodes;   // endpoints
    int left = -1;              // lower-index element
    int right = -1;             // higher-index element
    int left_side = -1;         // local edge index (0..3) within the left element
    int right_side = -1;        // local edge index within the right element
    Vec2 normal = Vec2::Zero(); // unit, pointing from left into right
    double length = 0.0;
};

struct BoundaryEdge {
    std::array<int, 2> nodes;
    int element = -1;
    int side = -1;
};

/// Location of a point inside the mesh.
struct MeshLocation {
    int element = -1;
    Vec2 local = Vec2::Zero();
};

/// Local coordinates of the midpoint of element side k (side k joins local nodes k and k+1).
inline Vec2 side_midpoint_local(int side) {
    static const std::array<Vec2, 4> mids = {Vec2(0, -1), Vec2(1, 0), Vec2(0, 1), Vec2(-1, 0)};
    return mids.at(static_cast<std::size_t>(side));
}

class QuadMesh {
public:
    using Element = std::array<int, 4>;

    QuadMesh(std::vector<Vec2> nodes, std::vector<Element> elements)
        : nodes_(std::move(nodes)), elements_(std::move(elements)) {
        require(!elements_.empty(), "QuadMesh: no elements");
        for (const auto& e : elements_)
            for (int n : e)
                require(n >= 0 && n < static_cast<int>(nodes_.size()), "QuadMesh: node index out of range");
        for (int e = 0; e < num_elements(); ++e)
            for (const auto& q : gauss3x3().points)
                if (!(jacobian(e, q).determinant() > 0.0))
                    fail(ErrorKind::singular_element,
                         "QuadMesh: element " + std::to_string(e) + " has non-positive Jacobian");
        build_topology();
        build_search_grid();
    }

    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    int num_elements() const { return static_cast<int>(elements_.size()); }
    int num_dofs() const { return 2 * num_nodes(); }
    const std::vector<Vec2>& nodes() const { return nodes_; }
    const Vec2& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    const std::vector<Element>& elements() const { return elements_; }
    const Element& element(int e) const { return elements_[static_cast<std::size_t>(e)]; }
    const std::vector<InteriorEdge>& interior_edges() const { return interior_edges_; }
    const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_edges_; }
    const Vec2& bbox_min() const { return bbox_min_; }
    const Vec2& bbox_max() const { return bbox_max_; }

    Eigen::Matrix<double, 4, 2> element_coords(int e) const {
        Eigen::Matrix<double, 4, 2> c;
        const auto& el = element(e);
        for (int a = 0; a < 4; ++a)
            c.row(a) = node(el[a]).transpose();
        return c;
    }

    Vec2 map_to_global(int e, const Vec2& local) const {
        return element_coords(e).transpose() * shape_values(local);
    }

    /// d(x,y)/d(r,s); column k is the derivative with respect to local coordinate k.
    Mat2 jacobian(int e, const Vec2& local) const {
        return element_coords(e).transpose() * shape_local_gradients(local);
    }

    /// Rows are (dN_a/dx, dN_a/dy).
    ShapeGrad shape_gradients(int e, const Vec2& local) const {
        require(e >= 0 && e < num_elements(), "shape_gradients: element index out of range");
        const Mat2 jac = jacobian(e, local);
        const double det = jac.determinant();
        if (!(det > 1e-300))
            fail(ErrorKind::singular_element, "shape_gradients: degenerate Jacobian in element " + std::to_string(e));
        return shape_local_gradients(local) * jac.inverse();
    }

    double element_area(int e) const {
        double area = 0.0;
        const auto& q = gauss3x3();
        for (std::size_t k = 0; k < q.points.size(); ++k)
            area += q.weights[k] * jacobian(e, q.points[k]).determinant();
        return area;
    }

    double total_area() const {
        double area = 0.0;
        for (int e = 0; e < num_elements(); ++e)
            area += element_area(e);
        return area;
    }

    Vec2 element_center(int e) const { return map_to_global(e, Vec2::Zero()); }

    /// Newton inversion of the bilinear map of one element. Returns the local
    /// coordinates if the point lies inside (with a 1e-9 tolerance on [-1,1]^2).
    std::optional<Vec2> invert_in_element(int e, const Vec2& p) const {
        Vec2 local = Vec2::Zero();
        bool converged = false;
        for (int it = 0; it < 50; ++it) {
            const Vec2 r = map_to_global(e, local) - p;
            const Mat2 jac = jacobian(e, local);
            const Vec2 step = jac.partialPivLu().solve(r);
            local -= step;
            if (!local.allFinite() || local.cwiseAbs().maxCoeff() > 10.0)
                return std::nullopt;
            if (step.cwiseAbs().maxCoeff() < 1e-10) {
                converged = true;
                break;
            }
        }
        if (!converged)
            return std::nullopt;
        constexpr double tol = 1e-9;
        if (std::abs(local.x()) > 1.0 + tol || std::abs(local.y()) > 1.0 + tol)
            return std::nullopt;
        return local;
    }

    /// Element containing p (lowest index on shared edges) or nullopt if outside.
    std::optional<MeshLocation> inverse_map(const Vec2& p) const {
        const auto cell = grid_cell(p);
        if (!cell)
            return std::nullopt;
        for (int e : grid_[static_cast<std::size_t>(*cell)]) {
            const Vec2 lo = elem_min_[static_cast<std::size_t>(e)], hi = elem_max_[static_cast<std::size_t>(e)];
            constexpr double pad = 1e-9;
            if (p.x() < lo.x() - pad || p.x() > hi.x() + pad || p.y() < lo.y() - pad || p.y() > hi.y() + pad)
                continue;
            if (auto local = invert_in_element(e, p))
                return MeshLocation{e, *local};
        }
        return std::nullopt;
    }

    /// Closest point on the mesh boundary.
    Vec2 nearest_boundary_point(const Vec2& p) const {
        Vec2 best = node(boundary_edges_.front().nodes[0]);
        double best_d2 = std::numeric_limits<double>::infinity();
        for (const auto& be : boundary_edges_) {
            const Vec2 a = node(be.nodes[0]), b = node(be.nodes[1]);
            const Vec2 ab = b - a;
            const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
            const Vec2 q = a + t * ab;
            const double d2 = (q - p).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best = q;
            }
        }
        return best;
    }

    /// 64-bit FNV-1a over node coordinates and connectivity; identifies a mesh in result files.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](const void* data, std::size_t n) {
            const auto* bytes = static_cast<const unsigned char*>(data);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= bytes[i];
                h *= 1099511628211ULL;
            }
        };
        for (const auto& p : nodes_) {
            const double xy[2] = {p.x(), p.y()};
            mix(xy, sizeof xy);
        }
        for (const auto& e : elements_) {
            const std::int64_t idx[4] = {e[0], e[1], e[2], e[3]};
            mix(idx, sizeof idx);
        }
        return h;
    }

private:
    void build_topology() {
        std::map<std::pair<int, int>, std::vector<std::pair<int, int>>> edge_owners;
        for (int e = 0; e < num_elements(); ++e) {
            const auto& el = element(e);
            for (int side = 0; side < 4; ++side) {
                const int a = el[side], b = el[(side + 1) % 4];
                edge_owners[{std::min(a, b), std::max(a, b)}].emplace_back(e, side);
            }
        }
        for (const auto& [key, owners] : edge_owners) {
            if (owners.size() == 1) {
                const auto [e, side] = owners.front();
                const auto& el = element(e);
                boundary_edges_.push_back({{el[side], el[(side + 1) % 4]}, e, side});
            } else if (owners.size() == 2) {
                auto o = owners;
                std::sort(o.begin(), o.end());
                InteriorEdge edge;
                const auto& el = element(o[0].first);
                edge.nodes = {el[o[0].second], el[(o[0].second + 1) % 4]};
                edge.left = o[0].first;
                edge.left_side = o[0].second;
                edge.right = o[1].first;
                edge.right_side = o[1].second;
                const Vec2 t = node(edge.nodes[1]) - node(edge.nodes[0]);
                edge.length = t.norm();
                // Counter-clockwise traversal: the outward normal of the left element is (t_y, -t_x).
                edge.normal = Vec2(t.y(), -t.x()) / edge.length;
                interior_edges_.push_back(edge);
            } else {
                fail(ErrorKind::invalid_argument, "QuadMesh: edge shared by more than two elements");
            }
        }
        std::sort(interior_edges_.begin(), interior_edges_.end(), [](const auto& a, const auto& b) {
            return std::tie(a.left, a.left_side) < std::tie(b.left, b.left_side);
        });
        std::sort(boundary_edges_.begin(), boundary_edges_.end(), [](const auto& a, const auto& b) {
            return std::tie(a.element, a.side) < std::tie(b.element, b.side);
        });
    }

    void build_search_grid() {
        bbox_min_ = Vec2::Constant(std::numeric_limits<double>::infinity());
        bbox_max_ = -bbox_min_;
        elem_min_.resize(elements_.size());
        elem_max_.resize(elements_.size());
        double mean_size = 0.0;
        for (int e = 0; e < num_elements(); ++e) {
            const auto c = element_coords(e);
            elem_min_[static_cast<std::size_t>(e)] = c.colwise().minCoeff().transpose();
            elem_max_[static_cast<std::size_t>(e)] = c.colwise().maxCoeff().transpose();
            bbox_min_ = bbox_min_.cwiseMin(elem_min_[static_cast<std::size_t>(e)]);
            bbox_max_ = bbox_max_.cwiseMax(elem_max_[static_cast<std::size_t>(e)]);
            mean_size += (elem_max_[static_cast<std::size_t>(e)] - elem_min_[static_cast<std::size_t>(e)]).mean();
        }
        mean_size /= num_elements();
        const Vec2 extent = bbox_max_ - bbox_min_;
        grid_nx_ = std::clamp(static_cast<int>(std::ceil(extent.x() / mean_size)), 1, 4096);
        grid_ny_ = std::clamp(static_cast<int>(std::ceil(extent.y() / mean_size)), 1, 4096);
        cell_size_ = Vec2(std::max(extent.x(), 1e-300) / grid_nx_, std::max(extent.y(), 1e-300) / grid_ny_);
        grid_.assign(static_cast<std::size_t>(grid_nx_) * grid_ny_, {});
        for (int e = 0; e < num_elements(); ++e) {
            const auto lo = cell_index(elem_min_[static_cast<std::size_t>(e)] - Vec2::Constant(1e-9));
            const auto hi = cell_index(elem_max_[static_cast<std::size_t>(e)] + Vec2::Constant(1e-9));
            for (int j = lo.second; j <= hi.second; ++j)
                for (int i = lo.first; i <= hi.first; ++i)
                    grid_[static_cast<std::size_t>(j * grid_nx_ + i)].push_back(e);
        }
    }

    std::pair<int, int> cell_index(const Vec2& p) const {
        const int i = std::clamp(static_cast<int>(std::floor((p.x() - bbox_min_.x()) / cell_size_.x())), 0, grid_nx_ - 1);
        const int j = std::clamp(static_cast<int>(std::floor((p.y() - bbox_min_.y()) / cell_size_.y())), 0, grid_ny_ - 1);
        return {i, j};
    }

    std::optional<int> grid_cell(const Vec2& p) const {
        constexpr double pad = 1e-9;
        if (!p.allFinite() || p.x() < bbox_min_.x() - pad || p.y() < bbox_min_.y() - pad ||
            p.x() > bbox_max_.x() + pad || p.y() > bbox_max_.y() + pad)
            return std::nullopt;
        const auto [i, j] = cell_index(p);
        return j * grid_nx_ + i;
    }

    std::vector<Vec2> nodes_;
    std::vector<Element> elements_;
    std::vector<InteriorEdge> interior_edges_;
    std::vector<BoundaryEdge> boundary_edges_;
    Vec2 bbox_min_, bbox_max_;
    std::vector<Vec2> elem_min_, elem_max_;
    int grid_nx_ = 1, grid_ny_ = 1;
    Vec2 cell_size_ = Vec2::Ones();
    std::vector<std::vector<int>> grid_;
};

using MeshPtr = std::shared_ptr<const QuadMesh>;

/// Tensor-product mesh on the grid lines xs (axial) and ys (lateral), both strictly increasing.
/// Node (i, j) has index j * xs.size() + i.
inline QuadMesh build_tensor_mesh(std::span<const double> xs, std::span<const double> ys) {
    require(xs.size() >= 2 && ys.size() >= 2, "build_tensor_mesh: need at least two grid lines per axis");
    for (std::size_t i = 1; i < xs.size(); ++i)
        require(xs[i] > xs[i - 1], "build_tensor_mesh: x lines must increase");
    for (std::size_t j = 1; j < ys.size(); ++j)
        require(ys[j] > ys[j - 1], "build_tensor_mesh: y lines must increase");
    const int nx = static_cast<int>(xs.size()) - 1, ny = static_cast<int>(ys.size()) - 1;
    std::vector<Vec2> nodes;
    nodes.reserve(xs.size() * ys.size());
    for (double y : ys)
        for (double x : xs)
            nodes.emplace_back(x, y);
    std::vector<QuadMesh::Element> elements;
    elements.reserve(static_cast<std::size_t>(nx * ny));
    const auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            elements.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)});
    return QuadMesh(std::move(nodes), std::move(elements));
}

/// Uniform nx-by-ny mesh of the rectangle [origin, origin + (size_x, size_y)].
/// size_x runs along the axial direction, size_y along the lateral one.
inline QuadMesh build_structured_mesh(double size_x, double size_y, int nx, int ny, Vec2 origin = Vec2::Zero()) {
    require(size_x > 0 && size_y > 0, "build_structured_mesh: dimensions must be positive");
    require(nx >= 1 && ny >= 1, "build_structured_mesh: element counts must be >= 1");
    std::vector<double> xs(static_cast<std::size_t>(nx) + 1), ys(static_cast<std::size_t>(ny) + 1);
    for (int i = 0; i <= nx; ++i)
        xs[static_cast<std::size_t>(i)] = origin.x() + size_x * i / nx;
    for (int j = 0; j <= ny; ++j)
        ys[static_cast<std::size_t>(j)] = origin.y() + size_y * j / ny;
    return build_tensor_mesh(xs, ys);
}

/// Vector-valued nodal field (interleaved components).
struct NodalField {
    MeshPtr mesh;
    Eigen::VectorXd values;

    NodalField() = default;
    explicit NodalField(MeshPtr m) : mesh(std::move(m)), values(Eigen::VectorXd::Zero(mesh->num_dofs())) {}
    NodalField(MeshPtr m, Eigen::VectorXd v) : mesh(std::move(m)), values(std::move(v)) {
        require(values.size() == mesh->num_dofs(), "NodalField: value count must be 2 * node count");
    }

    static NodalField constant(MeshPtr m, const Vec2& c) {
        NodalField f(std::move(m));
        for (int n = 0; n < f.mesh->num_nodes(); ++n)
            f.set(n, c);
        return f;
    }

    template <class Fn>
    static NodalField from_function(MeshPtr m, Fn&& fn) {
        NodalField f(std::move(m));
        for (int n = 0; n < f.mesh->num_nodes(); ++n)
            f.set(n, fn(f.mesh->node(n)));
        return f;
    }

    Vec2 at(int node) const { return values.segment<2>(2 * node); }
    void set(int node, const Vec2& v) { values.segment<2>(2 * node) = v; }

    /// Element dof vector ordered [ux0, uy0, ..., ux3, uy3].
    Eigen::Matrix<double, 8, 1> element_dofs(int e) const {
        Eigen::Matrix<double, 8, 1> d;
        const auto& el = mesh->element(e);
        for (int a = 0; a < 4; ++a)
            d.segment<2>(2 * a) = at(el[a]);
        return d;
    }

    Vec2 evaluate(const MeshLocation& loc) const {
        const Eigen::Vector4d n = shape_values(loc.local);
        const auto& el = mesh->element(loc.element);
        Vec2 v = Vec2::Zero();
        for (int a = 0; a < 4; ++a)
            v += n[a] * at(el[a]);
        return v;
    }

    /// Displacement gradient du_i/dx_j at a local point.
    Mat2 gradient(int e, const Vec2& local) const {
        const ShapeGrad g = mesh->shape_gradients(e, local);
        const auto& el = mesh->element(e);
        Mat2 du = Mat2::Zero();
        for (int a = 0; a < 4; ++a)
            du += at(el[a]) * g.row(a);
        return du;
    }
};

inline std::vector<Vec2> interpolate_field(const NodalField& field, std::span<const Vec2> points,
                                           const Vec2& outside_value) {
    std::vector<Vec2> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        if (auto loc = field.mesh->inverse_map(p))
            out.push_back(field.evaluate(*loc));
        else
            out.push_back(outside_value);
    }
    return out;
}

/// Field value at p; points outside the mesh take the value at the nearest boundary point.
inline Vec2 evaluate_clamped(const NodalField& field, const Vec2& p) {
    if (auto loc = field.mesh->inverse_map(p))
        return field.evaluate(*loc);
    const Vec2 q = field.mesh->nearest_boundary_point(p);
    if (auto loc = field.mesh->inverse_map(q))
        return field.evaluate(*loc);
    fail(ErrorKind::invalid_argument, "evaluate_clamped: boundary projection left the mesh");
}

/// Samples a field given on one mesh at the nodes of another (clamped outside).
inline NodalField transfer_field(const NodalField& field, MeshPtr target) {
    NodalField out(std::move(target));
    for (int n = 0; n < out.mesh->num_nodes(); ++n)
        out.set(n, evaluate_clamped(field, out.mesh->node(n)));
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: "quadmesh v1" text format.
//
//   quadmesh v1
//   nodes <N>
//   <x> <y>            (N lines, 17 significant digits)
//   elements <M>
//   <n0> <n1> <n2> <n3> (M lines, counter-clockwise)
// ---------------------------------------------------------------------------

inline void write_mesh(std::ostream& os, const QuadMesh& mesh) {
    os << "quadmesh v1\n";
    os << "nodes " << mesh.num_nodes() << "\n";
    os << std::setprecision(17);
    for (const auto& p : mesh.nodes())
        os << p.x() << ' ' << p.y() << '\n';
    os << "elements " << mesh.num_elements() << "\n";
    for (const auto& e : mesh.elements())
        os << e[0] << ' ' << e[1] << ' ' << e[2] << ' ' << e[3] << '\n';
}

inline QuadMesh read_mesh(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "quadmesh v1")
        fail(ErrorKind::io, "read_mesh: missing 'quadmesh v1' header");
    std::string tag;
    std::size_t count = 0;
    if (!(is >> tag >> count) || tag != "nodes")
        fail(ErrorKind::io, "read_mesh: expected node block");
    std::vector<Vec2> nodes(count);
    for (auto& p : nodes)
        if (!(is >> p.x() >> p.y()))
            fail(ErrorKind::io, "read_mesh: truncated node block");
    if (!(is >> tag >> count) || tag != "elements")
        fail(ErrorKind::io, "read_mesh: expected element block");
    std::vector<QuadMesh::Element> elements(count);
    for (auto& e : elements)
        if (!(is >> e[0] >> e[1] >> e[2] >> e[3]))
            fail(ErrorKind::io, "read_mesh: truncated element block");
    return QuadMesh(std::move(nodes), std::move(elements));
}

inline void save_mesh(const std::string& path, const QuadMesh& mesh) {
    std::ofstream os(path);
    if (!os)
        fail(ErrorKind::io, "cannot write " + path);
    write_mesh(os, mesh);
}

inline QuadMesh load_mesh(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        fail(ErrorKind::not_found, "mesh file not found: " + path);
    return read_mesh(is);
}

} // namespace elastoreg
