#pragma once

// Gauss-Newton registration of RF frames on a bilinear quad mesh.
//
// The matching term is the pixel-midpoint sum
//   psi(u) = 1/2 sum_p a_p (I2(x_p + S(x_p) + u(x_p)) - I1(x_p + S(x_p)))^2
// over pixels whose centers lie in the mesh (a_p the pixel area, S an
// accumulated warp, zero for a plain pair). Derivatives use the gradient of
// I1 at the reference positions in place of that of the warped I2, so the
// matching Hessian is constant and assembled once per pair.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "elastoreg/blockmatch.hpp"
#include "elastoreg/error.hpp"
#include "elastoreg/image.hpp"
#include "elastoreg/mesh.hpp"
#include "elastoreg/regularizers.hpp"

namespace elastoreg {

struct MatchEval {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::SparseMatrix<double> gn_hessian;
};

enum class GradientMode {
    frozen, // reference-image gradient (the Gauss-Newton model)
    exact,  // gradient of the warped interpolant; derivative of psi itself
};

class ImageMatch {
public:
    ImageMatch(const RfImage& reference, const RfImage& target, MeshPtr mesh,
               const std::optional<NodalField>& accumulated = std::nullopt)
        : target_(target), mesh_(std::move(mesh)), interp_(target_) {
        require(reference.same_geometry(target), "eval_match: images must share geometry");
        const Vec2 lo = reference.extent_min(), hi = reference.extent_max();
        const double slack = 1e-9 * (hi - lo).norm();
        require(mesh_->bbox_min().x() >= lo.x() - slack && mesh_->bbox_min().y() >= lo.y() - slack &&
                    mesh_->bbox_max().x() <= hi.x() + slack && mesh_->bbox_max().y() <= hi.y() + slack,
                "eval_match: mesh extends outside the image");
        if (accumulated)
            require(accumulated->mesh->hash() == mesh_->hash(), "eval_match: accumulated warp lives on another mesh");

        // With an accumulated warp S the quadrature points are the pixel centers
        // y of the reference frame, pulled back through the deformed mesh
        // (nodes + S) to their element and local coordinates, and weighted by
        // 1 / det(I + grad S). The reference is then read on its own grid:
        // interpolating it at x + S would correlate interpolated noise with its
        // gradient and bias the estimate.
        const CubicInterpolator ref(reference);
        const double pixel_area = reference.axial_spacing * reference.lateral_spacing;
        std::optional<QuadMesh> deformed;
        if (accumulated) {
            std::vector<Vec2> nodes = mesh_->nodes();
            for (int n = 0; n < mesh_->num_nodes(); ++n)
                nodes[static_cast<std::size_t>(n)] += accumulated->at(n);
            try {
                deformed.emplace(std::move(nodes), mesh_->elements());
            } catch (const Error& e) {
                fail(e.kind(), std::string("eval_match: accumulated warp folds the mesh: ") + e.what());
            }
            require(deformed->bbox_min().x() >= lo.x() - slack && deformed->bbox_min().y() >= lo.y() - slack &&
                        deformed->bbox_max().x() <= hi.x() + slack && deformed->bbox_max().y() <= hi.y() + slack,
                    "eval_match: warped mesh extends outside the image");
        }
        const QuadMesh& sampled = deformed ? *deformed : *mesh_;
        const Vec2 a = reference.to_index(sampled.bbox_min()), b = reference.to_index(sampled.bbox_max());
        const int i0 = std::max(0, static_cast<int>(std::floor(a.x()))), i1 = std::min(reference.rows() - 1, static_cast<int>(std::ceil(b.x())));
        const int j0 = std::max(0, static_cast<int>(std::floor(a.y()))), j1 = std::min(reference.cols() - 1, static_cast<int>(std::ceil(b.y())));
        for (int j = j0; j <= j1; ++j)
            for (int i = i0; i <= i1; ++i) {
                const Vec2 y = reference.position(i, j);
                const auto loc = sampled.inverse_map(y);
                if (!loc)
                    continue;
                Pixel px;
                px.element = loc->element;
                px.n = shape_values(loc->local);
                px.base = y;
                px.weight = pixel_area;
                if (accumulated)
                    px.weight /= (Mat2::Identity() + accumulated->gradient(loc->element, loc->local)).determinant();
                const SampleWithGradient s = ref.value_and_gradient(y);
                px.ref = s.value;
                px.grad = s.gradient;
                pixels_.push_back(px);
            }
        require(!pixels_.empty(), "eval_match: no pixel centers inside the mesh");
        assemble_hessian();
    }

    ImageMatch(const ImageMatch&) = delete;
    ImageMatch& operator=(const ImageMatch&) = delete;

    MeshPtr mesh() const { return mesh_; }
    std::size_t num_pixels() const { return pixels_.size(); }
    const Eigen::SparseMatrix<double>& hessian() const { return hessian_; }

    double value(const Eigen::VectorXd& u) const {
        double v = 0.0;
        for (const Pixel& px : pixels_) {
            const double r = interp_.value(px.base + displacement(px, u)) - px.ref;
            v += px.weight * r * r;
        }
        return 0.5 * v;
    }

    MatchEval evaluate(const Eigen::VectorXd& u, GradientMode mode = GradientMode::frozen) const {
        require(u.size() == mesh_->num_dofs(), "eval_match: field size does not match the mesh");
        MatchEval out;
        out.gradient = Eigen::VectorXd::Zero(u.size());
        for (const Pixel& px : pixels_) {
            const Vec2 p = px.base + displacement(px, u);
            double warped;
            Vec2 g = px.grad;
            if (mode == GradientMode::exact) {
                const SampleWithGradient s = interp_.value_and_gradient(p);
                warped = s.value;
                g = s.gradient;
            } else {
                warped = interp_.value(p);
            }
            const double r = warped - px.ref;
            out.value += px.weight * r * r;
            const auto& el = mesh_->element(px.element);
            const Vec2 rg = (px.weight * r) * g;
            for (int a = 0; a < 4; ++a)
                out.gradient.segment<2>(2 * el[a]) += px.n[a] * rg;
        }
        out.value *= 0.5;
        out.gn_hessian = hessian_;
        return out;
    }

private:
    struct Pixel {
        int element = 0;
        Eigen::Vector4d n;
        Vec2 base;        // x + S(x), a pixel center of the reference
        double weight = 0; // quadrature weight in the undeformed frame
        double ref = 0;    // I1 at base
        Vec2 grad;        // grad I1 at base
    };

    Vec2 displacement(const Pixel& px, const Eigen::VectorXd& u) const {
        const auto& el = mesh_->element(px.element);
        Vec2 d = Vec2::Zero();
        for (int a = 0; a < 4; ++a)
            d += px.n[a] * u.segment<2>(2 * el[a]);
        return d;
    }

    void assemble_hessian() {
        std::vector<Eigen::Matrix<double, 8, 8>> blocks(static_cast<std::size_t>(mesh_->num_elements()),
                                                        Eigen::Matrix<double, 8, 8>::Zero());
        for (const Pixel& px : pixels_) {
            const Mat2 gg = px.weight * px.grad * px.grad.transpose();
            auto& k = blocks[static_cast<std::size_t>(px.element)];
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b)
                    k.block<2, 2>(2 * a, 2 * b) += (px.n[a] * px.n[b]) * gg;
        }
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(blocks.size() * 64);
        for (int e = 0; e < mesh_->num_elements(); ++e) {
            const auto& el = mesh_->element(e);
            const auto& k = blocks[static_cast<std::size_t>(e)];
            for (int a = 0; a < 8; ++a)
                for (int b = 0; b < 8; ++b)
                    trips.emplace_back(2 * el[a / 2] + a % 2, 2 * el[b / 2] + b % 2, k(a, b));
        }
        hessian_.resize(mesh_->num_dofs(), mesh_->num_dofs());
        hessian_.setFromTriplets(trips.begin(), trips.end());
    }

    RfImage target_;
    MeshPtr mesh_;
    CubicInterpolator interp_;
    std::vector<Pixel> pixels_;
    Eigen::SparseMatrix<double> hessian_;
};

inline MatchEval eval_match(const RfImage& i1, const RfImage& i2, const NodalField& u,
                            GradientMode mode = GradientMode::frozen) {
    return ImageMatch(i1, i2, u.mesh).evaluate(u.values, mode);
}

struct SolverOptions {
    int max_iterations = 20;
    double step_tolerance = 1e-3;

    void validate() const {
        require(max_iterations >= 1, "SolverOptions: max_iterations must be >= 1");
        require(step_tolerance > 0.0, "SolverOptions: step_tolerance must be positive");
    }
};

struct SolveReport {
    int iterations = 0;
    double final_step_ratio = 0.0;
    std::vector<double> objective_trace; // before each update, plus the final value
    std::vector<double> step_ratios;
    bool converged = false;
    bool objective_increased = false;
};

/// Relative step |du| / |u|; zero when both vanish.
inline double step_ratio(const Eigen::VectorXd& du, const Eigen::VectorXd& u) {
    const double nd = du.norm(), nu = u.norm();
    if (nd == 0.0)
        return 0.0;
    return nu == 0.0 ? std::numeric_limits<double>::infinity() : nd / nu;
}

struct PairResult {
    NodalField u;
    SolveReport report;
};

/// Full-step Gauss-Newton: (H_psi + H_R) du = -(g_psi + g_R), u += du.
inline PairResult register_pair(const ImageMatch& match, const NodalField& init, const RegularizerSpec& spec,
                                const SolverOptions& options = {}) {
    options.validate();
    require(init.mesh->hash() == match.mesh()->hash(), "register_pair: initial field lives on another mesh");
    const Regularizer reg(spec, *match.mesh());
    PairResult out{init, {}};
    Eigen::VectorXd& u = out.u.values;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    bool analyzed = false;
    for (int it = 1; it <= options.max_iterations; ++it) {
        const MatchEval m = match.evaluate(u);
        const RegEval r = reg.evaluate(u);
        const double objective = m.value + r.value;
        if (!std::isfinite(objective) || !m.gradient.allFinite() || !r.gradient.allFinite())
            fail(ErrorKind::divergence, "register_pair: non-finite objective at iteration " + std::to_string(it));
        if (!out.report.objective_trace.empty() && objective > out.report.objective_trace.back())
            out.report.objective_increased = true;
        out.report.objective_trace.push_back(objective);

        const Eigen::SparseMatrix<double> h = m.gn_hessian + r.gn_hessian;
        if (!analyzed) {
            solver.analyzePattern(h);
            analyzed = true;
        }
        solver.factorize(h);
        if (solver.info() != Eigen::Success)
            fail(ErrorKind::regularization_too_weak, "register_pair: factorization of the Gauss-Newton system failed");
        const Eigen::VectorXd d = solver.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        if (!(d.minCoeff() > 1e-14 * dmax))
            fail(ErrorKind::regularization_too_weak,
                 "register_pair: singular Gauss-Newton system (smallest pivot " + std::to_string(d.minCoeff()) +
                     ", largest " + std::to_string(dmax) + ")");
        const Eigen::VectorXd du = solver.solve(-(m.gradient + r.gradient));
        if (!du.allFinite())
            fail(ErrorKind::divergence, "register_pair: non-finite update at iteration " + std::to_string(it));
        u += du;
        const double ratio = step_ratio(du, u);
        out.report.iterations = it;
        out.report.final_step_ratio = ratio;
        out.report.step_ratios.push_back(ratio);
        if (ratio < options.step_tolerance) {
            out.report.converged = true;
            break;
        }
    }
    const double final_objective = match.value(u) + reg.value(u);
    if (!std::isfinite(final_objective))
        fail(ErrorKind::divergence, "register_pair: non-finite objective after iteration " +
                                        std::to_string(out.report.iterations));
    if (final_objective > out.report.objective_trace.back())
        out.report.objective_increased = true;
    out.report.objective_trace.push_back(final_objective);
    return out;
}

inline PairResult register_pair(const RfImage& i1, const RfImage& i2, const NodalField& init,
                                const RegularizerSpec& spec, const SolverOptions& options = {}) {
    return register_pair(ImageMatch(i1, i2, init.mesh), init, spec, options);
}

enum class InitPolicy {
    zero,
    block_match,        // block matching for every increment
    previous_increment, // block matching for the first increment, then the previous increment
};

inline InitPolicy parse_init_policy(std::string_view s) {
    if (s == "zero")
        return InitPolicy::zero;
    if (s == "block_match")
        return InitPolicy::block_match;
    if (s == "previous_increment")
        return InitPolicy::previous_increment;
    fail(ErrorKind::invalid_argument, "unknown init policy '" + std::string(s) + "'");
}

inline std::string_view to_string(InitPolicy p) {
    switch (p) {
    case InitPolicy::zero: return "zero";
    case InitPolicy::block_match: return "block_match";
    case InitPolicy::previous_increment: return "previous_increment";
    }
    return "?";
}

struct SequenceOptions {
    InitPolicy init = InitPolicy::previous_increment;
    BlockMatchConfig block_match;
    SolverOptions solver;
};

struct SequenceResult {
    std::vector<NodalField> increments;  // u_k: frame k -> k+1
    std::vector<NodalField> accumulated; // S_k, S_0 = 0
    std::vector<SolveReport> reports;
};

/// Block-match estimate for frame k -> k+1, sampled where the mesh nodes sit in frame k.
inline NodalField block_match_guess(const RfImage& ik, const RfImage& ik1, const NodalField& s_k,
                                    const BlockMatchConfig& cfg) {
    const CoarseDisplacementGrid grid = block_match(ik, ik1, cfg);
    NodalField out(s_k.mesh);
    for (int n = 0; n < out.mesh->num_nodes(); ++n)
        out.set(n, sample_grid(grid, out.mesh->node(n) + s_k.at(n)));
    return out;
}

inline SequenceResult register_sequence(const std::vector<RfImage>& frames, const RegularizerSpec& spec, MeshPtr mesh,
                                        const SequenceOptions& options = {}) {
    require(frames.size() >= 2, "register_sequence: need at least two frames");
    SequenceResult out;
    out.accumulated.emplace_back(mesh);
    for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        const NodalField& s_k = out.accumulated.back();
        NodalField init(mesh);
        const bool match_now = options.init == InitPolicy::block_match ||
                               (options.init == InitPolicy::previous_increment && k == 0);
        if (match_now)
            init = block_match_guess(frames[k], frames[k + 1], s_k, options.block_match);
        else if (options.init == InitPolicy::previous_increment)
            init = out.increments.back();
        const std::optional<NodalField> warp = k == 0 ? std::nullopt : std::optional<NodalField>(s_k);
        PairResult r;
        try {
            const ImageMatch match(frames[k], frames[k + 1], mesh, warp);
            r = register_pair(match, init, spec, options.solver);
        } catch (const Error& e) {
            fail(e.kind(), "frame " + std::to_string(k) + "->" + std::to_string(k + 1) + ": " + e.what());
        }
        out.accumulated.emplace_back(mesh, Eigen::VectorXd(s_k.values + r.u.values));
        out.increments.push_back(std::move(r.u));
        out.reports.push_back(std::move(r.report));
    }
    return out;
}

} // namespace elastoreg
