#pragma once

// Sampled RF images, Keys cubic-convolution interpolation and the
// "rfimg v1" file format.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <string>

#include <Eigen/Dense>

#include "elastoreg/error.hpp"
#include "elastoreg/mesh.hpp"

namespace elastoreg {

/// Samples are stored rows = axial samples, cols = scan lines.
/// Sample (i, j) sits at origin + (i * axial_spacing, j * lateral_spacing).
struct RfImage {
    Eigen::MatrixXd samples;
    double axial_spacing = 1.0;   // mm
    double lateral_spacing = 1.0; // mm
    Vec2 origin = Vec2::Zero();   // mm

    RfImage() = default;
    RfImage(int rows, int cols, double dx, double dy, Vec2 o = Vec2::Zero())
        : samples(Eigen::MatrixXd::Zero(rows, cols)), axial_spacing(dx), lateral_spacing(dy), origin(std::move(o)) {
        require(rows > 0 && cols > 0, "RfImage: dimensions must be positive");
        require(dx > 0 && dy > 0, "RfImage: spacings must be positive");
    }

    int rows() const { return static_cast<int>(samples.rows()); }
    int cols() const { return static_cast<int>(samples.cols()); }
    Vec2 position(int i, int j) const { return origin + Vec2(i * axial_spacing, j * lateral_spacing); }
    Vec2 extent_min() const { return origin; }
    Vec2 extent_max() const { return position(rows() - 1, cols() - 1); }

    /// Fractional sample index of a physical position.
    Vec2 to_index(const Vec2& p) const {
        return {(p.x() - origin.x()) / axial_spacing, (p.y() - origin.y()) / lateral_spacing};
    }

    bool same_geometry(const RfImage& o) const {
        return rows() == o.rows() && cols() == o.cols() && axial_spacing == o.axial_spacing &&
               lateral_spacing == o.lateral_spacing && origin == o.origin;
    }

    double at_or_zero(int i, int j) const {
        if (i < 0 || j < 0 || i >= rows() || j >= cols())
            return 0.0;
        return samples(i, j);
    }
};

namespace detail {

// Keys kernel with a = -0.5.
inline double keys_weight(double s) {
    s = std::abs(s);
    if (s < 1.0)
        return (1.5 * s - 2.5) * s * s + 1.0;
    if (s < 2.0)
        return ((-0.5 * s + 2.5) * s - 4.0) * s + 2.0;
    return 0.0;
}

inline double keys_derivative(double s) {
    const double sign = s < 0 ? -1.0 : 1.0;
    s = std::abs(s);
    if (s < 1.0)
        return sign * (4.5 * s - 5.0) * s;
    if (s < 2.0)
        return sign * ((-1.5 * s + 5.0) * s - 4.0);
    return 0.0;
}

} // namespace detail

struct SampleWithGradient {
    double value = 0.0;
    Vec2 gradient = Vec2::Zero(); // per mm
};

/// Cubic-convolution interpolation (Keys, a = -0.5). Positions outside the
/// sampled extent evaluate to 0; stencils reaching past the border see zeros.
class CubicInterpolator {
public:
    explicit CubicInterpolator(const RfImage& image) : image_(&image) {}

    bool inside(const Vec2& p) const {
        const Vec2 f = image_->to_index(p);
        return f.x() >= 0.0 && f.y() >= 0.0 && f.x() <= image_->rows() - 1 && f.y() <= image_->cols() - 1;
    }

    double value(const Vec2& p) const { return evaluate(p, false).value; }

    /// Value and spatial gradient of the interpolant.
    SampleWithGradient value_and_gradient(const Vec2& p) const { return evaluate(p, true); }

private:
    SampleWithGradient evaluate(const Vec2& p, bool with_gradient) const {
        SampleWithGradient out;
        if (!inside(p))
            return out;
        const Vec2 f = image_->to_index(p);
        const int i0 = static_cast<int>(std::floor(f.x()));
        const int j0 = static_cast<int>(std::floor(f.y()));
        double wx[4], wy[4], dx[4] = {0, 0, 0, 0}, dy[4] = {0, 0, 0, 0};
        for (int k = 0; k < 4; ++k) {
            const double sx = f.x() - (i0 - 1 + k), sy = f.y() - (j0 - 1 + k);
            wx[k] = detail::keys_weight(sx);
            wy[k] = detail::keys_weight(sy);
            if (with_gradient) {
                dx[k] = detail::keys_derivative(sx);
                dy[k] = detail::keys_derivative(sy);
            }
        }
        const auto& s = image_->samples;
        const bool interior = i0 >= 1 && j0 >= 1 && i0 + 2 < image_->rows() && j0 + 2 < image_->cols();
        for (int b = 0; b < 4; ++b) {
            double col = 0.0, dcol = 0.0;
            for (int a = 0; a < 4; ++a) {
                const double v = interior ? s(i0 - 1 + a, j0 - 1 + b) : image_->at_or_zero(i0 - 1 + a, j0 - 1 + b);
                col += wx[a] * v;
                dcol += dx[a] * v;
            }
            out.value += wy[b] * col;
            if (with_gradient) {
                out.gradient.x() += wy[b] * dcol;
                out.gradient.y() += dy[b] * col;
            }
        }
        out.gradient.x() /= image_->axial_spacing;
        out.gradient.y() /= image_->lateral_spacing;
        return out;
    }

    const RfImage* image_;
};

// ---------------------------------------------------------------------------
// "rfimg v1" binary format (native little-endian):
//   bytes "rfimg v1\n"
//   uint64 rows, uint64 cols
//   float64 axial_spacing, lateral_spacing, origin_x, origin_y
//   rows*cols float64 samples, row-major (axial sample index slowest)
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        fail(ErrorKind::io, "truncated " + what);
    return v;
}

inline void expect_magic(std::istream& is, const std::string& magic, const std::string& path) {
    std::string head(magic.size(), '\0');
    if (!is.read(head.data(), static_cast<std::streamsize>(head.size())) || head != magic)
        fail(ErrorKind::io, "bad header in " + path + " (expected '" + magic.substr(0, magic.size() - 1) + "')");
}

} // namespace detail

inline void write_rfimg(std::ostream& os, const RfImage& img) {
    os.write("rfimg v1\n", 9);
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(img.rows()));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(img.cols()));
    detail::write_pod(os, img.axial_spacing);
    detail::write_pod(os, img.lateral_spacing);
    detail::write_pod(os, img.origin.x());
    detail::write_pod(os, img.origin.y());
    for (int i = 0; i < img.rows(); ++i)
        for (int j = 0; j < img.cols(); ++j)
            detail::write_pod(os, img.samples(i, j));
}

inline RfImage read_rfimg(std::istream& is, const std::string& name = "rfimg stream") {
    detail::expect_magic(is, "rfimg v1\n", name);
    const auto rows = detail::read_pod<std::uint64_t>(is, name);
    const auto cols = detail::read_pod<std::uint64_t>(is, name);
    const auto dx = detail::read_pod<double>(is, name);
    const auto dy = detail::read_pod<double>(is, name);
    const auto ox = detail::read_pod<double>(is, name);
    const auto oy = detail::read_pod<double>(is, name);
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24))
        fail(ErrorKind::io, "implausible dimensions in " + name);
    RfImage img(static_cast<int>(rows), static_cast<int>(cols), dx, dy, Vec2(ox, oy));
    for (int i = 0; i < img.rows(); ++i)
        for (int j = 0; j < img.cols(); ++j)
            img.samples(i, j) = detail::read_pod<double>(is, name);
    return img;
}

inline void save_rfimg(const std::string& path, const RfImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        fail(ErrorKind::io, "cannot write " + path);
    write_rfimg(os, img);
}

inline RfImage load_rfimg(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        fail(ErrorKind::not_found, "rf image not found: " + path);
    return read_rfimg(is, path);
}

/// CSV export (one row per axial sample); intended for small images.
inline void write_rf_csv(std::ostream& os, const RfImage& img) {
    os << std::setprecision(17);
    for (int i = 0; i < img.rows(); ++i) {
        for (int j = 0; j < img.cols(); ++j)
            os << (j ? "," : "") << img.samples(i, j);
        os << '\n';
    }
}

} // namespace elastoreg
