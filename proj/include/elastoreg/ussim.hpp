#pragma once

// Synthetic RF frames: point scatterers convolved with a separable,
// spatially invariant PSF, displaced by known fields, plus Gaussian noise.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "elastoreg/geometry.hpp"
#include "elastoreg/image.hpp"
#include "elastoreg/mesh.hpp"

namespace elastoreg {

constexpr double fwhm_to_sigma = 2.355;

struct ScattererField {
    std::vector<Vec2> positions;
    std::vector<double> amplitudes;

    std::size_t size() const { return positions.size(); }
};

/// Pulse-echo PSF. Axially a Gaussian-enveloped cosine in round-trip time
/// (sigma = pulse_length / 2.355), laterally a Gaussian (sigma = FWHM / 2.355).
struct Psf {
    double center_frequency_mhz = 5.5;
    double pulse_length_us = 0.43;
    double lateral_fwhm_mm = 1.4;
    double sound_speed_m_s = 1540.0;

    void validate() const {
        require(center_frequency_mhz > 0 && pulse_length_us > 0 && lateral_fwhm_mm > 0 && sound_speed_m_s > 0,
                "Psf: all parameters must be positive");
    }

    double speed_mm_per_us() const { return sound_speed_m_s * 1e-3; }
    double sigma_time_us() const { return pulse_length_us / fwhm_to_sigma; }
    /// Axial standard deviation of the envelope in depth units (mm).
    double sigma_axial_mm() const { return 0.5 * speed_mm_per_us() * sigma_time_us(); }
    double sigma_lateral_mm() const { return lateral_fwhm_mm / fwhm_to_sigma; }
    /// Axial carrier period in depth units (mm).
    double axial_period_mm() const { return speed_mm_per_us() / (2.0 * center_frequency_mhz); }

    double axial(double dx_mm) const {
        const double t = 2.0 * dx_mm / speed_mm_per_us();
        const double s = sigma_time_us();
        return std::cos(2.0 * std::numbers::pi * center_frequency_mhz * t) * std::exp(-t * t / (2.0 * s * s));
    }
    double lateral(double dy_mm) const {
        const double s = sigma_lateral_mm();
        return std::exp(-dy_mm * dy_mm / (2.0 * s * s));
    }
    double operator()(const Vec2& d) const { return axial(d.x()) * lateral(d.y()); }
};

/// Sampling geometry of an RF frame.
struct ImageGrid {
    int rows = 0;
    int cols = 0;
    double axial_spacing = 0.0;
    double lateral_spacing = 0.0;
    Vec2 origin = Vec2::Zero();

    RfImage blank() const { return RfImage(rows, cols, axial_spacing, lateral_spacing, origin); }

    /// Grid covering `window`, with axial spacing c / (2 fs).
    static ImageGrid covering(const Rect& window, double sampling_mhz, double sound_speed_m_s,
                              double lateral_spacing_mm) {
        require(!window.empty(), "ImageGrid: empty window");
        require(sampling_mhz > 0 && sound_speed_m_s > 0 && lateral_spacing_mm > 0,
                "ImageGrid: sampling parameters must be positive");
        ImageGrid g;
        g.axial_spacing = sound_speed_m_s * 1e-3 / (2.0 * sampling_mhz);
        g.lateral_spacing = lateral_spacing_mm;
        g.origin = window.min;
        g.rows = static_cast<int>(std::floor(window.size().x() / g.axial_spacing + 1e-9)) + 1;
        g.cols = static_cast<int>(std::floor(window.size().y() / g.lateral_spacing + 1e-9)) + 1;
        return g;
    }
};

/// Uniform scatterers, count = round(density * area), amplitudes uniform on
/// [0, 1); amplitudes inside the inclusion are multiplied by inclusion_gain.
inline ScattererField gen_scatterers(const Rect& region, double density_per_mm2, const std::optional<Disk>& inclusion,
                                     double inclusion_gain, std::uint64_t seed) {
    require(!region.empty(), "gen_scatterers: empty region");
    require(density_per_mm2 > 0, "gen_scatterers: density must be positive");
    const auto count = static_cast<std::size_t>(std::llround(density_per_mm2 * region.area()));
    Random rng(seed);
    ScattererField field;
    field.positions.reserve(count);
    field.amplitudes.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double x = rng.uniform(region.min.x(), region.max.x());
        const double y = rng.uniform(region.min.y(), region.max.y());
        double a = rng.uniform();
        if (inclusion && inclusion->contains({x, y}))
            a *= inclusion_gain;
        field.positions.emplace_back(x, y);
        field.amplitudes.push_back(a);
    }
    return field;
}

/// Splats amplitude * PSF(x - position) for each scatterer; kernel truncated at +-3 sigma.
inline RfImage render_rf(const ScattererField& scatterers, const Psf& psf, const ImageGrid& grid) {
    psf.validate();
    require(grid.axial_spacing > 0 && grid.lateral_spacing > 0 && grid.rows > 0 && grid.cols > 0,
            "render_rf: grid spacings and sizes must be positive");
    require(psf.axial_period_mm() >= 4.0 * grid.axial_spacing,
            "render_rf: axial sampling must give at least 4 samples per carrier period");
    RfImage img = grid.blank();
    const double reach_x = 3.0 * psf.sigma_axial_mm();
    const double reach_y = 3.0 * psf.sigma_lateral_mm();
    std::vector<double> wx, wy;
    for (std::size_t k = 0; k < scatterers.size(); ++k) {
        const Vec2& p = scatterers.positions[k];
        const double amp = scatterers.amplitudes[k];
        const int i_lo = std::max(0, static_cast<int>(std::ceil((p.x() - reach_x - grid.origin.x()) / grid.axial_spacing)));
        const int i_hi = std::min(grid.rows - 1,
                                  static_cast<int>(std::floor((p.x() + reach_x - grid.origin.x()) / grid.axial_spacing)));
        const int j_lo = std::max(0, static_cast<int>(std::ceil((p.y() - reach_y - grid.origin.y()) / grid.lateral_spacing)));
        const int j_hi = std::min(grid.cols - 1,
                                  static_cast<int>(std::floor((p.y() + reach_y - grid.origin.y()) / grid.lateral_spacing)));
        if (i_lo > i_hi || j_lo > j_hi)
            continue;
        wx.resize(static_cast<std::size_t>(i_hi - i_lo + 1));
        wy.resize(static_cast<std::size_t>(j_hi - j_lo + 1));
        for (int i = i_lo; i <= i_hi; ++i)
            wx[static_cast<std::size_t>(i - i_lo)] = amp * psf.axial(grid.origin.x() + i * grid.axial_spacing - p.x());
        for (int j = j_lo; j <= j_hi; ++j)
            wy[static_cast<std::size_t>(j - j_lo)] = psf.lateral(grid.origin.y() + j * grid.lateral_spacing - p.y());
        for (int j = j_lo; j <= j_hi; ++j) {
            const double w = wy[static_cast<std::size_t>(j - j_lo)];
            for (int i = i_lo; i <= i_hi; ++i)
                img.samples(i, j) += wx[static_cast<std::size_t>(i - i_lo)] * w;
        }
    }
    return img;
}

/// Moves each scatterer by the interpolated displacement; scatterers outside
/// the mesh use the value at the nearest mesh boundary point.
inline ScattererField displace_scatterers(const ScattererField& scatterers, const NodalField& displacement) {
    ScattererField out = scatterers;
    for (auto& p : out.positions)
        p += evaluate_clamped(displacement, p);
    return out;
}

inline double signal_power(const RfImage& image) { return image.samples.squaredNorm() / image.samples.size(); }

/// Adds N(0, P_signal / 10^(snr_db/10)) noise, P_signal the mean square over the
/// whole image. snr_db = +infinity leaves the image unchanged.
inline RfImage add_noise(const RfImage& image, double snr_db, std::uint64_t seed) {
    if (std::isinf(snr_db) && snr_db > 0)
        return image;
    require(std::isfinite(snr_db), "add_noise: snr must be finite or +infinity");
    const double power = signal_power(image);
    require(power > 0.0, "add_noise: all-zero image has undefined SNR");
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    Random rng(seed);
    RfImage out = image;
    for (int j = 0; j < out.cols(); ++j)
        for (int i = 0; i < out.rows(); ++i)
            out.samples(i, j) += sigma * rng.normal();
    return out;
}

/// Envelope of each A-line (column) as the magnitude of its analytic signal.
inline RfImage bmode_envelope(const RfImage& image) {
    const int n = image.rows();
    require(n >= 16, "bmode_envelope: need at least 16 axial samples");
    RfImage out = image;
    Eigen::FFT<double> fft;
    std::vector<double> line(static_cast<std::size_t>(n));
    std::vector<std::complex<double>> spectrum, analytic;
    for (int j = 0; j < image.cols(); ++j) {
        for (int i = 0; i < n; ++i)
            line[static_cast<std::size_t>(i)] = image.samples(i, j);
        fft.fwd(spectrum, line);
        spectrum.resize(static_cast<std::size_t>(n));
        // Keep DC and Nyquist, double positive frequencies, drop negative ones.
        for (int k = 1; k < n; ++k) {
            if (2 * k < n)
                spectrum[static_cast<std::size_t>(k)] *= 2.0;
            else if (2 * k > n)
                spectrum[static_cast<std::size_t>(k)] = 0.0;
        }
        fft.inv(analytic, spectrum);
        for (int i = 0; i < n; ++i)
            out.samples(i, j) = std::abs(analytic[static_cast<std::size_t>(i)]);
    }
    return out;
}

/// Frame k renders the scatterers displaced by truth_frames[k]; each frame gets
/// its own noise stream derived from seed.
inline std::vector<RfImage> make_sequence(const ScattererField& scatterers, const Psf& psf, const ImageGrid& grid,
                                          const std::vector<NodalField>& truth_frames, double snr_db,
                                          std::uint64_t seed) {
    require(!truth_frames.empty(), "make_sequence: need at least one frame");
    require(truth_frames.front().values.cwiseAbs().maxCoeff() == 0.0, "make_sequence: frame 0 must be the zero field");
    std::vector<RfImage> frames;
    frames.reserve(truth_frames.size());
    for (std::size_t k = 0; k < truth_frames.size(); ++k) {
        const RfImage clean = render_rf(displace_scatterers(scatterers, truth_frames[k]), psf, grid);
        frames.push_back(add_noise(clean, snr_db, derive_seed(seed, k)));
    }
    return frames;
}

} // namespace elastoreg
