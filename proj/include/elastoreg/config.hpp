#pragma once

// Experiment configuration (YAML). Every section is optional; unknown keys
// are rejected and every error names the file, line and column. Relative
// paths resolve against the directory of the config file. configs/ has
// complete examples; the sections are
//
//   name, output                 sequence name used in reports, output directory
//   seeds                        {scatterers, noise}
//   phantom                      block geometry, plate, compression, material, inclusion (or null)
//   imaging                      window_mm {min, max}, sampling, noise, scatterers, psf
//   sequence                     {frames, mean_step_strain}
//   mesh                         {element_mm} inside the block-match hull, or {file}
//   registration                 regularizers [{kind, alpha, alpha_i, nu, delta}], init,
//                                max_iterations, step_tolerance, block_match {...}
//   sweep                        pair [i, j], cases [{name, e_inclusion}],
//                                alphas {kind: [list] | {log10_min, log10_max, per_decade}}
//   metrics                      roi: none | inclusion | {disk: {center_mm, radius_mm}} | {polygon: [[x, y], ...]}
//   convert                      raw external RF layout for convert-rf

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "elastoreg/blockmatch.hpp"
#include "elastoreg/elasticity.hpp"
#include "elastoreg/error.hpp"
#include "elastoreg/geometry.hpp"
#include "elastoreg/metrics.hpp"
#include "elastoreg/registration.hpp"
#include "elastoreg/regularizers.hpp"
#include "elastoreg/ussim.hpp"

namespace elastoreg {

struct Seeds {
    std::uint64_t scatterers = 1;
    std::uint64_t noise = 2;
};

struct ImagingConfig {
    Rect window{{0.0, 0.0}, {40.0, 40.0}};
    double sampling_mhz = 40.0;
    double lateral_spacing_mm = 0.3;
    double snr_db = 12.0;
    double scatterer_density_per_mm2 = 30.0;
    double inclusion_gain = 2.0;
    double scatterer_margin_mm = 2.0;
    Psf psf;

    ImageGrid grid() const { return ImageGrid::covering(window, sampling_mhz, psf.sound_speed_m_s, lateral_spacing_mm); }
};

struct SequenceConfig {
    int frames = 2;
    double mean_step_strain = 0.004;
};

struct MeshConfig {
    double element_mm = 2.0;
    std::optional<std::filesystem::path> file;
};

struct RegistrationConfig {
    std::vector<RegularizerSpec> regularizers;
    InitPolicy init = InitPolicy::previous_increment;
    SolverOptions solver;
    BlockMatchConfig block_match;
};

struct SweepCase {
    std::string name = "base";
    std::optional<double> e_inclusion; // unset keeps the phantom's value
};

struct SweepConfig {
    int pair_first = 0;
    int pair_second = 1;
    std::vector<SweepCase> cases{SweepCase{}};
    std::map<RegularizerKind, std::vector<double>> alphas;

    /// The paper-wide default grid: 1e-6 .. 1e6, one value per decade.
    static std::vector<double> default_alphas() {
        std::vector<double> a;
        for (int e = -6; e <= 6; ++e)
            a.push_back(std::pow(10.0, e));
        return a;
    }
    const std::vector<double>& alphas_for(RegularizerKind k) const {
        static const std::vector<double> fallback = default_alphas();
        const auto it = alphas.find(k);
        return it == alphas.end() ? fallback : it->second;
    }
};

enum class RoiSource { none, inclusion, explicit_mask };

struct MetricsConfig {
    RoiSource source = RoiSource::inclusion;
    std::optional<RoiMask> mask; // explicit_mask only
};

enum class SampleType { float32, float64, int16 };

struct ConvertConfig {
    std::filesystem::path input;
    SampleType sample_type = SampleType::float32;
    int axial_samples = 0;
    int lines = 0;
    int frames = 0;
    double axial_spacing_mm = 0.0;
    double lateral_spacing_mm = 0.0;
    Vec2 origin = Vec2::Zero();
    int frame_stride = 1;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::filesystem::path output = "out";
    Seeds seeds;
    CompressionPhantom phantom;
    ImagingConfig imaging;
    SequenceConfig sequence;
    MeshConfig mesh;
    RegistrationConfig registration;
    SweepConfig sweep;
    MetricsConfig metrics;
    std::optional<ConvertConfig> convert;

    /// ROI for strain ratio / CNR, if any.
    std::optional<RoiMask> roi() const {
        switch (metrics.source) {
        case RoiSource::none: return std::nullopt;
        case RoiSource::inclusion:
            if (!phantom.inclusion)
                return std::nullopt;
            return RoiMask::from_disk(*phantom.inclusion);
        case RoiSource::explicit_mask: return metrics.mask;
        }
        return std::nullopt;
    }

    /// Replaces both seeds with streams derived from one value.
    void override_seed(std::uint64_t seed) {
        seeds.scatterers = derive_seed(seed, 0);
        seeds.noise = derive_seed(seed, 1);
    }
};

namespace detail {

// Walks one YAML mapping, remembering which keys were read so that leftovers
// can be reported as unknown.
class ConfigNode {
public:
    ConfigNode(YAML::Node node, std::string path, std::string file)
        : node_(std::move(node)), path_(std::move(path)), file_(std::move(file)) {
        if (node_.IsDefined() && !node_.IsNull() && !node_.IsMap())
            error(node_, "expected a mapping");
    }

    [[noreturn]] void error(const YAML::Node& at, const std::string& what) const {
        std::string where = file_;
        const YAML::Node& anchor = at.IsDefined() ? at : node_;
        if (anchor.IsDefined() && !anchor.Mark().is_null())
            where += ":" + std::to_string(anchor.Mark().line + 1) + ":" + std::to_string(anchor.Mark().column + 1);
        fail(ErrorKind::config, where + ": " + (path_.empty() ? std::string() : path_ + ": ") + what);
    }

    YAML::Node lookup(const std::string& key) const {
        const YAML::Node& n = node_;
        return n.IsDefined() && n.IsMap() ? n[key] : YAML::Node(YAML::NodeType::Undefined);
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        const YAML::Node n = lookup(key);
        return n.IsDefined() && !n.IsNull();
    }

    YAML::Node raw(const std::string& key) {
        seen_.insert(key);
        return lookup(key);
    }

    template <class T>
    T get(const std::string& key, const T& fallback) {
        return has(key) ? as<T>(lookup(key), key) : fallback;
    }

    template <class T>
    T need(const std::string& key) {
        if (!has(key))
            error(node_, "missing required key '" + key + "'");
        return as<T>(lookup(key), key);
    }

    double positive(const std::string& key, double fallback) {
        const double v = get(key, fallback);
        if (!(v > 0.0) || !std::isfinite(v))
            error(lookup(key), "'" + key + "' must be positive");
        return v;
    }

    Vec2 vec2(const YAML::Node& n, const std::string& key) const {
        if (!n.IsSequence() || n.size() != 2)
            error(n, "'" + key + "' must be a two-element list [x, y]");
        return {as<double>(n[0], key), as<double>(n[1], key)};
    }

    ConfigNode child(const std::string& key) {
        seen_.insert(key);
        return {lookup(key), path_.empty() ? key : path_ + "." + key, file_};
    }

    ConfigNode child_of(const YAML::Node& n, const std::string& name) const {
        return {n, path_.empty() ? name : path_ + "." + name, file_};
    }

    void finish() const {
        if (!node_.IsDefined() || !node_.IsMap())
            return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.contains(key))
                error(kv.first, "unknown key '" + key + "'");
        }
    }

    const YAML::Node& node() const { return node_; }
    const std::string& file() const { return file_; }

    template <class T>
    T as(const YAML::Node& n, const std::string& key) const {
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            error(n, "'" + key + "' has the wrong type");
        }
    }

private:
    YAML::Node node_;
    std::string path_;
    std::string file_;
    std::set<std::string> seen_;
};

inline RegularizerSpec parse_regularizer(ConfigNode n) {
    RegularizerSpec spec;
    const auto kind_name = n.need<std::string>("kind");
    RegularizerKind kind;
    try {
        kind = parse_regularizer_kind(kind_name);
    } catch (const Error& e) {
        n.error(n.lookup("kind"), e.what());
    }
    const double alpha = n.positive("alpha", 1.0);
    switch (kind) {
    case RegularizerKind::strain: spec = RegularizerSpec::strain(alpha); break;
    case RegularizerKind::strain_incompressible:
        spec = RegularizerSpec::strain_incompressible(alpha, n.get("alpha_i", 100.0 * alpha));
        break;
    case RegularizerKind::momentum_plane_strain: {
        const double nu = n.get("nu", 0.45);
        if (!(nu >= 0.0 && nu < 0.5))
            n.error(n.lookup("nu"), "'nu' must lie in [0, 0.5)");
        spec = RegularizerSpec::momentum_plane_strain(alpha, nu, n.positive("delta", RegularizerSpec::default_delta));
        break;
    }
    case RegularizerKind::momentum_plane_stress:
        spec = RegularizerSpec::momentum_plane_stress(alpha, n.positive("delta", RegularizerSpec::default_delta));
        break;
    }
    n.finish();
    try {
        spec.validate();
    } catch (const Error& e) {
        n.error(n.node(), e.what());
    }
    return spec;
}

inline std::vector<double> parse_alpha_grid(ConfigNode& parent, const YAML::Node& n, const std::string& key) {
    std::vector<double> out;
    if (n.IsSequence()) {
        for (const auto& v : n)
            out.push_back(parent.as<double>(v, key));
    } else {
        ConfigNode g = parent.child_of(n, key);
        const double lo = g.need<double>("log10_min"), hi = g.need<double>("log10_max");
        const int per = g.get("per_decade", 1);
        if (!(hi >= lo) || per < 1)
            g.error(n, "need log10_max >= log10_min and per_decade >= 1");
        const int count = static_cast<int>(std::lround((hi - lo) * per));
        for (int i = 0; i <= count; ++i)
            out.push_back(std::pow(10.0, lo + static_cast<double>(i) / per));
        g.finish();
    }
    if (out.empty())
        parent.error(n, "'" + key + "' is empty");
    for (double a : out)
        if (!(a > 0.0))
            parent.error(n, "'" + key + "' values must be positive");
    return out;
}

} // namespace detail

inline ExperimentConfig parse_config(const YAML::Node& root, const std::string& file = "<config>",
                                     const std::filesystem::path& base_dir = {}) {
    ExperimentConfig cfg;
    detail::ConfigNode top(root, "", file);
    if (!root || !root.IsMap())
        top.error(root, "top level must be a mapping");
    const auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };

    cfg.name = top.get<std::string>("name", cfg.name);
    if (top.has("output"))
        cfg.output = resolve(top.need<std::string>("output"));
    else
        cfg.output = resolve(cfg.output.string());

    {
        auto s = top.child("seeds");
        cfg.seeds.scatterers = s.get<std::uint64_t>("scatterers", cfg.seeds.scatterers);
        cfg.seeds.noise = s.get<std::uint64_t>("noise", cfg.seeds.noise);
        s.finish();
    }
    {
        auto p = top.child("phantom");
        auto& ph = cfg.phantom;
        ph.depth_mm = p.positive("depth_mm", ph.depth_mm);
        ph.width_mm = p.positive("width_mm", ph.width_mm);
        ph.element_mm = p.positive("element_mm", ph.element_mm);
        ph.platen_mm = p.positive("platen_mm", ph.platen_mm);
        ph.compression_mm = p.positive("compression_mm", ph.compression_mm);
        ph.e_background = p.positive("e_background", ph.e_background);
        ph.e_inclusion = p.positive("e_inclusion", ph.e_inclusion);
        ph.poisson_ratio = p.get("poisson_ratio", ph.poisson_ratio);
        const auto mode = p.get<std::string>("mode", "plane_stress");
        if (mode == "plane_stress")
            ph.mode = PlaneMode::plane_stress;
        else if (mode == "plane_strain")
            ph.mode = PlaneMode::plane_strain;
        else
            p.error(p.lookup("mode"), "'mode' must be plane_stress or plane_strain");
        const double nu_max = ph.mode == PlaneMode::plane_strain ? 0.5 : 0.5 + 1e-12;
        if (!(ph.poisson_ratio >= 0.0 && ph.poisson_ratio < nu_max))
            p.error(p.lookup("poisson_ratio"), "'poisson_ratio' out of range");
        if (p.has("inclusion")) {
            auto inc = p.child("inclusion");
            if (!inc.has("center_mm"))
                inc.error(inc.node(), "missing required key 'center_mm'");
            ph.inclusion = Disk{inc.vec2(inc.raw("center_mm"), "center_mm"), inc.positive("radius_mm", 1.0)};
            inc.finish();
        } else {
            p.raw("inclusion");
            ph.inclusion.reset();
        }
        p.finish();
    }
    {
        auto im = top.child("imaging");
        auto& ic = cfg.imaging;
        if (im.has("window_mm")) {
            auto w = im.child("window_mm");
            ic.window = {w.vec2(w.raw("min"), "min"), w.vec2(w.raw("max"), "max")};
            if (ic.window.empty())
                w.error(w.node(), "window must have max > min on both axes");
            w.finish();
        }
        ic.sampling_mhz = im.positive("sampling_mhz", ic.sampling_mhz);
        ic.lateral_spacing_mm = im.positive("lateral_spacing_mm", ic.lateral_spacing_mm);
        ic.snr_db = im.get("snr_db", ic.snr_db);
        ic.scatterer_density_per_mm2 = im.positive("scatterer_density_per_mm2", ic.scatterer_density_per_mm2);
        ic.inclusion_gain = im.positive("inclusion_gain", ic.inclusion_gain);
        ic.scatterer_margin_mm = im.get("scatterer_margin_mm", ic.scatterer_margin_mm);
        auto psf = im.child("psf");
        ic.psf.center_frequency_mhz = psf.positive("center_frequency_mhz", ic.psf.center_frequency_mhz);
        ic.psf.pulse_length_us = psf.positive("pulse_length_us", ic.psf.pulse_length_us);
        ic.psf.lateral_fwhm_mm = psf.positive("lateral_fwhm_mm", ic.psf.lateral_fwhm_mm);
        ic.psf.sound_speed_m_s = psf.positive("sound_speed_m_s", ic.psf.sound_speed_m_s);
        psf.finish();
        im.finish();
    }
    {
        auto s = top.child("sequence");
        cfg.sequence.frames = s.get("frames", cfg.sequence.frames);
        if (cfg.sequence.frames < 2)
            s.error(s.lookup("frames"), "'frames' must be at least 2");
        cfg.sequence.mean_step_strain = s.positive("mean_step_strain", cfg.sequence.mean_step_strain);
        s.finish();
    }
    {
        auto m = top.child("mesh");
        cfg.mesh.element_mm = m.positive("element_mm", cfg.mesh.element_mm);
        if (m.has("file"))
            cfg.mesh.file = resolve(m.need<std::string>("file"));
        m.finish();
    }
    {
        auto r = top.child("registration");
        auto& rc = cfg.registration;
        const YAML::Node regs = r.raw("regularizers");
        if (regs && !regs.IsNull()) {
            if (!regs.IsSequence())
                r.error(regs, "'regularizers' must be a list");
            for (std::size_t i = 0; i < regs.size(); ++i)
                rc.regularizers.push_back(detail::parse_regularizer(r.child_of(regs[i], "regularizers[" + std::to_string(i) + "]")));
        } else {
            // Paper-selected weights, in the paper's image intensity units.
            rc.regularizers = {RegularizerSpec::strain(24.8), RegularizerSpec::strain_incompressible(1.89e4),
                               RegularizerSpec::momentum_plane_strain(1.14e-4), RegularizerSpec::momentum_plane_stress(2.33e-4)};
        }
        if (r.has("init")) {
            try {
                rc.init = parse_init_policy(r.need<std::string>("init"));
            } catch (const Error& e) {
                r.error(r.lookup("init"), e.what());
            }
        }
        rc.solver.max_iterations = r.get("max_iterations", rc.solver.max_iterations);
        if (rc.solver.max_iterations < 1)
            r.error(r.lookup("max_iterations"), "'max_iterations' must be at least 1");
        rc.solver.step_tolerance = r.positive("step_tolerance", rc.solver.step_tolerance);
        auto b = r.child("block_match");
        auto& bm = rc.block_match;
        bm.window_axial_mm = b.positive("window_axial_mm", bm.window_axial_mm);
        bm.window_lateral_mm = b.positive("window_lateral_mm", bm.window_lateral_mm);
        bm.overlap_axial = b.get("overlap_axial", bm.overlap_axial);
        bm.overlap_lateral = b.get("overlap_lateral", bm.overlap_lateral);
        if (b.has("search_axial_px"))
            bm.search_axial_px = b.need<int>("search_axial_px");
        if (b.has("search_lateral_px"))
            bm.search_lateral_px = b.need<int>("search_lateral_px");
        bm.median_rows = b.get("median_rows", bm.median_rows);
        bm.median_cols = b.get("median_cols", bm.median_cols);
        bm.min_correlation = b.get("min_correlation", bm.min_correlation);
        bm.min_overlap = b.get("min_overlap", bm.min_overlap);
        try {
            bm.validate();
        } catch (const Error& e) {
            b.error(b.node(), e.what());
        }
        b.finish();
        r.finish();
    }
    {
        auto s = top.child("sweep");
        auto& sc = cfg.sweep;
        if (s.has("pair")) {
            const Vec2 p = s.vec2(s.raw("pair"), "pair");
            sc.pair_first = static_cast<int>(p.x());
            sc.pair_second = static_cast<int>(p.y());
        } else {
            sc.pair_second = cfg.sequence.frames - 1;
        }
        if (sc.pair_first < 0 || sc.pair_second <= sc.pair_first || sc.pair_second >= cfg.sequence.frames)
            s.error(s.lookup("pair"), "'pair' must be two increasing frame indices within the sequence");
        const YAML::Node cases = s.raw("cases");
        if (cases && !cases.IsNull()) {
            if (!cases.IsSequence() || cases.size() == 0)
                s.error(cases, "'cases' must be a non-empty list");
            sc.cases.clear();
            for (std::size_t i = 0; i < cases.size(); ++i) {
                auto c = s.child_of(cases[i], "cases[" + std::to_string(i) + "]");
                SweepCase sw;
                sw.name = c.need<std::string>("name");
                if (c.has("e_inclusion"))
                    sw.e_inclusion = c.positive("e_inclusion", 1.0);
                c.finish();
                sc.cases.push_back(sw);
            }
        }
        if (s.has("alphas")) {
            auto a = s.child("alphas");
            for (const auto& kv : a.node()) {
                const auto key = kv.first.as<std::string>();
                RegularizerKind kind;
                try {
                    kind = parse_regularizer_kind(key);
                } catch (const Error& e) {
                    a.error(kv.first, e.what());
                }
                a.raw(key);
                sc.alphas[kind] = detail::parse_alpha_grid(a, kv.second, key);
            }
        }
        s.finish();
    }
    {
        auto m = top.child("metrics");
        const YAML::Node roi = m.raw("roi");
        if (roi && !roi.IsNull()) {
            if (roi.IsScalar()) {
                const auto v = roi.as<std::string>();
                if (v == "none")
                    cfg.metrics.source = RoiSource::none;
                else if (v == "inclusion")
                    cfg.metrics.source = RoiSource::inclusion;
                else
                    m.error(roi, "'roi' must be none, inclusion, a disk or a polygon");
            } else {
                auto r = m.child("roi");
                cfg.metrics.source = RoiSource::explicit_mask;
                if (r.has("disk")) {
                    auto d = r.child("disk");
                    cfg.metrics.mask = RoiMask::from_disk(Disk{d.vec2(d.raw("center_mm"), "center_mm"), d.positive("radius_mm", 1.0)});
                    d.finish();
                } else if (r.has("polygon")) {
                    const YAML::Node poly = r.raw("polygon");
                    if (!poly.IsSequence() || poly.size() < 3)
                        r.error(poly, "'polygon' needs at least three [x, y] vertices");
                    std::vector<Vec2> pts;
                    for (const auto& v : poly)
                        pts.push_back(r.vec2(v, "polygon"));
                    cfg.metrics.mask = RoiMask::from_polygon(std::move(pts));
                } else {
                    r.error(roi, "'roi' mapping needs 'disk' or 'polygon'");
                }
                r.finish();
            }
        }
        m.finish();
    }
    if (top.has("convert")) {
        auto c = top.child("convert");
        ConvertConfig cc;
        cc.input = resolve(c.need<std::string>("input"));
        const auto type = c.get<std::string>("sample_type", "float32");
        if (type == "float32")
            cc.sample_type = SampleType::float32;
        else if (type == "float64")
            cc.sample_type = SampleType::float64;
        else if (type == "int16")
            cc.sample_type = SampleType::int16;
        else
            c.error(c.lookup("sample_type"), "'sample_type' must be float32, float64 or int16");
        cc.axial_samples = c.need<int>("axial_samples");
        cc.lines = c.need<int>("lines");
        cc.frames = c.need<int>("frames");
        cc.frame_stride = c.get("frame_stride", 1);
        if (cc.axial_samples < 2 || cc.lines < 1 || cc.frames < 1 || cc.frame_stride < 1)
            c.error(c.node(), "need axial_samples >= 2, lines >= 1, frames >= 1, frame_stride >= 1");
        cc.axial_spacing_mm = c.positive("axial_spacing_mm", 0.0);
        cc.lateral_spacing_mm = c.positive("lateral_spacing_mm", 0.0);
        if (c.has("origin_mm"))
            cc.origin = c.vec2(c.raw("origin_mm"), "origin_mm");
        c.finish();
        cfg.convert = cc;
    } else {
        top.raw("convert");
    }
    top.finish();
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& file = "<config>",
                                          const std::filesystem::path& base_dir = {}) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        fail(ErrorKind::config, file + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                                    ": " + e.msg);
    }
    return parse_config(root, file, base_dir);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        fail(ErrorKind::not_found, "no such file: " + path.string());
    std::ifstream is(path);
    if (!is)
        fail(ErrorKind::io, "cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path.string(), path.parent_path());
}

} // namespace elastoreg
