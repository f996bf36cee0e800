#pragma once

// Command implementations behind the CLI: simulate, register, sweep-alpha,
// metrics and convert-rf. Every command writes through temp-and-rename and
// produces identical bytes for identical configs, whatever the job count.
//
// Directory layout (one experiment):
//   frames/frame_NNN.rfimg             RF frames
//   mesh.quadmesh, truth.truthseq      registration mesh and truth on it
//   forward_mesh.quadmesh, forward_truth.truthseq
//   scatterers.csv, strain_trace.csv
//   registration/<label>/frame_NNN.dispfield, report.csv, strain.csv, strain_xx.pgm
//   registration/report.csv            all regularizers
//   metrics.csv, sweep.csv, sweep_argmin.csv

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "elastoreg/blockmatch.hpp"
#include "elastoreg/config.hpp"
#include "elastoreg/elasticity.hpp"
#include "elastoreg/io.hpp"
#include "elastoreg/metrics.hpp"
#include "elastoreg/raster.hpp"
#include "elastoreg/registration.hpp"
#include "elastoreg/strain.hpp"
#include "elastoreg/ussim.hpp"

namespace elastoreg {

namespace fs = std::filesystem;

struct Layout {
    fs::path root;

    fs::path frames_dir() const { return root / "frames"; }
    fs::path frame(int k) const { return frames_dir() / ("frame_" + index_name(k) + ".rfimg"); }
    fs::path mesh() const { return root / "mesh.quadmesh"; }
    fs::path truth() const { return root / "truth.truthseq"; }
    fs::path forward_mesh() const { return root / "forward_mesh.quadmesh"; }
    fs::path forward_truth() const { return root / "forward_truth.truthseq"; }
    fs::path scatterers() const { return root / "scatterers.csv"; }
    fs::path strain_trace() const { return root / "strain_trace.csv"; }
    fs::path registration() const { return root / "registration"; }
    fs::path metrics() const { return root / "metrics.csv"; }
    fs::path sweep() const { return root / "sweep.csv"; }
    fs::path sweep_argmin() const { return root / "sweep_argmin.csv"; }

    static std::string index_name(int k) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03d", k);
        return buf;
    }
};

/// Runs fn(0..count-1) on up to `jobs` threads. Results must be stored by
/// index; the first failure (lowest index) is rethrown.
inline void parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
    if (count <= 0)
        return;
    jobs = std::clamp(jobs, 1, count);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    if (jobs == 1) {
        for (int i = 0; i < count; ++i)
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
                break;
            }
    } else {
        std::atomic<int> next{0};
        std::atomic<bool> stop{false};
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t)
            pool.emplace_back([&] {
                for (int i = next++; i < count && !stop; i = next++)
                    try {
                        fn(i);
                    } catch (...) {
                        errors[static_cast<std::size_t>(i)] = std::current_exception();
                        stop = true;
                    }
            });
        for (auto& th : pool)
            th.join();
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
    write_atomic(path, [&](std::ostream& os) { os << text; }, true);
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        fail(ErrorKind::io, "cannot create output directory " + dir.string());
}

/// Registration mesh: from file, or a structured mesh over the block-match hull
/// (nodes outside the hull would only see clamped block-match estimates).
inline MeshPtr registration_mesh(const ExperimentConfig& cfg, const RfImage& geometry) {
    if (cfg.mesh.file)
        return load_mesh_ptr(*cfg.mesh.file);
    const Rect hull = block_match_hull(geometry, cfg.registration.block_match);
    const Vec2 size = hull.size();
    if (!(size.x() > 0 && size.y() > 0))
        fail(ErrorKind::invalid_argument, "registration mesh: block-match windows leave no room for a mesh");
    const int nx = std::max(1, static_cast<int>(std::lround(size.x() / cfg.mesh.element_mm)));
    const int ny = std::max(1, static_cast<int>(std::lround(size.y() / cfg.mesh.element_mm)));
    return std::make_shared<const QuadMesh>(build_structured_mesh(size.x(), size.y(), nx, ny, hull.min));
}

struct SimulatedSequence {
    NodalField forward_solution;
    std::vector<NodalField> forward_truth; // per frame, forward mesh
    ScattererField scatterers;
    ImageGrid grid;
    std::vector<std::optional<RfImage>> images; // rendered frames only
    MeshPtr mesh;                               // registration mesh
    std::vector<NodalField> truth;              // per frame, registration mesh
};

/// Simulates `n_frames` truth frames and renders the listed ones (all when empty).
/// Frame k always uses noise stream k, so subsets match the full sequence.
inline SimulatedSequence simulate(const ExperimentConfig& cfg, int n_frames, std::vector<int> render = {}, int jobs = 1) {
    SimulatedSequence s;
    s.forward_solution = cfg.phantom.solve();
    s.forward_truth = make_truth_frames(s.forward_solution, n_frames, cfg.sequence.mean_step_strain, cfg.imaging.window);
    s.grid = cfg.imaging.grid();
    cfg.imaging.psf.validate();
    s.scatterers = gen_scatterers(cfg.imaging.window.inflated(cfg.imaging.scatterer_margin_mm),
                                  cfg.imaging.scatterer_density_per_mm2, cfg.phantom.inclusion, cfg.imaging.inclusion_gain,
                                  cfg.seeds.scatterers);
    if (render.empty())
        for (int k = 0; k < n_frames; ++k)
            render.push_back(k);
    s.images.resize(static_cast<std::size_t>(n_frames));
    parallel_for(static_cast<int>(render.size()), jobs, [&](int i) {
        const int k = render[static_cast<std::size_t>(i)];
        require(k >= 0 && k < n_frames, "simulate: frame index out of range");
        const RfImage clean =
            render_rf(displace_scatterers(s.scatterers, s.forward_truth[static_cast<std::size_t>(k)]), cfg.imaging.psf, s.grid);
        s.images[static_cast<std::size_t>(k)] = add_noise(clean, cfg.imaging.snr_db, derive_seed(cfg.seeds.noise, static_cast<std::uint64_t>(k)));
    });
    s.mesh = registration_mesh(cfg, s.grid.blank());
    for (const auto& f : s.forward_truth)
        s.truth.push_back(transfer_field(f, s.mesh));
    return s;
}

/// Displacement from frame i to frame j at the nodes of `mesh`, which sit at
/// their frame-i positions: d(x) = u_j(X) - u_i(X) with x = X + u_i(X).
inline NodalField pair_truth(const NodalField& u_i, const NodalField& u_j, MeshPtr mesh) {
    NodalField out(mesh);
    for (int n = 0; n < mesh->num_nodes(); ++n) {
        const Vec2 x = mesh->node(n);
        Vec2 X = x;
        for (int it = 0; it < 20; ++it) {
            const Vec2 next = x - evaluate_clamped(u_i, X);
            const bool done = (next - X).norm() < 1e-13;
            X = next;
            if (done)
                break;
        }
        out.set(n, evaluate_clamped(u_j, X) - evaluate_clamped(u_i, X));
    }
    return out;
}

inline void write_scatterers_csv(std::ostream& os, const ScattererField& s) {
    os << "index,x_mm,y_mm,amplitude\n" << std::setprecision(17);
    for (std::size_t i = 0; i < s.size(); ++i)
        os << i << ',' << s.positions[i].x() << ',' << s.positions[i].y() << ',' << s.amplitudes[i] << '\n';
}

// ---------------------------------------------------------------------------
// simulate

inline void cmd_simulate(const ExperimentConfig& cfg, const fs::path& out, int jobs = 1) {
    const Layout L{out};
    ensure_dir(out);
    ensure_dir(L.frames_dir());
    const SimulatedSequence s = simulate(cfg, cfg.sequence.frames, {}, jobs);
    parallel_for(cfg.sequence.frames, jobs, [&](int k) { save_rfimg_atomic(L.frame(k), *s.images[static_cast<std::size_t>(k)]); });
    save_mesh_atomic(L.mesh(), *s.mesh);
    save_truthseq(L.truth(), s.truth);
    save_mesh_atomic(L.forward_mesh(), *s.forward_solution.mesh);
    save_truthseq(L.forward_truth(), s.forward_truth);
    write_atomic(L.scatterers(), [&](std::ostream& os) { write_scatterers_csv(os, s.scatterers); });
    write_atomic(L.strain_trace(), [&](std::ostream& os) {
        os << "frame,window_mean_axial_strain\n" << std::setprecision(17);
        for (std::size_t k = 0; k < s.forward_truth.size(); ++k)
            os << k << ',' << window_mean_axial_strain(s.forward_truth[k], cfg.imaging.window) << '\n';
    });
}

// ---------------------------------------------------------------------------
// register

inline std::vector<RfImage> load_frames(const fs::path& sequence_dir) {
    const fs::path dir = Layout{sequence_dir}.frames_dir();
    if (!fs::is_directory(dir))
        fail(ErrorKind::not_found, "no sequence at " + sequence_dir.string() + " (missing " + dir.string() + ")");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".rfimg")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.size() < 2)
        fail(ErrorKind::not_found, "sequence " + dir.string() + " holds fewer than two .rfimg frames");
    std::vector<RfImage> frames;
    for (const auto& f : files)
        frames.push_back(load_rfimg_checked(f));
    for (const auto& f : frames)
        if (!f.same_geometry(frames.front()))
            fail(ErrorKind::incompatible, "frames in " + dir.string() + " differ in geometry");
    return frames;
}

/// Directory names per regularizer: the kind, suffixed with the position when a kind repeats.
inline std::vector<std::string> regularizer_labels(const std::vector<RegularizerSpec>& specs) {
    std::map<RegularizerKind, int> count;
    for (const auto& s : specs)
        ++count[s.kind];
    std::vector<std::string> out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        std::string l(to_string(specs[i].kind));
        if (count[specs[i].kind] > 1)
            l += "_" + std::to_string(i);
        out.push_back(l);
    }
    return out;
}

inline void cmd_register(const ExperimentConfig& cfg, const fs::path& sequence_dir, const fs::path& out, int jobs = 1) {
    const std::vector<RfImage> frames = load_frames(sequence_dir);
    const Layout in{sequence_dir}, L{out};
    const MeshPtr mesh = fs::exists(in.mesh()) ? load_mesh_ptr(in.mesh()) : registration_mesh(cfg, frames.front());
    const auto& specs = cfg.registration.regularizers;
    require(!specs.empty(), "register: no regularizers configured");
    const auto labels = regularizer_labels(specs);
    ensure_dir(L.registration());
    SequenceOptions opts;
    opts.init = cfg.registration.init;
    opts.block_match = cfg.registration.block_match;
    opts.solver = cfg.registration.solver;

    std::vector<std::string> reports(specs.size());
    parallel_for(static_cast<int>(specs.size()), jobs, [&](int r) {
        const auto& spec = specs[static_cast<std::size_t>(r)];
        const auto& label = labels[static_cast<std::size_t>(r)];
        SequenceResult res;
        try {
            res = register_sequence(frames, spec, mesh, opts);
        } catch (const Error& e) {
            fail(e.kind(), "regularizer " + label + ": " + e.what());
        }
        const fs::path dir = L.registration() / label;
        ensure_dir(dir);
        for (std::size_t k = 0; k < res.accumulated.size(); ++k)
            save_dispfield(dir / ("frame_" + Layout::index_name(static_cast<int>(k)) + ".dispfield"), res.accumulated[k]);
        std::ostringstream rep;
        for (std::size_t k = 0; k < res.reports.size(); ++k)
            write_report_rows(rep, label, spec.alpha, static_cast<int>(k + 1), res.reports[k]);
        reports[static_cast<std::size_t>(r)] = rep.str();
        write_text_atomic(dir / "report.csv", std::string(report_header) + "\n" + rep.str());
        const StrainField eps = strain_from_displacement(res.accumulated.back());
        write_atomic(dir / "strain.csv", [&](std::ostream& os) { write_strain_csv(os, eps); });
        std::vector<double> exx;
        for (const auto& s : eps.values)
            exx.push_back(s.xx);
        const Raster raster = rasterize(*mesh, exx, 0.25);
        write_atomic(dir / "strain_xx.pgm", [&](std::ostream& os) { write_pgm(os, raster); });
    });
    std::string all = std::string(report_header) + "\n";
    for (const auto& r : reports)
        all += r;
    write_text_atomic(L.registration() / "report.csv", all);
}

// ---------------------------------------------------------------------------
// metrics

struct MetricRow {
    std::string name;
    double value = 0.0;
    bool defined = true;
};

/// Metric table for one field; undefined entries are NaN (or +inf for a CNR
/// with zero variances) and flagged.
inline std::vector<MetricRow> metric_table(const NodalField& truth, const NodalField& measured, const std::optional<RoiMask>& roi) {
    std::vector<MetricRow> rows;
    const auto add = [&rows](const char* name, auto&& compute) {
        try {
            rows.push_back({name, compute(), true});
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::undefined_metric)
                throw;
            rows.push_back({name, std::numeric_limits<double>::quiet_NaN(), false});
        }
    };
    add("disp_x_pct", [&] { return disp_error(truth, measured, DispComponent::x); });
    add("disp_y_pct", [&] { return disp_error(truth, measured, DispComponent::y); });
    add("disp_total_pct", [&] { return disp_error(truth, measured, DispComponent::total); });
    const StrainField et = strain_from_displacement(truth), em = strain_from_displacement(measured);
    add("strain_xx_pct", [&] { return strain_error(et, em, StrainComponent::xx); });
    add("strain_yy_pct", [&] { return strain_error(et, em, StrainComponent::yy); });
    add("strain_xy_pct", [&] { return strain_error(et, em, StrainComponent::xy); });
    add("strain_total_pct", [&] { return strain_error(et, em, StrainComponent::total); });
    if (roi) {
        add("strain_ratio", [&] { return strain_ratio(em, *roi); });
        try {
            const CnrResult c = cnr_e(em, *roi);
            rows.push_back({"cnr_e", c.value, c.defined});
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::undefined_metric)
                throw;
            rows.push_back({"cnr_e", std::numeric_limits<double>::quiet_NaN(), false});
        }
    }
    return rows;
}

inline constexpr const char* metrics_header = "sequence,frame,regularizer,metric,value";

inline void write_metric_rows(std::ostream& os, std::string_view sequence, int frame, std::string_view regularizer,
                              const std::vector<MetricRow>& rows) {
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << sequence << ',' << frame << ',' << regularizer << ',' << r.name << ',' << r.value << '\n';
}

inline std::optional<int> frame_index_of(const fs::path& p) {
    static const std::regex re(R"(frame_(\d+)\.dispfield)");
    std::smatch m;
    const std::string name = p.filename().string();
    if (std::regex_match(name, m, re))
        return std::stoi(m[1].str());
    return std::nullopt;
}

/// Compares every dispfield under `measured` (a registration directory, one
/// regularizer directory or a single file) with the truth sequence. Returns
/// false when any metric is undefined.
inline bool cmd_metrics(const ExperimentConfig& cfg, const fs::path& truth_path, const fs::path& measured, const fs::path& out) {
    if (!fs::exists(truth_path))
        fail(ErrorKind::not_found, "no such file: " + truth_path.string());
    if (!fs::exists(measured))
        fail(ErrorKind::not_found, "no such file or directory: " + measured.string());
    const fs::path mesh_path = truth_path.parent_path() / "mesh.quadmesh";
    MeshPtr mesh;
    if (fs::exists(mesh_path))
        mesh = load_mesh_ptr(mesh_path);
    else if (cfg.mesh.file)
        mesh = load_mesh_ptr(*cfg.mesh.file);
    else
        fail(ErrorKind::not_found, "no mesh next to " + truth_path.string() + " and none configured");
    const auto truth = load_truthseq(truth_path, mesh);
    const auto roi = cfg.roi();

    // (regularizer, frame, file), sorted for a stable row order.
    std::vector<std::tuple<std::string, int, fs::path>> items;
    const auto scan = [&](const fs::path& dir) {
        for (const auto& e : fs::directory_iterator(dir))
            if (auto k = frame_index_of(e.path()))
                items.emplace_back(dir.filename().string(), *k, e.path());
    };
    if (fs::is_directory(measured)) {
        scan(measured);
        for (const auto& e : fs::directory_iterator(measured))
            if (e.is_directory())
                scan(e.path());
    } else {
        const int k = frame_index_of(measured).value_or(static_cast<int>(truth.size()) - 1);
        items.emplace_back(measured.parent_path().filename().string(), k, measured);
    }
    if (items.empty())
        fail(ErrorKind::not_found, "no dispfield files under " + measured.string());
    std::sort(items.begin(), items.end());

    bool all_defined = true;
    std::ostringstream os;
    os << metrics_header << '\n';
    for (const auto& [label, k, file] : items) {
        if (k == 0)
            continue; // the reference frame has no displacement to compare against
        if (k >= static_cast<int>(truth.size()))
            fail(ErrorKind::incompatible, file.string() + ": frame " + std::to_string(k) + " beyond the truth sequence");
        const NodalField m = load_dispfield(file, mesh);
        const auto rows = metric_table(truth[static_cast<std::size_t>(k)], m, roi);
        for (const auto& r : rows)
            all_defined = all_defined && r.defined;
        write_metric_rows(os, cfg.name, k, label, rows);
    }
    ensure_dir(out);
    write_text_atomic(Layout{out}.metrics(), os.str());
    return all_defined;
}

// ---------------------------------------------------------------------------
// sweep-alpha

struct SweepRow {
    std::string case_name;
    std::string regularizer;
    double alpha = 0.0;
    std::vector<MetricRow> metrics;
    int iterations = 0;
    bool converged = false;
    std::string status = "ok";

    double strain_total() const {
        for (const auto& m : metrics)
            if (m.name == "strain_total_pct")
                return m.value;
        return std::numeric_limits<double>::quiet_NaN();
    }
};

struct SweepArgmin {
    std::string regularizer;
    std::string case_name; // "average": geometric mean over cases
    double alpha = 0.0;
    double strain_total = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<SweepArgmin> argmins;
};

inline SweepResult sweep_alpha(const ExperimentConfig& cfg, int jobs = 1) {
    const auto& sc = cfg.sweep;
    const auto& specs = cfg.registration.regularizers;
    require(!specs.empty(), "sweep-alpha: no regularizers configured");
    const auto labels = regularizer_labels(specs);
    SweepResult out;

    for (const auto& c : sc.cases) {
        ExperimentConfig cc = cfg;
        if (c.e_inclusion)
            cc.phantom.e_inclusion = *c.e_inclusion;
        const SimulatedSequence s = simulate(cc, sc.pair_second + 1, {sc.pair_first, sc.pair_second}, jobs);
        const RfImage& i1 = *s.images[static_cast<std::size_t>(sc.pair_first)];
        const RfImage& i2 = *s.images[static_cast<std::size_t>(sc.pair_second)];
        const NodalField truth = pair_truth(s.forward_truth[static_cast<std::size_t>(sc.pair_first)],
                                            s.forward_truth[static_cast<std::size_t>(sc.pair_second)], s.mesh);
        const NodalField init = block_match_guess(i1, i2, NodalField(s.mesh), cfg.registration.block_match);
        const ImageMatch match(i1, i2, s.mesh);
        const auto roi = cc.roi();

        std::vector<std::pair<int, double>> tasks;
        for (std::size_t r = 0; r < specs.size(); ++r)
            for (double a : sc.alphas_for(specs[r].kind))
                tasks.emplace_back(static_cast<int>(r), a);
        std::vector<SweepRow> rows(tasks.size());
        parallel_for(static_cast<int>(tasks.size()), jobs, [&](int t) {
            const auto [r, a] = tasks[static_cast<std::size_t>(t)];
            SweepRow row{c.name, labels[static_cast<std::size_t>(r)], a, {}, 0, false, "ok"};
            try {
                const PairResult res = register_pair(match, init, specs[static_cast<std::size_t>(r)].with_alpha(a), cfg.registration.solver);
                row.metrics = metric_table(truth, res.u, roi);
                row.iterations = res.report.iterations;
                row.converged = res.report.converged;
            } catch (const Error& e) {
                // Extreme weights may legitimately fail; record them and move on.
                if (e.kind() != ErrorKind::regularization_too_weak && e.kind() != ErrorKind::divergence &&
                    e.kind() != ErrorKind::solver_failure)
                    fail(e.kind(), "case " + c.name + ", regularizer " + row.regularizer + ": " + e.what());
                row.status = std::string(error_tag(e.kind()));
            }
            rows[static_cast<std::size_t>(t)] = std::move(row);
        });
        out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    }

    for (const auto& label : labels) {
        double log_sum = 0.0;
        int found = 0;
        for (const auto& c : sc.cases) {
            const SweepRow* best = nullptr;
            for (const auto& r : out.rows)
                if (r.regularizer == label && r.case_name == c.name && r.status == "ok" && std::isfinite(r.strain_total()) &&
                    (!best || r.strain_total() < best->strain_total()))
                    best = &r;
            if (!best)
                continue;
            out.argmins.push_back({label, c.name, best->alpha, best->strain_total()});
            log_sum += std::log(best->alpha);
            ++found;
        }
        if (found > 0)
            out.argmins.push_back({label, "average", std::exp(log_sum / found), std::numeric_limits<double>::quiet_NaN()});
    }
    return out;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& s) {
    os << "case,regularizer,alpha,disp_x_pct,disp_y_pct,strain_xx_pct,strain_yy_pct,strain_total_pct,iterations,converged,status\n"
       << std::setprecision(17);
    for (const auto& r : s.rows) {
        const auto value = [&r](std::string_view name) {
            for (const auto& m : r.metrics)
                if (m.name == name)
                    return m.value;
            return std::numeric_limits<double>::quiet_NaN();
        };
        os << r.case_name << ',' << r.regularizer << ',' << r.alpha << ',' << value("disp_x_pct") << ',' << value("disp_y_pct") << ','
           << value("strain_xx_pct") << ',' << value("strain_yy_pct") << ',' << value("strain_total_pct") << ',' << r.iterations
           << ',' << (r.converged ? 1 : 0) << ',' << r.status << '\n';
    }
}

inline void write_sweep_argmin_csv(std::ostream& os, const SweepResult& s) {
    os << "regularizer,case,alpha,strain_total_pct\n" << std::setprecision(17);
    for (const auto& a : s.argmins)
        os << a.regularizer << ',' << a.case_name << ',' << a.alpha << ',' << a.strain_total << '\n';
}

inline SweepResult cmd_sweep_alpha(const ExperimentConfig& cfg, const fs::path& out, int jobs = 1) {
    SweepResult s = sweep_alpha(cfg, jobs);
    const Layout L{out};
    ensure_dir(out);
    write_atomic(L.sweep(), [&](std::ostream& os) { write_sweep_csv(os, s); });
    write_atomic(L.sweep_argmin(), [&](std::ostream& os) { write_sweep_argmin_csv(os, s); });
    return s;
}

// ---------------------------------------------------------------------------
// convert-rf

/// Raw input: frames back to back, each frame scan line after scan line, each
/// line `axial_samples` contiguous native-endian samples. Frames 0, stride,
/// 2 stride, ... are written as frame_000, frame_001, ...
inline int cmd_convert_rf(const ExperimentConfig& cfg, const fs::path& out) {
    if (!cfg.convert)
        fail(ErrorKind::config, "convert-rf: the config has no 'convert' section");
    const ConvertConfig& c = *cfg.convert;
    const std::size_t sample_size = c.sample_type == SampleType::float64 ? 8 : c.sample_type == SampleType::float32 ? 4 : 2;
    const std::size_t frame_values = static_cast<std::size_t>(c.axial_samples) * static_cast<std::size_t>(c.lines);
    if (!fs::exists(c.input))
        fail(ErrorKind::not_found, "no such file: " + c.input.string());
    const auto size = fs::file_size(c.input);
    if (size != frame_values * sample_size * static_cast<std::size_t>(c.frames))
        fail(ErrorKind::io, c.input.string() + ": size " + std::to_string(size) + " does not match " + std::to_string(c.frames) +
                                " frames of " + std::to_string(c.lines) + " x " + std::to_string(c.axial_samples) + " samples");
    auto is = open_input(c.input);
    const Layout L{out};
    ensure_dir(L.frames_dir());
    std::vector<char> buf(frame_values * sample_size);
    int written = 0;
    for (int f = 0; f < c.frames; ++f) {
        if (!is.read(buf.data(), static_cast<std::streamsize>(buf.size())))
            fail(ErrorKind::io, "truncated " + c.input.string());
        if (f % c.frame_stride != 0)
            continue;
        RfImage img(c.axial_samples, c.lines, c.axial_spacing_mm, c.lateral_spacing_mm, c.origin);
        for (int j = 0; j < c.lines; ++j)
            for (int i = 0; i < c.axial_samples; ++i) {
                const std::size_t at = (static_cast<std::size_t>(j) * c.axial_samples + i) * sample_size;
                double v = 0.0;
                if (c.sample_type == SampleType::float64) {
                    std::memcpy(&v, buf.data() + at, 8);
                } else if (c.sample_type == SampleType::float32) {
                    float x;
                    std::memcpy(&x, buf.data() + at, 4);
                    v = x;
                } else {
                    std::int16_t x;
                    std::memcpy(&x, buf.data() + at, 2);
                    v = x;
                }
                img.samples(i, j) = v;
            }
        save_rfimg_atomic(L.frame(written++), img);
    }
    return written;
}

} // namespace elastoreg
