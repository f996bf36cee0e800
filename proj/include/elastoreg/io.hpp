#pragma once

// Result file formats and atomic file output.
//
// "dispfield v1" (binary, native little-endian):
//   bytes "dispfield v1\n", uint64 mesh_hash, uint64 n_dofs, n_dofs float64
// "truthseq v1" (binary):
//   bytes "truthseq v1\n", uint64 mesh_hash, uint64 n_frames, uint64 n_dofs,
//   then n_frames * n_dofs float64 (frame-major, interleaved ux, uy per node)
// "report v1" (CSV): one row per Gauss-Newton iteration.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "elastoreg/error.hpp"
#include "elastoreg/image.hpp"
#include "elastoreg/mesh.hpp"
#include "elastoreg/registration.hpp"

namespace elastoreg {

/// Writes through a temporary file in the same directory, then renames.
inline void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill,
                         bool binary = true) {
    static std::atomic<unsigned> counter{0};
    std::filesystem::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    std::error_code ec;
    try {
        std::ofstream os(tmp, binary ? std::ios::binary : std::ios::openmode{});
        if (!os)
            fail(ErrorKind::io, "cannot write " + path.string());
        fill(os);
        os.flush();
        if (!os)
            fail(ErrorKind::io, "write failed for " + path.string());
    } catch (...) {
        std::filesystem::remove(tmp, ec);
        throw;
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        fail(ErrorKind::io, "cannot rename into " + path.string());
    }
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = true) {
    if (!std::filesystem::exists(path))
        fail(ErrorKind::not_found, "no such file: " + path.string());
    std::ifstream is(path, binary ? std::ios::binary : std::ios::openmode{});
    if (!is)
        fail(ErrorKind::io, "cannot open " + path.string());
    return is;
}

inline void write_dispfield(std::ostream& os, const NodalField& u) {
    os.write("dispfield v1\n", 13);
    detail::write_pod(os, u.mesh->hash());
    detail::write_pod(os, static_cast<std::uint64_t>(u.values.size()));
    os.write(reinterpret_cast<const char*>(u.values.data()), static_cast<std::streamsize>(u.values.size() * sizeof(double)));
}

/// Reads a field and checks it against `mesh`.
inline NodalField read_dispfield(std::istream& is, MeshPtr mesh, const std::string& name = "dispfield stream") {
    detail::expect_magic(is, "dispfield v1\n", name);
    const auto hash = detail::read_pod<std::uint64_t>(is, name);
    const auto n = detail::read_pod<std::uint64_t>(is, name);
    if (hash != mesh->hash() || n != static_cast<std::uint64_t>(mesh->num_dofs()))
        fail(ErrorKind::incompatible, name + ": mesh hash mismatch");
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
        fail(ErrorKind::io, "truncated " + name);
    return NodalField(std::move(mesh), std::move(v));
}

inline void save_dispfield(const std::filesystem::path& path, const NodalField& u) {
    write_atomic(path, [&](std::ostream& os) { write_dispfield(os, u); });
}

inline NodalField load_dispfield(const std::filesystem::path& path, MeshPtr mesh) {
    auto is = open_input(path);
    return read_dispfield(is, std::move(mesh), path.string());
}

inline void write_truthseq(std::ostream& os, const std::vector<NodalField>& frames) {
    require(!frames.empty(), "write_truthseq: no frames");
    const MeshPtr& mesh = frames.front().mesh;
    os.write("truthseq v1\n", 12);
    detail::write_pod(os, mesh->hash());
    detail::write_pod(os, static_cast<std::uint64_t>(frames.size()));
    detail::write_pod(os, static_cast<std::uint64_t>(mesh->num_dofs()));
    for (const auto& f : frames) {
        require(f.mesh->hash() == mesh->hash(), "write_truthseq: frames live on different meshes");
        os.write(reinterpret_cast<const char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(double)));
    }
}

inline std::vector<NodalField> read_truthseq(std::istream& is, MeshPtr mesh, const std::string& name = "truthseq stream") {
    detail::expect_magic(is, "truthseq v1\n", name);
    const auto hash = detail::read_pod<std::uint64_t>(is, name);
    const auto count = detail::read_pod<std::uint64_t>(is, name);
    const auto n = detail::read_pod<std::uint64_t>(is, name);
    if (hash != mesh->hash() || n != static_cast<std::uint64_t>(mesh->num_dofs()))
        fail(ErrorKind::incompatible, name + ": mesh hash mismatch");
    std::vector<NodalField> frames;
    for (std::uint64_t k = 0; k < count; ++k) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
            fail(ErrorKind::io, "truncated " + name);
        frames.emplace_back(mesh, std::move(v));
    }
    return frames;
}

inline void save_truthseq(const std::filesystem::path& path, const std::vector<NodalField>& frames) {
    write_atomic(path, [&](std::ostream& os) { write_truthseq(os, frames); });
}

inline std::vector<NodalField> load_truthseq(const std::filesystem::path& path, MeshPtr mesh) {
    auto is = open_input(path);
    return read_truthseq(is, std::move(mesh), path.string());
}

inline MeshPtr load_mesh_ptr(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        fail(ErrorKind::not_found, "no such file: " + path.string());
    return std::make_shared<const QuadMesh>(load_mesh(path.string()));
}

inline void save_mesh_atomic(const std::filesystem::path& path, const QuadMesh& mesh) {
    write_atomic(path, [&](std::ostream& os) { write_mesh(os, mesh); }, false);
}

inline void save_rfimg_atomic(const std::filesystem::path& path, const RfImage& img) {
    write_atomic(path, [&](std::ostream& os) { write_rfimg(os, img); });
}

inline RfImage load_rfimg_checked(const std::filesystem::path& path) {
    auto is = open_input(path);
    return read_rfimg(is, path.string());
}

inline constexpr const char* report_header = "regularizer,alpha,frame,iteration,objective,step_ratio,converged";

/// One row per iteration; the final objective (after the last update) has
/// iteration = iterations and an empty step ratio column.
inline void write_report_rows(std::ostream& os, std::string_view regularizer, double alpha, int frame,
                              const SolveReport& r) {
    os << std::setprecision(17);
    for (std::size_t i = 0; i < r.objective_trace.size(); ++i) {
        os << regularizer << ',' << alpha << ',' << frame << ',' << i << ',' << r.objective_trace[i] << ',';
        if (i < r.step_ratios.size())
            os << r.step_ratios[i];
        os << ',' << (r.converged ? 1 : 0) << '\n';
    }
}

} // namespace elastoreg
