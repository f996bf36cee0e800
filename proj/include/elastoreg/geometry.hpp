#pragma once

#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

#include "elastoreg/mesh.hpp"

namespace elastoreg {

struct Rect {
    Vec2 min = Vec2::Zero();
    Vec2 max = Vec2::Zero();

    Vec2 size() const { return max - min; }
    double area() const { return size().x() * size().y(); }
    bool empty() const { return !(max.x() > min.x() && max.y() > min.y()); }
    bool contains(const Vec2& p) const {
        return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() && p.y() <= max.y();
    }
    Rect inflated(double margin) const {
        return {min - Vec2::Constant(margin), max + Vec2::Constant(margin)};
    }
};

struct Disk {
    Vec2 center = Vec2::Zero();
    double radius = 0.0;

    bool contains(const Vec2& p) const { return (p - center).squaredNorm() <= radius * radius; }
};

/// Seeded generator with output fixed by the algorithm (mt19937_64 plus
/// explicit uniform/normal transforms), so streams are identical across
/// standard library implementations.
class Random {
public:
    explicit Random(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal (Box-Muller, one value per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

/// Derives an independent stream seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace elastoreg
