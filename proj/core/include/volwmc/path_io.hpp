#pragma once

#include <cstdint>
#include <filesystem>

#include "volwmc/wmc.hpp"

namespace volwmc::wmc {

// Binary layout, little-endian:
//   char[8] magic "VOLWMC\0\0", u32 version,
//   u32 tag (low 16 bits payload: 0 paths, 1 weights; high 16 bits dynamics: 0 Brownian, 1 SABR),
//   u64 nu, u64 M, f64 horizon, u64 seed, f64 sigma_prior,
//   then f64 data (nu * (M + 1) path values row by row, or nu weights).
inline constexpr std::uint32_t binary_version = 1;

// Identity of a path set as recorded next to weights and weight decoders.
struct PathBinding {
    std::uint64_t seed = 0;
    std::uint64_t n_paths = 0;
    std::uint64_t steps = 0;
    double horizon = 0.0;
    double sigma_prior = 0.0;
    PathKind kind = PathKind::Brownian;

    static PathBinding of(const PathSet& paths);
    bool operator==(const PathBinding&) const = default;
};

void save_paths(const PathSet& paths, const std::filesystem::path& file);
PathSet load_paths(const std::filesystem::path& file);

void save_weights(const WeightVector& weights, const PathBinding& binding, const std::filesystem::path& file);
WeightVector load_weights(const std::filesystem::path& file, PathBinding* binding = nullptr);

} // namespace volwmc::wmc
