#include "volwmc/path_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "volwmc/errors.hpp"

namespace volwmc::wmc {

static_assert(std::endian::native == std::endian::little, "binary path format assumes a little-endian host");

namespace {

constexpr std::array<char, 8> magic{'V', 'O', 'L', 'W', 'M', 'C', '\0', '\0'};
constexpr std::uint32_t kind_paths = 0;
constexpr std::uint32_t kind_weights = 1;

struct Header {
    std::uint32_t payload = 0;
    std::uint64_t nu = 0;
    std::uint64_t m = 0;
    double horizon = 0.0;
    std::uint64_t seed = 0;
    double sigma_prior = 0.0;
    std::uint32_t path_kind = 0;
};

template <typename T>
void put(std::ostream& out, const T& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& where)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CorruptFileError(where + ": truncated header");
    return v;
}

void write_header(std::ostream& out, const Header& h)
{
    out.write(magic.data(), magic.size());
    put(out, binary_version);
    // The payload kind and the path dynamics share one u32: low 16 bits payload,
    // high 16 bits path kind.
    put(out, static_cast<std::uint32_t>(h.payload | (h.path_kind << 16)));
    put(out, h.nu);
    put(out, h.m);
    put(out, h.horizon);
    put(out, h.seed);
    put(out, h.sigma_prior);
}

Header read_header(std::istream& in, const std::string& where)
{
    std::array<char, 8> m{};
    if (!in.read(m.data(), m.size())) throw CorruptFileError(where + ": truncated header");
    if (m != magic) throw CorruptFileError(where + ": not a volwmc binary file");
    const auto version = get<std::uint32_t>(in, where);
    if (version != binary_version) {
        throw VersionError(where + ": binary version " + std::to_string(version) + ", expected " +
                           std::to_string(binary_version));
    }
    Header h;
    const auto tag = get<std::uint32_t>(in, where);
    h.payload = tag & 0xffffu;
    h.path_kind = tag >> 16;
    h.nu = get<std::uint64_t>(in, where);
    h.m = get<std::uint64_t>(in, where);
    h.horizon = get<double>(in, where);
    h.seed = get<std::uint64_t>(in, where);
    h.sigma_prior = get<double>(in, where);
    if (h.path_kind > 1) throw CorruptFileError(where + ": unknown path kind");
    return h;
}

void read_doubles(std::istream& in, double* dst, std::size_t n, const std::string& where)
{
    if (!in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(double)))) {
        throw CorruptFileError(where + ": truncated data");
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CorruptFileError(where + ": trailing bytes");
}

std::ofstream open_out(const std::filesystem::path& file)
{
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + file.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + file.string());
    return in;
}

} // namespace

PathBinding PathBinding::of(const PathSet& paths)
{
    return {paths.seed, paths.n_paths(), paths.steps(), paths.horizon(), paths.sigma_prior, paths.kind};
}

void save_paths(const PathSet& paths, const std::filesystem::path& file)
{
    paths.validate();
    auto out = open_out(file);
    write_header(out, {kind_paths, paths.n_paths(), paths.steps(), paths.horizon(), paths.seed, paths.sigma_prior,
                       static_cast<std::uint32_t>(paths.kind)});
    out.write(reinterpret_cast<const char*>(paths.values.data()),
              static_cast<std::streamsize>(paths.values.size() * sizeof(double)));
    if (!out) throw ConfigError("write failed for " + file.string());
}

PathSet load_paths(const std::filesystem::path& file)
{
    auto in = open_in(file);
    const std::string where = file.string();
    const Header h = read_header(in, where);
    if (h.payload != kind_paths) throw CorruptFileError(where + ": file holds weights, not paths");
    if (h.nu == 0 || h.m == 0 || !(h.horizon > 0.0)) throw CorruptFileError(where + ": invalid path dimensions");
    PathSet ps;
    ps.times = uniform_times(h.horizon, h.m);
    ps.values.resize(static_cast<Eigen::Index>(h.nu), static_cast<Eigen::Index>(h.m + 1));
    read_doubles(in, ps.values.data(), h.nu * (h.m + 1), where);
    ps.seed = h.seed;
    ps.sigma_prior = h.sigma_prior;
    ps.kind = static_cast<PathKind>(h.path_kind);
    return ps;
}

void save_weights(const WeightVector& weights, const PathBinding& binding, const std::filesystem::path& file)
{
    if (weights.size() != binding.n_paths) throw ConfigError("weight count does not match the bound path set");
    auto out = open_out(file);
    write_header(out, {kind_weights, binding.n_paths, binding.steps, binding.horizon, binding.seed,
                       binding.sigma_prior, static_cast<std::uint32_t>(binding.kind)});
    out.write(reinterpret_cast<const char*>(weights.p.data()),
              static_cast<std::streamsize>(weights.p.size() * sizeof(double)));
    if (!out) throw ConfigError("write failed for " + file.string());
}

WeightVector load_weights(const std::filesystem::path& file, PathBinding* binding)
{
    auto in = open_in(file);
    const std::string where = file.string();
    const Header h = read_header(in, where);
    if (h.payload != kind_weights) throw CorruptFileError(where + ": file holds paths, not weights");
    if (h.nu == 0) throw CorruptFileError(where + ": empty weight vector");
    WeightVector w;
    w.p.resize(static_cast<Eigen::Index>(h.nu));
    read_doubles(in, w.p.data(), h.nu, where);
    if (binding) *binding = {h.seed, h.nu, h.m, h.horizon, h.sigma_prior, static_cast<PathKind>(h.path_kind)};
    return w;
}

} // namespace volwmc::wmc
