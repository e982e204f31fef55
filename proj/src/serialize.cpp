#include "tsmixer/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include <fmt/format.h>

#include "tsmixer/errors.hpp"

namespace tsmixer {

static_assert(std::endian::native == std::endian::little, "parameter container assumes a little-endian host");

namespace {

constexpr std::array<char, 8> magic{'T', 'S', 'M', 'X', 'P', 'R', 'M', '\0'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(ErrorKind::parse, "truncated parameter file");
    return v;
}

std::string get_string(std::istream& in) {
    const auto n = get<std::uint32_t>(in);
    if (n > (1u << 20)) throw Error(ErrorKind::parse, "implausible string length in parameter file");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw Error(ErrorKind::parse, "truncated parameter file");
    return s;
}

}  // namespace

void write_parameters(std::ostream& out, const ParameterSet& params, const std::string& provenance) {
    out.write(magic.data(), magic.size());
    put<std::uint32_t>(out, parameter_format_version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(provenance.size()));
    out.write(provenance.data(), static_cast<std::streamsize>(provenance.size()));
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamId id{i};
        const std::string& name = params.name(id);
        const Tensor& t = params.value(id);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint8_t>(out, params.trainable(id) ? 1 : 0);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape().dims()) put<std::uint64_t>(out, d);
        put<std::uint64_t>(out, offset);
        offset += t.size();
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& t = params.value(ParamId{i});
        out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw Error(ErrorKind::io, "failed writing parameter container");
}

ParameterFile read_parameters(std::istream& in) {
    std::array<char, 8> head{};
    in.read(head.data(), head.size());
    if (!in || head != magic) throw Error(ErrorKind::parse, "not a parameter container (bad magic)");
    const auto version = get<std::uint32_t>(in);
    if (version != parameter_format_version) {
        throw Error(ErrorKind::parse, fmt::format("unsupported parameter container version {}", version));
    }
    const auto count = get<std::uint32_t>(in);
    ParameterFile file;
    file.provenance = get_string(in);

    struct Entry {
        std::string name;
        bool trainable;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    std::uint64_t expected = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        e.name = get_string(in);
        e.trainable = get<std::uint8_t>(in) != 0;
        const auto rank = get<std::uint32_t>(in);
        if (rank > Shape::max_rank) throw Error(ErrorKind::parse, fmt::format("tensor '{}' has rank {}", e.name, rank));
        std::array<std::size_t, 3> dims{};
        for (std::uint32_t r = 0; r < rank; ++r) dims[r] = static_cast<std::size_t>(get<std::uint64_t>(in));
        e.shape = Shape(std::span<const std::size_t>(dims.data(), rank));
        e.offset = get<std::uint64_t>(in);
        if (e.offset != expected) throw Error(ErrorKind::parse, fmt::format("tensor '{}' has a bad offset", e.name));
        expected += e.shape.numel();
        entries.push_back(std::move(e));
    }
    for (auto& e : entries) {
        std::vector<double> data(e.shape.numel());
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw Error(ErrorKind::parse, fmt::format("truncated data for tensor '{}'", e.name));
        file.params.add(std::move(e.name), Tensor(e.shape, std::move(data)), e.trainable);
    }
    return file;
}

void save_parameters(const std::filesystem::path& path, const ParameterSet& params, const std::string& provenance) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, fmt::format("cannot open {} for writing", path.string()));
    write_parameters(out, params, provenance);
}

ParameterFile load_parameters(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open {}", path.string()));
    return read_parameters(in);
}

}  // namespace tsmixer
