#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "tsmixer/layers.hpp"

namespace tsmixer {

/// Binary parameter container, little-endian throughout:
///
///   magic      8 bytes  "TSMXPRM\0"
///   version    u32      (currently 1)
///   count      u32      number of tensors
///   prov_len   u32      length of the provenance string, then its bytes
///   count entries, each:
///     name_len u32, name bytes
///     trainable u8
///     rank     u32, then rank x u64 extents
///     offset   u64      element offset of this tensor in the data section
///   data       float64 values of every tensor, concatenated in entry order
inline constexpr std::uint32_t parameter_format_version = 1;

struct ParameterFile {
    ParameterSet params;
    std::string provenance;
};

void write_parameters(std::ostream& out, const ParameterSet& params, const std::string& provenance);
ParameterFile read_parameters(std::istream& in);

void save_parameters(const std::filesystem::path& path, const ParameterSet& params, const std::string& provenance);
ParameterFile load_parameters(const std::filesystem::path& path);

}  // namespace tsmixer
