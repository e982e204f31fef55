#pragma once

#include <cstdint>
#include <string>

#include <fmt/format.h>

namespace tsmixer {

inline constexpr const char* version = "0.1.0";

/// Text of the header line carried by every output file.
inline std::string provenance(std::uint64_t seed) { return fmt::format("tsmixer {} seed={}", version, seed); }

}  // namespace tsmixer
