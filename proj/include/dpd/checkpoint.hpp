#pragma once

#include <cstdint>
#include <filesystem>

#include "dpd/network.hpp"

namespace dpd {

// Little-endian binary layout:
//   8 bytes   magic "DPDCKPT\0"
//   u32       format version (1)
//   u32       byte length L of the network spec text, then L bytes
//   u32       entry count
//   per entry u32 name length, name ("<layer>.<role>"), u64 element count,
//             that many IEEE-754 binary64 values
// Entries are the network's parameters followed by its BN running statistics.
constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, Network& net);

// Loads into a network built from the same spec. Throws FormatError for a bad
// magic, an unsupported version, truncation, or any entry whose name or size
// disagrees with `net`.
void load_checkpoint(const std::filesystem::path& path, Network& net);

// Spec text stored in a checkpoint header (parse with parse_spec).
std::string checkpoint_spec_text(const std::filesystem::path& path);

}  // namespace dpd
