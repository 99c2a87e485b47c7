#pragma once

// Random programs over the supported subset, laid out at 0x401000 with a data
// area at 0x402000 and a stack below 0x500000. EBP holds the data base and is
// never written; loops are counted with ECX and always terminate.

#include <random>
#include <string>
#include <vector>

#include "vci/machine.hpp"
#include "vci/regions.hpp"

namespace vci::testing {

inline constexpr Address kCodeBase = 0x401000;
inline constexpr Address kDataBase = 0x402000;
inline constexpr std::uint32_t kDataSize = 0x100;

struct GeneratorOptions {
  unsigned max_instructions = 50;  // NOP padding not counted
  /// Pads some loop bodies and forward skips to ~120 bytes, so code lands
  /// push their branches out of rel8 range.
  bool pad_branches = false;
  bool string_ops = true;
  bool subroutines = true;
};

struct MemorySource {
  Address start;
  std::uint32_t length;
};

struct GeneratedProgram {
  CodeImage image;
  MachineState initial;
  std::vector<MemorySource> memory_sources;
  std::vector<Reg> register_sources;
  std::vector<std::string> listing;  // one line per instruction, for failure reports
};

GeneratedProgram generate_program(std::mt19937& rng, const GeneratorOptions& options = {});

/// Register-only straight-line region of 1..max_len instructions, optionally
/// ending in a branch.
std::vector<Instruction> generate_register_region(std::mt19937& rng, unsigned max_len = 12);

}  // namespace vci::testing
