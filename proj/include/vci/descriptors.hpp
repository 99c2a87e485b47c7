#pragma once

#include "vci/arch.hpp"
#include "vci/isa.hpp"

namespace vci {

/// Static source/destination sets of one instruction. Memory never appears in
/// src or dest; it is described by `mem` and the data_* / addr sets that the
/// taint engine applies to the accessed bytes.
struct InstructionDescriptor {
  ArchObjectSet src;
  ArchObjectSet dest;
  AccessKind mem = AccessKind::None;
  bool conditional_write = false;
  bool string_op = false;

  ArchObjectSet data_src;   // cells whose value reaches the memory write
  ArchObjectSet data_dest;  // cells that receive the result of a memory access
  ArchObjectSet addr;       // cells used to form the effective address

  friend bool operator==(const InstructionDescriptor&, const InstructionDescriptor&) = default;
};

/// Flags a condition code reads.
ArchObjectSet cond_flags(Cond c);

InstructionDescriptor describe(const Instruction& instr);

}  // namespace vci
