#pragma once

// Brute-force reference for taint propagation: single-steps the original
// program and applies a cell-level rule to every instruction, tracking the
// set of source roots each register cell and memory byte depends on.
//
// The per-instruction effect table here is written independently of the
// library's descriptors.

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "vci/arch.hpp"
#include "vci/machine.hpp"

namespace vci::testing {

using RootSet = std::uint32_t;  // bit i = root i

struct RegisterEffect {
  ArchObjectSet src;
  ArchObjectSet dest;
};

/// Register-to-register effect of an instruction (memory excluded).
RegisterEffect oracle_register_effect(const Instruction& ins);

struct OracleState {
  std::array<RootSet, kCellCount> cells{};
  std::map<Address, RootSet> bytes;

  ArchObjectSet defined() const;
  friend bool operator==(const OracleState&, const OracleState&) = default;
};

/// Applies the stepping rule for one register-only instruction.
void oracle_step_registers(OracleState& s, const Instruction& ins);

class TaintOracle {
 public:
  explicit TaintOracle(bool address_taint = true) : address_taint_(address_taint) {}

  /// Roots are numbered in the order they are added.
  void add_memory_root(Address start, std::uint32_t length);
  void add_register_root(Reg r);

  /// Runs the machine to HLT, propagating before each instruction executes.
  void run(Machine& machine, std::uint64_t max_steps);

  const OracleState& state() const { return state_; }

 private:
  void apply(const Instruction& ins, const MachineState& before);
  RootSet roots(ArchObjectSet cells) const;
  RootSet read(Address a, std::uint32_t n) const;
  void write(Address a, std::uint32_t n, RootSet r);
  void set_cells(ArchObjectSet cells, RootSet r);

  bool address_taint_;
  unsigned next_root_ = 0;
  OracleState state_;
};

}  // namespace vci::testing
