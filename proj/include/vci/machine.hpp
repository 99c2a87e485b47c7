#pragma once

// Deterministic interpreter for the supported IA-32 subset.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <unordered_map>

#include "vci/isa.hpp"

namespace vci {

namespace eflags {
inline constexpr std::uint32_t CF = 1u << 0;
inline constexpr std::uint32_t PF = 1u << 2;
inline constexpr std::uint32_t AF = 1u << 4;
inline constexpr std::uint32_t ZF = 1u << 6;
inline constexpr std::uint32_t SF = 1u << 7;
inline constexpr std::uint32_t DF = 1u << 10;
inline constexpr std::uint32_t OF = 1u << 11;
inline constexpr std::uint32_t kFixed = 1u << 1;
inline constexpr std::uint32_t kTracked = CF | PF | AF | ZF | SF | DF | OF;
}  // namespace eflags

bool condition_holds(Cond c, std::uint32_t flags);

/// Sparse byte-addressable memory in 4 KiB pages. In strict mode touching an
/// unmapped byte throws MemoryFault; in lenient mode pages appear zero-filled.
class Memory {
 public:
  static constexpr std::uint32_t kPageSize = 4096;

  explicit Memory(bool strict = true) : strict_(strict) {}

  void map(Address start, std::uint32_t size);
  bool is_mapped(Address a) const;
  bool strict() const { return strict_; }

  std::uint8_t read8(Address a) const;
  std::uint32_t read32(Address a) const;
  void write8(Address a, std::uint8_t v);
  void write32(Address a, std::uint32_t v);
  void write_bytes(Address a, std::span<const std::uint8_t> bytes);
  Bytes read_bytes(Address a, std::uint32_t size) const;

  /// Mapped pages, for state comparison.
  const std::map<Address, std::array<std::uint8_t, kPageSize>>& pages() const { return pages_; }

  friend bool operator==(const Memory& a, const Memory& b) { return a.pages_ == b.pages_; }

 private:
  std::array<std::uint8_t, kPageSize>* page(Address a, bool for_write);
  const std::array<std::uint8_t, kPageSize>* page(Address a) const;

  bool strict_;
  std::map<Address, std::array<std::uint8_t, kPageSize>> pages_;
};

struct MachineState {
  RegisterFile regs{};
  Address eip = 0;
  std::uint32_t flags = eflags::kFixed;
  Memory memory;
  bool halted = false;

  std::uint32_t& reg(Reg r) { return regs[reg_code(r)]; }
  std::uint32_t reg(Reg r) const { return regs[reg_code(r)]; }
  std::uint32_t read_reg(Reg r) const;
  void write_reg(Reg r, std::uint32_t v);
  bool flag(std::uint32_t mask) const { return (flags & mask) != 0; }
  void set_flag(std::uint32_t mask, bool on) { flags = on ? (flags | mask) : (flags & ~mask); }
};

/// Outcome of one step, used by tracers.
struct StepInfo {
  Instruction instr;
  Address from = 0;
  bool intercepted = false;  // a host stub or an instrumentation call ran
};

class Machine {
 public:
  using HostStub = std::function<void(Machine&)>;
  using LandHandler = std::function<void(Address site)>;

  explicit Machine(MachineState state) : state_(std::move(state)) {}

  MachineState& state() { return state_; }
  const MachineState& state() const { return state_; }

  /// Code at `address` is not executed; `stub` runs instead.
  void add_stub(Address address, HostStub stub) { stubs_[address] = std::move(stub); }
  bool has_stub(Address a) const { return stubs_.count(a) != 0; }

  /// CALL rel32 into `address` is intercepted: `handler` receives the call
  /// site and execution resumes after the call, with nothing pushed.
  void set_instrumentation(Address address, LandHandler handler) {
    instrumentation_ = address;
    land_handler_ = std::move(handler);
  }

  /// Executes one instruction. Throws UndecodableInstruction or MemoryFault.
  StepInfo step();

  /// Runs until HLT or until `max_steps` instructions ran (StepLimitExceeded).
  void run(std::uint64_t max_steps);

  std::uint64_t steps() const { return steps_; }

  /// Pops the return address and `arg_bytes` of arguments, then returns.
  void return_from_stub(std::uint32_t eax, std::uint32_t arg_bytes);

 private:
  const Instruction& fetch(Address a);
  void execute(const Instruction& ins);

  MachineState state_;
  std::unordered_map<Address, HostStub> stubs_;
  std::optional<Address> instrumentation_;
  LandHandler land_handler_;
  std::unordered_map<Address, Instruction> decode_cache_;
  std::uint64_t steps_ = 0;
};

}  // namespace vci
