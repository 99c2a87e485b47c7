#pragma once

// Byte-level codec for the supported IA-32 subset.
//
// The subset covers flat 32-bit code without SIB bytes, segment overrides or
// operand-size prefixes. Memory operands are [base + disp] or [disp32].

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vci {

using Address = std::uint32_t;
using Bytes = std::vector<std::uint8_t>;

enum class Reg : std::uint8_t {
  EAX, ECX, EDX, EBX, ESP, EBP, ESI, EDI,
  AX, CX, DX, BX, SP, BP, SI, DI,
  AL, CL, DL, BL, AH, CH, DH, BH,
};

constexpr unsigned reg_width(Reg r) {
  const auto v = static_cast<unsigned>(r);
  return v < 8 ? 4 : v < 16 ? 2 : 1;
}

/// The 3-bit register number used in ModRM and opcode+r encodings.
constexpr unsigned reg_code(Reg r) { return static_cast<unsigned>(r) & 7u; }

constexpr Reg reg32(unsigned code) { return static_cast<Reg>(code & 7u); }
constexpr Reg reg16(unsigned code) { return static_cast<Reg>(8 + (code & 7u)); }
constexpr Reg reg8(unsigned code) { return static_cast<Reg>(16 + (code & 7u)); }

/// Index (0..7, EAX..EDI) of the 32-bit register a named register lives in.
constexpr unsigned parent_reg_index(Reg r) {
  const auto v = static_cast<unsigned>(r);
  if (v < 16) return v & 7u;
  return (v - 16) & 3u;  // AL..BL -> 0..3, AH..BH -> 0..3
}

/// Byte offset inside the parent register (AH = 1, everything else 0).
constexpr unsigned reg_byte_offset(Reg r) {
  const auto v = static_cast<unsigned>(r);
  return (v >= 20) ? 1u : 0u;
}

std::string_view reg_name(Reg r);
std::optional<Reg> parse_reg(std::string_view name);

enum class Mnemonic : std::uint8_t {
  Mov, Add, Adc, Sub, Xor, And, Or, Cmp, Test,
  Inc, Dec, Shl, Shr,
  Push, Pop,
  Jmp, Jcc, Jecxz, Loop, Loope, Loopne, Call, Ret,
  Setcc, Cmovcc,
  Nop, Movsb, Stosb, Lodsb, Hlt,
};

std::string_view mnemonic_name(Mnemonic m);

/// Condition codes in encoding order (low nibble of 7x / 0F 8x / 0F 9x / 0F 4x).
enum class Cond : std::uint8_t { O, NO, B, AE, E, NE, BE, A, S, NS, P, NP, L, GE, LE, G };

std::string_view cond_suffix(Cond c);

enum class BranchForm : std::uint8_t { None, Rel8, Rel32, Indirect };

enum class OperandKind : std::uint8_t { None, Register, Immediate, Memory };

struct MemOperand {
  std::optional<Reg> base;  // 32-bit register or none for [disp32]
  std::int32_t disp = 0;
  std::uint8_t disp_size = 4;  // 0, 1 or 4 bytes as encoded
  friend bool operator==(const MemOperand&, const MemOperand&) = default;
};

struct Operand {
  OperandKind kind = OperandKind::None;
  Reg reg = Reg::EAX;
  std::uint32_t imm = 0;
  MemOperand mem{};
  std::uint8_t size = 0;  // access width in bytes

  static Operand make_reg(Reg r) {
    Operand o;
    o.kind = OperandKind::Register;
    o.reg = r;
    o.size = static_cast<std::uint8_t>(reg_width(r));
    return o;
  }
  static Operand make_imm(std::uint32_t v, std::uint8_t size) {
    Operand o;
    o.kind = OperandKind::Immediate;
    o.imm = v;
    o.size = size;
    return o;
  }
  static Operand make_mem(MemOperand m, std::uint8_t size) {
    Operand o;
    o.kind = OperandKind::Memory;
    o.mem = m;
    o.size = size;
    return o;
  }

  bool is_reg() const { return kind == OperandKind::Register; }
  bool is_imm() const { return kind == OperandKind::Immediate; }
  bool is_mem() const { return kind == OperandKind::Memory; }

  friend bool operator==(const Operand&, const Operand&) = default;
};

/// A decoded (or hand-built) instruction.
///
/// `opcode` and `escaped` pin down which of several equivalent encodings the
/// instruction uses, so encode(decode(bytes)) reproduces the input exactly.
/// For direct branches `target` is the absolute destination address.
struct Instruction {
  Address address = 0;
  Mnemonic mnemonic = Mnemonic::Nop;
  Cond cond = Cond::O;
  std::array<Operand, 2> ops{};
  std::uint8_t op_count = 0;
  std::uint8_t length = 0;
  BranchForm branch_form = BranchForm::None;
  Address target = 0;
  bool rep = false;
  std::uint8_t opcode = 0x90;
  bool escaped = false;  // 0F two-byte opcode

  std::span<const Operand> operands() const { return {ops.data(), op_count}; }

  const Operand* memory_operand() const {
    for (std::uint8_t i = 0; i < op_count; ++i)
      if (ops[i].is_mem()) return &ops[i];
    return nullptr;
  }

  bool is_string_op() const {
    return mnemonic == Mnemonic::Movsb || mnemonic == Mnemonic::Stosb ||
           mnemonic == Mnemonic::Lodsb;
  }

  bool is_direct_branch() const {
    return branch_form == BranchForm::Rel8 || branch_form == BranchForm::Rel32;
  }

  bool is_control_transfer() const {
    switch (mnemonic) {
      case Mnemonic::Jmp: case Mnemonic::Jcc: case Mnemonic::Jecxz:
      case Mnemonic::Loop: case Mnemonic::Loope: case Mnemonic::Loopne:
      case Mnemonic::Call: case Mnemonic::Ret: case Mnemonic::Hlt:
        return true;
      default:
        return false;
    }
  }

  /// Conditional branches and calls continue at the next instruction.
  bool falls_through() const {
    switch (mnemonic) {
      case Mnemonic::Jmp: case Mnemonic::Ret: case Mnemonic::Hlt:
        return false;
      default:
        return true;
    }
  }

  /// Explicit or implicit memory access (stack, string ops, indirect jumps).
  bool references_memory() const;

  Address next_address() const { return address + length; }

  /// Structural equality ignoring address, length and encoding choice.
  bool same_operation(const Instruction& other) const;
};

/// Decode one instruction starting at `offset` in `code`, whose first byte
/// lives at `base_address`.
Instruction decode(std::span<const std::uint8_t> code, std::size_t offset, Address base_address);

/// Encode an instruction at its `address`. Direct branches are encoded
/// relative to `address` using `branch_form`.
Bytes encode(const Instruction& instr);

/// Size in bytes that encode() would produce.
std::size_t encoded_size(const Instruction& instr);

enum class AccessKind : std::uint8_t { None = 0, Read = 1, Write = 2, ReadWrite = 3 };

std::string_view access_name(AccessKind k);

struct MemoryAccess {
  Address address = 0;
  std::uint16_t size = 0;
  AccessKind access = AccessKind::None;
  friend bool operator==(const MemoryAccess&, const MemoryAccess&) = default;
};

using RegisterFile = std::array<std::uint32_t, 8>;

/// Every memory access the instruction performs given a register file, in the
/// order they happen. String instructions report a single iteration.
std::vector<MemoryAccess> effective_address(const Instruction& instr, const RegisterFile& regs);

/// Intel-style text, e.g. "MOV ECX,DWORD PTR [0x401015]" or "JNZ 0x401005".
std::string to_string(const Instruction& instr);

/// Parse one line of Intel-style assembly into an instruction placed at
/// `address`, choosing the canonical (shortest) encoding. Branch operands are
/// absolute targets. Accepts forms like "MOV EBX,5", "PUSH 00401023",
/// "JNZ SHORT 00401005", "MOV DWORD PTR DS:[40101D],ECX", "ADD EAX,[EBX+8]".
Instruction assemble(std::string_view text, Address address);

/// Assemble a sequence of lines laid out back to back from `base`.
std::vector<Instruction> assemble_block(std::span<const std::string_view> lines, Address base);

Bytes encode_block(std::span<const Instruction> instrs);

/// Helpers used by the rewriter and by tests to build canonical instructions.
namespace make {
Instruction nop();
Instruction jmp(Address target, BranchForm form = BranchForm::Rel8);
Instruction jcc(Cond c, Address target, BranchForm form = BranchForm::Rel8);
Instruction call(Address target);
Instruction jmp_indirect(Address slot);
Instruction loop_family(Mnemonic m, Address target);
}  // namespace make

}  // namespace vci
