#include "vci/isa.hpp"

#include <cstdio>

#include "vci/error.hpp"

namespace vci {

namespace {

// ALU group index in ModRM /n and in the 00..3F opcode rows.
// SBB (3) and the BCD/segment opcodes are outside the subset.
constexpr std::optional<Mnemonic> alu_from_index(unsigned n) {
  switch (n) {
    case 0: return Mnemonic::Add;
    case 1: return Mnemonic::Or;
    case 2: return Mnemonic::Adc;
    case 4: return Mnemonic::And;
    case 5: return Mnemonic::Sub;
    case 6: return Mnemonic::Xor;
    case 7: return Mnemonic::Cmp;
    default: return std::nullopt;
  }
}

constexpr int alu_index(Mnemonic m) {
  switch (m) {
    case Mnemonic::Add: return 0;
    case Mnemonic::Or: return 1;
    case Mnemonic::Adc: return 2;
    case Mnemonic::And: return 4;
    case Mnemonic::Sub: return 5;
    case Mnemonic::Xor: return 6;
    case Mnemonic::Cmp: return 7;
    default: return -1;
  }
}

constexpr bool fits_i8(std::int64_t v) { return v >= -128 && v <= 127; }

class Reader {
 public:
  Reader(std::span<const std::uint8_t> code, std::size_t offset, Address base)
      : code_(code), start_(offset), pos_(offset), base_(base) {}

  std::uint8_t u8() {
    if (pos_ >= code_.size())
      throw Error(ErrorCode::TruncatedInstruction, "at " + hex(base_ + start_));
    return code_[pos_++];
  }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::size_t consumed() const { return pos_ - start_; }
  Address address() const { return base_ + static_cast<Address>(start_); }

  [[noreturn]] void unsupported(const char* what) const {
    throw Error(ErrorCode::UnsupportedOpcode, std::string(what) + " at " + hex(address()));
  }

  static std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
    return buf;
  }

 private:
  std::span<const std::uint8_t> code_;
  std::size_t start_;
  std::size_t pos_;
  Address base_;
};

struct ModRM {
  unsigned mod = 0;
  unsigned reg = 0;
  unsigned rm = 0;
};

ModRM read_modrm(Reader& in) {
  const std::uint8_t b = in.u8();
  return {static_cast<unsigned>(b >> 6), static_cast<unsigned>((b >> 3) & 7), static_cast<unsigned>(b & 7)};
}

// Decodes the r/m half of a ModRM byte. `width` selects 32- or 8-bit
// registers for mod == 3.
Operand read_rm(Reader& in, const ModRM& m, unsigned width) {
  if (m.mod == 3)
    return Operand::make_reg(width == 1 ? reg8(m.rm) : reg32(m.rm));
  if (m.rm == 4) in.unsupported("SIB addressing");
  MemOperand mem;
  if (m.mod == 0 && m.rm == 5) {
    mem.base = std::nullopt;
    mem.disp = static_cast<std::int32_t>(in.u32());
    mem.disp_size = 4;
  } else {
    mem.base = reg32(m.rm);
    if (m.mod == 0) {
      mem.disp = 0;
      mem.disp_size = 0;
    } else if (m.mod == 1) {
      mem.disp = in.i8();
      mem.disp_size = 1;
    } else {
      mem.disp = static_cast<std::int32_t>(in.u32());
      mem.disp_size = 4;
    }
  }
  return Operand::make_mem(mem, static_cast<std::uint8_t>(width));
}

Operand reg_operand(unsigned code, unsigned width) {
  return Operand::make_reg(width == 1 ? reg8(code) : reg32(code));
}

void set2(Instruction& ins, Operand a, Operand b) {
  ins.ops[0] = a;
  ins.ops[1] = b;
  ins.op_count = 2;
}

void set1(Instruction& ins, Operand a) {
  ins.ops[0] = a;
  ins.op_count = 1;
}

void set_rel(Instruction& ins, Reader& in, BranchForm form) {
  std::int32_t rel = form == BranchForm::Rel8 ? in.i8() : static_cast<std::int32_t>(in.u32());
  ins.branch_form = form;
  // Target is relative to the end of the instruction; length is final here.
  ins.target = ins.address + static_cast<Address>(in.consumed()) + static_cast<Address>(rel);
}

}  // namespace

Instruction decode(std::span<const std::uint8_t> code, std::size_t offset, Address base_address) {
  if (offset >= code.size())
    throw Error(ErrorCode::TruncatedInstruction, "offset past end of code");
  Reader in(code, offset, base_address);
  Instruction ins;
  ins.address = base_address + static_cast<Address>(offset);

  std::uint8_t op = in.u8();
  if (op == 0xF3) {
    ins.rep = true;
    op = in.u8();
    if (op != 0xA4 && op != 0xAA && op != 0xAC) in.unsupported("REP prefix on non-string opcode");
  }
  ins.opcode = op;

  if (op == 0x0F) {
    ins.escaped = true;
    const std::uint8_t op2 = in.u8();
    ins.opcode = op2;
    if (op2 >= 0x80 && op2 <= 0x8F) {
      ins.mnemonic = Mnemonic::Jcc;
      ins.cond = static_cast<Cond>(op2 & 0xF);
      set_rel(ins, in, BranchForm::Rel32);
    } else if (op2 >= 0x90 && op2 <= 0x9F) {
      const ModRM m = read_modrm(in);
      if (m.mod != 3 || m.reg != 0) in.unsupported("SETcc form");
      ins.mnemonic = Mnemonic::Setcc;
      ins.cond = static_cast<Cond>(op2 & 0xF);
      set1(ins, reg_operand(m.rm, 1));
    } else if (op2 >= 0x40 && op2 <= 0x4F) {
      const ModRM m = read_modrm(in);
      if (m.mod != 3) in.unsupported("CMOVcc memory form");
      ins.mnemonic = Mnemonic::Cmovcc;
      ins.cond = static_cast<Cond>(op2 & 0xF);
      set2(ins, reg_operand(m.reg, 4), reg_operand(m.rm, 4));
    } else {
      in.unsupported("two-byte opcode");
    }
    ins.length = static_cast<std::uint8_t>(in.consumed());
    return ins;
  }

  if (op < 0x40 && (op & 7) < 6) {
    const auto mn = alu_from_index(op >> 3);
    if (!mn) in.unsupported("opcode");
    ins.mnemonic = *mn;
    const unsigned width = (op & 1) ? 4 : 1;
    switch (op & 7) {
      case 0: case 1: {
        const ModRM m = read_modrm(in);
        set2(ins, read_rm(in, m, width), reg_operand(m.reg, width));
        break;
      }
      case 2: case 3: {
        const ModRM m = read_modrm(in);
        const Operand rm = read_rm(in, m, width);
        set2(ins, reg_operand(m.reg, width), rm);
        break;
      }
      case 4:
        set2(ins, Operand::make_reg(Reg::AL), Operand::make_imm(in.u8(), 1));
        break;
      case 5:
        set2(ins, Operand::make_reg(Reg::EAX), Operand::make_imm(in.u32(), 4));
        break;
    }
  } else if (op >= 0x40 && op <= 0x4F) {
    ins.mnemonic = op < 0x48 ? Mnemonic::Inc : Mnemonic::Dec;
    set1(ins, Operand::make_reg(reg32(op & 7)));
  } else if (op >= 0x50 && op <= 0x57) {
    ins.mnemonic = Mnemonic::Push;
    set1(ins, Operand::make_reg(reg32(op & 7)));
  } else if (op >= 0x58 && op <= 0x5F) {
    ins.mnemonic = Mnemonic::Pop;
    set1(ins, Operand::make_reg(reg32(op & 7)));
  } else if (op == 0x68) {
    ins.mnemonic = Mnemonic::Push;
    set1(ins, Operand::make_imm(in.u32(), 4));
  } else if (op == 0x6A) {
    ins.mnemonic = Mnemonic::Push;
    set1(ins, Operand::make_imm(static_cast<std::uint32_t>(static_cast<std::int32_t>(in.i8())), 4));
  } else if (op >= 0x70 && op <= 0x7F) {
    ins.mnemonic = Mnemonic::Jcc;
    ins.cond = static_cast<Cond>(op & 0xF);
    set_rel(ins, in, BranchForm::Rel8);
  } else if (op == 0x80 || op == 0x81 || op == 0x83) {
    const ModRM m = read_modrm(in);
    const auto mn = alu_from_index(m.reg);
    if (!mn) in.unsupported("ALU group extension");
    ins.mnemonic = *mn;
    const unsigned width = op == 0x80 ? 1 : 4;
    const Operand rm = read_rm(in, m, width);
    std::uint32_t imm = 0;
    if (op == 0x80) imm = in.u8();
    else if (op == 0x81) imm = in.u32();
    else imm = static_cast<std::uint32_t>(static_cast<std::int32_t>(in.i8()));
    set2(ins, rm, Operand::make_imm(imm, static_cast<std::uint8_t>(width)));
  } else if (op == 0x84 || op == 0x85) {
    const unsigned width = op == 0x85 ? 4 : 1;
    const ModRM m = read_modrm(in);
    ins.mnemonic = Mnemonic::Test;
    set2(ins, read_rm(in, m, width), reg_operand(m.reg, width));
  } else if (op >= 0x88 && op <= 0x8B) {
    const unsigned width = (op & 1) ? 4 : 1;
    const ModRM m = read_modrm(in);
    ins.mnemonic = Mnemonic::Mov;
    const Operand rm = read_rm(in, m, width);
    if (op <= 0x89) set2(ins, rm, reg_operand(m.reg, width));
    else set2(ins, reg_operand(m.reg, width), rm);
  } else if (op == 0x90) {
    ins.mnemonic = Mnemonic::Nop;
  } else if (op >= 0xA0 && op <= 0xA3) {
    const unsigned width = (op & 1) ? 4 : 1;
    ins.mnemonic = Mnemonic::Mov;
    MemOperand mem{std::nullopt, static_cast<std::int32_t>(in.u32()), 4};
    const Operand acc = Operand::make_reg(width == 4 ? Reg::EAX : Reg::AL);
    const Operand moffs = Operand::make_mem(mem, static_cast<std::uint8_t>(width));
    if (op <= 0xA1) set2(ins, acc, moffs);
    else set2(ins, moffs, acc);
  } else if (op == 0xA4) {
    ins.mnemonic = Mnemonic::Movsb;
  } else if (op == 0xAA) {
    ins.mnemonic = Mnemonic::Stosb;
  } else if (op == 0xAC) {
    ins.mnemonic = Mnemonic::Lodsb;
  } else if (op == 0xA8) {
    ins.mnemonic = Mnemonic::Test;
    set2(ins, Operand::make_reg(Reg::AL), Operand::make_imm(in.u8(), 1));
  } else if (op == 0xA9) {
    ins.mnemonic = Mnemonic::Test;
    set2(ins, Operand::make_reg(Reg::EAX), Operand::make_imm(in.u32(), 4));
  } else if (op >= 0xB0 && op <= 0xB7) {
    ins.mnemonic = Mnemonic::Mov;
    set2(ins, Operand::make_reg(reg8(op & 7)), Operand::make_imm(in.u8(), 1));
  } else if (op >= 0xB8 && op <= 0xBF) {
    ins.mnemonic = Mnemonic::Mov;
    set2(ins, Operand::make_reg(reg32(op & 7)), Operand::make_imm(in.u32(), 4));
  } else if (op == 0xC1) {
    const ModRM m = read_modrm(in);
    if (m.mod != 3 || (m.reg != 4 && m.reg != 5)) in.unsupported("shift form");
    ins.mnemonic = m.reg == 4 ? Mnemonic::Shl : Mnemonic::Shr;
    set2(ins, reg_operand(m.rm, 4), Operand::make_imm(in.u8(), 1));
  } else if (op == 0xC3) {
    ins.mnemonic = Mnemonic::Ret;
  } else if (op == 0xC6 || op == 0xC7) {
    const unsigned width = op == 0xC7 ? 4 : 1;
    const ModRM m = read_modrm(in);
    if (m.reg != 0) in.unsupported("C6/C7 extension");
    ins.mnemonic = Mnemonic::Mov;
    const Operand rm = read_rm(in, m, width);
    const std::uint32_t imm = width == 4 ? in.u32() : in.u8();
    set2(ins, rm, Operand::make_imm(imm, static_cast<std::uint8_t>(width)));
  } else if (op >= 0xE0 && op <= 0xE3) {
    static constexpr Mnemonic kLoops[] = {Mnemonic::Loopne, Mnemonic::Loope, Mnemonic::Loop, Mnemonic::Jecxz};
    ins.mnemonic = kLoops[op - 0xE0];
    set_rel(ins, in, BranchForm::Rel8);
  } else if (op == 0xE8) {
    ins.mnemonic = Mnemonic::Call;
    set_rel(ins, in, BranchForm::Rel32);
  } else if (op == 0xE9) {
    ins.mnemonic = Mnemonic::Jmp;
    set_rel(ins, in, BranchForm::Rel32);
  } else if (op == 0xEB) {
    ins.mnemonic = Mnemonic::Jmp;
    set_rel(ins, in, BranchForm::Rel8);
  } else if (op == 0xF4) {
    ins.mnemonic = Mnemonic::Hlt;
  } else if (op == 0xF6 || op == 0xF7) {
    const unsigned width = op == 0xF7 ? 4 : 1;
    const ModRM m = read_modrm(in);
    if (m.reg != 0) in.unsupported("F6/F7 extension");
    ins.mnemonic = Mnemonic::Test;
    const Operand rm = read_rm(in, m, width);
    const std::uint32_t imm = width == 4 ? in.u32() : in.u8();
    set2(ins, rm, Operand::make_imm(imm, static_cast<std::uint8_t>(width)));
  } else if (op == 0xFF) {
    const ModRM m = read_modrm(in);
    if ((m.reg != 2 && m.reg != 4) || m.mod != 0 || m.rm != 5) in.unsupported("FF extension");
    ins.mnemonic = m.reg == 2 ? Mnemonic::Call : Mnemonic::Jmp;
    ins.branch_form = BranchForm::Indirect;
    set1(ins, read_rm(in, m, 4));
  } else {
    in.unsupported("opcode");
  }

  ins.length = static_cast<std::uint8_t>(in.consumed());
  return ins;
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

class Writer {
 public:
  void u8(std::uint8_t b) { out_.push_back(b); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  Bytes out_;
};

[[noreturn]] void unencodable(const Instruction& ins, const char* why) {
  throw Error(ErrorCode::Unencodable, std::string(why) + ": " + to_string(ins));
}

void write_modrm(Writer& w, const Instruction& ins, unsigned reg_field, const Operand& rm) {
  if (rm.is_reg()) {
    w.u8(static_cast<std::uint8_t>(0xC0 | (reg_field << 3) | reg_code(rm.reg)));
    return;
  }
  if (!rm.is_mem()) unencodable(ins, "r/m operand must be register or memory");
  const MemOperand& m = rm.mem;
  if (!m.base) {
    if (m.disp_size != 4) unencodable(ins, "absolute address needs disp32");
    w.u8(static_cast<std::uint8_t>((reg_field << 3) | 5));
    w.u32(static_cast<std::uint32_t>(m.disp));
    return;
  }
  if (reg_width(*m.base) != 4) unencodable(ins, "base must be a 32-bit register");
  const unsigned base = reg_code(*m.base);
  if (base == 4) unencodable(ins, "ESP base needs SIB");
  switch (m.disp_size) {
    case 0:
      if (base == 5 || m.disp != 0) unencodable(ins, "no-displacement form");
      w.u8(static_cast<std::uint8_t>((reg_field << 3) | base));
      break;
    case 1:
      if (!fits_i8(m.disp)) unencodable(ins, "disp8 out of range");
      w.u8(static_cast<std::uint8_t>(0x40 | (reg_field << 3) | base));
      w.u8(static_cast<std::uint8_t>(m.disp));
      break;
    case 4:
      w.u8(static_cast<std::uint8_t>(0x80 | (reg_field << 3) | base));
      w.u32(static_cast<std::uint32_t>(m.disp));
      break;
    default:
      unencodable(ins, "displacement size");
  }
}

const Operand& op_at(const Instruction& ins, std::size_t i) {
  if (i >= ins.op_count) unencodable(ins, "missing operand");
  return ins.ops[i];
}

void write_rel(Writer& w, const Instruction& ins, std::size_t total_length) {
  const std::int64_t rel = static_cast<std::int64_t>(static_cast<std::int32_t>(
      ins.target - (ins.address + static_cast<Address>(total_length))));
  if (ins.branch_form == BranchForm::Rel8) {
    if (!fits_i8(rel))
      throw Error(ErrorCode::DisplacementOverflow, to_string(ins));
    w.u8(static_cast<std::uint8_t>(rel));
  } else {
    w.u32(static_cast<std::uint32_t>(rel));
  }
}

Bytes encode_branch(const Instruction& ins) {
  Writer w;
  const bool short_form = ins.branch_form == BranchForm::Rel8;
  switch (ins.mnemonic) {
    case Mnemonic::Jmp:
      w.u8(short_form ? 0xEB : 0xE9);
      write_rel(w, ins, short_form ? 2 : 5);
      break;
    case Mnemonic::Jcc:
      if (short_form) {
        w.u8(static_cast<std::uint8_t>(0x70 | static_cast<unsigned>(ins.cond)));
        write_rel(w, ins, 2);
      } else {
        w.u8(0x0F);
        w.u8(static_cast<std::uint8_t>(0x80 | static_cast<unsigned>(ins.cond)));
        write_rel(w, ins, 6);
      }
      break;
    case Mnemonic::Call:
      if (short_form) unencodable(ins, "CALL has no rel8 form");
      w.u8(0xE8);
      write_rel(w, ins, 5);
      break;
    case Mnemonic::Loopne: case Mnemonic::Loope: case Mnemonic::Loop: case Mnemonic::Jecxz: {
      if (!short_form) unencodable(ins, "LOOP/JECXZ have only rel8 forms");
      static constexpr std::uint8_t kOps[] = {0xE2, 0xE1, 0xE0, 0xE3};
      const int idx = ins.mnemonic == Mnemonic::Loop ? 0 : ins.mnemonic == Mnemonic::Loope ? 1
                      : ins.mnemonic == Mnemonic::Loopne ? 2 : 3;
      w.u8(kOps[idx]);
      write_rel(w, ins, 2);
      break;
    }
    default:
      unencodable(ins, "not a branch");
  }
  return w.take();
}

}  // namespace

Bytes encode(const Instruction& ins) {
  if (ins.is_direct_branch()) return encode_branch(ins);

  Writer w;
  const std::uint8_t op = ins.opcode;

  if (ins.escaped) {
    w.u8(0x0F);
    switch (ins.mnemonic) {
      case Mnemonic::Setcc: {
        const Operand& d = op_at(ins, 0);
        if (!d.is_reg() || reg_width(d.reg) != 1) unencodable(ins, "SETcc needs r8");
        w.u8(static_cast<std::uint8_t>(0x90 | static_cast<unsigned>(ins.cond)));
        write_modrm(w, ins, 0, d);
        return w.take();
      }
      case Mnemonic::Cmovcc: {
        const Operand& d = op_at(ins, 0);
        const Operand& s = op_at(ins, 1);
        if (!d.is_reg() || !s.is_reg() || reg_width(d.reg) != 4 || reg_width(s.reg) != 4)
          unencodable(ins, "CMOVcc needs r32,r32");
        w.u8(static_cast<std::uint8_t>(0x40 | static_cast<unsigned>(ins.cond)));
        write_modrm(w, ins, reg_code(d.reg), s);
        return w.take();
      }
      default:
        unencodable(ins, "escaped opcode");
    }
  }

  if (ins.rep) w.u8(0xF3);

  switch (ins.mnemonic) {
    case Mnemonic::Nop: w.u8(0x90); return w.take();
    case Mnemonic::Hlt: w.u8(0xF4); return w.take();
    case Mnemonic::Ret: w.u8(0xC3); return w.take();
    case Mnemonic::Movsb: w.u8(0xA4); return w.take();
    case Mnemonic::Stosb: w.u8(0xAA); return w.take();
    case Mnemonic::Lodsb: w.u8(0xAC); return w.take();
    default: break;
  }
  if (ins.rep) unencodable(ins, "REP on non-string instruction");

  switch (ins.mnemonic) {
    case Mnemonic::Inc:
    case Mnemonic::Dec: {
      const Operand& r = op_at(ins, 0);
      if (!r.is_reg() || reg_width(r.reg) != 4) unencodable(ins, "INC/DEC need r32");
      w.u8(static_cast<std::uint8_t>((ins.mnemonic == Mnemonic::Inc ? 0x40 : 0x48) | reg_code(r.reg)));
      return w.take();
    }
    case Mnemonic::Push: {
      const Operand& s = op_at(ins, 0);
      if (s.is_reg()) {
        if (reg_width(s.reg) != 4) unencodable(ins, "PUSH needs r32");
        w.u8(static_cast<std::uint8_t>(0x50 | reg_code(s.reg)));
      } else if (s.is_imm()) {
        if (op == 0x6A) {
          if (!fits_i8(static_cast<std::int32_t>(s.imm))) unencodable(ins, "PUSH imm8 range");
          w.u8(0x6A);
          w.u8(static_cast<std::uint8_t>(s.imm));
        } else {
          w.u8(0x68);
          w.u32(s.imm);
        }
      } else {
        unencodable(ins, "PUSH memory");
      }
      return w.take();
    }
    case Mnemonic::Pop: {
      const Operand& d = op_at(ins, 0);
      if (!d.is_reg() || reg_width(d.reg) != 4) unencodable(ins, "POP needs r32");
      w.u8(static_cast<std::uint8_t>(0x58 | reg_code(d.reg)));
      return w.take();
    }
    case Mnemonic::Jmp:
    case Mnemonic::Call: {
      if (ins.branch_form != BranchForm::Indirect) unencodable(ins, "branch form");
      const Operand& m = op_at(ins, 0);
      if (!m.is_mem() || m.mem.base) unencodable(ins, "indirect branch needs [disp32]");
      w.u8(0xFF);
      write_modrm(w, ins, ins.mnemonic == Mnemonic::Call ? 2 : 4, m);
      return w.take();
    }
    case Mnemonic::Shl:
    case Mnemonic::Shr: {
      const Operand& d = op_at(ins, 0);
      const Operand& c = op_at(ins, 1);
      if (!d.is_reg() || reg_width(d.reg) != 4 || !c.is_imm()) unencodable(ins, "shift form");
      w.u8(0xC1);
      write_modrm(w, ins, ins.mnemonic == Mnemonic::Shl ? 4 : 5, d);
      w.u8(static_cast<std::uint8_t>(c.imm));
      return w.take();
    }
    default:
      break;
  }

  const Operand& a = op_at(ins, 0);
  const Operand& b = op_at(ins, 1);
  const unsigned width = a.size;
  if (width != 1 && width != 4) unencodable(ins, "operand size");
  if (b.size != width) unencodable(ins, "operand size mismatch");

  if (ins.mnemonic == Mnemonic::Mov) {
    if (op >= 0xA0 && op <= 0xA3) {
      const bool load = op <= 0xA1;
      const Operand& acc = load ? a : b;
      const Operand& mem = load ? b : a;
      if (!acc.is_reg() || reg_code(acc.reg) != 0 || !mem.is_mem() || mem.mem.base)
        unencodable(ins, "moffs form");
      w.u8(op);
      w.u32(static_cast<std::uint32_t>(mem.mem.disp));
      return w.take();
    }
    if (b.is_imm()) {
      if (a.is_reg() && (op & 0xF0) == 0xB0) {
        w.u8(static_cast<std::uint8_t>((width == 4 ? 0xB8 : 0xB0) | reg_code(a.reg)));
      } else {
        w.u8(width == 4 ? 0xC7 : 0xC6);
        write_modrm(w, ins, 0, a);
      }
      if (width == 4) w.u32(b.imm);
      else w.u8(static_cast<std::uint8_t>(b.imm));
      return w.take();
    }
    if (!b.is_reg() && !a.is_reg()) unencodable(ins, "MOV needs a register operand");
    const bool to_rm = b.is_reg() && (a.is_mem() || op == 0x88 || op == 0x89);
    if (to_rm) {
      w.u8(width == 4 ? 0x89 : 0x88);
      write_modrm(w, ins, reg_code(b.reg), a);
    } else {
      w.u8(width == 4 ? 0x8B : 0x8A);
      write_modrm(w, ins, reg_code(a.reg), b);
    }
    return w.take();
  }

  if (ins.mnemonic == Mnemonic::Test) {
    if (b.is_imm()) {
      if (a.is_reg() && reg_code(a.reg) == 0 && (op == 0xA8 || op == 0xA9)) {
        w.u8(width == 4 ? 0xA9 : 0xA8);
      } else {
        w.u8(width == 4 ? 0xF7 : 0xF6);
        write_modrm(w, ins, 0, a);
      }
      if (width == 4) w.u32(b.imm);
      else w.u8(static_cast<std::uint8_t>(b.imm));
      return w.take();
    }
    if (!b.is_reg()) unencodable(ins, "TEST form");
    w.u8(width == 4 ? 0x85 : 0x84);
    write_modrm(w, ins, reg_code(b.reg), a);
    return w.take();
  }

  const int alu = alu_index(ins.mnemonic);
  if (alu < 0) unencodable(ins, "mnemonic");
  const auto row = static_cast<std::uint8_t>(alu << 3);
  if (b.is_imm()) {
    const bool acc = a.is_reg() && reg_code(a.reg) == 0;
    if (acc && op == (row | (width == 4 ? 5 : 4))) {
      w.u8(static_cast<std::uint8_t>(row | (width == 4 ? 5 : 4)));
      if (width == 4) w.u32(b.imm);
      else w.u8(static_cast<std::uint8_t>(b.imm));
      return w.take();
    }
    if (width == 1) {
      w.u8(0x80);
      write_modrm(w, ins, static_cast<unsigned>(alu), a);
      w.u8(static_cast<std::uint8_t>(b.imm));
    } else if (op == 0x83) {
      if (!fits_i8(static_cast<std::int32_t>(b.imm))) unencodable(ins, "imm8 range");
      w.u8(0x83);
      write_modrm(w, ins, static_cast<unsigned>(alu), a);
      w.u8(static_cast<std::uint8_t>(b.imm));
    } else {
      w.u8(0x81);
      write_modrm(w, ins, static_cast<unsigned>(alu), a);
      w.u32(b.imm);
    }
    return w.take();
  }
  const bool to_rm = b.is_reg() && (a.is_mem() || (op & 7) <= 1);
  if (to_rm) {
    w.u8(static_cast<std::uint8_t>(row | (width == 4 ? 1 : 0)));
    write_modrm(w, ins, reg_code(b.reg), a);
  } else {
    if (!a.is_reg()) unencodable(ins, "ALU form");
    w.u8(static_cast<std::uint8_t>(row | (width == 4 ? 3 : 2)));
    write_modrm(w, ins, reg_code(a.reg), b);
  }
  return w.take();
}

std::size_t encoded_size(const Instruction& ins) {
  if (ins.is_direct_branch()) {
    if (ins.branch_form == BranchForm::Rel8) return 2;
    if (ins.mnemonic == Mnemonic::Jcc) return 6;
    return 5;
  }
  return encode(ins).size();
}

Bytes encode_block(std::span<const Instruction> instrs) {
  Bytes out;
  for (const auto& ins : instrs) {
    const Bytes b = encode(ins);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

bool Instruction::references_memory() const {
  if (memory_operand()) return true;
  switch (mnemonic) {
    case Mnemonic::Push: case Mnemonic::Pop: case Mnemonic::Call: case Mnemonic::Ret:
    case Mnemonic::Movsb: case Mnemonic::Stosb: case Mnemonic::Lodsb:
      return true;
    default:
      return false;
  }
}

bool Instruction::same_operation(const Instruction& o) const {
  if (mnemonic != o.mnemonic || op_count != o.op_count || rep != o.rep) return false;
  const bool uses_cond = mnemonic == Mnemonic::Jcc || mnemonic == Mnemonic::Setcc ||
                         mnemonic == Mnemonic::Cmovcc;
  if (uses_cond && cond != o.cond) return false;
  if (is_direct_branch() != o.is_direct_branch()) return false;
  if (is_direct_branch() && target != o.target) return false;
  for (std::uint8_t i = 0; i < op_count; ++i) {
    const Operand& x = ops[i];
    const Operand& y = o.ops[i];
    if (x.kind != y.kind || x.size != y.size) return false;
    if (x.is_reg() && x.reg != y.reg) return false;
    if (x.is_imm() && x.imm != y.imm) return false;
    if (x.is_mem() && (x.mem.base != y.mem.base || x.mem.disp != y.mem.disp)) return false;
  }
  return true;
}

std::string_view access_name(AccessKind k) {
  switch (k) {
    case AccessKind::None: return "none";
    case AccessKind::Read: return "read";
    case AccessKind::Write: return "write";
    case AccessKind::ReadWrite: return "readwrite";
  }
  return "none";
}

std::vector<MemoryAccess> effective_address(const Instruction& ins, const RegisterFile& regs) {
  const std::uint32_t esp = regs[reg_code(Reg::ESP)];
  std::vector<MemoryAccess> out;
  auto explicit_mem = [&](AccessKind kind) {
    const Operand* m = ins.memory_operand();
    Address a = static_cast<Address>(m->mem.disp);
    if (m->mem.base) a += regs[reg_code(*m->mem.base)];
    out.push_back({a, m->size, kind});
  };
  switch (ins.mnemonic) {
    case Mnemonic::Push:
      out.push_back({esp - 4, 4, AccessKind::Write});
      return out;
    case Mnemonic::Pop:
      out.push_back({esp, 4, AccessKind::Read});
      return out;
    case Mnemonic::Ret:
      out.push_back({esp, 4, AccessKind::Read});
      return out;
    case Mnemonic::Call:
      if (ins.branch_form == BranchForm::Indirect) explicit_mem(AccessKind::Read);
      out.push_back({esp - 4, 4, AccessKind::Write});
      return out;
    case Mnemonic::Movsb:
      out.push_back({regs[reg_code(Reg::ESI)], 1, AccessKind::Read});
      out.push_back({regs[reg_code(Reg::EDI)], 1, AccessKind::Write});
      return out;
    case Mnemonic::Stosb:
      out.push_back({regs[reg_code(Reg::EDI)], 1, AccessKind::Write});
      return out;
    case Mnemonic::Lodsb:
      out.push_back({regs[reg_code(Reg::ESI)], 1, AccessKind::Read});
      return out;
    default:
      break;
  }
  const Operand* m = ins.memory_operand();
  if (!m) throw Error(ErrorCode::NoMemoryOperand, to_string(ins));
  AccessKind kind = AccessKind::Read;
  if (ins.op_count == 2 && ins.ops[0].is_mem()) {
    switch (ins.mnemonic) {
      case Mnemonic::Mov: kind = AccessKind::Write; break;
      case Mnemonic::Cmp: case Mnemonic::Test: kind = AccessKind::Read; break;
      default: kind = AccessKind::ReadWrite; break;
    }
  }
  explicit_mem(kind);
  return out;
}

namespace make {

Instruction nop() {
  Instruction i;
  i.mnemonic = Mnemonic::Nop;
  i.opcode = 0x90;
  i.length = 1;
  return i;
}

Instruction jmp(Address target, BranchForm form) {
  Instruction i;
  i.mnemonic = Mnemonic::Jmp;
  i.branch_form = form;
  i.target = target;
  i.opcode = form == BranchForm::Rel8 ? 0xEB : 0xE9;
  i.length = static_cast<std::uint8_t>(encoded_size(i));
  return i;
}

Instruction jcc(Cond c, Address target, BranchForm form) {
  Instruction i;
  i.mnemonic = Mnemonic::Jcc;
  i.cond = c;
  i.branch_form = form;
  i.target = target;
  i.escaped = form == BranchForm::Rel32;
  i.opcode = static_cast<std::uint8_t>((form == BranchForm::Rel8 ? 0x70 : 0x80) | static_cast<unsigned>(c));
  i.length = static_cast<std::uint8_t>(encoded_size(i));
  return i;
}

Instruction call(Address target) {
  Instruction i;
  i.mnemonic = Mnemonic::Call;
  i.branch_form = BranchForm::Rel32;
  i.target = target;
  i.opcode = 0xE8;
  i.length = 5;
  return i;
}

Instruction jmp_indirect(Address slot) {
  Instruction i;
  i.mnemonic = Mnemonic::Jmp;
  i.branch_form = BranchForm::Indirect;
  i.opcode = 0xFF;
  i.ops[0] = Operand::make_mem(MemOperand{std::nullopt, static_cast<std::int32_t>(slot), 4}, 4);
  i.op_count = 1;
  i.length = 6;
  return i;
}

Instruction loop_family(Mnemonic m, Address target) {
  Instruction i;
  i.mnemonic = m;
  i.branch_form = BranchForm::Rel8;
  i.target = target;
  i.opcode = m == Mnemonic::Loopne ? 0xE0 : m == Mnemonic::Loope ? 0xE1 : m == Mnemonic::Loop ? 0xE2 : 0xE3;
  i.length = 2;
  return i;
}

}  // namespace make

}  // namespace vci
