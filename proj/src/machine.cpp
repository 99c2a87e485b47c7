#include "vci/machine.hpp"

#include <bit>
#include <cstdio>

#include "vci/error.hpp"

namespace vci {

namespace {

std::string hex(Address a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", a);
  return buf;
}

bool parity_even(std::uint32_t v) { return (std::popcount(v & 0xFFu) & 1) == 0; }

std::uint32_t width_mask(unsigned width) { return width == 4 ? 0xFFFFFFFFu : 0xFFu; }
std::uint32_t sign_bit(unsigned width) { return width == 4 ? 0x80000000u : 0x80u; }

}  // namespace

bool condition_holds(Cond c, std::uint32_t f) {
  const bool cf = f & eflags::CF, zf = f & eflags::ZF, sf = f & eflags::SF, of = f & eflags::OF,
             pf = f & eflags::PF;
  switch (c) {
    case Cond::O: return of;
    case Cond::NO: return !of;
    case Cond::B: return cf;
    case Cond::AE: return !cf;
    case Cond::E: return zf;
    case Cond::NE: return !zf;
    case Cond::BE: return cf || zf;
    case Cond::A: return !cf && !zf;
    case Cond::S: return sf;
    case Cond::NS: return !sf;
    case Cond::P: return pf;
    case Cond::NP: return !pf;
    case Cond::L: return sf != of;
    case Cond::GE: return sf == of;
    case Cond::LE: return zf || sf != of;
    case Cond::G: return !zf && sf == of;
  }
  return false;
}

// --- memory -----------------------------------------------------------------

void Memory::map(Address start, std::uint32_t size) {
  if (size == 0) return;
  const std::uint64_t first = start / kPageSize;
  const std::uint64_t last = (static_cast<std::uint64_t>(start) + size - 1) / kPageSize;
  for (std::uint64_t p = first; p <= last; ++p) pages_.try_emplace(static_cast<Address>(p * kPageSize)).first->second;
}

bool Memory::is_mapped(Address a) const { return pages_.count(a & ~(kPageSize - 1)) != 0; }

std::array<std::uint8_t, Memory::kPageSize>* Memory::page(Address a, bool) {
  const Address key = a & ~(kPageSize - 1);
  auto it = pages_.find(key);
  if (it != pages_.end()) return &it->second;
  if (strict_) throw Error(ErrorCode::MemoryFault, "unmapped address " + hex(a));
  auto& p = pages_[key];
  p.fill(0);
  return &p;
}

const std::array<std::uint8_t, Memory::kPageSize>* Memory::page(Address a) const {
  auto it = pages_.find(a & ~(kPageSize - 1));
  if (it != pages_.end()) return &it->second;
  if (strict_) throw Error(ErrorCode::MemoryFault, "unmapped address " + hex(a));
  return nullptr;
}

std::uint8_t Memory::read8(Address a) const {
  const auto* p = page(a);
  return p ? (*p)[a & (kPageSize - 1)] : 0;
}

std::uint32_t Memory::read32(Address a) const {
  std::uint32_t v = 0;
  for (unsigned i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(read8(a + i)) << (8 * i);
  return v;
}

void Memory::write8(Address a, std::uint8_t v) { (*page(a, true))[a & (kPageSize - 1)] = v; }

void Memory::write32(Address a, std::uint32_t v) {
  for (unsigned i = 0; i < 4; ++i) write8(a + i, static_cast<std::uint8_t>(v >> (8 * i)));
}

void Memory::write_bytes(Address a, std::span<const std::uint8_t> bytes) {
  for (std::size_t i = 0; i < bytes.size(); ++i) write8(a + static_cast<Address>(i), bytes[i]);
}

Bytes Memory::read_bytes(Address a, std::uint32_t size) const {
  Bytes out(size);
  for (std::uint32_t i = 0; i < size; ++i) out[i] = read8(a + i);
  return out;
}

// --- registers --------------------------------------------------------------

std::uint32_t MachineState::read_reg(Reg r) const {
  const std::uint32_t full = regs[parent_reg_index(r)];
  switch (reg_width(r)) {
    case 4: return full;
    case 2: return full & 0xFFFFu;
    default: return (full >> (8 * reg_byte_offset(r))) & 0xFFu;
  }
}

void MachineState::write_reg(Reg r, std::uint32_t v) {
  std::uint32_t& full = regs[parent_reg_index(r)];
  switch (reg_width(r)) {
    case 4: full = v; break;
    case 2: full = (full & 0xFFFF0000u) | (v & 0xFFFFu); break;
    default: {
      const unsigned shift = 8 * reg_byte_offset(r);
      full = (full & ~(0xFFu << shift)) | ((v & 0xFFu) << shift);
    }
  }
}

// --- execution --------------------------------------------------------------

const Instruction& Machine::fetch(Address a) {
  if (auto it = decode_cache_.find(a); it != decode_cache_.end()) return it->second;
  std::array<std::uint8_t, 16> window{};
  std::size_t avail = 0;
  for (; avail < window.size(); ++avail) {
    if (!state_.memory.is_mapped(a + static_cast<Address>(avail)) && state_.memory.strict()) break;
    window[avail] = state_.memory.read8(a + static_cast<Address>(avail));
  }
  if (avail == 0) throw Error(ErrorCode::MemoryFault, "instruction fetch from unmapped " + hex(a));
  try {
    return decode_cache_.emplace(a, decode(std::span(window.data(), avail), 0, a)).first->second;
  } catch (const Error& e) {
    throw Error(ErrorCode::UndecodableInstruction, e.what());
  }
}

void Machine::return_from_stub(std::uint32_t eax, std::uint32_t arg_bytes) {
  auto& s = state_;
  const Address ret = s.memory.read32(s.reg(Reg::ESP));
  s.reg(Reg::ESP) += 4 + arg_bytes;
  s.reg(Reg::EAX) = eax;
  s.eip = ret;
}

StepInfo Machine::step() {
  if (state_.halted) throw Error(ErrorCode::ConfigError, "machine is halted");
  StepInfo info;
  info.from = state_.eip;
  if (auto it = stubs_.find(state_.eip); it != stubs_.end()) {
    info.intercepted = true;
    ++steps_;
    it->second(*this);
    return info;
  }
  const Instruction& ins = fetch(state_.eip);
  info.instr = ins;
  ++steps_;
  if (instrumentation_ && ins.mnemonic == Mnemonic::Call && ins.branch_form == BranchForm::Rel32 &&
      ins.target == *instrumentation_) {
    info.intercepted = true;
    const Address site = state_.eip;
    state_.eip = ins.next_address();
    if (land_handler_) land_handler_(site);
    return info;
  }
  execute(ins);
  return info;
}

void Machine::run(std::uint64_t max_steps) {
  const std::uint64_t limit = steps_ + max_steps;
  while (!state_.halted) {
    if (steps_ >= limit) throw Error(ErrorCode::StepLimitExceeded, std::to_string(max_steps) + " steps");
    step();
  }
}

namespace {

struct AluResult {
  std::uint32_t value;
  std::uint32_t flags;
};

// Computes result and the six arithmetic flags; `flags_in` supplies CF for ADC
// and the untouched bits.
AluResult alu(Mnemonic m, std::uint32_t a, std::uint32_t b, unsigned width, std::uint32_t flags_in) {
  const std::uint32_t mask = width_mask(width);
  const std::uint32_t sign = sign_bit(width);
  a &= mask;
  b &= mask;
  std::uint32_t r = 0;
  bool cf = false, of = false, af = false;
  switch (m) {
    case Mnemonic::Add:
    case Mnemonic::Adc: {
      const std::uint64_t carry = (m == Mnemonic::Adc && (flags_in & eflags::CF)) ? 1 : 0;
      const std::uint64_t wide = static_cast<std::uint64_t>(a) + b + carry;
      r = static_cast<std::uint32_t>(wide) & mask;
      cf = wide > mask;
      of = ((a ^ r) & (b ^ r) & sign) != 0;
      af = ((a ^ b ^ r) & 0x10) != 0;
      break;
    }
    case Mnemonic::Sub:
    case Mnemonic::Cmp:
      r = (a - b) & mask;
      cf = a < b;
      of = ((a ^ b) & (a ^ r) & sign) != 0;
      af = ((a ^ b ^ r) & 0x10) != 0;
      break;
    case Mnemonic::And:
    case Mnemonic::Test: r = a & b; break;
    case Mnemonic::Or: r = a | b; break;
    case Mnemonic::Xor: r = a ^ b; break;
    default: break;
  }
  std::uint32_t f = flags_in & ~(eflags::CF | eflags::PF | eflags::AF | eflags::ZF | eflags::SF | eflags::OF);
  if (cf) f |= eflags::CF;
  if (of) f |= eflags::OF;
  if (af) f |= eflags::AF;
  if (r == 0) f |= eflags::ZF;
  if (r & sign) f |= eflags::SF;
  if (parity_even(r)) f |= eflags::PF;
  return {r, f};
}

}  // namespace

void Machine::execute(const Instruction& ins) {
  MachineState& s = state_;
  Address next = ins.next_address();
  auto ea_of = [&](const Operand& o) {
    Address a = static_cast<Address>(o.mem.disp);
    if (o.mem.base) a += s.reg(*o.mem.base);
    return a;
  };
  auto read_op = [&](const Operand& o) -> std::uint32_t {
    switch (o.kind) {
      case OperandKind::Register: return s.read_reg(o.reg);
      case OperandKind::Immediate: return o.imm & width_mask(o.size);
      case OperandKind::Memory: return o.size == 4 ? s.memory.read32(ea_of(o)) : s.memory.read8(ea_of(o));
      default: return 0;
    }
  };
  auto write_op = [&](const Operand& o, std::uint32_t v) {
    if (o.is_reg()) s.write_reg(o.reg, v);
    else if (o.size == 4) s.memory.write32(ea_of(o), v);
    else s.memory.write8(ea_of(o), static_cast<std::uint8_t>(v));
  };
  auto push = [&](std::uint32_t v) {
    s.reg(Reg::ESP) -= 4;
    s.memory.write32(s.reg(Reg::ESP), v);
  };
  auto pop = [&]() {
    const std::uint32_t v = s.memory.read32(s.reg(Reg::ESP));
    s.reg(Reg::ESP) += 4;
    return v;
  };
  const int step_dir = s.flag(eflags::DF) ? -1 : 1;

  switch (ins.mnemonic) {
    case Mnemonic::Nop:
      break;
    case Mnemonic::Hlt:
      s.halted = true;
      next = ins.address + ins.length;
      break;
    case Mnemonic::Mov:
      write_op(ins.ops[0], read_op(ins.ops[1]));
      break;
    case Mnemonic::Add: case Mnemonic::Adc: case Mnemonic::Sub: case Mnemonic::Xor:
    case Mnemonic::And: case Mnemonic::Or: {
      // Evaluate the address once; the operand is read and written.
      const auto r = alu(ins.mnemonic, read_op(ins.ops[0]), read_op(ins.ops[1]), ins.ops[0].size, s.flags);
      write_op(ins.ops[0], r.value);
      s.flags = r.flags;
      break;
    }
    case Mnemonic::Cmp: case Mnemonic::Test:
      s.flags = alu(ins.mnemonic, read_op(ins.ops[0]), read_op(ins.ops[1]), ins.ops[0].size, s.flags).flags;
      break;
    case Mnemonic::Inc:
    case Mnemonic::Dec: {
      const bool carry = s.flag(eflags::CF);
      const auto r = alu(ins.mnemonic == Mnemonic::Inc ? Mnemonic::Add : Mnemonic::Sub, read_op(ins.ops[0]), 1, 4, s.flags);
      write_op(ins.ops[0], r.value);
      s.flags = r.flags;
      s.set_flag(eflags::CF, carry);
      break;
    }
    case Mnemonic::Shl:
    case Mnemonic::Shr: {
      const unsigned count = ins.ops[1].imm & 31u;
      if (count == 0) break;
      const std::uint32_t v = read_op(ins.ops[0]);
      std::uint32_t r;
      bool cf, of;
      if (ins.mnemonic == Mnemonic::Shl) {
        r = v << count;
        cf = (v >> (32 - count)) & 1u;
        of = ((r >> 31) & 1u) != static_cast<std::uint32_t>(cf);
      } else {
        r = v >> count;
        cf = (v >> (count - 1)) & 1u;
        of = (v >> 31) & 1u;
      }
      write_op(ins.ops[0], r);
      s.set_flag(eflags::CF, cf);
      s.set_flag(eflags::OF, of);
      s.set_flag(eflags::AF, false);
      s.set_flag(eflags::ZF, r == 0);
      s.set_flag(eflags::SF, (r >> 31) & 1u);
      s.set_flag(eflags::PF, parity_even(r));
      break;
    }
    case Mnemonic::Push:
      push(read_op(ins.ops[0]));
      break;
    case Mnemonic::Pop: {
      const std::uint32_t v = pop();
      write_op(ins.ops[0], v);
      break;
    }
    case Mnemonic::Jmp:
      next = ins.branch_form == BranchForm::Indirect ? s.memory.read32(ea_of(ins.ops[0])) : ins.target;
      break;
    case Mnemonic::Jcc:
      if (condition_holds(ins.cond, s.flags)) next = ins.target;
      break;
    case Mnemonic::Jecxz:
      if (s.reg(Reg::ECX) == 0) next = ins.target;
      break;
    case Mnemonic::Loop:
    case Mnemonic::Loope:
    case Mnemonic::Loopne: {
      const std::uint32_t ecx = --s.reg(Reg::ECX);
      bool take = ecx != 0;
      if (ins.mnemonic == Mnemonic::Loope) take = take && s.flag(eflags::ZF);
      if (ins.mnemonic == Mnemonic::Loopne) take = take && !s.flag(eflags::ZF);
      if (take) next = ins.target;
      break;
    }
    case Mnemonic::Call: {
      const Address target = ins.branch_form == BranchForm::Indirect ? s.memory.read32(ea_of(ins.ops[0])) : ins.target;
      push(ins.next_address());
      next = target;
      break;
    }
    case Mnemonic::Ret:
      next = pop();
      break;
    case Mnemonic::Setcc:
      write_op(ins.ops[0], condition_holds(ins.cond, s.flags) ? 1u : 0u);
      break;
    case Mnemonic::Cmovcc:
      if (condition_holds(ins.cond, s.flags)) write_op(ins.ops[0], read_op(ins.ops[1]));
      break;
    case Mnemonic::Movsb:
    case Mnemonic::Stosb:
    case Mnemonic::Lodsb: {
      std::uint32_t count = ins.rep ? s.reg(Reg::ECX) : 1;
      for (; count > 0; --count) {
        if (ins.mnemonic == Mnemonic::Movsb) {
          s.memory.write8(s.reg(Reg::EDI), s.memory.read8(s.reg(Reg::ESI)));
          s.reg(Reg::ESI) += static_cast<std::uint32_t>(step_dir);
          s.reg(Reg::EDI) += static_cast<std::uint32_t>(step_dir);
        } else if (ins.mnemonic == Mnemonic::Stosb) {
          s.memory.write8(s.reg(Reg::EDI), static_cast<std::uint8_t>(s.reg(Reg::EAX)));
          s.reg(Reg::EDI) += static_cast<std::uint32_t>(step_dir);
        } else {
          s.write_reg(Reg::AL, s.memory.read8(s.reg(Reg::ESI)));
          s.reg(Reg::ESI) += static_cast<std::uint32_t>(step_dir);
        }
        if (ins.rep) --s.reg(Reg::ECX);
      }
      break;
    }
  }
  s.eip = next;
}

}  // namespace vci
