#include "vci/descriptors.hpp"

#include "vci/error.hpp"

namespace vci {

namespace {

constexpr ArchObjectSet F(Flag f) { return ArchObjectSet::flag(f); }

const ArchObjectSet kEsp = cells_of_reg32(4);
const ArchObjectSet kEsi = cells_of_reg32(6);
const ArchObjectSet kEdi = cells_of_reg32(7);
const ArchObjectSet kEcx = cells_of_reg32(1);
const ArchObjectSet kAl = ArchObjectSet::of(ArchCell::reg_byte(0, 0));

ArchObjectSet reg_cells(const Operand& o) { return o.is_reg() ? cells_of(o.reg) : ArchObjectSet{}; }

ArchObjectSet base_cells(const Operand* m) {
  if (!m || !m->mem.base) return {};
  return cells_of(*m->mem.base);
}

bool same_register(const Operand& a, const Operand& b) { return a.is_reg() && b.is_reg() && a.reg == b.reg; }

void describe_binary(const Instruction& ins, InstructionDescriptor& d) {
  const Operand& a = ins.ops[0];
  const Operand& b = ins.ops[1];
  const ArchObjectSet ra = reg_cells(a);
  const ArchObjectSet rb = reg_cells(b);
  const Operand* m = ins.memory_operand();

  switch (ins.mnemonic) {
    case Mnemonic::Mov:
      d.src = rb;
      d.dest = ra;
      break;
    case Mnemonic::Cmp:
    case Mnemonic::Test:
      d.src = ra | rb;
      d.dest = ArchObjectSet::arith_flags();
      break;
    case Mnemonic::Xor:
    case Mnemonic::Sub:
      d.src = same_register(a, b) ? ArchObjectSet{} : (ra | rb);
      d.dest = ra | ArchObjectSet::arith_flags();
      break;
    case Mnemonic::Adc:
      d.src = ra | rb | F(Flag::CF);
      d.dest = ra | ArchObjectSet::arith_flags();
      break;
    case Mnemonic::Shl:
    case Mnemonic::Shr:
      if ((b.imm & 31u) != 0) {
        d.src = ra;
        d.dest = ra | ArchObjectSet::arith_flags();
      }
      break;
    default:  // ADD, OR, AND
      d.src = ra | rb;
      d.dest = ra | ArchObjectSet::arith_flags();
      break;
  }

  if (!m) return;
  d.addr = base_cells(m);
  const bool reads_dest = ins.mnemonic != Mnemonic::Mov;
  if (a.is_mem()) {
    const bool writes = ins.mnemonic != Mnemonic::Cmp && ins.mnemonic != Mnemonic::Test;
    d.mem = !writes ? AccessKind::Read : reads_dest ? AccessKind::ReadWrite : AccessKind::Write;
    d.data_src = d.src;
    d.data_dest = d.dest;
  } else {
    d.mem = AccessKind::Read;
    d.data_src = d.src;
    d.data_dest = d.dest;
  }
}

}  // namespace

ArchObjectSet cond_flags(Cond c) {
  switch (c) {
    case Cond::O: case Cond::NO: return F(Flag::OF);
    case Cond::B: case Cond::AE: return F(Flag::CF);
    case Cond::E: case Cond::NE: return F(Flag::ZF);
    case Cond::BE: case Cond::A: return F(Flag::CF) | F(Flag::ZF);
    case Cond::S: case Cond::NS: return F(Flag::SF);
    case Cond::P: case Cond::NP: return F(Flag::PF);
    case Cond::L: case Cond::GE: return F(Flag::SF) | F(Flag::OF);
    case Cond::LE: case Cond::G: return F(Flag::ZF) | F(Flag::SF) | F(Flag::OF);
  }
  return {};
}

InstructionDescriptor describe(const Instruction& ins) {
  InstructionDescriptor d;
  const ArchObjectSet rep_count = ins.rep ? kEcx : ArchObjectSet{};
  switch (ins.mnemonic) {
    case Mnemonic::Nop:
    case Mnemonic::Hlt:
      break;
    case Mnemonic::Mov: case Mnemonic::Add: case Mnemonic::Adc: case Mnemonic::Sub:
    case Mnemonic::Xor: case Mnemonic::And: case Mnemonic::Or: case Mnemonic::Cmp:
    case Mnemonic::Test: case Mnemonic::Shl: case Mnemonic::Shr:
      describe_binary(ins, d);
      break;
    case Mnemonic::Inc:
    case Mnemonic::Dec:
      d.src = reg_cells(ins.ops[0]);
      d.dest = d.src | (ArchObjectSet::arith_flags() - F(Flag::CF));
      break;
    case Mnemonic::Push:
      d.src = reg_cells(ins.ops[0]) | kEsp;
      d.dest = kEsp;
      d.mem = AccessKind::Write;
      d.data_src = reg_cells(ins.ops[0]);
      d.addr = kEsp;
      break;
    case Mnemonic::Pop:
      d.src = kEsp;
      d.dest = reg_cells(ins.ops[0]) | kEsp;
      d.mem = AccessKind::Read;
      d.data_dest = reg_cells(ins.ops[0]);
      d.addr = kEsp;
      break;
    case Mnemonic::Call:
      d.src = kEsp;
      d.dest = kEsp;
      d.mem = ins.branch_form == BranchForm::Indirect ? AccessKind::ReadWrite : AccessKind::Write;
      d.addr = kEsp;
      break;
    case Mnemonic::Ret:
      d.src = kEsp;
      d.dest = kEsp;
      d.mem = AccessKind::Read;
      d.addr = kEsp;
      break;
    case Mnemonic::Jmp:
      if (ins.branch_form == BranchForm::Indirect) d.mem = AccessKind::Read;
      break;
    case Mnemonic::Jcc:
      d.src = cond_flags(ins.cond);
      break;
    case Mnemonic::Jecxz:
      d.src = kEcx;
      break;
    case Mnemonic::Loop:
      d.src = kEcx;
      d.dest = kEcx;
      break;
    case Mnemonic::Loope:
    case Mnemonic::Loopne:
      d.src = kEcx | F(Flag::ZF);
      d.dest = kEcx;
      break;
    case Mnemonic::Setcc:
      d.src = cond_flags(ins.cond);
      d.dest = reg_cells(ins.ops[0]);
      d.conditional_write = true;
      break;
    case Mnemonic::Cmovcc:
      // The old destination survives when the condition fails.
      d.src = reg_cells(ins.ops[0]) | reg_cells(ins.ops[1]) | cond_flags(ins.cond);
      d.dest = reg_cells(ins.ops[0]);
      d.conditional_write = true;
      break;
    case Mnemonic::Movsb:
      d.src = kEsi | kEdi | F(Flag::DF) | rep_count;
      d.dest = kEsi | kEdi | rep_count;
      d.mem = AccessKind::ReadWrite;
      d.string_op = true;
      d.addr = kEsi | kEdi;
      break;
    case Mnemonic::Stosb:
      d.src = kAl | kEdi | F(Flag::DF) | rep_count;
      d.dest = kEdi | rep_count;
      d.mem = AccessKind::Write;
      d.string_op = true;
      d.data_src = kAl;
      d.addr = kEdi;
      break;
    case Mnemonic::Lodsb:
      d.src = kEsi | F(Flag::DF) | rep_count;
      d.dest = kAl | kEsi | rep_count;
      d.mem = AccessKind::Read;
      d.string_op = true;
      d.data_dest = kAl;
      d.addr = kEsi;
      break;
  }
  return d;
}

}  // namespace vci
