#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>

#include "vci/error.hpp"
#include "vci/isa.hpp"

namespace vci {

namespace {

constexpr std::string_view kRegNames[] = {
    "EAX", "ECX", "EDX", "EBX", "ESP", "EBP", "ESI", "EDI",
    "AX",  "CX",  "DX",  "BX",  "SP",  "BP",  "SI",  "DI",
    "AL",  "CL",  "DL",  "BL",  "AH",  "CH",  "DH",  "BH",
};

constexpr std::string_view kCondNames[] = {"O", "NO", "B", "AE", "Z", "NZ", "BE", "A",
                                           "S", "NS", "P", "NP", "L", "GE", "LE", "G"};

struct CondAlias {
  std::string_view name;
  Cond cond;
};

constexpr CondAlias kCondAliases[] = {
    {"O", Cond::O},    {"NO", Cond::NO},   {"B", Cond::B},     {"C", Cond::B},
    {"NAE", Cond::B},  {"AE", Cond::AE},   {"NB", Cond::AE},   {"NC", Cond::AE},
    {"E", Cond::E},    {"Z", Cond::E},     {"NE", Cond::NE},   {"NZ", Cond::NE},
    {"BE", Cond::BE},  {"NA", Cond::BE},   {"A", Cond::A},     {"NBE", Cond::A},
    {"S", Cond::S},    {"NS", Cond::NS},   {"P", Cond::P},     {"PE", Cond::P},
    {"NP", Cond::NP},  {"PO", Cond::NP},   {"L", Cond::L},     {"NGE", Cond::L},
    {"GE", Cond::GE},  {"NL", Cond::GE},   {"LE", Cond::LE},   {"NG", Cond::LE},
    {"G", Cond::G},    {"NLE", Cond::G},
};

std::optional<Cond> parse_cond(std::string_view s) {
  for (const auto& a : kCondAliases)
    if (a.name == s) return a.cond;
  return std::nullopt;
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", v);
  return buf;
}

std::string imm_text(std::uint32_t v) {
  if (v < 10) return std::to_string(v);
  return hex(v);
}

std::string mem_text(const Operand& o) {
  std::string s = o.size == 1 ? "BYTE PTR [" : "DWORD PTR [";
  if (o.mem.base) {
    s += reg_name(*o.mem.base);
    if (o.mem.disp > 0) s += "+" + hex(static_cast<std::uint32_t>(o.mem.disp));
    else if (o.mem.disp < 0) s += "-" + hex(static_cast<std::uint32_t>(-static_cast<std::int64_t>(o.mem.disp)));
  } else {
    s += hex(static_cast<std::uint32_t>(o.mem.disp));
  }
  return s + "]";
}

std::string operand_text(const Operand& o) {
  switch (o.kind) {
    case OperandKind::Register: return std::string(reg_name(o.reg));
    case OperandKind::Immediate: return imm_text(o.imm);
    case OperandKind::Memory: return mem_text(o);
    case OperandKind::None: break;
  }
  return {};
}

// --- assembler ------------------------------------------------------------

[[noreturn]] void parse_fail(std::string_view text, const std::string& why) {
  throw Error(ErrorCode::ParseError, why + " in '" + std::string(text) + "'");
}

std::string upper_trim(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  const auto b = out.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = out.find_last_not_of(" \t");
  return out.substr(b, e - b + 1);
}

bool strip_word(std::string& s, std::string_view word) {
  const auto pos = s.find(word);
  if (pos == std::string::npos) return false;
  s.erase(pos, word.size());
  s = upper_trim(s);
  return true;
}

bool is_hex_digit(char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; }

// Numbers: 0x.. and ..H are hex; anything containing A-F is hex; eight-digit
// zero-padded values (debugger address style) are hex when `address_like`;
// in address positions (brackets, branch targets) bare digits are hex.
std::optional<std::uint32_t> parse_number(std::string_view s, bool address_context) {
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.empty()) return std::nullopt;
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && s[1] == 'X') {
    s.remove_prefix(2);
    base = 16;
  } else if (s.size() > 1 && s.back() == 'H' && std::all_of(s.begin(), s.end() - 1, is_hex_digit)) {
    s.remove_suffix(1);
    base = 16;
  } else if (!std::all_of(s.begin(), s.end(), is_hex_digit)) {
    return std::nullopt;
  } else if (!std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    base = 16;
  } else if (address_context || (s.size() == 8 && s[0] == '0')) {
    base = 16;
  }
  if (!std::isxdigit(static_cast<unsigned char>(s[0]))) return std::nullopt;
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || v > 0xFFFFFFFFull) return std::nullopt;
  auto out = static_cast<std::uint32_t>(v);
  if (negative) out = static_cast<std::uint32_t>(-static_cast<std::int64_t>(out));
  return out;
}

struct ParsedOperand {
  Operand op;
  bool sized = false;  // memory size given explicitly by PTR
};

ParsedOperand parse_operand(std::string_view line, std::string text, bool address_context) {
  ParsedOperand p;
  std::uint8_t ptr_size = 0;
  if (strip_word(text, "DWORD PTR")) ptr_size = 4;
  if (strip_word(text, "BYTE PTR")) ptr_size = 1;
  strip_word(text, "DS:");
  strip_word(text, "SHORT");
  strip_word(text, "NEAR");

  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']') parse_fail(line, "unterminated memory operand");
    std::string inner = text.substr(1, text.size() - 2);
    inner.erase(std::remove(inner.begin(), inner.end(), ' '), inner.end());
    MemOperand mem;
    mem.base = std::nullopt;
    std::int64_t disp = 0;
    bool has_disp = false;
    std::size_t i = 0;
    while (i < inner.size()) {
      int sign = 1;
      if (inner[i] == '+' || inner[i] == '-') {
        sign = inner[i] == '-' ? -1 : 1;
        ++i;
      }
      std::size_t j = i;
      while (j < inner.size() && inner[j] != '+' && inner[j] != '-') ++j;
      const std::string_view tok(inner.data() + i, j - i);
      if (auto r = parse_reg(tok)) {
        if (mem.base || sign < 0 || reg_width(*r) != 4) parse_fail(line, "bad base register");
        mem.base = *r;
      } else if (auto n = parse_number(tok, true)) {
        disp += sign * static_cast<std::int64_t>(*n);
        has_disp = true;
      } else {
        parse_fail(line, "bad memory term '" + std::string(tok) + "'");
      }
      i = j;
    }
    mem.disp = static_cast<std::int32_t>(static_cast<std::uint32_t>(disp));
    if (!mem.base) mem.disp_size = 4;
    else if (!has_disp && mem.disp == 0 && reg_code(*mem.base) != 5) mem.disp_size = 0;
    else if (mem.disp >= -128 && mem.disp <= 127) mem.disp_size = 1;
    else mem.disp_size = 4;
    p.op = Operand::make_mem(mem, ptr_size ? ptr_size : 4);
    p.sized = ptr_size != 0;
    return p;
  }
  if (auto r = parse_reg(text)) {
    p.op = Operand::make_reg(*r);
    return p;
  }
  if (auto n = parse_number(text, address_context)) {
    p.op = Operand::make_imm(*n, 4);
    return p;
  }
  parse_fail(line, "bad operand '" + text + "'");
}

std::vector<std::string> split_operands(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '[') ++depth;
    if (c == ']') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(upper_trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!upper_trim(cur).empty()) out.push_back(upper_trim(cur));
  return out;
}

constexpr bool fits_i8(std::int32_t v) { return v >= -128 && v <= 127; }

int alu_row(std::string_view m) {
  if (m == "ADD") return 0;
  if (m == "OR") return 1;
  if (m == "ADC") return 2;
  if (m == "AND") return 4;
  if (m == "SUB") return 5;
  if (m == "XOR") return 6;
  if (m == "CMP") return 7;
  return -1;
}

Mnemonic alu_mnemonic(int row) {
  switch (row) {
    case 0: return Mnemonic::Add;
    case 1: return Mnemonic::Or;
    case 2: return Mnemonic::Adc;
    case 4: return Mnemonic::And;
    case 5: return Mnemonic::Sub;
    case 6: return Mnemonic::Xor;
    default: return Mnemonic::Cmp;
  }
}

void place_branch(Instruction& ins, Address target, bool force_short, bool force_near) {
  ins.target = target;
  const bool rel8_only = ins.mnemonic == Mnemonic::Loop || ins.mnemonic == Mnemonic::Loope ||
                         ins.mnemonic == Mnemonic::Loopne || ins.mnemonic == Mnemonic::Jecxz;
  if (ins.mnemonic == Mnemonic::Call) {
    ins.branch_form = BranchForm::Rel32;
  } else if (rel8_only || force_short) {
    ins.branch_form = BranchForm::Rel8;
  } else if (force_near) {
    ins.branch_form = BranchForm::Rel32;
  } else {
    const auto rel = static_cast<std::int32_t>(target - (ins.address + 2));
    ins.branch_form = fits_i8(rel) ? BranchForm::Rel8 : BranchForm::Rel32;
  }
}

}  // namespace

std::string_view reg_name(Reg r) { return kRegNames[static_cast<unsigned>(r)]; }

std::optional<Reg> parse_reg(std::string_view name) {
  for (unsigned i = 0; i < std::size(kRegNames); ++i)
    if (kRegNames[i] == name) return static_cast<Reg>(i);
  return std::nullopt;
}

std::string_view mnemonic_name(Mnemonic m) {
  switch (m) {
    case Mnemonic::Mov: return "MOV";
    case Mnemonic::Add: return "ADD";
    case Mnemonic::Adc: return "ADC";
    case Mnemonic::Sub: return "SUB";
    case Mnemonic::Xor: return "XOR";
    case Mnemonic::And: return "AND";
    case Mnemonic::Or: return "OR";
    case Mnemonic::Cmp: return "CMP";
    case Mnemonic::Test: return "TEST";
    case Mnemonic::Inc: return "INC";
    case Mnemonic::Dec: return "DEC";
    case Mnemonic::Shl: return "SHL";
    case Mnemonic::Shr: return "SHR";
    case Mnemonic::Push: return "PUSH";
    case Mnemonic::Pop: return "POP";
    case Mnemonic::Jmp: return "JMP";
    case Mnemonic::Jcc: return "J";
    case Mnemonic::Jecxz: return "JECXZ";
    case Mnemonic::Loop: return "LOOP";
    case Mnemonic::Loope: return "LOOPE";
    case Mnemonic::Loopne: return "LOOPNE";
    case Mnemonic::Call: return "CALL";
    case Mnemonic::Ret: return "RET";
    case Mnemonic::Setcc: return "SET";
    case Mnemonic::Cmovcc: return "CMOV";
    case Mnemonic::Nop: return "NOP";
    case Mnemonic::Movsb: return "MOVSB";
    case Mnemonic::Stosb: return "STOSB";
    case Mnemonic::Lodsb: return "LODSB";
    case Mnemonic::Hlt: return "HLT";
  }
  return "?";
}

std::string_view cond_suffix(Cond c) { return kCondNames[static_cast<unsigned>(c)]; }

std::string to_string(const Instruction& ins) {
  std::string s;
  if (ins.rep) s += "REP ";
  s += mnemonic_name(ins.mnemonic);
  if (ins.mnemonic == Mnemonic::Jcc || ins.mnemonic == Mnemonic::Setcc || ins.mnemonic == Mnemonic::Cmovcc)
    s += cond_suffix(ins.cond);
  if (ins.is_direct_branch()) {
    s += " " + hex(ins.target);
    return s;
  }
  for (std::uint8_t i = 0; i < ins.op_count; ++i) {
    s += i == 0 ? " " : ",";
    s += operand_text(ins.ops[i]);
  }
  return s;
}

Instruction assemble(std::string_view text, Address address) {
  std::string line = upper_trim(text);
  if (line.empty()) parse_fail(text, "empty line");

  Instruction ins;
  ins.address = address;
  if (line.rfind("REP ", 0) == 0) {
    ins.rep = true;
    line = upper_trim(line.substr(4));
  }
  const auto sp = line.find(' ');
  const std::string mn = line.substr(0, sp);
  const std::string rest = sp == std::string::npos ? std::string() : upper_trim(line.substr(sp + 1));
  const bool force_short = rest.find("SHORT") != std::string::npos;
  const bool force_near = rest.find("NEAR") != std::string::npos;

  auto finish = [&]() {
    if (ins.rep && !ins.is_string_op()) parse_fail(text, "REP needs a string instruction");
    ins.length = static_cast<std::uint8_t>(encoded_size(ins));
    return ins;
  };

  // Zero-operand instructions.
  struct Simple {
    std::string_view name;
    Mnemonic m;
    std::uint8_t opcode;
  };
  static constexpr Simple kSimple[] = {
      {"NOP", Mnemonic::Nop, 0x90},     {"HLT", Mnemonic::Hlt, 0xF4},     {"RET", Mnemonic::Ret, 0xC3},
      {"RETN", Mnemonic::Ret, 0xC3},    {"MOVSB", Mnemonic::Movsb, 0xA4}, {"STOSB", Mnemonic::Stosb, 0xAA},
      {"LODSB", Mnemonic::Lodsb, 0xAC},
  };
  for (const auto& s : kSimple) {
    if (mn == s.name) {
      if (!rest.empty()) parse_fail(text, "unexpected operands");
      ins.mnemonic = s.m;
      ins.opcode = s.opcode;
      return finish();
    }
  }

  const auto parts = split_operands(rest);
  const bool is_branch_mn = mn == "JMP" || mn == "CALL" || mn == "JECXZ" || mn.rfind("LOOP", 0) == 0 ||
                            (mn.size() > 1 && mn[0] == 'J');

  if (is_branch_mn) {
    if (parts.size() != 1) parse_fail(text, "branch needs one operand");
    if (mn == "JMP") ins.mnemonic = Mnemonic::Jmp;
    else if (mn == "CALL") ins.mnemonic = Mnemonic::Call;
    else if (mn == "JECXZ") ins.mnemonic = Mnemonic::Jecxz;
    else if (mn == "LOOP") ins.mnemonic = Mnemonic::Loop;
    else if (mn == "LOOPE" || mn == "LOOPZ") ins.mnemonic = Mnemonic::Loope;
    else if (mn == "LOOPNE" || mn == "LOOPNZ") ins.mnemonic = Mnemonic::Loopne;
    else if (auto c = parse_cond(std::string_view(mn).substr(1))) {
      ins.mnemonic = Mnemonic::Jcc;
      ins.cond = *c;
    } else {
      parse_fail(text, "unknown mnemonic");
    }
    const ParsedOperand p = parse_operand(text, parts[0], true);
    if (p.op.is_mem()) {
      if ((ins.mnemonic != Mnemonic::Jmp && ins.mnemonic != Mnemonic::Call) || p.op.mem.base)
        parse_fail(text, "only JMP/CALL DWORD PTR [disp32] are indirect");
      ins.branch_form = BranchForm::Indirect;
      ins.opcode = 0xFF;
      ins.ops[0] = p.op;
      ins.op_count = 1;
      return finish();
    }
    if (!p.op.is_imm()) parse_fail(text, "branch target must be an address");
    place_branch(ins, p.op.imm, force_short, force_near);
    if (ins.mnemonic == Mnemonic::Jcc) {
      ins.escaped = ins.branch_form == BranchForm::Rel32;
      ins.opcode = static_cast<std::uint8_t>((ins.escaped ? 0x80 : 0x70) | static_cast<unsigned>(ins.cond));
    }
    return finish();
  }

  std::vector<ParsedOperand> ops;
  for (const auto& p : parts) ops.push_back(parse_operand(text, p, false));

  // Resolve operand sizes: registers fix the width; immediates and unsized
  // memory follow the other operand.
  unsigned width = 0;
  for (const auto& p : ops)
    if (p.op.is_reg()) width = std::max(width, reg_width(p.op.reg));
  for (const auto& p : ops)
    if (p.op.is_mem() && p.sized) {
      if (width && width != p.op.size) parse_fail(text, "operand size mismatch");
      width = p.op.size;
    }
  if (width == 0) width = 4;
  if (width == 2) parse_fail(text, "16-bit operands are not supported");
  for (auto& p : ops) {
    if (p.op.is_imm() || p.op.is_mem()) p.op.size = static_cast<std::uint8_t>(width);
    if (p.op.is_reg() && reg_width(p.op.reg) != width && mn.rfind("SET", 0) != 0)
      parse_fail(text, "operand size mismatch");
  }
  if (width == 1)
    for (auto& p : ops)
      if (p.op.is_imm()) {
        const auto sv = static_cast<std::int32_t>(p.op.imm);
        if (sv < -128 || sv > 255) parse_fail(text, "imm8 out of range");
        p.op.imm &= 0xFF;
      }

  auto need = [&](std::size_t n) {
    if (ops.size() != n) parse_fail(text, "expected " + std::to_string(n) + " operand(s)");
  };
  auto set_ops = [&]() {
    ins.op_count = static_cast<std::uint8_t>(ops.size());
    for (std::size_t i = 0; i < ops.size(); ++i) ins.ops[i] = ops[i].op;
  };

  if (mn == "MOV") {
    need(2);
    ins.mnemonic = Mnemonic::Mov;
    const Operand& a = ops[0].op;
    const Operand& b = ops[1].op;
    if (a.is_reg() && b.is_imm()) ins.opcode = static_cast<std::uint8_t>((width == 4 ? 0xB8 : 0xB0) | reg_code(a.reg));
    else if (a.is_mem() && b.is_imm()) ins.opcode = width == 4 ? 0xC7 : 0xC6;
    else if (b.is_reg() && (a.is_reg() || a.is_mem())) ins.opcode = width == 4 ? 0x89 : 0x88;
    else if (a.is_reg() && b.is_mem()) ins.opcode = width == 4 ? 0x8B : 0x8A;
    else parse_fail(text, "MOV form");
    set_ops();
    return finish();
  }

  if (const int row = alu_row(mn); row >= 0) {
    need(2);
    ins.mnemonic = alu_mnemonic(row);
    const Operand& a = ops[0].op;
    const Operand& b = ops[1].op;
    const auto r = static_cast<std::uint8_t>(row << 3);
    if (b.is_imm()) {
      if (!a.is_reg() && !a.is_mem()) parse_fail(text, "ALU form");
      const bool acc = a.is_reg() && reg_code(a.reg) == 0;
      if (width == 1) ins.opcode = acc ? static_cast<std::uint8_t>(r | 4) : 0x80;
      else if (fits_i8(static_cast<std::int32_t>(b.imm))) ins.opcode = 0x83;
      else ins.opcode = acc ? static_cast<std::uint8_t>(r | 5) : 0x81;
    } else if (b.is_reg()) {
      ins.opcode = static_cast<std::uint8_t>(r | (width == 4 ? 1 : 0));
    } else if (a.is_reg() && b.is_mem()) {
      ins.opcode = static_cast<std::uint8_t>(r | (width == 4 ? 3 : 2));
    } else {
      parse_fail(text, "ALU form");
    }
    set_ops();
    return finish();
  }

  if (mn == "TEST") {
    need(2);
    ins.mnemonic = Mnemonic::Test;
    if (ops[0].op.is_reg() && ops[1].op.is_mem()) std::swap(ops[0], ops[1]);
    const Operand& a = ops[0].op;
    const Operand& b = ops[1].op;
    if (b.is_imm()) ins.opcode = (a.is_reg() && reg_code(a.reg) == 0) ? (width == 4 ? 0xA9 : 0xA8) : (width == 4 ? 0xF7 : 0xF6);
    else if (b.is_reg()) ins.opcode = width == 4 ? 0x85 : 0x84;
    else parse_fail(text, "TEST form");
    set_ops();
    return finish();
  }

  if (mn == "INC" || mn == "DEC") {
    need(1);
    if (!ops[0].op.is_reg() || width != 4) parse_fail(text, "INC/DEC need r32");
    ins.mnemonic = mn == "INC" ? Mnemonic::Inc : Mnemonic::Dec;
    ins.opcode = static_cast<std::uint8_t>((mn == "INC" ? 0x40 : 0x48) | reg_code(ops[0].op.reg));
    set_ops();
    return finish();
  }

  if (mn == "SHL" || mn == "SAL" || mn == "SHR") {
    need(2);
    if (!ops[0].op.is_reg() || width != 4 || !ops[1].op.is_imm()) parse_fail(text, "shift needs r32,imm8");
    ins.mnemonic = mn == "SHR" ? Mnemonic::Shr : Mnemonic::Shl;
    ins.opcode = 0xC1;
    ops[1].op.size = 1;
    ops[1].op.imm &= 0xFF;
    set_ops();
    return finish();
  }

  if (mn == "PUSH") {
    need(1);
    ins.mnemonic = Mnemonic::Push;
    const Operand& a = ops[0].op;
    if (a.is_reg()) ins.opcode = static_cast<std::uint8_t>(0x50 | reg_code(a.reg));
    else if (a.is_imm()) ins.opcode = fits_i8(static_cast<std::int32_t>(a.imm)) ? 0x6A : 0x68;
    else parse_fail(text, "PUSH form");
    set_ops();
    return finish();
  }

  if (mn == "POP") {
    need(1);
    if (!ops[0].op.is_reg() || width != 4) parse_fail(text, "POP needs r32");
    ins.mnemonic = Mnemonic::Pop;
    ins.opcode = static_cast<std::uint8_t>(0x58 | reg_code(ops[0].op.reg));
    set_ops();
    return finish();
  }

  if (mn.rfind("SET", 0) == 0) {
    need(1);
    const auto c = parse_cond(std::string_view(mn).substr(3));
    if (!c || !ops[0].op.is_reg() || reg_width(ops[0].op.reg) != 1) parse_fail(text, "SETcc form");
    ins.mnemonic = Mnemonic::Setcc;
    ins.cond = *c;
    ins.escaped = true;
    ins.opcode = static_cast<std::uint8_t>(0x90 | static_cast<unsigned>(*c));
    set_ops();
    return finish();
  }

  if (mn.rfind("CMOV", 0) == 0) {
    need(2);
    const auto c = parse_cond(std::string_view(mn).substr(4));
    if (!c || !ops[0].op.is_reg() || !ops[1].op.is_reg() || width != 4) parse_fail(text, "CMOVcc form");
    ins.mnemonic = Mnemonic::Cmovcc;
    ins.cond = *c;
    ins.escaped = true;
    ins.opcode = static_cast<std::uint8_t>(0x40 | static_cast<unsigned>(*c));
    set_ops();
    return finish();
  }

  parse_fail(text, "unknown mnemonic");
}

std::vector<Instruction> assemble_block(std::span<const std::string_view> lines, Address base) {
  std::vector<Instruction> out;
  Address at = base;
  for (auto line : lines) {
    out.push_back(assemble(line, at));
    at += out.back().length;
  }
  return out;
}

}  // namespace vci
