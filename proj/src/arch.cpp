#include "vci/arch.hpp"

#include <algorithm>
#include <cctype>

#include "vci/error.hpp"

namespace vci {

namespace {

constexpr std::string_view kReg32Lower[] = {"eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"};
constexpr std::string_view kFlagLower[] = {"cf", "pf", "af", "zf", "sf", "of", "df"};
constexpr std::string_view kLowByte[] = {"al", "cl", "dl", "bl"};
constexpr std::string_view kHighByte[] = {"ah", "ch", "dh", "bh"};
constexpr std::string_view kWord[] = {"ax", "cx", "dx", "bx", "sp", "bp", "si", "di"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

ArchObjectSet cells_of_reg32(unsigned reg_index) {
  return ArchObjectSet(std::uint64_t{0xF} << (4 * (reg_index & 7u)));
}

ArchObjectSet cells_of(Reg r) {
  const unsigned parent = parent_reg_index(r);
  switch (reg_width(r)) {
    case 4: return cells_of_reg32(parent);
    case 2: return ArchObjectSet(std::uint64_t{0x3} << (4 * parent));
    default: return ArchObjectSet::of(ArchCell::reg_byte(parent, reg_byte_offset(r)));
  }
}

ArchObjectSet cells_of(std::string_view name) {
  const std::string low = lower(name);
  for (unsigned f = 0; f < std::size(kFlagLower); ++f)
    if (low == kFlagLower[f]) return ArchObjectSet::flag(static_cast<Flag>(f));
  std::string up = low;
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (auto r = parse_reg(up)) return cells_of(*r);
  throw Error(ErrorCode::UnknownRegister, std::string(name));
}

std::string cell_name(ArchCell c) {
  if (c.is_flag()) return std::string(kFlagLower[c.index - kFlagCellBase]);
  return std::string(kReg32Lower[c.index / 4]) + "." + std::to_string(c.index % 4);
}

std::optional<ArchCell> parse_cell(std::string_view name) {
  for (unsigned f = 0; f < std::size(kFlagLower); ++f)
    if (name == kFlagLower[f]) return ArchCell::flag(static_cast<Flag>(f));
  if (name.size() != 5 || name[3] != '.') return std::nullopt;
  const unsigned byte = static_cast<unsigned>(name[4] - '0');
  if (byte > 3) return std::nullopt;
  for (unsigned r = 0; r < 8; ++r)
    if (name.substr(0, 3) == kReg32Lower[r]) return ArchCell::reg_byte(r, byte);
  return std::nullopt;
}

std::string to_string(ArchObjectSet s) {
  std::vector<std::string> parts;
  for (unsigned r = 0; r < 8; ++r) {
    const unsigned nib = static_cast<unsigned>((s.bits() >> (4 * r)) & 0xF);
    if (nib == 0xF) {
      parts.emplace_back(kReg32Lower[r]);
      continue;
    }
    if (nib == 0x3) {
      parts.emplace_back(kWord[r]);
      continue;
    }
    for (unsigned b = 0; b < 4; ++b) {
      if (!((nib >> b) & 1u)) continue;
      if (r < 4 && b == 0) parts.emplace_back(kLowByte[r]);
      else if (r < 4 && b == 1) parts.emplace_back(kHighByte[r]);
      else parts.push_back(cell_name(ArchCell::reg_byte(r, b)));
    }
  }
  for (unsigned f = 0; f < std::size(kFlagLower); ++f)
    if (s.contains(ArchCell::flag(static_cast<Flag>(f)))) parts.emplace_back(kFlagLower[f]);
  std::string out = "{";
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ",";
    out += parts[i];
  }
  return out + "}";
}

std::vector<std::string> cell_names(ArchObjectSet s) {
  std::vector<std::string> out;
  s.for_each([&](ArchCell c) { out.push_back(cell_name(c)); });
  return out;
}

ArchObjectSet from_cell_names(const std::vector<std::string>& names) {
  ArchObjectSet s;
  for (const auto& n : names) {
    const auto c = parse_cell(n);
    if (!c) throw Error(ErrorCode::ParseError, "bad cell name '" + n + "'");
    s |= ArchObjectSet::of(*c);
  }
  return s;
}

}  // namespace vci
