#pragma once

// Architectural object universe: every general register split into four byte
// cells, followed by the seven tracked flags. A set of cells is a 64-bit mask.

#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vci/isa.hpp"

namespace vci {

enum class Flag : std::uint8_t { CF, PF, AF, ZF, SF, OF, DF };

inline constexpr unsigned kRegCellCount = 32;
inline constexpr unsigned kFlagCellBase = 32;
inline constexpr unsigned kCellCount = 39;

/// One atomic cell: reg*4 + byte for registers, 32 + flag for flags.
struct ArchCell {
  std::uint8_t index = 0;

  static constexpr ArchCell reg_byte(unsigned reg, unsigned byte) {
    return {static_cast<std::uint8_t>(reg * 4 + byte)};
  }
  static constexpr ArchCell flag(Flag f) {
    return {static_cast<std::uint8_t>(kFlagCellBase + static_cast<unsigned>(f))};
  }
  constexpr bool is_flag() const { return index >= kFlagCellBase; }
  friend constexpr auto operator<=>(ArchCell, ArchCell) = default;
};

class ArchObjectSet {
 public:
  constexpr ArchObjectSet() = default;
  constexpr explicit ArchObjectSet(std::uint64_t bits) : bits_(bits) {}

  static constexpr ArchObjectSet of(ArchCell c) { return ArchObjectSet(std::uint64_t{1} << c.index); }
  static constexpr ArchObjectSet flag(Flag f) { return of(ArchCell::flag(f)); }
  /// CF, PF, AF, ZF, SF and OF.
  static constexpr ArchObjectSet arith_flags() { return ArchObjectSet(std::uint64_t{0x3F} << kFlagCellBase); }
  static constexpr ArchObjectSet all_flags() { return ArchObjectSet(std::uint64_t{0x7F} << kFlagCellBase); }
  static constexpr ArchObjectSet all_regs() { return ArchObjectSet(0xFFFFFFFFull); }
  static constexpr ArchObjectSet universe() { return ArchObjectSet((std::uint64_t{1} << kCellCount) - 1); }

  constexpr std::uint64_t bits() const { return bits_; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr unsigned size() const { return static_cast<unsigned>(std::popcount(bits_)); }
  constexpr bool contains(ArchCell c) const { return (bits_ >> c.index) & 1u; }
  constexpr bool intersects(ArchObjectSet o) const { return (bits_ & o.bits_) != 0; }
  constexpr bool subset_of(ArchObjectSet o) const { return (bits_ & ~o.bits_) == 0; }

  constexpr ArchObjectSet& operator|=(ArchObjectSet o) { bits_ |= o.bits_; return *this; }
  constexpr ArchObjectSet& operator&=(ArchObjectSet o) { bits_ &= o.bits_; return *this; }
  constexpr ArchObjectSet& operator-=(ArchObjectSet o) { bits_ &= ~o.bits_; return *this; }
  friend constexpr ArchObjectSet operator|(ArchObjectSet a, ArchObjectSet b) { return a |= b; }
  friend constexpr ArchObjectSet operator&(ArchObjectSet a, ArchObjectSet b) { return a &= b; }
  friend constexpr ArchObjectSet operator-(ArchObjectSet a, ArchObjectSet b) { return a -= b; }
  friend constexpr bool operator==(ArchObjectSet, ArchObjectSet) = default;

  std::vector<ArchCell> cells() const {
    std::vector<ArchCell> out;
    for (std::uint64_t b = bits_; b; b &= b - 1)
      out.push_back({static_cast<std::uint8_t>(std::countr_zero(b))});
    return out;
  }

  template <typename F>
  void for_each(F&& f) const {
    for (std::uint64_t b = bits_; b; b &= b - 1) f(ArchCell{static_cast<std::uint8_t>(std::countr_zero(b))});
  }

 private:
  std::uint64_t bits_ = 0;
};

ArchObjectSet cells_of(Reg r);
ArchObjectSet cells_of_reg32(unsigned reg_index);

/// Accepts register names (any case) and flag names "CF".."DF".
/// Throws Error(UnknownRegister).
ArchObjectSet cells_of(std::string_view name);

/// "eax.0" .. "edi.3", "cf" .. "df".
std::string cell_name(ArchCell c);
std::optional<ArchCell> parse_cell(std::string_view name);

/// Compact human form, e.g. "{eax,cl,zf}".
std::string to_string(ArchObjectSet s);

/// Cell names, one per cell, for file formats.
std::vector<std::string> cell_names(ArchObjectSet s);
ArchObjectSet from_cell_names(const std::vector<std::string>& names);

}  // namespace vci
