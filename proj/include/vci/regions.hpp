#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "vci/arch.hpp"
#include "vci/descriptors.hpp"
#include "vci/error.hpp"
#include "vci/isa.hpp"

namespace vci {

/// A flat code image with its load address.
struct CodeImage {
  Address base = 0;
  Bytes bytes;

  Address end() const { return base + static_cast<Address>(bytes.size()); }
  bool contains(Address a) const { return a >= base && a < end(); }
  friend bool operator==(const CodeImage&, const CodeImage&) = default;
};

struct VariantPair {
  ArchObjectSet in;
  ArchObjectSet out;
  friend bool operator==(const VariantPair&, const VariantPair&) = default;
};

enum class TerminatorKind : std::uint8_t { Memory, Control, FallthroughEnd };

struct RegionInstruction {
  Instruction instr;
  InstructionDescriptor desc;
};

/// A run of instructions with one entry. A memory-referencing instruction can
/// only appear first; a control transfer can only appear last.
struct DataflowRegion {
  std::uint32_t id = 0;
  std::vector<RegionInstruction> instructions;
  TerminatorKind terminator_kind = TerminatorKind::FallthroughEnd;
  std::optional<std::size_t> mem_instruction_index;
  std::vector<VariantPair> variants;
  ArchObjectSet disputable;
  ArchObjectSet written;  // union of dest over the register-only part

  Address entry() const { return instructions.front().instr.address; }
  const RegionInstruction* mem_instruction() const {
    return mem_instruction_index ? &instructions[*mem_instruction_index] : nullptr;
  }
  /// Instructions whose effect is summarized by the variants.
  std::span<const RegionInstruction> traced() const {
    const std::size_t skip = mem_instruction_index ? 1 : 0;
    return std::span<const RegionInstruction>(instructions).subspan(skip);
  }
};

bool operator==(const DataflowRegion& a, const DataflowRegion& b);

using RegionMap = std::map<Address, DataflowRegion>;

/// Recursive-descent discovery of every reachable instruction. Direct branch
/// targets outside the image are not followed.
/// Throws UndecodableReachableByte, and `overlap_error` when a byte would be
/// decoded as part of two different instructions.
std::map<Address, Instruction> discover_code(const CodeImage& image, const std::vector<Address>& entries,
                                             ErrorCode overlap_error);

RegionMap build_regions(const CodeImage& image, const std::vector<Address>& entries);

/// Builds a region from an instruction list, computing descriptors, variants,
/// disputable and written sets. The first instruction may reference memory.
DataflowRegion make_region(std::uint32_t id, std::vector<Instruction> instrs, TerminatorKind kind);

/// Partition of the cell universe into the elements that the given
/// instructions treat uniformly: whole registers and single flags, split
/// further wherever a src or dest set covers part of one.
std::vector<ArchObjectSet> single_elements(std::span<const RegionInstruction> instrs);

std::vector<VariantPair> gen_variants(const DataflowRegion& region);
ArchObjectSet compute_disputable(const std::vector<VariantPair>& variants);

/// Region lookup by id (ids are dense, assigned in address order).
class RegionTable {
 public:
  RegionTable() = default;
  explicit RegionTable(RegionMap regions);
  RegionTable(const RegionTable& o) : RegionTable(o.regions_) {}
  RegionTable(RegionTable&&) = default;
  RegionTable& operator=(const RegionTable& o) { return *this = RegionTable(o.regions_); }
  RegionTable& operator=(RegionTable&&) = default;

  const DataflowRegion* find(std::uint32_t id) const;
  const DataflowRegion* find_by_entry(Address a) const;
  const RegionMap& regions() const { return regions_; }
  std::size_t size() const { return regions_.size(); }

 private:
  RegionMap regions_;
  std::vector<const DataflowRegion*> by_id_;
};

// --- analysis database ------------------------------------------------------

inline constexpr int kAnalysisFormatVersion = 1;

struct AnalysisDatabase {
  CodeImage image;
  std::vector<Address> entries;
  RegionMap regions;
};

void export_analysis(const AnalysisDatabase& db, const std::filesystem::path& path);
AnalysisDatabase import_analysis(const std::filesystem::path& path);

}  // namespace vci
