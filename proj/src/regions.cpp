#include "vci/regions.hpp"

#include <algorithm>
#include <set>

#include "vci/error.hpp"

namespace vci {

namespace {

bool same_instruction(const Instruction& a, const Instruction& b) {
  return a.address == b.address && a.length == b.length && encode(a) == encode(b);
}

std::string hex(Address a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", a);
  return buf;
}

}  // namespace

bool operator==(const DataflowRegion& a, const DataflowRegion& b) {
  if (a.id != b.id || a.terminator_kind != b.terminator_kind || a.mem_instruction_index != b.mem_instruction_index ||
      a.variants != b.variants || a.disputable != b.disputable || a.written != b.written ||
      a.instructions.size() != b.instructions.size())
    return false;
  for (std::size_t i = 0; i < a.instructions.size(); ++i) {
    if (!same_instruction(a.instructions[i].instr, b.instructions[i].instr)) return false;
    if (!(a.instructions[i].desc == b.instructions[i].desc)) return false;
  }
  return true;
}

std::map<Address, Instruction> discover_code(const CodeImage& image, const std::vector<Address>& entries,
                                             ErrorCode overlap_error) {
  if (entries.empty()) throw Error(ErrorCode::ConfigError, "no entry points given");
  std::map<Address, Instruction> code;
  std::vector<std::int64_t> owner(image.bytes.size(), -1);
  std::vector<Address> work(entries.rbegin(), entries.rend());

  while (!work.empty()) {
    const Address at = work.back();
    work.pop_back();
    if (!image.contains(at)) throw Error(ErrorCode::UndecodableReachableByte, "address " + hex(at) + " outside image");
    const std::size_t off = at - image.base;
    if (owner[off] == static_cast<std::int64_t>(off)) continue;
    if (owner[off] != -1)
      throw Error(overlap_error, hex(at) + " is inside the instruction at " + hex(image.base + static_cast<Address>(owner[off])));

    Instruction ins;
    try {
      ins = decode(image.bytes, off, image.base);
    } catch (const Error& e) {
      throw Error(ErrorCode::UndecodableReachableByte, e.what());
    }
    for (std::size_t k = off; k < off + ins.length; ++k) {
      if (owner[k] != -1)
        throw Error(overlap_error, "instruction at " + hex(at) + " overlaps " + hex(image.base + static_cast<Address>(owner[k])));
      owner[k] = static_cast<std::int64_t>(off);
    }
    code.emplace(at, ins);

    if (ins.is_direct_branch() && image.contains(ins.target)) work.push_back(ins.target);
    if (ins.falls_through() && ins.next_address() < image.end()) work.push_back(ins.next_address());
  }
  return code;
}

std::vector<ArchObjectSet> single_elements(std::span<const RegionInstruction> instrs) {
  std::vector<ArchObjectSet> parts;
  for (unsigned r = 0; r < 8; ++r) parts.push_back(cells_of_reg32(r));
  for (unsigned f = 0; f < 7; ++f) parts.push_back(ArchObjectSet::flag(static_cast<Flag>(f)));

  auto refine = [&](ArchObjectSet s) {
    if (s.empty()) return;
    std::vector<ArchObjectSet> next;
    for (const auto& p : parts) {
      const ArchObjectSet in = p & s;
      const ArchObjectSet out = p - s;
      if (!in.empty()) next.push_back(in);
      if (!out.empty()) next.push_back(out);
    }
    parts.swap(next);
  };
  for (const auto& ri : instrs) {
    refine(ri.desc.src);
    refine(ri.desc.dest);
  }
  std::sort(parts.begin(), parts.end(),
            [](ArchObjectSet a, ArchObjectSet b) { return std::countr_zero(a.bits()) < std::countr_zero(b.bits()); });
  return parts;
}

std::vector<VariantPair> gen_variants(const DataflowRegion& region) {
  const auto traced = region.traced();
  const auto elements = single_elements(traced);

  ArchObjectSet dest_full;
  for (const auto& ri : traced) dest_full |= ri.desc.dest;
  const ArchObjectSet written = dest_full;

  ArchObjectSet done;
  std::vector<VariantPair> variants;
  for (const auto& ri : traced) {
    for (const ArchObjectSet single : elements) {
      if (!single.subset_of(ri.desc.src) || single.intersects(done)) continue;
      ArchObjectSet out = single;
      for (const auto& rj : traced) {
        if (out.intersects(rj.desc.src)) out |= rj.desc.dest;
        else out -= rj.desc.dest;
        if (out.empty()) break;
      }
      done |= single;
      if (out.empty()) continue;
      dest_full -= out | single;
      // A seed the region overwrites with itself still needs its pair,
      // otherwise the O_s erase of another variant would drop it.
      if (out != single || single.intersects(written)) variants.push_back({single, out});
    }
  }
  if (!dest_full.empty()) variants.push_back({dest_full, {}});
  return variants;
}

ArchObjectSet compute_disputable(const std::vector<VariantPair>& variants) {
  ArchObjectSet d;
  for (std::size_t i = 0; i < variants.size(); ++i)
    for (std::size_t j = 0; j < variants.size(); ++j)
      if (i != j) d |= variants[i].out & variants[j].out;
  return d - ArchObjectSet::all_flags();
}

DataflowRegion make_region(std::uint32_t id, std::vector<Instruction> instrs, TerminatorKind kind) {
  DataflowRegion r;
  r.id = id;
  r.terminator_kind = kind;
  for (auto& ins : instrs) r.instructions.push_back({ins, describe(ins)});
  if (!r.instructions.empty() && r.instructions.front().instr.references_memory()) r.mem_instruction_index = 0;
  for (const auto& ri : r.traced()) r.written |= ri.desc.dest;
  r.variants = gen_variants(r);
  r.disputable = compute_disputable(r.variants);
  return r;
}

RegionMap build_regions(const CodeImage& image, const std::vector<Address>& entries) {
  const auto code = discover_code(image, entries, ErrorCode::OverlappingCodePaths);

  std::set<Address> leaders(entries.begin(), entries.end());
  for (const auto& [a, ins] : code)
    if (ins.is_direct_branch() && image.contains(ins.target)) leaders.insert(ins.target);

  std::vector<std::vector<Instruction>> runs;
  std::vector<TerminatorKind> kinds;
  const Instruction* prev = nullptr;
  for (const auto& [a, ins] : code) {
    const bool split = !prev || leaders.count(a) || ins.references_memory() || prev->is_control_transfer() ||
                       prev->next_address() != a;
    if (split) {
      if (prev) {
        TerminatorKind k = TerminatorKind::FallthroughEnd;
        if (prev->is_control_transfer()) k = TerminatorKind::Control;
        else if (prev->next_address() == a && ins.references_memory()) k = TerminatorKind::Memory;
        kinds.push_back(k);
      }
      runs.emplace_back();
    }
    runs.back().push_back(ins);
    prev = &ins;
  }
  if (prev) kinds.push_back(prev->is_control_transfer() ? TerminatorKind::Control : TerminatorKind::FallthroughEnd);

  RegionMap out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const Address entry = runs[i].front().address;
    out.emplace(entry, make_region(static_cast<std::uint32_t>(i), std::move(runs[i]), kinds[i]));
  }
  return out;
}

RegionTable::RegionTable(RegionMap regions) : regions_(std::move(regions)) {
  by_id_.assign(regions_.size(), nullptr);
  for (const auto& [a, r] : regions_) {
    if (r.id >= by_id_.size()) by_id_.resize(r.id + 1, nullptr);
    by_id_[r.id] = &r;
  }
}

const DataflowRegion* RegionTable::find(std::uint32_t id) const {
  return id < by_id_.size() ? by_id_[id] : nullptr;
}

const DataflowRegion* RegionTable::find_by_entry(Address a) const {
  const auto it = regions_.find(a);
  return it == regions_.end() ? nullptr : &it->second;
}

}  // namespace vci
