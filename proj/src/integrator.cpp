#include "vci/integrator.hpp"

#include <algorithm>
#include <cstdio>

#include "vci/error.hpp"

namespace vci {

namespace {

std::string hex(Address a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", a);
  return buf;
}

bool is_loop_family(Mnemonic m) {
  return m == Mnemonic::Loop || m == Mnemonic::Loope || m == Mnemonic::Loopne || m == Mnemonic::Jecxz;
}

constexpr bool fits_i8(std::int64_t v) { return v >= -128 && v <= 127; }

enum class Form : std::uint8_t { Plain, Short, Near, Trampoline };

constexpr unsigned kThunkSize = 6;
constexpr unsigned kTrampolineSize = 9;

}  // namespace

Instruction make_trace_call() { return make::call(kInstrumentationAddress); }

IntegrationList::IntegrationList(const IntegrationList& other)
    : image_base_(other.image_base_),
      image_end_(other.image_end_),
      nodes_(other.nodes_),
      address_index_(other.address_index_),
      entry_alias_(other.entry_alias_),
      incoming_(other.incoming_),
      import_targets_(other.import_targets_),
      next_handle_(other.next_handle_) {
  for (auto it = nodes_.begin(); it != nodes_.end(); ++it) by_handle_.emplace(it->handle, it);
}

IntegrationList& IntegrationList::operator=(const IntegrationList& other) {
  if (this != &other) *this = IntegrationList(other);
  return *this;
}

IntegrationList IntegrationList::load_program(const CodeImage& image, const std::vector<Address>& entries) {
  const auto code = discover_code(image, entries, ErrorCode::BranchIntoInstructionMiddle);
  IntegrationList list;
  list.image_base_ = image.base;
  list.image_end_ = image.end();
  for (const auto& [addr, ins] : code) {
    IntegrationNode n;
    n.instr = ins;
    n.origin = NodeOrigin::Original;
    n.original_address = addr;
    const NodeHandle h = list.emplace(list.nodes_.end(), std::move(n));
    list.address_index_.emplace(addr, h);
  }
  for (auto& n : list.nodes_) list.link_branch(n);
  return list;
}

IntegrationList::Iter IntegrationList::iter(NodeHandle h) const {
  const auto it = by_handle_.find(h);
  if (it == by_handle_.end()) throw Error(ErrorCode::InvalidHandle, "node " + std::to_string(h));
  return it->second;
}

NodeHandle IntegrationList::emplace(Iter pos, IntegrationNode node) {
  node.handle = next_handle_++;
  const auto it = nodes_.insert(pos, std::move(node));
  by_handle_.emplace(it->handle, it);
  return it->handle;
}

void IntegrationList::set_link(IntegrationNode& n, std::optional<NodeHandle> target) {
  if (n.link) {
    auto it = incoming_.find(*n.link);
    if (it != incoming_.end()) {
      it->second.erase(n.handle);
      if (it->second.empty()) incoming_.erase(it);
    }
  }
  n.link = target;
  if (target) incoming_[*target].insert(n.handle);
}

void IntegrationList::link_branch(IntegrationNode& n) {
  std::optional<NodeHandle> target;
  if (n.instr.is_direct_branch() && !n.land_region) {
    const auto it = address_index_.find(n.instr.target);
    if (it != address_index_.end()) {
      const auto alias = entry_alias_.find(n.instr.target);
      target = alias != entry_alias_.end() ? alias->second : it->second;
    } else if (n.instr.target >= image_base_ && n.instr.target < image_end_) {
      throw Error(ErrorCode::BranchIntoInstructionMiddle, "target " + hex(n.instr.target));
    } else {
      import_targets_.insert(n.instr.target);
    }
  }
  set_link(n, target);
}

std::optional<NodeHandle> IntegrationList::find(Address original) const {
  const auto it = address_index_.find(original);
  if (it == address_index_.end()) return std::nullopt;
  return it->second;
}

const IntegrationNode& IntegrationList::node(NodeHandle h) const { return *iter(h); }

std::vector<NodeHandle> IntegrationList::handles() const {
  std::vector<NodeHandle> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.handle);
  return out;
}

std::vector<NodeHandle> IntegrationList::incoming(NodeHandle h) const {
  iter(h);
  const auto it = incoming_.find(h);
  if (it == incoming_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

NodeHandle IntegrationList::insert_after(NodeHandle h, const Instruction& instr) {
  IntegrationNode n;
  n.instr = instr;
  n.origin = NodeOrigin::Injected;
  const NodeHandle nh = emplace(std::next(iter(h)), std::move(n));
  link_branch(*iter(nh));
  return nh;
}

NodeHandle IntegrationList::insert_before(NodeHandle h, const Instruction& instr, bool take_incoming) {
  IntegrationNode n;
  n.instr = instr;
  n.origin = NodeOrigin::Injected;
  const NodeHandle nh = emplace(iter(h), std::move(n));
  link_branch(*iter(nh));
  if (take_incoming) {
    for (const NodeHandle src : incoming(h))
      if (src != nh) set_link(*iter(src), nh);
  }
  return nh;
}

void IntegrationList::remove(NodeHandle h) {
  const Iter it = iter(h);
  const auto in = incoming(h);
  const Iter succ = std::next(it);
  if (!in.empty()) {
    if (succ == nodes_.end())
      throw Error(ErrorCode::DeleteLastNodeWithIncomingLinks, "node " + std::to_string(h));
    for (const NodeHandle src : in) set_link(*iter(src), succ->handle);
  }
  set_link(*it, std::nullopt);
  if (it->original_address) {
    const auto ai = address_index_.find(*it->original_address);
    if (ai != address_index_.end() && ai->second == h) address_index_.erase(ai);
  }
  std::erase_if(entry_alias_, [h](const auto& kv) { return kv.second == h; });
  by_handle_.erase(h);
  nodes_.erase(it);
}

NodeHandle IntegrationList::replace(NodeHandle h, const Instruction& instr) {
  IntegrationNode& n = *iter(h);
  n.instr = instr;
  n.origin = NodeOrigin::Replacement;
  n.land_region.reset();
  link_branch(n);
  return h;
}

void IntegrationList::inject_code_lands(const RegionMap& regions) {
  for (const auto& [entry, region] : regions) {
    const auto h = find(entry);
    if (!h) throw Error(ErrorCode::RegionImageMismatch, "no instruction at region entry " + hex(entry));
    if (!node(*h).instr.same_operation(region.instructions.front().instr))
      throw Error(ErrorCode::RegionImageMismatch, "region " + std::to_string(region.id) + " does not match the image");
    IntegrationNode land;
    land.instr = make_trace_call();
    land.origin = NodeOrigin::Injected;
    land.land_region = region.id;
    const NodeHandle lh = emplace(iter(*h), std::move(land));
    for (const NodeHandle src : incoming(*h))
      if (src != lh) set_link(*iter(src), lh);
    entry_alias_[entry] = lh;
  }
}

IntegrationResult IntegrationList::integrate(Address new_base, const IntegrateOptions& options) const {
  struct Slot {
    const IntegrationNode* node;
    Form form;
    Address addr = 0;
  };
  std::vector<Slot> slots;
  slots.reserve(nodes_.size());
  std::unordered_map<NodeHandle, std::size_t> index_of;
  std::set<Address> used_imports;

  for (const auto& n : nodes_) {
    Form f = Form::Plain;
    if (n.instr.is_direct_branch()) {
      if (n.instr.mnemonic == Mnemonic::Call || n.land_region) f = Form::Near;
      else f = n.instr.branch_form == BranchForm::Rel8 ? Form::Short : Form::Near;
      if (!n.link && !n.land_region && options.imports) {
        if (!options.imports->count(n.instr.target))
          throw Error(ErrorCode::UnresolvedImport, "no import entry for " + hex(n.instr.target));
        used_imports.insert(n.instr.target);
      }
    }
    index_of.emplace(n.handle, slots.size());
    slots.push_back({&n, f});
  }

  auto size_of = [](const Slot& s) -> Address {
    switch (s.form) {
      case Form::Plain: return static_cast<Address>(encoded_size(s.node->instr));
      case Form::Short: return 2;
      case Form::Near: return s.node->instr.mnemonic == Mnemonic::Jcc ? 6 : 5;
      case Form::Trampoline: return kTrampolineSize;
    }
    return 0;
  };

  std::map<Address, Address> thunk_of;
  Address code_end = new_base;
  auto layout = [&] {
    Address at = new_base;
    for (auto& s : slots) {
      s.addr = at;
      at += size_of(s);
    }
    code_end = at;
    thunk_of.clear();
    Address t = code_end;
    for (const Address imp : used_imports) {
      thunk_of[imp] = t;
      t += kThunkSize + options.thunk_gap;
    }
  };
  auto target_of = [&](const Slot& s) -> Address {
    const IntegrationNode& n = *s.node;
    if (n.link) return slots[index_of.at(*n.link)].addr;
    if (!n.land_region && options.imports) return thunk_of.at(n.instr.target);
    return n.instr.target;
  };

  // Stage 1: widen until every short displacement fits. Forms only grow, so
  // this reaches a fixed point.
  IntegrationResult result;
  bool changed = true;
  unsigned passes = 0;
  while (changed) {
    if (++passes > options.max_passes) throw Error(ErrorCode::LayoutDivergence, std::to_string(passes) + " passes");
    changed = false;
    layout();
    for (auto& s : slots) {
      if (s.form != Form::Short) continue;
      const auto rel = static_cast<std::int64_t>(static_cast<std::int32_t>(target_of(s) - (s.addr + 2)));
      if (fits_i8(rel)) continue;
      if (is_loop_family(s.node->instr.mnemonic)) {
        s.form = Form::Trampoline;
        ++result.loop_rewrites;
      } else {
        s.form = Form::Near;
        ++result.near_expansions;
      }
      changed = true;
    }
  }

  // Stage 2: emit with final addresses.
  result.base = new_base;
  Bytes& out = result.bytes;
  auto put = [&out](const Bytes& b) { out.insert(out.end(), b.begin(), b.end()); };
  for (const auto& s : slots) {
    const IntegrationNode& n = *s.node;
    Instruction ins = n.instr;
    ins.address = s.addr;
    switch (s.form) {
      case Form::Plain:
        put(encode(ins));
        break;
      case Form::Short:
      case Form::Near:
        ins.target = target_of(s);
        ins.branch_form = s.form == Form::Short ? BranchForm::Rel8 : BranchForm::Rel32;
        put(encode(ins));
        break;
      case Form::Trampoline: {
        // LOOPcc over a short JMP to the fall-through, into a near JMP to the
        // target. Touches neither flags nor the stack.
        Instruction loop = make::loop_family(ins.mnemonic, s.addr + 4);
        loop.address = s.addr;
        Instruction skip = make::jmp(s.addr + kTrampolineSize, BranchForm::Rel8);
        skip.address = s.addr + 2;
        Instruction far = make::jmp(target_of(s), BranchForm::Rel32);
        far.address = s.addr + 4;
        put(encode(loop));
        put(encode(skip));
        put(encode(far));
        break;
      }
    }
    if (n.land_region) result.land_sites.emplace(s.addr, *n.land_region);
  }
  result.code_end = code_end;

  std::size_t k = 0;
  const Address slot_base = code_end + static_cast<Address>(used_imports.size() * (kThunkSize + options.thunk_gap)) -
                            (used_imports.empty() ? 0 : options.thunk_gap);
  for (const Address imp : used_imports) {
    if (k > 0) out.insert(out.end(), options.thunk_gap, 0x90);
    Instruction thunk = make::jmp_indirect(slot_base + static_cast<Address>(4 * k));
    thunk.address = thunk_of.at(imp);
    put(encode(thunk));
    ++k;
  }
  result.thunks = thunk_of;
  result.thunks_end = new_base + static_cast<Address>(out.size());
  for (const Address imp : used_imports)
    for (unsigned i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(imp >> (8 * i)));

  for (const auto& [orig, h] : address_index_) {
    const auto alias = entry_alias_.find(orig);
    const NodeHandle target = alias != entry_alias_.end() ? alias->second : h;
    result.address_map.emplace(orig, slots[index_of.at(target)].addr);
  }
  return result;
}

}  // namespace vci
