#pragma once

// Editable instruction list for a loaded image and the relocating assembler
// that turns it back into bytes at a new base.

#include <cstdint>
#include <list>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "vci/isa.hpp"
#include "vci/regions.hpp"

namespace vci {

/// Calls into this address are code lands; the interpreter intercepts them.
inline constexpr Address kInstrumentationAddress = 0xFFFF0000u;

using NodeHandle = std::uint64_t;

enum class NodeOrigin : std::uint8_t { Original, Injected, Replacement };

struct IntegrationNode {
  NodeHandle handle = 0;
  Instruction instr;
  NodeOrigin origin = NodeOrigin::Original;
  std::optional<Address> original_address;
  /// Intra-image branch target. When empty, a direct branch targets
  /// instr.target as an absolute (possibly imported) address.
  std::optional<NodeHandle> link;
  /// Set on code-land nodes.
  std::optional<std::uint32_t> land_region;
};

/// Import table: out-of-image target address -> symbolic name.
using ImportTable = std::map<Address, std::string>;

struct IntegrateOptions {
  std::optional<ImportTable> imports;
  unsigned thunk_gap = 0;  // NOP bytes between consecutive thunks
  unsigned max_passes = 64;
};

struct IntegrationResult {
  Address base = 0;
  Bytes bytes;
  /// Original instruction address -> address control should reach in the new
  /// image (a code land placed in front of it, if any).
  std::map<Address, Address> address_map;
  /// New address of each code land -> region id.
  std::map<Address, std::uint32_t> land_sites;
  /// Import target -> thunk address.
  std::map<Address, Address> thunks;
  Address code_end = 0;     // first byte after the instruction stream
  Address thunks_end = 0;   // first byte after the last thunk
  std::size_t near_expansions = 0;  // rel8 branches widened to rel32
  std::size_t loop_rewrites = 0;    // LOOP-family branches emulated

  Address end() const { return base + static_cast<Address>(bytes.size()); }
};

class IntegrationList {
 public:
  IntegrationList() = default;
  IntegrationList(const IntegrationList& other);
  IntegrationList& operator=(const IntegrationList& other);
  IntegrationList(IntegrationList&&) = default;
  IntegrationList& operator=(IntegrationList&&) = default;

  /// Every reachable instruction becomes an original node, in address order.
  /// Throws UndecodableReachableByte or BranchIntoInstructionMiddle.
  static IntegrationList load_program(const CodeImage& image, const std::vector<Address>& entries);

  Address image_base() const { return image_base_; }
  const std::set<Address>& import_targets() const { return import_targets_; }
  std::size_t size() const { return nodes_.size(); }
  const std::list<IntegrationNode>& nodes() const { return nodes_; }

  std::optional<NodeHandle> find(Address original) const;
  const IntegrationNode& node(NodeHandle h) const;
  std::vector<NodeHandle> handles() const;
  /// Handles of nodes whose link points at `h`.
  std::vector<NodeHandle> incoming(NodeHandle h) const;

  NodeHandle insert_after(NodeHandle h, const Instruction& instr);
  /// With `take_incoming`, branches that targeted `h` now target the new node.
  NodeHandle insert_before(NodeHandle h, const Instruction& instr, bool take_incoming = false);
  /// Incoming links move to the successor. Throws DeleteLastNodeWithIncomingLinks.
  void remove(NodeHandle h);
  /// Same handle, same position; incoming links are untouched.
  NodeHandle replace(NodeHandle h, const Instruction& instr);

  /// Inserts a code land at the entry of every region.
  void inject_code_lands(const RegionMap& regions);

  IntegrationResult integrate(Address new_base, const IntegrateOptions& options = {}) const;

 private:
  using Iter = std::list<IntegrationNode>::iterator;

  Iter iter(NodeHandle h) const;
  NodeHandle emplace(Iter pos, IntegrationNode node);
  void link_branch(IntegrationNode& n);
  void set_link(IntegrationNode& n, std::optional<NodeHandle> target);

  Address image_base_ = 0;
  Address image_end_ = 0;
  std::list<IntegrationNode> nodes_;
  std::unordered_map<NodeHandle, Iter> by_handle_;
  std::map<Address, NodeHandle> address_index_;
  std::map<Address, NodeHandle> entry_alias_;  // original address -> land in front of it
  std::unordered_map<NodeHandle, std::set<NodeHandle>> incoming_;
  std::set<Address> import_targets_;
  NodeHandle next_handle_ = 1;
};

/// The code-land marker instruction (CALL to the instrumentation address).
Instruction make_trace_call();

}  // namespace vci
