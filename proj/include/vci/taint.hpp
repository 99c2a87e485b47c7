#pragma once

// Packet processor: replays trace packets against region summaries, tracking
// which register cells and memory bytes are defined (tainted) and which
// monitored memory regions they descend from.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "vci/arch.hpp"
#include "vci/packet.hpp"
#include "vci/regions.hpp"

namespace vci {

using RegionId = std::uint32_t;
/// Sorted, duplicate-free list of monitored region ids.
using History = std::vector<RegionId>;

struct MonitoredRegion {
  RegionId id = 0;
  std::string label;
  Address start = 0;
  std::uint32_t length = 0;
  std::optional<std::uint32_t> created_packet;  // empty for a source definition
  Address created_instr = 0;
  std::vector<std::uint32_t> references;
  std::optional<std::uint32_t> destroyed_by;
  std::set<RegionId> parents;
  std::set<RegionId> children;
  std::uint32_t live_bytes = 0;

  bool is_root() const { return !created_packet.has_value(); }
  friend bool operator==(const MonitoredRegion&, const MonitoredRegion&) = default;
};

enum class EventKind : std::uint8_t { Create, Reference, Destroy, Define, Kill };

std::string_view event_name(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);

struct TaintEvent {
  std::optional<std::uint32_t> packet_id;  // empty for source definitions
  EventKind kind = EventKind::Create;
  std::optional<RegionId> region;
  ArchObjectSet cells;
  Address address = 0;
  friend bool operator==(const TaintEvent&, const TaintEvent&) = default;
};

using HistoryTable = std::array<History, kCellCount>;

/// Register and flag taint: defined cells and their parent histories.
struct CellTaint {
  ArchObjectSet defined;
  HistoryTable history{};
};

/// Propagates through a region via its variants, keeping cells the region
/// never writes.
/// Returns the entry state.
CellTaint apply_variants(CellTaint& cells, const DataflowRegion& region);

/// Each defined disputable cell gets the union of the entry
/// histories of every variant that writes it.
void process_disputable(CellTaint& cells, const DataflowRegion& region, const CellTaint& before);

struct TaintState : CellTaint {
  std::unordered_map<Address, RegionId> shadow;
  std::vector<MonitoredRegion> regions;  // index = id - 1
  std::vector<TaintEvent> events;
  std::vector<std::string> warnings;

  const MonitoredRegion* region(RegionId id) const;
  /// Source regions a region descends from.
  std::set<RegionId> roots_of(RegionId id) const;
  std::set<RegionId> roots_of(const History& h) const;
};

enum class OverlapPolicy { Merge, Reject };

struct TaintOptions {
  bool address_taint = true;
  OverlapPolicy overlap = OverlapPolicy::Merge;
};

class TaintEngine {
 public:
  explicit TaintEngine(RegionTable regions, TaintOptions options = {});

  /// Root region over [start, start+length). Throws ConfigError for an empty
  /// range and OverlapWithLiveRegion under the reject policy.
  RegionId define_memory(Address start, std::uint32_t length);
  /// Root region whose history covers every cell of the register.
  RegionId define_register(Reg r);
  /// The bytes accessed by the memory instruction at this original address
  /// become a fresh root each time its region executes.
  void define_at_instruction(Address original_address);

  /// Replays one region execution. Throws UnknownRegionId; escape packets
  /// only warn.
  void process_packet(const TracePacket& packet);

  const TaintState& state() const { return state_; }
  const RegionTable& regions() const { return table_; }
  const TaintOptions& options() const { return options_; }

 private:
  void process_standard(const TracePacket& packet, const RegionInstruction& ri);
  void process_nonstandard(const TracePacket& packet, const RegionInstruction& ri);

  History history_of(ArchObjectSet cells) const;
  void define_cells(ArchObjectSet cells, const History& h);
  void kill_cells(ArchObjectSet cells);
  /// Parents of the defined bytes in range; records a reference on each.
  History read_bytes(Address a, std::uint32_t n, std::uint32_t packet_id, Address instr);
  void write_bytes(Address a, std::uint32_t n, const History& incoming, std::uint32_t packet_id, Address instr);
  void release_byte(Address a, std::uint32_t packet_id, Address instr);
  RegionId new_region(Address start, std::uint32_t length, std::string label);
  RegionId define_root_range(Address start, std::uint32_t length, std::optional<std::uint32_t> packet_id);

  RegionTable table_;
  TaintOptions options_;
  TaintState state_;
  std::set<Address> at_instruction_;
};

// --- export -----------------------------------------------------------------

inline constexpr int kTaintFormatVersion = 1;

void export_taint(const TaintState& state, std::ostream& out);
void export_taint(const TaintState& state, const std::filesystem::path& path);
/// Reads back events and the final snapshot. Throws ParseError / VersionMismatch.
TaintState import_taint(const std::filesystem::path& path);

}  // namespace vci
