#pragma once

// Post-run views of an analysis: the propagation graph in DOT, a text report
// and instruction search over recorded packets.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vci/packet.hpp"
#include "vci/regions.hpp"
#include "vci/taint.hpp"

namespace vci {

struct AnalysisReport {
  TaintState state;
  std::vector<TracePacket> packets;
};

/// Reads a taint export and, if given, the packet log of the same run.
AnalysisReport load_report(const std::filesystem::path& taint_export,
                           const std::optional<std::filesystem::path>& packet_log = std::nullopt);

/// One node per monitored region in id order, one edge per parent -> child.
std::string render_dot(const AnalysisReport& report);

struct FindResult {
  std::vector<std::uint32_t> packets;  // ascending
  std::set<RegionId> regions;          // monitored regions those packets touched
  friend bool operator==(const FindResult&, const FindResult&) = default;
};

/// `pattern` is an address ("0x40101A"), instruction text ("ADD ECX,EBX"), a
/// bare mnemonic ("ADD"), or an address followed by text. Matching ignores
/// case and blanks. Returns every packet whose region holds a match.
FindResult find_instruction(const AnalysisReport& report, const RegionMap& regions, std::string_view pattern);

/// Region lifecycles followed by every event once and a packet table.
std::string render_text_report(const AnalysisReport& report);

}  // namespace vci
