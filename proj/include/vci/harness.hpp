#pragma once

// Runs an integrated image in the interpreter, turning code lands into trace
// packets. Static mode collects packets and hands them over after execution;
// dynamic mode feeds a consumer thread through a bounded channel while the
// program runs.

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vci/integrator.hpp"
#include "vci/machine.hpp"
#include "vci/packet.hpp"
#include "vci/regions.hpp"

namespace vci {

enum class RunMode { Static, Dynamic };

using PacketSink = std::function<void(const TracePacket&)>;

struct RunOptions {
  RunMode mode = RunMode::Static;
  std::optional<std::filesystem::path> packet_log;
  std::uint64_t log_capacity = kDefaultLogCapacity;
  std::size_t channel_capacity = 1024;
  std::uint64_t max_steps = 10'000'000;
  std::uint64_t first_packet_id = 0;
  /// Host functions reachable through import thunks, by address.
  ImportTable host_functions;
};

struct RunResult {
  MachineState final_state;
  std::vector<TracePacket> packets;
  std::uint64_t steps = 0;
};

/// Installs the known host functions: ExitProcess halts, MessageBoxA returns
/// 1 and pops its 4 arguments, anything else returns 0 and leaves the stack
/// to the caller.
void install_host_stubs(Machine& machine, const ImportTable& functions);

/// Maps and writes the integrated bytes into `state` and points EIP at the
/// new address of `original_entry`.
MachineState load_integrated(MachineState state, const IntegrationResult& image, Address original_entry);

/// Runs until HLT. Every code land emits one packet; leaving the integrated
/// image for an address that is not a host function emits an escape packet.
/// Throws StepLimitExceeded, PacketIdExhausted, LogFull, and ChannelPoisoned
/// when the dynamic consumer fails.
RunResult run_traced(const IntegrationResult& image, const RegionTable& regions, MachineState initial,
                     const RunOptions& options, const PacketSink& consumer = {});

struct Diagnostic {
  std::uint32_t packet_id = 0;
  Address address = 0;
  std::string message;
  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

/// Flags packets that the region table cannot explain. These are escapes to
/// unknown code, unknown region ids, or region pairs with no static edge.
/// Addresses in `known_targets` (host functions) are not reported.
std::vector<Diagnostic> detect_interference(const std::vector<TracePacket>& packets, const RegionTable& regions,
                                            const std::set<Address>& known_targets = {});

}  // namespace vci
