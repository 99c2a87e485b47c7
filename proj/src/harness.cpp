#include "vci/harness.hpp"

#include <exception>
#include <thread>

#include "vci/channel.hpp"
#include "vci/error.hpp"

namespace vci {

namespace {

std::string hex(Address a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", a);
  return buf;
}

TracePacket land_packet(const MachineState& s, const DataflowRegion& region, Address site) {
  TracePacket p;
  p.region_id = region.id;
  p.instr_address = site + 5;
  p.regs = s.regs;
  p.eflags = s.flags;
  if (const RegionInstruction* mem = region.mem_instruction()) {
    const auto accesses = effective_address(mem->instr, s.regs);
    if (!accesses.empty()) {
      p.ea = accesses.front().address;
      p.ea_size = accesses.front().size;
      p.access_kind = static_cast<std::uint8_t>(accesses.front().access);
    }
  }
  return p;
}

}  // namespace

void install_host_stubs(Machine& machine, const ImportTable& functions) {
  for (const auto& [address, name] : functions) {
    if (name == "ExitProcess")
      machine.add_stub(address, [](Machine& m) { m.state().halted = true; });
    else if (name == "MessageBoxA")
      machine.add_stub(address, [](Machine& m) { m.return_from_stub(1, 16); });
    else
      machine.add_stub(address, [](Machine& m) { m.return_from_stub(0, 0); });
  }
}

MachineState load_integrated(MachineState state, const IntegrationResult& image, Address original_entry) {
  const auto it = image.address_map.find(original_entry);
  if (it == image.address_map.end()) throw Error(ErrorCode::ConfigError, "entry " + hex(original_entry) + " not in image");
  state.memory.map(image.base, static_cast<std::uint32_t>(image.bytes.size()));
  state.memory.write_bytes(image.base, image.bytes);
  state.eip = it->second;
  return state;
}

RunResult run_traced(const IntegrationResult& image, const RegionTable& regions, MachineState initial,
                     const RunOptions& options, const PacketSink& consumer) {
  Machine machine(std::move(initial));
  install_host_stubs(machine, options.host_functions);

  RunResult result;
  PacketIdAllocator ids(options.first_packet_id);
  std::optional<PacketLogWriter> log;
  if (options.packet_log) log.emplace(*options.packet_log, options.log_capacity);

  const bool dynamic = options.mode == RunMode::Dynamic && consumer;
  BoundedChannel<TracePacket> channel(options.channel_capacity);
  std::exception_ptr consumer_error;
  std::thread worker;
  if (dynamic) {
    worker = std::thread([&] {
      try {
        while (auto p = channel.pop()) consumer(*p);
      } catch (...) {
        consumer_error = std::current_exception();
        channel.poison();
      }
    });
  }

  auto consumer_failure = [&]() -> Error {
    std::string what = "consumer failed";
    try {
      if (consumer_error) std::rethrow_exception(consumer_error);
    } catch (const std::exception& e) {
      what = e.what();
    }
    return Error(ErrorCode::ChannelPoisoned, what);
  };

  auto emit = [&](TracePacket p) {
    p.packet_id = ids.next();
    if (log) log->append(p);
    result.packets.push_back(p);
    if (dynamic) channel.push(p);
  };

  machine.set_instrumentation(kInstrumentationAddress, [&](Address site) {
    const auto land = image.land_sites.find(site);
    if (land == image.land_sites.end()) throw Error(ErrorCode::RegionImageMismatch, "unknown land site " + hex(site));
    const DataflowRegion* region = regions.find(land->second);
    if (!region) throw Error(ErrorCode::UnknownRegionId, std::to_string(land->second));
    emit(land_packet(machine.state(), *region, site));
  });

  auto inside = [&](Address a) { return a >= image.base && a < image.end(); };

  try {
    while (!machine.state().halted) {
      if (machine.steps() >= options.max_steps)
        throw Error(ErrorCode::StepLimitExceeded, std::to_string(options.max_steps) + " steps");
      const Address from = machine.state().eip;
      machine.step();
      const Address to = machine.state().eip;
      if (!machine.state().halted && inside(from) && !inside(to) && !machine.has_stub(to)) {
        TracePacket p;
        p.region_id = kEscapeRegionId;
        p.instr_address = to;
        p.regs = machine.state().regs;
        p.eflags = machine.state().flags;
        emit(p);
      }
    }
  } catch (const Error& e) {
    if (dynamic) {
      channel.close();
      worker.join();
      if (e.code() == ErrorCode::ChannelPoisoned) throw consumer_failure();
    }
    throw;
  } catch (...) {
    if (dynamic) {
      channel.close();
      worker.join();
    }
    throw;
  }

  if (log) log->close();
  if (dynamic) {
    channel.close();
    worker.join();
    if (consumer_error) throw consumer_failure();
  } else if (consumer) {
    for (const auto& p : result.packets) consumer(p);
  }
  result.steps = machine.steps();
  result.final_state = machine.state();
  return result;
}

namespace {

/// Region entries control may reach next, or nullopt when any is possible.
std::optional<std::set<Address>> successors(const DataflowRegion& r) {
  const Instruction& last = r.instructions.back().instr;
  std::set<Address> out;
  switch (last.mnemonic) {
    case Mnemonic::Ret:
      return std::nullopt;
    case Mnemonic::Hlt:
      return out;
    default:
      break;
  }
  if (last.branch_form == BranchForm::Indirect) return std::nullopt;
  if (last.is_direct_branch()) {
    out.insert(last.target);
    // A call whose target is not a region returns through a host function.
    if (last.mnemonic == Mnemonic::Call) out.insert(last.next_address());
  }
  if (last.falls_through()) out.insert(last.next_address());
  return out;
}

}  // namespace

std::vector<Diagnostic> detect_interference(const std::vector<TracePacket>& packets, const RegionTable& regions,
                                            const std::set<Address>& known_targets) {
  std::vector<Diagnostic> out;
  const DataflowRegion* prev = nullptr;
  for (const auto& p : packets) {
    if (p.region_id == kEscapeRegionId) {
      if (!known_targets.count(p.instr_address))
        out.push_back({p.packet_id, p.instr_address, "control left instrumented code for " + hex(p.instr_address)});
      prev = nullptr;
      continue;
    }
    const DataflowRegion* r = regions.find(p.region_id);
    if (!r) {
      out.push_back({p.packet_id, p.instr_address, "unknown region id " + std::to_string(p.region_id)});
      prev = nullptr;
      continue;
    }
    if (prev) {
      const auto next = successors(*prev);
      if (next && !next->count(r->entry()))
        out.push_back({p.packet_id, r->entry(),
                       "region " + std::to_string(r->id) + " cannot follow region " + std::to_string(prev->id)});
    }
    prev = r;
  }
  return out;
}

}  // namespace vci
