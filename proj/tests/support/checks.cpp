#include "support/checks.hpp"

#include <set>
#include <sstream>

namespace vci::testing {

namespace {

RootSet to_mask(const std::set<RegionId>& roots) {
  RootSet m = 0;
  for (RegionId id : roots) m |= RootSet{1} << (id - 1);
  return m;
}

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::uppercase << v;
  return os.str();
}

}  // namespace

TracedRun run_pipeline(const GeneratedProgram& p, RunOptions options, TaintOptions taint) {
  TracedRun run;
  run.program = instrument(p.image, {p.image.base}, kIntegratedBase);
  run.engine = std::make_unique<TaintEngine>(RegionTable(run.program.regions), taint);
  for (const auto& m : p.memory_sources) run.engine->define_memory(m.start, m.length);
  for (Reg r : p.register_sources) run.engine->define_register(r);
  run.result = run_traced(run.program.integrated, run.engine->regions(),
                          load_integrated(p.initial, run.program.integrated, p.image.base), options,
                          [&](const TracePacket& pk) { run.engine->process_packet(pk); });
  return run;
}

OracleState run_oracle(const GeneratedProgram& p, bool address_taint) {
  TaintOracle oracle(address_taint);
  for (const auto& m : p.memory_sources) oracle.add_memory_root(m.start, m.length);
  for (Reg r : p.register_sources) oracle.add_register_root(r);
  Machine machine(p.initial);
  oracle.run(machine, 1'000'000);
  return oracle.state();
}

std::optional<std::string> compare_taint(const OracleState& oracle, const TaintState& engine) {
  if (oracle.defined() != engine.defined)
    return "defined cells differ: oracle " + to_string(oracle.defined()) + " engine " + to_string(engine.defined);
  for (unsigned c = 0; c < kCellCount; ++c) {
    if (!oracle.cells[c]) continue;
    const RootSet got = to_mask(engine.roots_of(engine.history[c]));
    if (got != oracle.cells[c])
      return "cell " + std::to_string(c) + " roots " + hex(got) + ", expected " + hex(oracle.cells[c]);
  }
  if (oracle.bytes.size() != engine.shadow.size())
    return "shadow size " + std::to_string(engine.shadow.size()) + ", expected " + std::to_string(oracle.bytes.size());
  for (const auto& [a, roots] : oracle.bytes) {
    const auto it = engine.shadow.find(a);
    if (it == engine.shadow.end()) return "byte " + hex(a) + " not shadowed";
    const RootSet got = to_mask(engine.roots_of(it->second));
    if (got != roots) return "byte " + hex(a) + " roots " + hex(got) + ", expected " + hex(roots);
  }
  return std::nullopt;
}

std::optional<std::string> compare_final_states(const GeneratedProgram& p, const MachineState& integrated) {
  Machine machine(p.initial);
  std::set<Address> slots;
  for (std::uint64_t i = 0; !machine.state().halted; ++i) {
    if (i > 1'000'000) return "original did not halt";
    const StepInfo info = machine.step();
    if (info.instr.mnemonic == Mnemonic::Call)
      for (Address k = 0; k < 4; ++k) slots.insert(machine.state().reg(Reg::ESP) + k);
  }
  const MachineState& o = machine.state();
  for (unsigned r = 0; r < 8; ++r)
    if (o.regs[r] != integrated.regs[r])
      return "register " + std::to_string(r) + " " + hex(integrated.regs[r]) + ", expected " + hex(o.regs[r]);
  if ((o.flags & eflags::kTracked) != (integrated.flags & eflags::kTracked))
    return "flags " + hex(integrated.flags) + ", expected " + hex(o.flags);
  if (o.halted != integrated.halted) return "halt state differs";
  for (const auto& [page, bytes] : o.memory.pages()) {
    for (Address k = 0; k < Memory::kPageSize; ++k) {
      const Address a = page + k;
      if (slots.count(a)) continue;
      if (!integrated.memory.is_mapped(a)) return "page " + hex(page) + " not mapped";
      if (integrated.memory.read8(a) != bytes[k]) return "memory at " + hex(a) + " differs";
    }
  }
  return std::nullopt;
}

std::string describe(const GeneratedProgram& p) {
  std::ostringstream os;
  for (const auto& m : p.memory_sources) os << "source " << hex(m.start) << "+" << m.length << "\n";
  for (Reg r : p.register_sources) os << "source " << reg_name(r) << "\n";
  for (const auto& line : p.listing) os << line << "\n";
  return os.str();
}

}  // namespace vci::testing
