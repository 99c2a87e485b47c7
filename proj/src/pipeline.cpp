#include "vci/pipeline.hpp"

namespace vci {

InstrumentedProgram instrument(const CodeImage& image, const std::vector<Address>& entries, Address new_base,
                               const IntegrateOptions& options) {
  InstrumentedProgram p;
  p.image = image;
  p.entries = entries;
  p.regions = build_regions(image, entries);
  IntegrationList list = IntegrationList::load_program(image, entries);
  list.inject_code_lands(p.regions);
  p.integrated = list.integrate(new_base, options);
  return p;
}

MachineState initial_state(const CodeImage& image, bool strict, Address stack_base, std::uint32_t stack_size) {
  MachineState s;
  s.memory = Memory(strict);
  if (!image.bytes.empty()) {
    s.memory.map(image.base, static_cast<std::uint32_t>(image.bytes.size()));
    s.memory.write_bytes(image.base, image.bytes);
  }
  s.memory.map(stack_base, stack_size);
  s.reg(Reg::ESP) = stack_base + stack_size - 0x100;
  s.eip = image.base;
  return s;
}

}  // namespace vci
