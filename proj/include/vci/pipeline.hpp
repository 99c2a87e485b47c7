#pragma once

// Glue for the common export -> integrate -> run -> analyze sequence.

#include "vci/harness.hpp"
#include "vci/integrator.hpp"
#include "vci/regions.hpp"
#include "vci/taint.hpp"

namespace vci {

inline constexpr Address kDefaultStackBase = 0x4F0000;
inline constexpr std::uint32_t kDefaultStackSize = 0x10000;

struct InstrumentedProgram {
  CodeImage image;
  std::vector<Address> entries;
  RegionMap regions;
  IntegrationResult integrated;
};

/// Builds regions and integrates at new_base with one code land per region.
InstrumentedProgram instrument(const CodeImage& image, const std::vector<Address>& entries, Address new_base,
                               const IntegrateOptions& options = {});

/// Original image mapped and written, a stack mapped, ESP near its top.
MachineState initial_state(const CodeImage& image, bool strict = true, Address stack_base = kDefaultStackBase,
                           std::uint32_t stack_size = kDefaultStackSize);

}  // namespace vci
