#pragma once

// Fixed programs used across tests, transcribed byte for byte.

#include <string_view>
#include <vector>

#include "vci/integrator.hpp"
#include "vci/regions.hpp"

namespace vci::testing {

inline constexpr Address kMessageBoxA = 0x401030;
inline constexpr Address kExitProcess = 0x401036;

/// The MessageBox loop at 0x401000 (11 instructions, EBX counts 5 down).
CodeImage listing1_image();
ImportTable listing1_imports();

/// The two-NOP integration of listing 1 at 0x3D0002, bytes 0x3D0002..0x3D0048.
Bytes listing2_bytes();
inline constexpr Address kListing2Base = 0x3D0002;

/// MOV ECX,[401015]; MOV EBX,[401019]; ADD ECX,EBX; MOV [40101D],ECX; HLT,
/// followed by the three data dwords.
CodeImage listing7_image();
inline constexpr Address kListing7SourceA = 0x401015;
inline constexpr Address kListing7SourceB = 0x401019;
inline constexpr Address kListing7Result = 0x40101D;

/// Region bodies for the variant tables (memory operand at 0x405000).
std::vector<std::string_view> listing3_lines();
std::vector<std::string_view> listing4_lines();
std::vector<std::string_view> listing5_lines();

/// A region assembled from text at `base`, laid out as region_builder would.
DataflowRegion region_from_lines(const std::vector<std::string_view>& lines, Address base = 0x401000);

/// Bytes from a hex string; spaces are ignored.
Bytes from_hex(std::string_view hex);

}  // namespace vci::testing
