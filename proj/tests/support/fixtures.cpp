#include "support/fixtures.hpp"

#include <stdexcept>

namespace vci::testing {

Bytes from_hex(std::string_view hex) {
  Bytes out;
  int hi = -1;
  for (char c : hex) {
    if (c == ' ' || c == '\n') continue;
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw std::invalid_argument("bad hex digit");
    if (hi < 0) {
      hi = v;
    } else {
      out.push_back(static_cast<std::uint8_t>(hi * 16 + v));
      hi = -1;
    }
  }
  if (hi >= 0) throw std::invalid_argument("odd hex length");
  return out;
}

CodeImage listing1_image() {
  return {0x401000, from_hex("BB05000000 6A00 6823104000 B823104000 50 6A00 E817000000 4B 75E9 6A00 E813000000")};
}

ImportTable listing1_imports() { return {{kMessageBoxA, "MessageBoxA"}, {kExitProcess, "ExitProcess"}}; }

Bytes listing2_bytes() {
  return from_hex(
      "BB05000000 9090 6A00 9090 6823104000 9090 B823104000 9090 50 9090 6A00 9090"
      "E814000000 9090 4B 9090 75DB 9090 6A00 9090 E80A000000 9090"
      "FF2549003D00 9090 FF254D003D00");
}

CodeImage listing7_image() {
  return {0x401000, from_hex("8B0D15104000 8B1D19104000 01D9 890D1D104000 F4"
                             "11223344 55667788 00000000")};
}

std::vector<std::string_view> listing3_lines() {
  return {"ADD EAX,DWORD PTR [0x405000]", "ADD EBX,EAX", "ADD ECX,EBX"};
}

std::vector<std::string_view> listing4_lines() {
  return {"ADD EDX,[0x405000]", "MOV ESI,EAX", "MOV EDI,ESI", "SHL ESI,4",   "SHR EDI,5",
          "XOR EDI,ESI",        "ADD EDI,EAX", "MOV ESI,EDX", "SHR ESI,11", "AND ESI,3"};
}

std::vector<std::string_view> listing5_lines() {
  return {"MOV EAX,[0x405000]", "MOV EBX,EAX", "XOR EAX,EAX", "SUB EDI,EBX",
          "SUB EDX,EAX",        "TEST EDX,EDX", "SETZ CL",    "MOV EDI,1234567h"};
}

DataflowRegion region_from_lines(const std::vector<std::string_view>& lines, Address base) {
  auto instrs = assemble_block(lines, base);
  const bool mem_first = !instrs.empty() && instrs.front().references_memory();
  const bool control_last = !instrs.empty() && instrs.back().is_control_transfer();
  const auto kind = mem_first && instrs.size() == 1 ? TerminatorKind::Memory
                    : control_last                   ? TerminatorKind::Control
                                                     : TerminatorKind::FallthroughEnd;
  return make_region(0, std::move(instrs), kind);
}

}  // namespace vci::testing
