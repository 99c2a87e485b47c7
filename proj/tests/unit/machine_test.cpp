#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "vci/error.hpp"
#include "vci/machine.hpp"

namespace vci {
namespace {

Machine machine_for(std::vector<std::string_view> lines, Address base = 0x401000) {
  MachineState s;
  const Bytes code = encode_block(assemble_block(lines, base));
  s.memory.map(base, 0x1000);
  s.memory.write_bytes(base, code);
  s.memory.map(0x402000, 0x1000);
  s.memory.map(0x4F0000, 0x10000);
  s.reg(Reg::ESP) = 0x4FFF00;
  s.eip = base;
  return Machine(std::move(s));
}

TEST(Machine, MovImmediateLeavesFlags) {
  auto m = machine_for({"MOV EBX,5", "HLT"});
  m.state().flags |= eflags::ZF;
  m.run(10);
  EXPECT_EQ(m.state().reg(Reg::EBX), 5u);
  EXPECT_TRUE(m.state().flag(eflags::ZF));
  EXPECT_TRUE(m.state().halted);
}

TEST(Machine, DecToZeroKeepsCarry) {
  auto m = machine_for({"DEC EBX", "HLT"});
  m.state().reg(Reg::EBX) = 1;
  m.state().flags |= eflags::CF;
  m.run(10);
  EXPECT_EQ(m.state().reg(Reg::EBX), 0u);
  EXPECT_TRUE(m.state().flag(eflags::ZF));
  EXPECT_TRUE(m.state().flag(eflags::CF));
}

TEST(Machine, RepMovsbCopies) {
  auto m = machine_for({"REP MOVSB", "HLT"});
  auto& s = m.state();
  s.memory.write_bytes(0x402000, std::vector<std::uint8_t>{1, 2, 3});
  s.reg(Reg::ESI) = 0x402000;
  s.reg(Reg::EDI) = 0x402100;
  s.reg(Reg::ECX) = 3;
  m.run(10);
  EXPECT_EQ(s.memory.read_bytes(0x402100, 3), (Bytes{1, 2, 3}));
  EXPECT_EQ(s.reg(Reg::ESI), 0x402003u);
  EXPECT_EQ(s.reg(Reg::EDI), 0x402103u);
  EXPECT_EQ(s.reg(Reg::ECX), 0u);
}

TEST(Machine, StringOpsHonourDirection) {
  auto m = machine_for({"STOSB", "HLT"});
  auto& s = m.state();
  s.reg(Reg::EAX) = 0xAB;
  s.reg(Reg::EDI) = 0x402010;
  s.flags |= eflags::DF;
  m.run(10);
  EXPECT_EQ(s.memory.read8(0x402010), 0xABu);
  EXPECT_EQ(s.reg(Reg::EDI), 0x40200Fu);
}

TEST(Machine, AddSetsCarryOverflowAndParity) {
  auto m = machine_for({"ADD EAX,EBX", "HLT"});
  m.state().reg(Reg::EAX) = 0x7FFFFFFF;
  m.state().reg(Reg::EBX) = 1;
  m.run(10);
  const auto& s = m.state();
  EXPECT_EQ(s.reg(Reg::EAX), 0x80000000u);
  EXPECT_TRUE(s.flag(eflags::OF));
  EXPECT_TRUE(s.flag(eflags::SF));
  EXPECT_FALSE(s.flag(eflags::CF));
  EXPECT_TRUE(s.flag(eflags::AF));
  EXPECT_TRUE(s.flag(eflags::PF));
}

TEST(Machine, SubBorrowSetsCarry) {
  auto m = machine_for({"SUB EAX,1", "HLT"});
  m.run(10);
  EXPECT_EQ(m.state().reg(Reg::EAX), 0xFFFFFFFFu);
  EXPECT_TRUE(m.state().flag(eflags::CF));
  EXPECT_FALSE(m.state().flag(eflags::OF));
}

TEST(Machine, ByteRegistersAlias) {
  auto m = machine_for({"MOV AH,0x12", "MOV AL,0x34", "HLT"});
  m.run(10);
  EXPECT_EQ(m.state().reg(Reg::EAX), 0x1234u);
}

TEST(Machine, CallRetUseTheStack) {
  auto m = machine_for({"CALL 0x401007", "HLT", "NOP", "RET"});
  m.run(10);
  EXPECT_TRUE(m.state().halted);
  EXPECT_EQ(m.state().reg(Reg::ESP), 0x4FFF00u);
  EXPECT_EQ(m.state().memory.read32(0x4FFEFC), 0x401005u);
}

TEST(Machine, LoopCountsDown) {
  auto m = machine_for({"MOV ECX,4", "INC EAX", "LOOP 0x401005", "HLT"});
  m.run(100);
  EXPECT_EQ(m.state().reg(Reg::EAX), 4u);
  EXPECT_EQ(m.state().reg(Reg::ECX), 0u);
}

TEST(Machine, ConditionalMoveAndSet) {
  auto m = machine_for({"CMP EAX,EBX", "SETZ CL", "CMOVZ EDX,ESI", "HLT"});
  m.state().reg(Reg::ESI) = 77;
  m.state().reg(Reg::ECX) = 0xFFFFFF00;
  m.run(10);
  EXPECT_EQ(m.state().reg(Reg::ECX), 0xFFFFFF01u);
  EXPECT_EQ(m.state().reg(Reg::EDX), 77u);
}

TEST(Machine, UnmappedAccessFaultsInStrictMode) {
  auto m = machine_for({"MOV EAX,[0x700000]", "HLT"});
  try {
    m.run(10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MemoryFault);
  }
}

TEST(Machine, LenientMemoryZeroFills) {
  Memory mem(false);
  EXPECT_EQ(mem.read32(0x12345678), 0u);
  mem.write8(0x12345678, 9);
  EXPECT_EQ(mem.read8(0x12345678), 9u);
}

TEST(Machine, UndecodableInstructionIsTyped) {
  MachineState s;
  s.memory.map(0x401000, 16);
  s.memory.write_bytes(0x401000, testing::from_hex("0F0B"));
  s.eip = 0x401000;
  Machine m(std::move(s));
  try {
    m.step();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UndecodableInstruction);
  }
}

TEST(Machine, StubsInterceptCalls) {
  auto m = machine_for({"PUSH 7", "CALL 0x500000", "HLT"});
  m.add_stub(0x500000, [](Machine& mm) { mm.return_from_stub(42, 4); });
  m.run(10);
  EXPECT_EQ(m.state().reg(Reg::EAX), 42u);
  EXPECT_EQ(m.state().reg(Reg::ESP), 0x4FFF00u);
}

TEST(Machine, InstrumentationCallsPushNothing) {
  auto m = machine_for({"CALL 0xFFFF0000", "HLT"});
  std::vector<Address> sites;
  m.set_instrumentation(0xFFFF0000, [&](Address site) { sites.push_back(site); });
  m.run(10);
  EXPECT_EQ(sites, std::vector<Address>{0x401000});
  EXPECT_EQ(m.state().reg(Reg::ESP), 0x4FFF00u);
}

TEST(Machine, StepLimit) {
  auto m = machine_for({"JMP 0x401000"});
  try {
    m.run(50);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StepLimitExceeded);
  }
}

}  // namespace
}  // namespace vci
