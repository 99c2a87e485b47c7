#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include "support/fixtures.hpp"
#include "vci/channel.hpp"
#include "vci/error.hpp"
#include "vci/harness.hpp"
#include "vci/pipeline.hpp"

namespace vci {
namespace {

struct Traced {
  InstrumentedProgram program;
  RegionTable table;
  RunResult run;
};

Traced run_listing7(RunMode mode = RunMode::Static, const PacketSink& sink = {}) {
  const auto img = testing::listing7_image();
  Traced t;
  t.program = instrument(img, {0x401000}, 0x500000);
  t.table = RegionTable(t.program.regions);
  RunOptions opt;
  opt.mode = mode;
  t.run = run_traced(t.program.integrated, t.table, load_integrated(initial_state(img), t.program.integrated, 0x401000),
                     opt, sink);
  return t;
}

TEST(Harness, Listing7EmitsThreePacketsInOrder) {
  const auto t = run_listing7();
  ASSERT_EQ(t.run.packets.size(), 3u);
  for (std::uint32_t i = 0; i < 3; ++i) {
    EXPECT_EQ(t.run.packets[i].packet_id, i);
    EXPECT_EQ(t.run.packets[i].region_id, i);
    EXPECT_EQ(t.run.packets[i].thread_id, 0u);
  }
  EXPECT_EQ(t.run.packets[0].ea, 0x401015u);
  EXPECT_EQ(t.run.packets[0].ea_size, 4u);
  EXPECT_EQ(t.run.packets[0].access_kind, static_cast<std::uint8_t>(AccessKind::Read));
  EXPECT_EQ(t.run.packets[2].ea, 0x40101Du);
  EXPECT_EQ(t.run.packets[2].access_kind, static_cast<std::uint8_t>(AccessKind::Write));
  EXPECT_TRUE(t.run.final_state.halted);
  EXPECT_EQ(t.run.final_state.memory.read32(0x40101D), 0x44332211u + 0x88776655u);
}

TEST(Harness, PacketCarriesContextBeforeTheRegion) {
  const auto t = run_listing7();
  // The third region runs after ADD ECX,EBX.
  EXPECT_EQ(t.run.packets[2].regs[1], 0x44332211u + 0x88776655u);
  EXPECT_EQ(t.run.packets[1].regs[1], 0x44332211u);
}

TEST(Harness, Listing1LoopRepeatsFiveTimes) {
  const auto img = testing::listing1_image();
  IntegrateOptions io;
  io.imports = testing::listing1_imports();
  const auto p = instrument(img, {0x401000}, 0x3D0000, io);
  const RegionTable table(p.regions);
  RunOptions opt;
  opt.host_functions = testing::listing1_imports();
  auto state = initial_state(img);
  state.memory.map(0x401000, 0x100);  // the string the program pushes
  const auto run = run_traced(p.integrated, table, load_integrated(state, p.integrated, 0x401000), opt);
  std::size_t push_region = 0;
  const auto* r = table.find_by_entry(0x401005);
  ASSERT_NE(r, nullptr);
  for (const auto& pk : run.packets) push_region += pk.region_id == r->id;
  EXPECT_EQ(push_region, 5u);
  EXPECT_TRUE(run.final_state.halted);
  EXPECT_EQ(run.final_state.reg(Reg::EBX), 0u);
  EXPECT_TRUE(detect_interference(run.packets, table).empty());
}

TEST(Harness, NoLandsMeansNoPacketsAndSameState) {
  const auto img = testing::listing7_image();
  const auto integrated = IntegrationList::load_program(img, {0x401000}).integrate(0x500000);
  const auto run = run_traced(integrated, RegionTable{}, load_integrated(initial_state(img), integrated, 0x401000), {});
  EXPECT_TRUE(run.packets.empty());
  Machine plain(initial_state(img));
  plain.run(100);
  EXPECT_EQ(run.final_state.regs, plain.state().regs);
  EXPECT_EQ(run.final_state.memory.read32(0x40101D), plain.state().memory.read32(0x40101D));
}

TEST(Harness, DynamicModeDeliversTheSamePackets) {
  std::vector<TracePacket> seen;
  const auto t = run_listing7(RunMode::Dynamic, [&](const TracePacket& p) { seen.push_back(p); });
  EXPECT_EQ(seen, t.run.packets);
}

TEST(Harness, ConsumerFailurePoisonsTheRun) {
  try {
    run_listing7(RunMode::Dynamic, [](const TracePacket&) { throw Error(ErrorCode::UnknownRegionId, "x"); });
    FAIL() << "expected ChannelPoisoned";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ChannelPoisoned);
  }
}

TEST(Harness, StepLimitIsEnforced) {
  const CodeImage img{0x401000, testing::from_hex("EBFE")};  // JMP $
  const auto p = instrument(img, {0x401000}, 0x500000);
  RunOptions opt;
  opt.max_steps = 1000;
  try {
    run_traced(p.integrated, RegionTable(p.regions), load_integrated(initial_state(img), p.integrated, 0x401000), opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StepLimitExceeded);
  }
}

TEST(Harness, PacketLogMatchesMemory) {
  const auto path = std::filesystem::temp_directory_path() / "vci_harness_log.bin";
  const auto img = testing::listing7_image();
  const auto p = instrument(img, {0x401000}, 0x500000);
  RunOptions opt;
  opt.packet_log = path;
  const auto run =
      run_traced(p.integrated, RegionTable(p.regions), load_integrated(initial_state(img), p.integrated, 0x401000), opt);
  EXPECT_EQ(read_packet_log(path), run.packets);
  EXPECT_EQ(std::filesystem::file_size(path), kPacketLogHeaderSize + 3 * kPacketSize);
  std::filesystem::remove(path);
}

TEST(Harness, EscapeToUnknownCodeIsReported) {
  // JMP [0x401008] leaves the image for 0x701000.
  const CodeImage img{0x401000, testing::from_hex("FF2508104000 F4 00 00107000")};
  const auto p = instrument(img, {0x401000}, 0x500000);
  const RegionTable table(p.regions);
  auto state = initial_state(img);
  state.memory.map(0x701000, 16);
  state.memory.write8(0x701000, 0xF4);  // HLT at the escape target
  const auto run = run_traced(p.integrated, table, load_integrated(state, p.integrated, 0x401000), {});
  ASSERT_EQ(run.packets.size(), 2u);
  EXPECT_EQ(run.packets[1].region_id, kEscapeRegionId);
  const auto diags = detect_interference(run.packets, table);
  ASSERT_EQ(diags.size(), 1u);
  EXPECT_EQ(diags[0].packet_id, 1u);
  EXPECT_EQ(diags[0].address, 0x701000u);
  EXPECT_TRUE(detect_interference(run.packets, table, {0x701000}).empty());
}

TEST(Harness, UnknownRegionIdIsDiagnosed) {
  TracePacket p;
  p.region_id = 99;
  EXPECT_EQ(detect_interference({p}, RegionTable{}).size(), 1u);
}

TEST(Harness, ImpossibleRegionOrderIsDiagnosed) {
  const auto t = run_listing7();
  auto packets = t.run.packets;
  std::swap(packets[0], packets[2]);
  EXPECT_FALSE(detect_interference(packets, t.table).empty());
  EXPECT_TRUE(detect_interference(t.run.packets, t.table).empty());
}

TEST(Channel, PushPopRoundTrip) {
  BoundedChannel<TracePacket> ch(4);
  TracePacket p;
  p.packet_id = 7;
  p.regs[3] = 0xDEADBEEF;
  ch.push(p);
  EXPECT_EQ(serialize(*ch.pop()), serialize(p));
}

TEST(Channel, ProducerBlocksWhenFull) {
  BoundedChannel<int> ch(2);
  ch.push(1);
  ch.push(2);
  std::atomic<bool> pushed{false};
  std::thread producer([&] {
    ch.push(3);
    pushed = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_FALSE(pushed.load());
  EXPECT_EQ(ch.pop(), 1);
  producer.join();
  EXPECT_TRUE(pushed.load());
  EXPECT_EQ(ch.pop(), 2);
  EXPECT_EQ(ch.pop(), 3);
}

TEST(Channel, InterleavedTenThousandStayInOrder) {
  BoundedChannel<std::uint32_t> ch(16);
  std::vector<std::uint32_t> got;
  std::thread consumer([&] {
    while (auto v = ch.pop()) got.push_back(*v);
  });
  for (std::uint32_t i = 0; i < 10000; ++i) ch.push(i);
  ch.close();
  consumer.join();
  ASSERT_EQ(got.size(), 10000u);
  for (std::uint32_t i = 0; i < 10000; ++i) EXPECT_EQ(got[i], i);
}

TEST(Channel, PushAfterCloseFails) {
  BoundedChannel<int> ch(2);
  ch.close();
  try {
    ch.push(1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ChannelClosed);
  }
  EXPECT_FALSE(ch.pop().has_value());
}

}  // namespace
}  // namespace vci
