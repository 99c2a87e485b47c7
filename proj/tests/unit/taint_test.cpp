#include <gtest/gtest.h>

#include <filesystem>

#include "support/fixtures.hpp"
#include "vci/error.hpp"
#include "vci/pipeline.hpp"
#include "vci/taint.hpp"

namespace vci {
namespace {

/// Runs a program through the whole pipeline with the given sources.
struct PipelineRun {
  InstrumentedProgram program;
  std::unique_ptr<TaintEngine> engine;
  RunResult result;

  PipelineRun(const CodeImage& img, const std::function<void(TaintEngine&)>& sources, const MachineState* init = nullptr) {
    program = instrument(img, {img.base}, 0x500000);
    engine = std::make_unique<TaintEngine>(RegionTable(program.regions));
    sources(*engine);
    const MachineState s = init ? *init : initial_state(img);
    result = run_traced(program.integrated, engine->regions(), load_integrated(s, program.integrated, img.base), {},
                        [&](const TracePacket& p) { engine->process_packet(p); });
  }
  const TaintState& state() const { return engine->state(); }
};

const MonitoredRegion* find_label(const TaintState& s, const std::string& label) {
  for (const auto& r : s.regions)
    if (r.label == label) return &r;
  return nullptr;
}

TEST(Taint, Listing7ChildHasBothSources) {
  PipelineRun run(testing::listing7_image(), [](TaintEngine& e) {
    e.define_memory(testing::kListing7SourceA, 4);
    e.define_memory(testing::kListing7SourceB, 4);
  });
  const auto& s = run.state();
  const auto* a = find_label(s, "p_401015");
  const auto* b = find_label(s, "p_401019");
  const auto* c = find_label(s, "p_40101D");
  ASSERT_TRUE(a && b && c);
  EXPECT_EQ(c->parents, (std::set<RegionId>{a->id, b->id}));
  EXPECT_TRUE(a->children.count(c->id));
  EXPECT_TRUE(b->children.count(c->id));
  EXPECT_EQ(a->references, std::vector<std::uint32_t>{0});
  EXPECT_EQ(b->references, std::vector<std::uint32_t>{1});
  EXPECT_EQ(c->created_packet, 2u);
  EXPECT_EQ(c->created_instr, 0x40100Eu);
  EXPECT_EQ(s.history[ArchCell::reg_byte(1, 0).index], (History{a->id, b->id}));
}

TEST(Taint, DefineSourceCreatesRoots) {
  TaintEngine e{RegionTable{}};
  const RegionId a = e.define_memory(0x401015, 4);
  const RegionId b = e.define_memory(0x401019, 4);
  EXPECT_EQ(e.state().regions.size(), 2u);
  EXPECT_EQ(e.state().region(a)->label, "p_401015");
  EXPECT_EQ(e.state().region(b)->label, "p_401019");
  EXPECT_EQ(e.state().shadow.size(), 8u);
}

TEST(Taint, DefineRegisterGivesEveryCellOneRoot) {
  TaintEngine e{RegionTable{}};
  const RegionId r = e.define_register(Reg::EAX);
  EXPECT_EQ(e.state().defined, cells_of(Reg::EAX));
  for (unsigned b = 0; b < 4; ++b) EXPECT_EQ(e.state().history[b], History{r});
}

TEST(Taint, EmptyRangeIsRejected) {
  TaintEngine e{RegionTable{}};
  try {
    e.define_memory(0x1000, 0);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::ConfigError);
  }
}

TEST(Taint, OverlapMergesOrRejects) {
  TaintEngine merge{RegionTable{}};
  const RegionId a = merge.define_memory(0x1000, 4);
  EXPECT_EQ(merge.define_memory(0x1002, 4), a);
  EXPECT_EQ(merge.state().region(a)->length, 6u);
  EXPECT_EQ(merge.state().region(a)->live_bytes, 6u);

  TaintEngine reject{RegionTable{}, TaintOptions{true, OverlapPolicy::Reject}};
  reject.define_memory(0x1000, 4);
  try {
    reject.define_memory(0x1002, 4);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::OverlapWithLiveRegion);
  }
}

TEST(Taint, UntouchedRegionLeavesStateUnchanged) {
  // MOV EAX,[0x401100]; HLT with nothing defined.
  const CodeImage img{0x401000, testing::from_hex("A100114000 F4")};
  auto init = initial_state(img);
  init.memory.map(0x401100, 4);
  PipelineRun run(img, [](TaintEngine&) {}, &init);
  EXPECT_TRUE(run.state().defined.empty());
  EXPECT_TRUE(run.state().events.empty());
}

TEST(Taint, UntaintedWriteDestroysSource) {
  // MOV [0x401015],EBX; HLT over a defined source, EBX clean.
  CodeImage img{0x401000, testing::from_hex("891D15104000 F4")};
  img.bytes.resize(0x20);
  PipelineRun run(img, [](TaintEngine& e) { e.define_memory(0x401015, 4); });
  const auto& r = run.state().regions.at(0);
  EXPECT_EQ(r.destroyed_by, 0u);
  EXPECT_EQ(r.live_bytes, 0u);
  EXPECT_TRUE(run.state().shadow.empty());
  ASSERT_FALSE(run.state().events.empty());
  EXPECT_EQ(run.state().events.back().kind, EventKind::Destroy);
}

TEST(Taint, RepMovsbCopiesByteRegions) {
  // MOV ESI,0x402000; MOV EDI,0x402010; MOV ECX,4; REP MOVSB; HLT
  const CodeImage img{0x401000, testing::from_hex("BE00204000 BF10204000 B904000000 F3A4 F4")};
  auto init = initial_state(img);
  init.memory.map(0x402000, 0x100);
  PipelineRun run(img, [](TaintEngine& e) { e.define_memory(0x402000, 4); }, &init);
  const auto& s = run.state();
  for (Address a = 0x402010; a < 0x402014; ++a) {
    ASSERT_TRUE(s.shadow.count(a)) << std::hex << a;
    EXPECT_EQ(s.region(s.shadow.at(a))->parents, std::set<RegionId>{1});
  }
  EXPECT_EQ(s.shadow.size(), 8u);
}

TEST(Taint, StosbWithCleanAlDestroysByte) {
  // MOV EDI,0x402000; STOSB; HLT
  const CodeImage img{0x401000, testing::from_hex("BF00204000 AA F4")};
  auto init = initial_state(img);
  init.memory.map(0x402000, 0x100);
  PipelineRun run(img, [](TaintEngine& e) { e.define_memory(0x402000, 2); }, &init);
  EXPECT_FALSE(run.state().shadow.count(0x402000));
  EXPECT_TRUE(run.state().shadow.count(0x402001));
}

TEST(Taint, LodsbDefinesAl) {
  // MOV ESI,0x402000; LODSB; HLT
  const CodeImage img{0x401000, testing::from_hex("BE00204000 AC F4")};
  auto init = initial_state(img);
  init.memory.map(0x402000, 0x100);
  PipelineRun run(img, [](TaintEngine& e) { e.define_memory(0x402000, 1); }, &init);
  EXPECT_EQ(run.state().defined, ArchObjectSet::of(ArchCell::reg_byte(0, 0)));
  EXPECT_EQ(run.state().history[0], History{1});
}

TEST(Taint, TaintedPointerTaintsTheLoad) {
  // MOV EBX,[0x402000]; MOV EAX,[EBX]; HLT, with [0x402000] = 0x402010
  const CodeImage img{0x401000, testing::from_hex("8B1D00204000 8B03 F4")};
  auto init = initial_state(img);
  init.memory.map(0x402000, 0x100);
  init.memory.write32(0x402000, 0x402010);
  PipelineRun run(img, [](TaintEngine& e) { e.define_memory(0x402000, 4); }, &init);
  EXPECT_TRUE(cells_of(Reg::EAX).subset_of(run.state().defined));
}

TEST(Taint, AtInstructionSourceDefinesAccessedBytes) {
  const auto img = testing::listing7_image();
  PipelineRun run(img, [](TaintEngine& e) { e.define_at_instruction(0x401006); });
  const auto& s = run.state();
  const auto* b = find_label(s, "p_401019");
  const auto* c = find_label(s, "p_40101D");
  ASSERT_TRUE(b && c);
  EXPECT_EQ(c->parents, std::set<RegionId>{b->id});
}

TEST(Taint, UnknownRegionIdThrows) {
  TaintEngine e{RegionTable{}};
  TracePacket p;
  p.region_id = 5;
  try {
    e.process_packet(p);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::UnknownRegionId);
  }
  p.region_id = kEscapeRegionId;
  e.process_packet(p);
  EXPECT_EQ(e.state().warnings.size(), 1u);
}

TEST(Taint, HistoryDomainMatchesDefined) {
  PipelineRun run(testing::listing7_image(), [](TaintEngine& e) {
    e.define_memory(testing::kListing7SourceA, 4);
    e.define_register(Reg::EDX);
  });
  const auto& s = run.state();
  for (unsigned c = 0; c < kCellCount; ++c)
    EXPECT_EQ(s.defined.contains(ArchCell{static_cast<std::uint8_t>(c)}), !s.history[c].empty()) << c;
}

TEST(Taint, ExportRoundTrips) {
  PipelineRun run(testing::listing7_image(), [](TaintEngine& e) {
    e.define_memory(testing::kListing7SourceA, 4);
    e.define_memory(testing::kListing7SourceB, 4);
  });
  const auto path = std::filesystem::temp_directory_path() / "vci_taint_export.jsonl";
  export_taint(run.state(), path);
  const TaintState back = import_taint(path);
  EXPECT_EQ(back.regions, run.state().regions);
  EXPECT_EQ(back.events, run.state().events);
  EXPECT_EQ(back.defined, run.state().defined);
  EXPECT_EQ(back.shadow, run.state().shadow);
  EXPECT_EQ(back.history, run.state().history);
  std::filesystem::remove(path);
}

// --- region-level propagation ------------------------------------------------

/// Runs one region through a packet with zeroed registers.
TaintState apply(const DataflowRegion& region, const std::function<void(TaintEngine&)>& sources) {
  RegionMap map;
  map.emplace(region.entry(), region);
  TaintEngine e{RegionTable(map)};
  sources(e);
  TracePacket p;
  p.region_id = region.id;
  e.process_packet(p);
  return e.state();
}

/// The register-only part of the XOR/SETZ block, after its leading load.
DataflowRegion listing5_tail() {
  auto lines = testing::listing5_lines();
  lines.erase(lines.begin());
  return testing::region_from_lines(lines);
}

TEST(Taint, VariantMovesTaintFromEaxToEbx) {
  auto region = listing5_tail();
  const auto s = apply(region, [](TaintEngine& e) { e.define_register(Reg::EAX); });
  EXPECT_EQ(s.defined, cells_of(Reg::EBX));
}

TEST(Taint, LoadThenVariantsFollowTheSource) {
  auto region = testing::region_from_lines(testing::listing5_lines());
  const auto s = apply(region, [](TaintEngine& e) { e.define_memory(0x405000, 4); });
  EXPECT_EQ(s.defined, cells_of(Reg::EBX));
  EXPECT_EQ(s.history[12], History{1});
}

TEST(Taint, VariantKillsEdi) {
  auto region = listing5_tail();
  const auto s = apply(region, [](TaintEngine& e) { e.define_register(Reg::EDI); });
  EXPECT_TRUE(s.defined.empty());
}

TEST(Taint, NothingDefinedNothingChanges) {
  auto region = listing5_tail();
  const auto s = apply(region, [](TaintEngine&) {});
  EXPECT_TRUE(s.defined.empty());
  EXPECT_TRUE(s.events.empty());
}

TEST(Taint, DisputableCellKeepsBothParents) {
  auto region = testing::region_from_lines({"ADD ECX,EBX"});
  RegionId a = 0, b = 0;
  const auto s = apply(region, [&](TaintEngine& e) {
    a = e.define_register(Reg::ECX);
    b = e.define_register(Reg::EBX);
  });
  for (unsigned i = 4; i < 8; ++i) EXPECT_EQ(s.history[i], (History{a, b}));
  for (unsigned i = 12; i < 16; ++i) EXPECT_EQ(s.history[i], History{b});
}

}  // namespace
}  // namespace vci
