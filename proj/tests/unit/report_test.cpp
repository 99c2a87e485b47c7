#include <gtest/gtest.h>

#include <regex>

#include "support/fixtures.hpp"
#include "vci/pipeline.hpp"
#include "vci/report.hpp"

namespace vci {
namespace {

struct Analysed {
  InstrumentedProgram program;
  AnalysisReport report;
};

Analysed analyse(const CodeImage& img, const std::function<void(TaintEngine&)>& sources, MachineState state,
                 const std::optional<ImportTable>& imports = std::nullopt) {
  Analysed a;
  IntegrateOptions io;
  io.imports = imports;
  a.program = instrument(img, {img.base}, 0x3D0000, io);
  TaintEngine engine{RegionTable(a.program.regions)};
  sources(engine);
  RunOptions opt;
  if (imports) opt.host_functions = *imports;
  const auto run = run_traced(a.program.integrated, engine.regions(), load_integrated(state, a.program.integrated, img.base),
                              opt, [&](const TracePacket& p) { engine.process_packet(p); });
  a.report.state = engine.state();
  a.report.packets = run.packets;
  return a;
}

Analysed listing7() {
  const auto img = testing::listing7_image();
  return analyse(img, [](TaintEngine& e) {
    e.define_memory(testing::kListing7SourceA, 4);
    e.define_memory(testing::kListing7SourceB, 4);
  }, initial_state(img));
}

std::size_t count(const std::string& s, const std::string& re) {
  const std::regex r(re);
  return static_cast<std::size_t>(std::distance(std::sregex_iterator(s.begin(), s.end(), r), std::sregex_iterator()));
}

TEST(Report, Listing7GraphHasTwoEdgesIntoResult) {
  const auto a = listing7();
  const std::string dot = render_dot(a.report);
  EXPECT_EQ(count(dot, R"(\[label=)"), 3u);
  EXPECT_EQ(count(dot, "->"), 2u);
  EXPECT_NE(dot.find("r1 -> r3;"), std::string::npos);
  EXPECT_NE(dot.find("r2 -> r3;"), std::string::npos);
  EXPECT_NE(dot.find("p_40101D"), std::string::npos);
  EXPECT_EQ(dot, render_dot(listing7().report));
}

TEST(Report, EmptyAnalysisIsValidDot) {
  EXPECT_EQ(render_dot(AnalysisReport{}), "digraph taint {\n  node [shape=box];\n}\n");
}

TEST(Report, CopyChainIsAPath) {
  // Five copies 402000 -> 402010 -> ... -> 402050.
  const auto le32 = [](Address v) {
    char b[9];
    std::snprintf(b, sizeof b, "%02X%02X%02X%02X", v & 0xFF, (v >> 8) & 0xFF, (v >> 16) & 0xFF, v >> 24);
    return std::string(b);
  };
  std::string code;
  for (Address a = 0x402000; a < 0x402050; a += 0x10) code += "A1" + le32(a) + "A3" + le32(a + 0x10);
  code += "F4";
  const CodeImage img{0x401000, testing::from_hex(code)};
  auto state = initial_state(img);
  state.memory.map(0x402000, 0x100);
  const auto a = analyse(img, [](TaintEngine& e) { e.define_memory(0x402000, 4); }, state);
  const std::string dot = render_dot(a.report);
  EXPECT_EQ(count(dot, R"(\[label=)"), 6u);
  EXPECT_EQ(count(dot, "->"), 5u);
  for (RegionId id = 1; id < 6; ++id)
    EXPECT_NE(dot.find("r" + std::to_string(id) + " -> r" + std::to_string(id + 1) + ";"), std::string::npos);
}

TEST(Report, FindAddInListing7) {
  const auto a = listing7();
  const auto r = find_instruction(a.report, a.program.regions, "add ecx, ebx");
  EXPECT_EQ(r.packets.size(), 1u);
  EXPECT_EQ(find_instruction(a.report, a.program.regions, "ADD").packets, r.packets);
  EXPECT_FALSE(r.regions.empty());
}

TEST(Report, FindAddressInListing1Loop) {
  const auto img = testing::listing1_image();
  auto state = initial_state(img);
  state.memory.map(0x401000, 0x100);
  const auto a = analyse(img, [](TaintEngine&) {}, state, testing::listing1_imports());
  EXPECT_EQ(find_instruction(a.report, a.program.regions, "0x40101A").packets.size(), 5u);
}

TEST(Report, FindUnknownIsEmpty) {
  const auto a = listing7();
  EXPECT_EQ(find_instruction(a.report, a.program.regions, "CPUID"), FindResult{});
  EXPECT_EQ(find_instruction(a.report, a.program.regions, "0x12345678"), FindResult{});
}

TEST(Report, TextReportListsLifecycles) {
  const auto a = listing7();
  const std::string text = render_text_report(a.report);
  const auto sec = text.find("p_401015 (id 1)");
  ASSERT_NE(sec, std::string::npos);
  EXPECT_NE(text.find("references: 0\n", sec), std::string::npos);
  EXPECT_NE(text.find("created: packet 2 at 0x40100E"), std::string::npos);
  EXPECT_EQ(count(text, R"(\n  #\d+ packet)"), a.report.state.events.size());
  for (std::size_t i = 0; i < a.report.state.events.size(); ++i)
    EXPECT_EQ(count(text, "  #" + std::to_string(i) + " packet"), 1u);
}

TEST(Report, EmptyReportIsHeaderOnly) {
  EXPECT_EQ(render_text_report(AnalysisReport{}), "taint report: 0 regions, 0 events, 0 packets\n");
}

TEST(Report, DestroyedRegionShowsPacket) {
  AnalysisReport r;
  MonitoredRegion m;
  m.id = 1;
  m.label = "p_402000";
  m.destroyed_by = 7;
  r.state.regions.push_back(m);
  EXPECT_NE(render_text_report(r).find("destroyed: packet 7"), std::string::npos);
}

}  // namespace
}  // namespace vci
