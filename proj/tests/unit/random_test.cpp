#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "support/fixtures.hpp"

namespace vci {
namespace {

using testing::GeneratorOptions;

TEST(Oracle, RegisterTableCoversLoopFamily) {
  const auto e = testing::oracle_register_effect(make::loop_family(Mnemonic::Loope, 0));
  EXPECT_TRUE(e.dest.intersects(cells_of_reg32(1)));
  EXPECT_FALSE(e.dest.intersects(ArchObjectSet::all_flags()));
}

TEST(Oracle, Listing7ChildHasBothRoots) {
  testing::GeneratedProgram p;
  p.image = testing::listing7_image();
  p.initial = initial_state(p.image);
  p.memory_sources = {{testing::kListing7SourceA, 4}, {testing::kListing7SourceB, 4}};
  const auto o = testing::run_oracle(p);
  EXPECT_EQ(o.bytes.at(testing::kListing7Result), 3u);
}

TEST(Generator, ProgramsHaltAndAgreeWithOracle) {
  std::mt19937 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto p = testing::generate_program(rng);
    const auto run = testing::run_pipeline(p);
    EXPECT_TRUE(run.result.final_state.halted);
    const auto taint = testing::compare_taint(testing::run_oracle(p), run.state());
    ASSERT_FALSE(taint) << *taint << "\n" << testing::describe(p);
    const auto st = testing::compare_final_states(p, run.result.final_state);
    ASSERT_FALSE(st) << *st << "\n" << testing::describe(p);
  }
}

TEST(Generator, PaddingForcesRewrites) {
  std::mt19937 rng(11);
  GeneratorOptions opt;
  opt.pad_branches = true;
  std::size_t near = 0, loops = 0;
  for (int i = 0; i < 50; ++i) {
    const auto p = testing::generate_program(rng, opt);
    const auto run = testing::run_pipeline(p);
    near += run.program.integrated.near_expansions;
    loops += run.program.integrated.loop_rewrites;
    const auto st = testing::compare_final_states(p, run.result.final_state);
    ASSERT_FALSE(st) << *st << "\n" << testing::describe(p);
  }
  EXPECT_GT(near, 0u);
  EXPECT_GT(loops, 0u);
}

TEST(Generator, TaintIsNonTrivial) {
  std::mt19937 rng(13);
  int derived = 0, mixed = 0;
  for (int i = 0; i < 200; ++i) {
    const auto p = testing::generate_program(rng);
    const auto o = testing::run_oracle(p);
    bool has_derived = false, has_mixed = false;
    for (const auto& [a, roots] : o.bytes) {
      bool in_source = false;
      for (const auto& m : p.memory_sources) in_source = in_source || (a >= m.start && a < m.start + m.length);
      has_derived = has_derived || !in_source;
      has_mixed = has_mixed || (roots & (roots - 1)) != 0;
    }
    derived += has_derived;
    mixed += has_mixed;
  }
  EXPECT_GT(derived, 100);
  EXPECT_GT(mixed, 20);
}

TEST(Generator, ComparisonDetectsAddressTaintMismatch) {
  std::mt19937 rng(17);
  int caught = 0;
  for (int i = 0; i < 200; ++i) {
    auto p = testing::generate_program(rng);
    p.register_sources.push_back(Reg::EBP);
    const auto run = testing::run_pipeline(p);
    caught += testing::compare_taint(testing::run_oracle(p, false), run.state()).has_value();
  }
  EXPECT_GT(caught, 100);
}

TEST(Generator, RegisterRegionsAreRegisterOnly) {
  std::mt19937 rng(3);
  for (int i = 0; i < 500; ++i)
    for (const auto& ins : testing::generate_register_region(rng)) EXPECT_FALSE(ins.references_memory());
}

}  // namespace
}  // namespace vci
