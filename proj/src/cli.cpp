#include "vci/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iterator>
#include <set>

#include "vci/error.hpp"
#include "vci/pipeline.hpp"
#include "vci/report.hpp"

namespace vci {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint32_t parse_u32(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used, 0);
    if (used != s.size() || v > 0xFFFFFFFFull) throw std::out_of_range(s);
    return static_cast<std::uint32_t>(v);
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::ConfigError, "bad " + what + ": '" + s + "'");
  }
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", v);
  return buf;
}

void require_aligned(std::uint32_t v, const std::string& what, bool allow_unaligned) {
  if (!allow_unaligned && v % 4 != 0) throw Error(ErrorCode::ConfigError, what + " " + hex(v) + " is not 4-byte aligned");
}

struct Range {
  Address start;
  std::uint32_t size;
};

Range parse_range(const std::string& s, const std::string& what) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "bad " + what + ": expected ADDR:SIZE, got '" + s + "'");
  const Range r{parse_u32(s.substr(0, colon), what), parse_u32(s.substr(colon + 1), what)};
  if (r.size == 0) throw Error(ErrorCode::ConfigError, "empty " + what + " '" + s + "'");
  return r;
}

void require_distinct(const std::vector<std::string>& paths) {
  std::set<fs::path> seen;
  for (const auto& p : paths) {
    if (p.empty()) continue;
    const fs::path norm = fs::weakly_canonical(p);
    if (!seen.insert(norm).second) throw Error(ErrorCode::ConfigError, "path used twice: " + p);
  }
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Error(ErrorCode::IoFailure, "cannot write " + path);
}

/// {"0x401030": "MessageBoxA", ...}
ImportTable read_imports(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  ImportTable t;
  try {
    const json j = json::parse(in);
    for (const auto& [k, v] : j.items()) t[parse_u32(k, "import address")] = v.get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  return t;
}

/// Shared options of the commands that rebuild the integrated image.
struct ImageOptions {
  std::string analysis;
  std::string new_base = "0x600000";
  std::string imports;
  unsigned pad_nops = 0;
  unsigned thunk_gap = 0;
  bool no_lands = false;
  bool allow_unaligned = false;

  void add(CLI::App& cmd, bool with_lands_switch) {
    cmd.add_option("--analysis", analysis, "analysis database from export")->required();
    cmd.add_option("--new-base", new_base, "base address of the integrated image");
    cmd.add_option("--imports", imports, "JSON object mapping import addresses to names");
    cmd.add_flag("--allow-unaligned", allow_unaligned, "accept a new base that is not 4-byte aligned");
    if (with_lands_switch) {
      cmd.add_option("--pad-nops", pad_nops, "NOPs inserted after every original instruction");
      cmd.add_option("--thunk-gap", thunk_gap, "NOP bytes between consecutive import thunks");
      cmd.add_flag("--no-lands", no_lands, "integrate without code lands");
    }
  }

  struct Built {
    AnalysisDatabase db;
    IntegrationResult integrated;
    std::optional<ImportTable> imports;
  };

  Built build() const {
    Built b;
    b.db = import_analysis(analysis);
    const Address base = parse_u32(new_base, "new base");
    require_aligned(base, "new base", allow_unaligned);
    if (!imports.empty()) b.imports = read_imports(imports);
    auto list = IntegrationList::load_program(b.db.image, b.db.entries);
    if (!no_lands) list.inject_code_lands(b.db.regions);
    if (pad_nops > 0) {
      for (const NodeHandle h : list.handles()) {
        if (list.node(h).origin != NodeOrigin::Original) continue;
        for (unsigned i = 0; i < pad_nops; ++i) list.insert_after(h, make::nop());
      }
    }
    IntegrateOptions io;
    io.imports = b.imports;
    io.thunk_gap = thunk_gap;
    b.integrated = list.integrate(base, io);
    return b;
  }
};

json map_json(const IntegrationResult& r) {
  json j;
  j["base"] = r.base;
  j["code_end"] = r.code_end;
  j["thunks_end"] = r.thunks_end;
  j["near_expansions"] = r.near_expansions;
  j["loop_rewrites"] = r.loop_rewrites;
  j["address_map"] = json::array();
  for (const auto& [o, n] : r.address_map) j["address_map"].push_back({o, n});
  j["land_sites"] = json::array();
  for (const auto& [a, id] : r.land_sites) j["land_sites"].push_back({a, id});
  j["thunks"] = json::array();
  for (const auto& [t, a] : r.thunks) j["thunks"].push_back({t, a});
  return j;
}

void define_sources(TaintEngine& engine, const std::vector<std::string>& sources) {
  for (const auto& s : sources) {
    if (s.rfind("reg:", 0) == 0) {
      const auto r = parse_reg(s.substr(4));
      if (!r) throw Error(ErrorCode::ConfigError, "unknown register in source '" + s + "'");
      engine.define_register(*r);
    } else {
      const Range r = parse_range(s, "source");
      engine.define_memory(r.start, r.size);
    }
  }
}

struct TaintFlags {
  std::vector<std::string> sources;
  std::vector<std::string> at_instruction;
  bool no_address_taint = false;
  bool reject_overlap = false;

  void add(CLI::App& cmd) {
    cmd.add_option("--source", sources, "taint source: ADDR:SIZE or reg:NAME (repeatable)");
    cmd.add_option("--define-at", at_instruction, "memory instruction whose accessed bytes become a source");
    cmd.add_flag("--no-address-taint", no_address_taint, "pointer registers do not taint accessed bytes");
    cmd.add_flag("--reject-overlap", reject_overlap, "fail when a source overlaps a live region");
  }

  TaintEngine make(RegionMap regions) const {
    TaintOptions o;
    o.address_taint = !no_address_taint;
    o.overlap = reject_overlap ? OverlapPolicy::Reject : OverlapPolicy::Merge;
    TaintEngine e{RegionTable(std::move(regions)), o};
    define_sources(e, sources);
    for (const auto& a : at_instruction) e.define_at_instruction(parse_u32(a, "instruction address"));
    return e;
  }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Virtual code integration and region-level taint analysis"};
  app.require_subcommand(1);

  // export
  auto* exp = app.add_subcommand("export", "decode an image and write its analysis database");
  std::string exp_image, exp_base, exp_out;
  std::vector<std::string> exp_entries;
  exp->add_option("--image", exp_image, "raw code image")->required();
  exp->add_option("--base", exp_base, "load address of the image")->required();
  exp->add_option("--entry", exp_entries, "entry point (repeatable; defaults to the base)");
  exp->add_option("--out", exp_out, "analysis database")->required();

  // integrate
  auto* integ = app.add_subcommand("integrate", "rebuild the image at a new base with code lands");
  ImageOptions integ_opts;
  integ_opts.add(*integ, true);
  std::string integ_out, integ_map;
  integ->add_option("--out", integ_out, "integrated image bytes")->required();
  integ->add_option("--map", integ_map, "JSON address map");

  // run
  auto* run = app.add_subcommand("run", "execute the integrated image and record packets");
  ImageOptions run_opts;
  run_opts.add(*run, false);
  std::string run_mode = "static", run_log, run_export;
  std::size_t run_capacity = 1024;
  std::uint64_t run_steps = 10'000'000;
  std::vector<std::string> run_maps;
  TaintFlags run_taint;
  run->add_option("--mode", run_mode, "static or dynamic")->check(CLI::IsMember({"static", "dynamic"}));
  run->add_option("--packet-log", run_log, "packet log to write");
  run->add_option("--channel-capacity", run_capacity, "dynamic mode buffer size in packets")->check(CLI::PositiveNumber);
  run->add_option("--max-steps", run_steps, "interpreter step limit");
  run->add_option("--map", run_maps, "extra memory to map: ADDR:SIZE (repeatable)");
  run->add_option("--export", run_export, "also analyse while running and write the taint export here");
  run_taint.add(*run);

  // analyze
  auto* ana = app.add_subcommand("analyze", "replay a packet log through the taint engine");
  std::string ana_db, ana_log, ana_out;
  TaintFlags ana_taint;
  ana->add_option("--analysis", ana_db, "analysis database")->required();
  ana->add_option("--packet-log", ana_log, "packet log from run")->required();
  ana->add_option("--out", ana_out, "taint export")->required();
  ana_taint.add(*ana);

  // report
  auto* rep = app.add_subcommand("report", "render the propagation graph, a text report or a search");
  std::string rep_export, rep_log, rep_db, rep_dot, rep_text, rep_find;
  rep->add_option("--export", rep_export, "taint export")->required();
  rep->add_option("--packet-log", rep_log, "packet log of the same run");
  rep->add_option("--analysis", rep_db, "analysis database (needed by --find)");
  rep->add_option("--dot", rep_dot, "write the DOT graph here");
  rep->add_option("--text", rep_text, "write the text report here");
  rep->add_option("--find", rep_find, "instruction to search for: address and/or text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*exp) {
      require_distinct({exp_image, exp_out});
      AnalysisDatabase db;
      const Address base = parse_u32(exp_base, "base");
      require_aligned(base, "base", false);
      db.image = CodeImage{base, read_file(exp_image)};
      for (const auto& e : exp_entries) db.entries.push_back(parse_u32(e, "entry"));
      if (db.entries.empty()) db.entries.push_back(base);
      db.regions = build_regions(db.image, db.entries);
      export_analysis(db, exp_out);
      std::size_t instrs = 0;
      for (const auto& [a, r] : db.regions) instrs += r.instructions.size();
      out << db.regions.size() << " regions, " << instrs << " instructions\n";
    } else if (*integ) {
      require_distinct({integ_opts.analysis, integ_opts.imports, integ_out, integ_map});
      const auto b = integ_opts.build();
      write_file(integ_out, std::string(b.integrated.bytes.begin(), b.integrated.bytes.end()));
      if (!integ_map.empty()) write_file(integ_map, map_json(b.integrated).dump(1) + "\n");
      out << b.integrated.bytes.size() << " bytes at " << hex(b.integrated.base) << "\n";
    } else if (*run) {
      require_distinct({run_opts.analysis, run_opts.imports, run_log, run_export});
      const auto b = run_opts.build();
      MachineState state = initial_state(b.db.image);
      for (const auto& m : run_maps) {
        const Range r = parse_range(m, "map");
        state.memory.map(r.start, r.size);
      }
      RunOptions ro;
      ro.mode = run_mode == "dynamic" ? RunMode::Dynamic : RunMode::Static;
      if (!run_log.empty()) ro.packet_log = run_log;
      ro.channel_capacity = run_capacity;
      ro.max_steps = run_steps;
      if (b.imports) ro.host_functions = *b.imports;
      std::optional<TaintEngine> engine;
      PacketSink sink;
      if (!run_export.empty()) {
        engine.emplace(run_taint.make(b.db.regions));
        sink = [&](const TracePacket& p) { engine->process_packet(p); };
      }
      const RegionTable table(b.db.regions);
      const auto result = run_traced(b.integrated, table, load_integrated(std::move(state), b.integrated, b.db.entries.front()), ro, sink);
      if (engine) export_taint(engine->state(), fs::path(run_export));
      out << result.packets.size() << " packets, " << result.steps << " steps\n";
      std::set<Address> known;
      for (const auto& [a, n] : ro.host_functions) known.insert(a);
      for (const auto& d : detect_interference(result.packets, table, known))
        err << "warning: packet " << d.packet_id << " at " << hex(d.address) << ": " << d.message << "\n";
    } else if (*ana) {
      require_distinct({ana_db, ana_log, ana_out});
      const auto db = import_analysis(ana_db);
      TaintEngine engine = ana_taint.make(db.regions);
      const auto packets = read_packet_log(ana_log);
      for (const auto& p : packets) engine.process_packet(p);
      export_taint(engine.state(), fs::path(ana_out));
      out << engine.state().regions.size() << " monitored regions, " << engine.state().events.size() << " events\n";
    } else if (*rep) {
      require_distinct({rep_export, rep_log, rep_db, rep_dot, rep_text});
      if (!rep_find.empty() && rep_db.empty()) throw Error(ErrorCode::ConfigError, "--find needs --analysis");
      const AnalysisReport report =
          load_report(rep_export, rep_log.empty() ? std::nullopt : std::optional<fs::path>(rep_log));
      if (!rep_dot.empty()) write_file(rep_dot, render_dot(report));
      if (!rep_text.empty()) write_file(rep_text, render_text_report(report));
      if (!rep_find.empty()) {
        const auto db = import_analysis(rep_db);
        const auto found = find_instruction(report, db.regions, rep_find);
        out << "packets:";
        for (auto id : found.packets) out << " " << id;
        out << "\nregions:";
        for (auto id : found.regions) out << " " << report.state.region(id)->label;
        out << "\n";
      }
      if (rep_dot.empty() && rep_text.empty() && rep_find.empty()) out << render_text_report(report);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::ConfigError ? 2 : 1;
  }
  return 0;
}

}  // namespace vci
