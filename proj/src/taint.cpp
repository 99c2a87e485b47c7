#include "vci/taint.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "vci/error.hpp"

namespace vci {

namespace {

constexpr ArchObjectSet kAl = ArchObjectSet::of(ArchCell::reg_byte(0, 0));

std::string region_label(Address a) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "p_%X", a);
  return buf;
}

std::string hex(Address a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", a);
  return buf;
}

void merge_into(History& dst, const History& src) {
  if (src.empty()) return;
  History out;
  out.reserve(dst.size() + src.size());
  std::set_union(dst.begin(), dst.end(), src.begin(), src.end(), std::back_inserter(out));
  dst.swap(out);
}

}  // namespace

CellTaint apply_variants(CellTaint& cells, const DataflowRegion& region) {
  CellTaint before = cells;
  ArchObjectSet touched;
  for (const auto& v : region.variants) touched |= v.in | v.out;
  touched.for_each([&](ArchCell c) { cells.history[c.index].clear(); });
  cells.defined -= touched;
  for (const auto& v : region.variants) {
    const ArchObjectSet hit = v.in & before.defined;
    if (hit.empty() || v.out.empty()) continue;
    History h;
    hit.for_each([&](ArchCell c) { merge_into(h, before.history[c.index]); });
    v.out.for_each([&](ArchCell c) { merge_into(cells.history[c.index], h); });
    cells.defined |= v.out;
  }
  // Cells the region never writes keep their entry state.
  (ArchObjectSet::universe() - region.written).for_each([&](ArchCell c) {
    cells.history[c.index] = before.history[c.index];
  });
  cells.defined = (cells.defined & region.written) | (before.defined - region.written);
  return before;
}

void process_disputable(CellTaint& cells, const DataflowRegion& region, const CellTaint& before) {
  (region.disputable & cells.defined).for_each([&](ArchCell c) {
    History merged;
    for (const auto& v : region.variants) {
      if (!v.out.contains(c)) continue;
      (v.in & before.defined).for_each([&](ArchCell i) { merge_into(merged, before.history[i.index]); });
    }
    cells.history[c.index] = std::move(merged);
  });
}

std::string_view event_name(EventKind k) {
  switch (k) {
    case EventKind::Create: return "create";
    case EventKind::Reference: return "reference";
    case EventKind::Destroy: return "destroy";
    case EventKind::Define: return "define";
    case EventKind::Kill: return "kill";
  }
  return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view s) {
  for (EventKind k : {EventKind::Create, EventKind::Reference, EventKind::Destroy, EventKind::Define, EventKind::Kill})
    if (event_name(k) == s) return k;
  return std::nullopt;
}

const MonitoredRegion* TaintState::region(RegionId id) const {
  if (id == 0 || id > regions.size()) return nullptr;
  return &regions[id - 1];
}

std::set<RegionId> TaintState::roots_of(RegionId id) const {
  std::set<RegionId> roots, seen;
  std::vector<RegionId> work{id};
  while (!work.empty()) {
    const RegionId r = work.back();
    work.pop_back();
    if (!seen.insert(r).second) continue;
    const MonitoredRegion* m = region(r);
    if (!m) continue;
    if (m->is_root()) roots.insert(r);
    for (RegionId p : m->parents) work.push_back(p);
  }
  return roots;
}

std::set<RegionId> TaintState::roots_of(const History& h) const {
  std::set<RegionId> out;
  for (RegionId id : h) out.merge(roots_of(id));
  return out;
}

TaintEngine::TaintEngine(RegionTable regions, TaintOptions options)
    : table_(std::move(regions)), options_(options) {}

RegionId TaintEngine::new_region(Address start, std::uint32_t length, std::string label) {
  MonitoredRegion r;
  r.id = static_cast<RegionId>(state_.regions.size() + 1);
  r.label = std::move(label);
  r.start = start;
  r.length = length;
  state_.regions.push_back(std::move(r));
  return state_.regions.back().id;
}

void TaintEngine::release_byte(Address a, std::uint32_t packet_id, Address instr) {
  const auto it = state_.shadow.find(a);
  if (it == state_.shadow.end()) return;
  MonitoredRegion& r = state_.regions[it->second - 1];
  state_.shadow.erase(it);
  if (--r.live_bytes == 0) {
    r.destroyed_by = packet_id;
    state_.events.push_back({packet_id, EventKind::Destroy, r.id, {}, instr});
  }
}

RegionId TaintEngine::define_root_range(Address start, std::uint32_t length, std::optional<std::uint32_t> packet_id) {
  if (length == 0) throw Error(ErrorCode::ConfigError, "empty source range at " + hex(start));
  std::set<RegionId> overlapping;
  for (std::uint32_t i = 0; i < length; ++i)
    if (auto it = state_.shadow.find(start + i); it != state_.shadow.end()) overlapping.insert(it->second);

  RegionId id;
  if (!overlapping.empty()) {
    if (options_.overlap == OverlapPolicy::Reject)
      throw Error(ErrorCode::OverlapWithLiveRegion, "source " + hex(start) + " overlaps region " +
                                                        state_.regions[*overlapping.begin() - 1].label);
    id = *overlapping.begin();
    MonitoredRegion& r = state_.regions[id - 1];
    const Address lo = std::min(r.start, start);
    const Address hi = std::max(r.start + r.length, start + length);
    r.start = lo;
    r.length = hi - lo;
  } else {
    id = new_region(start, length, region_label(start));
    state_.events.push_back({packet_id, EventKind::Create, id, {}, start});
  }
  const std::uint32_t pid = packet_id.value_or(0);
  for (std::uint32_t i = 0; i < length; ++i) {
    const Address a = start + i;
    if (auto it = state_.shadow.find(a); it != state_.shadow.end() && it->second == id) continue;
    release_byte(a, pid, start);
    state_.shadow[a] = id;
    ++state_.regions[id - 1].live_bytes;
  }
  return id;
}

RegionId TaintEngine::define_memory(Address start, std::uint32_t length) {
  return define_root_range(start, length, std::nullopt);
}

RegionId TaintEngine::define_register(Reg r) {
  const RegionId id = new_region(0, 0, "reg:" + std::string(reg_name(r)));
  state_.events.push_back({std::nullopt, EventKind::Create, id, {}, 0});
  const ArchObjectSet cells = cells_of(r);
  define_cells(cells, History{id});
  state_.events.push_back({std::nullopt, EventKind::Define, id, cells, 0});
  return id;
}

void TaintEngine::define_at_instruction(Address original_address) { at_instruction_.insert(original_address); }

History TaintEngine::history_of(ArchObjectSet cells) const {
  History h;
  (cells & state_.defined).for_each([&](ArchCell c) { merge_into(h, state_.history[c.index]); });
  return h;
}

void TaintEngine::define_cells(ArchObjectSet cells, const History& h) {
  cells.for_each([&](ArchCell c) { state_.history[c.index] = h; });
  state_.defined |= cells;
}

void TaintEngine::kill_cells(ArchObjectSet cells) {
  cells.for_each([&](ArchCell c) { state_.history[c.index].clear(); });
  state_.defined -= cells;
}

History TaintEngine::read_bytes(Address a, std::uint32_t n, std::uint32_t packet_id, Address instr) {
  History h;
  for (std::uint32_t i = 0; i < n; ++i)
    if (auto it = state_.shadow.find(a + i); it != state_.shadow.end()) merge_into(h, History{it->second});
  for (RegionId id : h) {
    auto& refs = state_.regions[id - 1].references;
    if (refs.empty() || refs.back() != packet_id) refs.push_back(packet_id);
    state_.events.push_back({packet_id, EventKind::Reference, id, {}, instr});
  }
  return h;
}

void TaintEngine::write_bytes(Address a, std::uint32_t n, const History& incoming, std::uint32_t packet_id,
                              Address instr) {
  if (incoming.empty()) {
    for (std::uint32_t i = 0; i < n; ++i) release_byte(a + i, packet_id, instr);
    return;
  }
  const RegionId id = new_region(a, n, region_label(a));
  MonitoredRegion& r = state_.regions[id - 1];
  r.created_packet = packet_id;
  r.created_instr = instr;
  r.parents.insert(incoming.begin(), incoming.end());
  for (RegionId p : incoming) state_.regions[p - 1].children.insert(id);
  state_.events.push_back({packet_id, EventKind::Create, id, {}, instr});
  for (std::uint32_t i = 0; i < n; ++i) {
    release_byte(a + i, packet_id, instr);
    state_.shadow[a + i] = id;
    ++state_.regions[id - 1].live_bytes;
  }
}

void TaintEngine::process_standard(const TracePacket& packet, const RegionInstruction& ri) {
  const InstructionDescriptor& d = ri.desc;
  const Address at = ri.instr.address;
  const auto accesses = effective_address(ri.instr, packet.regs);
  const History address_taint = options_.address_taint ? history_of(d.addr) : History{};

  History incoming = history_of(d.data_src);
  merge_into(incoming, address_taint);
  for (const auto& acc : accesses) {
    if ((static_cast<unsigned>(acc.access) & static_cast<unsigned>(AccessKind::Read)) == 0) continue;
    merge_into(incoming, read_bytes(acc.address, acc.size, packet.packet_id, at));
  }

  if (!d.data_dest.empty()) {
    if (incoming.empty())
      kill_cells(d.data_dest);
    else
      define_cells(d.data_dest, incoming);
  }

  // A call pushes a code address: only the stack pointer can taint it.
  const History& written = ri.instr.mnemonic == Mnemonic::Call ? address_taint : incoming;
  for (const auto& acc : accesses)
    if (static_cast<unsigned>(acc.access) & static_cast<unsigned>(AccessKind::Write))
      write_bytes(acc.address, acc.size, written, packet.packet_id, at);
}

void TaintEngine::process_nonstandard(const TracePacket& packet, const RegionInstruction& ri) {
  const Instruction& ins = ri.instr;
  const Address at = ins.address;
  const std::uint32_t count = ins.rep ? packet.regs[1] : 1;
  const std::int32_t step = (packet.eflags & (1u << 10)) ? -1 : 1;
  Address esi = packet.regs[6];
  Address edi = packet.regs[7];
  const History esi_taint = options_.address_taint ? history_of(cells_of_reg32(6)) : History{};
  const History edi_taint = options_.address_taint ? history_of(cells_of_reg32(7)) : History{};

  auto read_one = [&](Address a) {
    History h = read_bytes(a, 1, packet.packet_id, at);
    merge_into(h, esi_taint);
    return h;
  };

  switch (ins.mnemonic) {
    case Mnemonic::Movsb:
      for (std::uint32_t i = 0; i < count; ++i) {
        History h = read_one(esi);
        merge_into(h, edi_taint);
        write_bytes(edi, 1, h, packet.packet_id, at);
        esi += step;
        edi += step;
      }
      break;
    case Mnemonic::Stosb: {
      History h = history_of(kAl);
      merge_into(h, edi_taint);
      for (std::uint32_t i = 0; i < count; ++i, edi += step) write_bytes(edi, 1, h, packet.packet_id, at);
      break;
    }
    case Mnemonic::Lodsb: {
      if (count == 0) break;
      History h;
      for (std::uint32_t i = 0; i < count; ++i, esi += step) h = read_one(esi);
      if (h.empty())
        kill_cells(kAl);
      else
        define_cells(kAl, h);
      break;
    }
    default:
      break;
  }
}

void TaintEngine::process_packet(const TracePacket& packet) {
  if (packet.region_id == kEscapeRegionId) {
    state_.warnings.push_back("packet " + std::to_string(packet.packet_id) + ": control escaped to " +
                              hex(packet.instr_address));
    return;
  }
  const DataflowRegion* region = table_.find(packet.region_id);
  if (!region) throw Error(ErrorCode::UnknownRegionId, std::to_string(packet.region_id));

  const ArchObjectSet before = state_.defined;
  const RegionInstruction* mem = region->mem_instruction();
  if (mem && at_instruction_.count(mem->instr.address))
    for (const auto& acc : effective_address(mem->instr, packet.regs))
      define_root_range(acc.address, acc.size, packet.packet_id);

  if (mem) {
    if (mem->desc.string_op)
      process_nonstandard(packet, *mem);
    else
      process_standard(packet, *mem);
  }
  if (!region->variants.empty()) {
    const CellTaint before_variants = apply_variants(state_, *region);
    if (region->disputable.intersects(state_.defined)) process_disputable(state_, *region, before_variants);
  }

  const ArchObjectSet defined = state_.defined - before;
  const ArchObjectSet killed = before - state_.defined;
  if (!defined.empty()) state_.events.push_back({packet.packet_id, EventKind::Define, {}, defined, region->entry()});
  if (!killed.empty()) state_.events.push_back({packet.packet_id, EventKind::Kill, {}, killed, region->entry()});
}

// --- export -----------------------------------------------------------------

namespace {

using nlohmann::json;

json opt(const std::optional<std::uint32_t>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::uint32_t> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::uint32_t>();
}

}  // namespace

void export_taint(const TaintState& state, std::ostream& out) {
  out << json{{"format", "vci-taint"}, {"version", kTaintFormatVersion}}.dump() << '\n';
  for (const auto& e : state.events) {
    json j{{"type", "event"},
           {"packet", opt(e.packet_id)},
           {"kind", event_name(e.kind)},
           {"region", opt(e.region)},
           {"cells", cell_names(e.cells)},
           {"address", e.address}};
    out << j.dump() << '\n';
  }
  json regions = json::array();
  for (const auto& r : state.regions) {
    regions.push_back({{"id", r.id},
                       {"label", r.label},
                       {"start", r.start},
                       {"length", r.length},
                       {"created_packet", opt(r.created_packet)},
                       {"created_instr", r.created_instr},
                       {"references", r.references},
                       {"destroyed_by", opt(r.destroyed_by)},
                       {"parents", r.parents},
                       {"children", r.children},
                       {"live_bytes", r.live_bytes}});
  }
  json history = json::object();
  state.defined.for_each([&](ArchCell c) { history[cell_name(c)] = state.history[c.index]; });
  std::vector<std::pair<Address, RegionId>> shadow(state.shadow.begin(), state.shadow.end());
  std::sort(shadow.begin(), shadow.end());
  json snapshot{{"type", "snapshot"},
                {"regions", regions},
                {"defined", cell_names(state.defined)},
                {"history", history},
                {"shadow", shadow},
                {"warnings", state.warnings}};
  out << snapshot.dump() << '\n';
}

void export_taint(const TaintState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  export_taint(state, out);
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

TaintState import_taint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  TaintState state;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!header) {
        if (j.value("format", "") != "vci-taint") throw Error(ErrorCode::ParseError, "not a taint export");
        if (j.at("version").get<int>() != kTaintFormatVersion)
          throw Error(ErrorCode::VersionMismatch, "taint export version " + j.at("version").dump());
        header = true;
        continue;
      }
      const std::string type = j.at("type").get<std::string>();
      if (type == "event") {
        TaintEvent e;
        e.packet_id = get_opt(j, "packet");
        const auto kind = parse_event_kind(j.at("kind").get<std::string>());
        if (!kind) throw Error(ErrorCode::ParseError, "unknown event kind");
        e.kind = *kind;
        e.region = get_opt(j, "region");
        e.cells = from_cell_names(j.at("cells").get<std::vector<std::string>>());
        e.address = j.at("address").get<Address>();
        state.events.push_back(std::move(e));
      } else if (type == "snapshot") {
        for (const auto& r : j.at("regions")) {
          MonitoredRegion m;
          m.id = r.at("id").get<RegionId>();
          m.label = r.at("label").get<std::string>();
          m.start = r.at("start").get<Address>();
          m.length = r.at("length").get<std::uint32_t>();
          m.created_packet = get_opt(r, "created_packet");
          m.created_instr = r.at("created_instr").get<Address>();
          m.references = r.at("references").get<std::vector<std::uint32_t>>();
          m.destroyed_by = get_opt(r, "destroyed_by");
          m.parents = r.at("parents").get<std::set<RegionId>>();
          m.children = r.at("children").get<std::set<RegionId>>();
          m.live_bytes = r.at("live_bytes").get<std::uint32_t>();
          if (m.id != state.regions.size() + 1) throw Error(ErrorCode::ParseError, "region ids out of order");
          state.regions.push_back(std::move(m));
        }
        state.defined = from_cell_names(j.at("defined").get<std::vector<std::string>>());
        for (const auto& [name, ids] : j.at("history").items()) {
          const auto cell = parse_cell(name);
          if (!cell) throw Error(ErrorCode::ParseError, "bad cell " + name);
          state.history[cell->index] = ids.get<History>();
        }
        for (const auto& pair : j.at("shadow")) state.shadow[pair.at(0).get<Address>()] = pair.at(1).get<RegionId>();
        state.warnings = j.at("warnings").get<std::vector<std::string>>();
      } else {
        throw Error(ErrorCode::ParseError, "unknown record type " + type);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
  }
  if (!header) throw Error(ErrorCode::ParseError, path.string() + " is empty");
  return state;
}

}  // namespace vci
