#include "vci/report.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

namespace vci {

namespace {

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", v);
  return buf;
}

std::string normalize(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

std::optional<Address> parse_address(std::string_view token) {
  if (token.size() < 3 || token[0] != '0' || (token[1] != 'x' && token[1] != 'X')) return std::nullopt;
  Address v = 0;
  for (char c : token.substr(2)) {
    if (!std::isxdigit(static_cast<unsigned char>(c))) return std::nullopt;
    v = v * 16 + static_cast<Address>(std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : std::toupper(c) - 'A' + 10);
  }
  return v;
}

bool text_matches(const Instruction& ins, const std::string& pattern) {
  if (pattern.empty()) return true;
  const std::string full = to_string(ins);
  if (normalize(full) == pattern) return true;
  const auto space = full.find(' ');
  return normalize(full.substr(0, space)) == pattern;
}

std::string cell_list(ArchObjectSet s) { return s.empty() ? "-" : to_string(s); }

template <typename Range>
std::string join_ids(const Range& r, const TaintState& st) {
  std::string out;
  for (const auto id : r) {
    if (!out.empty()) out += ", ";
    const auto* m = st.region(id);
    out += m ? m->label : std::to_string(id);
  }
  return out.empty() ? "-" : out;
}

}  // namespace

AnalysisReport load_report(const std::filesystem::path& taint_export, const std::optional<std::filesystem::path>& packet_log) {
  AnalysisReport r;
  r.state = import_taint(taint_export);
  if (packet_log) r.packets = read_packet_log(*packet_log);
  return r;
}

std::string render_dot(const AnalysisReport& report) {
  std::ostringstream os;
  os << "digraph taint {\n  node [shape=box];\n";
  for (const auto& m : report.state.regions) {
    os << "  r" << m.id << " [label=\"" << m.label << "\\n";
    if (m.is_root())
      os << "source";
    else
      os << "packet " << *m.created_packet << " at " << hex(m.created_instr);
    os << "\"];\n";
  }
  for (const auto& m : report.state.regions)
    for (RegionId child : m.children) os << "  r" << m.id << " -> r" << child << ";\n";
  os << "}\n";
  return os.str();
}

FindResult find_instruction(const AnalysisReport& report, const RegionMap& regions, std::string_view pattern) {
  std::string_view rest = pattern;
  while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.front()))) rest.remove_prefix(1);
  const auto first_end = std::min(rest.find(' '), rest.size());
  const auto address = parse_address(rest.substr(0, first_end));
  if (address) rest.remove_prefix(first_end);
  const std::string text = normalize(rest);

  FindResult out;
  if (!address && text.empty()) return out;
  std::set<std::uint32_t> matching;
  for (const auto& [entry, region] : regions)
    for (const auto& ri : region.instructions)
      if ((!address || ri.instr.address == *address) && text_matches(ri.instr, text)) matching.insert(region.id);

  for (const auto& p : report.packets)
    if (matching.count(p.region_id)) out.packets.push_back(p.packet_id);
  std::sort(out.packets.begin(), out.packets.end());

  const auto hit = [&](std::uint32_t id) { return std::binary_search(out.packets.begin(), out.packets.end(), id); };
  for (const auto& m : report.state.regions) {
    bool linked = (m.created_packet && hit(*m.created_packet)) || (m.destroyed_by && hit(*m.destroyed_by));
    for (auto ref : m.references) linked = linked || hit(ref);
    if (linked) out.regions.insert(m.id);
  }
  for (const auto& e : report.state.events)
    if (e.packet_id && e.region && hit(*e.packet_id)) out.regions.insert(*e.region);
  return out;
}

std::string render_text_report(const AnalysisReport& report) {
  const TaintState& st = report.state;
  std::ostringstream os;
  os << "taint report: " << st.regions.size() << " regions, " << st.events.size() << " events, "
     << report.packets.size() << " packets\n";

  if (!st.regions.empty()) {
    os << "\nregions\n";
    for (const auto& m : st.regions) {
      os << "  " << m.label << " (id " << m.id << ") " << hex(m.start) << " +" << m.length << ", " << m.live_bytes
         << " live bytes\n";
      if (m.is_root())
        os << "    created: source definition\n";
      else
        os << "    created: packet " << *m.created_packet << " at " << hex(m.created_instr) << "\n";
      os << "    parents: " << join_ids(m.parents, st) << "\n";
      os << "    children: " << join_ids(m.children, st) << "\n";
      os << "    references:";
      if (m.references.empty()) os << " -";
      for (auto r : m.references) os << " " << r;
      os << "\n    destroyed: " << (m.destroyed_by ? "packet " + std::to_string(*m.destroyed_by) : "-") << "\n";
    }
  }

  if (!st.events.empty()) {
    os << "\nevents\n";
    for (std::size_t i = 0; i < st.events.size(); ++i) {
      const auto& e = st.events[i];
      os << "  #" << i << " packet " << (e.packet_id ? std::to_string(*e.packet_id) : "-") << " " << event_name(e.kind)
         << " region " << (e.region ? join_ids(std::vector<RegionId>{*e.region}, st) : "-") << " cells "
         << cell_list(e.cells) << " at " << hex(e.address) << "\n";
    }
  }

  if (!report.packets.empty()) {
    os << "\npackets\n  id         region     instr      ea         size\n";
    for (const auto& p : report.packets) {
      char line[96];
      std::snprintf(line, sizeof line, "  %-10u %-10s 0x%-8X 0x%-8X %u\n", p.packet_id,
                    p.region_id == kEscapeRegionId ? "escape" : std::to_string(p.region_id).c_str(), p.instr_address,
                    p.ea, p.ea_size);
      os << line;
    }
  }
  if (!st.warnings.empty()) {
    os << "\nwarnings\n";
    for (const auto& w : st.warnings) os << "  " << w << "\n";
  }
  return os.str();
}

}  // namespace vci
