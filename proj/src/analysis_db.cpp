#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vci/error.hpp"
#include "vci/regions.hpp"

namespace vci {

namespace {

using nlohmann::json;

std::string hex_addr(Address a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", a);
  return buf;
}

Address parse_addr(const json& j) { return static_cast<Address>(std::stoul(j.get<std::string>(), nullptr, 16)); }

std::string hex_bytes(std::span<const std::uint8_t> b) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string s;
  for (auto x : b) {
    s.push_back(kDigits[x >> 4]);
    s.push_back(kDigits[x & 15]);
  }
  return s;
}

Bytes parse_hex_bytes(const std::string& s) {
  if (s.size() % 2) throw Error(ErrorCode::ParseError, "odd hex string");
  Bytes out;
  for (std::size_t i = 0; i < s.size(); i += 2) out.push_back(static_cast<std::uint8_t>(std::stoul(s.substr(i, 2), nullptr, 16)));
  return out;
}

constexpr const char* kKindNames[] = {"memory", "control", "fallthrough-end"};

TerminatorKind parse_kind(const std::string& s) {
  for (unsigned i = 0; i < 3; ++i)
    if (s == kKindNames[i]) return static_cast<TerminatorKind>(i);
  throw Error(ErrorCode::ParseError, "terminator kind '" + s + "'");
}

}  // namespace

void export_analysis(const AnalysisDatabase& db, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());

  json header = {{"format", "vci-analysis"},
                 {"version", kAnalysisFormatVersion},
                 {"base", hex_addr(db.image.base)},
                 {"image", hex_bytes(db.image.bytes)}};
  json entries = json::array();
  for (auto e : db.entries) entries.push_back(hex_addr(e));
  header["entries"] = entries;
  out << header.dump() << '\n';

  for (const auto& [entry, r] : db.regions) {
    for (const auto& ri : r.instructions) {
      const json rec = {{"type", "instruction"},
                        {"address", hex_addr(ri.instr.address)},
                        {"bytes", hex_bytes(encode(ri.instr))},
                        {"mnemonic", to_string(ri.instr)},
                        {"src", cell_names(ri.desc.src)},
                        {"dest", cell_names(ri.desc.dest)},
                        {"mem", access_name(ri.desc.mem)},
                        {"region", r.id}};
      out << rec.dump() << '\n';
    }
  }
  for (const auto& [entry, r] : db.regions) {
    json addrs = json::array();
    for (const auto& ri : r.instructions) addrs.push_back(hex_addr(ri.instr.address));
    json variants = json::array();
    for (const auto& v : r.variants) variants.push_back({{"in", cell_names(v.in)}, {"out", cell_names(v.out)}});
    const json rec = {{"type", "region"},
                      {"id", r.id},
                      {"entry", hex_addr(entry)},
                      {"instructions", addrs},
                      {"terminator", kKindNames[static_cast<unsigned>(r.terminator_kind)]},
                      {"variants", variants},
                      {"disputable", cell_names(r.disputable)},
                      {"written", cell_names(r.written)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

AnalysisDatabase import_analysis(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());

  AnalysisDatabase db;
  std::map<Address, Instruction> instrs;
  std::string line;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("format", "") != "vci-analysis") throw Error(ErrorCode::ParseError, "not an analysis database");
        if (j.at("version").get<int>() != kAnalysisFormatVersion)
          throw Error(ErrorCode::VersionMismatch, "analysis database version " + j.at("version").dump());
        db.image.base = parse_addr(j.at("base"));
        db.image.bytes = parse_hex_bytes(j.at("image").get<std::string>());
        for (const auto& e : j.at("entries")) db.entries.push_back(parse_addr(e));
        have_header = true;
        continue;
      }
      const std::string type = j.at("type").get<std::string>();
      if (type == "instruction") {
        const Address a = parse_addr(j.at("address"));
        const Bytes b = parse_hex_bytes(j.at("bytes").get<std::string>());
        instrs.emplace(a, decode(b, 0, a));
      } else if (type == "region") {
        DataflowRegion r;
        r.id = j.at("id").get<std::uint32_t>();
        for (const auto& a : j.at("instructions")) {
          const auto it = instrs.find(parse_addr(a));
          if (it == instrs.end()) throw Error(ErrorCode::ParseError, "region references unknown instruction");
          r.instructions.push_back({it->second, describe(it->second)});
        }
        if (r.instructions.empty()) throw Error(ErrorCode::ParseError, "empty region");
        if (r.instructions.front().instr.references_memory()) r.mem_instruction_index = 0;
        r.terminator_kind = parse_kind(j.at("terminator").get<std::string>());
        for (const auto& v : j.at("variants"))
          r.variants.push_back({from_cell_names(v.at("in").get<std::vector<std::string>>()),
                                from_cell_names(v.at("out").get<std::vector<std::string>>())});
        r.disputable = from_cell_names(j.at("disputable").get<std::vector<std::string>>());
        r.written = from_cell_names(j.at("written").get<std::vector<std::string>>());
        db.regions.emplace(r.entry(), std::move(r));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  if (!have_header) throw Error(ErrorCode::ParseError, path.string() + ": missing header");
  return db;
}

}  // namespace vci
