#include "vci/packet.hpp"

#include <cstring>

#include "vci/error.hpp"

namespace vci {

namespace {

void put16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}
void put32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
void put64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
std::uint16_t get16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t get32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

PacketBytes serialize(const TracePacket& p) {
  PacketBytes b{};
  std::uint8_t* o = b.data();
  put32(o + 0, p.packet_id);
  put32(o + 4, p.thread_id);
  put32(o + 8, p.region_id);
  put32(o + 12, p.instr_address);
  put32(o + 16, p.ea);
  put16(o + 20, p.ea_size);
  o[22] = p.access_kind;
  o[23] = p.pad;
  for (int i = 0; i < 8; ++i) put32(o + 24 + 4 * i, p.regs[static_cast<std::size_t>(i)]);
  put32(o + 56, p.eflags);
  return b;
}

TracePacket deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPacketSize) throw Error(ErrorCode::ParseError, "short packet record");
  const std::uint8_t* i = bytes.data();
  TracePacket p;
  p.packet_id = get32(i + 0);
  p.thread_id = get32(i + 4);
  p.region_id = get32(i + 8);
  p.instr_address = get32(i + 12);
  p.ea = get32(i + 16);
  p.ea_size = get16(i + 20);
  p.access_kind = i[22];
  p.pad = i[23];
  for (int r = 0; r < 8; ++r) p.regs[static_cast<std::size_t>(r)] = get32(i + 24 + 4 * r);
  p.eflags = get32(i + 56);
  return p;
}

std::uint32_t PacketIdAllocator::next() {
  if (next_ > 0xFFFFFFFFull) throw Error(ErrorCode::PacketIdExhausted, "packet id space (2^32) used up");
  return static_cast<std::uint32_t>(next_++);
}

PacketLogWriter::PacketLogWriter(const std::filesystem::path& path, std::uint64_t capacity)
    : path_(path), capacity_(capacity) {
  {
    std::ofstream create(path, std::ios::binary | std::ios::trunc);
    if (!create) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  }
  std::error_code ec;
  std::filesystem::resize_file(path, kPacketLogHeaderSize + capacity * kPacketSize, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot size " + path.string() + ": " + ec.message());
  file_.open(path, std::ios::binary | std::ios::in | std::ios::out);
  if (!file_) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::uint8_t header[kPacketLogHeaderSize] = {'S', 'P', 'P', 'K'};
  put16(header + 4, kPacketLogVersion);
  put64(header + 6, 0);
  file_.write(reinterpret_cast<const char*>(header), sizeof header);
  open_ = true;
}

PacketLogWriter::~PacketLogWriter() {
  try {
    close();
  } catch (...) {
  }
}

void PacketLogWriter::append(const TracePacket& p) {
  if (count_ >= capacity_) throw Error(ErrorCode::LogFull, std::to_string(capacity_) + " records");
  const PacketBytes b = serialize(p);
  file_.write(reinterpret_cast<const char*>(b.data()), b.size());
  if (!file_) throw Error(ErrorCode::IoFailure, "write failed for " + path_.string());
  ++count_;
}

void PacketLogWriter::close() {
  if (!open_) return;
  open_ = false;
  std::uint8_t count[8];
  put64(count, count_);
  file_.seekp(6);
  file_.write(reinterpret_cast<const char*>(count), sizeof count);
  file_.close();
  std::error_code ec;
  std::filesystem::resize_file(path_, kPacketLogHeaderSize + count_ * kPacketSize, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot trim " + path_.string());
}

std::vector<TracePacket> read_packet_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::uint8_t header[kPacketLogHeaderSize];
  if (!in.read(reinterpret_cast<char*>(header), sizeof header) || std::memcmp(header, "SPPK", 4) != 0)
    throw Error(ErrorCode::ParseError, path.string() + " is not a packet log");
  if (get16(header + 4) != kPacketLogVersion) throw Error(ErrorCode::VersionMismatch, "packet log version");
  const std::uint64_t count = get64(header + 6);
  std::vector<TracePacket> out;
  out.reserve(count);
  PacketBytes rec;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), rec.size()))
      throw Error(ErrorCode::ParseError, path.string() + " is truncated");
    out.push_back(deserialize(rec));
  }
  return out;
}

void write_packet_log(const std::filesystem::path& path, const std::vector<TracePacket>& packets) {
  PacketLogWriter w(path, packets.size());
  for (const auto& p : packets) w.append(p);
  w.close();
}

}  // namespace vci
