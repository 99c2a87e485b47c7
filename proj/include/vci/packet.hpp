#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "vci/isa.hpp"

namespace vci {

inline constexpr std::size_t kPacketSize = 60;
/// Region id carried by packets that report control leaving instrumented code.
inline constexpr std::uint32_t kEscapeRegionId = 0xFFFFFFFFu;

/// One region execution. Serialized little-endian in field order.
struct TracePacket {
  std::uint32_t packet_id = 0;
  std::uint32_t thread_id = 0;
  std::uint32_t region_id = 0;
  std::uint32_t instr_address = 0;
  std::uint32_t ea = 0;
  std::uint16_t ea_size = 0;
  std::uint8_t access_kind = 0;
  std::uint8_t pad = 0;
  RegisterFile regs{};
  std::uint32_t eflags = 0;

  friend bool operator==(const TracePacket&, const TracePacket&) = default;
};

using PacketBytes = std::array<std::uint8_t, kPacketSize>;

PacketBytes serialize(const TracePacket& p);
TracePacket deserialize(std::span<const std::uint8_t> bytes);

/// Hands out sequential packet ids; the 2^32-th allocation fails.
class PacketIdAllocator {
 public:
  explicit PacketIdAllocator(std::uint64_t first = 0) : next_(first) {}
  std::uint32_t next();
  std::uint64_t issued_next() const { return next_; }

 private:
  std::uint64_t next_;
};

// --- log file ----------------------------------------------------------------
//
// Header: "SPPK", u16 version, u64 record count; then packed records. The file
// is sized for `capacity` records up front and trimmed on close.

inline constexpr std::uint16_t kPacketLogVersion = 1;
inline constexpr std::size_t kPacketLogHeaderSize = 14;
inline constexpr std::uint64_t kDefaultLogCapacity = 50'000'000 / kPacketSize;

class PacketLogWriter {
 public:
  PacketLogWriter(const std::filesystem::path& path, std::uint64_t capacity = kDefaultLogCapacity);
  ~PacketLogWriter();
  PacketLogWriter(const PacketLogWriter&) = delete;
  PacketLogWriter& operator=(const PacketLogWriter&) = delete;

  void append(const TracePacket& p);  // throws LogFull
  void close();
  std::uint64_t count() const { return count_; }

 private:
  std::filesystem::path path_;
  std::fstream file_;
  std::uint64_t capacity_;
  std::uint64_t count_ = 0;
  bool open_ = false;
};

std::vector<TracePacket> read_packet_log(const std::filesystem::path& path);
void write_packet_log(const std::filesystem::path& path, const std::vector<TracePacket>& packets);

}  // namespace vci
