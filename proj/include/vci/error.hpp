#pragma once

#include <stdexcept>
#include <string>

namespace vci {

enum class ErrorCode {
  UnsupportedOpcode,
  TruncatedInstruction,
  DisplacementOverflow,
  Unencodable,
  NoMemoryOperand,
  UnknownRegister,
  UndecodableReachableByte,
  OverlappingCodePaths,
  BranchIntoInstructionMiddle,
  InvalidHandle,
  DeleteLastNodeWithIncomingLinks,
  LayoutDivergence,
  UnresolvedImport,
  RegionImageMismatch,
  UndecodableInstruction,
  MemoryFault,
  StepLimitExceeded,
  PacketIdExhausted,
  ChannelPoisoned,
  ChannelClosed,
  LogFull,
  OverlapWithLiveRegion,
  UnknownRegionId,
  IoFailure,
  VersionMismatch,
  ParseError,
  ConfigError,
};

constexpr const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnsupportedOpcode: return "UnsupportedOpcode";
    case ErrorCode::TruncatedInstruction: return "TruncatedInstruction";
    case ErrorCode::DisplacementOverflow: return "DisplacementOverflow";
    case ErrorCode::Unencodable: return "Unencodable";
    case ErrorCode::NoMemoryOperand: return "NoMemoryOperand";
    case ErrorCode::UnknownRegister: return "UnknownRegister";
    case ErrorCode::UndecodableReachableByte: return "UndecodableReachableByte";
    case ErrorCode::OverlappingCodePaths: return "OverlappingCodePaths";
    case ErrorCode::BranchIntoInstructionMiddle: return "BranchIntoInstructionMiddle";
    case ErrorCode::InvalidHandle: return "InvalidHandle";
    case ErrorCode::DeleteLastNodeWithIncomingLinks: return "DeleteLastNodeWithIncomingLinks";
    case ErrorCode::LayoutDivergence: return "LayoutDivergence";
    case ErrorCode::UnresolvedImport: return "UnresolvedImport";
    case ErrorCode::RegionImageMismatch: return "RegionImageMismatch";
    case ErrorCode::UndecodableInstruction: return "UndecodableInstruction";
    case ErrorCode::MemoryFault: return "MemoryFault";
    case ErrorCode::StepLimitExceeded: return "StepLimitExceeded";
    case ErrorCode::PacketIdExhausted: return "PacketIdExhausted";
    case ErrorCode::ChannelPoisoned: return "ChannelPoisoned";
    case ErrorCode::ChannelClosed: return "ChannelClosed";
    case ErrorCode::LogFull: return "LogFull";
    case ErrorCode::OverlapWithLiveRegion: return "OverlapWithLiveRegion";
    case ErrorCode::UnknownRegionId: return "UnknownRegionId";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a typed code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vci
