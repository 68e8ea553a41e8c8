#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dfvpo {

enum class Errc {
  ConfigOutOfBounds,
  MagicMismatch,
  TruncatedPayload,
  HeterogeneousFrames,
  InvalidVideo,
  InvalidSpec,
  BlockTooLong,
  BlockOutOfRange,
  DtypeMismatch,
  LoseEqualsWin,
  InvalidRange,
  StepOutOfRange,
  ShapeMismatch,
  NonFiniteGradient,
  StateSpaceTooLarge,
  ConditionMismatch,
  SupportViolation,
  GammaNotOne,
  InvalidPolicy,
  InvalidTrajectory,
  InvalidConfig,
  IoError,
};

constexpr std::string_view errc_name(Errc e) {
  switch (e) {
    case Errc::ConfigOutOfBounds: return "ConfigOutOfBounds";
    case Errc::MagicMismatch: return "MagicMismatch";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::HeterogeneousFrames: return "HeterogeneousFrames";
    case Errc::InvalidVideo: return "InvalidVideo";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::BlockTooLong: return "BlockTooLong";
    case Errc::BlockOutOfRange: return "BlockOutOfRange";
    case Errc::DtypeMismatch: return "DtypeMismatch";
    case Errc::LoseEqualsWin: return "LoseEqualsWin";
    case Errc::InvalidRange: return "InvalidRange";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::StateSpaceTooLarge: return "StateSpaceTooLarge";
    case Errc::ConditionMismatch: return "ConditionMismatch";
    case Errc::SupportViolation: return "SupportViolation";
    case Errc::GammaNotOne: return "GammaNotOne";
    case Errc::InvalidPolicy: return "InvalidPolicy";
    case Errc::InvalidTrajectory: return "InvalidTrajectory";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's error JSON) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace dfvpo
