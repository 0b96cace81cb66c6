#pragma once

#include <stdexcept>
#include <string>

namespace pmpguard {

enum class Errc {
  EmptyInput,
  ZeroVector,
  InvalidTemperature,
  DegenerateCorpus,
  NoiseInjectionStalled,
  CorruptCorpusFile,
  InsufficientSamples,
  DegenerateFit,
  NumericalFailure,
  NeedNegatives,
  Diverged,
  KinkTooClose,
  KTooLarge,
  InvalidArgument,
  IoError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::InvalidTemperature: return "InvalidTemperature";
    case Errc::DegenerateCorpus: return "DegenerateCorpus";
    case Errc::NoiseInjectionStalled: return "NoiseInjectionStalled";
    case Errc::CorruptCorpusFile: return "CorruptCorpusFile";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::DegenerateFit: return "DegenerateFit";
    case Errc::NumericalFailure: return "NumericalFailure";
    case Errc::NeedNegatives: return "NeedNegatives";
    case Errc::Diverged: return "Diverged";
    case Errc::KinkTooClose: return "KinkTooClose";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace pmpguard
