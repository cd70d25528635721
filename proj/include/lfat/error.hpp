#ifndef LFAT_ERROR_HPP_
#define LFAT_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace lfat {

enum class Errc {
  EmptyWindow,
  FormatError,
  InvalidArgument,
  InsufficientData,
  FieldTooLong,
  UnknownTrigger,
  AlreadyArmed,
  NoTrigger,
  SourceFailure,
  ProverUnreachable,
  EmptyManifest,
  IoError,
};

inline const char* to_string(Errc c) {
  switch (c) {
    case Errc::EmptyWindow: return "EmptyWindow";
    case Errc::FormatError: return "FormatError";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::FieldTooLong: return "FieldTooLong";
    case Errc::UnknownTrigger: return "UnknownTrigger";
    case Errc::AlreadyArmed: return "AlreadyArmed";
    case Errc::NoTrigger: return "NoTrigger";
    case Errc::SourceFailure: return "SourceFailure";
    case Errc::ProverUnreachable: return "ProverUnreachable";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the Errc codes so that
/// callers (and the CLI exit-status mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace lfat

#endif  // LFAT_ERROR_HPP_
