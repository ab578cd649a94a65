#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sugar {

enum class ErrorKind {
  InvalidRatio,
  EmptyGraph,
  KOutOfRange,
  MisalignedWeights,
  IndexOutOfRange,
  InvalidGraph,
  SizeTooSmall,
  FeatureDimMismatch,
  EmptyBatch,
  NonFiniteTerm,
  Divergence,
  RocAucUndefined,
  CorruptManifest,
  ShapeMismatch,
  FingerprintMismatch,
  EmptyModelList,
  EmptyMatrix,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Configuration problems map to CLI exit code 2; everything else to 3.
inline bool is_config_error(ErrorKind kind) {
  return kind == ErrorKind::InvalidConfig || kind == ErrorKind::InvalidRatio;
}

}  // namespace sugar
