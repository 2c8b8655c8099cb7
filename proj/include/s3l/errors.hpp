#pragma once

#include <stdexcept>
#include <string>

namespace s3l {

// Error taxonomy. The CLI maps these onto process exit codes:
//   ConfigError and friends -> 2, DivergedError -> 3, IoError/VersionError/CorruptionError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value, unknown key, or unusable layer grammar.
struct ConfigError : Error {
  using Error::Error;
};

// Tensor shape mismatch (inner dimensions, broadcast, grad shape).
struct DimensionError : Error {
  using Error::Error;
};

// API contract violation: non-scalar loss, mismatched roles, bad call order.
struct ContractError : Error {
  using Error::Error;
};

// Input sequence too short for the requested transform (STFT, conv ladder).
struct SequenceTooShortError : Error {
  using Error::Error;
};

// Zero-power signal where a finite SNR or norm is required.
struct DegenerateSignalError : Error {
  using Error::Error;
};

// Utterance unusable for the requested sampling (e.g. T == 1 with k >= 1 distractors).
struct DegenerateUtteranceError : Error {
  using Error::Error;
};

// Operation restricted to one encoder role called on the other.
struct RoleError : Error {
  using Error::Error;
};

// Checkpoint magic or format version mismatch.
struct VersionError : Error {
  using Error::Error;
};

// Truncated or inconsistent checkpoint payload.
struct CorruptionError : Error {
  using Error::Error;
};

// NaN/Inf appeared in a loss or gradient.
struct DivergedError : Error {
  using Error::Error;
};

// Filesystem failure (unreadable/unwritable path, malformed WAV).
struct IoError : Error {
  using Error::Error;
};

// CTC label sequence longer than any feasible alignment for the frame count.
struct InfeasibleAlignmentError : Error {
  using Error::Error;
};

// Masked loss requested with an empty mask set.
struct EmptyMaskError : Error {
  using Error::Error;
};

}  // namespace s3l
