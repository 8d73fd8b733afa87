#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kdctc {

// Training/inference scalar. Double keeps gradient checks and the
// reproducibility contracts exact; the mixed_precision flag drops the
// heavy GEMMs to float32 where requested.
using real = double;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: broken invariants, out-of-range values, mismatched labels.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Missing or inaccessible filesystem locations.
class PathError : public Error {
 public:
  using Error::Error;
};

// Malformed text files (manifests, configs, result records).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Unknown keys, unsupported architectures, inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint / weight-file problems (shape mismatch, version, truncation).
class LoadError : public Error {
 public:
  using Error::Error;
};

// Corrupt binary payload (checksum mismatch).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Undecodable image data.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Tensor shape disagreements inside the network.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when a training step produces a non-finite loss; carries the
// provenance of the offending batch in the message.
class TrainAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace kdctc
