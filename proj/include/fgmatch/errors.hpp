// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fgmatch {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (shape mismatch, bad config, wrong head kind).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Mathematically undefined input, e.g. the cosine of a zero-norm vector.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class LoadErrorKind {
  BadMagic,
  VersionMismatch,
  Truncated,
  DuplicateId,
  DanglingId,
  KindMismatch,
  Malformed,
  Io,
};

inline const char* to_string(LoadErrorKind kind) {
  switch (kind) {
    case LoadErrorKind::BadMagic: return "bad magic";
    case LoadErrorKind::VersionMismatch: return "version mismatch";
    case LoadErrorKind::Truncated: return "truncated file";
    case LoadErrorKind::DuplicateId: return "duplicate id";
    case LoadErrorKind::DanglingId: return "dangling id";
    case LoadErrorKind::KindMismatch: return "kind mismatch";
    case LoadErrorKind::Malformed: return "malformed";
    case LoadErrorKind::Io: return "i/o error";
  }
  return "unknown";
}

/// Failure while reading a table, manifest, dataset or checkpoint.
class LoadError : public Error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  LoadErrorKind kind() const noexcept { return kind_; }

 private:
  LoadErrorKind kind_;
};

}  // namespace fgmatch
