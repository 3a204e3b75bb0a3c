#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kiqa {

enum class ErrorKind {
  Parse,
  DanglingId,
  DuplicateTriple,
  DuplicateId,
  MissingForm,
  SameLanguage,
  InsufficientTriples,
  InvalidArgument,
  Overflow,
  QuestionTooLong,
  ShapeMismatch,
  IdOutOfRange,
  NonFinite,
  NoMaskedPositions,
  GoldMasked,
  Unlocatable,
  Infeasible,
  Collision,
  Io,
  Config,
  HashMismatch,
};

std::string_view to_string(ErrorKind kind);

// Every module reports failures through this type so the CLI can emit a
// single machine-parsable record per failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace kiqa
