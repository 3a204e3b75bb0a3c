#include "kiqa/errors.hpp"

namespace kiqa {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::DanglingId: return "dangling_id";
    case ErrorKind::DuplicateTriple: return "duplicate_triple";
    case ErrorKind::DuplicateId: return "duplicate_id";
    case ErrorKind::MissingForm: return "missing_form";
    case ErrorKind::SameLanguage: return "same_language";
    case ErrorKind::InsufficientTriples: return "insufficient_triples";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Overflow: return "overflow";
    case ErrorKind::QuestionTooLong: return "question_too_long";
    case ErrorKind::ShapeMismatch: return "shape_mismatch";
    case ErrorKind::IdOutOfRange: return "id_out_of_range";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::NoMaskedPositions: return "no_masked_positions";
    case ErrorKind::GoldMasked: return "gold_masked";
    case ErrorKind::Unlocatable: return "unlocatable";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Collision: return "collision";
    case ErrorKind::Io: return "io";
    case ErrorKind::Config: return "config";
    case ErrorKind::HashMismatch: return "hash_mismatch";
  }
  return "unknown";
}

}  // namespace kiqa
