#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kiqa/kb.hpp"

namespace kiqa {

// K1: monolingual triple. K2: one entity rendered in a second language.
// K3: two full renderings of the same triple concatenated.
enum class SampleKind { K1, K2HeadSwap, K2TailSwap, K3 };
enum class MaskSide { Head, Tail };
enum class PieceRole { Head, Rel, Tail, Head2, Rel2, Tail2 };

std::string to_string(SampleKind kind);
std::string to_string(MaskSide side);
std::string to_string(PieceRole role);
SampleKind parse_sample_kind(const std::string& s);
MaskSide parse_mask_side(const std::string& s);
PieceRole parse_piece_role(const std::string& s);

struct Piece {
  PieceRole role;
  LanguageTag lang;
  std::string text;  // the true surface form, kept even when masked
  bool masked = false;
  bool operator==(const Piece&) const = default;
};

struct MaskTarget {
  std::size_t piece;
  std::string text;
  bool operator==(const MaskTarget&) const = default;
};

struct MaskedSample {
  SampleKind kind;
  MaskSide mask_side;
  std::vector<Piece> pieces;
  std::vector<MaskTarget> targets;
  Triple source_triple;
  LanguageTag lang_i;
  std::optional<LanguageTag> lang_j;
  bool operator==(const MaskedSample&) const = default;
};

// Returns an empty string when every type invariant holds, otherwise a
// description of the first violation.
std::string check_invariants(const MaskedSample& sample);

// [tail-masked, head-masked], all pieces in lang_i.
std::vector<MaskedSample> assemble_k1(const KnowledgeBase& kb, const Triple& t,
                                      const LanguageTag& lang_i);

// [head-masked with target h_j, tail-masked with target t_j]; visible pieces
// stay in lang_i.
std::vector<MaskedSample> assemble_k2(const KnowledgeBase& kb, const Triple& t,
                                      const LanguageTag& lang_i, const LanguageTag& lang_j);

// [head-masked with targets (h_i, h_j), tail-masked with targets (t_i, t_j)].
std::vector<MaskedSample> assemble_k3(const KnowledgeBase& kb, const Triple& t,
                                      const LanguageTag& lang_i, const LanguageTag& lang_j);

struct KindWeights {
  double k1 = 1.0;
  double k2 = 1.0;
  double k3 = 1.0;
};

std::vector<MaskedSample> build_corpus(const KnowledgeBase& kb, const std::set<LanguageTag>& langs,
                                       std::size_t n_triples, const KindWeights& weights,
                                       std::uint64_t seed);

// Replaces every masked piece by its target text.
std::vector<Piece> unmask(const MaskedSample& sample);

void write_corpus(const std::vector<MaskedSample>& corpus, const std::filesystem::path& path);
std::vector<MaskedSample> read_corpus(const std::filesystem::path& path);

}  // namespace kiqa
