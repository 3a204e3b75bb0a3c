#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kiqa/assembler.hpp"

namespace kiqa {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr std::size_t kNumSpecials = 5;

// A token with its [begin, end) range in code points of the source text.
struct TokenSpan {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Letter/digit runs form words, each CJK character is its own token,
// punctuation and symbols are dropped, cased scripts are lowercased.
std::vector<std::string> tokenize(std::string_view text);
std::vector<TokenSpan> tokenize_with_offsets(std::string_view text);

// Unicode helpers shared with answer normalization.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);
bool is_cjk(char32_t c);
bool is_punctuation(char32_t c);
bool is_space(char32_t c);
char32_t to_lower(char32_t c);

// Substring by code-point range.
std::string slice_code_points(std::string_view text, std::size_t begin, std::size_t end);

class Vocab {
 public:
  Vocab();  // specials only
  explicit Vocab(std::vector<std::string> tokens);

  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

Vocab build_vocab(std::span<const std::string> texts, std::size_t max_size);

struct TokenizedSample {
  std::vector<TokenId> input_ids;
  std::vector<int> segment_ids;
  std::vector<std::size_t> mask_positions;
  std::vector<TokenId> target_ids;
};

// Each masked piece becomes k MASK tokens, k = number of target tokens.
TokenizedSample render(const MaskedSample& sample, const Vocab& vocab, std::size_t max_len);

struct QAInput {
  std::vector<TokenId> input_ids;  // padded to max_len
  std::vector<int> segment_ids;
  std::vector<std::pair<std::size_t, std::size_t>> context_offsets;  // code points
  std::size_t context_begin = 0;  // position of the first context token
  std::size_t length = 0;         // non-PAD prefix
  std::size_t context_tokens_total = 0;  // before truncation

  std::size_t context_size() const noexcept { return context_offsets.size(); }
  bool truncated() const noexcept { return context_tokens_total > context_offsets.size(); }
};

QAInput pack_qa(std::string_view question, std::string_view context, const Vocab& vocab,
                std::size_t max_len);

}  // namespace kiqa
