#include "kiqa/textmodel.hpp"

#include <algorithm>
#include <fstream>
#include <locale>
#include <map>
#include <optional>

#include "kiqa/errors.hpp"

namespace kiqa {

namespace {

// Full Unicode classification comes from the C.UTF-8 locale when present.
const std::ctype<wchar_t>* unicode_ctype() {
  static const std::ctype<wchar_t>* facet = []() -> const std::ctype<wchar_t>* {
    for (const char* name : {"C.UTF-8", "C.utf8", "en_US.UTF-8"}) {
      try {
        static const std::locale loc(name);
        return &std::use_facet<std::ctype<wchar_t>>(loc);
      } catch (const std::runtime_error&) {
      }
    }
    return nullptr;
  }();
  return facet;
}

bool in_range(char32_t c, char32_t lo, char32_t hi) { return c >= lo && c <= hi; }

}  // namespace

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    auto b0 = static_cast<unsigned char>(text[i]);
    char32_t cp = 0xFFFD;
    std::size_t len = 1;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 >> 5) == 0x6) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 >> 4) == 0xE) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 >> 3) == 0x1E) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    if (i + len > text.size()) {
      out.push_back(0xFFFD);
      break;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      auto b = static_cast<unsigned char>(text[i + k]);
      if ((b >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t c : text) {
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else if (c < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else if (c < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (c >> 12)));
      out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (c >> 18)));
      out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
  }
  return out;
}

bool is_cjk(char32_t c) {
  return in_range(c, 0x4E00, 0x9FFF) || in_range(c, 0x3400, 0x4DBF) ||
         in_range(c, 0x20000, 0x2A6DF) || in_range(c, 0x2A700, 0x2CEAF) ||
         in_range(c, 0xF900, 0xFAFF) || in_range(c, 0x2F800, 0x2FA1F) ||
         in_range(c, 0x3040, 0x309F) || in_range(c, 0x30A0, 0x30FF);
}

bool is_space(char32_t c) {
  return in_range(c, 0x09, 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         in_range(c, 0x2000, 0x200B) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000 || c == 0xFEFF;
}

bool is_punctuation(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  if (in_range(c, 0x2010, 0x2027) || in_range(c, 0x2030, 0x205E) ||
      in_range(c, 0x3001, 0x3003) || in_range(c, 0x3008, 0x3011) ||
      in_range(c, 0x3014, 0x301F) || in_range(c, 0xFF01, 0xFF0F) ||
      in_range(c, 0xFF1A, 0xFF20) || in_range(c, 0xFF3B, 0xFF40) ||
      in_range(c, 0xFF5B, 0xFF65) || in_range(c, 0xFE10, 0xFE19) ||
      in_range(c, 0xFE30, 0xFE4F) || c == 0x30FB) {
    return true;
  }
  if (const auto* ct = unicode_ctype()) {
    return ct->is(std::ctype_base::punct, static_cast<wchar_t>(c)) && !is_cjk(c);
  }
  return in_range(c, 0xA1, 0xBF) && c != 0xAA && c != 0xB2 && c != 0xB3 && c != 0xB5 &&
         c != 0xB9 && c != 0xBA;
}

char32_t to_lower(char32_t c) {
  if (c < 0x80) return (c >= 'A' && c <= 'Z') ? c + 32 : c;
  if (const auto* ct = unicode_ctype()) {
    return static_cast<char32_t>(ct->tolower(static_cast<wchar_t>(c)));
  }
  return c;
}

std::vector<TokenSpan> tokenize_with_offsets(std::string_view text) {
  std::u32string cps = decode_utf8(text);
  std::vector<TokenSpan> out;
  std::u32string word;
  std::size_t word_begin = 0;
  auto flush = [&](std::size_t end) {
    if (!word.empty()) out.push_back({encode_utf8(word), word_begin, end});
    word.clear();
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    char32_t c = cps[i];
    if (is_space(c) || is_punctuation(c) || c < 0x20 || c == 0x7F) {
      flush(i);
    } else if (is_cjk(c)) {
      flush(i);
      out.push_back({encode_utf8(std::u32string(1, c)), i, i + 1});
    } else {
      if (word.empty()) word_begin = i;
      word.push_back(to_lower(c));
    }
  }
  flush(cps.size());
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& span : tokenize_with_offsets(text)) out.push_back(std::move(span.text));
  return out;
}

std::string slice_code_points(std::string_view text, std::size_t begin, std::size_t end) {
  std::u32string cps = decode_utf8(text);
  begin = std::min(begin, cps.size());
  end = std::clamp(end, begin, cps.size());
  return encode_utf8(std::u32string_view(cps).substr(begin, end - begin));
}

namespace {
const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                    "[MASK]"};
  return specials;
}
}  // namespace

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = special_tokens();
  if (tokens_.size() < kNumSpecials ||
      !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
    throw Error(ErrorKind::InvalidArgument, "vocab must start with the five special tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error(ErrorKind::DuplicateId, "duplicate vocab token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorKind::IdOutOfRange, "token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocab(std::move(tokens));
}

Vocab build_vocab(std::span<const std::string> texts, std::size_t max_size) {
  if (max_size < kNumSpecials) {
    throw Error(ErrorKind::InvalidArgument, "vocab max_size must be at least 5");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& tok : tokenize(text)) ++counts[std::move(tok)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // Stable sort keeps the lexicographic order of the map among equal counts.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = special_tokens();
  for (const auto& [tok, _] : ranked) {
    if (tokens.size() >= max_size) break;
    if (std::find(tokens.begin(), tokens.begin() + kNumSpecials, tok) !=
        tokens.begin() + kNumSpecials) {
      continue;
    }
    tokens.push_back(tok);
  }
  return Vocab(std::move(tokens));
}

TokenizedSample render(const MaskedSample& sample, const Vocab& vocab, std::size_t max_len) {
  TokenizedSample out;
  out.input_ids.push_back(kCls);
  out.segment_ids.push_back(0);
  const bool two_blocks = sample.kind == SampleKind::K3;
  std::size_t next_target = 0;
  for (std::size_t p = 0; p < sample.pieces.size(); ++p) {
    const Piece& piece = sample.pieces[p];
    const int segment = two_blocks && p >= 3 ? 1 : 0;
    if (two_blocks && p == 3) {
      out.input_ids.push_back(kSep);
      out.segment_ids.push_back(0);
    }
    if (piece.masked) {
      const MaskTarget& target = sample.targets.at(next_target++);
      for (const auto& tok : tokenize(target.text)) {
        out.mask_positions.push_back(out.input_ids.size());
        out.input_ids.push_back(kMask);
        out.segment_ids.push_back(segment);
        out.target_ids.push_back(vocab.id(tok));
      }
    } else {
      for (const auto& tok : tokenize(piece.text)) {
        out.input_ids.push_back(vocab.id(tok));
        out.segment_ids.push_back(segment);
      }
    }
  }
  out.input_ids.push_back(kSep);
  out.segment_ids.push_back(two_blocks ? 1 : 0);
  if (out.input_ids.size() > max_len) {
    throw Error(ErrorKind::Overflow, "rendered sample has " +
                                         std::to_string(out.input_ids.size()) +
                                         " tokens, max_len is " + std::to_string(max_len));
  }
  return out;
}

QAInput pack_qa(std::string_view question, std::string_view context, const Vocab& vocab,
                std::size_t max_len) {
  std::vector<std::string> q = tokenize(question);
  if (q.size() + 3 >= max_len) {
    throw Error(ErrorKind::QuestionTooLong, "question has " + std::to_string(q.size()) +
                                                " tokens, max_len is " + std::to_string(max_len));
  }
  std::vector<TokenSpan> c = tokenize_with_offsets(context);

  QAInput out;
  out.context_tokens_total = c.size();
  out.input_ids.reserve(max_len);
  out.input_ids.push_back(kCls);
  for (const auto& tok : q) out.input_ids.push_back(vocab.id(tok));
  out.input_ids.push_back(kSep);
  out.segment_ids.assign(out.input_ids.size(), 0);
  out.context_begin = out.input_ids.size();

  const std::size_t budget = max_len - out.input_ids.size() - 1;
  const std::size_t kept = std::min(budget, c.size());
  for (std::size_t i = 0; i < kept; ++i) {
    out.input_ids.push_back(vocab.id(c[i].text));
    out.segment_ids.push_back(1);
    out.context_offsets.emplace_back(c[i].begin, c[i].end);
  }
  out.input_ids.push_back(kSep);
  out.segment_ids.push_back(1);
  out.length = out.input_ids.size();
  out.input_ids.resize(max_len, kPad);
  out.segment_ids.resize(max_len, 0);
  return out;
}

}  // namespace kiqa
