#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kiqa/kb.hpp"

namespace kiqa {

struct QAAnswer {
  std::string text;
  std::size_t answer_start = 0;  // code points into the context
  bool operator==(const QAAnswer&) const = default;
};

struct QARecord {
  std::string id;
  std::string question;
  std::string context;
  LanguageTag question_lang;
  LanguageTag context_lang;
  std::vector<QAAnswer> answers;
  bool operator==(const QARecord&) const = default;
};

// SQuAD/MLQA-style JSON. Per-qa `context_lang`/`question_lang` keys win,
// then the same keys on the paragraph, then `default_lang`.
std::vector<QARecord> load_qa_dataset(const std::filesystem::path& path,
                                      const std::optional<LanguageTag>& default_lang = {});

// Consecutive records sharing a context become one paragraph.
void save_qa_dataset(const std::vector<QARecord>& records, const std::filesystem::path& path);

}  // namespace kiqa
