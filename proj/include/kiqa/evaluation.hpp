#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kiqa/encoder.hpp"
#include "kiqa/kb.hpp"
#include "kiqa/qa_dataset.hpp"

namespace kiqa {

struct SpanChoice {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const SpanChoice&) const = default;
};

// Best (s, e) by start[s] + end[e] with context_begin <= s <= e < context_end
// and e - s + 1 <= max_answer_len. Ties go to the earlier s, then earlier e.
SpanChoice decode_span(const Vec& start_logits, const Vec& end_logits, std::size_t context_begin,
                       std::size_t context_end, std::size_t max_answer_len);

bool is_cjk_language(const LanguageTag& lang);

std::string normalize_answer(std::string_view text, const LanguageTag& lang);
int exact_match(std::string_view pred, std::string_view gold, const LanguageTag& lang);
double token_f1(std::string_view pred, std::string_view gold, const LanguageTag& lang);

struct Prediction {
  std::string qa_id;
  std::string text;
  LanguageTag context_lang;
  LanguageTag question_lang;
  double f1 = 0.0;
  int em = 0;
};

struct EvalCell {
  double f1 = 0.0;  // percent
  double em = 0.0;  // percent
  std::size_t count = 0;
};

using LangPair = std::pair<LanguageTag, LanguageTag>;  // (context, question)

struct EvalReport {
  std::map<LangPair, EvalCell> cells;
  EvalCell overall;  // count-weighted over cells
};

struct EvalResult {
  EvalReport report;
  std::vector<Prediction> predictions;
};

EvalReport aggregate(const std::vector<Prediction>& predictions);

// Unweighted means over cells: question language != context language
// ("cross") and the single (pivot, pivot) cell.
struct TransferSummary {
  double cross_f1 = 0.0;
  double cross_em = 0.0;
  double pivot_f1 = 0.0;
  double pivot_em = 0.0;
  std::size_t cross_cells = 0;
};
TransferSummary summarize_transfer(const EvalReport& report, const LanguageTag& pivot);

EvalResult evaluate(const EncoderParams& params, const Vocab& vocab,
                    const std::vector<QARecord>& dataset, std::size_t max_answer_len = 30,
                    std::size_t max_len = 384);

// "Settings(c/q) | F1 | Exact Match" table, one row per cell plus the average.
std::string format_report(const EvalReport& report, const std::string& title = {});
void write_report(const EvalReport& report, const std::filesystem::path& table_path,
                  const std::filesystem::path& json_path, const std::string& title = {});

// Per language, |U ∩ T| / |U| over unique question tokens U and unique
// triple tokens T. Languages without questions are absent.
using CoverageReport = std::map<LanguageTag, double>;

CoverageReport token_coverage(const std::vector<std::pair<std::string, LanguageTag>>& questions,
                              const std::map<LanguageTag, std::vector<std::string>>& triples);

// "<head> <rel> <tail>" for every triple with forms in `lang`.
std::map<LanguageTag, std::vector<std::string>> render_triples(const KnowledgeBase& kb,
                                                               const std::vector<Triple>& triples);

}  // namespace kiqa
