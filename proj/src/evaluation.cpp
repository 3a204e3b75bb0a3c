#include "kiqa/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kiqa/errors.hpp"

namespace kiqa {

SpanChoice decode_span(const Vec& start_logits, const Vec& end_logits, std::size_t context_begin,
                       std::size_t context_end, std::size_t max_answer_len) {
  const auto n = static_cast<std::size_t>(start_logits.size());
  if (static_cast<std::size_t>(end_logits.size()) != n) {
    throw Error(ErrorKind::ShapeMismatch, "start and end logits differ in length");
  }
  if (context_begin >= context_end || context_end > n) {
    throw Error(ErrorKind::InvalidArgument, "empty or out-of-range context segment");
  }
  if (max_answer_len < 1) throw Error(ErrorKind::InvalidArgument, "max_answer_len must be >= 1");
  SpanChoice best{context_begin, context_begin};
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t s = context_begin; s < context_end; ++s) {
    const std::size_t stop = std::min(context_end, s + max_answer_len);
    for (std::size_t e = s; e < stop; ++e) {
      const double score = start_logits(static_cast<Eigen::Index>(s)) +
                           end_logits(static_cast<Eigen::Index>(e));
      if (score > best_score) {
        best_score = score;
        best = {s, e};
      }
    }
  }
  return best;
}

bool is_cjk_language(const LanguageTag& lang) {
  return lang.code() == "zh" || lang.code() == "ja" || lang.code().starts_with("zh-") ||
         lang.code().starts_with("zh_");
}

std::string normalize_answer(std::string_view text, const LanguageTag& lang) {
  std::u32string cps = decode_utf8(text);
  std::u32string kept;
  kept.reserve(cps.size());
  for (char32_t c : cps) {
    if (is_punctuation(c)) continue;
    kept.push_back(is_space(c) ? U' ' : to_lower(c));
  }

  std::vector<std::u32string> words;
  std::u32string cur;
  for (char32_t c : kept) {
    if (c == U' ') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));

  if (lang.code() == "en") {
    std::erase_if(words, [](const std::u32string& w) { return w == U"a" || w == U"an" || w == U"the"; });
  }
  std::u32string joined;
  const bool cjk = is_cjk_language(lang);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0 && !cjk) joined.push_back(U' ');
    joined += words[i];
  }
  return encode_utf8(joined);
}

int exact_match(std::string_view pred, std::string_view gold, const LanguageTag& lang) {
  return normalize_answer(pred, lang) == normalize_answer(gold, lang) ? 1 : 0;
}

double token_f1(std::string_view pred, std::string_view gold, const LanguageTag& lang) {
  std::vector<std::string> p = tokenize(normalize_answer(pred, lang));
  std::vector<std::string> g = tokenize(normalize_answer(gold, lang));
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

EvalReport aggregate(const std::vector<Prediction>& predictions) {
  struct Sums {
    double f1 = 0, em = 0;
    std::size_t n = 0;
  };
  std::map<LangPair, Sums> sums;
  for (const Prediction& p : predictions) {
    Sums& s = sums[{p.context_lang, p.question_lang}];
    s.f1 += p.f1;
    s.em += p.em;
    ++s.n;
  }
  EvalReport report;
  double f1 = 0, em = 0;
  std::size_t n = 0;
  for (const auto& [key, s] : sums) {
    const double count = static_cast<double>(s.n);
    report.cells[key] = {100.0 * s.f1 / count, 100.0 * s.em / count, s.n};
    f1 += report.cells[key].f1 * count;
    em += report.cells[key].em * count;
    n += s.n;
  }
  if (n > 0) report.overall = {f1 / static_cast<double>(n), em / static_cast<double>(n), n};
  return report;
}

TransferSummary summarize_transfer(const EvalReport& report, const LanguageTag& pivot) {
  TransferSummary s;
  for (const auto& [key, cell] : report.cells) {
    if (key.first != key.second) {
      s.cross_f1 += cell.f1;
      s.cross_em += cell.em;
      ++s.cross_cells;
    } else if (key.first == pivot) {
      s.pivot_f1 = cell.f1;
      s.pivot_em = cell.em;
    }
  }
  if (s.cross_cells > 0) {
    s.cross_f1 /= static_cast<double>(s.cross_cells);
    s.cross_em /= static_cast<double>(s.cross_cells);
  }
  return s;
}

EvalResult evaluate(const EncoderParams& params, const Vocab& vocab,
                    const std::vector<QARecord>& dataset, std::size_t max_answer_len,
                    std::size_t max_len) {
  max_len = std::min(max_len, params.config().max_len);
  EvalResult result;
  result.predictions.reserve(dataset.size());
  for (const QARecord& r : dataset) {
    if (r.answers.empty()) throw Error(ErrorKind::Parse, "qa " + r.id + " has no gold answers");
    Prediction pred{r.id, {}, r.context_lang, r.question_lang, 0.0, 0};
    QAInput input = pack_qa(r.question, r.context, vocab, max_len);
    if (input.context_size() > 0) {
      const std::size_t n = input.length;
      Mat hidden = forward(params, std::span<const TokenId>(input.input_ids.data(), n),
                           std::span<const int>(input.segment_ids.data(), n));
      SpanLogits logits = qa_logits(params, hidden);
      SpanChoice span = decode_span(logits.start, logits.end, input.context_begin,
                                    input.context_begin + input.context_size(), max_answer_len);
      const auto& first = input.context_offsets[span.start - input.context_begin];
      const auto& last = input.context_offsets[span.end - input.context_begin];
      pred.text = slice_code_points(r.context, first.first, last.second);
    }
    for (const QAAnswer& gold : r.answers) {
      pred.f1 = std::max(pred.f1, token_f1(pred.text, gold.text, r.context_lang));
      pred.em = std::max(pred.em, exact_match(pred.text, gold.text, r.context_lang));
    }
    result.predictions.push_back(std::move(pred));
  }
  result.report = aggregate(result.predictions);
  return result;
}

namespace {
std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}
}  // namespace

std::string format_report(const EvalReport& report, const std::string& title) {
  std::ostringstream out;
  if (!title.empty()) out << "# " << title << '\n';
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s | %7s | %11s | %6s\n", "Settings(c/q)", "F1",
                "Exact Match", "Count");
  out << line;
  out << std::string(16, '-') << "-+-" << std::string(7, '-') << "-+-" << std::string(11, '-')
      << "-+-" << std::string(6, '-') << '\n';
  auto row = [&](const std::string& name, const EvalCell& c) {
    std::snprintf(line, sizeof(line), "%-16s | %7s | %11s | %6zu\n", name.c_str(),
                  fixed2(c.f1).c_str(), fixed2(c.em).c_str(), c.count);
    out << line;
  };
  for (const auto& [key, cell] : report.cells) {
    row(key.first.code() + "/" + key.second.code(), cell);
  }
  row("average", report.overall);
  return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& table_path,
                  const std::filesystem::path& json_path, const std::string& title) {
  {
    std::ofstream out(table_path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + table_path.string());
    out << format_report(report, title);
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [key, c] : report.cells) {
    cells.push_back({{"context_lang", key.first.code()},
                     {"question_lang", key.second.code()},
                     {"f1", c.f1},
                     {"em", c.em},
                     {"count", c.count}});
  }
  nlohmann::json doc = {{"title", title},
                        {"cells", cells},
                        {"overall",
                         {{"f1", report.overall.f1},
                          {"em", report.overall.em},
                          {"count", report.overall.count}}}};
  std::ofstream out(json_path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + json_path.string());
  out << doc.dump(2) << '\n';
}

CoverageReport token_coverage(const std::vector<std::pair<std::string, LanguageTag>>& questions,
                              const std::map<LanguageTag, std::vector<std::string>>& triples) {
  std::map<LanguageTag, std::set<std::string>> question_tokens;
  for (const auto& [text, lang] : questions) {
    auto& set = question_tokens[lang];
    for (auto& t : tokenize(text)) set.insert(std::move(t));
  }
  CoverageReport out;
  for (const auto& [lang, u] : question_tokens) {
    if (u.empty()) continue;
    std::set<std::string> t;
    if (auto it = triples.find(lang); it != triples.end()) {
      for (const auto& text : it->second) {
        for (auto& tok : tokenize(text)) t.insert(std::move(tok));
      }
    }
    std::size_t hit = 0;
    for (const auto& tok : u) hit += t.contains(tok) ? 1 : 0;
    out[lang] = static_cast<double>(hit) / static_cast<double>(u.size());
  }
  return out;
}

std::map<LanguageTag, std::vector<std::string>> render_triples(const KnowledgeBase& kb,
                                                               const std::vector<Triple>& triples) {
  std::map<LanguageTag, std::vector<std::string>> out;
  for (const LanguageTag& lang : kb.languages()) {
    for (const Triple& t : triples) {
      if (!kb.has_form(ElementKind::Entity, t.head, lang) ||
          !kb.has_form(ElementKind::Relation, t.rel, lang) ||
          !kb.has_form(ElementKind::Entity, t.tail, lang)) {
        continue;
      }
      out[lang].push_back(surface(kb, ElementKind::Entity, t.head, lang) + " " +
                          surface(kb, ElementKind::Relation, t.rel, lang) + " " +
                          surface(kb, ElementKind::Entity, t.tail, lang));
    }
  }
  return out;
}

}  // namespace kiqa
