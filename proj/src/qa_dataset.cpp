#include "kiqa/qa_dataset.hpp"

#include <fstream>

#include "json.hpp"
#include "kiqa/errors.hpp"

namespace kiqa {

using nlohmann::json;

namespace {

LanguageTag pick_lang(const json& qa, const json& paragraph, const char* key,
                      const std::optional<LanguageTag>& fallback, const std::string& id) {
  for (const json* scope : {&qa, &paragraph}) {
    auto it = scope->find(key);
    if (it != scope->end()) {
      const auto code = it->get<std::string>();
      if (!LanguageTag::is_valid(code)) {
        throw Error(ErrorKind::Parse, "qa " + id + ": invalid " + key + " '" + code + "'");
      }
      return LanguageTag(code);
    }
  }
  if (!fallback) {
    throw Error(ErrorKind::Parse, "qa " + id + ": no " + key + " and no default language");
  }
  return *fallback;
}

}  // namespace

std::vector<QARecord> load_qa_dataset(const std::filesystem::path& path,
                                      const std::optional<LanguageTag>& default_lang) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<QARecord> out;
  try {
    const json doc = json::parse(in);
    for (const json& article : doc.at("data")) {
      for (const json& paragraph : article.at("paragraphs")) {
        const auto context = paragraph.at("context").get<std::string>();
        for (const json& qa : paragraph.at("qas")) {
          QARecord r;
          r.id = qa.at("id").get<std::string>();
          r.question = qa.at("question").get<std::string>();
          r.context = context;
          r.context_lang = pick_lang(qa, paragraph, "context_lang", default_lang, r.id);
          r.question_lang = pick_lang(qa, paragraph, "question_lang", default_lang, r.id);
          for (const json& a : qa.at("answers")) {
            r.answers.push_back({a.at("text").get<std::string>(),
                                 a.at("answer_start").get<std::size_t>()});
          }
          if (r.answers.empty()) {
            throw Error(ErrorKind::Parse, "qa " + r.id + " has no gold answers");
          }
          out.push_back(std::move(r));
        }
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
  return out;
}

void save_qa_dataset(const std::vector<QARecord>& records, const std::filesystem::path& path) {
  json paragraphs = json::array();
  const std::string* last_context = nullptr;
  for (const QARecord& r : records) {
    if (last_context == nullptr || *last_context != r.context) {
      paragraphs.push_back({{"context", r.context}, {"qas", json::array()}});
      last_context = &r.context;
    }
    json answers = json::array();
    for (const QAAnswer& a : r.answers) {
      answers.push_back({{"text", a.text}, {"answer_start", a.answer_start}});
    }
    paragraphs.back()["qas"].push_back({{"id", r.id},
                                        {"question", r.question},
                                        {"answers", answers},
                                        {"context_lang", r.context_lang.code()},
                                        {"question_lang", r.question_lang.code()}});
  }
  json doc = {{"version", "1.0"},
              {"data", json::array({{{"title", path.stem().string()}, {"paragraphs", paragraphs}}})}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << doc.dump() << '\n';
}

}  // namespace kiqa
