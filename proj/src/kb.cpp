#include "kiqa/kb.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kiqa/errors.hpp"

namespace kiqa {

using nlohmann::json;

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  });
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

template <typename Element>
void check_element(const Element& e, std::string_view what) {
  if (e.id.empty()) {
    throw Error(ErrorKind::Parse, std::string(what) + " with empty id");
  }
  for (const auto& [lang, text] : e.forms) {
    if (blank(text)) {
      throw Error(ErrorKind::Parse, std::string(what) + " " + e.id + " has a blank form for '" +
                                        lang.code() + "'");
    }
  }
}

// Triple `i` failed validation; `lines` maps it back to the source file when known.
std::string triple_location(const std::vector<std::size_t>* lines, std::size_t i) {
  if (lines == nullptr) return "triple #" + std::to_string(i);
  return "line " + std::to_string((*lines)[i]);
}

}  // namespace

LanguageTag::LanguageTag(std::string code) : code_(std::move(code)) {
  if (!is_valid(code_)) {
    throw Error(ErrorKind::InvalidArgument, "invalid language tag '" + code_ + "'");
  }
}

bool LanguageTag::is_valid(std::string_view code) {
  if (code.empty() || code.size() > 16) return false;
  return std::all_of(code.begin(), code.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

namespace {

struct Validated {
  std::unordered_map<std::string, std::size_t> entity_index;
  std::unordered_map<std::string, std::size_t> relation_index;
  std::set<LanguageTag> languages;
};

Validated validate(const std::vector<Entity>& entities, const std::vector<Relation>& relations,
                   const std::vector<Triple>& triples,
                   const std::vector<std::size_t>* triple_lines) {
  Validated v;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    check_element(entities[i], "entity");
    if (!v.entity_index.emplace(entities[i].id, i).second) {
      throw Error(ErrorKind::DuplicateId, "duplicate entity id " + entities[i].id);
    }
    for (const auto& [lang, _] : entities[i].forms) v.languages.insert(lang);
  }
  for (std::size_t i = 0; i < relations.size(); ++i) {
    check_element(relations[i], "relation");
    if (!v.relation_index.emplace(relations[i].id, i).second) {
      throw Error(ErrorKind::DuplicateId, "duplicate relation id " + relations[i].id);
    }
    for (const auto& [lang, _] : relations[i].forms) v.languages.insert(lang);
  }
  std::set<Triple> seen;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const Triple& t = triples[i];
    for (const std::string* id : {&t.head, &t.tail}) {
      if (!v.entity_index.contains(*id)) {
        throw Error(ErrorKind::DanglingId,
                    "unknown entity id " + *id + " at " + triple_location(triple_lines, i));
      }
    }
    if (!v.relation_index.contains(t.rel)) {
      throw Error(ErrorKind::DanglingId,
                  "unknown relation id " + t.rel + " at " + triple_location(triple_lines, i));
    }
    if (!seen.insert(t).second) {
      throw Error(ErrorKind::DuplicateTriple, "duplicate triple (" + t.head + ", " + t.rel +
                                                  ", " + t.tail + ") at " +
                                                  triple_location(triple_lines, i));
    }
  }
  return v;
}

}  // namespace

KnowledgeBase::KnowledgeBase(std::vector<Entity> entities, std::vector<Relation> relations,
                             std::vector<Triple> triples)
    : entities_(std::move(entities)),
      relations_(std::move(relations)),
      triples_(std::move(triples)) {
  Validated v = validate(entities_, relations_, triples_, nullptr);
  entity_index_ = std::move(v.entity_index);
  relation_index_ = std::move(v.relation_index);
  languages_ = std::move(v.languages);
}

const Entity* KnowledgeBase::find_entity(std::string_view id) const {
  auto it = entity_index_.find(std::string(id));
  return it == entity_index_.end() ? nullptr : &entities_[it->second];
}

const Relation* KnowledgeBase::find_relation(std::string_view id) const {
  auto it = relation_index_.find(std::string(id));
  return it == relation_index_.end() ? nullptr : &relations_[it->second];
}

bool KnowledgeBase::has_form(ElementKind kind, std::string_view id,
                             const LanguageTag& lang) const {
  const FormMap* forms = nullptr;
  if (kind == ElementKind::Entity) {
    if (const Entity* e = find_entity(id)) forms = &e->forms;
  } else {
    if (const Relation* r = find_relation(id)) forms = &r->forms;
  }
  return forms != nullptr && forms->contains(lang);
}

namespace {

template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::Parse, where(path, lineno) + ": malformed record: " + e.what());
    }
    if (!record.is_object()) {
      throw Error(ErrorKind::Parse, where(path, lineno) + ": expected an object");
    }
    fn(record, lineno);
  }
}

std::string string_field(const json& record, const char* key, const std::filesystem::path& path,
                         std::size_t lineno) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_string()) {
    throw Error(ErrorKind::Parse,
                where(path, lineno) + ": missing or non-string field '" + key + "'");
  }
  return it->get<std::string>();
}

FormMap parse_forms(const json& record, const std::filesystem::path& path, std::size_t lineno) {
  auto it = record.find("forms");
  if (it == record.end() || !it->is_object()) {
    throw Error(ErrorKind::Parse, where(path, lineno) + ": missing object field 'forms'");
  }
  FormMap forms;
  for (const auto& [code, text] : it->items()) {
    if (!LanguageTag::is_valid(code)) {
      throw Error(ErrorKind::Parse, where(path, lineno) + ": invalid language tag '" + code + "'");
    }
    if (!text.is_string() || blank(text.get<std::string>())) {
      throw Error(ErrorKind::Parse,
                  where(path, lineno) + ": form for '" + code + "' must be a non-blank string");
    }
    forms.emplace(LanguageTag(code), text.get<std::string>());
  }
  return forms;
}

template <typename Element>
std::vector<Element> load_elements(const std::filesystem::path& path, std::string_view what) {
  std::vector<Element> out;
  std::unordered_map<std::string, std::size_t> first_line;
  for_each_record(path, [&](const json& record, std::size_t lineno) {
    Element e{string_field(record, "id", path, lineno), parse_forms(record, path, lineno)};
    auto [it, fresh] = first_line.emplace(e.id, lineno);
    if (!fresh) {
      throw Error(ErrorKind::DuplicateId, where(path, lineno) + ": duplicate " +
                                              std::string(what) + " id " + e.id +
                                              " (first at line " + std::to_string(it->second) +
                                              ")");
    }
    out.push_back(std::move(e));
  });
  return out;
}

template <typename Element>
void save_elements(const std::vector<Element>& elements, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const Element& e : elements) {
    json forms = json::object();
    for (const auto& [lang, text] : e.forms) forms[lang.code()] = text;
    out << json{{"id", e.id}, {"forms", forms}}.dump() << '\n';
  }
}

}  // namespace

KnowledgeBase load_kb(const std::filesystem::path& entities_path,
                      const std::filesystem::path& relations_path,
                      const std::filesystem::path& triples_path) {
  auto entities = load_elements<Entity>(entities_path, "entity");
  auto relations = load_elements<Relation>(relations_path, "relation");

  std::vector<Triple> triples;
  std::vector<std::size_t> lines;
  for_each_record(triples_path, [&](const json& record, std::size_t lineno) {
    triples.push_back({string_field(record, "h", triples_path, lineno),
                       string_field(record, "r", triples_path, lineno),
                       string_field(record, "t", triples_path, lineno)});
    lines.push_back(lineno);
  });

  try {
    validate(entities, relations, triples, &lines);
  } catch (const Error& e) {
    throw Error(e.kind(), triples_path.string() + ": " + e.what());
  }
  return KnowledgeBase(std::move(entities), std::move(relations), std::move(triples));
}

void save_kb(const KnowledgeBase& kb, const std::filesystem::path& entities_path,
             const std::filesystem::path& relations_path,
             const std::filesystem::path& triples_path) {
  save_elements(kb.entities(), entities_path);
  save_elements(kb.relations(), relations_path);
  std::ofstream out(triples_path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + triples_path.string());
  for (const Triple& t : kb.triples()) {
    out << json{{"h", t.head}, {"r", t.rel}, {"t", t.tail}}.dump() << '\n';
  }
}

const std::string& surface(const KnowledgeBase& kb, ElementKind kind, std::string_view id,
                           const LanguageTag& lang) {
  const FormMap* forms = nullptr;
  if (kind == ElementKind::Entity) {
    if (const Entity* e = kb.find_entity(id)) forms = &e->forms;
  } else {
    if (const Relation* r = kb.find_relation(id)) forms = &r->forms;
  }
  const char* what = kind == ElementKind::Entity ? "entity" : "relation";
  if (forms == nullptr) {
    throw Error(ErrorKind::DanglingId, std::string("unknown ") + what + " id " + std::string(id));
  }
  auto it = forms->find(lang);
  if (it == forms->end()) {
    throw Error(ErrorKind::MissingForm, std::string(what) + " " + std::string(id) +
                                            " has no form in '" + lang.code() + "'");
  }
  return it->second;
}

std::vector<Triple> triples_renderable(const KnowledgeBase& kb,
                                       const std::set<LanguageTag>& langs) {
  std::vector<Triple> out;
  for (const Triple& t : kb.triples()) {
    bool ok = std::all_of(langs.begin(), langs.end(), [&](const LanguageTag& lang) {
      return kb.has_form(ElementKind::Entity, t.head, lang) &&
             kb.has_form(ElementKind::Relation, t.rel, lang) &&
             kb.has_form(ElementKind::Entity, t.tail, lang);
    });
    if (ok) out.push_back(t);
  }
  return out;
}

}  // namespace kiqa
