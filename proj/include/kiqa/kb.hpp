#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kiqa {

// Short lowercase language identifier such as "en", "zh" or "syn0".
class LanguageTag {
 public:
  LanguageTag() = default;
  explicit LanguageTag(std::string code);

  const std::string& code() const noexcept { return code_; }
  static bool is_valid(std::string_view code);

  auto operator<=>(const LanguageTag&) const = default;

 private:
  std::string code_;
};

using FormMap = std::map<LanguageTag, std::string>;

struct Entity {
  std::string id;
  FormMap forms;
  bool operator==(const Entity&) const = default;
};

struct Relation {
  std::string id;
  FormMap forms;
  bool operator==(const Relation&) const = default;
};

struct Triple {
  std::string head;
  std::string rel;
  std::string tail;
  auto operator<=>(const Triple&) const = default;
};

enum class ElementKind { Entity, Relation };

// Immutable after construction; safe to share read-only between threads.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  // Validates every invariant; throws kiqa::Error on violation.
  KnowledgeBase(std::vector<Entity> entities, std::vector<Relation> relations,
                std::vector<Triple> triples);

  const std::vector<Entity>& entities() const noexcept { return entities_; }
  const std::vector<Relation>& relations() const noexcept { return relations_; }
  const std::vector<Triple>& triples() const noexcept { return triples_; }
  const std::set<LanguageTag>& languages() const noexcept { return languages_; }

  const Entity* find_entity(std::string_view id) const;
  const Relation* find_relation(std::string_view id) const;

  bool has_form(ElementKind kind, std::string_view id, const LanguageTag& lang) const;

  bool operator==(const KnowledgeBase& other) const {
    return entities_ == other.entities_ && relations_ == other.relations_ &&
           triples_ == other.triples_;
  }

 private:
  std::vector<Entity> entities_;
  std::vector<Relation> relations_;
  std::vector<Triple> triples_;
  std::set<LanguageTag> languages_;
  std::unordered_map<std::string, std::size_t> entity_index_;
  std::unordered_map<std::string, std::size_t> relation_index_;
};

KnowledgeBase load_kb(const std::filesystem::path& entities_path,
                      const std::filesystem::path& relations_path,
                      const std::filesystem::path& triples_path);

void save_kb(const KnowledgeBase& kb, const std::filesystem::path& entities_path,
             const std::filesystem::path& relations_path,
             const std::filesystem::path& triples_path);

// Surface text of an entity or relation in `lang`. Throws MissingForm.
const std::string& surface(const KnowledgeBase& kb, ElementKind kind, std::string_view id,
                           const LanguageTag& lang);

// Triples whose three elements all have a form in every language of `langs`,
// in file order.
std::vector<Triple> triples_renderable(const KnowledgeBase& kb,
                                       const std::set<LanguageTag>& langs);

}  // namespace kiqa
