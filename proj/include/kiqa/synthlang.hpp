#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kiqa/evaluation.hpp"
#include "kiqa/kb.hpp"
#include "kiqa/qa_dataset.hpp"

namespace kiqa {

// Token-level cipher of the shared base lexicon for one language.
struct Lexicon {
  LanguageTag lang;
  std::map<std::string, std::string> mapping;  // base token -> surface token

  // Maps each whitespace-separated base token; unknown tokens pass through.
  std::string translate(std::string_view base_text) const;
};

struct SynthSpec {
  std::size_t n_entities = 200;
  std::size_t n_relations = 20;
  std::size_t n_triples = 1000;
  std::vector<LanguageTag> languages{LanguageTag("syn0"), LanguageTag("syn1")};
  std::size_t n_qa_per_lang_pair = 200;
  std::size_t n_qa_train = 400;
  std::size_t n_distractors = 4;
  std::uint64_t seed = 1;

  const LanguageTag& pivot() const { return languages.front(); }
  void validate() const;
};

// Pseudo-words built from consonant-vowel syllables, unique, seeded.
std::vector<std::string> gen_base_words(std::uint64_t seed, std::size_t count,
                                        const std::set<std::string>& exclude = {});

// The pivot language keeps the base spelling. Other languages re-spell each
// token through a seeded consonant/vowel permutation; a token whose
// re-spelling collides with a base token or an earlier surface is redrawn
// with a salted permutation.
Lexicon gen_language(std::uint64_t seed, const LanguageTag& lang,
                     const std::vector<std::string>& base_lexicon, bool pivot);

struct SynthWorld {
  KnowledgeBase kb;
  std::map<LanguageTag, Lexicon> lexicons;
  std::vector<std::string> base_lexicon;
};

SynthWorld gen_kb(const SynthSpec& spec);

struct SynthQA {
  std::vector<QARecord> train;                     // pivot context, pivot question
  std::map<LangPair, std::vector<QARecord>> test;  // every ordered (context, question) pair
};

SynthQA gen_qa(const SynthSpec& spec, const KnowledgeBase& kb);

struct SynthFiles {
  std::filesystem::path entities, relations, triples, train;
  std::map<LangPair, std::filesystem::path> test;
  std::filesystem::path manifest;
};

std::filesystem::path test_file_name(const LanguageTag& context, const LanguageTag& question);

// Writes the KB files, the QA splits, the lexicons and a manifest.
SynthFiles write_synthetic(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace kiqa
