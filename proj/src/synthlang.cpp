#include "kiqa/synthlang.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "kiqa/errors.hpp"
#include "kiqa/rng.hpp"

namespace kiqa {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += words[i];
  }
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidArgument, m); };
  if (n_entities == 0 || n_relations == 0 || n_triples == 0 || n_qa_per_lang_pair == 0 ||
      n_qa_train == 0) {
    fail("synthetic counts must be positive");
  }
  if (languages.size() < 2) fail("synthetic setup needs at least two languages");
  if (std::set<LanguageTag>(languages.begin(), languages.end()).size() != languages.size()) {
    fail("synthetic languages must be distinct");
  }
}

std::string Lexicon::translate(std::string_view base_text) const {
  std::vector<std::string> words = split_words(base_text);
  for (auto& w : words) {
    if (auto it = mapping.find(w); it != mapping.end()) w = it->second;
  }
  return join_words(words);
}

std::vector<std::string> gen_base_words(std::uint64_t seed, std::size_t count,
                                        const std::set<std::string>& exclude) {
  Rng rng = make_rng(seed, 0xBA5E);
  std::uniform_int_distribution<std::size_t> syllables(2, 3);
  std::uniform_int_distribution<std::size_t> cons(0, kConsonants.size() - 1);
  std::uniform_int_distribution<std::size_t> vow(0, kVowels.size() - 1);
  std::set<std::string> seen = exclude;
  std::vector<std::string> out;
  out.reserve(count);
  while (out.size() < count) {
    std::string w;
    const std::size_t n = syllables(rng);
    for (std::size_t s = 0; s < n; ++s) {
      w.push_back(kConsonants[cons(rng)]);
      w.push_back(kVowels[vow(rng)]);
    }
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

Lexicon gen_language(std::uint64_t seed, const LanguageTag& lang,
                     const std::vector<std::string>& base_lexicon, bool pivot) {
  const std::set<std::string> base(base_lexicon.begin(), base_lexicon.end());
  if (base.size() != base_lexicon.size()) {
    throw Error(ErrorKind::InvalidArgument, "base lexicon tokens must be unique");
  }
  Lexicon lex{lang, {}};
  if (pivot) {
    for (const auto& b : base_lexicon) lex.mapping.emplace(b, b);
    return lex;
  }

  auto permutation = [&](std::uint64_t salt) {
    Rng rng = make_rng(mix_seed(seed, fnv1a(lang.code())), salt);
    std::string c(kConsonants), v(kVowels);
    std::shuffle(c.begin(), c.end(), rng);
    std::shuffle(v.begin(), v.end(), rng);
    return std::make_pair(c, v);
  };
  auto respell = [](const std::string& word, const std::pair<std::string, std::string>& perm) {
    std::string out = word;
    for (char& ch : out) {
      if (auto p = kConsonants.find(ch); p != std::string_view::npos) {
        ch = perm.first[p];
      } else if (auto q = kVowels.find(ch); q != std::string_view::npos) {
        ch = perm.second[q];
      }
    }
    return out;
  };

  constexpr std::uint64_t kMaxSalt = 64;
  std::vector<std::pair<std::string, std::string>> perms;
  std::set<std::string> used;
  for (const auto& b : base_lexicon) {
    std::string surface;
    for (std::uint64_t salt = 0;; ++salt) {
      if (salt == kMaxSalt) {
        throw Error(ErrorKind::Collision, "cannot find a collision-free spelling for '" + b + "'");
      }
      if (perms.size() <= salt) perms.push_back(permutation(salt));
      surface = respell(b, perms[salt]);
      if (!base.contains(surface) && !used.contains(surface)) break;
    }
    used.insert(surface);
    lex.mapping.emplace(b, std::move(surface));
  }
  return lex;
}

SynthWorld gen_kb(const SynthSpec& spec) {
  spec.validate();
  const std::size_t ne = spec.n_entities, nr = spec.n_relations;
  if (static_cast<double>(spec.n_triples) >
      static_cast<double>(ne) * static_cast<double>(ne) * static_cast<double>(nr)) {
    throw Error(ErrorKind::Infeasible, "cannot draw " + std::to_string(spec.n_triples) +
                                           " distinct triples from " + std::to_string(ne) +
                                           " entities and " + std::to_string(nr) + " relations");
  }

  Rng rng = make_rng(spec.seed, 0x4B42);
  std::bernoulli_distribution two_words(0.5);
  std::vector<std::size_t> name_len(ne);
  std::size_t entity_words = 0;
  for (auto& n : name_len) {
    n = two_words(rng) ? 2 : 1;
    entity_words += n;
  }
  SynthWorld world;
  world.base_lexicon = gen_base_words(spec.seed, entity_words + nr);
  const auto& words = world.base_lexicon;

  for (std::size_t i = 0; i < spec.languages.size(); ++i) {
    world.lexicons.emplace(spec.languages[i],
                           gen_language(spec.seed, spec.languages[i], words, i == 0));
  }

  auto forms_for = [&](const std::string& base_name) {
    FormMap forms;
    for (const auto& [lang, lex] : world.lexicons) forms.emplace(lang, lex.translate(base_name));
    return forms;
  };

  std::vector<Entity> entities;
  std::size_t w = 0;
  for (std::size_t i = 0; i < ne; ++i) {
    std::vector<std::string> name(words.begin() + static_cast<std::ptrdiff_t>(w),
                                  words.begin() + static_cast<std::ptrdiff_t>(w + name_len[i]));
    w += name_len[i];
    entities.push_back({"Q" + std::to_string(i + 1), forms_for(join_words(name))});
  }
  std::vector<Relation> relations;
  for (std::size_t i = 0; i < nr; ++i) {
    relations.push_back({"P" + std::to_string(i + 1), forms_for(words[w++])});
  }

  // Distinct (head, rel) pairs while that is possible, so each question has
  // one answer in the KB; otherwise only distinct triples.
  const bool functional = static_cast<double>(spec.n_triples) <= static_cast<double>(ne * nr);
  std::uniform_int_distribution<std::size_t> pick_e(0, ne - 1), pick_r(0, nr - 1);
  std::set<std::pair<std::size_t, std::size_t>> used_pairs;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> used_triples;
  std::vector<Triple> triples;
  while (triples.size() < spec.n_triples) {
    const std::size_t h = pick_e(rng), r = pick_r(rng), t = pick_e(rng);
    if (functional && (h == t || used_pairs.contains({h, r}))) continue;
    if (!used_triples.insert({h, r, t}).second) continue;
    used_pairs.insert({h, r});
    triples.push_back({entities[h].id, relations[r].id, entities[t].id});
  }

  world.kb = KnowledgeBase(std::move(entities), std::move(relations), std::move(triples));
  return world;
}

namespace {

std::string sentence(const KnowledgeBase& kb, const Triple& t, const LanguageTag& lang) {
  return surface(kb, ElementKind::Entity, t.head, lang) + " " +
         surface(kb, ElementKind::Relation, t.rel, lang) + " " +
         surface(kb, ElementKind::Entity, t.tail, lang);
}

struct Scenario {
  const Triple* target;
  std::vector<const Triple*> facts;  // includes the target
  std::size_t target_slot;
};

QARecord render_scenario(const KnowledgeBase& kb, const Scenario& sc, const LanguageTag& c,
                         const LanguageTag& q, std::string id) {
  QARecord r;
  r.id = std::move(id);
  r.context_lang = c;
  r.question_lang = q;
  std::size_t answer_start = 0;
  for (std::size_t i = 0; i < sc.facts.size(); ++i) {
    if (i > 0) r.context += " ";
    if (i == sc.target_slot) {
      const std::string prefix = surface(kb, ElementKind::Entity, sc.target->head, c) + " " +
                                 surface(kb, ElementKind::Relation, sc.target->rel, c) + " ";
      answer_start = decode_utf8(r.context).size() + decode_utf8(prefix).size();
    }
    r.context += sentence(kb, *sc.facts[i], c) + ".";
  }
  r.question = surface(kb, ElementKind::Entity, sc.target->head, q) + " " +
               surface(kb, ElementKind::Relation, sc.target->rel, q) + " ?";
  QAAnswer answer{surface(kb, ElementKind::Entity, sc.target->tail, c), answer_start};
  const std::size_t len = decode_utf8(answer.text).size();
  if (slice_code_points(r.context, answer_start, answer_start + len) != answer.text) {
    throw Error(ErrorKind::Infeasible, "internal: answer offset does not match context");
  }
  r.answers.push_back(std::move(answer));
  return r;
}

}  // namespace

SynthQA gen_qa(const SynthSpec& spec, const KnowledgeBase& kb) {
  spec.validate();
  const auto& triples = kb.triples();
  const std::size_t needed = spec.n_qa_train + spec.n_qa_per_lang_pair;
  if (needed > triples.size()) {
    throw Error(ErrorKind::Infeasible, "need " + std::to_string(needed) +
                                           " target triples but the KB has " +
                                           std::to_string(triples.size()));
  }
  Rng rng = make_rng(spec.seed, 0x0A0A);
  std::vector<std::size_t> order(triples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::uniform_int_distribution<std::size_t> pick(0, triples.size() - 1);
  auto make_scenario = [&](const Triple& target) {
    Scenario sc{&target, {}, 0};
    std::set<std::string> heads{target.head}, rels{target.rel};
    std::size_t attempts = 0;
    while (sc.facts.size() < spec.n_distractors) {
      if (++attempts > 100000) {
        throw Error(ErrorKind::Infeasible, "cannot find enough distractor facts");
      }
      const Triple& d = triples[pick(rng)];
      // Target (head, rel) must occur once and the answer entity only as the answer.
      if (heads.contains(d.head) || rels.contains(d.rel)) continue;
      if (d.head == target.tail || d.tail == target.tail || d.tail == target.head) continue;
      if (std::any_of(sc.facts.begin(), sc.facts.end(),
                      [&](const Triple* f) { return f->tail == d.tail || f->head == d.tail; })) {
        continue;
      }
      heads.insert(d.head);
      rels.insert(d.rel);
      sc.facts.push_back(&d);
    }
    std::uniform_int_distribution<std::size_t> slot(0, sc.facts.size());
    sc.target_slot = slot(rng);
    sc.facts.insert(sc.facts.begin() + static_cast<std::ptrdiff_t>(sc.target_slot), &target);
    return sc;
  };

  SynthQA out;
  const LanguageTag& pivot = spec.pivot();
  for (std::size_t k = 0; k < spec.n_qa_train; ++k) {
    Scenario sc = make_scenario(triples[order[k]]);
    out.train.push_back(render_scenario(kb, sc, pivot, pivot, "train-" + std::to_string(k)));
  }
  for (std::size_t k = 0; k < spec.n_qa_per_lang_pair; ++k) {
    Scenario sc = make_scenario(triples[order[spec.n_qa_train + k]]);
    for (const auto& c : spec.languages) {
      for (const auto& q : spec.languages) {
        out.test[{c, q}].push_back(render_scenario(
            kb, sc, c, q, "test-" + std::to_string(k) + "-" + c.code() + "-" + q.code()));
      }
    }
  }
  return out;
}

std::filesystem::path test_file_name(const LanguageTag& context, const LanguageTag& question) {
  return "test-context-" + context.code() + "-question-" + question.code() + ".json";
}

SynthFiles write_synthetic(const SynthSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SynthWorld world = gen_kb(spec);
  SynthQA qa = gen_qa(spec, world.kb);

  SynthFiles files;
  files.entities = dir / "entities.jsonl";
  files.relations = dir / "relations.jsonl";
  files.triples = dir / "triples.jsonl";
  save_kb(world.kb, files.entities, files.relations, files.triples);
  files.train = dir / "train.json";
  save_qa_dataset(qa.train, files.train);
  for (const auto& [pair, records] : qa.test) {
    files.test[pair] = dir / test_file_name(pair.first, pair.second);
    save_qa_dataset(records, files.test[pair]);
  }
  for (const auto& [lang, lex] : world.lexicons) {
    std::ofstream out(dir / ("lexicon-" + lang.code() + ".tsv"), std::ios::binary);
    for (const auto& b : world.base_lexicon) out << b << '\t' << lex.mapping.at(b) << '\n';
  }

  nlohmann::json langs = nlohmann::json::array();
  for (const auto& l : spec.languages) langs.push_back(l.code());
  nlohmann::json manifest = {{"n_entities", spec.n_entities},
                             {"n_relations", spec.n_relations},
                             {"n_triples", spec.n_triples},
                             {"languages", langs},
                             {"pivot", spec.pivot().code()},
                             {"n_qa_per_lang_pair", spec.n_qa_per_lang_pair},
                             {"n_qa_train", spec.n_qa_train},
                             {"n_distractors", spec.n_distractors},
                             {"seed", spec.seed}};
  files.manifest = dir / "manifest.json";
  std::ofstream out(files.manifest, std::ios::binary);
  out << manifest.dump(2) << '\n';
  return files;
}

}  // namespace kiqa
