#include "kiqa/assembler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "kiqa/errors.hpp"
#include "kiqa/rng.hpp"

namespace kiqa {

using nlohmann::json;

std::string to_string(SampleKind kind) {
  switch (kind) {
    case SampleKind::K1: return "K1";
    case SampleKind::K2HeadSwap: return "K2_HEAD_SWAP";
    case SampleKind::K2TailSwap: return "K2_TAIL_SWAP";
    case SampleKind::K3: return "K3";
  }
  return "?";
}

std::string to_string(MaskSide side) { return side == MaskSide::Head ? "HEAD" : "TAIL"; }

std::string to_string(PieceRole role) {
  switch (role) {
    case PieceRole::Head: return "HEAD";
    case PieceRole::Rel: return "REL";
    case PieceRole::Tail: return "TAIL";
    case PieceRole::Head2: return "HEAD2";
    case PieceRole::Rel2: return "REL2";
    case PieceRole::Tail2: return "TAIL2";
  }
  return "?";
}

SampleKind parse_sample_kind(const std::string& s) {
  for (auto k : {SampleKind::K1, SampleKind::K2HeadSwap, SampleKind::K2TailSwap, SampleKind::K3}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorKind::Parse, "unknown sample kind '" + s + "'");
}

MaskSide parse_mask_side(const std::string& s) {
  if (s == "HEAD") return MaskSide::Head;
  if (s == "TAIL") return MaskSide::Tail;
  throw Error(ErrorKind::Parse, "unknown mask side '" + s + "'");
}

PieceRole parse_piece_role(const std::string& s) {
  for (auto r : {PieceRole::Head, PieceRole::Rel, PieceRole::Tail, PieceRole::Head2,
                 PieceRole::Rel2, PieceRole::Tail2}) {
    if (to_string(r) == s) return r;
  }
  throw Error(ErrorKind::Parse, "unknown piece role '" + s + "'");
}

namespace {

bool is_head_role(PieceRole r) { return r == PieceRole::Head || r == PieceRole::Head2; }
bool is_tail_role(PieceRole r) { return r == PieceRole::Tail || r == PieceRole::Tail2; }

struct Rendering {
  const std::string& head;
  const std::string& rel;
  const std::string& tail;
};

Rendering render_in(const KnowledgeBase& kb, const Triple& t, const LanguageTag& lang) {
  return {surface(kb, ElementKind::Entity, t.head, lang),
          surface(kb, ElementKind::Relation, t.rel, lang),
          surface(kb, ElementKind::Entity, t.tail, lang)};
}

// Fills in targets from the masked pieces, in piece order.
MaskedSample finish(MaskedSample s) {
  for (std::size_t i = 0; i < s.pieces.size(); ++i) {
    if (s.pieces[i].masked) s.targets.push_back({i, s.pieces[i].text});
  }
  return s;
}

void require_distinct(const LanguageTag& i, const LanguageTag& j) {
  if (i == j) {
    throw Error(ErrorKind::SameLanguage,
                "cross-lingual sample needs two languages, got '" + i.code() + "' twice");
  }
}

}  // namespace

std::string check_invariants(const MaskedSample& s) {
  for (std::size_t i = 0; i < s.pieces.size(); ++i) {
    const Piece& p = s.pieces[i];
    bool should_mask = s.mask_side == MaskSide::Head ? is_head_role(p.role) : is_tail_role(p.role);
    if (p.masked != should_mask) return "piece " + std::to_string(i) + " has wrong mask flag";
  }
  std::vector<MaskTarget> expected;
  for (std::size_t i = 0; i < s.pieces.size(); ++i) {
    if (s.pieces[i].masked) expected.push_back({i, s.pieces[i].text});
  }
  if (s.targets != expected) return "targets do not match masked pieces";

  auto count_lang = [&](const LanguageTag& lang, std::size_t from, std::size_t to) {
    return static_cast<std::size_t>(std::count_if(
        s.pieces.begin() + static_cast<std::ptrdiff_t>(from),
        s.pieces.begin() + static_cast<std::ptrdiff_t>(to),
        [&](const Piece& p) { return p.lang == lang; }));
  };
  switch (s.kind) {
    case SampleKind::K1:
      if (s.pieces.size() != 3) return "K1 needs 3 pieces";
      if (count_lang(s.lang_i, 0, 3) != 3) return "K1 pieces must all be in lang_i";
      if (s.lang_j) return "K1 has no second language";
      break;
    case SampleKind::K2HeadSwap:
    case SampleKind::K2TailSwap: {
      if (s.pieces.size() != 3) return "K2 needs 3 pieces";
      if (!s.lang_j || *s.lang_j == s.lang_i) return "K2 needs a distinct lang_j";
      if (count_lang(*s.lang_j, 0, 3) != 1) return "K2 needs exactly one piece in lang_j";
      MaskSide expect = s.kind == SampleKind::K2HeadSwap ? MaskSide::Head : MaskSide::Tail;
      if (s.mask_side != expect) return "K2 swap side disagrees with mask side";
      for (const Piece& p : s.pieces) {
        if ((p.lang == *s.lang_j) != p.masked) return "K2 lang_j piece must be the masked one";
      }
      break;
    }
    case SampleKind::K3:
      if (s.pieces.size() != 6) return "K3 needs 6 pieces";
      if (!s.lang_j || *s.lang_j == s.lang_i) return "K3 needs a distinct lang_j";
      if (count_lang(s.lang_i, 0, 3) != 3 || count_lang(*s.lang_j, 3, 6) != 3) {
        return "K3 blocks must be lang_i then lang_j";
      }
      break;
  }
  return {};
}

std::vector<MaskedSample> assemble_k1(const KnowledgeBase& kb, const Triple& t,
                                      const LanguageTag& lang_i) {
  Rendering r = render_in(kb, t, lang_i);
  auto make = [&](MaskSide side) {
    MaskedSample s{SampleKind::K1, side,
                   {{PieceRole::Head, lang_i, r.head, side == MaskSide::Head},
                    {PieceRole::Rel, lang_i, r.rel, false},
                    {PieceRole::Tail, lang_i, r.tail, side == MaskSide::Tail}},
                   {}, t, lang_i, std::nullopt};
    return finish(std::move(s));
  };
  return {make(MaskSide::Tail), make(MaskSide::Head)};
}

std::vector<MaskedSample> assemble_k2(const KnowledgeBase& kb, const Triple& t,
                                      const LanguageTag& lang_i, const LanguageTag& lang_j) {
  require_distinct(lang_i, lang_j);
  const std::string& head_i = surface(kb, ElementKind::Entity, t.head, lang_i);
  const std::string& rel_i = surface(kb, ElementKind::Relation, t.rel, lang_i);
  const std::string& tail_i = surface(kb, ElementKind::Entity, t.tail, lang_i);
  const std::string& head_j = surface(kb, ElementKind::Entity, t.head, lang_j);
  const std::string& tail_j = surface(kb, ElementKind::Entity, t.tail, lang_j);

  MaskedSample head_masked{SampleKind::K2HeadSwap, MaskSide::Head,
                           {{PieceRole::Head, lang_j, head_j, true},
                            {PieceRole::Rel, lang_i, rel_i, false},
                            {PieceRole::Tail, lang_i, tail_i, false}},
                           {}, t, lang_i, lang_j};
  MaskedSample tail_masked{SampleKind::K2TailSwap, MaskSide::Tail,
                           {{PieceRole::Head, lang_i, head_i, false},
                            {PieceRole::Rel, lang_i, rel_i, false},
                            {PieceRole::Tail, lang_j, tail_j, true}},
                           {}, t, lang_i, lang_j};
  return {finish(std::move(head_masked)), finish(std::move(tail_masked))};
}

std::vector<MaskedSample> assemble_k3(const KnowledgeBase& kb, const Triple& t,
                                      const LanguageTag& lang_i, const LanguageTag& lang_j) {
  require_distinct(lang_i, lang_j);
  Rendering ri = render_in(kb, t, lang_i);
  Rendering rj = render_in(kb, t, lang_j);
  auto make = [&](MaskSide side) {
    bool h = side == MaskSide::Head;
    MaskedSample s{SampleKind::K3, side,
                   {{PieceRole::Head, lang_i, ri.head, h},
                    {PieceRole::Rel, lang_i, ri.rel, false},
                    {PieceRole::Tail, lang_i, ri.tail, !h},
                    {PieceRole::Head2, lang_j, rj.head, h},
                    {PieceRole::Rel2, lang_j, rj.rel, false},
                    {PieceRole::Tail2, lang_j, rj.tail, !h}},
                   {}, t, lang_i, lang_j};
    return finish(std::move(s));
  };
  return {make(MaskSide::Head), make(MaskSide::Tail)};
}

std::vector<MaskedSample> build_corpus(const KnowledgeBase& kb, const std::set<LanguageTag>& langs,
                                       std::size_t n_triples, const KindWeights& weights,
                                       std::uint64_t seed) {
  if (weights.k1 < 0 || weights.k2 < 0 || weights.k3 < 0) {
    throw Error(ErrorKind::InvalidArgument, "kind weights must be non-negative");
  }
  const double total = weights.k1 + weights.k2 + weights.k3;
  if (!(total > 0)) throw Error(ErrorKind::InvalidArgument, "kind weights are all zero");
  if (langs.empty()) throw Error(ErrorKind::InvalidArgument, "no languages given");
  if (langs.size() < 2 && weights.k2 + weights.k3 > 0) {
    throw Error(ErrorKind::InvalidArgument, "cross-lingual kinds need at least two languages");
  }

  std::vector<Triple> pool = triples_renderable(kb, langs);
  if (n_triples > pool.size()) {
    throw Error(ErrorKind::InsufficientTriples,
                "requested " + std::to_string(n_triples) + " triples but only " +
                    std::to_string(pool.size()) + " are renderable in all languages");
  }

  const std::vector<LanguageTag> lang_list(langs.begin(), langs.end());
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < lang_list.size(); ++a) {
    for (std::size_t b = 0; b < lang_list.size(); ++b) {
      if (a != b) pairs.emplace_back(a, b);
    }
  }

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng selector = make_rng(seed, 0);
  std::shuffle(order.begin(), order.end(), selector);
  order.resize(n_triples);

  // Kind quotas by largest remainder, then shuffled over the triples, so
  // the realized proportions match the weights up to rounding.
  const std::array<double, 3> w = {weights.k1, weights.k2, weights.k3};
  std::array<std::size_t, 3> quota{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = w[i] / total * static_cast<double>(n_triples);
    quota[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(quota[i]);
    assigned += quota[i];
  }
  while (assigned < n_triples) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (remainder[i] > remainder[best]) best = i;
    }
    ++quota[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  std::vector<std::size_t> kinds;
  kinds.reserve(n_triples);
  for (std::size_t i = 0; i < 3; ++i) kinds.insert(kinds.end(), quota[i], i);
  Rng kind_rng = make_rng(seed, 2);
  std::shuffle(kinds.begin(), kinds.end(), kind_rng);

  std::vector<MaskedSample> corpus;
  corpus.reserve(2 * n_triples);
  for (std::size_t k = 0; k < n_triples; ++k) {
    const Triple& t = pool[order[k]];
    Rng rng = make_rng(seed, 1000 + k);
    std::vector<MaskedSample> pair;
    if (kinds[k] == 0) {
      std::uniform_int_distribution<std::size_t> pick(0, lang_list.size() - 1);
      pair = assemble_k1(kb, t, lang_list[pick(rng)]);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
      auto [a, b] = pairs[pick(rng)];
      pair = kinds[k] == 1 ? assemble_k2(kb, t, lang_list[a], lang_list[b])
                           : assemble_k3(kb, t, lang_list[a], lang_list[b]);
    }
    for (auto& s : pair) corpus.push_back(std::move(s));
  }

  Rng shuffler = make_rng(seed, 1);
  std::shuffle(corpus.begin(), corpus.end(), shuffler);
  return corpus;
}

std::vector<Piece> unmask(const MaskedSample& sample) {
  std::vector<Piece> out = sample.pieces;
  for (const MaskTarget& target : sample.targets) {
    out[target.piece].text = target.text;
    out[target.piece].masked = false;
  }
  return out;
}

void write_corpus(const std::vector<MaskedSample>& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const MaskedSample& s : corpus) {
    json pieces = json::array();
    for (const Piece& p : s.pieces) {
      pieces.push_back({{"role", to_string(p.role)},
                        {"lang", p.lang.code()},
                        {"text", p.text},
                        {"masked", p.masked}});
    }
    json targets = json::array();
    for (const MaskTarget& t : s.targets) targets.push_back(t.text);
    json langs = json::array({s.lang_i.code()});
    if (s.lang_j) langs.push_back(s.lang_j->code());
    json record = {{"kind", to_string(s.kind)},
                   {"mask_side", to_string(s.mask_side)},
                   {"pieces", pieces},
                   {"targets", targets},
                   {"triple", {{"h", s.source_triple.head},
                               {"r", s.source_triple.rel},
                               {"t", s.source_triple.tail}}},
                   {"langs", langs}};
    out << record.dump() << '\n';
  }
}

std::vector<MaskedSample> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<MaskedSample> corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json r = json::parse(line);
      MaskedSample s;
      s.kind = parse_sample_kind(r.at("kind").get<std::string>());
      s.mask_side = parse_mask_side(r.at("mask_side").get<std::string>());
      for (const json& p : r.at("pieces")) {
        s.pieces.push_back({parse_piece_role(p.at("role").get<std::string>()),
                            LanguageTag(p.at("lang").get<std::string>()),
                            p.at("text").get<std::string>(), p.at("masked").get<bool>()});
      }
      const json& targets = r.at("targets");
      std::size_t next = 0;
      for (std::size_t i = 0; i < s.pieces.size(); ++i) {
        if (!s.pieces[i].masked) continue;
        if (next >= targets.size()) throw Error(ErrorKind::Parse, "fewer targets than masks");
        s.targets.push_back({i, targets[next++].get<std::string>()});
      }
      if (next != targets.size()) throw Error(ErrorKind::Parse, "more targets than masks");
      const json& t = r.at("triple");
      s.source_triple = {t.at("h").get<std::string>(), t.at("r").get<std::string>(),
                         t.at("t").get<std::string>()};
      const json& langs = r.at("langs");
      s.lang_i = LanguageTag(langs.at(0).get<std::string>());
      if (langs.size() > 1) s.lang_j = LanguageTag(langs.at(1).get<std::string>());
      if (std::string why = check_invariants(s); !why.empty()) {
        throw Error(ErrorKind::Parse, why);
      }
      corpus.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorKind::Parse,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace kiqa
