#include <map>
#include <set>

#include "doctest.h"
#include "kiqa/assembler.hpp"
#include "test_util.hpp"

using namespace kiqa;

namespace {

const LanguageTag en("en"), zh("zh");

KnowledgeBase durant_kb() {
  return KnowledgeBase(
      {{"Q1", {{en, "Kevin Durant"}, {zh, "凯文杜兰特"}}},
       {"Q2", {{en, "Basketball Player"}, {zh, "篮球运动员"}}},
       {"Q3", {{en, "Washington"}}}},
      {{"P1", {{en, "is a"}, {zh, "是"}}}, {"P2", {{en, "born in"}}}},
      {{"Q1", "P1", "Q2"}, {"Q1", "P2", "Q3"}, {"Q2", "P1", "Q2"}});
}

std::vector<std::string> texts(const std::vector<Piece>& pieces) {
  std::vector<std::string> out;
  for (const Piece& p : pieces) out.push_back(p.masked ? "[M]" : p.text);
  return out;
}

std::vector<std::string> targets(const MaskedSample& s) {
  std::vector<std::string> out;
  for (const auto& t : s.targets) out.push_back(t.text);
  return out;
}

using Strings = std::vector<std::string>;

}  // namespace

TEST_CASE("K1 english: tail-masked then head-masked") {
  auto kb = durant_kb();
  auto s = assemble_k1(kb, {"Q1", "P1", "Q2"}, en);
  REQUIRE(s.size() == 2);
  CHECK(s[0].kind == SampleKind::K1);
  CHECK(s[0].mask_side == MaskSide::Tail);
  CHECK(texts(s[0].pieces) == Strings{"Kevin Durant", "is a", "[M]"});
  CHECK(targets(s[0]) == Strings{"Basketball Player"});
  CHECK(s[1].mask_side == MaskSide::Head);
  CHECK(texts(s[1].pieces) == Strings{"[M]", "is a", "Basketball Player"});
  CHECK(targets(s[1]) == Strings{"Kevin Durant"});
  for (const auto& x : s) CHECK(check_invariants(x).empty());
}

TEST_CASE("K1 chinese and self-loop") {
  auto kb = durant_kb();
  auto s = assemble_k1(kb, {"Q1", "P1", "Q2"}, zh);
  CHECK(texts(s[0].pieces) == Strings{"凯文杜兰特", "是", "[M]"});
  CHECK(targets(s[0]) == Strings{"篮球运动员"});

  auto loop = assemble_k1(kb, {"Q2", "P1", "Q2"}, en);
  CHECK(targets(loop[0]) == targets(loop[1]));
  CHECK_THROWS_AS_KIND(assemble_k1(kb, {"Q1", "P2", "Q3"}, zh), ErrorKind::MissingForm);
}

TEST_CASE("K2 keeps visible pieces in lang_i and targets lang_j") {
  auto kb = durant_kb();
  auto s = assemble_k2(kb, {"Q1", "P1", "Q2"}, zh, en);
  REQUIRE(s.size() == 2);
  CHECK(s[0].kind == SampleKind::K2HeadSwap);
  CHECK(s[1].kind == SampleKind::K2TailSwap);
  CHECK(texts(s[1].pieces) == Strings{"凯文杜兰特", "是", "[M]"});
  CHECK(targets(s[1]) == Strings{"Basketball Player"});
  CHECK(s[1].pieces[2].lang == en);

  auto r = assemble_k2(kb, {"Q1", "P1", "Q2"}, en, zh);
  CHECK(texts(r[0].pieces) == Strings{"[M]", "is a", "Basketball Player"});
  CHECK(targets(r[0]) == Strings{"凯文杜兰特"});
  for (const auto& x : r) CHECK(check_invariants(x).empty());

  CHECK_THROWS_AS_KIND(assemble_k2(kb, {"Q1", "P1", "Q2"}, en, en), ErrorKind::SameLanguage);
}

TEST_CASE("K3 concatenates both renderings") {
  auto kb = durant_kb();
  auto s = assemble_k3(kb, {"Q1", "P1", "Q2"}, en, zh);
  REQUIRE(s.size() == 2);
  CHECK(s[1].mask_side == MaskSide::Tail);
  CHECK(texts(s[1].pieces) == Strings{"Kevin Durant", "is a", "[M]", "凯文杜兰特", "是", "[M]"});
  CHECK(targets(s[1]) == Strings{"Basketball Player", "篮球运动员"});
  CHECK(targets(s[0]) == Strings{"Kevin Durant", "凯文杜兰特"});
  CHECK(s[0].targets[0].piece == 0);
  CHECK(s[0].targets[1].piece == 3);
  for (const auto& x : s) CHECK(check_invariants(x).empty());
  CHECK_THROWS_AS_KIND(assemble_k3(kb, {"Q1", "P1", "Q2"}, zh, zh), ErrorKind::SameLanguage);
}

TEST_CASE("check_invariants flags broken samples") {
  auto kb = durant_kb();
  auto s = assemble_k1(kb, {"Q1", "P1", "Q2"}, en)[0];
  auto bad = s;
  bad.pieces[0].masked = true;
  CHECK_FALSE(check_invariants(bad).empty());
  bad = s;
  bad.targets.clear();
  CHECK_FALSE(check_invariants(bad).empty());
  bad = s;
  bad.pieces[1].lang = zh;
  CHECK_FALSE(check_invariants(bad).empty());
  bad = s;
  bad.pieces.pop_back();
  CHECK_FALSE(check_invariants(bad).empty());
}

TEST_CASE("unmask restores a K1 rendering") {
  auto kb = durant_kb();
  for (const auto& s : assemble_k1(kb, {"Q1", "P1", "Q2"}, en)) {
    auto pieces = unmask(s);
    CHECK(texts(pieces) == Strings{"Kevin Durant", "is a", "Basketball Player"});
  }
}

TEST_CASE("build_corpus weights, determinism and errors") {
  auto kb = durant_kb();
  auto only_k1 = build_corpus(kb, {en}, 3, {1, 0, 0}, 7);
  CHECK(only_k1.size() == 6);
  for (const auto& s : only_k1) CHECK(s.kind == SampleKind::K1);
  CHECK(build_corpus(kb, {en}, 3, {1, 0, 0}, 7) == only_k1);

  // Only the first and last triples are renderable in both languages.
  auto k2 = build_corpus(kb, {en, zh}, 2, {0, 1, 0}, 3);
  CHECK(k2.size() == 4);
  for (const auto& s : k2) {
    CHECK(s.lang_j.has_value());
    for (std::size_t i = 0; i < s.pieces.size(); ++i) {
      CHECK(s.pieces[i].lang == (s.pieces[i].masked ? *s.lang_j : s.lang_i));
    }
  }

  CHECK_THROWS_AS_KIND(build_corpus(kb, {en, zh}, 3, {1, 1, 1}, 1), ErrorKind::InsufficientTriples);
  CHECK_THROWS_AS_KIND(build_corpus(kb, {en}, 1, {0, 0, 0}, 1), ErrorKind::InvalidArgument);
  CHECK_THROWS_AS_KIND(build_corpus(kb, {en}, 1, {1, -1, 0}, 1), ErrorKind::InvalidArgument);
  CHECK_THROWS_AS_KIND(build_corpus(kb, {en}, 1, {0, 1, 0}, 1), ErrorKind::InvalidArgument);
}

TEST_CASE("corpus file round-trips and is byte-stable") {
  auto kb = durant_kb();
  auto corpus = build_corpus(kb, {en, zh}, 2, {1, 1, 1}, 11);
  TempDir dir;
  write_corpus(corpus, dir.path / "a.jsonl");
  CHECK(read_corpus(dir.path / "a.jsonl") == corpus);
  write_corpus(build_corpus(kb, {en, zh}, 2, {1, 1, 1}, 11), dir.path / "b.jsonl");
  CHECK(read_text(dir.path / "a.jsonl") == read_text(dir.path / "b.jsonl"));
  CHECK(read_text(dir.path / "a.jsonl").find("\"kind\"") != std::string::npos);
}
