#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "kiqa/errors.hpp"
#include "kiqa/kb.hpp"
#include "test_util.hpp"

using namespace kiqa;

namespace {

const char* kEntities =
    "{\"id\":\"Q1\",\"forms\":{\"en\":\"Kevin Durant\",\"zh\":\"凯文杜兰特\"}}\n"
    "{\"id\":\"Q2\",\"forms\":{\"en\":\"Basketball Player\",\"zh\":\"篮球运动员\"}}\n";
const char* kRelations = "{\"id\":\"P1\",\"forms\":{\"en\":\"is a\",\"zh\":\"是\"}}\n";
const char* kTriples = "{\"h\":\"Q1\",\"r\":\"P1\",\"t\":\"Q2\"}\n";

struct KbFiles {
  TempDir dir;
  std::filesystem::path e, r, t;
  KbFiles(const std::string& ents, const std::string& rels, const std::string& trips)
      : e(dir.path / "e.jsonl"), r(dir.path / "r.jsonl"), t(dir.path / "t.jsonl") {
    write_text(e, ents);
    write_text(r, rels);
    write_text(t, trips);
  }
  KnowledgeBase load() const { return load_kb(e, r, t); }
};

ErrorKind kind_of(const KbFiles& f, std::string* message = nullptr) {
  try {
    f.load();
  } catch (const Error& err) {
    if (message) *message = err.what();
    return err.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("durant example loads with two entities, one relation, one triple") {
  KbFiles f(kEntities, kRelations, kTriples);
  KnowledgeBase kb = f.load();
  CHECK(kb.entities().size() == 2);
  CHECK(kb.relations().size() == 1);
  CHECK(kb.triples().size() == 1);
  CHECK(kb.languages() == std::set<LanguageTag>{LanguageTag("en"), LanguageTag("zh")});
  CHECK(surface(kb, ElementKind::Entity, "Q2", LanguageTag("en")) == "Basketball Player");
  CHECK(surface(kb, ElementKind::Entity, "Q2", LanguageTag("zh")) == "篮球运动员");
}

TEST_CASE("missing form and unknown ids") {
  KbFiles f(kEntities, kRelations, kTriples);
  KnowledgeBase kb = f.load();
  CHECK_THROWS_AS_KIND(surface(kb, ElementKind::Entity, "Q2", LanguageTag("de")),
                       ErrorKind::MissingForm);
  CHECK_THROWS_AS_KIND(surface(kb, ElementKind::Relation, "P9", LanguageTag("en")),
                       ErrorKind::DanglingId);
}

TEST_CASE("empty triples file is valid") {
  KbFiles f(kEntities, kRelations, "");
  CHECK(f.load().triples().empty());
}

TEST_CASE("dangling id is named with its line") {
  KbFiles f(kEntities, kRelations,
            std::string(kTriples) + "{\"h\":\"Q99\",\"r\":\"P1\",\"t\":\"Q2\"}\n");
  std::string msg;
  CHECK(kind_of(f, &msg) == ErrorKind::DanglingId);
  CHECK(msg.find("Q99") != std::string::npos);
  CHECK(msg.find("line 2") != std::string::npos);
}

TEST_CASE("duplicate triple, duplicate id and malformed line are rejected") {
  CHECK(kind_of(KbFiles(kEntities, kRelations, std::string(kTriples) + kTriples)) ==
        ErrorKind::DuplicateTriple);
  CHECK(kind_of(KbFiles(std::string(kEntities) + "{\"id\":\"Q1\",\"forms\":{\"en\":\"x\"}}\n",
                        kRelations, kTriples)) == ErrorKind::DuplicateId);
  std::string msg;
  CHECK(kind_of(KbFiles(kEntities, "{\"id\":\"P1\",\n", ""), &msg) == ErrorKind::Parse);
  CHECK(msg.find("line 1") != std::string::npos);
  CHECK(kind_of(KbFiles("{\"id\":\"Q1\",\"forms\":{\"en\":\"   \"}}\n", kRelations, "")) ==
        ErrorKind::Parse);
  CHECK(kind_of(KbFiles("{\"id\":\"Q1\",\"forms\":{\"EN\":\"x\"}}\n", kRelations, "")) ==
        ErrorKind::Parse);
}

TEST_CASE("language tags") {
  CHECK(LanguageTag::is_valid("en"));
  CHECK(LanguageTag::is_valid("syn0"));
  CHECK(LanguageTag::is_valid("zh-hans"));
  CHECK_FALSE(LanguageTag::is_valid(""));
  CHECK_FALSE(LanguageTag::is_valid("EN"));
  CHECK_FALSE(LanguageTag::is_valid("abcdefghijklmnopq"));
  CHECK_THROWS(LanguageTag("x y"));
}

TEST_CASE("triples_renderable filters by language coverage") {
  const std::string ents = std::string(kEntities) +
                           "{\"id\":\"Q3\",\"forms\":{\"zh\":\"金州勇士\"}}\n";
  KbFiles f(ents, kRelations, std::string(kTriples) + "{\"h\":\"Q1\",\"r\":\"P1\",\"t\":\"Q3\"}\n");
  KnowledgeBase kb = f.load();
  CHECK(triples_renderable(kb, {LanguageTag("en"), LanguageTag("zh")}).size() == 1);
  CHECK(triples_renderable(kb, {LanguageTag("zh")}).size() == 2);
  CHECK(triples_renderable(kb, {}).size() == 2);

  for (const Triple& t : triples_renderable(kb, {LanguageTag("en")})) {
    CHECK_NOTHROW(surface(kb, ElementKind::Entity, t.head, LanguageTag("en")));
    CHECK_NOTHROW(surface(kb, ElementKind::Relation, t.rel, LanguageTag("en")));
    CHECK_NOTHROW(surface(kb, ElementKind::Entity, t.tail, LanguageTag("en")));
  }
}

TEST_CASE("save then load round-trips bit-exactly") {
  KbFiles f(kEntities, kRelations, kTriples);
  KnowledgeBase kb = f.load();
  TempDir out;
  save_kb(kb, out.path / "e", out.path / "r", out.path / "t");
  KnowledgeBase again = load_kb(out.path / "e", out.path / "r", out.path / "t");
  CHECK(again == kb);
  TempDir out2;
  save_kb(again, out2.path / "e", out2.path / "r", out2.path / "t");
  CHECK(read_text(out.path / "e") == read_text(out2.path / "e"));
  CHECK(read_text(out.path / "t") == read_text(out2.path / "t"));
}

TEST_CASE("entity order does not matter, triple order is preserved") {
  const std::string swapped =
      "{\"id\":\"Q2\",\"forms\":{\"en\":\"Basketball Player\",\"zh\":\"篮球运动员\"}}\n"
      "{\"id\":\"Q1\",\"forms\":{\"en\":\"Kevin Durant\",\"zh\":\"凯文杜兰特\"}}\n";
  const std::string triples =
      "{\"h\":\"Q2\",\"r\":\"P1\",\"t\":\"Q1\"}\n{\"h\":\"Q1\",\"r\":\"P1\",\"t\":\"Q2\"}\n";
  KnowledgeBase a = KbFiles(kEntities, kRelations, triples).load();
  KnowledgeBase b = KbFiles(swapped, kRelations, triples).load();
  CHECK(a.find_entity("Q1")->forms == b.find_entity("Q1")->forms);
  CHECK(a.triples() == b.triples());
  CHECK(a.triples().front().head == "Q2");
}
