#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "kiqa/pipeline.hpp"
#include "test_util.hpp"

using namespace kiqa;

namespace {

const char* kTinyConfig = R"(# tiny end-to-end setup
synth.n_entities = 30
synth.n_relations = 5
synth.n_triples = 60
synth.n_qa_train = 20
synth.n_qa_per_lang_pair = 10
model.n_layers = 1
model.n_heads = 2
model.d_model = 8
model.d_ff = 16
model.max_len = 64
inject.batch_size = 16
inject.learning_rate = 1e-3
finetune.learning_rate = 1e-3
finetune.max_len = 64
eval.max_len = 64
)";

std::string run(const std::string& command, const PipelineConfig& c, const TempDir& dir,
                std::vector<std::string> variants = {"injected", "baseline"}) {
  std::ostringstream out;
  run_command(command, c, dir.path, out, variants);
  return out.str();
}

}  // namespace

TEST_CASE("config defaults, overrides and hashing") {
  PipelineConfig d = parse_config("");
  CHECK(d.inject.learning_rate == 2e-5);
  CHECK(d.inject.batch_size == 24);
  CHECK(d.inject.epochs == 1);
  CHECK(d.finetune.learning_rate == 3e-5);
  CHECK(d.finetune.batch_size == 16);
  CHECK(d.finetune.epochs == 2);
  CHECK(d.inject.warmup_fraction == 0.06);
  CHECK(d.synth.n_entities == 200);
  CHECK(d.max_answer_len == 30);

  PipelineConfig a = parse_config(kTinyConfig);
  PipelineConfig b = parse_config(std::string(kTinyConfig) + "\n# trailing comment\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  PipelineConfig c = parse_config(kTinyConfig, {"inject.epochs=3"});
  CHECK(c.inject.epochs == 3);
  CHECK(c.hash() != a.hash());
  CHECK(parse_config(default_config_text()).hash() == d.hash());

  PipelineConfig seeded = parse_config("run.seed = 9");
  CHECK(seeded.synth.seed == 9);
  CHECK(seeded.assemble_seed == 9);
  CHECK(seeded.inject.seed == 9);
  CHECK(seeded.finetune.seed == 9);

  CHECK_THROWS_AS_KIND(parse_config("inject.nope = 1"), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(parse_config("inject.epochs"), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(parse_config("inject.epochs = two"), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(parse_config("inject.batch_size = 0"), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(parse_config("model.d_model = 10\nmodel.n_heads = 4"), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(parse_config("kb.entities = e.jsonl"), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(parse_config("", {"bogus=1"}), ErrorKind::Config);
}

TEST_CASE("pipeline produces both reports with every cell populated") {
  PipelineConfig c = parse_config(kTinyConfig);
  TempDir dir;
  const std::string out = run("pipeline", c, dir);
  RunLayout lay{dir.path};
  for (const char* v : {"injected", "baseline"}) {
    CHECK(std::filesystem::exists(lay.corpus(v)));
    CHECK(std::filesystem::exists(lay.inject_ckpt(v)));
    CHECK(std::filesystem::exists(lay.final_ckpt(v)));
    auto report = nlohmann::json::parse(
        read_text(lay.reports() / ("report_" + std::string(v) + ".json")));
    CHECK(report["cells"].size() == 4);
    for (const auto& cell : report["cells"]) CHECK(cell["count"] == 10);
    CHECK(load_checkpoint(lay.final_ckpt(v)).meta.at("config_hash") == c.hash());
  }
  CHECK(std::filesystem::exists(lay.reports() / "coverage.json"));
  auto manifest = nlohmann::json::parse(read_text(dir.path / "manifest-pipeline.json"));
  CHECK(manifest["config_hash"] == c.hash());
  CHECK(manifest["seeds"]["inject"] == 1);
  CHECK(out.find("summary injected") != std::string::npos);
  CHECK(out.find("summary baseline") != std::string::npos);

  // Injected and baseline runs take the same number of optimizer steps.
  CHECK(read_text(lay.logs() / "inject-injected.jsonl").size() > 0);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  CHECK(lines(read_text(lay.logs() / "inject-injected.jsonl")) ==
        lines(read_text(lay.logs() / "inject-baseline.jsonl")));

  SUBCASE("evaluate refuses a vocabulary the checkpoint was not trained with") {
    write_text(lay.vocab(), read_text(lay.vocab()) + "extra\n");
    CHECK_THROWS_AS_KIND(run("evaluate", c, dir, {"injected"}), ErrorKind::HashMismatch);
  }
}

TEST_CASE("assemble is byte-identical across runs") {
  PipelineConfig c = parse_config(kTinyConfig);
  TempDir a, b;
  run("synth-gen", c, a);
  run("assemble", c, a);
  run("synth-gen", c, b);
  run("assemble", c, b);
  RunLayout la{a.path}, lb{b.path};
  CHECK(read_text(la.corpus("injected")) == read_text(lb.corpus("injected")));
  CHECK(read_text(la.vocab()) == read_text(lb.vocab()));
  CHECK(read_text(a.path / "manifest-assemble.json") == read_text(b.path / "manifest-assemble.json"));
}

TEST_CASE("commands check their inputs") {
  PipelineConfig c = parse_config(kTinyConfig);
  TempDir dir;
  CHECK_THROWS_AS_KIND(run("inject", c, dir), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(run("kb-validate", c, dir), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(run("nonsense", c, dir), ErrorKind::Config);
  CHECK_THROWS_AS_KIND(run("synth-gen", c, dir, {"other"}), ErrorKind::Config);

  write_text(dir.path / "e.jsonl", "{\"id\":\"Q1\",\"forms\":{\"en\":\"a\"}}\n");
  write_text(dir.path / "r.jsonl", "{\"id\":\"P1\",\"forms\":{\"en\":\"r\"}}\n");
  write_text(dir.path / "t.jsonl", "{\"h\":\"Q1\",\"r\":\"P1\",\"t\":\"Q1\"}\n{\"h\":\"Q1\",\"r\":\"P1\",\"t\":\"Q99\"}\n");
  PipelineConfig kb = parse_config(kTinyConfig, {"kb.entities=" + (dir.path / "e.jsonl").string(),
                                                 "kb.relations=" + (dir.path / "r.jsonl").string(),
                                                 "kb.triples=" + (dir.path / "t.jsonl").string()});
  try {
    run("kb-validate", kb, dir);
    FAIL("expected a dangling-id error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DanglingId);
    CHECK(std::string(e.what()).find("Q99") != std::string::npos);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}
