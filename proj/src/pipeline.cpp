#include "kiqa/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "kiqa/errors.hpp"
#include "kiqa/evaluation.hpp"

namespace kiqa {

namespace fs = std::filesystem;

namespace {

// Built-in values. Training hyperparameters follow the reference
// XLM-R-scale recipe; configs/default.cfg overrides them for desk scale.
const std::vector<std::pair<std::string, std::string>>& known_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"run.seed", ""},
      {"kb.entities", ""},
      {"kb.relations", ""},
      {"kb.triples", ""},
      {"assembler.langs", ""},
      {"assembler.n_triples", "0"},
      {"assembler.kind_weights", "1,1,1"},
      {"assembler.seed", "1"},
      {"assembler.max_len", "128"},
      {"vocab.max_size", "8000"},
      {"model.n_layers", "2"},
      {"model.n_heads", "4"},
      {"model.d_model", "64"},
      {"model.d_ff", "256"},
      {"model.max_len", "384"},
      {"model.dropout", "0.1"},
      {"inject.learning_rate", "2e-5"},
      {"inject.batch_size", "24"},
      {"inject.epochs", "1"},
      {"inject.warmup_fraction", "0.06"},
      {"inject.weight_decay", "0.01"},
      {"inject.seed", "1"},
      {"inject.max_grad_norm", "none"},
      {"inject.linear_decay", "false"},
      {"inject.threads", "1"},
      {"finetune.learning_rate", "3e-5"},
      {"finetune.batch_size", "16"},
      {"finetune.epochs", "2"},
      {"finetune.warmup_fraction", "0.06"},
      {"finetune.weight_decay", "0.01"},
      {"finetune.seed", "1"},
      {"finetune.max_grad_norm", "none"},
      {"finetune.linear_decay", "false"},
      {"finetune.threads", "1"},
      {"finetune.max_len", "384"},
      {"eval.train", ""},
      {"eval.datasets", ""},
      {"eval.default_lang", ""},
      {"eval.max_answer_len", "30"},
      {"eval.max_len", "384"},
      {"synth.n_entities", "200"},
      {"synth.n_relations", "20"},
      {"synth.n_triples", "1000"},
      {"synth.languages", "syn0,syn1"},
      {"synth.n_qa_per_lang_pair", "200"},
      {"synth.n_qa_train", "400"},
      {"synth.n_distractors", "4"},
      {"synth.seed", "1"},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void assign(std::map<std::string, std::string>& entries, const std::string& line,
            const std::string& origin) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) {
    throw Error(ErrorKind::Config, origin + ": expected key = value");
  }
  const std::string key = trim(std::string_view(line).substr(0, eq));
  const std::string value = trim(std::string_view(line).substr(eq + 1));
  auto it = entries.find(key);
  if (it == entries.end()) throw Error(ErrorKind::Config, origin + ": unknown key '" + key + "'");
  it->second = value;
}

class Reader {
 public:
  explicit Reader(const std::map<std::string, std::string>& e) : entries_(e) {}

  const std::string& str(const std::string& key) const { return entries_.at(key); }

  std::size_t count(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const long long n = std::stoll(v, &used);
      if (used != v.size() || n < 0) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::Config, key + ": expected a non-negative integer, got '" + v + "'");
    }
  }

  double real(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
    }
  }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(ErrorKind::Config, key + ": expected true or false, got '" + v + "'");
  }

  std::vector<LanguageTag> langs(const std::string& key) const {
    std::vector<LanguageTag> out;
    for (const auto& code : split_list(str(key))) {
      if (!LanguageTag::is_valid(code)) {
        throw Error(ErrorKind::Config, key + ": invalid language tag '" + code + "'");
      }
      out.emplace_back(code);
    }
    return out;
  }

  TrainConfig train(const std::string& section, Phase phase) const {
    TrainConfig t;
    t.phase = phase;
    t.learning_rate = real(section + ".learning_rate");
    t.batch_size = count(section + ".batch_size");
    t.epochs = count(section + ".epochs");
    t.warmup_fraction = real(section + ".warmup_fraction");
    t.weight_decay = real(section + ".weight_decay");
    t.seed = count(section + ".seed");
    if (str(section + ".max_grad_norm") != "none") t.max_grad_norm = real(section + ".max_grad_norm");
    t.linear_decay = flag(section + ".linear_decay");
    t.threads = count(section + ".threads");
    try {
      t.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, section + ": " + e.what());
    }
    return t;
  }

 private:
  const std::map<std::string, std::string>& entries_;
};

}  // namespace

std::string default_config_text() {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : known_keys()) {
    const std::string s = key.substr(0, key.find('.'));
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << "# " << s << '\n';
      section = s;
    }
    out << key << " = " << value << '\n';
  }
  return out.str();
}

PipelineConfig parse_config(std::string_view text, const std::vector<std::string>& overrides) {
  PipelineConfig c;
  for (const auto& [key, value] : known_keys()) c.entries[key] = value;

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    assign(c.entries, t, "config line " + std::to_string(lineno));
  }
  for (const auto& o : overrides) assign(c.entries, o, "override '" + o + "'");

  if (!c.entries["run.seed"].empty()) {
    for (const char* k : {"synth.seed", "assembler.seed", "inject.seed", "finetune.seed"}) {
      c.entries[k] = c.entries["run.seed"];
    }
  }

  const Reader r(c.entries);
  c.kb_entities = r.str("kb.entities");
  c.kb_relations = r.str("kb.relations");
  c.kb_triples = r.str("kb.triples");
  const bool some_kb = !c.kb_entities.empty() || !c.kb_relations.empty() || !c.kb_triples.empty();
  const bool all_kb = !c.kb_entities.empty() && !c.kb_relations.empty() && !c.kb_triples.empty();
  if (some_kb && !all_kb) throw Error(ErrorKind::Config, "kb.* paths must be set together");

  c.assemble_langs = r.langs("assembler.langs");
  c.assemble_n_triples = r.count("assembler.n_triples");
  const auto weights = split_list(r.str("assembler.kind_weights"));
  if (weights.size() != 3) {
    throw Error(ErrorKind::Config, "assembler.kind_weights: expected three comma-separated values");
  }
  try {
    c.kind_weights = {std::stod(weights[0]), std::stod(weights[1]), std::stod(weights[2])};
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::Config, "assembler.kind_weights: not numeric");
  }
  c.assemble_seed = r.count("assembler.seed");
  c.assemble_max_len = r.count("assembler.max_len");
  c.vocab_max_size = r.count("vocab.max_size");

  c.model.n_layers = r.count("model.n_layers");
  c.model.n_heads = r.count("model.n_heads");
  c.model.d_model = r.count("model.d_model");
  c.model.d_ff = r.count("model.d_ff");
  c.model.max_len = r.count("model.max_len");
  c.model.dropout = r.real("model.dropout");
  ModelConfig probe = c.model;
  probe.vocab_size = 1;
  try {
    probe.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, std::string("model: ") + e.what());
  }

  c.inject = r.train("inject", Phase::Inject);
  c.finetune = r.train("finetune", Phase::Finetune);
  c.finetune_max_len = r.count("finetune.max_len");

  c.train_dataset = r.str("eval.train");
  for (const auto& p : split_list(r.str("eval.datasets"))) c.eval_datasets.emplace_back(p);
  if (auto langs = r.langs("eval.default_lang"); !langs.empty()) c.default_lang = langs.front();
  c.max_answer_len = r.count("eval.max_answer_len");
  c.eval_max_len = r.count("eval.max_len");

  c.synth.n_entities = r.count("synth.n_entities");
  c.synth.n_relations = r.count("synth.n_relations");
  c.synth.n_triples = r.count("synth.n_triples");
  c.synth.languages = r.langs("synth.languages");
  c.synth.n_qa_per_lang_pair = r.count("synth.n_qa_per_lang_pair");
  c.synth.n_qa_train = r.count("synth.n_qa_train");
  c.synth.n_distractors = r.count("synth.n_distractors");
  c.synth.seed = r.count("synth.seed");
  try {
    c.synth.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, std::string("synth: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string PipelineConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string PipelineConfig::hash() const { return fnv1a_hex(canonical_text()); }

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

fs::path RunLayout::corpus(const std::string& variant) const {
  return corpus_dir() / ("corpus_" + variant + ".jsonl");
}
fs::path RunLayout::inject_ckpt(const std::string& variant) const {
  return root / "ckpt-inject" / (variant + ".ckpt");
}
fs::path RunLayout::final_ckpt(const std::string& variant) const {
  return root / "ckpt-final" / (variant + ".ckpt");
}

fs::path default_run_dir(const PipelineConfig& config) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << config.hash();
  return fs::path("runs") / name.str();
}

namespace {

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) {
    throw Error(ErrorKind::Config, what + " " + p.string() + " does not exist");
  }
}

struct Context {
  const PipelineConfig& config;
  RunLayout layout;
  std::ostream& out;
};

std::array<fs::path, 3> kb_paths(const Context& ctx) {
  if (!ctx.config.kb_entities.empty()) {
    return {ctx.config.kb_entities, ctx.config.kb_relations, ctx.config.kb_triples};
  }
  const fs::path d = ctx.layout.data();
  return {d / "entities.jsonl", d / "relations.jsonl", d / "triples.jsonl"};
}

KnowledgeBase load_configured_kb(const Context& ctx) {
  const auto paths = kb_paths(ctx);
  for (const auto& p : paths) require_file(p, "knowledge-base file");
  return load_kb(paths[0], paths[1], paths[2]);
}

fs::path train_path(const Context& ctx) {
  return ctx.config.train_dataset.empty() ? ctx.layout.data() / "train.json"
                                          : ctx.config.train_dataset;
}

std::vector<fs::path> eval_paths(const Context& ctx) {
  if (!ctx.config.eval_datasets.empty()) return ctx.config.eval_datasets;
  std::vector<fs::path> found;
  if (fs::exists(ctx.layout.data())) {
    for (const auto& entry : fs::directory_iterator(ctx.layout.data())) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("test-context-") && name.ends_with(".json")) {
        found.push_back(entry.path());
      }
    }
  }
  std::sort(found.begin(), found.end());
  if (found.empty()) {
    throw Error(ErrorKind::Config, "no evaluation datasets configured or found in " +
                                       ctx.layout.data().string());
  }
  return found;
}

std::vector<QARecord> load_eval_records(const Context& ctx) {
  std::vector<QARecord> all;
  for (const auto& p : eval_paths(ctx)) {
    require_file(p, "evaluation dataset");
    auto records = load_qa_dataset(p, ctx.config.default_lang);
    all.insert(all.end(), records.begin(), records.end());
  }
  return all;
}

void write_manifest(const Context& ctx, const std::string& command) {
  fs::create_directories(ctx.layout.root);
  nlohmann::json m = {{"command", command},
                      {"config_hash", ctx.config.hash()},
                      {"seeds",
                       {{"synth", ctx.config.synth.seed},
                        {"assembler", ctx.config.assemble_seed},
                        {"inject", ctx.config.inject.seed},
                        {"finetune", ctx.config.finetune.seed}}},
                      {"config", ctx.config.entries}};
  std::ofstream out(ctx.layout.root / ("manifest-" + command + ".json"), std::ios::binary);
  out << m.dump(2) << '\n';
}

void cmd_synth_gen(const Context& ctx) {
  SynthFiles files = write_synthetic(ctx.config.synth, ctx.layout.data());
  ctx.out << "artifact data " << ctx.layout.data().string() << '\n';
  ctx.out << "synth entities=" << ctx.config.synth.n_entities
          << " relations=" << ctx.config.synth.n_relations
          << " triples=" << ctx.config.synth.n_triples << " test_pairs=" << files.test.size()
          << '\n';
}

void cmd_kb_validate(const Context& ctx) {
  KnowledgeBase kb = load_configured_kb(ctx);
  std::string langs;
  for (const auto& l : kb.languages()) langs += (langs.empty() ? "" : ",") + l.code();
  ctx.out << "kb entities=" << kb.entities().size() << " relations=" << kb.relations().size()
          << " triples=" << kb.triples().size() << " languages=" << langs << '\n';
}

std::set<LanguageTag> assembler_langs(const Context& ctx, const KnowledgeBase& kb) {
  if (ctx.config.assemble_langs.empty()) return kb.languages();
  return {ctx.config.assemble_langs.begin(), ctx.config.assemble_langs.end()};
}

void cmd_assemble(const Context& ctx) {
  KnowledgeBase kb = load_configured_kb(ctx);
  const auto langs = assembler_langs(ctx, kb);
  std::size_t n = ctx.config.assemble_n_triples;
  if (n == 0) n = triples_renderable(kb, langs).size();

  std::vector<MaskedSample> injected =
      build_corpus(kb, langs, n, ctx.config.kind_weights, ctx.config.assemble_seed);
  std::vector<MaskedSample> baseline =
      build_corpus(kb, langs, n, KindWeights{1, 0, 0}, ctx.config.assemble_seed);

  std::vector<std::string> texts;
  for (const auto& e : kb.entities()) {
    for (const auto& [lang, text] : e.forms) {
      if (langs.contains(lang)) texts.push_back(text);
    }
  }
  for (const auto& r : kb.relations()) {
    for (const auto& [lang, text] : r.forms) {
      if (langs.contains(lang)) texts.push_back(text);
    }
  }
  if (fs::exists(train_path(ctx))) {
    for (const auto& rec : load_qa_dataset(train_path(ctx), ctx.config.default_lang)) {
      texts.push_back(rec.question);
      texts.push_back(rec.context);
    }
  }
  Vocab vocab = build_vocab(texts, ctx.config.vocab_max_size);

  fs::create_directories(ctx.layout.corpus_dir());
  vocab.save(ctx.layout.vocab());
  write_corpus(injected, ctx.layout.corpus("injected"));
  write_corpus(baseline, ctx.layout.corpus("baseline"));

  std::map<SampleKind, std::size_t> kinds;
  for (const auto& s : injected) ++kinds[s.kind];
  ctx.out << "artifact vocab " << ctx.layout.vocab().string() << " size=" << vocab.size() << '\n';
  ctx.out << "artifact corpus " << ctx.layout.corpus("injected").string()
          << " samples=" << injected.size() << " K1=" << kinds[SampleKind::K1]
          << " K2=" << kinds[SampleKind::K2HeadSwap] + kinds[SampleKind::K2TailSwap]
          << " K3=" << kinds[SampleKind::K3] << '\n';
  ctx.out << "artifact corpus " << ctx.layout.corpus("baseline").string()
          << " samples=" << baseline.size() << '\n';
}

ModelConfig model_for(const Context& ctx, const Vocab& vocab) {
  ModelConfig m = ctx.config.model;
  m.vocab_size = vocab.size();
  return m;
}

CheckpointMeta meta_for(const Context& ctx, const std::string& variant, const std::string& phase) {
  return {{"config_hash", ctx.config.hash()},
          {"vocab_hash", file_hash(ctx.layout.vocab())},
          {"variant", variant},
          {"phase", phase}};
}

void check_vocab(const Checkpoint& ck, const fs::path& ckpt_path, const fs::path& vocab_path) {
  auto it = ck.meta.find("vocab_hash");
  const std::string actual = file_hash(vocab_path);
  if (it == ck.meta.end() || it->second != actual) {
    throw Error(ErrorKind::HashMismatch,
                "checkpoint " + ckpt_path.string() + " was trained with a different vocabulary (" +
                    (it == ck.meta.end() ? std::string("none") : it->second) + " vs " + actual +
                    ")");
  }
}

void cmd_inject(const Context& ctx, const std::string& variant) {
  require_file(ctx.layout.corpus(variant), "corpus");
  require_file(ctx.layout.vocab(), "vocabulary");
  const Vocab vocab = Vocab::load(ctx.layout.vocab());
  const auto corpus = read_corpus(ctx.layout.corpus(variant));
  InjectionResult res = run_injection(corpus, vocab, ctx.config.inject, model_for(ctx, vocab),
                                      ctx.config.assemble_max_len);
  fs::create_directories(ctx.layout.inject_ckpt(variant).parent_path());
  fs::create_directories(ctx.layout.logs());
  save_checkpoint(ctx.layout.inject_ckpt(variant), res.params, meta_for(ctx, variant, "inject"));
  write_train_log(res.log, ctx.layout.logs() / ("inject-" + variant + ".jsonl"));
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", res.log.back().loss);
  ctx.out << "artifact checkpoint " << ctx.layout.inject_ckpt(variant).string()
          << " steps=" << res.log.size() << " final_loss=" << buf
          << " skipped_overflow=" << res.skipped_overflow << '\n';
}

void cmd_finetune(const Context& ctx, const std::string& variant) {
  const fs::path in_ckpt = ctx.layout.inject_ckpt(variant);
  require_file(in_ckpt, "injection checkpoint");
  require_file(ctx.layout.vocab(), "vocabulary");
  require_file(train_path(ctx), "training dataset");
  const Vocab vocab = Vocab::load(ctx.layout.vocab());
  Checkpoint ck = load_checkpoint(in_ckpt);
  check_vocab(ck, in_ckpt, ctx.layout.vocab());

  const auto records = load_qa_dataset(train_path(ctx), ctx.config.default_lang);
  PreparedQA prepared = prepare_qa(records, vocab, std::min(ctx.config.finetune_max_len,
                                                            ck.params.config().max_len));
  FinetuneResult res = run_finetune(ck.params, prepared.examples, ctx.config.finetune);
  fs::create_directories(ctx.layout.final_ckpt(variant).parent_path());
  fs::create_directories(ctx.layout.logs());
  save_checkpoint(ctx.layout.final_ckpt(variant), res.params, meta_for(ctx, variant, "finetune"));
  write_train_log(res.log, ctx.layout.logs() / ("finetune-" + variant + ".jsonl"));
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", res.log.back().loss);
  ctx.out << "artifact checkpoint " << ctx.layout.final_ckpt(variant).string()
          << " examples=" << prepared.examples.size()
          << " dropped_unlocatable=" << prepared.dropped_unlocatable
          << " dropped_truncated=" << prepared.dropped_truncated << " steps=" << res.log.size()
          << " final_loss=" << buf << '\n';
}

EvalReport cmd_evaluate(const Context& ctx, const std::string& variant) {
  const fs::path ckpt = ctx.layout.final_ckpt(variant);
  require_file(ckpt, "final checkpoint");
  require_file(ctx.layout.vocab(), "vocabulary");
  const Vocab vocab = Vocab::load(ctx.layout.vocab());
  Checkpoint ck = load_checkpoint(ckpt);
  check_vocab(ck, ckpt, ctx.layout.vocab());
  const auto records = load_eval_records(ctx);
  EvalResult res = evaluate(ck.params, vocab, records, ctx.config.max_answer_len,
                            ctx.config.eval_max_len);
  fs::create_directories(ctx.layout.reports());
  const std::string name = "report_" + variant;
  write_report(res.report, ctx.layout.reports() / (name + ".txt"),
               ctx.layout.reports() / (name + ".json"), name);
  {
    std::ofstream preds(ctx.layout.reports() / ("predictions_" + variant + ".jsonl"),
                        std::ios::binary);
    for (const Prediction& p : res.predictions) {
      preds << nlohmann::json{{"id", p.qa_id}, {"prediction", p.text}, {"f1", p.f1}, {"em", p.em}}
                   .dump()
            << '\n';
    }
  }
  ctx.out << "artifact report " << (ctx.layout.reports() / (name + ".txt")).string() << '\n';
  std::istringstream table(format_report(res.report, name));
  for (std::string line; std::getline(table, line);) ctx.out << line << '\n';
  return res.report;
}

void cmd_coverage(const Context& ctx) {
  KnowledgeBase kb = load_configured_kb(ctx);
  std::vector<std::pair<std::string, LanguageTag>> questions;
  for (const auto& r : load_eval_records(ctx)) questions.emplace_back(r.question, r.question_lang);
  CoverageReport cov = token_coverage(questions, render_triples(kb, kb.triples()));
  fs::create_directories(ctx.layout.reports());
  nlohmann::json doc = nlohmann::json::object();
  std::ofstream txt(ctx.layout.reports() / "coverage.txt", std::ios::binary);
  for (const auto& [lang, value] : cov) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", value);
    txt << lang.code() << '\t' << buf << '\n';
    ctx.out << "coverage " << lang.code() << ' ' << buf << '\n';
    doc[lang.code()] = value;
  }
  std::ofstream json_out(ctx.layout.reports() / "coverage.json", std::ios::binary);
  json_out << doc.dump(2) << '\n';
}

}  // namespace

void run_command(const std::string& command, const PipelineConfig& config, const fs::path& run_dir,
                 std::ostream& out, const std::vector<std::string>& variants) {
  const auto& cmds = pipeline_commands();
  if (std::find(cmds.begin(), cmds.end(), command) == cmds.end()) {
    throw Error(ErrorKind::Config, "unknown command '" + command + "'");
  }
  for (const auto& v : variants) {
    if (v != "injected" && v != "baseline") {
      throw Error(ErrorKind::Config, "unknown variant '" + v + "'");
    }
  }
  Context ctx{config, RunLayout{run_dir}, out};
  write_manifest(ctx, command);

  if (command == "synth-gen") {
    cmd_synth_gen(ctx);
  } else if (command == "kb-validate") {
    cmd_kb_validate(ctx);
  } else if (command == "assemble") {
    cmd_assemble(ctx);
  } else if (command == "inject") {
    for (const auto& v : variants) cmd_inject(ctx, v);
  } else if (command == "finetune") {
    for (const auto& v : variants) cmd_finetune(ctx, v);
  } else if (command == "evaluate") {
    for (const auto& v : variants) cmd_evaluate(ctx, v);
  } else if (command == "coverage") {
    cmd_coverage(ctx);
  } else {
    if (config.kb_entities.empty()) cmd_synth_gen(ctx);
    cmd_kb_validate(ctx);
    cmd_assemble(ctx);
    std::map<std::string, EvalReport> reports;
    for (const auto& v : variants) {
      cmd_inject(ctx, v);
      cmd_finetune(ctx, v);
      reports[v] = cmd_evaluate(ctx, v);
    }
    cmd_coverage(ctx);
    const LanguageTag pivot =
        config.kb_entities.empty() ? config.synth.pivot()
                                   : config.default_lang.value_or(LanguageTag("en"));
    for (const auto& [v, report] : reports) {
      TransferSummary s = summarize_transfer(report, pivot);
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "summary %s cross_f1=%.2f cross_em=%.2f pivot_f1=%.2f pivot_em=%.2f\n",
                    v.c_str(), s.cross_f1, s.cross_em, s.pivot_f1, s.pivot_em);
      out << buf;
    }
  }
}

}  // namespace kiqa
