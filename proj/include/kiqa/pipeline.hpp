#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kiqa/assembler.hpp"
#include "kiqa/encoder.hpp"
#include "kiqa/synthlang.hpp"
#include "kiqa/training.hpp"

namespace kiqa {

// Flat `section.key = value` document. Every key has a built-in default;
// unknown keys are rejected.
struct PipelineConfig {
  std::filesystem::path kb_entities, kb_relations, kb_triples;  // empty: use synth output

  std::vector<LanguageTag> assemble_langs;
  std::size_t assemble_n_triples = 0;  // 0: every renderable triple
  KindWeights kind_weights;
  std::uint64_t assemble_seed = 1;
  std::size_t assemble_max_len = 128;
  std::size_t vocab_max_size = 8000;

  ModelConfig model;  // vocab_size is filled from the vocabulary
  TrainConfig inject;
  TrainConfig finetune;
  std::size_t finetune_max_len = 384;

  std::filesystem::path train_dataset;              // empty: synth train split
  std::vector<std::filesystem::path> eval_datasets;  // empty: synth test splits
  std::optional<LanguageTag> default_lang;
  std::size_t max_answer_len = 30;
  std::size_t eval_max_len = 384;

  SynthSpec synth;

  std::map<std::string, std::string> entries;  // canonical key -> value

  std::string canonical_text() const;
  std::string hash() const;  // 16 hex digits
};

std::string default_config_text();
PipelineConfig parse_config(std::string_view text, const std::vector<std::string>& overrides = {});
PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides = {});

std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

// Fixed layout below a run directory.
struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path corpus_dir() const { return root / "corpus"; }
  std::filesystem::path corpus(const std::string& variant) const;
  std::filesystem::path vocab() const { return root / "corpus" / "vocab.txt"; }
  std::filesystem::path inject_ckpt(const std::string& variant) const;
  std::filesystem::path final_ckpt(const std::string& variant) const;
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path reports() const { return root / "reports"; }
};

std::filesystem::path default_run_dir(const PipelineConfig& config);

inline const std::vector<std::string>& pipeline_commands() {
  static const std::vector<std::string> commands = {
      "synth-gen", "kb-validate", "assemble", "inject", "finetune", "evaluate", "coverage",
      "pipeline"};
  return commands;
}

// Variants: "injected" (configured kind weights) and "baseline" (K1 only).
// Writes artifacts under `run_dir`, progress lines to `out`; throws kiqa::Error.
void run_command(const std::string& command, const PipelineConfig& config,
                 const std::filesystem::path& run_dir, std::ostream& out,
                 const std::vector<std::string>& variants = {"injected", "baseline"});

}  // namespace kiqa
