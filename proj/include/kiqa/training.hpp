#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "kiqa/assembler.hpp"
#include "kiqa/encoder.hpp"
#include "kiqa/losses.hpp"
#include "kiqa/qa_dataset.hpp"
#include "kiqa/textmodel.hpp"

namespace kiqa {

enum class Phase { Inject, Finetune };

struct TrainConfig {
  Phase phase = Phase::Inject;
  double learning_rate = 2e-5;
  std::size_t batch_size = 24;
  std::size_t epochs = 1;
  double warmup_fraction = 0.06;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::optional<double> max_grad_norm;
  bool linear_decay = false;  // after warmup; off means constant
  std::size_t threads = 1;

  static TrainConfig inject_defaults();
  static TrainConfig finetune_defaults();
  void validate() const;
};

// Linear warmup over W = max(1, round(fraction * total)) steps, then
// constant (or linear decay to zero when `linear_decay`).
double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_fraction,
             bool linear_decay = false);

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                double lr, const AdamWHyper& hyper);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

void write_train_log(const std::vector<StepRecord>& log, const std::filesystem::path& path);

struct InjectionResult {
  EncoderParams params;
  std::vector<StepRecord> log;
  std::size_t skipped_overflow = 0;
};

// Minimizes the entity-completion loss over the corpus. Starts from
// `initial` when given, otherwise from a fresh initialization.
InjectionResult run_injection(const std::vector<MaskedSample>& corpus, const Vocab& vocab,
                              const TrainConfig& config, const ModelConfig& model_config,
                              std::size_t max_len = 128,
                              const std::optional<EncoderParams>& initial = std::nullopt);

struct QATrainExample {
  QAInput qa_input;
  std::size_t gold_start = 0;  // context token index
  std::size_t gold_end = 0;
};

struct PreparedQA {
  std::vector<QATrainExample> examples;
  std::size_t dropped_unlocatable = 0;  // answer text absent at answer_start
  std::size_t dropped_truncated = 0;    // answer cut off by max_len
};

// Maps answer character offsets onto context token indices: the first token
// covering answer_start and the last covering its final character.
std::optional<std::pair<std::size_t, std::size_t>> locate_answer(const QAInput& input,
                                                                 std::string_view context,
                                                                 const QAAnswer& answer);

PreparedQA prepare_qa(const std::vector<QARecord>& records, const Vocab& vocab,
                      std::size_t max_len);

struct FinetuneResult {
  EncoderParams params;
  std::vector<StepRecord> log;
};

FinetuneResult run_finetune(const EncoderParams& params, const std::vector<QATrainExample>& data,
                            const TrainConfig& config);

}  // namespace kiqa
