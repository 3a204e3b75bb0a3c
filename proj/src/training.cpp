#include "kiqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "kiqa/errors.hpp"
#include "kiqa/rng.hpp"

namespace kiqa {

TrainConfig TrainConfig::inject_defaults() {
  TrainConfig c;
  c.phase = Phase::Inject;
  c.learning_rate = 2e-5;
  c.batch_size = 24;
  c.epochs = 1;
  return c;
}

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.phase = Phase::Finetune;
  c.learning_rate = 3e-5;
  c.batch_size = 16;
  c.epochs = 2;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidArgument, msg); };
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (epochs < 1) fail("epochs must be at least 1");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) fail("warmup_fraction must lie in [0, 1)");
  if (weight_decay < 0) fail("weight_decay must be non-negative");
  if (max_grad_norm && !(*max_grad_norm > 0)) fail("max_grad_norm must be positive");
  if (threads < 1) fail("threads must be at least 1");
}

double lr_at(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_fraction,
             bool linear_decay) {
  if (total_steps < 1) throw Error(ErrorKind::InvalidArgument, "total_steps must be at least 1");
  if (step > total_steps) throw Error(ErrorKind::InvalidArgument, "step beyond total_steps");
  const auto warmup = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps))));
  if (step < warmup) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (!linear_decay || total_steps <= warmup) return peak_lr;
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                double lr, const AdamWHyper& hyper) {
  if (params.size() != grads.size()) {
    throw Error(ErrorKind::ShapeMismatch, "parameter and gradient sizes differ");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw Error(ErrorKind::NonFinite, "non-finite gradient");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  } else if (state.m.size() != params.size()) {
    throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match parameters");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + hyper.weight_decay * params[i]);
  }
}

void write_train_log(const std::vector<StepRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const StepRecord& r : log) {
    out << nlohmann::json{{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}}.dump() << '\n';
  }
}

namespace {

void clip_gradient(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
}

// Shared loop: shuffled mini-batches per epoch, warmup schedule, AdamW.
template <typename MakeBatch>
std::vector<StepRecord> optimize(EncoderParams& params, std::size_t n_items,
                                 const TrainConfig& config, MakeBatch&& make_batch) {
  const std::size_t per_epoch = (n_items + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  const AdamWHyper hyper{config.beta1, config.beta2, config.eps, config.weight_decay};
  AdamWState state;
  std::vector<StepRecord> log;
  log.reserve(total);

  std::vector<std::size_t> order(n_items);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(config.seed, 0x5EED0000 + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      ++step;
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(n_items, begin + config.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);

      LossOptions opts;
      opts.forward.train = true;
      opts.forward.dropout_seed = mix_seed(config.seed, step);
      opts.threads = config.threads;
      LossAndGrad lg = loss_and_grad(params, make_batch(idx), opts);
      if (config.max_grad_norm) clip_gradient(lg.grad.values(), *config.max_grad_norm);

      const double lr = lr_at(step, total, config.learning_rate, config.warmup_fraction,
                              config.linear_decay);
      adamw_step(params.values(), lg.grad.values(), state, lr, hyper);
      if (!params.all_finite()) {
        throw Error(ErrorKind::NonFinite, "parameters diverged at step " + std::to_string(step));
      }
      log.push_back({step, lr, lg.loss});
    }
  }
  return log;
}

}  // namespace

InjectionResult run_injection(const std::vector<MaskedSample>& corpus, const Vocab& vocab,
                              const TrainConfig& config, const ModelConfig& model_config,
                              std::size_t max_len, const std::optional<EncoderParams>& initial) {
  config.validate();
  if (corpus.empty()) throw Error(ErrorKind::InvalidArgument, "injection corpus is empty");
  if (model_config.vocab_size != vocab.size()) {
    throw Error(ErrorKind::ShapeMismatch, "model vocab_size differs from the vocabulary");
  }
  InjectionResult result;
  std::vector<TokenizedSample> samples;
  samples.reserve(corpus.size());
  for (const MaskedSample& s : corpus) {
    try {
      TokenizedSample t = render(s, vocab, std::min(max_len, model_config.max_len));
      if (!t.mask_positions.empty()) samples.push_back(std::move(t));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Overflow) throw;
      ++result.skipped_overflow;
    }
  }
  if (samples.empty()) throw Error(ErrorKind::InvalidArgument, "no renderable injection samples");

  if (initial) {
    if (!(initial->config() == model_config)) {
      throw Error(ErrorKind::ShapeMismatch, "initial checkpoint has a different model config");
    }
    result.params = *initial;
  } else {
    result.params = EncoderParams::initialize(model_config, config.seed);
  }

  result.log = optimize(result.params, samples.size(), config, [&](auto idx) {
    std::vector<MaskedLmItem> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) {
      const TokenizedSample& t = samples[i];
      batch.push_back({t.input_ids, t.segment_ids, t.mask_positions, t.target_ids});
    }
    return LossSpec(std::move(batch));
  });
  return result;
}

std::optional<std::pair<std::size_t, std::size_t>> locate_answer(const QAInput& input,
                                                                 std::string_view context,
                                                                 const QAAnswer& answer) {
  const std::size_t len = decode_utf8(answer.text).size();
  if (len == 0) return std::nullopt;
  if (slice_code_points(context, answer.answer_start, answer.answer_start + len) != answer.text) {
    return std::nullopt;
  }
  const std::size_t first = answer.answer_start;
  const std::size_t last = answer.answer_start + len - 1;
  const auto& offs = input.context_offsets;
  std::optional<std::size_t> s, e;
  for (std::size_t i = 0; i < offs.size(); ++i) {
    const auto [b, en] = offs[i];
    if (en > first && b <= last) {
      if (!s) s = i;
      e = i;
    }
  }
  if (!s) return std::nullopt;
  return std::make_pair(*s, *e);
}

PreparedQA prepare_qa(const std::vector<QARecord>& records, const Vocab& vocab,
                      std::size_t max_len) {
  PreparedQA out;
  for (const QARecord& r : records) {
    QAInput input = pack_qa(r.question, r.context, vocab, max_len);
    const QAAnswer& answer = r.answers.front();
    auto span = locate_answer(input, r.context, answer);
    if (!span) {
      // Distinguish a bad offset from an answer cut off by truncation.
      const std::size_t full_len = tokenize(r.question).size() + tokenize(r.context).size() + 4;
      QAInput full = pack_qa(r.question, r.context, vocab, std::max(max_len, full_len));
      if (input.truncated() && locate_answer(full, r.context, answer)) {
        ++out.dropped_truncated;
      } else {
        ++out.dropped_unlocatable;
      }
      continue;
    }
    out.examples.push_back({std::move(input), span->first, span->second});
  }
  return out;
}

FinetuneResult run_finetune(const EncoderParams& params, const std::vector<QATrainExample>& data,
                            const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw Error(ErrorKind::InvalidArgument, "finetuning dataset is empty");
  for (const QATrainExample& ex : data) {
    if (ex.gold_start > ex.gold_end || ex.gold_end >= ex.qa_input.context_size()) {
      throw Error(ErrorKind::GoldMasked, "gold span lies outside the context segment");
    }
  }
  FinetuneResult result{params, {}};
  result.log = optimize(result.params, data.size(), config, [&](auto idx) {
    std::vector<SpanItem> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) {
      const QATrainExample& ex = data[i];
      const QAInput& q = ex.qa_input;
      const std::size_t n = q.length;
      batch.push_back({std::span<const TokenId>(q.input_ids.data(), n),
                       std::span<const int>(q.segment_ids.data(), n), q.context_begin,
                       q.context_begin + q.context_size(), q.context_begin + ex.gold_start,
                       q.context_begin + ex.gold_end});
    }
    return LossSpec(std::move(batch));
  });
  return result;
}

}  // namespace kiqa
