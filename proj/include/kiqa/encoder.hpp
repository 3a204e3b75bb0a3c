#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "kiqa/textmodel.hpp"

namespace kiqa {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t max_len = 384;
  std::size_t vocab_size = 0;
  double dropout = 0.1;

  void validate() const;  // throws InvalidArgument
  bool operator==(const ModelConfig&) const = default;
};

// Location of one named tensor inside the flat parameter buffer.
struct TensorRef {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

struct LayerRefs {
  TensorRef wq, bq, wk, bk, wv, bv, wo, bo;
  TensorRef ln1_gain, ln1_bias;
  TensorRef w1, b1, w2, b2;
  TensorRef ln2_gain, ln2_bias;
};

struct ParamLayout {
  TensorRef token_emb;  // also the MLM output projection (tied)
  TensorRef position_emb;
  TensorRef segment_emb;
  TensorRef emb_ln_gain, emb_ln_bias;
  std::vector<LayerRefs> layers;
  TensorRef mlm_bias;
  TensorRef qa_start_w, qa_start_b, qa_end_w, qa_end_b;

  std::vector<std::pair<std::string, TensorRef>> named;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& config);
};

// All trainable weights in one contiguous buffer. Gradients use the same
// type so optimizers and reductions work on flat spans.
class EncoderParams {
 public:
  EncoderParams() = default;
  explicit EncoderParams(const ModelConfig& config);  // all zeros

  static EncoderParams initialize(const ModelConfig& config, std::uint64_t seed);
  EncoderParams zeros_like() const { return EncoderParams(config_); }

  const ModelConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }

  MatMap mat(const TensorRef& t) {
    return MatMap(data_.data() + t.offset, static_cast<Eigen::Index>(t.rows),
                  static_cast<Eigen::Index>(t.cols));
  }
  ConstMatMap mat(const TensorRef& t) const {
    return ConstMatMap(data_.data() + t.offset, static_cast<Eigen::Index>(t.rows),
                       static_cast<Eigen::Index>(t.cols));
  }

  bool all_finite() const;
  bool operator==(const EncoderParams& other) const {
    return config_ == other.config_ && data_ == other.data_;
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  // Vectorized reductions peel a scalar head that depends on the address,
  // so the buffer alignment must not vary between allocations.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

struct ForwardOptions {
  bool train = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
};

// Hidden states (len x d_model). An empty attention_mask means every
// position is attended; zeros exclude the position as a key.
Mat forward(const EncoderParams& params, std::span<const TokenId> input_ids,
            std::span<const int> segment_ids, std::span<const std::uint8_t> attention_mask = {},
            const ForwardOptions& options = {});

// Attention probabilities of every layer and head, for inspection.
std::vector<std::vector<Mat>> attention_probabilities(const EncoderParams& params,
                                                      std::span<const TokenId> input_ids,
                                                      std::span<const int> segment_ids,
                                                      std::span<const std::uint8_t> attention_mask);

// hidden[pos] . E^T + bias, using the token embedding E.
Mat mlm_logits(const EncoderParams& params, const Mat& hidden,
               std::span<const std::size_t> positions);

struct SpanLogits {
  Vec start;
  Vec end;
};
SpanLogits qa_logits(const EncoderParams& params, const Mat& hidden);

struct MaskedLmItem {
  std::span<const TokenId> input_ids;
  std::span<const int> segment_ids;
  std::span<const std::size_t> positions;
  std::span<const TokenId> targets;
};

struct SpanItem {
  std::span<const TokenId> input_ids;
  std::span<const int> segment_ids;
  std::size_t valid_begin = 0;  // candidate answer positions [valid_begin, valid_end)
  std::size_t valid_end = 0;
  std::size_t gold_start = 0;
  std::size_t gold_end = 0;
};

using LossSpec = std::variant<std::vector<MaskedLmItem>, std::vector<SpanItem>>;

struct LossOptions {
  ForwardOptions forward;
  std::size_t threads = 1;  // fixed partition; results depend only on this value
};

struct LossAndGrad {
  double loss = 0.0;
  EncoderParams grad;
};

// Masked LM: mean cross-entropy over every masked position in the batch.
// Span: mean over items of the averaged start/end cross-entropy.
LossAndGrad loss_and_grad(const EncoderParams& params, const LossSpec& batch,
                          const LossOptions& options = {});

// Loss only, no gradient.
double loss_value(const EncoderParams& params, const LossSpec& batch,
                  const LossOptions& options = {});

using CheckpointMeta = std::map<std::string, std::string>;

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const CheckpointMeta& meta);

struct Checkpoint {
  EncoderParams params;
  CheckpointMeta meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kiqa
