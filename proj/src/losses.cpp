#include "kiqa/losses.hpp"

#include <cmath>
#include <limits>

#include "kiqa/errors.hpp"

namespace kiqa {

namespace {

bool is_valid(std::span<const std::uint8_t> valid, std::size_t i) {
  return valid.empty() || valid[i] != 0;
}

double log_sum_exp(std::span<const double> logits, std::span<const std::uint8_t> valid,
                   double& max_out) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (is_valid(valid, i)) m = std::max(m, logits[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (is_valid(valid, i)) sum += std::exp(logits[i] - m);
  }
  max_out = m;
  return m + std::log(sum);
}

void check_target(std::span<const double> logits, std::size_t target,
                  std::span<const std::uint8_t> valid) {
  if (!valid.empty() && valid.size() != logits.size()) {
    throw Error(ErrorKind::ShapeMismatch, "valid mask length differs from logits length");
  }
  if (target >= logits.size()) {
    throw Error(ErrorKind::IdOutOfRange, "target " + std::to_string(target) + " out of range");
  }
  if (!is_valid(valid, target)) {
    throw Error(ErrorKind::GoldMasked,
                "gold position " + std::to_string(target) + " is outside the valid positions");
  }
}

}  // namespace

double softmax_cross_entropy(std::span<const double> logits, std::size_t target,
                             std::span<const std::uint8_t> valid) {
  check_target(logits, target, valid);
  double m = 0.0;
  return log_sum_exp(logits, valid, m) - logits[target];
}

void softmax_cross_entropy_grad(std::span<const double> logits, std::size_t target, double scale,
                                std::span<double> out, std::span<const std::uint8_t> valid) {
  check_target(logits, target, valid);
  double m = 0.0;
  const double lse = log_sum_exp(logits, valid, m);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = is_valid(valid, i) ? scale * std::exp(logits[i] - lse) : 0.0;
  }
  out[target] -= scale;
}

double mlm_loss(const Mat& logits, std::span<const TokenId> targets) {
  if (logits.rows() == 0) throw Error(ErrorKind::NoMaskedPositions, "batch has no masked positions");
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw Error(ErrorKind::ShapeMismatch, "one target per logits row is required");
  }
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    std::span<const double> row(logits.data() + r * logits.cols(),
                                static_cast<std::size_t>(logits.cols()));
    total += softmax_cross_entropy(row, static_cast<std::size_t>(targets[r]));
  }
  return total / static_cast<double>(logits.rows());
}

double ec_loss(std::span<const TokenizedSample> samples, std::span<const Mat> masked_logits) {
  if (samples.size() != masked_logits.size()) {
    throw Error(ErrorKind::ShapeMismatch, "one logits matrix per sample is required");
  }
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<TokenId> targets;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].mask_positions.empty()) {
      throw Error(ErrorKind::NoMaskedPositions,
                  "sample " + std::to_string(s) + " has no masked entity tokens");
    }
    if (static_cast<std::size_t>(masked_logits[s].rows()) != samples[s].target_ids.size()) {
      throw Error(ErrorKind::ShapeMismatch, "logits rows differ from the sample's targets");
    }
    rows += masked_logits[s].rows();
    cols = masked_logits[s].cols();
    targets.insert(targets.end(), samples[s].target_ids.begin(), samples[s].target_ids.end());
  }
  Mat stacked(rows, cols);
  Eigen::Index r = 0;
  for (const Mat& m : masked_logits) {
    stacked.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  return mlm_loss(stacked, targets);
}

double span_loss(const Vec& start_logits, const Vec& end_logits, std::size_t gold_start,
                 std::size_t gold_end, std::span<const std::uint8_t> valid) {
  std::span<const double> s(start_logits.data(), static_cast<std::size_t>(start_logits.size()));
  std::span<const double> e(end_logits.data(), static_cast<std::size_t>(end_logits.size()));
  return 0.5 * (softmax_cross_entropy(s, gold_start, valid) +
                softmax_cross_entropy(e, gold_end, valid));
}

}  // namespace kiqa
