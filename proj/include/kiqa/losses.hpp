#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kiqa/encoder.hpp"

namespace kiqa {

// -log softmax(logits)[target], computed over the entries where `valid` is
// non-zero (all entries when `valid` is empty).
double softmax_cross_entropy(std::span<const double> logits, std::size_t target,
                             std::span<const std::uint8_t> valid = {});

// out = scale * (softmax(logits) - onehot(target)), zero outside `valid`.
void softmax_cross_entropy_grad(std::span<const double> logits, std::size_t target, double scale,
                                std::span<double> out, std::span<const std::uint8_t> valid = {});

// Mean over rows of the per-row cross-entropy. The masked-LM loss.
double mlm_loss(const Mat& logits, std::span<const TokenId> targets);

// Entity completion: the masked positions of each sample are exactly its
// entity tokens, so this stacks them and defers to mlm_loss.
double ec_loss(std::span<const TokenizedSample> samples, std::span<const Mat> masked_logits);

// 0.5 * (CE(start over valid, gold_start) + CE(end over valid, gold_end)).
double span_loss(const Vec& start_logits, const Vec& end_logits, std::size_t gold_start,
                 std::size_t gold_end, std::span<const std::uint8_t> valid);

}  // namespace kiqa
