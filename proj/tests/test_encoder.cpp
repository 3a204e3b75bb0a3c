#include <random>

#include "doctest.h"
#include "kiqa/encoder.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace kiqa;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.max_len = 16;
  c.vocab_size = 20;
  c.dropout = 0.1;
  return c;
}

// Initialization plus noise so gains, biases and heads are all non-trivial.
EncoderParams random_params(const ModelConfig& c, std::uint64_t seed) {
  EncoderParams p = EncoderParams::initialize(c, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (double& v : p.values()) v += noise(rng);
  return p;
}

std::vector<TokenId> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(rng() % vocab);
  return ids;
}

}  // namespace

TEST_CASE("initialization follows the documented scheme") {
  ModelConfig c = tiny_config();
  EncoderParams p = EncoderParams::initialize(c, 3);
  CHECK(p == EncoderParams::initialize(c, 3));
  CHECK_FALSE(p == EncoderParams::initialize(c, 4));
  for (const auto& [name, ref] : p.layout().named) {
    auto m = p.mat(ref);
    if (name.ends_with("gain")) {
      CHECK(m.isOnes());
    } else if (ref.rows == 1) {
      CHECK(m.isZero());
    } else {
      const double sd = std::sqrt(m.array().square().mean());
      CHECK(sd == doctest::Approx(0.02).epsilon(0.5));
    }
  }
}

TEST_CASE("forward matches the straight-line oracle") {
  ModelConfig c = tiny_config();
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    EncoderParams p = random_params(c, 100 + static_cast<std::uint64_t>(trial));
    const std::size_t n = 1 + rng() % c.max_len;
    auto ids = random_ids(rng, n, c.vocab_size);
    std::vector<int> segs(n);
    for (auto& s : segs) s = static_cast<int>(rng() % 2);
    Mat h = forward(p, ids, segs);
    oracle::Matrix ref = oracle::forward(p, ids, segs);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c.d_model; ++j) {
        CHECK(std::abs(h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - ref[i][j]) <
              1e-10);
      }
    }
  }
}

TEST_CASE("attention rows are distributions over unmasked keys") {
  ModelConfig c = tiny_config();
  EncoderParams p = random_params(c, 5);
  std::vector<TokenId> ids = {2, 7, 8, 9, 3, 0, 0};
  std::vector<int> segs(ids.size(), 0);
  std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1, 0, 0};
  for (const auto& layer : attention_probabilities(p, ids, segs, mask)) {
    for (const Mat& probs : layer) {
      for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(probs(i, 5) == 0.0);
        CHECK(probs(i, 6) == 0.0);
      }
    }
  }
}

TEST_CASE("PAD ids behind the mask do not affect other positions") {
  ModelConfig c = tiny_config();
  EncoderParams p = random_params(c, 6);
  std::vector<int> segs(7, 0);
  std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1, 0, 0};
  Mat a = forward(p, std::vector<TokenId>{2, 7, 8, 9, 3, 0, 11}, segs, mask);
  Mat b = forward(p, std::vector<TokenId>{2, 7, 8, 9, 3, 11, 0}, segs, mask);
  CHECK((a.topRows(5) - b.topRows(5)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("without position and segment embeddings the encoder is permutation-equivariant") {
  ModelConfig c = tiny_config();
  EncoderParams p = random_params(c, 7);
  p.mat(p.layout().position_emb).setZero();
  p.mat(p.layout().segment_emb).setZero();
  std::vector<TokenId> ids = {4, 9, 12, 5, 17};
  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<TokenId> permuted(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) permuted[i] = ids[perm[i]];
  std::vector<int> segs(ids.size(), 0);
  Mat a = forward(p, ids, segs);
  Mat b = forward(p, permuted, segs);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK((b.row(static_cast<Eigen::Index>(i)) - a.row(static_cast<Eigen::Index>(perm[i])))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward input validation") {
  ModelConfig c = tiny_config();
  EncoderParams p = random_params(c, 8);
  CHECK_THROWS_AS_KIND(forward(p, std::vector<TokenId>{1, 20}, std::vector<int>{0, 0}),
                       ErrorKind::IdOutOfRange);
  CHECK_THROWS_AS_KIND(forward(p, std::vector<TokenId>{1, 2}, std::vector<int>{0}),
                       ErrorKind::ShapeMismatch);
  CHECK_THROWS_AS_KIND(forward(p, std::vector<TokenId>(17, 1), std::vector<int>(17, 0)),
                       ErrorKind::ShapeMismatch);
  CHECK_THROWS(forward(p, std::vector<TokenId>{1, 2}, std::vector<int>{0, 2}));
}

TEST_CASE("dropout is reproducible per seed and off at inference") {
  ModelConfig c = tiny_config();
  EncoderParams p = random_params(c, 9);
  std::vector<TokenId> ids = {2, 5, 6, 7, 3};
  std::vector<int> segs(5, 0);
  ForwardOptions train{true, 42};
  Mat a = forward(p, ids, segs, {}, train);
  Mat b = forward(p, ids, segs, {}, train);
  CHECK(a == b);
  Mat other = forward(p, ids, segs, {}, ForwardOptions{true, 43});
  CHECK_FALSE(a == other);
  CHECK(forward(p, ids, segs) == forward(p, ids, segs, {}, ForwardOptions{false, 42}));
}

TEST_CASE("mlm_logits uses the tied token embedding") {
  ModelConfig c = tiny_config();
  c.vocab_size = 8;  // = d_model, so the embedding can be orthonormal
  EncoderParams p = random_params(c, 10);
  const auto& lay = p.layout();
  Mat zero = Mat::Zero(3, 8);
  std::vector<std::size_t> pos = {0, 2};
  Mat logits = mlm_logits(p, zero, pos);
  CHECK(logits.rows() == 2);
  CHECK(logits.cols() == 8);
  CHECK(logits.row(1) == p.mat(lay.mlm_bias).row(0));

  p.mat(lay.token_emb).setIdentity();
  p.mat(lay.mlm_bias).setZero();
  Mat h = Mat::Zero(1, 8);
  h.row(0) = p.mat(lay.token_emb).row(5);
  Eigen::Index arg;
  mlm_logits(p, h, std::vector<std::size_t>{0}).row(0).maxCoeff(&arg);
  CHECK(arg == 5);

  // Editing the embedding is visible to the head immediately.
  p.mat(lay.token_emb)(5, 5) = 3.0;
  CHECK(mlm_logits(p, h, std::vector<std::size_t>{0})(0, 5) == 3.0);
  CHECK_THROWS(mlm_logits(p, h, std::vector<std::size_t>{1}));
}

TEST_CASE("qa_logits is an affine map per position") {
  ModelConfig c = tiny_config();
  EncoderParams p = random_params(c, 11);
  const auto& lay = p.layout();
  const double bs = p.mat(lay.qa_start_b)(0, 0), be = p.mat(lay.qa_end_b)(0, 0);
  SpanLogits z = qa_logits(p, Mat::Zero(4, 8));
  CHECK((z.start.array() == bs).all());
  CHECK((z.end.array() == be).all());

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Mat h(5, 8);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = nd(rng);
  SpanLogits a = qa_logits(p, h);
  SpanLogits b = qa_logits(p, 2.5 * h);
  oracle::Matrix ws = oracle::tensor(p, "qa.start.w"), we = oracle::tensor(p, "qa.end.w");
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(b.start(i) - bs == doctest::Approx(2.5 * (a.start(i) - bs)));
    double s = bs, e = be;
    for (std::size_t j = 0; j < 8; ++j) {
      s += h(i, static_cast<Eigen::Index>(j)) * ws[j][0];
      e += h(i, static_cast<Eigen::Index>(j)) * we[j][0];
    }
    CHECK(std::abs(a.start(i) - s) < 1e-10);
    CHECK(std::abs(a.end(i) - e) < 1e-10);
  }
}

TEST_CASE("batch reductions: identical items, loss_value, thread partitions") {
  ModelConfig c = tiny_config();
  EncoderParams p = random_params(c, 12);
  std::vector<TokenId> ids = {2, 5, 4, 4, 3};
  std::vector<int> segs(5, 0);
  std::vector<std::size_t> pos = {2, 3};
  std::vector<TokenId> tgt = {9, 10};
  MaskedLmItem item{ids, segs, pos, tgt};
  const double one = loss_and_grad(p, std::vector<MaskedLmItem>{item}).loss;
  const double three = loss_and_grad(p, std::vector<MaskedLmItem>{item, item, item}).loss;
  CHECK(three == doctest::Approx(one).epsilon(1e-14));

  std::vector<SpanItem> spans;
  std::vector<std::vector<TokenId>> store;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 7; ++i) store.push_back(random_ids(rng, 9, c.vocab_size));
  std::vector<int> qsegs = {0, 0, 0, 1, 1, 1, 1, 1, 1};
  for (int i = 0; i < 7; ++i) spans.push_back({store[i], qsegs, 3, 8, 4, 6});
  LossAndGrad single = loss_and_grad(p, spans);
  CHECK(loss_value(p, spans) == single.loss);
  LossOptions three_threads;
  three_threads.threads = 3;
  LossAndGrad t1 = loss_and_grad(p, spans, three_threads);
  LossAndGrad t2 = loss_and_grad(p, spans, three_threads);
  CHECK(t1.loss == t2.loss);
  CHECK(t1.grad == t2.grad);
  CHECK(t1.loss == single.loss);
  double worst = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    worst = std::max(worst, std::abs(t1.grad.values()[i] - single.grad.values()[i]));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("checkpoint round-trip and validation") {
  ModelConfig c = tiny_config();
  EncoderParams p = random_params(c, 13);
  TempDir dir;
  const auto path = dir.path / "model.ckpt";
  save_checkpoint(path, p, {{"config_hash", "abc"}});
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.params == p);
  CHECK(ck.meta.at("config_hash") == "abc");

  const std::string bytes = read_text(path);
  write_text(dir.path / "trailing.ckpt", bytes + "x");
  CHECK_THROWS_AS_KIND(load_checkpoint(dir.path / "trailing.ckpt"), ErrorKind::Parse);
  write_text(dir.path / "short.ckpt", bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS_KIND(load_checkpoint(dir.path / "short.ckpt"), ErrorKind::Parse);
  write_text(dir.path / "magic.ckpt", "NOPE" + bytes.substr(4));
  CHECK_THROWS_AS_KIND(load_checkpoint(dir.path / "magic.ckpt"), ErrorKind::Parse);
  CHECK_THROWS_AS_KIND(load_checkpoint(dir.path / "missing.ckpt"), ErrorKind::Io);
}
