#include "kiqa/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <thread>

#include "json.hpp"
#include "kiqa/errors.hpp"
#include "kiqa/losses.hpp"
#include "kiqa/rng.hpp"

namespace kiqa {

namespace {

constexpr double kLayerNormEps = 1e-5;

using RowVec = Eigen::RowVectorXd;

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidArgument, msg); };
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || max_len < 1 || vocab_size < 1) {
    fail("model dimensions must all be at least 1");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

ParamLayout ParamLayout::build(const ModelConfig& c) {
  c.validate();
  ParamLayout p;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    TensorRef t{p.total, rows, cols};
    p.total += rows * cols;
    p.named.emplace_back(name, t);
    return t;
  };
  const std::size_t d = c.d_model;
  p.token_emb = add("embeddings.token", c.vocab_size, d);
  p.position_emb = add("embeddings.position", c.max_len, d);
  p.segment_emb = add("embeddings.segment", 2, d);
  p.emb_ln_gain = add("embeddings.ln.gain", 1, d);
  p.emb_ln_bias = add("embeddings.ln.bias", 1, d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerRefs r;
    r.wq = add(pre + "attn.wq", d, d);
    r.bq = add(pre + "attn.bq", 1, d);
    r.wk = add(pre + "attn.wk", d, d);
    r.bk = add(pre + "attn.bk", 1, d);
    r.wv = add(pre + "attn.wv", d, d);
    r.bv = add(pre + "attn.bv", 1, d);
    r.wo = add(pre + "attn.wo", d, d);
    r.bo = add(pre + "attn.bo", 1, d);
    r.ln1_gain = add(pre + "ln1.gain", 1, d);
    r.ln1_bias = add(pre + "ln1.bias", 1, d);
    r.w1 = add(pre + "ffn.w1", d, c.d_ff);
    r.b1 = add(pre + "ffn.b1", 1, c.d_ff);
    r.w2 = add(pre + "ffn.w2", c.d_ff, d);
    r.b2 = add(pre + "ffn.b2", 1, d);
    r.ln2_gain = add(pre + "ln2.gain", 1, d);
    r.ln2_bias = add(pre + "ln2.bias", 1, d);
    p.layers.push_back(r);
  }
  p.mlm_bias = add("mlm.bias", 1, c.vocab_size);
  p.qa_start_w = add("qa.start.w", d, 1);
  p.qa_start_b = add("qa.start.b", 1, 1);
  p.qa_end_w = add("qa.end.w", d, 1);
  p.qa_end_b = add("qa.end.b", 1, 1);
  return p;
}

EncoderParams::EncoderParams(const ModelConfig& config)
    : config_(config), layout_(ParamLayout::build(config)), data_(layout_.total, 0.0) {}

EncoderParams EncoderParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  EncoderParams p(config);
  Rng rng = make_rng(seed, 0xE0C0DE);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const auto& [name, t] : p.layout_.named) {
    const bool gain = name.ends_with(".gain");
    const bool bias = t.rows == 1 && !gain;  // biases, LN offsets, MLM bias
    for (std::size_t i = 0; i < t.size(); ++i) {
      double& v = p.data_[t.offset + i];
      if (gain) {
        v = 1.0;
      } else if (bias) {
        v = 0.0;
      } else {
        v = normal(rng);
      }
    }
  }
  return p;
}

bool EncoderParams::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

// ---------------------------------------------------------------------------
// Building blocks. Every forward helper records what its backward needs.

struct LayerNormCache {
  Mat xhat;
  Vec rstd;
};

Mat layer_norm(const Mat& x, const ConstMatMap& gain, const ConstMatMap& bias,
               LayerNormCache& cache) {
  const Eigen::Index n = x.rows();
  cache.xhat.resize(n, x.cols());
  cache.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
  }
  Mat y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, MatMap dgain, MatMap dbias,
                        const ConstMatMap& gain) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_dxhat = dxhat.row(i).sum() * inv_d;
    const double mean_dxhat_xhat = dxhat.row(i).dot(cache.xhat.row(i)) * inv_d;
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - mean_dxhat -
                                 cache.xhat.row(i).array() * mean_dxhat_xhat)
                                    .matrix();
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

// Inverted dropout; the returned mask is already scaled by 1/(1-p).
// An empty mask means dropout is off.
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
  return mask;
}

struct LayerCache {
  Mat x_in;
  Mat q, k, v;
  std::vector<Mat> probs;
  Mat context;
  Mat attn_drop;
  LayerNormCache ln1;
  Mat x1;
  Mat ff_pre;
  Mat ff_act;
  Mat ff_drop;
  LayerNormCache ln2;
};

struct ForwardCache {
  std::vector<TokenId> ids;
  std::vector<int> segments;
  LayerNormCache emb_ln;
  Mat emb_drop;
  std::vector<LayerCache> layers;
  Mat hidden;
};

void check_inputs(const EncoderParams& params, std::span<const TokenId> ids,
                  std::span<const int> segments, std::span<const std::uint8_t> attention_mask) {
  const ModelConfig& c = params.config();
  if (ids.empty()) throw Error(ErrorKind::ShapeMismatch, "empty input sequence");
  if (segments.size() != ids.size()) {
    throw Error(ErrorKind::ShapeMismatch, "segment_ids and input_ids differ in length");
  }
  if (!attention_mask.empty() && attention_mask.size() != ids.size()) {
    throw Error(ErrorKind::ShapeMismatch, "attention_mask and input_ids differ in length");
  }
  if (ids.size() > c.max_len) {
    throw Error(ErrorKind::ShapeMismatch, "sequence of length " + std::to_string(ids.size()) +
                                              " exceeds max_len " + std::to_string(c.max_len));
  }
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw Error(ErrorKind::IdOutOfRange, "token id " + std::to_string(id) + " out of range");
    }
  }
  for (int s : segments) {
    if (s != 0 && s != 1) throw Error(ErrorKind::IdOutOfRange, "segment id must be 0 or 1");
  }
  if (!attention_mask.empty() &&
      std::all_of(attention_mask.begin(), attention_mask.end(), [](auto m) { return m == 0; })) {
    throw Error(ErrorKind::ShapeMismatch, "attention_mask excludes every position");
  }
}

void run_forward(const EncoderParams& params, std::span<const TokenId> ids,
                 std::span<const int> segments, std::span<const std::uint8_t> attention_mask,
                 const ForwardOptions& options, ForwardCache& cache) {
  check_inputs(params, ids, segments, attention_mask);
  const ModelConfig& c = params.config();
  const ParamLayout& lay = params.layout();
  const auto n = static_cast<Eigen::Index>(ids.size());
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto heads = static_cast<Eigen::Index>(c.n_heads);
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = options.train && c.dropout > 0.0;
  Rng rng = make_rng(options.dropout_seed, 0xD50);

  cache.ids.assign(ids.begin(), ids.end());
  cache.segments.assign(segments.begin(), segments.end());

  const ConstMatMap tok = params.mat(lay.token_emb);
  const ConstMatMap pos = params.mat(lay.position_emb);
  const ConstMatMap seg = params.mat(lay.segment_emb);
  Mat e(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    e.row(i) = tok.row(ids[static_cast<std::size_t>(i)]) + pos.row(i) +
               seg.row(segments[static_cast<std::size_t>(i)]);
  }
  Mat x = layer_norm(e, params.mat(lay.emb_ln_gain), params.mat(lay.emb_ln_bias), cache.emb_ln);
  if (drop) {
    cache.emb_drop = dropout_mask(n, d, c.dropout, rng);
    x.array() *= cache.emb_drop.array();
  } else {
    cache.emb_drop.resize(0, 0);
  }

  // Eigen's vectorized exp does not map -inf to exactly zero, so excluded
  // keys are zeroed explicitly after exponentiation.
  std::vector<Eigen::Index> excluded;
  if (!attention_mask.empty()) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (attention_mask[static_cast<std::size_t>(j)] == 0) excluded.push_back(j);
    }
  }

  cache.layers.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerRefs& r = lay.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.x_in = x;
    lc.q = x * params.mat(r.wq);
    lc.q.rowwise() += params.mat(r.bq).row(0);
    lc.k = x * params.mat(r.wk);
    lc.k.rowwise() += params.mat(r.bk).row(0);
    lc.v = x * params.mat(r.wv);
    lc.v.rowwise() += params.mat(r.bv).row(0);

    lc.probs.resize(c.n_heads);
    lc.context.resize(n, d);
    for (Eigen::Index h = 0; h < heads; ++h) {
      Mat s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * scale;
      for (Eigen::Index j : excluded) s.col(j).setConstant(-std::numeric_limits<double>::infinity());
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        for (Eigen::Index j : excluded) s(i, j) = 0.0;
        s.row(i) /= s.row(i).sum();
      }
      lc.context.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
      lc.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Mat attn = lc.context * params.mat(r.wo);
    attn.rowwise() += params.mat(r.bo).row(0);
    if (drop) {
      lc.attn_drop = dropout_mask(n, d, c.dropout, rng);
      attn.array() *= lc.attn_drop.array();
    } else {
      lc.attn_drop.resize(0, 0);
    }
    lc.x1 = layer_norm(x + attn, params.mat(r.ln1_gain), params.mat(r.ln1_bias), lc.ln1);

    lc.ff_pre = lc.x1 * params.mat(r.w1);
    lc.ff_pre.rowwise() += params.mat(r.b1).row(0);
    lc.ff_act = lc.ff_pre.unaryExpr([](double v) { return gelu(v); });
    Mat ff = lc.ff_act * params.mat(r.w2);
    ff.rowwise() += params.mat(r.b2).row(0);
    if (drop) {
      lc.ff_drop = dropout_mask(n, d, c.dropout, rng);
      ff.array() *= lc.ff_drop.array();
    } else {
      lc.ff_drop.resize(0, 0);
    }
    x = layer_norm(lc.x1 + ff, params.mat(r.ln2_gain), params.mat(r.ln2_bias), lc.ln2);
  }
  cache.hidden = std::move(x);
}

// Accumulates parameter gradients into `grad` given dL/dhidden.
void run_backward(const EncoderParams& params, const ForwardCache& cache, Mat dx,
                  EncoderParams& grad) {
  const ModelConfig& c = params.config();
  const ParamLayout& lay = params.layout();
  const Eigen::Index d = static_cast<Eigen::Index>(c.d_model);
  const Eigen::Index heads = static_cast<Eigen::Index>(c.n_heads);
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const LayerRefs& r = lay.layers[li];
    const LayerCache& lc = cache.layers[li];

    // Feed-forward sublayer.
    Mat dr2 = layer_norm_backward(dx, lc.ln2, grad.mat(r.ln2_gain), grad.mat(r.ln2_bias),
                                  params.mat(r.ln2_gain));
    Mat dff = dr2;
    if (lc.ff_drop.size() > 0) dff.array() *= lc.ff_drop.array();
    grad.mat(r.w2).noalias() += lc.ff_act.transpose() * dff;
    grad.mat(r.b2).row(0) += dff.colwise().sum();
    Mat dpre = dff * params.mat(r.w2).transpose();
    for (Eigen::Index i = 0; i < dpre.size(); ++i) {
      dpre.data()[i] *= gelu_grad(lc.ff_pre.data()[i]);
    }
    grad.mat(r.w1).noalias() += lc.x1.transpose() * dpre;
    grad.mat(r.b1).row(0) += dpre.colwise().sum();
    Mat dx1 = dr2;
    dx1.noalias() += dpre * params.mat(r.w1).transpose();

    // Attention sublayer.
    Mat dr1 = layer_norm_backward(dx1, lc.ln1, grad.mat(r.ln1_gain), grad.mat(r.ln1_bias),
                                  params.mat(r.ln1_gain));
    Mat dattn = dr1;
    if (lc.attn_drop.size() > 0) dattn.array() *= lc.attn_drop.array();
    grad.mat(r.wo).noalias() += lc.context.transpose() * dattn;
    grad.mat(r.bo).row(0) += dattn.colwise().sum();
    Mat dcontext = dattn * params.mat(r.wo).transpose();

    Mat dq(lc.q.rows(), d), dk(lc.k.rows(), d), dv(lc.v.rows(), d);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Mat& p = lc.probs[static_cast<std::size_t>(h)];
      const auto dctx = dcontext.middleCols(h * dh, dh);
      Mat dp = dctx * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dctx;
      Vec row_dot = (dp.array() * p.array()).rowwise().sum();
      Mat ds = p.array() * (dp.colwise() - row_dot).array();
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    grad.mat(r.wq).noalias() += lc.x_in.transpose() * dq;
    grad.mat(r.bq).row(0) += dq.colwise().sum();
    grad.mat(r.wk).noalias() += lc.x_in.transpose() * dk;
    grad.mat(r.bk).row(0) += dk.colwise().sum();
    grad.mat(r.wv).noalias() += lc.x_in.transpose() * dv;
    grad.mat(r.bv).row(0) += dv.colwise().sum();

    dx = dr1;
    dx.noalias() += dq * params.mat(r.wq).transpose();
    dx.noalias() += dk * params.mat(r.wk).transpose();
    dx.noalias() += dv * params.mat(r.wv).transpose();
  }

  if (cache.emb_drop.size() > 0) dx.array() *= cache.emb_drop.array();
  Mat de = layer_norm_backward(dx, cache.emb_ln, grad.mat(lay.emb_ln_gain),
                               grad.mat(lay.emb_ln_bias), params.mat(lay.emb_ln_gain));
  MatMap dtok = grad.mat(lay.token_emb);
  MatMap dpos = grad.mat(lay.position_emb);
  MatMap dseg = grad.mat(lay.segment_emb);
  for (Eigen::Index i = 0; i < de.rows(); ++i) {
    dtok.row(cache.ids[static_cast<std::size_t>(i)]) += de.row(i);
    dpos.row(i) += de.row(i);
    dseg.row(cache.segments[static_cast<std::size_t>(i)]) += de.row(i);
  }
}

void check_positions(const Mat& hidden, std::span<const std::size_t> positions) {
  for (std::size_t p : positions) {
    if (p >= static_cast<std::size_t>(hidden.rows())) {
      throw Error(ErrorKind::IdOutOfRange, "position " + std::to_string(p) + " out of range");
    }
  }
}

// Runs `fn(item_index, worker_index)` over items split into `threads`
// contiguous chunks. The partition depends only on (count, threads).
template <typename Fn>
void parallel_chunks(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  auto chunk = [&](std::size_t w) {
    const std::size_t begin = count * w / threads;
    const std::size_t end = count * (w + 1) / threads;
    for (std::size_t i = begin; i < end; ++i) fn(i, w);
  };
  if (threads == 1) {
    chunk(0);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          chunk(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

LossAndGrad compute(const EncoderParams& params, const LossSpec& batch,
                    const LossOptions& options, bool want_grad) {
  const ParamLayout& lay = params.layout();
  const std::size_t items = std::visit([](const auto& b) { return b.size(); }, batch);
  if (items == 0) throw Error(ErrorKind::InvalidArgument, "empty batch");
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.threads, items));

  std::vector<EncoderParams> partial;
  if (want_grad) partial.assign(workers, params.zeros_like());

  auto item_options = [&](std::size_t i) {
    ForwardOptions f = options.forward;
    f.dropout_seed = mix_seed(options.forward.dropout_seed, i);
    return f;
  };

  LossAndGrad result;
  if (const auto* mlm = std::get_if<std::vector<MaskedLmItem>>(&batch)) {
    // Row offsets so every masked position has a fixed slot in the sum.
    std::vector<std::size_t> offset(items + 1, 0);
    for (std::size_t i = 0; i < items; ++i) {
      if ((*mlm)[i].positions.size() != (*mlm)[i].targets.size()) {
        throw Error(ErrorKind::ShapeMismatch, "positions and targets differ in length");
      }
      offset[i + 1] = offset[i] + (*mlm)[i].positions.size();
    }
    const std::size_t total = offset[items];
    if (total == 0) throw Error(ErrorKind::NoMaskedPositions, "batch has no masked positions");
    std::vector<double> row_loss(total, 0.0);
    const double inv_total = 1.0 / static_cast<double>(total);

    parallel_chunks(items, workers, [&](std::size_t i, std::size_t w) {
      const MaskedLmItem& item = (*mlm)[i];
      ForwardCache cache;
      run_forward(params, item.input_ids, item.segment_ids, {}, item_options(i), cache);
      Mat logits = mlm_logits(params, cache.hidden, item.positions);
      Mat dlogits(logits.rows(), logits.cols());
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        std::span<const double> row(logits.data() + r * logits.cols(),
                                    static_cast<std::size_t>(logits.cols()));
        const auto target = static_cast<std::size_t>(item.targets[static_cast<std::size_t>(r)]);
        row_loss[offset[i] + static_cast<std::size_t>(r)] = softmax_cross_entropy(row, target);
        if (want_grad) {
          softmax_cross_entropy_grad(
              row, target, inv_total,
              std::span<double>(dlogits.data() + r * dlogits.cols(),
                                static_cast<std::size_t>(dlogits.cols())));
        }
      }
      if (!want_grad) return;
      EncoderParams& g = partial[w];
      const ConstMatMap emb = params.mat(lay.token_emb);
      Mat gathered(logits.rows(), emb.cols());
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        gathered.row(r) = cache.hidden.row(static_cast<Eigen::Index>(item.positions[r]));
      }
      g.mat(lay.token_emb).noalias() += dlogits.transpose() * gathered;
      g.mat(lay.mlm_bias).row(0) += dlogits.colwise().sum();
      Mat dhidden = Mat::Zero(cache.hidden.rows(), cache.hidden.cols());
      Mat dgathered = dlogits * emb;
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        dhidden.row(static_cast<Eigen::Index>(item.positions[r])) += dgathered.row(r);
      }
      run_backward(params, cache, std::move(dhidden), g);
    });
    double sum = 0.0;
    for (double v : row_loss) sum += v;
    result.loss = sum / static_cast<double>(total);
  } else {
    const auto& spans = std::get<std::vector<SpanItem>>(batch);
    std::vector<double> item_loss(items, 0.0);
    const double inv_items = 1.0 / static_cast<double>(items);

    parallel_chunks(items, workers, [&](std::size_t i, std::size_t w) {
      const SpanItem& item = spans[i];
      ForwardCache cache;
      run_forward(params, item.input_ids, item.segment_ids, {}, item_options(i), cache);
      const std::size_t n = item.input_ids.size();
      if (item.valid_begin >= item.valid_end || item.valid_end > n) {
        throw Error(ErrorKind::ShapeMismatch, "invalid candidate range for span item");
      }
      std::vector<std::uint8_t> valid(n, 0);
      std::fill(valid.begin() + static_cast<std::ptrdiff_t>(item.valid_begin),
                valid.begin() + static_cast<std::ptrdiff_t>(item.valid_end), 1);
      SpanLogits logits = qa_logits(params, cache.hidden);
      item_loss[i] = span_loss(logits.start, logits.end, item.gold_start, item.gold_end, valid);
      if (!want_grad) return;
      Vec dstart(static_cast<Eigen::Index>(n));
      Vec dend(static_cast<Eigen::Index>(n));
      softmax_cross_entropy_grad({logits.start.data(), n}, item.gold_start, 0.5 * inv_items,
                                 {dstart.data(), n}, valid);
      softmax_cross_entropy_grad({logits.end.data(), n}, item.gold_end, 0.5 * inv_items,
                                 {dend.data(), n}, valid);
      EncoderParams& g = partial[w];
      g.mat(lay.qa_start_w).col(0).noalias() += cache.hidden.transpose() * dstart;
      g.mat(lay.qa_start_b)(0, 0) += dstart.sum();
      g.mat(lay.qa_end_w).col(0).noalias() += cache.hidden.transpose() * dend;
      g.mat(lay.qa_end_b)(0, 0) += dend.sum();
      Mat dhidden = dstart * params.mat(lay.qa_start_w).col(0).transpose();
      dhidden.noalias() += dend * params.mat(lay.qa_end_w).col(0).transpose();
      run_backward(params, cache, std::move(dhidden), g);
    });
    double sum = 0.0;
    for (double v : item_loss) sum += v;
    result.loss = sum * inv_items;
  }

  if (!std::isfinite(result.loss)) {
    throw Error(ErrorKind::NonFinite, "loss is not finite");
  }
  if (want_grad) {
    result.grad = std::move(partial[0]);
    for (std::size_t w = 1; w < workers; ++w) {
      auto dst = result.grad.values();
      auto src = partial[w].values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  return result;
}

}  // namespace

Mat forward(const EncoderParams& params, std::span<const TokenId> input_ids,
            std::span<const int> segment_ids, std::span<const std::uint8_t> attention_mask,
            const ForwardOptions& options) {
  ForwardCache cache;
  run_forward(params, input_ids, segment_ids, attention_mask, options, cache);
  return std::move(cache.hidden);
}

std::vector<std::vector<Mat>> attention_probabilities(const EncoderParams& params,
                                                      std::span<const TokenId> input_ids,
                                                      std::span<const int> segment_ids,
                                                      std::span<const std::uint8_t> attention_mask) {
  ForwardCache cache;
  run_forward(params, input_ids, segment_ids, attention_mask, {}, cache);
  std::vector<std::vector<Mat>> out;
  for (auto& layer : cache.layers) out.push_back(std::move(layer.probs));
  return out;
}

Mat mlm_logits(const EncoderParams& params, const Mat& hidden,
               std::span<const std::size_t> positions) {
  check_positions(hidden, positions);
  const ParamLayout& lay = params.layout();
  const ConstMatMap emb = params.mat(lay.token_emb);
  Mat gathered(static_cast<Eigen::Index>(positions.size()), hidden.cols());
  for (std::size_t r = 0; r < positions.size(); ++r) {
    gathered.row(static_cast<Eigen::Index>(r)) = hidden.row(static_cast<Eigen::Index>(positions[r]));
  }
  Mat logits = gathered * emb.transpose();
  logits.rowwise() += params.mat(lay.mlm_bias).row(0);
  return logits;
}

SpanLogits qa_logits(const EncoderParams& params, const Mat& hidden) {
  const ParamLayout& lay = params.layout();
  if (hidden.cols() != static_cast<Eigen::Index>(params.config().d_model)) {
    throw Error(ErrorKind::ShapeMismatch, "hidden width differs from d_model");
  }
  SpanLogits out;
  out.start = hidden * params.mat(lay.qa_start_w).col(0);
  out.start.array() += params.mat(lay.qa_start_b)(0, 0);
  out.end = hidden * params.mat(lay.qa_end_w).col(0);
  out.end.array() += params.mat(lay.qa_end_b)(0, 0);
  return out;
}

LossAndGrad loss_and_grad(const EncoderParams& params, const LossSpec& batch,
                          const LossOptions& options) {
  return compute(params, batch, options, true);
}

double loss_value(const EncoderParams& params, const LossSpec& batch, const LossOptions& options) {
  return compute(params, batch, options, false).loss;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic line, JSON header, then little-endian doubles.

namespace {
constexpr std::string_view kMagic = "KIQA-CHECKPOINT v1\n";
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},   {"d_model", c.d_model},
          {"d_ff", c.d_ff},         {"max_len", c.max_len},   {"vocab_size", c.vocab_size},
          {"dropout", c.dropout}};
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const CheckpointMeta& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : params.layout().named) {
    tensors.push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  nlohmann::json header = {
      {"config", config_to_json(params.config())}, {"tensors", tensors}, {"meta", meta}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto values = params.values();
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kMagic) throw Error(ErrorKind::Parse, path.string() + ": not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw Error(ErrorKind::Parse, path.string() + ": bad header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    const auto& c = header.at("config");
    ModelConfig config;
    config.n_layers = c.at("n_layers").get<std::size_t>();
    config.n_heads = c.at("n_heads").get<std::size_t>();
    config.d_model = c.at("d_model").get<std::size_t>();
    config.d_ff = c.at("d_ff").get<std::size_t>();
    config.max_len = c.at("max_len").get<std::size_t>();
    config.vocab_size = c.at("vocab_size").get<std::size_t>();
    config.dropout = c.at("dropout").get<double>();
    ck.params = EncoderParams(config);
    const auto& named = ck.params.layout().named;
    const auto& tensors = header.at("tensors");
    if (tensors.size() != named.size()) {
      throw Error(ErrorKind::ShapeMismatch, "tensor count does not match the config");
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != named[i].first ||
          tensors[i].at("rows").get<std::size_t>() != named[i].second.rows ||
          tensors[i].at("cols").get<std::size_t>() != named[i].second.cols) {
        throw Error(ErrorKind::ShapeMismatch, "tensor " + named[i].first +
                                                  " has a shape that disagrees with the config");
      }
    }
    ck.meta = header.at("meta").get<CheckpointMeta>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  auto values = ck.params.values();
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw Error(ErrorKind::Parse, path.string() + ": truncated tensor data");
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorKind::Parse, path.string() + ": trailing bytes after tensor data");
  }
  return ck;
}

}  // namespace kiqa
