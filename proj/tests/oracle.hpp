#pragma once

// Straight-line reference implementations used as test oracles. Plain loops
// over std::vector, written independently of the Eigen-based encoder.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "kiqa/encoder.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix tensor(const kiqa::EncoderParams& p, const std::string& name) {
  for (const auto& [n, ref] : p.layout().named) {
    if (n != name) continue;
    Matrix m(ref.rows, std::vector<double>(ref.cols));
    for (std::size_t r = 0; r < ref.rows; ++r) {
      for (std::size_t c = 0; c < ref.cols; ++c) m[r][c] = p.values()[ref.offset + r * ref.cols + c];
    }
    return m;
  }
  throw std::runtime_error("no tensor " + name);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline void add_row(Matrix& m, const Matrix& bias) {
  for (auto& row : m)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[0][j];
}

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias) {
  Matrix out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(x[i].size());
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * gain[0][j] + bias[0][j];
    }
  }
  return out;
}

inline double softmax_ce(const std::vector<double>& logits, std::size_t target) {
  double z = 0;
  for (double l : logits) z += std::exp(l);
  return -(logits[target] - std::log(z));
}

// Dropout-free forward pass over every position (no attention mask).
inline Matrix forward(const kiqa::EncoderParams& p, const std::vector<kiqa::TokenId>& ids,
                      const std::vector<int>& segs) {
  const auto& c = p.config();
  const std::size_t n = ids.size(), d = c.d_model, heads = c.n_heads, dh = d / heads;
  Matrix tok = tensor(p, "embeddings.token"), pos = tensor(p, "embeddings.position"),
         seg = tensor(p, "embeddings.segment");
  Matrix x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] = tok[ids[i]][j] + pos[i][j] + seg[segs[i]][j];
  x = layer_norm(x, tensor(p, "embeddings.ln.gain"), tensor(p, "embeddings.ln.bias"));

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    auto t = [&](const std::string& name) { return tensor(p, pre + name); };
    Matrix q = matmul(x, t("attn.wq")), k = matmul(x, t("attn.wk")), v = matmul(x, t("attn.wv"));
    add_row(q, t("attn.bq"));
    add_row(k, t("attn.bk"));
    add_row(v, t("attn.bv"));
    Matrix ctx(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n);
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0;
          for (std::size_t e = 0; e < dh; ++e) dot += q[i][h * dh + e] * k[j][h * dh + e];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (double& v2 : s) z += (v2 = std::exp(v2 - mx));
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t e = 0; e < dh; ++e) ctx[i][h * dh + e] += s[j] / z * v[j][h * dh + e];
      }
    }
    Matrix attn = matmul(ctx, t("attn.wo"));
    add_row(attn, t("attn.bo"));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) attn[i][j] += x[i][j];
    Matrix x1 = layer_norm(attn, t("ln1.gain"), t("ln1.bias"));
    Matrix ff = matmul(x1, t("ffn.w1"));
    add_row(ff, t("ffn.b1"));
    for (auto& row : ff)
      for (double& v2 : row) v2 = 0.5 * v2 * (1.0 + std::erf(v2 / std::sqrt(2.0)));
    Matrix ff2 = matmul(ff, t("ffn.w2"));
    add_row(ff2, t("ffn.b2"));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) ff2[i][j] += x1[i][j];
    x = layer_norm(ff2, t("ln2.gain"), t("ln2.bias"));
  }
  return x;
}

}  // namespace oracle
