// SPDX-License-Identifier: Apache-2.0
//
// Small BERT-style encoder: token + learned position embeddings, then
// post-norm transformer layers (self-attention and GELU feed-forward, each
// followed by residual add and layer norm). The MLM head reuses the token
// embedding matrix as its output projection.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tckit/autodiff.hpp"
#include "tckit/error.hpp"
#include "tckit/prompt.hpp"
#include "tckit/rng.hpp"
#include "tckit/tokenizer.hpp"

namespace tckit {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 64;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-12;

  void validate() const {
    if (vocab_size <= static_cast<std::size_t>(special::kCount)) throw Error("vocab_size must exceed the reserved ids");
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0) throw Error("encoder dimensions must be positive");
    if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
    if (max_seq_len < 2) throw Error("max_seq_len must be at least 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout_rate must be in [0, 1)");
    if (!(layer_norm_eps > 0.0)) throw Error("layer_norm_eps must be positive");
  }

  bool operator==(const EncoderConfig&) const = default;
};

template <class T>
struct LayerTensors {
  T query_weight, query_bias;
  T key_weight, key_bias;
  T value_weight, value_bias;
  T output_weight, output_bias;
  T attention_norm_scale, attention_norm_bias;
  T ffn_in_weight, ffn_in_bias;
  T ffn_out_weight, ffn_out_bias;
  T ffn_norm_scale, ffn_norm_bias;
};

// All trainable tensors of one encoder. T = Matrix for parameter values and
// gradients, T = Var for the same tensors bound to a tape.
template <class T>
struct EncoderTensors {
  EncoderConfig config;
  T token_embedding;     // [vocab x d_model], also the MLM output projection
  T position_embedding;  // [max_seq_len x d_model]
  std::vector<LayerTensors<T>> layers;
  T mlm_bias;            // [1 x vocab]
};

using EncoderParams = EncoderTensors<Matrix>;
using BoundEncoder = EncoderTensors<Var>;

// Calls f(name, t...) for every tensor slot of the given structs in a fixed
// order. All structs must have the same layer count.
template <class F, class... S>
void visit_tensors(F&& f, S&... s) {
  f(std::string("embeddings.token"), s.token_embedding...);
  f(std::string("embeddings.position"), s.position_embedding...);
  const std::size_t n = std::get<0>(std::forward_as_tuple(s...)).layers.size();
  if (((s.layers.size() != n) || ...)) throw Error("visit_tensors: layer count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    f(p + "attention.query.weight", s.layers[i].query_weight...);
    f(p + "attention.query.bias", s.layers[i].query_bias...);
    f(p + "attention.key.weight", s.layers[i].key_weight...);
    f(p + "attention.key.bias", s.layers[i].key_bias...);
    f(p + "attention.value.weight", s.layers[i].value_weight...);
    f(p + "attention.value.bias", s.layers[i].value_bias...);
    f(p + "attention.output.weight", s.layers[i].output_weight...);
    f(p + "attention.output.bias", s.layers[i].output_bias...);
    f(p + "attention.norm.scale", s.layers[i].attention_norm_scale...);
    f(p + "attention.norm.bias", s.layers[i].attention_norm_bias...);
    f(p + "ffn.in.weight", s.layers[i].ffn_in_weight...);
    f(p + "ffn.in.bias", s.layers[i].ffn_in_bias...);
    f(p + "ffn.out.weight", s.layers[i].ffn_out_weight...);
    f(p + "ffn.out.bias", s.layers[i].ffn_out_bias...);
    f(p + "ffn.norm.scale", s.layers[i].ffn_norm_scale...);
    f(p + "ffn.norm.bias", s.layers[i].ffn_norm_bias...);
  }
  f(std::string("mlm.bias"), s.mlm_bias...);
}

// Same-shaped struct with a different element type, slots default-initialized.
template <class U, class T>
EncoderTensors<U> like(const EncoderTensors<T>& src) {
  EncoderTensors<U> out;
  out.config = src.config;
  out.layers.resize(src.layers.size());
  return out;
}

inline EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams out = like<Matrix>(p);
  visit_tensors([](const std::string&, Matrix& dst, const Matrix& src) { dst = Matrix::Zero(src.rows(), src.cols()); },
                out, p);
  return out;
}

inline bool operator==(const EncoderParams& a, const EncoderParams& b) {
  if (!(a.config == b.config) || a.layers.size() != b.layers.size()) return false;
  bool same = true;
  visit_tensors(
      [&](const std::string&, const Matrix& x, const Matrix& y) {
        same = same && x.rows() == y.rows() && x.cols() == y.cols() && x == y;
      },
      a, b);
  return same;
}

inline std::size_t parameter_count(const EncoderParams& p) {
  std::size_t n = 0;
  visit_tensors([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); }, p);
  return n;
}

// Weights ~ N(0, 0.02) truncated at two standard deviations, biases 0,
// layer-norm scales 1.
inline EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto d = static_cast<Index>(cfg.d_model);
  const auto ff = static_cast<Index>(cfg.d_ff);
  const auto v = static_cast<Index>(cfg.vocab_size);
  const auto weight = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.truncated_normal(0.02);
    return m;
  };
  EncoderParams p;
  p.config = cfg;
  p.token_embedding = weight(v, d);
  p.position_embedding = weight(static_cast<Index>(cfg.max_seq_len), d);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerTensors<Matrix> L;
    L.query_weight = weight(d, d);
    L.query_bias = Matrix::Zero(1, d);
    L.key_weight = weight(d, d);
    L.key_bias = Matrix::Zero(1, d);
    L.value_weight = weight(d, d);
    L.value_bias = Matrix::Zero(1, d);
    L.output_weight = weight(d, d);
    L.output_bias = Matrix::Zero(1, d);
    L.attention_norm_scale = Matrix::Ones(1, d);
    L.attention_norm_bias = Matrix::Zero(1, d);
    L.ffn_in_weight = weight(d, ff);
    L.ffn_in_bias = Matrix::Zero(1, ff);
    L.ffn_out_weight = weight(ff, d);
    L.ffn_out_bias = Matrix::Zero(1, d);
    L.ffn_norm_scale = Matrix::Ones(1, d);
    L.ffn_norm_bias = Matrix::Zero(1, d);
    p.layers.push_back(std::move(L));
  }
  p.mlm_bias = Matrix::Zero(1, v);
  return p;
}

// Places every tensor on the tape, as parameters (trainable) or constants.
inline BoundEncoder bind(Tape& tape, const EncoderParams& p, bool trainable) {
  BoundEncoder b = like<Var>(p);
  visit_tensors(
      [&](const std::string&, Var& dst, const Matrix& src) { dst = trainable ? tape.parameter(src) : tape.constant(src); },
      b, p);
  return b;
}

inline EncoderParams collect_grads(const Tape& tape, const BoundEncoder& b) {
  EncoderParams g = like<Matrix>(b);
  visit_tensors([&](const std::string&, Matrix& dst, const Var& src) { dst = tape.grad(src); }, g, b);
  return g;
}

struct ForwardOutput {
  Var hidden;  // [seq_len x d_model], last layer
  Var pooled;  // [1 x d_model], mean over non-PAD positions
  Var token_embedding;
  Var mlm_bias;

  // MLM logits [positions x vocab] at the requested sequence positions.
  template <class I>
  Var mlm_logits_at(std::span<const I> positions) const {
    return add_row(matmul_nt(take_rows(hidden, positions), token_embedding), mlm_bias);
  }
  Var mlm_logits_at(const std::vector<std::size_t>& positions) const {
    return mlm_logits_at(std::span<const std::size_t>(positions));
  }
};

inline Var pool_mean(Var hidden, std::span<const std::uint8_t> attention_mask) {
  return masked_mean_rows(hidden, attention_mask);
}

namespace detail {

inline Var attention(const LayerTensors<Var>& L, Var x, std::span<const std::uint8_t> mask, const EncoderConfig& cfg) {
  const auto d = static_cast<Index>(cfg.d_model);
  const auto heads = static_cast<Index>(cfg.n_heads);
  const Index dh = d / heads;
  const Var q = add_row(matmul(x, L.query_weight), L.query_bias);
  const Var k = add_row(matmul(x, L.key_weight), L.key_bias);
  const Var v = add_row(matmul(x, L.value_weight), L.value_bias);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    const Var probs = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    ctx.push_back(matmul(probs, vh));
  }
  const Var merged = heads == 1 ? ctx[0] : concat_cols(ctx);
  return add_row(matmul(merged, L.output_weight), L.output_bias);
}

}  // namespace detail

// Encodes one padded sequence.
inline ForwardOutput forward_sequence(Tape& tape, const BoundEncoder& enc, std::span<const TokenId> ids,
                                      std::span<const std::uint8_t> mask, bool train_mode, std::uint64_t seed) {
  const EncoderConfig& cfg = enc.config;
  if (ids.size() > cfg.max_seq_len) {
    throw Error("sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                std::to_string(cfg.max_seq_len));
  }
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw Error("token id " + std::to_string(id) + " out of range for vocab size " + std::to_string(cfg.vocab_size));
    }
  }
  Rng rng(seed);
  const double rate = train_mode ? cfg.dropout_rate : 0.0;
  const auto len = static_cast<Index>(ids.size());
  Var x = add(take_rows(enc.token_embedding, ids), slice_rows(enc.position_embedding, 0, len));
  x = dropout(x, rate, rng);
  for (const auto& L : enc.layers) {
    const Var attn = dropout(detail::attention(L, x, mask, cfg), rate, rng);
    x = layer_norm_rows(add(x, attn), L.attention_norm_scale, L.attention_norm_bias, cfg.layer_norm_eps);
    const Var h = gelu(add_row(matmul(x, L.ffn_in_weight), L.ffn_in_bias));
    const Var ffn = dropout(add_row(matmul(h, L.ffn_out_weight), L.ffn_out_bias), rate, rng);
    x = layer_norm_rows(add(x, ffn), L.ffn_norm_scale, L.ffn_norm_bias, cfg.layer_norm_eps);
  }
  return ForwardOutput{x, pool_mean(x, mask), enc.token_embedding, enc.mlm_bias};
}

// One output per batch row. Dropout masks are derived from (seed, row).
inline std::vector<ForwardOutput> forward(Tape& tape, const BoundEncoder& enc, const EncodedBatch& batch,
                                          bool train_mode, std::uint64_t seed) {
  std::vector<ForwardOutput> out;
  out.reserve(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i) {
    out.push_back(forward_sequence(tape, enc, batch.row_ids(i), batch.row_mask(i), train_mode, mix_seed(seed, i)));
  }
  return out;
}

struct GradResult {
  double loss = 0.0;
  EncoderParams gradients;
};

// loss_fn(tape, outputs) must return a [1 x 1] node built from the outputs.
template <class LossFn>
GradResult grad(const EncoderParams& p, const EncodedBatch& batch, LossFn&& loss_fn, bool train_mode = false,
                std::uint64_t seed = 0) {
  Tape tape;
  const BoundEncoder enc = bind(tape, p, true);
  const auto outputs = forward(tape, enc, batch, train_mode, seed);
  const Var loss = loss_fn(tape, std::span<const ForwardOutput>(outputs));
  if (loss.value().size() != 1) throw Error("loss must be a scalar");
  if (!std::isfinite(loss.scalar())) throw Error("non-finite loss");
  tape.backward(loss);
  return {loss.scalar(), collect_grads(tape, enc)};
}

// Values only, no gradient tracking.
struct SequenceEncoding {
  Matrix hidden;
  Eigen::RowVectorXd pooled;
};

inline std::vector<SequenceEncoding> encode_batch(const EncoderParams& p, const EncodedBatch& batch) {
  Tape tape;
  const BoundEncoder enc = bind(tape, p, false);
  std::vector<SequenceEncoding> out;
  for (const auto& o : forward(tape, enc, batch, false, 0)) {
    out.push_back({o.hidden.value(), o.pooled.value().row(0)});
  }
  return out;
}

}  // namespace tckit
