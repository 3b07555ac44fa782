// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "tckit/encoder.hpp"
#include "tckit/prompt.hpp"
#include "tckit/rng.hpp"

namespace tckit::testing {

// vocab 50, d_model 16, 2 heads, 2 layers.
inline EncoderConfig tiny_config() {
  EncoderConfig c;
  c.vocab_size = 50;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 32;
  c.max_seq_len = 16;
  c.dropout_rate = 0.1;
  c.layer_norm_eps = 1e-12;
  return c;
}

// Init weights are tiny (std 0.02); scaling them up makes every gradient
// path carry signal in a gradient check.
inline EncoderParams lively_params(const EncoderConfig& cfg, std::uint64_t seed) {
  EncoderParams p = init_params(cfg, seed);
  Rng rng(seed ^ 0xabcdefULL);
  visit_tensors(
      [&](const std::string&, Matrix& m) {
        for (Index i = 0; i < m.size(); ++i) m.data()[i] += 0.3 * rng.normal();
      },
      p);
  return p;
}

// Random rows of ids in [5, vocab); trailing PAD by per-row lengths; one or
// two MASK slots per row with targets.
inline EncodedBatch random_batch(const EncoderConfig& cfg, std::vector<std::size_t> lengths, std::uint64_t seed,
                                 std::size_t masks_per_row = 2) {
  Rng rng(seed);
  std::vector<RenderedInput> inputs;
  for (std::size_t len : lengths) {
    RenderedInput in;
    in.kind = InputKind::kMasked;
    in.token_ids.push_back(special::kCls);
    for (std::size_t i = 1; i < len; ++i) {
      in.token_ids.push_back(static_cast<TokenId>(5 + rng.below(cfg.vocab_size - 5)));
    }
    for (std::size_t m = 0; m < masks_per_row && 1 + m < len; ++m) {
      const std::size_t pos = 1 + m;
      in.mask_positions.push_back(pos);
      in.mask_targets.push_back(in.token_ids[pos]);
      in.token_ids[pos] = special::kMask;
    }
    inputs.push_back(std::move(in));
  }
  return make_batch(inputs);
}

inline double global_abs_sum(const EncoderParams& p) {
  double s = 0.0;
  visit_tensors([&](const std::string&, const Matrix& m) { s += m.cwiseAbs().sum(); }, p);
  return s;
}

}  // namespace tckit::testing
