// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "tckit/autodiff.hpp"
#include "tckit/rng.hpp"

namespace tckit {

// Linear topic classifier over the pooled representation.
struct ClassifierHead {
  Matrix weight;  // [d_model x n_classes]
  Matrix bias;    // [1 x n_classes]

  bool operator==(const ClassifierHead&) const = default;
};

inline ClassifierHead init_head(std::size_t d_model, std::size_t n_classes, std::uint64_t seed) {
  Rng rng(seed);
  ClassifierHead h;
  h.weight.resize(static_cast<Index>(d_model), static_cast<Index>(n_classes));
  for (Index i = 0; i < h.weight.size(); ++i) h.weight.data()[i] = rng.truncated_normal(0.02);
  h.bias = Matrix::Zero(1, static_cast<Index>(n_classes));
  return h;
}

struct BoundHead {
  Var weight;
  Var bias;
};

inline BoundHead bind(Tape& tape, const ClassifierHead& h, bool trainable) {
  return trainable ? BoundHead{tape.parameter(h.weight), tape.parameter(h.bias)}
                   : BoundHead{tape.constant(h.weight), tape.constant(h.bias)};
}

// pooled [N x d_model] -> class logits [N x n_classes]
inline Var head_logits(const BoundHead& h, Var pooled) { return add_row(matmul(pooled, h.weight), h.bias); }

}  // namespace tckit
