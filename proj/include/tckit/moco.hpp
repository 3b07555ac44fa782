// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "tckit/encoder.hpp"
#include "tckit/error.hpp"
#include "tckit/objectives.hpp"

namespace tckit {

// Online encoder (trained by back-propagation) and its momentum copy, which
// only ever moves by momentum_update.
struct MocoState {
  EncoderParams online;
  EncoderParams momentum;
  double lambda = 0.999;
};

inline void check_momentum(double lambda) {
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw Error("momentum coefficient must be in [0, 1), got " + std::to_string(lambda));
  }
}

inline MocoState init_moco(const EncoderParams& p, double lambda) {
  check_momentum(lambda);
  return MocoState{p, p, lambda};
}

// momentum <- lambda * momentum + (1 - lambda) * online, elementwise.
inline void momentum_update(MocoState& s) {
  const double keep = s.lambda;
  const double take = 1.0 - s.lambda;
  visit_tensors([&](const std::string&, Matrix& slow, const Matrix& fast) { slow = keep * slow + take * fast; },
                s.momentum, s.online);
}

struct MocoStepResult {
  double loss = 0.0;
  EncoderParams online_gradients;
};

// Contrastive term for already-encoded prompted rows: bare inputs go through
// the momentum encoder as constants, so no gradient reaches it.
inline Var momentum_contrastive_term(Tape& tape, std::span<const ForwardOutput> prompted, const EncoderParams& momentum,
                                     const EncodedBatch& bare, double temperature, bool train_mode,
                                     std::uint64_t seed) {
  if (prompted.size() != bare.rows) throw Error("prompted and bare batches must be aligned");
  const BoundEncoder slow = bind(tape, momentum, false);
  const auto h_hat = forward(tape, slow, bare, train_mode, seed);
  return contrastive_loss(stack_pooled(prompted), stack_pooled(h_hat), temperature);
}

// Contrastive step: prompted inputs through the online encoder, bare inputs
// through the momentum encoder with no gradient tracking. Negatives are the
// other bare rows of the batch, so the queue is the batch itself.
inline MocoStepResult moco_contrastive_step(const MocoState& s, const EncodedBatch& prompted,
                                            const EncodedBatch& bare, double temperature, bool train_mode = false,
                                            std::uint64_t seed = 0) {
  if (prompted.rows != bare.rows) throw Error("prompted and bare batches must be aligned");
  if (prompted.rows < 2) throw Error("momentum contrastive step needs a batch of at least 2");
  Tape tape;
  const BoundEncoder online = bind(tape, s.online, true);
  const auto h = forward(tape, online, prompted, train_mode, mix_seed(seed, 1));
  const Var loss = momentum_contrastive_term(tape, h, s.momentum, bare, temperature, train_mode, mix_seed(seed, 2));
  if (!std::isfinite(loss.scalar())) throw Error("non-finite contrastive loss");
  tape.backward(loss);
  return {loss.scalar(), collect_grads(tape, online)};
}

}  // namespace tckit
