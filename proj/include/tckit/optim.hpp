// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tckit/autodiff.hpp"
#include "tckit/encoder.hpp"
#include "tckit/error.hpp"

namespace tckit {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.1;
};

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::size_t step = 0;
};

// Flat views over a parameter struct, in visit order.
inline std::vector<Matrix*> tensor_refs(EncoderParams& p) {
  std::vector<Matrix*> refs;
  visit_tensors([&](const std::string&, Matrix& m) { refs.push_back(&m); }, p);
  return refs;
}

inline std::vector<const Matrix*> tensor_refs(const EncoderParams& p) {
  std::vector<const Matrix*> refs;
  visit_tensors([&](const std::string&, const Matrix& m) { refs.push_back(&m); }, p);
  return refs;
}

inline OptimizerState init_optimizer(std::span<Matrix* const> params) {
  OptimizerState st;
  for (const Matrix* p : params) {
    st.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    st.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  return st;
}

// Decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
inline void adamw_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, OptimizerState& st,
                       double lr, const AdamWConfig& cfg) {
  if (params.size() != grads.size() || params.size() != st.first_moment.size()) {
    throw Error("adamw_step: parameter, gradient, and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols()) {
      throw Error("adamw_step: gradient shape mismatch at tensor " + std::to_string(i));
    }
    if (!grads[i]->allFinite()) throw Error("adamw_step: non-finite gradient at tensor " + std::to_string(i));
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = st.first_moment[i];
    Matrix& v = st.second_moment[i];
    const Matrix& g = *grads[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    Matrix& theta = *params[i];
    const auto m_hat = m.array() / c1;
    const auto v_hat = v.array() / c2;
    theta = (theta.array() - lr * m_hat / (v_hat.sqrt() + cfg.epsilon) - lr * cfg.weight_decay * theta.array()).matrix();
  }
}

// Linear warmup from 0 over ceil(warmup_rate * total) steps, then linear
// decay to 0 at total_steps.
inline double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_rate) {
  if (step > total_steps) throw Error("lr_schedule: step beyond total_steps");
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_rate * static_cast<double>(total_steps)));
  if (warmup > 0 && step < warmup) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return peak_lr;
  return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

inline double global_norm(std::span<const Matrix* const> grads) {
  double sq = 0.0;
  for (const Matrix* g : grads) sq += g->squaredNorm();
  return std::sqrt(sq);
}

// Rescales in place so the global L2 norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 disables clipping.
inline double clip_global_norm(std::span<Matrix* const> grads, double max_norm) {
  std::vector<const Matrix*> view(grads.begin(), grads.end());
  const double norm = global_norm(view);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Matrix* g : grads) *g *= s;
  }
  return norm;
}

}  // namespace tckit
