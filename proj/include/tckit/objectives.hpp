// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tckit/autodiff.hpp"
#include "tckit/encoder.hpp"
#include "tckit/error.hpp"

namespace tckit {

// Divisor of the summed MLM log-likelihood: the number of sentences in the
// batch (default) or the number of scored mask tokens.
enum class MlmDivisor { kBatch, kMasks };

inline MlmDivisor parse_mlm_divisor(const std::string& s) {
  if (s == "batch") return MlmDivisor::kBatch;
  if (s == "masks") return MlmDivisor::kMasks;
  throw UsageError("mlm_divisor must be 'batch' or 'masks', got '" + s + "'");
}

inline std::string to_string(MlmDivisor d) { return d == MlmDivisor::kBatch ? "batch" : "masks"; }

// A scored mask: row of the logits matrix and the gold token id.
struct MaskTarget {
  Index row = 0;
  TokenId target = 0;
};

// -(1/N) Σ_m log softmax(logits[row_m])[target_m]. Only listed rows are read;
// zero targets give 0.
inline Var mlm_loss(Var logits, std::span<const MaskTarget> targets, std::size_t n_sentences,
                    MlmDivisor divisor = MlmDivisor::kBatch) {
  Tape& t = *logits.tape;
  if (targets.empty()) return t.constant(Matrix::Zero(1, 1));
  if (n_sentences == 0) throw Error("mlm_loss: sentence count must be positive");
  std::vector<Index> rows, cols;
  for (const auto& m : targets) {
    if (m.target < 0 || m.target >= logits.cols()) throw Error("mlm_loss: target id out of vocabulary");
    rows.push_back(m.row);
    cols.push_back(m.target);
  }
  const double denom = divisor == MlmDivisor::kBatch ? static_cast<double>(n_sentences)
                                                     : static_cast<double>(targets.size());
  return scale(sum_log_softmax_at(logits, rows, cols), -1.0 / denom);
}

// In-batch InfoNCE over cosine similarities: row i of `prompted` is paired
// with row i of `bare`; every other bare row is a negative. Summed over rows.
inline Var contrastive_loss(Var prompted, Var bare, double temperature) {
  if (prompted.rows() != bare.rows() || prompted.cols() != bare.cols()) {
    throw Error("contrastive_loss: representation shapes differ");
  }
  if (prompted.rows() < 2) throw Error("contrastive_loss: needs at least 2 pairs");
  if (!(temperature > 0.0)) throw Error("contrastive_loss: temperature must be positive");
  const Var sims = scale(matmul_nt(normalize_rows(prompted), normalize_rows(bare)), 1.0 / temperature);
  std::vector<Index> diag(static_cast<std::size_t>(prompted.rows()));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<Index>(i);
  return scale(sum_log_softmax_at(sims, diag, diag), -1.0);
}

// -(1/N) Σ_i log softmax(class_logits[i])[gold_i]
inline Var tc_loss(Var class_logits, std::span<const std::size_t> gold) {
  if (static_cast<Index>(gold.size()) != class_logits.rows()) throw Error("tc_loss: gold length mismatch");
  if (gold.empty()) throw Error("tc_loss: empty batch");
  std::vector<Index> rows, cols;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (static_cast<Index>(gold[i]) >= class_logits.cols()) throw Error("tc_loss: gold class out of range");
    rows.push_back(static_cast<Index>(i));
    cols.push_back(static_cast<Index>(gold[i]));
  }
  return scale(sum_log_softmax_at(class_logits, rows, cols), -1.0 / static_cast<double>(gold.size()));
}

inline Var pcl_loss(Var mlm, Var cl) { return add(mlm, cl); }
inline Var ptc_loss(Var mlm, Var tc) { return add(mlm, tc); }

inline double pcl_loss(double mlm, double cl) { return mlm + cl; }
inline double ptc_loss(double mlm, double tc) { return mlm + tc; }

// Value-level conveniences.
inline double mlm_loss(const Matrix& logits, std::span<const MaskTarget> targets, std::size_t n_sentences,
                       MlmDivisor divisor = MlmDivisor::kBatch) {
  Tape t;
  return mlm_loss(t.constant(logits), targets, n_sentences, divisor).scalar();
}

inline double contrastive_loss(const Matrix& prompted, const Matrix& bare, double temperature) {
  Tape t;
  return contrastive_loss(t.constant(prompted), t.constant(bare), temperature).scalar();
}

inline double tc_loss(const Matrix& class_logits, std::span<const std::size_t> gold) {
  Tape t;
  return tc_loss(t.constant(class_logits), gold).scalar();
}

// Gathers MLM logits for every non-PAD mask target of a batch into one
// matrix, plus the matching targets. PAD-target positions are excluded.
struct MlmBatchTerms {
  Var logits;
  std::vector<MaskTarget> targets;
};

inline MlmBatchTerms mlm_terms(Tape& tape, std::span<const ForwardOutput> outputs, const EncodedBatch& batch) {
  std::vector<Var> parts;
  MlmBatchTerms terms;
  Index row = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    std::vector<std::size_t> positions;
    for (std::size_t k = 0; k < batch.mask_targets[i].size(); ++k) {
      const TokenId target = batch.mask_targets[i][k];
      if (target == special::kPad) continue;
      positions.push_back(batch.mask_positions[i][k]);
      terms.targets.push_back({row++, target});
    }
    if (!positions.empty()) parts.push_back(outputs[i].mlm_logits_at(positions));
  }
  terms.logits = parts.empty() ? tape.constant(Matrix::Zero(0, 1)) : concat_rows(parts);
  return terms;
}

inline Var stack_pooled(std::span<const ForwardOutput> outputs) {
  std::vector<Var> rows;
  rows.reserve(outputs.size());
  for (const auto& o : outputs) rows.push_back(o.pooled);
  return concat_rows(rows);
}

}  // namespace tckit
