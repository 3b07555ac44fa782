// SPDX-License-Identifier: Apache-2.0
//
// Training-free classification: each test sentence takes the label of the
// most cosine-similar training sentence. Training sentences are embedded
// with their label written into the prompt, test sentences with MASK tokens
// in the label slot. Representations may be whitened first.
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Eigenvalues>

#include "tckit/checkpoint.hpp"
#include "tckit/corpus.hpp"
#include "tckit/encoder.hpp"
#include "tckit/error.hpp"
#include "tckit/eval.hpp"
#include "tckit/parallel.hpp"
#include "tckit/prompt.hpp"

namespace tckit {

using RowVector = Eigen::RowVectorXd;

// Renders a training sentence with its label filled in, or, when label is
// nullopt, a test sentence with the checkpoint's MASK span.
inline RenderedInput render_for_similarity(const Checkpoint& ck, const PromptTemplate& prompt, std::string_view text,
                                           const std::optional<std::string>& label) {
  const std::size_t max_len = ck.encoder.config.max_seq_len;
  if (label) return render_filled(prompt, ck.vocab, ExpandedExample{std::string(text), *label}, max_len);
  return render_inference(prompt, ck.vocab, text, ck.labels.mask_span(), max_len);
}

inline RowVector embed(const Checkpoint& ck, const PromptTemplate& prompt, std::string_view text,
                       const std::optional<std::string>& label) {
  const RenderedInput in = render_for_similarity(ck, prompt, text, label);
  return encode_batch(ck.encoder, make_batch(std::span<const RenderedInput>(&in, 1)))[0].pooled;
}

// One pooled row per input, each encoded on its own (no cross-row padding).
inline Matrix embed_all(const EncoderParams& params, std::span<const RenderedInput> inputs) {
  Matrix out(static_cast<Index>(inputs.size()), static_cast<Index>(params.config.d_model));
  parallel_for(inputs.size(), [&](std::size_t i) {
    out.row(static_cast<Index>(i)) = encode_batch(params, make_batch(inputs.subspan(i, 1)))[0].pooled;
  });
  return out;
}

// Cosine of two nonzero vectors.
inline double cosine(const RowVector& a, const RowVector& b) {
  if (a.size() != b.size()) throw Error("cosine: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw Error("cosine: zero vector");
  return a.dot(b) / (na * nb);
}

struct SupportSet {
  Matrix reps;  // [K x d]
  std::vector<std::string> labels;
};

// Index of the support row with the largest cosine to the query; the lowest
// index wins ties.
inline std::size_t nearest_support(const SupportSet& support, const RowVector& query) {
  if (support.reps.rows() == 0) throw Error("support set is empty");
  if (static_cast<std::size_t>(support.reps.rows()) != support.labels.size()) {
    throw Error("support set labels do not match representation rows");
  }
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < support.reps.rows(); ++k) {
    const double s = cosine(support.reps.row(k), query);
    if (s > best_score) {
      best_score = s;
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

inline const std::string& classify_nn(const SupportSet& support, const RowVector& query) {
  return support.labels[nearest_support(support, query)];
}

struct WhiteningTransform {
  RowVector mean;  // [d]
  Matrix W;        // [d x d]; whitened = (x - mean) W
  std::size_t rank = 0;
  // Fewer than d+1 points, or some covariance eigenvalue fell below the clamp.
  bool reduced_rank = false;
};

inline constexpr double kWhiteningEigenClamp = 1e-10;

// mean = average row; cov = (1/n) Σ (x-mean)ᵀ(x-mean) = U S Uᵀ;
// W = U diag(1/sqrt(max(S, clamp))).
inline WhiteningTransform whiten_fit(const Matrix& reps, double eigen_clamp = kWhiteningEigenClamp) {
  if (reps.rows() < 2) throw Error("whitening needs at least 2 vectors");
  const Index d = reps.cols();
  WhiteningTransform t;
  t.mean = reps.colwise().mean();
  const Matrix centered = reps.rowwise() - t.mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(reps.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("whitening eigendecomposition failed");
  const Eigen::VectorXd& s = solver.eigenvalues();
  Eigen::VectorXd inv_sqrt(d);
  for (Index i = 0; i < d; ++i) {
    if (s(i) > eigen_clamp) ++t.rank;
    inv_sqrt(i) = 1.0 / std::sqrt(std::max(s(i), eigen_clamp));
  }
  t.W = solver.eigenvectors() * inv_sqrt.asDiagonal();
  t.reduced_rank = reps.rows() < d + 1 || t.rank < static_cast<std::size_t>(d);
  return t;
}

inline RowVector whiten_apply(const WhiteningTransform& t, const RowVector& x) { return (x - t.mean) * t.W; }

inline Matrix whiten_apply(const WhiteningTransform& t, const Matrix& rows) { return (rows.rowwise() - t.mean) * t.W; }

struct SimilarityResult {
  EvalReport report;
  std::vector<std::string> predictions;
  std::optional<WhiteningTransform> whitening;
};

// Support from the train split (labels filled), queries from the test split
// (MASK span). Whitening, when enabled, is fitted on support and queries
// together and applied to both.
inline SimilarityResult evaluate_similarity(const Checkpoint& ck, std::span<const ExpandedExample> train,
                                            std::span<const ExpandedExample> test, const PromptTemplate& prompt,
                                            bool use_whitening) {
  if (train.empty()) throw Error("similarity classification needs a non-empty train split");
  if (test.empty()) throw Error("similarity classification needs a non-empty test split");
  std::vector<RenderedInput> support_in, query_in;
  SupportSet support;
  for (const auto& ex : train) {
    support_in.push_back(render_for_similarity(ck, prompt, ex.text, ex.label));
    support.labels.push_back(ex.label);
  }
  for (const auto& ex : test) query_in.push_back(render_for_similarity(ck, prompt, ex.text, std::nullopt));
  support.reps = embed_all(ck.encoder, support_in);
  Matrix queries = embed_all(ck.encoder, query_in);

  SimilarityResult result;
  if (use_whitening) {
    Matrix all(support.reps.rows() + queries.rows(), support.reps.cols());
    all << support.reps, queries;
    result.whitening = whiten_fit(all);
    support.reps = whiten_apply(*result.whitening, support.reps);
    queries = whiten_apply(*result.whitening, queries);
  }
  std::vector<std::string> gold;
  for (Index q = 0; q < queries.rows(); ++q) {
    result.predictions.push_back(classify_nn(support, queries.row(q)));
    gold.push_back(test[static_cast<std::size_t>(q)].label);
  }
  result.report = accuracy(result.predictions, gold, ck.labels.labels());
  return result;
}

}  // namespace tckit
