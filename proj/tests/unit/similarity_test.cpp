// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "tckit/similarity.hpp"
#include "tckit/toy_corpus.hpp"

namespace tckit {
namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

// (1/n) Σ (x - mean)ᵀ (x - mean), computed entry by entry.
Matrix covariance_oracle(const Matrix& x) {
  const Index n = x.rows(), d = x.cols();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (Index j = 0; j < d; ++j) {
    for (Index i = 0; i < n; ++i) mean[j] += x(i, j);
    mean[j] /= static_cast<double>(n);
  }
  Matrix c = Matrix::Zero(d, d);
  for (Index a = 0; a < d; ++a) {
    for (Index b = 0; b < d; ++b) {
      for (Index i = 0; i < n; ++i) c(a, b) += (x(i, a) - mean[a]) * (x(i, b) - mean[b]);
      c(a, b) /= static_cast<double>(n);
    }
  }
  return c;
}

TEST(Cosine, SpecValues) {
  EXPECT_EQ(cosine(row({1, 0}), row({0, 1})), 0.0);
  EXPECT_NEAR(cosine(row({3, -4, 2}), row({3, -4, 2})), 1.0, 1e-15);
  EXPECT_NEAR(cosine(row({1, 2}), row({2, 1})), 0.8, 1e-15);
  EXPECT_THROW(cosine(row({0, 0}), row({1, 0})), Error);
  EXPECT_THROW(cosine(row({1}), row({1, 0})), Error);
}

TEST(ClassifyNn, DominantDirection) {
  SupportSet s{Matrix::Identity(2, 2), {"A", "B"}};
  EXPECT_EQ(classify_nn(s, row({0.9, 0.1})), "A");
  EXPECT_EQ(classify_nn(s, row({0.1, 0.9})), "B");
}

TEST(ClassifyNn, TieGoesToLowerIndex) {
  SupportSet s{Matrix::Identity(2, 2), {"A", "B"}};
  EXPECT_EQ(classify_nn(s, row({1, 1})), "A");
  SupportSet dup{(Matrix(3, 2) << 0, 1, 1, 0, 1, 0).finished(), {"B", "C", "D"}};
  EXPECT_EQ(nearest_support(dup, row({2, 0})), 1u);
}

TEST(ClassifyNn, InvariantToPositiveRescaling) {
  Rng rng(4);
  Matrix reps(6, 5);
  for (Index i = 0; i < reps.size(); ++i) reps.data()[i] = rng.normal();
  SupportSet s{reps, {"a", "b", "c", "d", "e", "f"}};
  for (int q = 0; q < 50; ++q) {
    RowVector x(5);
    for (Index i = 0; i < 5; ++i) x(i) = rng.normal();
    const auto base = nearest_support(s, x);
    EXPECT_EQ(nearest_support(s, 3.7 * x), base);
    SupportSet scaled = s;
    scaled.reps.row(static_cast<Index>(rng.below(6))) *= 0.01 + 10 * rng.uniform();
    EXPECT_EQ(nearest_support(scaled, x), base);
  }
}

TEST(ClassifyNn, EmptySupportIsAnError) {
  SupportSet s{Matrix(0, 2), {}};
  EXPECT_THROW(classify_nn(s, row({1, 0})), Error);
}

TEST(Whitening, FourPointExample) {
  const Matrix pts = (Matrix(4, 2) << 1, 0, -1, 0, 0, 2, 0, -2).finished();
  const auto t = whiten_fit(pts);
  EXPECT_NEAR(t.mean.norm(), 0.0, 1e-15);
  const Matrix c = covariance_oracle(whiten_apply(t, pts));
  EXPECT_LT((c - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_FALSE(t.reduced_rank);
}

TEST(Whitening, AlreadyWhiteDataNeedsOnlyARotation) {
  // Columns of a scaled orthogonal design have covariance exactly I.
  Matrix x(4, 2);
  x << 1, 1, 1, -1, -1, 1, -1, -1;
  const auto t = whiten_fit(x);
  const Matrix wtw = t.W.transpose() * t.W;
  EXPECT_LT((wtw - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((covariance_oracle(whiten_apply(t, x)) - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Whitening, RandomFullRankDataBecomesIdentityCovariance) {
  Rng rng(7);
  Matrix mix(8, 8);
  for (Index i = 0; i < mix.size(); ++i) mix.data()[i] = rng.normal();
  Matrix x(100, 8);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  x = (x * mix).eval();
  x.rowwise() += row({5, -3, 0, 1, 2, 2, 9, -1});
  const auto t = whiten_fit(x);
  const Matrix c = covariance_oracle(whiten_apply(t, x));
  for (Index a = 0; a < 8; ++a) {
    for (Index b = 0; b < 8; ++b) EXPECT_NEAR(c(a, b), a == b ? 1.0 : 0.0, 1e-8);
  }
}

TEST(Whitening, DegenerateInputIsClampedNotNan) {
  const Matrix same = (Matrix(2, 3) << 1, 2, 3, 1, 2, 3).finished();
  const auto t = whiten_fit(same);
  EXPECT_TRUE(t.W.allFinite());
  EXPECT_TRUE(t.reduced_rank);
  EXPECT_EQ(t.rank, 0u);
  EXPECT_TRUE(whiten_apply(t, same).allFinite());
  EXPECT_THROW(whiten_fit(Matrix::Ones(1, 3)), Error);
}

TEST(Whitening, MeanMapsToZero) {
  Rng rng(3);
  Matrix x(10, 4);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const auto t = whiten_fit(x);
  EXPECT_LT(whiten_apply(t, RowVector(t.mean)).cwiseAbs().maxCoeff(), 1e-15);
}

Checkpoint untrained_toy_checkpoint(const std::vector<ExpandedExample>& ex, const LabelSet& labels) {
  Checkpoint ck;
  ck.vocab = build_vocab(ex, templates::builtin(), labels);
  ck.labels = labels;
  EncoderConfig cfg = testing::tiny_config();
  cfg.vocab_size = ck.vocab.size();
  cfg.max_seq_len = 48;
  ck.encoder = init_params(cfg, 5);
  return ck;
}

TEST(EvaluateSimilarity, SingleLabelDatasetIsPerfect) {
  std::vector<ExpandedExample> train, test;
  for (const auto& s : toy::make_corpus(6, 1)) {
    if (s.labels[0] != "体育") continue;
    (train.size() < 3 ? train : test).push_back({s.text, s.labels[0]});
  }
  const LabelSet labels({"体育"});
  const auto ck = untrained_toy_checkpoint(train, labels);
  const auto r = evaluate_similarity(ck, train, test, templates::pretrain(), false);
  EXPECT_EQ(r.report.accuracy, 1.0);
}

TEST(EvaluateSimilarity, DeterministicAndInRange) {
  const auto ex = expand_multilabel(toy::make_corpus(8, 2));
  const auto split = few_shot_split(ex, 3, 1);
  const auto ck = untrained_toy_checkpoint(ex, LabelSet(toy::labels()));
  for (bool white : {false, true}) {
    const auto a = evaluate_similarity(ck, split.train, split.test, templates::pretrain(), white);
    const auto b = evaluate_similarity(ck, split.train, split.test, templates::pretrain(), white);
    EXPECT_EQ(a.predictions, b.predictions);
    EXPECT_GE(a.report.accuracy, 0.0);
    EXPECT_LE(a.report.accuracy, 1.0);
    EXPECT_EQ(a.whitening.has_value(), white);
  }
}

TEST(Embed, DeterministicAndLabelSensitive) {
  const auto ex = expand_multilabel(toy::make_corpus(4, 2));
  const LabelSet labels(toy::labels());
  const auto ck = untrained_toy_checkpoint(ex, labels);
  const auto a = embed(ck, templates::pretrain(), ex[0].text, std::string("体育"));
  EXPECT_EQ(a, embed(ck, templates::pretrain(), ex[0].text, std::string("体育")));
  EXPECT_NE(a, embed(ck, templates::pretrain(), ex[0].text, std::string("财经")));
  EXPECT_NE(a, embed(ck, templates::pretrain(), ex[0].text, std::nullopt));
  EXPECT_EQ(a.size(), 16);
}

}  // namespace
}  // namespace tckit
