// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "support/fixtures.hpp"
#include "support/grad_check.hpp"
#include "tckit/classifier_head.hpp"
#include "tckit/objectives.hpp"
#include "tckit/trainer.hpp"

namespace tckit {
namespace {

using testing::random_batch;
using testing::tiny_config;

// Logits whose softmax puts probability p on column `target` and spreads the
// rest uniformly over the other columns.
Matrix logits_with_target_prob(Index vocab, Index target, double p) {
  Matrix row = Matrix::Constant(1, vocab, std::log((1.0 - p) / static_cast<double>(vocab - 1)));
  row(0, target) = std::log(p);
  return row;
}

TEST(MlmLoss, UniformLogitsGiveLogVocab) {
  const std::vector<MaskTarget> t{{0, 3}};
  EXPECT_NEAR(mlm_loss(Matrix::Zero(1, 10), t, 1), 2.302585092994046, 1e-12);
}

TEST(MlmLoss, CertainPredictionGivesZero) {
  Matrix logits = Matrix::Constant(1, 10, -1000.0);
  logits(0, 4) = 0.0;
  const std::vector<MaskTarget> t{{0, 4}};
  EXPECT_NEAR(mlm_loss(logits, t, 1), 0.0, 1e-12);
}

TEST(MlmLoss, TwoMasksSumTheirNegativeLogProbs) {
  Matrix logits(2, 6);
  logits.row(0) = logits_with_target_prob(6, 1, 0.5);
  logits.row(1) = logits_with_target_prob(6, 2, 0.25);
  const std::vector<MaskTarget> t{{0, 1}, {1, 2}};
  const double oracle = -std::log(0.5) - std::log(0.25);
  EXPECT_NEAR(mlm_loss(logits, t, 1), oracle, 1e-12);
  EXPECT_NEAR(oracle, 2.079442, 1e-6);
  EXPECT_NEAR(mlm_loss(logits, t, 4), oracle / 4.0, 1e-12);
  EXPECT_NEAR(mlm_loss(logits, t, 4, MlmDivisor::kMasks), oracle / 2.0, 1e-12);
}

TEST(MlmLoss, NoTargetsIsZero) {
  EXPECT_EQ(mlm_loss(Matrix::Zero(0, 5), {}, 3), 0.0);
}

TEST(MlmLoss, UnlistedRowsAreNeverRead) {
  Rng rng(8);
  Matrix logits(4, 7);
  for (Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal();
  const std::vector<MaskTarget> t{{1, 2}, {3, 6}};
  const double base = mlm_loss(logits, t, 2);
  Matrix perturbed = logits;
  perturbed.row(0).setConstant(1e6);
  perturbed.row(2).setConstant(std::nan(""));
  EXPECT_EQ(mlm_loss(perturbed, t, 2), base);
}

TEST(MlmLoss, Divisor) {
  EXPECT_EQ(parse_mlm_divisor("batch"), MlmDivisor::kBatch);
  EXPECT_EQ(parse_mlm_divisor("masks"), MlmDivisor::kMasks);
  EXPECT_THROW(parse_mlm_divisor("tokens"), UsageError);
}

TEST(ContrastiveLoss, EqualCosinesGiveNLogN) {
  const Matrix same = Matrix::Ones(2, 3);
  EXPECT_NEAR(contrastive_loss(same, same, 0.05), 2.0 * std::log(2.0), 1e-12);
  for (Index n : {3, 5, 8}) {
    EXPECT_NEAR(contrastive_loss(Matrix::Ones(n, 4), Matrix::Ones(n, 4), 0.7), n * std::log(static_cast<double>(n)),
                1e-12);
  }
}

TEST(ContrastiveLoss, OrthogonalPairsAtUnitTemperature) {
  const Matrix eye = Matrix::Identity(2, 2);
  const double oracle = 2.0 * std::log(1.0 + std::exp(-1.0));
  EXPECT_NEAR(contrastive_loss(eye, eye, 1.0), oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.626523, 1e-6);
}

TEST(ContrastiveLoss, InvariantToRowRescaling) {
  Rng rng(12);
  Matrix h(5, 4), hb(5, 4);
  for (Index i = 0; i < h.size(); ++i) {
    h.data()[i] = rng.normal();
    hb.data()[i] = rng.normal();
  }
  const double base = contrastive_loss(h, hb, 0.05);
  EXPECT_NEAR(contrastive_loss(h, 3.0 * hb, 0.05), base, 1e-12);
  Matrix rowwise = hb;
  for (Index r = 0; r < rowwise.rows(); ++r) rowwise.row(r) *= 0.5 + r;
  EXPECT_NEAR(contrastive_loss(7.0 * h, rowwise, 0.05), base, 1e-12);
}

TEST(ContrastiveLoss, MatchesDirectInfoNceOracle) {
  Rng rng(5);
  Matrix h(4, 3), hb(4, 3);
  for (Index i = 0; i < h.size(); ++i) {
    h.data()[i] = rng.normal();
    hb.data()[i] = rng.normal();
  }
  const double tau = 0.3;
  double oracle = 0.0;
  for (Index i = 0; i < 4; ++i) {
    double denom = 0.0;
    for (Index j = 0; j < 4; ++j) {
      denom += std::exp(h.row(i).dot(hb.row(j)) / (h.row(i).norm() * hb.row(j).norm()) / tau);
    }
    oracle -= std::log(std::exp(h.row(i).dot(hb.row(i)) / (h.row(i).norm() * hb.row(i).norm()) / tau) / denom);
  }
  EXPECT_NEAR(contrastive_loss(h, hb, tau), oracle, 1e-12);
}

TEST(ContrastiveLoss, Errors) {
  Matrix z = Matrix::Ones(2, 3);
  z.row(1).setZero();
  EXPECT_THROW(contrastive_loss(z, Matrix::Ones(2, 3), 0.05), Error);
  EXPECT_THROW(contrastive_loss(Matrix::Ones(1, 3), Matrix::Ones(1, 3), 0.05), Error);
  EXPECT_THROW(contrastive_loss(Matrix::Ones(2, 3), Matrix::Ones(2, 3), 0.0), Error);
}

TEST(JointLosses, AreSums) {
  EXPECT_EQ(pcl_loss(0.0, 0.0), 0.0);
  EXPECT_EQ(pcl_loss(1.5, 2.5), 4.0);
  for (double x : {-3.25, 0.0, 1e-300, 7.0, 1e12}) EXPECT_EQ(pcl_loss(x, 0.0), x);
  EXPECT_EQ(ptc_loss(0.0, 0.0), 0.0);
  EXPECT_EQ(ptc_loss(1.0, 2.0), 3.0);
}

TEST(TcLoss, SpecValues) {
  const std::vector<std::size_t> g0{2};
  EXPECT_NEAR(tc_loss(Matrix::Zero(1, 4), g0), std::log(4.0), 1e-12);
  Matrix certain = Matrix::Constant(1, 4, -1000.0);
  certain(0, 2) = 0.0;
  EXPECT_NEAR(tc_loss(certain, g0), 0.0, 1e-12);
  Matrix two(2, 4);
  two.row(0) = logits_with_target_prob(4, 1, 0.5);
  two.row(1) = logits_with_target_prob(4, 3, 0.25);
  const std::vector<std::size_t> g{1, 3};
  EXPECT_NEAR(tc_loss(two, g), (std::log(2.0) + std::log(4.0)) / 2.0, 1e-12);
  EXPECT_NEAR((std::log(2.0) + std::log(4.0)) / 2.0, 1.039721, 1e-6);
}

TEST(TcLoss, Errors) {
  const std::vector<std::size_t> bad{4};
  EXPECT_THROW(tc_loss(Matrix::Zero(1, 4), bad), Error);
  const std::vector<std::size_t> two{0, 1};
  EXPECT_THROW(tc_loss(Matrix::Zero(1, 4), two), Error);
}

TEST(MlmTerms, SkipsPadTargets) {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, 1);
  RenderedInput in;
  in.token_ids = {special::kCls, special::kMask, special::kMask, 7};
  in.mask_positions = {1, 2};
  in.mask_targets = {9, special::kPad};
  const auto b = make_batch(std::span<const RenderedInput>(&in, 1));
  Tape t;
  const auto outs = forward(t, bind(t, p, false), b, false, 0);
  const auto terms = mlm_terms(t, outs, b);
  ASSERT_EQ(terms.targets.size(), 1u);
  EXPECT_EQ(terms.targets[0].target, 9);
  EXPECT_EQ(terms.logits.rows(), 1);
}

// Gradient checks through the tiny encoder, for the exact batch losses the
// trainer optimizes (train mode, fixed dropout seed).

struct Pairs {
  EncodedBatch prompted;
  EncodedBatch bare;
};

Pairs random_pairs(const EncoderConfig& cfg, std::uint64_t seed) {
  return {random_batch(cfg, {8, 6, 9, 7}, seed), random_batch(cfg, {5, 6, 4, 7}, seed + 1, 0)};
}

double pretrain_loss_error(Objective objective, MlmDivisor divisor = MlmDivisor::kBatch) {
  const auto cfg = tiny_config();
  EncoderParams p = testing::lively_params(cfg, 31);
  const EncoderParams slow = testing::lively_params(cfg, 32);
  const auto pairs = random_pairs(cfg, 40);
  TrainConfig tc;
  tc.objective = objective;
  tc.mlm_divisor = divisor;
  const auto value = [&](const EncoderParams& params, Tape& t, bool trainable) {
    const BoundEncoder enc = bind(t, params, trainable);
    return std::pair{enc, pretrain_batch_loss(t, enc, &slow, pairs.prompted, pairs.bare, tc, 77).total};
  };
  Tape t;
  const auto [enc, loss] = value(p, t, true);
  t.backward(loss);
  const EncoderParams g = collect_grads(t, enc);
  return testing::check_encoder_grads(p, g, [&] {
           Tape u;
           return value(p, u, false).second.scalar();
         }).max_rel_error;
}

TEST(LossGradients, Mlm) {
  EXPECT_LT(pretrain_loss_error(Objective::kMlm), 1e-4);
  EXPECT_LT(pretrain_loss_error(Objective::kMlm, MlmDivisor::kMasks), 1e-4);
}

TEST(LossGradients, ContrastiveOnly) {
  const auto cfg = tiny_config();
  EncoderParams p = testing::lively_params(cfg, 3);
  const auto pairs = random_pairs(cfg, 4);
  const auto loss = [&](Tape& t, const BoundEncoder& enc) {
    const auto a = forward(t, enc, pairs.prompted, true, 1);
    const auto b = forward(t, enc, pairs.bare, true, 2);
    return contrastive_loss(stack_pooled(a), stack_pooled(b), 0.05);
  };
  Tape t;
  const BoundEncoder enc = bind(t, p, true);
  const Var l = loss(t, enc);
  t.backward(l);
  const auto g = collect_grads(t, enc);
  const auto r = testing::check_encoder_grads(p, g, [&] {
    Tape u;
    return loss(u, bind(u, p, false)).scalar();
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor;
}

TEST(LossGradients, PretrainJointSimcse) { EXPECT_LT(pretrain_loss_error(Objective::kSimcse), 1e-4); }

TEST(LossGradients, PretrainJointMoco) { EXPECT_LT(pretrain_loss_error(Objective::kMoco), 1e-4); }

TEST(LossGradients, FinetuneJointIncludingHead) {
  const auto cfg = tiny_config();
  EncoderParams p = testing::lively_params(cfg, 50);
  ClassifierHead head = init_head(cfg.d_model, 3, 9);
  Rng rng(6);
  for (Index i = 0; i < head.weight.size(); ++i) head.weight.data()[i] = rng.normal();
  auto batch = random_batch(cfg, {7, 9, 5, 8}, 51);
  batch.labels = {2, 0, 1, 2};
  const TrainConfig tc;
  const auto value = [&](Tape& t, bool trainable) {
    const BoundEncoder enc = bind(t, p, trainable);
    const BoundHead bh = bind(t, head, trainable);
    return std::tuple{enc, bh, finetune_batch_loss(t, enc, bh, batch, tc, 5).total};
  };
  Tape t;
  const auto [enc, bh, loss] = value(t, true);
  t.backward(loss);
  const auto g = collect_grads(t, enc);
  const Matrix gw = t.grad(bh.weight), gb = t.grad(bh.bias);
  const auto scalar = [&] {
    Tape u;
    return std::get<2>(value(u, false)).scalar();
  };
  EXPECT_LT(testing::check_encoder_grads(p, g, scalar).max_rel_error, 1e-4);
  EXPECT_LT(testing::check_matrix_grads(head.weight, gw, scalar, "head.weight").max_rel_error, 1e-4);
  EXPECT_LT(testing::check_matrix_grads(head.bias, gb, scalar, "head.bias").max_rel_error, 1e-4);
}

}  // namespace
}  // namespace tckit
