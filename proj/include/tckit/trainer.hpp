// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tckit/checkpoint.hpp"
#include "tckit/classifier_head.hpp"
#include "tckit/config.hpp"
#include "tckit/corpus.hpp"
#include "tckit/encoder.hpp"
#include "tckit/moco.hpp"
#include "tckit/objectives.hpp"
#include "tckit/optim.hpp"
#include "tckit/prompt.hpp"
#include "tckit/rng.hpp"

namespace tckit {

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_mlm = 0.0;
  double loss_aux = 0.0;  // contrastive term when pre-training, classification term when fine-tuning
  double lr_last = 0.0;
  double seconds = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},           {"loss_total", m.loss_total}, {"loss_mlm", m.loss_mlm},
          {"loss_cl_or_tc", m.loss_aux}, {"lr_last", m.lr_last},       {"seconds", m.seconds}};
}

inline void write_metrics(std::ostream& out, std::span<const EpochMetrics> metrics) {
  for (const auto& m : metrics) out << to_json(m).dump() << '\n';
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

// Contiguous [begin, end) ranges over a permutation. A trailing batch of one
// is folded into the previous batch so every contrastive batch has a negative.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) out.emplace_back(b, std::min(n, b + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0xe90c0000ULL + epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

class EpochTimer {
 public:
  explicit EpochTimer(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

inline void check_finite_loss(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(std::string("non-finite ") + what + " loss");
}

}  // namespace detail

struct BatchLoss {
  Var total;
  Var mlm;
  Var aux;  // contrastive or classification term
};

// Pre-training loss of one batch. MLM on the label-masked prompt plus, for
// simcse/moco, the contrastive term between the prompted input and the bare
// text. `momentum` is the momentum encoder for moco and ignored otherwise.
inline BatchLoss pretrain_batch_loss(Tape& tape, const BoundEncoder& enc, const EncoderParams* momentum,
                                     const EncodedBatch& prompted, const EncodedBatch& bare, const TrainConfig& cfg,
                                     std::uint64_t step_seed) {
  const auto outs = forward(tape, enc, prompted, true, mix_seed(step_seed, 1));
  const auto terms = mlm_terms(tape, outs, prompted);
  BatchLoss l;
  l.mlm = mlm_loss(terms.logits, terms.targets, prompted.rows, cfg.mlm_divisor);
  l.aux = tape.constant(Matrix::Zero(1, 1));
  if (cfg.objective == Objective::kSimcse) {
    const auto bare_outs = forward(tape, enc, bare, true, mix_seed(step_seed, 2));
    l.aux = contrastive_loss(stack_pooled(outs), stack_pooled(bare_outs), cfg.temperature);
  } else if (cfg.objective == Objective::kMoco) {
    if (momentum == nullptr) throw Error("moco pre-training needs a momentum encoder");
    l.aux = momentum_contrastive_term(tape, outs, *momentum, bare, cfg.temperature, true, mix_seed(step_seed, 2));
  }
  l.total = pcl_loss(l.mlm, l.aux);
  return l;
}

// Fine-tuning loss of one batch: MLM on the label-masked prompt plus the
// classification loss of the head over the pooled representation of that
// same masked prompt. batch.labels holds the gold class indices.
inline BatchLoss finetune_batch_loss(Tape& tape, const BoundEncoder& enc, const BoundHead& head,
                                     const EncodedBatch& batch, const TrainConfig& cfg, std::uint64_t step_seed) {
  const auto outs = forward(tape, enc, batch, true, step_seed);
  const auto terms = mlm_terms(tape, outs, batch);
  BatchLoss l;
  l.mlm = mlm_loss(terms.logits, terms.targets, batch.rows, cfg.mlm_divisor);
  l.aux = tc_loss(head_logits(head, stack_pooled(outs)), batch.labels);
  l.total = ptc_loss(l.mlm, l.aux);
  return l;
}

// Step order: forward/backward, AdamW on the online encoder, then the
// momentum update.
inline TrainResult pretrain(std::span<const ExpandedExample> corpus, const LabelSet& labels, const Vocab& vocab,
                            const PromptTemplate& prompt, EncoderConfig model, const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw Error("pre-training corpus is empty");
  model.vocab_size = vocab.size();
  model.max_seq_len = cfg.max_seq_len;
  model.validate();

  std::optional<MocoState> moco;
  EncoderParams params = init_params(model, mix_seed(cfg.seed, 0x1417));
  if (cfg.objective == Objective::kMoco) moco = init_moco(params, cfg.momentum);
  EncoderParams& online = moco ? moco->online : params;
  auto refs = tensor_refs(online);
  OptimizerState opt = init_optimizer(refs);

  const std::size_t per_epoch = batch_ranges(corpus.size(), cfg.batch_size).size();
  const std::size_t total_steps = per_epoch * cfg.epochs;
  const std::size_t span = labels.mask_span();
  std::size_t step = 0;
  std::vector<EpochMetrics> metrics;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::EpochTimer timer(cfg.record_timing);
    const auto order = detail::epoch_order(corpus.size(), cfg.seed, epoch);
    EpochMetrics em;
    em.epoch = epoch + 1;
    std::size_t n_batches = 0;
    for (const auto& [begin, end] : batch_ranges(corpus.size(), cfg.batch_size)) {
      std::vector<RenderedInput> prompted, bare;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& ex = corpus[order[k]];
        prompted.push_back(render_masked(prompt, vocab, ex, span, cfg.max_seq_len));
        bare.push_back(render_bare(vocab, ex.text, cfg.max_seq_len));
      }
      const EncodedBatch pb = make_batch(prompted);
      const std::uint64_t step_seed = mix_seed(cfg.seed, 0x57e90000ULL + step);

      Tape tape;
      const BoundEncoder enc = bind(tape, online, true);
      const BatchLoss loss = pretrain_batch_loss(tape, enc, moco ? &moco->momentum : nullptr, pb, make_batch(bare),
                                                 cfg, step_seed);
      const Var total = loss.total;
      detail::check_finite_loss(total.scalar(), "pre-training");
      tape.backward(total);
      EncoderParams grads = collect_grads(tape, enc);
      auto grad_refs = tensor_refs(grads);
      clip_global_norm(grad_refs, cfg.grad_clip);
      const double lr = lr_schedule(step, total_steps, cfg.learning_rate, cfg.warmup_rate);
      std::vector<const Matrix*> grad_view(grad_refs.begin(), grad_refs.end());
      adamw_step(refs, grad_view, opt, lr, cfg.adamw());
      if (moco) momentum_update(*moco);

      em.loss_total += total.scalar();
      em.loss_mlm += loss.mlm.scalar();
      em.loss_aux += loss.aux.scalar();
      em.lr_last = lr;
      ++n_batches;
      ++step;
    }
    em.loss_total /= static_cast<double>(n_batches);
    em.loss_mlm /= static_cast<double>(n_batches);
    em.loss_aux /= static_cast<double>(n_batches);
    em.seconds = timer.seconds();
    metrics.push_back(em);
  }

  TrainResult result;
  result.checkpoint.vocab = vocab;
  result.checkpoint.labels = labels;
  result.checkpoint.objective = to_string(cfg.objective);
  result.checkpoint.encoder = online;
  if (moco) result.checkpoint.momentum_encoder = moco->momentum;
  result.metrics = std::move(metrics);
  return result;
}

// Characters of the labels that the vocabulary cannot encode.
inline std::vector<std::string> unseen_label_characters(const LabelSet& labels, const Vocab& vocab) {
  std::set<std::string> missing;
  for (const auto& l : labels.labels()) {
    for (char32_t cp : utf8::decode(l)) {
      if (!vocab.find(cp)) missing.insert(utf8::encode(cp));
    }
  }
  return {missing.begin(), missing.end()};
}

// Inputs are truncated to the encoder's max_seq_len when cfg asks for more.
inline std::size_t effective_seq_len(const EncoderConfig& model, const TrainConfig& cfg) {
  return std::min(model.max_seq_len, cfg.max_seq_len);
}

// Trains the encoder and a fresh linear head with finetune_batch_loss.
inline TrainResult finetune(const Checkpoint& base, std::span<const ExpandedExample> train, const LabelSet& labels,
                            const PromptTemplate& prompt, const TrainConfig& cfg) {
  cfg.validate();
  if (const auto missing = unseen_label_characters(labels, base.vocab); !missing.empty()) {
    std::string list;
    for (const auto& c : missing) list += (list.empty() ? "" : " ") + c;
    throw Error("labels contain characters unseen by the checkpoint vocabulary: " + list);
  }
  for (const auto& ex : train) labels.index_of(ex.label);

  EncoderParams params = base.encoder;
  ClassifierHead head = init_head(params.config.d_model, labels.size(), mix_seed(cfg.seed, 0x4ead));
  auto refs = tensor_refs(params);
  refs.push_back(&head.weight);
  refs.push_back(&head.bias);
  OptimizerState opt = init_optimizer(refs);

  const std::size_t seq_len = effective_seq_len(params.config, cfg);
  const std::size_t per_epoch = batch_ranges(train.size(), cfg.batch_size).size();
  const std::size_t total_steps = per_epoch * cfg.epochs;
  std::size_t step = 0;
  std::vector<EpochMetrics> metrics;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !train.empty(); ++epoch) {
    detail::EpochTimer timer(cfg.record_timing);
    const auto order = detail::epoch_order(train.size(), cfg.seed, epoch);
    EpochMetrics em;
    em.epoch = epoch + 1;
    std::size_t n_batches = 0;
    for (const auto& [begin, end] : batch_ranges(train.size(), cfg.batch_size)) {
      std::vector<RenderedInput> inputs;
      std::vector<std::size_t> gold;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& ex = train[order[k]];
        inputs.push_back(render_masked(prompt, base.vocab, ex, labels.mask_span(), seq_len));
        gold.push_back(labels.index_of(ex.label));
      }
      const EncodedBatch batch = make_batch(inputs, gold);
      const std::uint64_t step_seed = mix_seed(cfg.seed, 0xf17e0000ULL + step);

      Tape tape;
      const BoundEncoder enc = bind(tape, params, true);
      const BoundHead bh = bind(tape, head, true);
      const BatchLoss loss = finetune_batch_loss(tape, enc, bh, batch, cfg, step_seed);
      const Var total = loss.total;
      detail::check_finite_loss(total.scalar(), "fine-tuning");
      tape.backward(total);

      EncoderParams grads = collect_grads(tape, enc);
      Matrix g_weight = tape.grad(bh.weight);
      Matrix g_bias = tape.grad(bh.bias);
      auto grad_refs = tensor_refs(grads);
      grad_refs.push_back(&g_weight);
      grad_refs.push_back(&g_bias);
      clip_global_norm(grad_refs, cfg.grad_clip);
      const double lr = lr_schedule(step, total_steps, cfg.learning_rate, cfg.warmup_rate);
      std::vector<const Matrix*> grad_view(grad_refs.begin(), grad_refs.end());
      adamw_step(refs, grad_view, opt, lr, cfg.adamw());

      em.loss_total += total.scalar();
      em.loss_mlm += loss.mlm.scalar();
      em.loss_aux += loss.aux.scalar();
      em.lr_last = lr;
      ++n_batches;
      ++step;
    }
    em.loss_total /= static_cast<double>(n_batches);
    em.loss_mlm /= static_cast<double>(n_batches);
    em.loss_aux /= static_cast<double>(n_batches);
    em.seconds = timer.seconds();
    metrics.push_back(em);
  }

  TrainResult result;
  result.checkpoint.vocab = base.vocab;
  result.checkpoint.labels = labels;
  result.checkpoint.objective = base.objective;
  result.checkpoint.encoder = std::move(params);
  result.checkpoint.head = std::move(head);
  result.metrics = std::move(metrics);
  return result;
}

// Argmax of the fine-tuned head over the MASK-span prompt of each text.
inline std::vector<std::size_t> predict_with_head(const Checkpoint& ck, const PromptTemplate& prompt,
                                                  std::span<const std::string> texts) {
  if (!ck.head) throw Error("checkpoint has no classification head; run finetune first");
  std::vector<std::size_t> out;
  const std::size_t span = ck.labels.mask_span();
  for (const auto& text : texts) {
    const RenderedInput in = render_inference(prompt, ck.vocab, text, span, ck.encoder.config.max_seq_len);
    const auto enc = encode_batch(ck.encoder, make_batch(std::span<const RenderedInput>(&in, 1)));
    const Eigen::RowVectorXd logits = enc[0].pooled * ck.head->weight + ck.head->bias;
    Index best = 0;
    logits.maxCoeff(&best);
    out.push_back(static_cast<std::size_t>(best));
  }
  return out;
}

// Scores each label by the summed MLM log-probability of its characters at
// the MASK slots and returns the argmax (lowest index on ties).
inline std::vector<std::size_t> predict_with_mlm(const Checkpoint& ck, const PromptTemplate& prompt,
                                                 std::span<const std::string> texts) {
  std::vector<std::size_t> out;
  const std::size_t span = ck.labels.mask_span();
  for (const auto& text : texts) {
    const RenderedInput in = render_inference(prompt, ck.vocab, text, span, ck.encoder.config.max_seq_len);
    const auto enc = encode_batch(ck.encoder, make_batch(std::span<const RenderedInput>(&in, 1)));
    std::vector<Index> rows(in.mask_positions.begin(), in.mask_positions.end());
    Matrix logits(static_cast<Index>(rows.size()), static_cast<Index>(ck.vocab.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      logits.row(static_cast<Index>(k)) =
          enc[0].hidden.row(rows[k]) * ck.encoder.token_embedding.transpose() + ck.encoder.mlm_bias;
    }
    Matrix log_probs(logits.rows(), logits.cols());
    for (Index r = 0; r < logits.rows(); ++r) {
      const double mx = logits.row(r).maxCoeff();
      const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
      log_probs.row(r) = logits.row(r).array() - lse;
    }
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t li = 0; li < ck.labels.size(); ++li) {
      const auto ids = encode(ck.vocab, ck.labels[li]);
      double score = 0.0;
      for (std::size_t k = 0; k < ids.size(); ++k) score += log_probs(static_cast<Index>(k), ids[k]);
      if (score > best_score) {
        best_score = score;
        best = li;
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace tckit
