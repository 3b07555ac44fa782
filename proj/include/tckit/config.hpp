// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tckit/encoder.hpp"
#include "tckit/error.hpp"
#include "tckit/objectives.hpp"
#include "tckit/optim.hpp"

namespace tckit {

enum class Objective { kMlm, kSimcse, kMoco };

inline Objective parse_objective(const std::string& s) {
  if (s == "mlm") return Objective::kMlm;
  if (s == "simcse") return Objective::kSimcse;
  if (s == "moco") return Objective::kMoco;
  throw UsageError("objective must be one of mlm, simcse, moco; got '" + s + "'");
}

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::kMlm: return "mlm";
    case Objective::kSimcse: return "simcse";
    case Objective::kMoco: return "moco";
  }
  return "mlm";
}

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 0.1;
  double warmup_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 4;
  std::size_t batch_size = 16;
  std::size_t max_seq_len = 64;
  std::uint64_t seed = 0;
  Objective objective = Objective::kMlm;
  double momentum = 0.999;
  double temperature = 0.05;
  MlmDivisor mlm_divisor = MlmDivisor::kBatch;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  // When false the per-epoch "seconds" metric is written as 0 so metrics
  // files are reproducible byte for byte.
  bool record_timing = false;

  AdamWConfig adamw() const { return {beta1, beta2, epsilon, weight_decay}; }

  void validate() const {
    if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
    if (!(warmup_rate >= 0.0 && warmup_rate <= 1.0)) throw UsageError("warmup_rate must be in [0, 1]");
    if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("adam betas must be in [0, 1)");
    if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");
    if (batch_size == 0) throw UsageError("batch_size must be positive");
    if (objective != Objective::kMlm && batch_size < 2) {
      throw UsageError("contrastive objectives need batch_size >= 2");
    }
    if (max_seq_len < 2) throw UsageError("max_seq_len must be at least 2");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must be in [0, 1)");
    if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
  }
};

// Desk-scale defaults; vocab_size is filled in from the built vocabulary.
struct RunConfig {
  EncoderConfig model;
  TrainConfig pretrain;
  TrainConfig finetune;
};

inline RunConfig default_run_config() {
  RunConfig rc;
  rc.finetune.epochs = 50;
  rc.finetune.batch_size = 4;
  return rc;
}

namespace detail {

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_train(const nlohmann::json& j, TrainConfig& c) {
  static constexpr const char* kKnown[] = {"learning_rate", "weight_decay", "warmup_rate", "beta1",      "beta2",
                                           "epsilon",       "epochs",       "batch_size",  "max_seq_len", "seed",
                                           "objective",     "momentum",     "temperature", "mlm_divisor", "grad_clip",
                                           "record_timing"};
  for (const auto& [k, _] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), k) == std::end(kKnown)) {
      throw UsageError("unknown training config key: " + k);
    }
  }
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "weight_decay", c.weight_decay);
  read_key(j, "warmup_rate", c.warmup_rate);
  read_key(j, "beta1", c.beta1);
  read_key(j, "beta2", c.beta2);
  read_key(j, "epsilon", c.epsilon);
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "max_seq_len", c.max_seq_len);
  read_key(j, "seed", c.seed);
  read_key(j, "momentum", c.momentum);
  read_key(j, "temperature", c.temperature);
  read_key(j, "grad_clip", c.grad_clip);
  read_key(j, "record_timing", c.record_timing);
  if (j.contains("objective")) c.objective = parse_objective(j.at("objective").get<std::string>());
  if (j.contains("mlm_divisor")) c.mlm_divisor = parse_mlm_divisor(j.at("mlm_divisor").get<std::string>());
}

}  // namespace detail

// Nested document:
//   {"model": {d_model, n_heads, n_layers, d_ff, dropout_rate, layer_norm_eps},
//    "pretrain": {TrainConfig keys}, "finetune": {TrainConfig keys}}
// "finetune" starts from the built-in fine-tuning defaults, not from
// "pretrain". model.max_seq_len follows pretrain.max_seq_len.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig rc = default_run_config();
  try {
    if (!j.is_object()) throw UsageError("config must be an object");
    for (const auto& [k, _] : j.items()) {
      if (k != "model" && k != "pretrain" && k != "finetune") throw UsageError("unknown config section: " + k);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      for (const auto& [k, _] : m.items()) {
        if (k != "d_model" && k != "n_heads" && k != "n_layers" && k != "d_ff" && k != "dropout_rate" &&
            k != "layer_norm_eps") {
          throw UsageError("unknown model config key: " + k);
        }
      }
      detail::read_key(m, "d_model", rc.model.d_model);
      detail::read_key(m, "n_heads", rc.model.n_heads);
      detail::read_key(m, "n_layers", rc.model.n_layers);
      detail::read_key(m, "d_ff", rc.model.d_ff);
      detail::read_key(m, "dropout_rate", rc.model.dropout_rate);
      detail::read_key(m, "layer_norm_eps", rc.model.layer_norm_eps);
    }
    if (j.contains("pretrain")) detail::read_train(j.at("pretrain"), rc.pretrain);
    if (j.contains("finetune")) detail::read_train(j.at("finetune"), rc.finetune);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  rc.model.max_seq_len = rc.pretrain.max_seq_len;
  {
    // vocab_size is unknown until the corpus is read; a placeholder lets the
    // remaining model checks run now.
    EncoderConfig probe = rc.model;
    probe.vocab_size = static_cast<std::size_t>(special::kCount) + 1;
    try {
      probe.validate();
    } catch (const Error& e) {
      throw UsageError(std::string("invalid model config: ") + e.what());
    }
  }
  rc.pretrain.validate();
  rc.finetune.validate();
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config file is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(j);
}

}  // namespace tckit
