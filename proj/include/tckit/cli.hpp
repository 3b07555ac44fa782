// SPDX-License-Identifier: Apache-2.0
//
// tckit command line: pretrain | finetune | classify | embed | eval.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tckit/checkpoint.hpp"
#include "tckit/config.hpp"
#include "tckit/corpus.hpp"
#include "tckit/error.hpp"
#include "tckit/eval.hpp"
#include "tckit/prompt.hpp"
#include "tckit/similarity.hpp"
#include "tckit/trainer.hpp"

namespace tckit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

struct Options {
  std::string config;
  std::string data;
  std::string labels;
  std::string prompt;
  std::string objective;
  std::string mode = "similarity";
  std::string predictor = "head";
  std::string checkpoint;
  std::string train;
  std::string test;
  std::string predictions;
  std::string out;
  std::optional<double> momentum;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
  std::size_t shots = 0;
  bool whitening = false;
  bool masked = false;
};

// Writes to `path`, or to `fallback` when path is empty.
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw Error("cannot write " + path);
      stream_ = &file_;
    }
  }
  std::ostream& stream() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

inline RunConfig run_config(const Options& o) {
  RunConfig rc = o.config.empty() ? default_run_config() : load_run_config(o.config);
  for (TrainConfig* tc : {&rc.pretrain, &rc.finetune}) {
    if (o.seed) tc->seed = *o.seed;
    if (o.momentum) tc->momentum = *o.momentum;
    if (o.temperature) tc->temperature = *o.temperature;
  }
  if (!o.objective.empty()) rc.pretrain.objective = parse_objective(o.objective);
  rc.pretrain.validate();
  rc.finetune.validate();
  return rc;
}

inline PromptTemplate prompt_or(const Options& o, const char* fallback) {
  try {
    return templates::resolve(o.prompt.empty() ? fallback : o.prompt);
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

inline LabelSet label_set(const Options& o, std::span<const LabeledSample> samples) {
  return o.labels.empty() ? LabelSet::from_samples(samples) : load_label_set(o.labels);
}

inline void write_metrics_file(const std::filesystem::path& path, std::span<const EpochMetrics> metrics) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write metrics file " + path.string());
  write_metrics(out, metrics);
}

inline int cmd_pretrain(const Options& o, std::ostream& out) {
  const RunConfig rc = run_config(o);
  const PromptTemplate prompt = prompt_or(o, "pretrain");
  const auto samples = load_corpus(o.data);
  if (samples.empty()) throw Error("pre-training corpus is empty");
  const LabelSet labels = label_set(o, samples);
  check_labels(samples, labels);
  const auto examples = expand_multilabel(samples);
  auto vocab_templates = templates::builtin();
  vocab_templates.push_back(prompt);
  const Vocab vocab = build_vocab(examples, vocab_templates, labels);
  const TrainResult r = pretrain(examples, labels, vocab, prompt, rc.model, rc.pretrain);
  save_checkpoint(o.out, r.checkpoint);
  write_metrics_file(std::filesystem::path(o.out) / "metrics.jsonl", r.metrics);
  out << "pretrained " << examples.size() << " examples for " << r.metrics.size() << " epochs ("
      << to_string(rc.pretrain.objective) << ") -> " << o.out << '\n';
  return kExitOk;
}

inline int cmd_finetune(const Options& o, std::ostream& out) {
  const RunConfig rc = run_config(o);
  const PromptTemplate prompt = prompt_or(o, "1");
  const Checkpoint base = load_checkpoint(o.checkpoint);
  const auto samples = load_corpus(o.data);
  const LabelSet labels = label_set(o, samples);
  check_labels(samples, labels);
  const auto examples = expand_multilabel(samples);
  const TrainResult r = finetune(base, examples, labels, prompt, rc.finetune);
  save_checkpoint(o.out, r.checkpoint);
  write_metrics_file(std::filesystem::path(o.out) / "metrics.jsonl", r.metrics);
  out << "fine-tuned on " << examples.size() << " examples for " << r.metrics.size() << " epochs -> " << o.out
      << '\n';
  return kExitOk;
}

inline Split load_split(const Options& o, bool need_train) {
  if (!o.data.empty()) {
    if (o.shots == 0) throw UsageError("--data requires --shots K to build a few-shot split");
    const auto examples = expand_multilabel(load_corpus(o.data));
    return few_shot_split(examples, o.shots, o.seed.value_or(0));
  }
  if (o.test.empty() || (need_train && o.train.empty())) {
    throw UsageError(need_train ? "classify needs --train and --test (or --data with --shots)"
                                : "classify needs --test (or --data with --shots)");
  }
  Split s;
  if (!o.train.empty()) s.train = expand_multilabel(load_corpus(o.train));
  s.test = expand_multilabel(load_corpus(o.test));
  return s;
}

inline int cmd_classify(const Options& o, std::ostream& out) {
  const bool similarity = o.mode == "similarity";
  const PromptTemplate prompt = prompt_or(o, "1");
  const Split split = load_split(o, similarity);
  const Checkpoint ck = load_checkpoint(o.checkpoint);

  std::vector<std::string> predictions;
  std::vector<std::string> gold;
  for (const auto& ex : split.test) gold.push_back(ex.label);
  nlohmann::json extra = nlohmann::json::object();
  EvalReport report;
  if (similarity) {
    const SimilarityResult r = evaluate_similarity(ck, split.train, split.test, prompt, o.whitening);
    predictions = r.predictions;
    report = r.report;
    if (r.whitening) {
      extra["whitening"] = {{"rank", r.whitening->rank}, {"reduced_rank", r.whitening->reduced_rank}};
    }
  } else {
    if (o.whitening) throw UsageError("--whitening applies to --mode similarity only");
    std::vector<std::string> texts;
    for (const auto& ex : split.test) texts.push_back(ex.text);
    const auto idx = o.predictor == "mlm" ? predict_with_mlm(ck, prompt, texts) : predict_with_head(ck, prompt, texts);
    for (std::size_t i : idx) predictions.push_back(ck.labels[i]);
    report = accuracy(predictions, gold, ck.labels.labels());
  }
  if (!o.predictions.empty()) {
    std::ofstream pf(o.predictions, std::ios::binary | std::ios::trunc);
    if (!pf) throw Error("cannot write " + o.predictions);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      pf << nlohmann::json{{"id", i}, {"text", split.test[i].text}, {"pred", predictions[i]}, {"gold", gold[i]}}.dump()
         << '\n';
    }
  }
  nlohmann::json doc = to_json(report);
  doc["mode"] = o.mode;
  if (!similarity) doc["predictor"] = o.predictor;
  doc.update(extra);
  Output dst(o.out, out);
  dst.stream() << doc.dump(2) << '\n';
  return kExitOk;
}

inline int cmd_embed(const Options& o, std::ostream& out) {
  const PromptTemplate prompt = prompt_or(o, "1");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto samples = load_corpus(o.data);
  std::vector<RenderedInput> inputs;
  std::vector<std::string> tags;
  if (o.masked) {
    for (const auto& s : samples) {
      inputs.push_back(render_for_similarity(ck, prompt, s.text, std::nullopt));
      tags.emplace_back(special::kNames[special::kMask]);
    }
  } else {
    for (const auto& ex : expand_multilabel(samples)) {
      inputs.push_back(render_for_similarity(ck, prompt, ex.text, ex.label));
      tags.push_back(ex.label);
    }
  }
  const Matrix reps = embed_all(ck.encoder, inputs);
  Output dst(o.out, out);
  for (Index i = 0; i < reps.rows(); ++i) {
    std::vector<float> v(static_cast<std::size_t>(reps.cols()));
    for (Index c = 0; c < reps.cols(); ++c) v[static_cast<std::size_t>(c)] = static_cast<float>(reps(i, c));
    dst.stream() << nlohmann::json{{"id", i}, {"label_or_mask", tags[static_cast<std::size_t>(i)]}, {"vector", v}}.dump()
                 << '\n';
  }
  return kExitOk;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  std::ifstream in(o.predictions, std::ios::binary);
  if (!in) throw UsageError("cannot open predictions file: " + o.predictions);
  std::vector<std::string> pred, gold;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      pred.push_back(j.at("pred").get<std::string>());
      gold.push_back(j.at("gold").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<std::string> labels;
  if (!o.labels.empty()) labels = load_label_set(o.labels).labels();
  Output dst(o.out, out);
  dst.stream() << to_json(accuracy(pred, gold, labels)).dump(2) << '\n';
  return kExitOk;
}

inline std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace detail

inline int run(std::span<const std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  detail::Options o;
  CLI::App app{"Prompt-based topic classification: pre-training, fine-tuning, similarity classification", "tckit"};
  app.require_subcommand(1, 1);

  const auto seed_opt = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Seed for all randomness"); };
  const auto config_opt = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  };

  auto* pre = app.add_subcommand("pretrain", "Supervised continued pre-training");
  config_opt(pre);
  pre->add_option("--data", o.data, "Training corpus (JSON lines)")->required()->check(CLI::ExistingFile);
  pre->add_option("--labels", o.labels, "Label file, one label per line")->check(CLI::ExistingFile);
  pre->add_option("--prompt", o.prompt, "pretrain | 1 | 2 | template file (default pretrain)");
  pre->add_option("--objective", o.objective, "mlm | simcse | moco")
      ->check(CLI::IsMember({"mlm", "simcse", "moco"}));
  pre->add_option("--momentum", o.momentum, "Momentum coefficient in [0, 1)");
  pre->add_option("--temperature", o.temperature, "Contrastive temperature");
  seed_opt(pre);
  pre->add_option("--out", o.out, "Checkpoint directory")->required();

  auto* fin = app.add_subcommand("finetune", "Prompt-based fine-tuning (MLM + classification head)");
  config_opt(fin);
  fin->add_option("--checkpoint", o.checkpoint, "Pre-trained checkpoint directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  fin->add_option("--data", o.data, "Training split (JSON lines)")->required()->check(CLI::ExistingFile);
  fin->add_option("--labels", o.labels, "Label file, one label per line")->check(CLI::ExistingFile);
  fin->add_option("--prompt", o.prompt, "1 | 2 | pretrain | template file (default 1)");
  seed_opt(fin);
  fin->add_option("--out", o.out, "Output checkpoint directory")->required();

  auto* cls = app.add_subcommand("classify", "Classify a test split and report accuracy");
  cls->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  cls->add_option("--mode", o.mode, "finetune | similarity")
      ->check(CLI::IsMember({"finetune", "similarity"}))
      ->capture_default_str();
  cls->add_option("--predictor", o.predictor, "finetune mode: head | mlm")
      ->check(CLI::IsMember({"head", "mlm"}))
      ->capture_default_str();
  cls->add_flag("--whitening", o.whitening, "Whiten representations before similarity");
  cls->add_option("--prompt", o.prompt, "1 | 2 | pretrain | template file (default 1)");
  cls->add_option("--train", o.train, "Support split (JSON lines)")->check(CLI::ExistingFile);
  cls->add_option("--test", o.test, "Test split (JSON lines)")->check(CLI::ExistingFile);
  cls->add_option("--data", o.data, "Corpus to split with --shots")->check(CLI::ExistingFile);
  cls->add_option("--shots", o.shots, "Examples per label in the train split");
  cls->add_option("--predictions", o.predictions, "Write per-example predictions (JSON lines)");
  seed_opt(cls);
  cls->add_option("--out", o.out, "Report path (default stdout)");

  auto* emb = app.add_subcommand("embed", "Write pooled sentence representations");
  emb->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  emb->add_option("--data", o.data, "Corpus (JSON lines)")->required()->check(CLI::ExistingFile);
  emb->add_option("--prompt", o.prompt, "1 | 2 | pretrain | template file (default 1)");
  emb->add_flag("--masked", o.masked, "Use MASK tokens in the label slot instead of the label");
  emb->add_option("--out", o.out, "Output path (default stdout)");

  auto* ev = app.add_subcommand("eval", "Accuracy report from a predictions file");
  ev->add_option("--predictions", o.predictions, "JSON lines with pred and gold fields")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--labels", o.labels, "Label file fixing report order")->check(CLI::ExistingFile);
  ev->add_option("--out", o.out, "Report path (default stdout)");

  std::vector<std::string> argv_store{"tckit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "tckit: error: " << detail::one_line(e.what()) << '\n';
    return kExitUsage;
  }

  try {
    if (pre->parsed()) return detail::cmd_pretrain(o, out);
    if (fin->parsed()) return detail::cmd_finetune(o, out);
    if (cls->parsed()) return detail::cmd_classify(o, out);
    if (emb->parsed()) return detail::cmd_embed(o, out);
    if (ev->parsed()) return detail::cmd_eval(o, out);
  } catch (const UsageError& e) {
    err << "tckit: error: " << detail::one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "tckit: error: " << detail::one_line(e.what()) << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace tckit::cli
