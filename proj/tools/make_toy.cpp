// SPDX-License-Identifier: Apache-2.0
//
// Writes the synthetic four-topic corpus: corpus.jsonl, labels.txt, and a
// train/test split (train.jsonl, test.jsonl).
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tckit/corpus.hpp"
#include "tckit/toy_corpus.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic four-topic corpus", "tckit-make-toy"};
  std::string out_dir;
  std::size_t per_label = 75;
  std::size_t train_per_label = 50;
  std::uint64_t seed = 1;
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--per-label", per_label, "Sentences per topic")->capture_default_str();
  app.add_option("--train-per-label", train_per_label, "Train sentences per topic")->capture_default_str();
  app.add_option("--seed", seed, "Generator and split seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto samples = tckit::toy::make_corpus(per_label, seed);
    tckit::save_corpus(fs::path(out_dir) / "corpus.jsonl", samples);
    std::ofstream labels(fs::path(out_dir) / "labels.txt", std::ios::binary);
    for (const auto& l : tckit::toy::labels()) labels << l << '\n';

    const auto split = tckit::few_shot_split(tckit::expand_multilabel(samples), train_per_label, seed);
    const auto as_samples = [](const std::vector<tckit::ExpandedExample>& xs) {
      std::vector<tckit::LabeledSample> out;
      for (const auto& x : xs) out.push_back({x.text, {x.label}});
      return out;
    };
    tckit::save_corpus(fs::path(out_dir) / "train.jsonl", as_samples(split.train));
    tckit::save_corpus(fs::path(out_dir) / "test.jsonl", as_samples(split.test));
    std::cout << samples.size() << " sentences, " << split.train.size() << " train / " << split.test.size()
              << " test -> " << out_dir << '\n';
  } catch (const std::exception& e) {
    std::cerr << "tckit-make-toy: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
