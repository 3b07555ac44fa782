// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tckit/error.hpp"
#include "tckit/rng.hpp"
#include "tckit/utf8.hpp"

namespace tckit {

struct LabeledSample {
  std::string text;
  std::vector<std::string> labels;

  bool operator==(const LabeledSample&) const = default;
};

// One sentence/label pair after multi-label expansion.
struct ExpandedExample {
  std::string text;
  std::string label;

  bool operator==(const ExpandedExample&) const = default;
};

// Ordered, duplicate-free topic labels. mask_span is the longest label in
// tokens (one token per Unicode scalar).
class LabelSet {
 public:
  LabelSet() = default;

  explicit LabelSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw Error("label set is empty");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      const std::size_t len = utf8::length(labels_[i]);
      if (len == 0) throw Error("label set contains an empty label");
      if (!index_.emplace(labels_[i], i).second) {
        throw Error("duplicate label in label set: " + labels_[i]);
      }
      mask_span_ = std::max(mask_span_, len);
    }
  }

  // Labels in first-occurrence order over the samples.
  static LabelSet from_samples(std::span<const LabeledSample> samples) {
    std::vector<std::string> labels;
    std::unordered_map<std::string, bool> seen;
    for (const auto& s : samples) {
      for (const auto& l : s.labels) {
        if (seen.emplace(l, true).second) labels.push_back(l);
      }
    }
    return LabelSet(std::move(labels));
  }

  static LabelSet from_examples(std::span<const ExpandedExample> examples) {
    std::vector<std::string> labels;
    std::unordered_map<std::string, bool> seen;
    for (const auto& e : examples) {
      if (seen.emplace(e.label, true).second) labels.push_back(e.label);
    }
    return LabelSet(std::move(labels));
  }

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t mask_span() const noexcept { return mask_span_; }
  const std::string& operator[](std::size_t i) const { return labels_.at(i); }

  bool contains(const std::string& label) const { return index_.contains(label); }

  std::size_t index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw Error("label not in label set: " + label);
    return it->second;
  }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t mask_span_ = 0;
};

namespace detail {

inline bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace detail

// Reads line-delimited JSON records {"text": ..., "labels": [...]}. Blank
// lines are skipped; line numbers in errors are 1-based.
inline std::vector<LabeledSample> read_corpus(std::istream& in) {
  std::vector<LabeledSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::is_blank(line)) continue;
    const auto fail = [&](const std::string& why) {
      return Error("corpus line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed record: ") + e.what());
    }
    if (!record.is_object()) throw fail("record is not an object");
    if (!record.contains("text") || !record["text"].is_string()) {
      throw fail("missing string field 'text'");
    }
    if (!record.contains("labels") || !record["labels"].is_array()) {
      throw fail("missing array field 'labels'");
    }
    LabeledSample sample;
    sample.text = record["text"].get<std::string>();
    if (detail::is_blank(sample.text)) throw fail("empty text");
    for (const auto& l : record["labels"]) {
      if (!l.is_string()) throw fail("non-string label");
      sample.labels.push_back(l.get<std::string>());
    }
    if (sample.labels.empty()) throw fail("empty labels array");
    out.push_back(std::move(sample));
  }
  return out;
}

inline std::vector<LabeledSample> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file: " + path.string());
  return read_corpus(in);
}

inline void write_corpus(std::ostream& out, std::span<const LabeledSample> samples) {
  for (const auto& s : samples) {
    nlohmann::json record = {{"text", s.text}, {"labels", s.labels}};
    out << record.dump(-1, ' ', false) << '\n';
  }
}

inline void save_corpus(const std::filesystem::path& path, std::span<const LabeledSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus file: " + path.string());
  write_corpus(out, samples);
}

// One label per line, order significant. Blank lines are skipped.
inline LabelSet load_label_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open label file: " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::is_blank(line)) continue;
    labels.push_back(line);
  }
  return LabelSet(std::move(labels));
}

inline void check_labels(std::span<const LabeledSample> samples, const LabelSet& labels) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto& l : samples[i].labels) {
      if (!labels.contains(l)) {
        throw Error("sample " + std::to_string(i) + " has label outside the label set: " + l);
      }
    }
  }
}

// One example per (sample, label) in sample order then label order.
// Duplicate pairs are kept.
inline std::vector<ExpandedExample> expand_multilabel(std::span<const LabeledSample> samples) {
  std::vector<ExpandedExample> out;
  for (const auto& s : samples) {
    for (const auto& l : s.labels) out.push_back({s.text, l});
  }
  return out;
}

struct Split {
  std::vector<ExpandedExample> train;
  std::vector<ExpandedExample> test;
};

// Per label: seeded shuffle of that label's examples, first k go to train.
// Both halves keep the input's relative order.
inline Split few_shot_split(std::span<const ExpandedExample> examples, std::size_t k_per_label,
                            std::uint64_t seed) {
  if (k_per_label == 0) throw Error("k_per_label must be positive");
  const LabelSet labels = LabelSet::from_examples(examples);
  std::vector<std::vector<std::size_t>> by_label(labels.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    by_label[labels.index_of(examples[i].label)].push_back(i);
  }
  std::vector<bool> in_train(examples.size(), false);
  for (std::size_t li = 0; li < by_label.size(); ++li) {
    auto& idx = by_label[li];
    if (idx.size() < k_per_label + 1) {
      throw Error("label '" + labels[li] + "' has " + std::to_string(idx.size()) +
                  " examples; need at least " + std::to_string(k_per_label + 1));
    }
    Rng rng(mix_seed(seed, li));
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t j = 0; j < k_per_label; ++j) in_train[idx[j]] = true;
  }
  Split split;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    (in_train[i] ? split.train : split.test).push_back(examples[i]);
  }
  return split;
}

}  // namespace tckit
