// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tckit/error.hpp"

namespace tckit {

struct LabelStats {
  std::string label;
  double precision = 0.0;  // 0 when the label is never predicted
  double recall = 0.0;     // 0 when the label never occurs in gold
  std::size_t support = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  std::size_t n_test = 0;
  std::vector<std::string> labels;
  // confusion[g][p]: gold label g predicted as p, indices into labels.
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<LabelStats> per_label;
};

// labels fixes the row/column order; labels seen only in pred/gold are
// appended in first-occurrence order (gold before pred at each position).
inline EvalReport accuracy(std::span<const std::string> pred, std::span<const std::string> gold,
                           std::span<const std::string> labels = {}) {
  if (pred.size() != gold.size()) {
    throw Error("prediction count " + std::to_string(pred.size()) + " does not match gold count " +
                std::to_string(gold.size()));
  }
  if (gold.empty()) throw Error("cannot evaluate an empty test set");
  EvalReport r;
  std::unordered_map<std::string, std::size_t> index;
  const auto intern = [&](const std::string& l) {
    auto [it, fresh] = index.emplace(l, r.labels.size());
    if (fresh) r.labels.push_back(l);
    return it->second;
  };
  for (const auto& l : labels) intern(l);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    intern(gold[i]);
    intern(pred[i]);
  }
  const std::size_t n = r.labels.size();
  r.confusion.assign(n, std::vector<std::size_t>(n, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::size_t g = index.at(gold[i]);
    const std::size_t p = index.at(pred[i]);
    ++r.confusion[g][p];
    if (g == p) ++correct;
  }
  r.n_test = gold.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_test);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += r.confusion[k][j];
      col += r.confusion[j][k];
    }
    const double tp = static_cast<double>(r.confusion[k][k]);
    r.per_label.push_back({r.labels[k], col ? tp / static_cast<double>(col) : 0.0,
                           row ? tp / static_cast<double>(row) : 0.0, row});
  }
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_label = nlohmann::json::array();
  for (const auto& s : r.per_label) {
    per_label.push_back({{"label", s.label}, {"precision", s.precision}, {"recall", s.recall}, {"support", s.support}});
  }
  return {{"accuracy", r.accuracy},   {"n_test", r.n_test},       {"labels", r.labels},
          {"confusion", r.confusion}, {"per_label", per_label}};
}

}  // namespace tckit
