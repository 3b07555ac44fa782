// SPDX-License-Identifier: Apache-2.0
//
// Synthetic four-topic corpus. Each topic owns a disjoint set of keyword
// characters; sentences mix keywords of their topic with shared filler
// characters. No keyword appears in a label or in the built-in templates.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tckit/corpus.hpp"
#include "tckit/rng.hpp"
#include "tckit/utf8.hpp"

namespace tckit::toy {

struct Topic {
  const char* label;
  const char* keywords;
};

inline constexpr std::array<Topic, 4> kTopics = {{
    {"体育", "球赛队跑冠军篮足拳泳裁练"},
    {"财经", "股债币银税贷盈亏利涨跌资"},
    {"旅游", "景山海岛宿店票船湖峰寺岸"},
    {"电影", "导演片角幕镜戏剧星奖映拍"},
}};

inline constexpr const char* kFiller = "了在有和人我他们来去说天年很都也就那要会";

inline std::vector<std::string> labels() {
  std::vector<std::string> out;
  for (const auto& t : kTopics) out.emplace_back(t.label);
  return out;
}

// per_label sentences for every topic, interleaved topic by topic.
inline std::vector<LabeledSample> make_corpus(std::size_t per_label, std::uint64_t seed) {
  Rng rng(seed);
  const auto filler = utf8::decode(kFiller);
  std::vector<std::vector<char32_t>> keywords;
  for (const auto& t : kTopics) keywords.push_back(utf8::decode(t.keywords));
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < per_label; ++i) {
    for (std::size_t k = 0; k < kTopics.size(); ++k) {
      const std::size_t len = 8 + static_cast<std::size_t>(rng.below(5));
      std::vector<char32_t> chars;
      std::size_t n_keywords = 0;
      for (std::size_t c = 0; c < len; ++c) {
        const bool keyword = rng.uniform() < 0.5 || (len - c) <= (2 - std::min<std::size_t>(2, n_keywords));
        if (keyword) {
          chars.push_back(keywords[k][rng.below(keywords[k].size())]);
          ++n_keywords;
        } else {
          chars.push_back(filler[rng.below(filler.size())]);
        }
      }
      out.push_back({utf8::encode(chars), {kTopics[k].label}});
    }
  }
  return out;
}

}  // namespace tckit::toy
