// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tckit/corpus.hpp"
#include "tckit/error.hpp"
#include "tckit/tokenizer.hpp"
#include "tckit/utf8.hpp"

namespace tckit {

// A pattern with exactly one {label} slot and one {text} slot, in either
// order. Everything else is literal text copied verbatim into the input.
class PromptTemplate {
 public:
  static constexpr std::string_view kLabelSlot = "{label}";
  static constexpr std::string_view kTextSlot = "{text}";

  PromptTemplate(std::string name, std::string pattern)
      : name_(std::move(name)), pattern_(std::move(pattern)) {
    if (pattern_.empty()) throw Error("prompt template '" + name_ + "' is empty");
    const auto count = [&](std::string_view slot) {
      std::size_t n = 0;
      for (auto pos = pattern_.find(slot); pos != std::string::npos;
           pos = pattern_.find(slot, pos + slot.size())) {
        ++n;
      }
      return n;
    };
    if (count(kLabelSlot) != 1 || count(kTextSlot) != 1) {
      throw Error("prompt template '" + name_ +
                  "' must contain exactly one {label} and one {text} slot");
    }
    const std::size_t lp = pattern_.find(kLabelSlot);
    const std::size_t tp = pattern_.find(kTextSlot);
    label_first_ = lp < tp;
    const std::size_t first = std::min(lp, tp);
    const std::size_t first_len = label_first_ ? kLabelSlot.size() : kTextSlot.size();
    const std::size_t second = std::max(lp, tp);
    const std::size_t second_len = label_first_ ? kTextSlot.size() : kLabelSlot.size();
    literals_[0] = pattern_.substr(0, first);
    literals_[1] = pattern_.substr(first + first_len, second - first - first_len);
    literals_[2] = pattern_.substr(second + second_len);
  }

  const std::string& name() const noexcept { return name_; }
  const std::string& pattern() const noexcept { return pattern_; }
  bool label_first() const noexcept { return label_first_; }

  // Literal text before the first slot, between the slots, after the second.
  const std::string& literal(std::size_t i) const { return literals_.at(i); }

  std::string literal_text() const { return literals_[0] + literals_[1] + literals_[2]; }

 private:
  std::string name_;
  std::string pattern_;
  std::array<std::string, 3> literals_;
  bool label_first_ = true;
};

namespace templates {

inline PromptTemplate pretrain() { return {"pretrain", "这是一篇关于{label}的内容：{text}"}; }
inline PromptTemplate prompt1() { return {"prompt-1", "下面是一篇关于{label}的内容：{text}"}; }
inline PromptTemplate prompt2() { return {"prompt-2", "【下面是一篇关于“{label}”的内容】：{text}。"}; }

inline std::vector<PromptTemplate> builtin() { return {pretrain(), prompt1(), prompt2()}; }

inline PromptTemplate load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open prompt template file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string pattern = ss.str();
  while (!pattern.empty() && (pattern.back() == '\n' || pattern.back() == '\r')) pattern.pop_back();
  return {path.stem().string(), pattern};
}

// "pretrain", "1", "2", "prompt-1", "prompt-2", or a template file path.
inline PromptTemplate resolve(const std::string& spec) {
  if (spec == "pretrain") return pretrain();
  if (spec == "1" || spec == "prompt-1") return prompt1();
  if (spec == "2" || spec == "prompt-2") return prompt2();
  return load(spec);
}

}  // namespace templates

// Characters enter in first-occurrence order over labels, then template
// literals, then corpus texts.
inline Vocab build_vocab(std::span<const ExpandedExample> corpus,
                         std::span<const PromptTemplate> prompt_templates, const LabelSet& labels,
                         std::size_t max_size = 0) {
  VocabBuilder builder(max_size);
  for (const auto& l : labels.labels()) builder.add_text(l);
  for (const auto& t : prompt_templates) builder.add_text(t.literal_text());
  for (const auto& e : corpus) builder.add_text(e.text);
  return builder.build();
}

enum class InputKind { kFilled, kMasked, kBare };

struct RenderedInput {
  std::vector<TokenId> token_ids;
  std::vector<std::size_t> mask_positions;
  // Aligned with mask_positions; PAD where the label is shorter than the
  // span. Empty for inference inputs.
  std::vector<TokenId> mask_targets;
  InputKind kind = InputKind::kBare;

  bool operator==(const RenderedInput&) const = default;
};

namespace detail {

// Lays out CLS + template with the label slot given as `slot` tokens, the
// text tail truncated to fit max_seq_len. Returns the slot start index.
inline std::size_t layout_prompt(const PromptTemplate& t, const Vocab& v,
                                 const std::vector<TokenId>& slot, std::string_view text,
                                 std::size_t max_seq_len, std::vector<TokenId>& out) {
  const auto lit0 = encode(v, t.literal(0));
  const auto lit1 = encode(v, t.literal(1));
  const auto lit2 = encode(v, t.literal(2));
  auto text_ids = encode(v, text);
  const std::size_t fixed = 1 + lit0.size() + lit1.size() + lit2.size() + slot.size();
  if (fixed > max_seq_len) {
    throw Error("prompt template '" + t.name() + "' plus label needs " + std::to_string(fixed) +
                " tokens; max_seq_len is " + std::to_string(max_seq_len));
  }
  if (text_ids.size() > max_seq_len - fixed) text_ids.resize(max_seq_len - fixed);

  out.clear();
  out.push_back(special::kCls);
  const auto put = [&](const std::vector<TokenId>& ids) { out.insert(out.end(), ids.begin(), ids.end()); };
  std::size_t slot_start = 0;
  put(lit0);
  if (t.label_first()) {
    slot_start = out.size();
    put(slot);
    put(lit1);
    put(text_ids);
  } else {
    put(text_ids);
    put(lit1);
    slot_start = out.size();
    put(slot);
  }
  put(lit2);
  return slot_start;
}

}  // namespace detail

inline RenderedInput render_filled(const PromptTemplate& t, const Vocab& v, const ExpandedExample& ex,
                                   std::size_t max_seq_len) {
  RenderedInput r;
  r.kind = InputKind::kFilled;
  detail::layout_prompt(t, v, encode(v, ex.label), ex.text, max_seq_len, r.token_ids);
  return r;
}

// The label slot becomes `span` MASK tokens; nothing else is masked.
inline RenderedInput render_masked(const PromptTemplate& t, const Vocab& v, const ExpandedExample& ex,
                                   std::size_t span, std::size_t max_seq_len) {
  auto label_ids = encode(v, ex.label);
  if (span == 0) throw Error("mask span must be positive");
  if (label_ids.size() > span) {
    throw Error("label '" + ex.label + "' is " + std::to_string(label_ids.size()) +
                " tokens, longer than mask span " + std::to_string(span));
  }
  RenderedInput r;
  r.kind = InputKind::kMasked;
  const std::vector<TokenId> masks(span, special::kMask);
  const std::size_t start = detail::layout_prompt(t, v, masks, ex.text, max_seq_len, r.token_ids);
  for (std::size_t i = 0; i < span; ++i) r.mask_positions.push_back(start + i);
  label_ids.resize(span, special::kPad);
  r.mask_targets = std::move(label_ids);
  return r;
}

inline RenderedInput render_inference(const PromptTemplate& t, const Vocab& v, std::string_view text,
                                      std::size_t span, std::size_t max_seq_len) {
  if (span == 0) throw Error("mask span must be positive");
  RenderedInput r;
  r.kind = InputKind::kMasked;
  const std::vector<TokenId> masks(span, special::kMask);
  const std::size_t start = detail::layout_prompt(t, v, masks, text, max_seq_len, r.token_ids);
  for (std::size_t i = 0; i < span; ++i) r.mask_positions.push_back(start + i);
  return r;
}

inline RenderedInput render_bare(const Vocab& v, std::string_view text, std::size_t max_seq_len) {
  if (max_seq_len < 1) throw Error("max_seq_len must be positive");
  RenderedInput r;
  r.kind = InputKind::kBare;
  r.token_ids.push_back(special::kCls);
  for (TokenId id : encode(v, text)) {
    if (r.token_ids.size() >= max_seq_len) break;
    r.token_ids.push_back(id);
  }
  return r;
}

// Padded batch ready for the encoder. Row-major [rows x seq_len].
struct EncodedBatch {
  std::size_t rows = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> attention_mask;  // 1 = real token
  std::vector<std::vector<std::size_t>> mask_positions;
  std::vector<std::vector<TokenId>> mask_targets;
  std::vector<std::size_t> labels;  // class indices; empty when unlabeled

  std::span<const TokenId> row_ids(std::size_t i) const {
    return std::span<const TokenId>(token_ids).subspan(i * seq_len, seq_len);
  }
  std::span<const std::uint8_t> row_mask(std::size_t i) const {
    return std::span<const std::uint8_t>(attention_mask).subspan(i * seq_len, seq_len);
  }
};

// Pads every input with PAD to the longest one (or to pad_to when larger).
inline EncodedBatch make_batch(std::span<const RenderedInput> inputs,
                               std::span<const std::size_t> labels = {}, std::size_t pad_to = 0) {
  if (!labels.empty() && labels.size() != inputs.size()) {
    throw Error("batch label count does not match input count");
  }
  EncodedBatch b;
  b.rows = inputs.size();
  b.seq_len = pad_to;
  for (const auto& in : inputs) b.seq_len = std::max(b.seq_len, in.token_ids.size());
  b.token_ids.assign(b.rows * b.seq_len, special::kPad);
  b.attention_mask.assign(b.rows * b.seq_len, 0);
  for (std::size_t i = 0; i < b.rows; ++i) {
    const auto& ids = inputs[i].token_ids;
    std::copy(ids.begin(), ids.end(), b.token_ids.begin() + static_cast<std::ptrdiff_t>(i * b.seq_len));
    std::fill_n(b.attention_mask.begin() + static_cast<std::ptrdiff_t>(i * b.seq_len), ids.size(), 1);
    b.mask_positions.push_back(inputs[i].mask_positions);
    b.mask_targets.push_back(inputs[i].mask_targets);
  }
  b.labels.assign(labels.begin(), labels.end());
  return b;
}

}  // namespace tckit
