// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tckit/prompt.hpp"
#include "tckit/rng.hpp"
#include "tckit/toy_corpus.hpp"
#include "tckit/utf8.hpp"

namespace tckit {
namespace {

Vocab ascii_vocab() {
  Vocab v;
  for (char c = 'A'; c <= 'Z'; ++c) v.add(static_cast<char32_t>(c));
  for (char c = 'a'; c <= 'z'; ++c) v.add(static_cast<char32_t>(c));
  for (char32_t cp : utf8::decode("餐馆这家厅的菜很好吃")) v.add(cp);
  return v;
}

std::vector<TokenId> cls_then(const Vocab& v, const std::string& s) {
  std::vector<TokenId> ids{special::kCls};
  for (TokenId id : encode(v, s)) ids.push_back(id);
  return ids;
}

const PromptTemplate kXY("xy", "X{label}Y{text}");

TEST(PromptTemplate, ValidatesSlots) {
  EXPECT_THROW(PromptTemplate("e", ""), Error);
  EXPECT_THROW(PromptTemplate("e", "{text} only"), Error);
  EXPECT_THROW(PromptTemplate("e", "{label}{label}{text}"), Error);
  const PromptTemplate t("t", "a{text}b{label}c");
  EXPECT_FALSE(t.label_first());
  EXPECT_EQ(t.literal(0), "a");
  EXPECT_EQ(t.literal(1), "b");
  EXPECT_EQ(t.literal(2), "c");
}

TEST(PromptTemplate, BuiltinsAndResolve) {
  for (const auto& t : templates::builtin()) EXPECT_TRUE(t.label_first()) << t.name();
  EXPECT_EQ(templates::resolve("pretrain").pattern(), "这是一篇关于{label}的内容：{text}");
  EXPECT_EQ(templates::resolve("1").name(), "prompt-1");
  EXPECT_EQ(templates::resolve("prompt-2").name(), "prompt-2");
  EXPECT_THROW(templates::resolve("/nonexistent/prompt.txt"), Error);
  const auto path = std::filesystem::temp_directory_path() / "tckit_prompt_test.txt";
  {
    std::ofstream out(path);
    out << "Q{text}R{label}\n";
  }
  EXPECT_EQ(templates::resolve(path.string()).pattern(), "Q{text}R{label}");
  std::filesystem::remove(path);
}

TEST(RenderFilled, SubstitutesSlots) {
  const auto v = ascii_vocab();
  EXPECT_EQ(render_filled(kXY, v, {"b", "A"}, 64).token_ids, cls_then(v, "XAYb"));
  EXPECT_EQ(render_filled(kXY, v, {"", "A"}, 64).token_ids, cls_then(v, "XAY"));
}

TEST(RenderFilled, TruncatesTextTailOnly) {
  const auto v = ascii_vocab();
  const auto r = render_filled(kXY, v, {"abcdefgh", "AB"}, 8);
  EXPECT_EQ(r.token_ids, cls_then(v, "XABYabc"));
  EXPECT_THROW(render_filled(kXY, v, {"a", "ABCDEFG"}, 8), Error);
}

TEST(RenderMasked, LabelBecomesMaskSpanWithTargets) {
  const auto v = ascii_vocab();
  const PromptTemplate t("p", "这家{label}的{text}");
  const auto r = render_masked(t, v, {"菜很好吃", "餐馆"}, 2, 64);
  ASSERT_EQ(r.mask_positions.size(), 2u);
  for (auto p : r.mask_positions) EXPECT_EQ(r.token_ids[p], special::kMask);
  EXPECT_EQ(r.mask_targets, (std::vector<TokenId>{v.id(U'餐'), v.id(U'馆')}));
  EXPECT_EQ(r.mask_positions, (std::vector<std::size_t>{3, 4}));
}

TEST(RenderMasked, ShortLabelPadsTargets) {
  const auto v = ascii_vocab();
  const auto r = render_masked(kXY, v, {"b", "A"}, 2, 64);
  EXPECT_EQ(r.mask_targets, (std::vector<TokenId>{v.id(U'A'), special::kPad}));
  EXPECT_EQ(r.token_ids, (std::vector<TokenId>{special::kCls, v.id(U'X'), special::kMask, special::kMask, v.id(U'Y'),
                                               v.id(U'b')}));
  const auto exact = render_masked(kXY, v, {"b", "AB"}, 2, 64);
  for (TokenId target : exact.mask_targets) EXPECT_NE(target, special::kPad);
  EXPECT_THROW(render_masked(kXY, v, {"b", "ABC"}, 2, 64), Error);
}

TEST(RenderInference, MaskSpanWithoutTargets) {
  const auto v = ascii_vocab();
  const auto r = render_inference(kXY, v, "abc", 3, 64);
  EXPECT_EQ(r.mask_positions.size(), 3u);
  EXPECT_TRUE(r.mask_targets.empty());
  EXPECT_TRUE(r == render_inference(kXY, v, "abc", 3, 64));
  for (auto p : r.mask_positions) EXPECT_EQ(r.token_ids[p], special::kMask);
}

TEST(RenderBare, ClsPlusText) {
  const auto v = ascii_vocab();
  EXPECT_EQ(render_bare(v, "ab", 64).token_ids, cls_then(v, "ab"));
  EXPECT_EQ(render_bare(v, "", 64).token_ids, std::vector<TokenId>{special::kCls});
  EXPECT_EQ(render_bare(v, "abcdefgh", 4).token_ids, cls_then(v, "abc"));
  EXPECT_TRUE(render_bare(v, "ab", 64).mask_positions.empty());
}

// Text tokens of a label-first rendering whose slot starts at `slot` and
// spans `slot_len` tokens.
std::vector<TokenId> text_region(const PromptTemplate& t, const Vocab& v, const std::vector<TokenId>& ids,
                                 std::size_t slot, std::size_t slot_len) {
  const std::size_t begin = slot + slot_len + encode(v, t.literal(1)).size();
  const std::size_t end = ids.size() - encode(v, t.literal(2)).size();
  return {ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(end)};
}

// On random toy examples and every built-in template: the masked and filled
// renderings agree off the slot, and the text tokens are exactly those of
// the bare rendering (in order), so no text character is ever masked.
TEST(RenderProperties, MaskingNeverTouchesText) {
  const auto samples = toy::make_corpus(30, 9);
  const auto labels = LabelSet(toy::labels());
  const auto ex = expand_multilabel(samples);
  const auto tpl = templates::builtin();
  const auto v = build_vocab(ex, tpl, labels);
  Rng rng(2);
  for (const auto& t : tpl) {
    const std::size_t fixed = 1 + utf8::length(t.literal_text()) + labels.mask_span() + 1;
    for (const auto& e : ex) {
      const std::size_t max_len = fixed + rng.below(20);
      const std::size_t span = labels.mask_span() + rng.below(2);
      const auto filled = render_filled(t, v, e, max_len);
      const auto masked = render_masked(t, v, e, span, max_len);
      ASSERT_LE(masked.token_ids.size(), max_len);
      for (std::size_t i = 0; i + 1 < masked.mask_positions.size(); ++i) {
        EXPECT_LT(masked.mask_positions[i], masked.mask_positions[i + 1]);
      }
      const std::size_t lab = encode(v, e.label).size();
      const std::size_t slot = masked.mask_positions.front();
      for (std::size_t i = 0; i < slot; ++i) EXPECT_EQ(masked.token_ids[i], filled.token_ids[i]);
      for (std::size_t i = 0; i < masked.token_ids.size(); ++i) {
        if (i < slot || i >= slot + span) EXPECT_NE(masked.token_ids[i], special::kMask);
      }
      const auto m_text = text_region(t, v, masked.token_ids, slot, span);
      const auto f_text = text_region(t, v, filled.token_ids, slot, lab);
      const auto bare = render_bare(v, e.text, 1000);
      const std::vector<TokenId> b_text(bare.token_ids.begin() + 1, bare.token_ids.end());
      // Truncation only shortens the text tail, so each is a prefix of the next.
      ASSERT_LE(m_text.size(), f_text.size());
      ASSERT_LE(f_text.size(), b_text.size());
      EXPECT_TRUE(std::equal(m_text.begin(), m_text.end(), f_text.begin()));
      EXPECT_TRUE(std::equal(f_text.begin(), f_text.end(), b_text.begin()));
    }
  }
}

TEST(MakeBatch, PadsToLongest) {
  const auto v = ascii_vocab();
  const std::vector<RenderedInput> in{render_bare(v, "ab", 64), render_bare(v, "abcd", 64)};
  const std::vector<std::size_t> labels{1, 0};
  const auto b = make_batch(in, labels);
  EXPECT_EQ(b.rows, 2u);
  EXPECT_EQ(b.seq_len, 5u);
  EXPECT_EQ(b.row_ids(0)[3], special::kPad);
  EXPECT_EQ(b.row_mask(0)[2], 1);
  EXPECT_EQ(b.row_mask(0)[3], 0);
  EXPECT_EQ(b.labels, labels);
  EXPECT_EQ(make_batch(in, {}, 9).seq_len, 9u);
  const std::vector<std::size_t> wrong{1};
  EXPECT_THROW(make_batch(in, wrong), Error);
}

}  // namespace
}  // namespace tckit
