#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "cobra/prompting.hpp"

using namespace cobra;
using namespace cobra::prompt;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(COBRA_FIXTURES) + "/" + name, std::ios::binary);
  EXPECT_TRUE(in.good()) << name;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Conversation two_turn() {
  return Conversation{{{Role::User, "What is the man holding?"},
                       {Role::Assistant, "An umbrella."},
                       {Role::User, "What color is it?"}},
                      std::nullopt,
                      OcrOrdering::None};
}

Conversation sign(OcrOrdering o) {
  auto c = Conversation::single("What is written on the sign?");
  c.ocr = "STOP";
  c.ordering = o;
  return c;
}

}  // namespace

TEST(Templates, ChatGoldens) {
  EXPECT_EQ(render_chat(Conversation::single("What is the man holding?")), fixture("chat_single.txt"));
  EXPECT_EQ(render_chat(two_turn()), fixture("chat_two_turn.txt"));
}

TEST(Templates, BaseGoldens) {
  EXPECT_EQ(render_base(Conversation::single("What is the man holding?")), fixture("base_single.txt"));
  EXPECT_EQ(render_base(two_turn()), fixture("base_two_turn.txt"));
  EXPECT_EQ(render(two_turn(), Template::Base), fixture("base_two_turn.txt"));
}

TEST(Templates, OcrGoldens) {
  EXPECT_EQ(render_chat(sign(OcrOrdering::OcrFirst)), fixture("ocr_first.txt"));
  EXPECT_EQ(render_chat(sign(OcrOrdering::OcrLast)), fixture("ocr_last.txt"));
}

TEST(Templates, EmptyInstruction) {
  EXPECT_EQ(render_chat(Conversation::single("")), "<|user|>\n<|endoftext|>\n<|assistant|>\n");
  EXPECT_EQ(render_base(Conversation::single("")), "In:\nOut:");
}

TEST(Templates, ParseInvertsRender) {
  for (const auto& c : {Conversation::single("x"), two_turn(), Conversation::single("")}) {
    EXPECT_EQ(parse_chat(render_chat(c)), c);
    EXPECT_EQ(parse_base(render_base(c)), c);
  }
}

TEST(Templates, AnswerSuffixIsTwoTurnPrefix) {
  const std::string full = render_chat(Conversation::single("What is the man holding?")) + answer_suffix("An umbrella.");
  EXPECT_TRUE(fixture("chat_two_turn.txt").starts_with(full));
  EXPECT_EQ(answer_suffix("ok"), "ok<|endoftext|>");
}

TEST(Ordering, Examples) {
  EXPECT_EQ(apply_ocr_ordering("What is written?", "STOP", OcrOrdering::OcrFirst),
            "Reference OCR token: STOP\nWhat is written?");
  EXPECT_EQ(apply_ocr_ordering("What is written?", "STOP", OcrOrdering::OcrLast),
            "What is written?\nReference OCR token: STOP");
  EXPECT_EQ(apply_ocr_ordering("What is written?", "STOP", OcrOrdering::None), "What is written?");
}

TEST(Ordering, SameBytesDifferentOrder) {
  const std::string a = render_chat(sign(OcrOrdering::OcrFirst));
  const std::string b = render_chat(sign(OcrOrdering::OcrLast));
  EXPECT_NE(a, b);
  auto sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  EXPECT_EQ(sa, sb);
}

TEST(Ordering, ValidationErrors) {
  EXPECT_THROW(Conversation{}.validate(), OrderingError);
  Conversation starts_with_assistant{{{Role::Assistant, "a"}, {Role::User, "b"}}, std::nullopt, OcrOrdering::None};
  EXPECT_THROW(render_chat(starts_with_assistant), OrderingError);
  Conversation ends_with_assistant{{{Role::User, "a"}, {Role::Assistant, "b"}}, std::nullopt, OcrOrdering::None};
  EXPECT_THROW(render_base(ends_with_assistant), OrderingError);
  Conversation repeated{{{Role::User, "a"}, {Role::User, "b"}}, std::nullopt, OcrOrdering::None};
  EXPECT_THROW(repeated.validate(), OrderingError);
  EXPECT_THROW(parse_chat("In:x\nOut:"), OrderingError);
}

TEST(Ordering, Names) {
  EXPECT_EQ(parse_ocr_ordering("first"), OcrOrdering::OcrFirst);
  EXPECT_EQ(parse_ocr_ordering("last"), OcrOrdering::OcrLast);
  EXPECT_EQ(parse_template("base"), Template::Base);
  EXPECT_THROW(parse_template("llama"), ConfigError);
  EXPECT_THROW(parse_ocr_ordering("middle"), ConfigError);
}

TEST(Tokenizer, Examples) {
  EXPECT_EQ(tokenize("ab"), (std::vector<TokenId>{97, 98}));
  EXPECT_EQ(tokenize("<|user|>\nx<|endoftext|>"), (std::vector<TokenId>{kUser, 10, 120, kEndOfText}));
  EXPECT_EQ(tokenize("<|assistant|>"), (std::vector<TokenId>{kAssistant}));
  // A broken marker stays as bytes.
  EXPECT_EQ(tokenize("<|user").size(), 6u);
  EXPECT_TRUE(is_special(kEndOfText));
  EXPECT_FALSE(is_special(255));
}

TEST(Tokenizer, AllBytesAndUnknownIds) {
  std::vector<TokenId> ids(256);
  for (int i = 0; i < 256; ++i) ids[i] = i;
  const std::string s = detokenize(ids);
  ASSERT_EQ(s.size(), 256u);
  for (int i = 0; i < 256; ++i) EXPECT_EQ(static_cast<unsigned char>(s[i]), i);
  const std::vector<TokenId> bad{97, 9999, -1};
  EXPECT_EQ(detokenize(bad), "a" + std::string(kUnknownMarker) + std::string(kUnknownMarker));
}

TEST(Tokenizer, RoundTripFuzz) {
  std::mt19937_64 rng(7);
  const std::vector<std::string> pieces{"<|user|>", "<|assistant|>", "<|endoftext|>", "<|", "|>", "\xC3\xA9",
                                        "\xE2\x82\xAC", "\xF0\x9F\x98\x80", "\n", "In:", "Out:"};
  for (int trial = 0; trial < 10000; ++trial) {
    std::string s;
    const int n = static_cast<int>(rng() % 12);
    for (int k = 0; k < n; ++k) {
      if (rng() % 2) s += pieces[rng() % pieces.size()];
      else s += static_cast<char>(rng() % 256);
    }
    ASSERT_EQ(detokenize(tokenize(s)), s) << trial;
  }
}

TEST(Jsonl, ParsesFixture) {
  EXPECT_EQ(parse_conversation_jsonl(fixture("two_turn.jsonl")), two_turn());
}

TEST(Jsonl, OcrRecordAndErrors) {
  const auto c = parse_conversation_jsonl(
      "{\"role\": \"user\", \"text\": \"What is written on the sign?\"}\n"
      "{\"ocr\": \"STOP\", \"ordering\": \"last\"}\n");
  EXPECT_EQ(render_chat(c), fixture("ocr_last.txt"));
  EXPECT_THROW(parse_conversation_jsonl("{not json}\n"), ConfigError);
  EXPECT_THROW(parse_conversation_jsonl("{\"role\": \"system\", \"text\": \"x\"}\n"), ConfigError);
}
