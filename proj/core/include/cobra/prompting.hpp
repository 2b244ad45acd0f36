#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cobra/errors.hpp"

namespace cobra::prompt {

class OrderingError : public Error {
 public:
  using Error::Error;
};

using TokenId = std::int32_t;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by the special
// tokens. Any vocabulary of at least kMinVocab entries can host it.
inline constexpr TokenId kEndOfText = 256;
inline constexpr TokenId kUser = 257;
inline constexpr TokenId kAssistant = 258;
inline constexpr std::size_t kMinVocab = 259;

inline constexpr std::string_view kEndOfTextText = "<|endoftext|>";
inline constexpr std::string_view kUserText = "<|user|>";
inline constexpr std::string_view kAssistantText = "<|assistant|>";

// Replacement for ids outside the vocabulary (U+FFFD in UTF-8).
inline constexpr std::string_view kUnknownMarker = "\xEF\xBF\xBD";

// Special tokens are recognised by longest match at every position; all other
// bytes map to their own id.
std::vector<TokenId> tokenize(std::string_view text);
std::string detokenize(std::span<const TokenId> ids);
bool is_special(TokenId id);

enum class Role { User, Assistant };
enum class OcrOrdering { None, OcrFirst, OcrLast };
enum class Template { Chat, Base };

OcrOrdering parse_ocr_ordering(std::string_view name);  // first | last | none
std::string_view to_string(OcrOrdering o);
Template parse_template(std::string_view name);  // chat | base
std::string_view to_string(Template t);

struct Turn {
  Role role = Role::User;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

// Roles alternate starting with the user; the last turn is the user turn the
// model answers. When `ocr` is set it is merged into that last user turn
// according to `ordering`.
struct Conversation {
  std::vector<Turn> turns;
  std::optional<std::string> ocr;
  OcrOrdering ordering = OcrOrdering::None;

  void validate() const;  // throws OrderingError
  static Conversation single(std::string question);

  friend bool operator==(const Conversation&, const Conversation&) = default;
};

// "Reference OCR token: {ocr}\n{question}" (first) or
// "{question}\nReference OCR token: {ocr}" (last); none returns the question.
std::string apply_ocr_ordering(std::string_view question, std::string_view ocr_tokens, OcrOrdering ordering);

std::string render_chat(const Conversation& conv);
std::string render_base(const Conversation& conv);
std::string render(const Conversation& conv, Template t);

// Inverse of the renderers for prompts they produced (OCR already merged).
Conversation parse_chat(std::string_view prompt);
Conversation parse_base(std::string_view prompt);

// Text that follows a rendered prompt when the assistant answers.
std::string answer_suffix(std::string_view answer);

// One JSON object per line: {"role": "user"|"assistant", "text": "..."}, or
// {"ocr": "...", "ordering": "first"|"last"|"none"}.
Conversation parse_conversation_jsonl(std::string_view text);

}  // namespace cobra::prompt
