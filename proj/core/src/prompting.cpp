#include "cobra/prompting.hpp"

#include <array>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cobra::prompt {

namespace {

struct Special {
  std::string_view text;
  TokenId id;
};

constexpr std::array<Special, 3> kSpecials{{
    {kEndOfTextText, kEndOfText},
    {kUserText, kUser},
    {kAssistantText, kAssistant},
}};

constexpr std::string_view kOcrLabel = "Reference OCR token: ";

std::string_view special_text(TokenId id) {
  for (const auto& s : kSpecials) {
    if (s.id == id) return s.text;
  }
  return {};
}

bool consume(std::string_view& s, std::string_view prefix) {
  if (!s.starts_with(prefix)) return false;
  s.remove_prefix(prefix.size());
  return true;
}

}  // namespace

std::vector<TokenId> tokenize(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const Special* best = nullptr;
    if (text[i] == '<') {
      for (const auto& s : kSpecials) {
        if (text.substr(i).starts_with(s.text) && (!best || s.text.size() > best->text.size())) best = &s;
      }
    }
    if (best) {
      ids.push_back(best->id);
      i += best->text.size();
    } else {
      ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(text[i])));
      ++i;
    }
  }
  return ids;
}

std::string detokenize(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    } else if (auto s = special_text(id); !s.empty()) {
      out.append(s);
    } else {
      out.append(kUnknownMarker);
    }
  }
  return out;
}

bool is_special(TokenId id) { return !special_text(id).empty(); }

OcrOrdering parse_ocr_ordering(std::string_view name) {
  if (name == "first" || name == "ocr_first") return OcrOrdering::OcrFirst;
  if (name == "last" || name == "ocr_last") return OcrOrdering::OcrLast;
  if (name == "none") return OcrOrdering::None;
  throw ConfigError("unknown OCR ordering '" + std::string(name) + "' (expected first|last|none)");
}

std::string_view to_string(OcrOrdering o) {
  switch (o) {
    case OcrOrdering::OcrFirst:
      return "first";
    case OcrOrdering::OcrLast:
      return "last";
    default:
      return "none";
  }
}

Template parse_template(std::string_view name) {
  if (name == "chat") return Template::Chat;
  if (name == "base") return Template::Base;
  throw ConfigError("unknown template '" + std::string(name) + "' (expected chat|base)");
}

std::string_view to_string(Template t) { return t == Template::Chat ? "chat" : "base"; }

void Conversation::validate() const {
  if (turns.empty()) throw OrderingError("conversation has no turns");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const Role expected = (i % 2 == 0) ? Role::User : Role::Assistant;
    if (turns[i].role != expected) {
      throw OrderingError(i == 0 ? "conversation must start with a user turn"
                                 : "turn " + std::to_string(i) + " breaks user/assistant alternation");
    }
  }
  if (turns.back().role != Role::User) throw OrderingError("conversation must end with a user turn");
}

Conversation Conversation::single(std::string question) {
  Conversation c;
  c.turns.push_back({Role::User, std::move(question)});
  return c;
}

std::string apply_ocr_ordering(std::string_view question, std::string_view ocr_tokens, OcrOrdering ordering) {
  std::string out;
  switch (ordering) {
    case OcrOrdering::OcrFirst:
      out.append(kOcrLabel).append(ocr_tokens).append("\n").append(question);
      break;
    case OcrOrdering::OcrLast:
      out.append(question).append("\n").append(kOcrLabel).append(ocr_tokens);
      break;
    case OcrOrdering::None:
      out.assign(question);
      break;
  }
  return out;
}

namespace {

std::string turn_text(const Conversation& conv, std::size_t i) {
  const bool last = i + 1 == conv.turns.size();
  if (last && conv.ocr) return apply_ocr_ordering(conv.turns[i].text, *conv.ocr, conv.ordering);
  return conv.turns[i].text;
}

}  // namespace

std::string render_chat(const Conversation& conv) {
  conv.validate();
  std::string out;
  for (std::size_t i = 0; i < conv.turns.size(); ++i) {
    if (conv.turns[i].role == Role::User) {
      out.append(kUserText).append("\n").append(turn_text(conv, i)).append(kEndOfTextText).append("\n");
      out.append(kAssistantText).append("\n");
    } else {
      out.append(turn_text(conv, i)).append(kEndOfTextText).append("\n");
    }
  }
  return out;
}

std::string render_base(const Conversation& conv) {
  conv.validate();
  std::string out;
  for (std::size_t i = 0; i < conv.turns.size(); ++i) {
    if (conv.turns[i].role == Role::User) {
      out.append("In:").append(turn_text(conv, i)).append("\nOut:");
    } else {
      out.append(turn_text(conv, i)).append(kEndOfTextText).append("\n");
    }
  }
  return out;
}

std::string render(const Conversation& conv, Template t) {
  return t == Template::Chat ? render_chat(conv) : render_base(conv);
}

std::string answer_suffix(std::string_view answer) {
  return std::string(answer).append(kEndOfTextText);
}

Conversation parse_chat(std::string_view s) {
  Conversation conv;
  const std::string user_hdr = std::string(kUserText) + "\n";
  const std::string asst_hdr = std::string(kAssistantText) + "\n";
  const std::string eot = std::string(kEndOfTextText) + "\n";
  while (!s.empty()) {
    if (!consume(s, user_hdr)) throw OrderingError("chat prompt: expected <|user|> header");
    const auto end = s.find(eot);
    if (end == std::string_view::npos) throw OrderingError("chat prompt: unterminated user turn");
    conv.turns.push_back({Role::User, std::string(s.substr(0, end))});
    s.remove_prefix(end + eot.size());
    if (!consume(s, asst_hdr)) throw OrderingError("chat prompt: expected <|assistant|> header");
    if (s.empty()) break;
    const auto aend = s.find(eot);
    if (aend == std::string_view::npos) throw OrderingError("chat prompt: unterminated assistant turn");
    conv.turns.push_back({Role::Assistant, std::string(s.substr(0, aend))});
    s.remove_prefix(aend + eot.size());
  }
  conv.validate();
  return conv;
}

Conversation parse_base(std::string_view s) {
  Conversation conv;
  const std::string eot = std::string(kEndOfTextText) + "\n";
  while (!s.empty()) {
    if (!consume(s, "In:")) throw OrderingError("base prompt: expected 'In:'");
    const auto end = s.find("\nOut:");
    if (end == std::string_view::npos) throw OrderingError("base prompt: expected '\\nOut:'");
    conv.turns.push_back({Role::User, std::string(s.substr(0, end))});
    s.remove_prefix(end + 5);
    if (s.empty()) break;
    const auto aend = s.find(eot);
    if (aend == std::string_view::npos) throw OrderingError("base prompt: unterminated answer");
    conv.turns.push_back({Role::Assistant, std::string(s.substr(0, aend))});
    s.remove_prefix(aend + eot.size());
  }
  conv.validate();
  return conv;
}

Conversation parse_conversation_jsonl(std::string_view text) {
  Conversation conv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("conversation line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("conversation line " + std::to_string(lineno) + ": expected an object");
    if (j.contains("ocr")) {
      conv.ocr = j.at("ocr").get<std::string>();
      conv.ordering = parse_ocr_ordering(j.value("ordering", std::string("first")));
      continue;
    }
    const auto role = j.value("role", std::string());
    if (role != "user" && role != "assistant") {
      throw ConfigError("conversation line " + std::to_string(lineno) + ": role must be user or assistant");
    }
    conv.turns.push_back({role == "user" ? Role::User : Role::Assistant, j.value("text", std::string())});
  }
  conv.validate();
  return conv;
}

}  // namespace cobra::prompt
