#pragma once

#include <cctype>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "duet/errors.hpp"

namespace duet {

/// One synthesized interaction description with its role decomposition.
/// The single-person texts drive the motion source; the two-person text
/// is the caption and the reaction-model condition.
struct PromptBundle {
  std::string theme;
  std::vector<std::string> tags;
  std::string two_person_text;
  std::string person1_text;
  std::string person2_text;

  static constexpr int kTwoPersonWordBudget = 25;
  static constexpr int kSinglePersonWordBudget = 15;

  void validate() const {
    require<BadArgument>(!two_person_text.empty() && !person1_text.empty() &&
                             !person2_text.empty(),
                         "bundle texts must be non-empty");
  }
};

inline std::string trim_copy(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline int count_words(const std::string& s) {
  std::istringstream in(s);
  std::string w;
  int n = 0;
  while (in >> w) ++n;
  return n;
}

/// Budget overruns are reported, not rejected; downstream filtering
/// handles quality.
inline std::vector<std::string> budget_warnings(const PromptBundle& b) {
  std::vector<std::string> warnings;
  auto check = [&](const std::string& text, int budget, const char* label) {
    int words = count_words(trim_copy(text));
    if (words > budget)
      warnings.push_back(std::string(label) + " runs " + std::to_string(words) +
                         " words (budget " + std::to_string(budget) + ")");
  };
  check(b.two_person_text, PromptBundle::kTwoPersonWordBudget, "two-person text");
  check(b.person1_text, PromptBundle::kSinglePersonWordBudget, "person1 text");
  check(b.person2_text, PromptBundle::kSinglePersonWordBudget, "person2 text");
  return warnings;
}

/// Instructs the language model to write `m` fresh two-person interaction
/// descriptions for a theme/tag combination, styled after real examples.
inline std::string build_interaction_prompt(
    const std::string& theme, const std::vector<std::string>& tags,
    const std::vector<std::string>& examples, int m) {
  require<BadArgument>(m >= 1, "must request at least one description");
  require<BadArgument>(!examples.empty(), "need at least one example");
  require<BadArgument>(!theme.empty(), "theme must be non-empty");

  std::ostringstream out;
  out << "You write compact, vivid descriptions of **two-person interactions**.\n"
      << "\n"
      << "Each output sentence MUST:\n"
      << "\n"
      << "\xE2\x80\xA2 mention exactly two unnamed people "
         "(\xE2\x80\x9Cone person\xE2\x80\xA6 the other person\xE2\x80\xA6\xE2\x80\x9D),\n"
      << "\xE2\x80\xA2 focus on body / arms / legs (ignore faces / fingers / "
         "appearance),\n"
      << "\xE2\x80\xA2 be <=25 words,\n"
      << "\xE2\x80\xA2 clearly match the given *Theme* and *Tags*,\n"
      << "\xE2\x80\xA2 be entirely different from the examples.\n"
      << "\n"
      << "Theme: " << theme << "\n";
  out << "Tags : ";
  for (size_t i = 0; i < tags.size(); ++i) {
    if (i) out << ", ";
    out << tags[i];
  }
  out << "\n"
      << "\n"
      << "Reference examples (" << examples.size() << "):\n";
  for (const auto& e : examples) out << e << "\n";
  out << "\n"
      << "Now craft " << m << " brand-new descriptions.\n"
      << "Return **only** a JSON array of strings.\n";
  return out.str();
}

/// Asks the language model to split a two-person description into two
/// self-contained single-person descriptions.
inline std::string build_decomposition_prompt(const std::string& two_person_text) {
  require<BadArgument>(!trim_copy(two_person_text).empty(),
                       "two-person text must be non-empty");
  std::ostringstream out;
  out << "Given the following description of a two-person interaction:\n"
      << "\n"
      << trim_copy(two_person_text) << "\n"
      << "\n"
      << "Independently describe the motion of each person involved, using only "
         "information\n"
      << "implied by the full interaction. Do not mention or refer to the other "
         "person in\n"
      << "either description. Focus only on body, arms, and legs \xE2\x80\x94 "
         "ignore facial\n"
      << "expressions, fingers, or appearance.\n"
      << "\n"
      << "Use \"the person\" to refer to each. Assume shared context (e.g., "
         "dancing,\n"
      << "greeting, arguing), but isolate each description.\n"
      << "\n"
      << "Output JSON in this exact format:\n"
      << "\n"
      << "    {{\"1\": {{\"person1\": \"{description1}\", \"person2\": "
         "\"{description2}\"}}}}\n"
      << "\n"
      << "Each description must be one sentence, <=15 words, specific, and "
         "motion-focused\n"
      << "with relevant context.\n";
  return out.str();
}

namespace detail {

inline nlohmann::json parse_strict_json(const std::string& raw) {
  nlohmann::json j = nlohmann::json::parse(raw, nullptr, false);
  require<MalformedResponse>(!j.is_discarded(), "response is not JSON");
  return j;
}

}  // namespace detail

/// Parses a synthesis reply: a JSON array of non-empty strings.
inline std::vector<std::string> parse_description_array(const std::string& raw) {
  nlohmann::json j = detail::parse_strict_json(raw);
  require<MalformedResponse>(j.is_array() && !j.empty(),
                             "expected a non-empty JSON array");
  std::vector<std::string> out;
  for (const auto& item : j) {
    require<MalformedResponse>(item.is_string(), "array entries must be strings");
    std::string s = trim_copy(item.get<std::string>());
    require<MalformedResponse>(!s.empty(), "descriptions must be non-empty");
    out.push_back(std::move(s));
  }
  return out;
}

/// Parses a decomposition reply: {"1": {"person1": ..., "person2": ...}}.
/// A bare {"person1": ..., "person2": ...} object is also accepted.
inline std::pair<std::string, std::string> parse_person_pair(
    const std::string& raw) {
  nlohmann::json j = detail::parse_strict_json(raw);
  require<MalformedResponse>(j.is_object(), "expected a JSON object");
  const nlohmann::json* inner = &j;
  if (j.contains("1")) inner = &j.at("1");
  require<MalformedResponse>(
      inner->is_object() && inner->contains("person1") &&
          inner->contains("person2") && inner->at("person1").is_string() &&
          inner->at("person2").is_string(),
      "expected person1/person2 string fields");
  std::string p1 = trim_copy(inner->at("person1").get<std::string>());
  std::string p2 = trim_copy(inner->at("person2").get<std::string>());
  require<MalformedResponse>(!p1.empty() && !p2.empty(),
                             "person descriptions must be non-empty");
  return {std::move(p1), std::move(p2)};
}

}  // namespace duet
