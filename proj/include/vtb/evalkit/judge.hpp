#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/datagen/clients.hpp"
#include "vtb/datagen/samples.hpp"

namespace vtb::eval {

struct JudgeScore {
  int correctness_score = 0;
  std::string correctness_explanation;
  int redundancy_score = 1;
  std::string redundancy_explanation;
};

// Either a score or the reason the response was rejected.
struct JudgeOutcome {
  std::optional<JudgeScore> score;
  std::string rejection;
  std::string raw;
};

inline std::string judge_system_prompt() {
  return "You are an expert evaluator of question-answering performance.\n\n"
         "Your task is to evaluate the \"correctness\" and \"redundancy\" of an AI assistant's response to a user "
         "question based on the provided context.\n\n"
         "Provide your output following the schema provided.\n\n"
         "Here is a description of the required fields:\n\n"
         "- correctness_score: either 0 or 1\n\n"
         "    - Score 0: The AI assistant's answer is incorrect based on the provided context, or the AI assistant's "
         "answer simply copies the context.\n\n"
         "    - Score 1: The AI assistant's answer is correct based on the provided context, and it does not simply "
         "copy the context.\n\n"
         "- correctness_explanation: explanation of your score for \"correctness\".\n\n"
         "- redundancy_score: an integer score between 1 and 10, where a higher score indicates that the AI "
         "assistant's answer copies more redundant information from the context.\n\n"
         "- redundancy_explanation: explanation of your score for \"redundancy\".";
}

inline std::string judge_user_prompt(const std::string& question, const std::string& context,
                                     const std::string& reference, const std::string& answer) {
  return "[Question]\n\n" + question + "\n\n[Context]\n\n" + context + "\n\n[Start of Reference Answer]\n\n" +
         reference + "\n\n[End of Reference Answer]\n\n[Start of Assistant's Answer]\n\n" + answer +
         "\n\n[End of Assistant's Answer]";
}

// Rejection reasons: no_json_object, unparseable, missing_fields, type, range.
inline JudgeOutcome parse_judge_response(const std::string& text) {
  JudgeOutcome out;
  out.raw = text;
  const auto obj = extract_json_object(text);
  if (!obj) {
    out.rejection = "no_json_object";
    return out;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(*obj);
  } catch (const nlohmann::json::exception&) {
    try {
      j = nlohmann::json::parse(repair_invalid_escapes(*obj));
    } catch (const nlohmann::json::exception&) {
      out.rejection = "unparseable";
      return out;
    }
  }
  for (const char* k : {"correctness_score", "correctness_explanation", "redundancy_score", "redundancy_explanation"}) {
    if (!j.is_object() || !j.contains(k)) {
      out.rejection = "missing_fields";
      return out;
    }
  }
  const auto& cs = j.at("correctness_score");
  const auto& rs = j.at("redundancy_score");
  if (!cs.is_number_integer() || !rs.is_number_integer() || !j.at("correctness_explanation").is_string() ||
      !j.at("redundancy_explanation").is_string()) {
    out.rejection = "type";
    return out;
  }
  const auto c = cs.get<long long>();
  const auto r = rs.get<long long>();
  if ((c != 0 && c != 1) || r < 1 || r > 10) {
    out.rejection = "range";
    return out;
  }
  out.score = JudgeScore{static_cast<int>(c), j.at("correctness_explanation").get<std::string>(), static_cast<int>(r),
                         j.at("redundancy_explanation").get<std::string>()};
  return out;
}

// Client errors are retried with exponential backoff; a malformed response is
// a rejection, never a score.
inline JudgeOutcome judge_sqa(const std::string& question, const std::string& context, const std::string& reference,
                              const std::string& answer, LlmClient& client, RetryPolicy retry = {}) {
  const auto sys = judge_system_prompt();
  const auto user = judge_user_prompt(question, context, reference, answer);
  for (int attempt = 1;; ++attempt) {
    try {
      return parse_judge_response(client.complete(sys, user));
    } catch (const ClientError& e) {
      if (attempt >= retry.max_attempts)
        throw ClientError("judge gave up after " + std::to_string(attempt) + " attempts: " + e.what());
      std::this_thread::sleep_for(retry.base_delay * (1LL << (attempt - 1)));
    }
  }
}

}  // namespace vtb::eval
