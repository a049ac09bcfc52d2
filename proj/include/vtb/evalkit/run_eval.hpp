#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/datagen/clients.hpp"
#include "vtb/datagen/manifest.hpp"
#include "vtb/evalkit/ifeval.hpp"
#include "vtb/evalkit/judge.hpp"
#include "vtb/evalkit/metrics.hpp"

namespace vtb::eval {

enum class Task { asr, ast, sqa, spoken_ifeval };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::asr: return "asr";
    case Task::ast: return "ast";
    case Task::sqa: return "sqa";
    case Task::spoken_ifeval: return "spoken_ifeval";
  }
  return "asr";
}

inline Task parse_task(const std::string& s) {
  if (s == "asr") return Task::asr;
  if (s == "ast") return Task::ast;
  if (s == "sqa") return Task::sqa;
  if (s == "spoken_ifeval") return Task::spoken_ifeval;
  throw InvalidArgument("unknown task '" + s + "' (expected asr, ast, sqa or spoken_ifeval)");
}

// Decodes a reply for a conversation that ends with a user turn.
using Generator = std::function<std::string(const Conversation&)>;

struct EvalRecord {
  std::string id;
  std::string reference;
  std::string hypothesis;
  nlohmann::json detail = nlohmann::json::object();

  nlohmann::json to_json() const {
    return {{"id", id}, {"reference", reference}, {"hypothesis", hypothesis}, {"detail", detail}};
  }

  static EvalRecord from_json(const nlohmann::json& j) {
    return {j.at("id").get<std::string>(), j.at("reference").get<std::string>(),
            j.at("hypothesis").get<std::string>(), j.value("detail", nlohmann::json::object())};
  }
};

struct EvalReport {
  Task task = Task::asr;
  std::vector<EvalRecord> records;
  nlohmann::json aggregate = nlohmann::json::object();
  std::size_t rejected = 0;

  // First line is the summary, then one line per record. Decoded text from a
  // weak model may not be valid UTF-8; bad bytes become U+FFFD.
  std::string to_jsonl() const {
    std::string out = nlohmann::json{{"type", "summary"},
                                     {"task", task_name(task)},
                                     {"samples", records.size()},
                                     {"rejected_judge_responses", rejected},
                                     {"aggregate", aggregate}}
                          .dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) +
                      "\n";
    for (const auto& r : records) {
      auto j = r.to_json();
      j["type"] = "record";
      out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
    }
    return out;
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write report " + path.string());
    out << to_jsonl();
  }

  // The number printed by the CLI.
  std::string headline() const {
    const char* key = task == Task::asr   ? "wer"
                      : task == Task::ast ? "bleu"
                      : task == Task::sqa ? "mean_correctness"
                                          : "strict_accuracy";
    const auto& v = aggregate.at(key);
    return std::string(key) + " " + (v.is_null() ? std::string("undefined") : v.dump());
  }
};

// Aggregate metrics derived only from the per-sample records.
inline nlohmann::json aggregate_records(Task task, const std::vector<EvalRecord>& records, std::size_t* rejected_out = nullptr) {
  std::vector<std::string> refs, hyps;
  for (const auto& r : records) {
    refs.push_back(r.reference);
    hyps.push_back(r.hypothesis);
  }
  nlohmann::json agg = nlohmann::json::object();
  std::size_t rejected = 0;
  switch (task) {
    case Task::asr: {
      const auto w = corpus_wer(refs, hyps);
      agg = {{"wer", w.wer},
             {"substitutions", w.counts.substitutions},
             {"insertions", w.counts.insertions},
             {"deletions", w.counts.deletions},
             {"reference_words", w.ref_words}};
      break;
    }
    case Task::ast: {
      const auto b = corpus_bleu(refs, hyps);
      agg = {{"bleu", b.bleu}, {"brevity_penalty", b.brevity_penalty}, {"precisions", b.precisions}};
      break;
    }
    case Task::sqa: {
      double correct = 0.0, redundancy = 0.0;
      std::size_t accepted = 0;
      std::vector<std::size_t> histogram(10, 0);
      for (const auto& r : records) {
        if (!r.detail.contains("judge")) {
          ++rejected;
          continue;
        }
        const auto& j = r.detail.at("judge");
        correct += j.at("correctness_score").get<int>();
        const int red = j.at("redundancy_score").get<int>();
        redundancy += red;
        ++histogram[static_cast<std::size_t>(red - 1)];
        ++accepted;
      }
      agg["accepted"] = accepted;
      agg["rejection_rate"] = records.empty() ? 0.0 : static_cast<double>(rejected) / static_cast<double>(records.size());
      agg["mean_correctness"] = accepted ? nlohmann::json(correct / static_cast<double>(accepted)) : nlohmann::json();
      agg["mean_redundancy"] = accepted ? nlohmann::json(redundancy / static_cast<double>(accepted)) : nlohmann::json();
      agg["redundancy_histogram"] = histogram;
      break;
    }
    case Task::spoken_ifeval: {
      if (records.empty()) throw InvalidArgument("strict_accuracy of an empty item list is undefined");
      std::size_t pass = 0;
      for (const auto& r : records) pass += r.detail.at("follows_all").get<bool>() ? 1 : 0;
      agg["strict_accuracy"] = static_cast<double>(pass) / static_cast<double>(records.size());
      break;
    }
  }
  if (rejected_out) *rejected_out = rejected;
  return agg;
}

struct EvalOptions {
  LlmClient* judge = nullptr;  // required for sqa
  RetryPolicy judge_retry;
  unsigned judge_concurrency = 4;
};

namespace detail {

inline std::string entry_task(const ManifestEntry& e) {
  if (e.meta.is_object() && e.meta.contains("task") && e.meta.at("task").is_string())
    return e.meta.at("task").get<std::string>();
  return e.source;
}

inline std::string user_question(const Turn& t) {
  std::string q;
  for (const auto& s : t.segments)
    if (s.is_text()) q += s.text;
  return trim(q);
}

}  // namespace detail

inline EvalReport run_eval(const std::vector<ManifestEntry>& entries, Task task, const Generator& generate,
                           const EvalOptions& opts = {}) {
  if (entries.empty()) throw InvalidArgument("evaluation manifest is empty");
  for (const auto& e : entries) {
    if (detail::entry_task(e) != task_name(task))
      throw InvalidArgument("manifest/task mismatch: entry '" + e.id + "' is '" + detail::entry_task(e) +
                            "', requested '" + task_name(task) + "'");
  }
  if (task == Task::sqa && !opts.judge) throw ConfigError("sqa evaluation needs a judge client");

  EvalReport report;
  report.task = task;
  std::vector<std::string> contexts, questions;
  for (const auto& e : entries) {
    if (e.conversation.turns.empty() || e.conversation.turns.back().role != Role::model)
      throw StructuralError("entry '" + e.id + "' does not end with a model turn");
    Conversation prompt = e.conversation;
    EvalRecord rec;
    rec.id = e.id;
    rec.reference = turn_text(prompt.turns.back());
    prompt.turns.pop_back();
    rec.hypothesis = generate(prompt);
    if (task == Task::spoken_ifeval) {
      std::vector<Constraint> cs;
      if (e.meta.contains("constraints"))
        for (const auto& cj : e.meta.at("constraints")) cs.push_back(constraint_from_json(cj));
      nlohmann::json per = nlohmann::json::array();
      for (const auto& c : cs) per.push_back({{"id", c.id}, {"pass", verify(rec.hypothesis, c)}});
      rec.detail = {{"constraints", per}, {"follows_all", follows_all(rec.hypothesis, cs)}};
    }
    if (task == Task::sqa) {
      contexts.push_back(e.meta.value("context", std::string()));
      questions.push_back(prompt.turns.empty() ? std::string() : detail::user_question(prompt.turns.back()));
    }
    report.records.push_back(std::move(rec));
  }

  if (task == Task::sqa) {
    std::vector<JudgeOutcome> outcomes(report.records.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto worker = [&] {
      for (std::size_t i; (i = next++) < outcomes.size();) {
        try {
          const auto& r = report.records[i];
          outcomes[i] = judge_sqa(questions[i], contexts[i], r.reference, r.hypothesis, *opts.judge, opts.judge_retry);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    const unsigned n = std::max(1u, std::min<unsigned>(opts.judge_concurrency, static_cast<unsigned>(outcomes.size())));
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      auto& d = report.records[i].detail;
      d["question"] = questions[i];
      if (outcomes[i].score) {
        const auto& s = *outcomes[i].score;
        d["judge"] = {{"correctness_score", s.correctness_score},
                      {"correctness_explanation", s.correctness_explanation},
                      {"redundancy_score", s.redundancy_score},
                      {"redundancy_explanation", s.redundancy_explanation}};
      } else {
        d["rejection"] = outcomes[i].rejection;
      }
    }
  }
  report.aggregate = aggregate_records(task, report.records, &report.rejected);
  return report;
}

}  // namespace vtb::eval
