#pragma once

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/common/rng.hpp"
#include "vtb/datagen/audio.hpp"
#include "vtb/textproc/text.hpp"

namespace vtb {

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& system, const std::string& user) = 0;
};

class TtsClient {
 public:
  virtual ~TtsClient() = default;
  // Mono 16 kHz samples in [-1, 1].
  virtual Waveform synth(const std::string& text) = 0;
};

// Each byte of the text becomes an 80 ms linear chirp whose start and end
// frequencies are keyed by the byte value and the voice seed.
class FakeTtsClient final : public TtsClient {
 public:
  static constexpr int kSamplesPerChar = kSampleRate * 80 / 1000;

  explicit FakeTtsClient(std::uint64_t voice_seed = 0) : voice_seed_(voice_seed) {}

  Waveform synth(const std::string& text) override {
    Waveform out;
    out.reserve(text.size() * kSamplesPerChar);
    const double voice = 7.0 * static_cast<double>(voice_seed_ % 16);
    const double dur = static_cast<double>(kSamplesPerChar) / kSampleRate;
    for (unsigned char c : text) {
      const double f0 = 150.0 + 45.0 * (c % 64) + voice;
      const double f1 = f0 + 400.0 + 250.0 * (c / 64);
      for (int n = 0; n < kSamplesPerChar; ++n) {
        const double t = static_cast<double>(n) / kSampleRate;
        const double phase = 6.283185307179586 * (f0 * t + (f1 - f0) * t * t / (2.0 * dur));
        out.push_back(static_cast<float>(0.5 * std::sin(phase)));
      }
    }
    return out;
  }

 private:
  std::uint64_t voice_seed_;
};

// Deterministic stand-in for the QA-generation and judge LLMs. Recognizes the
// two prompt families by their fixed wording; anything else is echoed back.
class FakeLlmClient final : public LlmClient {
 public:
  std::string complete(const std::string& system, const std::string& user) override {
    static const std::string kSentences = "Here are the sentences:\n\n";
    if (auto pos = user.rfind(kSentences); pos != std::string::npos) return qa_for(user.substr(pos + kSentences.size()));
    if (system.find("expert evaluator of question-answering") != std::string::npos) return judge(user);
    return user;
  }

  // "Meaningless" means no word with at least three letters.
  static std::string qa_for(const std::string& transcript) {
    std::string keyword;
    for (const auto& w : split_words(normalize_text(transcript))) {
      std::size_t letters = 0;
      for (unsigned char ch : w) letters += std::isalpha(ch) != 0;
      if (letters >= 3 && w.size() > keyword.size()) keyword = w;
    }
    nlohmann::json j;
    if (keyword.empty()) {
      j = {{"question", "none"}, {"answer", "none"}};
    } else {
      auto sentences = split_sentences(transcript);
      j = {{"question", "What does the speaker say about " + keyword + "?"}, {"answer", sentences.front()}};
    }
    return j.dump();
  }

 private:
  static std::string between(const std::string& s, const std::string& open, const std::string& close) {
    auto b = s.find(open);
    if (b == std::string::npos) return {};
    b += open.size();
    auto e = s.find(close, b);
    return trim(s.substr(b, e == std::string::npos ? std::string::npos : e - b));
  }

  static std::string judge(const std::string& user) {
    const auto ref = normalize_text(between(user, "[Start of Reference Answer]", "[End of Reference Answer]"));
    const auto ans = normalize_text(between(user, "[Start of Assistant's Answer]", "[End of Assistant's Answer]"));
    const int correct = (!ref.empty() && ans.find(ref) != std::string::npos) ? 1 : 0;
    const auto extra = split_words(ans).size() > split_words(ref).size()
                           ? split_words(ans).size() - split_words(ref).size()
                           : std::size_t{0};
    const int redundancy = 1 + static_cast<int>(std::min<std::size_t>(9, extra));
    nlohmann::json j = {{"correctness_score", correct},
                        {"correctness_explanation", correct ? "matches the reference" : "differs from the reference"},
                        {"redundancy_score", redundancy},
                        {"redundancy_explanation", std::to_string(extra) + " words beyond the reference"}};
    return j.dump();
  }
};

namespace detail {

inline std::filesystem::path temp_file(const std::string& stem, const std::string& ext) {
  static std::atomic<std::uint64_t> counter{0};
  auto name = stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ext;
  return std::filesystem::temp_directory_path() / name;
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out.push_back(c);
  }
  return out + "'";
}

// Runs `command` through /bin/sh with `input` on stdin; returns stdout.
inline std::string run_command(const std::string& command, const std::string& input) {
  const auto in_path = temp_file("vtb-cmd", ".json");
  {
    std::ofstream f(in_path, std::ios::binary);
    f << input;
  }
  const std::string full = "(" + command + ") < " + shell_quote(in_path.string());
  FILE* pipe = ::popen(full.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(in_path);
    throw ClientError("cannot spawn: " + command);
  }
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = ::pclose(pipe);
  std::filesystem::remove(in_path);
  if (status != 0) throw ClientError("command exited with status " + std::to_string(status) + ": " + command);
  return out;
}

}  // namespace detail

// Request JSON {"system", "user"} on stdin; response text on stdout.
class CommandLlmClient final : public LlmClient {
 public:
  explicit CommandLlmClient(std::string command) : command_(std::move(command)) {}

  std::string complete(const std::string& system, const std::string& user) override {
    nlohmann::json req = {{"system", system}, {"user", user}};
    return trim(detail::run_command(command_, req.dump()));
  }

 private:
  std::string command_;
};

// Request JSON {"text", "voice_seed", "output"} on stdin; the command writes a
// PCM16 mono 16 kHz WAV to "output".
class CommandTtsClient final : public TtsClient {
 public:
  CommandTtsClient(std::string command, std::uint64_t voice_seed) : command_(std::move(command)), voice_seed_(voice_seed) {}

  Waveform synth(const std::string& text) override {
    const auto out = detail::temp_file("vtb-tts", ".wav");
    nlohmann::json req = {{"text", text}, {"voice_seed", voice_seed_}, {"output", out.string()}};
    detail::run_command(command_, req.dump());
    if (!std::filesystem::exists(out)) throw ClientError("TTS command wrote no audio");
    auto wave = read_wav(out);
    std::filesystem::remove(out);
    return wave;
  }

 private:
  std::string command_;
  std::uint64_t voice_seed_;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds base_delay{500};
};

// Retries ClientError with exponential backoff: base, 2*base, 4*base, ...
class RetryingLlmClient final : public LlmClient {
 public:
  RetryingLlmClient(std::shared_ptr<LlmClient> inner, RetryPolicy policy) : inner_(std::move(inner)), policy_(policy) {}

  std::string complete(const std::string& system, const std::string& user) override {
    for (int attempt = 1;; ++attempt) {
      try {
        return inner_->complete(system, user);
      } catch (const ClientError& e) {
        if (attempt >= policy_.max_attempts)
          throw ClientError("giving up after " + std::to_string(attempt) + " attempts: " + e.what());
        std::this_thread::sleep_for(policy_.base_delay * (1LL << (attempt - 1)));
      }
    }
  }

 private:
  std::shared_ptr<LlmClient> inner_;
  RetryPolicy policy_;
};

}  // namespace vtb
