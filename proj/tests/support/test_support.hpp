#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vtb/common/rng.hpp"
#include "vtb/textproc/conversation.hpp"

namespace vtb::test {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "vtb-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

struct ProcessResult {
  int status = -1;
  std::string out, err;
};

// Runs a shell command with stdin from `input`; captures both streams.
inline ProcessResult run_process(const std::string& command, const std::string& input = {}) {
  TempDir io;
  write_file(io / "stdin", input);
  const std::string full = command + " < '" + (io / "stdin").string() + "' > '" + (io / "stdout").string() +
                           "' 2> '" + (io / "stderr").string() + "'";
  const int raw = std::system(full.c_str());
  ProcessResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_file(io / "stdout");
  r.err = read_file(io / "stderr");
  return r;
}

inline std::string random_words(Rng& rng, std::size_t n, const std::vector<std::string>& vocab) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += vocab[uniform_index(rng, vocab.size())];
  }
  return s;
}

inline Conversation two_turn(const std::string& user, const std::string& model) {
  return {{user_turn({ContentSegment::make_text(user)}), model_turn(model)}};
}

}  // namespace vtb::test
