#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/model/network.hpp"
#include "vtb/model/optim.hpp"

namespace vtb::nn {

inline constexpr char kCheckpointMagic[4] = {'V', 'T', 'B', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointState {
  std::int64_t step = 0;  // completed updates
  std::string sampler_rng;
  nlohmann::json meta = nlohmann::json::object();
};

struct LoadedCheckpoint {
  std::unique_ptr<MultimodalModel<float>> model;
  CheckpointState state;
  std::optional<Adam<float>> optimizer;
  nlohmann::json header;
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated checkpoint while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::string read_bytes(std::istream& in, std::size_t n, const std::string& what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated checkpoint in " + what);
  return s;
}

inline void write_floats(std::ostream& out, const Matrix<float>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, m.data() + i, 4);
    write_u32(out, bits);
  }
}

inline Matrix<float> read_floats(std::istream& in, std::uint32_t rows, std::uint32_t cols, const std::string& name) {
  Matrix<float> m(rows, cols);
  std::string raw = read_bytes(in, std::size_t(rows) * cols * 4, name);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data()) + 4 * i;
    const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                               (std::uint32_t(p[3]) << 24);
    std::memcpy(m.data() + i, &bits, 4);
  }
  return m;
}

}  // namespace detail

// Layout: magic, u32 version, u32 header length + JSON header, u32 array
// count, then per array {u32 name length, name, u32 rows, u32 cols} followed
// by all payloads in table order as little-endian f32.
inline void save_checkpoint(const std::filesystem::path& path, const MultimodalModel<float>& model,
                            const CheckpointState& state, const Adam<float>* optimizer = nullptr) {
  const auto& groups = model.trainable_groups();
  nlohmann::json header = {
      {"config", to_json(model.config())},
      {"dtype", "f32"},
      {"lora_applied", model.has_lora()},
      {"step", state.step},
      {"sampler_rng", state.sampler_rng},
      {"trainable", {{"encoder", groups.encoder}, {"adapter", groups.adapter}, {"lora", groups.lora}}},
      {"meta", state.meta}};

  std::vector<std::pair<std::string, const Matrix<float>*>> arrays;
  for (const auto* p : model.params().all()) arrays.emplace_back(p->name, &p->value);
  if (optimizer) {
    header["optimizer"] = {{"steps_taken", optimizer->steps_taken()}};
    for (const auto& [name, mo] : optimizer->state()) {
      arrays.emplace_back("adam.m/" + name, &mo.m);
      arrays.emplace_back("adam.v/" + name, &mo.v);
    }
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(kCheckpointMagic, 4);
    detail::write_u32(out, kCheckpointVersion);
    const auto hj = header.dump();
    detail::write_u32(out, static_cast<std::uint32_t>(hj.size()));
    out.write(hj.data(), static_cast<std::streamsize>(hj.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, m] : arrays) {
      detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::write_u32(out, static_cast<std::uint32_t>(m->rows()));
      detail::write_u32(out, static_cast<std::uint32_t>(m->cols()));
    }
    for (const auto& [name, m] : arrays) detail::write_floats(out, *m);
    if (!out) throw IoError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_checkpoint_header(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a VTBC checkpoint");
  const auto version = detail::read_u32(in, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = detail::read_u32(in, "header length");
  try {
    return nlohmann::json::parse(detail::read_bytes(in, hlen, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  LoadedCheckpoint ck;
  ck.header = read_checkpoint_header(in);
  const auto& h = ck.header;
  const auto cfg = model_config_from_json(h.at("config"));
  const bool lora = h.at("lora_applied").get<bool>();
  ck.model = std::make_unique<MultimodalModel<float>>(cfg, 0, lora);
  TrainableGroups groups;
  groups.encoder = h.at("trainable").at("encoder").get<bool>();
  groups.adapter = h.at("trainable").at("adapter").get<bool>();
  groups.lora = h.at("trainable").at("lora").get<bool>();
  ck.model->set_trainable(groups);
  ck.state.step = h.at("step").get<std::int64_t>();
  ck.state.sampler_rng = h.value("sampler_rng", std::string());
  ck.state.meta = h.value("meta", nlohmann::json::object());

  struct Entry {
    std::string name;
    std::uint32_t rows, cols;
  };
  std::vector<Entry> table;
  const auto count = detail::read_u32(in, "array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = detail::read_bytes(in, detail::read_u32(in, "name length"), "name");
    e.rows = detail::read_u32(in, "rows");
    e.cols = detail::read_u32(in, "cols");
    table.push_back(std::move(e));
  }

  if (h.contains("optimizer")) {
    OptimizerConfig oc;
    ck.optimizer.emplace(oc);
    ck.optimizer->set_steps_taken(h.at("optimizer").at("steps_taken").get<std::int64_t>());
  }
  std::size_t loaded = 0;
  for (const auto& e : table) {
    auto m = detail::read_floats(in, e.rows, e.cols, e.name);
    if (e.name.rfind("adam.", 0) == 0) {
      if (!ck.optimizer) throw FormatError("optimizer array without optimizer header: " + e.name);
      const bool first = e.name.rfind("adam.m/", 0) == 0;
      auto& mo = ck.optimizer->state()[e.name.substr(7)];
      (first ? mo.m : mo.v) = std::move(m);
      continue;
    }
    auto* p = ck.model->params().find(e.name);
    if (!p) throw FormatError("checkpoint array '" + e.name + "' does not match the model");
    if (p->value.rows() != m.rows() || p->value.cols() != m.cols())
      throw FormatError("shape mismatch for '" + e.name + "'");
    p->value = std::move(m);
    ++loaded;
  }
  if (loaded != ck.model->params().size()) throw FormatError("checkpoint is missing model arrays");
  return ck;
}

}  // namespace vtb::nn
