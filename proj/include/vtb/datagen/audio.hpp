#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "vtb/common/error.hpp"

namespace vtb {

inline constexpr int kSampleRate = 16000;

using Waveform = std::vector<float>;

namespace detail {

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace detail

// PCM16 mono 16 kHz RIFF bytes.
inline std::string encode_wav(std::span<const float> samples) {
  std::string b;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  b.reserve(44 + data_bytes);
  b += "RIFF";
  detail::put_u32(b, 36 + data_bytes);
  b += "WAVEfmt ";
  detail::put_u32(b, 16);
  detail::put_u16(b, 1);
  detail::put_u16(b, 1);
  detail::put_u32(b, kSampleRate);
  detail::put_u32(b, kSampleRate * 2);
  detail::put_u16(b, 2);
  detail::put_u16(b, 16);
  b += "data";
  detail::put_u32(b, data_bytes);
  for (float s : samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    detail::put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0f))));
  }
  return b;
}

inline Waveform decode_wav(std::string_view bytes, const std::string& what = "wav") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError(what + ": not a RIFF/WAVE file");
  std::size_t off = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  while (off + 8 <= bytes.size()) {
    const std::uint32_t size = detail::get_u32(p + off + 4);
    const std::size_t body = off + 8;
    if (body + size > bytes.size()) throw FormatError(what + ": truncated chunk");
    if (std::memcmp(p + off, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(what + ": short fmt chunk");
      format = detail::get_u16(p + body);
      channels = detail::get_u16(p + body + 2);
      rate = detail::get_u32(p + body + 4);
      bits = detail::get_u16(p + body + 14);
      have_fmt = true;
    } else if (std::memcmp(p + off, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(what + ": data before fmt");
      if (format != 1 || bits != 16 || channels != 1 || rate != kSampleRate)
        throw FormatError(what + ": expected PCM16 mono 16 kHz");
      Waveform out(size / 2);
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(static_cast<std::int16_t>(detail::get_u16(p + body + 2 * i))) / 32767.0f;
      return out;
    }
    off = body + size + (size & 1);
  }
  throw FormatError(what + ": no data chunk");
}

inline void write_wav(const std::filesystem::path& path, std::span<const float> samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = encode_wav(samples);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read audio " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

// Thread-safe read-through cache of decoded clips keyed by path.
class AudioCache {
 public:
  std::shared_ptr<const Waveform> get(const std::filesystem::path& path) {
    const std::string key = path.lexically_normal().string();
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    auto wave = std::make_shared<const Waveform>(read_wav(path));
    std::lock_guard lock(mu_);
    return cache_.emplace(key, std::move(wave)).first->second;
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Waveform>> cache_;
};

}  // namespace vtb
