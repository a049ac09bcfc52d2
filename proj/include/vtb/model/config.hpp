#pragma once

#include <cmath>
#include <string>

#include <json.hpp>

#include "vtb/common/error.hpp"

namespace vtb {

struct FrontendConfig {
  int sample_rate = 16000;
  int n_mels = 80;
  int window = 400;  // 25 ms
  int hop = 160;     // 10 ms
  int n_fft = 512;
};

// Two strided stages; stride_1 * stride_2 * hop spans one 80 ms frame.
struct EncoderConfig {
  int stride_1 = 2;
  int stride_2 = 4;
  int layers = 2;
  int width = 128;
  int heads = 4;
  int ff_mult = 4;

  int downsample() const { return stride_1 * stride_2; }
};

struct AdapterConfig {
  int layers = 2;
  int width = 256;
  int heads = 4;
  int conv_kernel = 9;
  int ff_mult = 4;
};

struct LmConfig {
  int layers = 4;
  int width = 256;
  int heads = 4;
  int ff_hidden = 1024;
  int vocab_size = 262;
};

struct LoraConfig {
  int rank = 32;
  double alpha = 64.0;

  double scale() const { return rank > 0 ? alpha / rank : 0.0; }
};

struct ModelConfig {
  FrontendConfig frontend;
  EncoderConfig encoder;
  AdapterConfig adapter;
  LmConfig lm;
  LoraConfig lora;

  // Frame period of the encoder and adapter outputs in seconds.
  double frame_seconds() const {
    return static_cast<double>(encoder.downsample() * frontend.hop) / frontend.sample_rate;
  }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("model config: " + what);
    };
    need(frontend.sample_rate > 0 && frontend.hop > 0 && frontend.window > 0 && frontend.n_mels > 0, "front end sizes");
    need(frontend.n_fft >= frontend.window, "n_fft must cover the window");
    need(encoder.stride_1 > 0 && encoder.stride_2 > 0, "encoder strides");
    need(std::abs(frame_seconds() - 0.080) < 1e-9, "downsample x hop must equal 80 ms");
    need(encoder.width > 0 && encoder.heads > 0 && encoder.width % encoder.heads == 0 &&
             (encoder.width / encoder.heads) % 2 == 0,
         "encoder width/heads");
    need(encoder.layers >= 0 && adapter.layers >= 0 && lm.layers >= 0, "layer counts");
    need(adapter.width == lm.width, "adapter width must equal LM width");
    need(adapter.heads > 0 && adapter.width % adapter.heads == 0 && (adapter.width / adapter.heads) % 2 == 0,
         "adapter width/heads");
    need(adapter.conv_kernel > 0 && adapter.conv_kernel % 2 == 1, "adapter conv kernel must be odd");
    need(lm.heads > 0 && lm.width % lm.heads == 0 && (lm.width / lm.heads) % 2 == 0, "LM width/heads");
    need(lm.ff_hidden > 0 && lm.vocab_size > 0, "LM sizes");
    need(lora.rank >= 0, "LoRA rank must be non-negative");
  }

  // Widths <= 16 and <= 2 layers; used for finite-difference checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.frontend.n_mels = 8;
    c.encoder = {2, 4, 1, 8, 2, 2};
    c.adapter = {1, 16, 2, 3, 2};
    c.lm = {2, 16, 2, 32, 262};
    c.lora = {4, 8.0};
    return c;
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"frontend",
           {{"sample_rate", c.frontend.sample_rate},
            {"n_mels", c.frontend.n_mels},
            {"window", c.frontend.window},
            {"hop", c.frontend.hop},
            {"n_fft", c.frontend.n_fft}}},
          {"encoder",
           {{"stride_1", c.encoder.stride_1},
            {"stride_2", c.encoder.stride_2},
            {"layers", c.encoder.layers},
            {"width", c.encoder.width},
            {"heads", c.encoder.heads},
            {"ff_mult", c.encoder.ff_mult}}},
          {"adapter",
           {{"layers", c.adapter.layers},
            {"width", c.adapter.width},
            {"heads", c.adapter.heads},
            {"conv_kernel", c.adapter.conv_kernel},
            {"ff_mult", c.adapter.ff_mult}}},
          {"lm",
           {{"layers", c.lm.layers},
            {"width", c.lm.width},
            {"heads", c.lm.heads},
            {"ff_hidden", c.lm.ff_hidden},
            {"vocab_size", c.lm.vocab_size}}},
          {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}}}};
}

// Missing keys keep their defaults.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto read = [](const nlohmann::json& obj, const char* key, auto& field) {
    if (obj.is_object() && obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
  };
  const auto section = [&](const char* name) { return j.contains(name) ? j.at(name) : nlohmann::json::object(); };
  const auto fe = section("frontend");
  read(fe, "sample_rate", c.frontend.sample_rate);
  read(fe, "n_mels", c.frontend.n_mels);
  read(fe, "window", c.frontend.window);
  read(fe, "hop", c.frontend.hop);
  read(fe, "n_fft", c.frontend.n_fft);
  const auto en = section("encoder");
  read(en, "stride_1", c.encoder.stride_1);
  read(en, "stride_2", c.encoder.stride_2);
  read(en, "layers", c.encoder.layers);
  read(en, "width", c.encoder.width);
  read(en, "heads", c.encoder.heads);
  read(en, "ff_mult", c.encoder.ff_mult);
  const auto ad = section("adapter");
  read(ad, "layers", c.adapter.layers);
  read(ad, "width", c.adapter.width);
  read(ad, "heads", c.adapter.heads);
  read(ad, "conv_kernel", c.adapter.conv_kernel);
  read(ad, "ff_mult", c.adapter.ff_mult);
  const auto lm = section("lm");
  read(lm, "layers", c.lm.layers);
  read(lm, "width", c.lm.width);
  read(lm, "heads", c.lm.heads);
  read(lm, "ff_hidden", c.lm.ff_hidden);
  read(lm, "vocab_size", c.lm.vocab_size);
  const auto lo = section("lora");
  read(lo, "rank", c.lora.rank);
  read(lo, "alpha", c.lora.alpha);
  return c;
}

}  // namespace vtb
