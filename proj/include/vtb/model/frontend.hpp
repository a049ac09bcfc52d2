#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "vtb/common/error.hpp"
#include "vtb/model/config.hpp"
#include "vtb/model/graph.hpp"

namespace vtb::nn {

// Log-mel filterbank features with per-utterance, per-bin mean/variance
// normalization. The signal is zero-padded by n_fft/2 on both sides, so an
// N-sample clip yields 1 + N / hop frames.
class LogMelFrontend {
 public:
  explicit LogMelFrontend(const FrontendConfig& cfg) : cfg_(cfg) {
    const int bins = cfg.n_fft / 2 + 1;
    const int off = (cfg.n_fft - cfg.window) / 2;
    cos_ = Matrix<double>::Zero(cfg.n_fft, bins);
    sin_ = Matrix<double>::Zero(cfg.n_fft, bins);
    constexpr double kTwoPi = 6.283185307179586;
    for (int n = 0; n < cfg.window; ++n) {
      const double w = 0.5 - 0.5 * std::cos(kTwoPi * n / cfg.window);
      for (int k = 0; k < bins; ++k) {
        const double a = kTwoPi * static_cast<double>(k) * (n + off) / cfg.n_fft;
        cos_(n + off, k) = w * std::cos(a);
        sin_(n + off, k) = -w * std::sin(a);
      }
    }
    mel_ = mel_filterbank(cfg.n_mels, bins, cfg.sample_rate);
  }

  std::size_t frame_count(std::size_t samples) const { return 1 + samples / static_cast<std::size_t>(cfg_.hop); }

  template <class T>
  Matrix<T> compute(std::span<const float> wave) const {
    if (wave.empty()) throw InvalidArgument("empty waveform");
    for (float s : wave)
      if (!std::isfinite(s)) throw InvalidArgument("non-finite waveform sample");
    const auto frames = static_cast<Eigen::Index>(frame_count(wave.size()));
    const auto pad = static_cast<Eigen::Index>(cfg_.n_fft / 2);
    Matrix<double> framed = Matrix<double>::Zero(frames, cfg_.n_fft);
    for (Eigen::Index f = 0; f < frames; ++f) {
      for (Eigen::Index n = 0; n < cfg_.n_fft; ++n) {
        const auto src = f * cfg_.hop + n - pad;
        if (src >= 0 && src < static_cast<Eigen::Index>(wave.size())) framed(f, n) = wave[static_cast<std::size_t>(src)];
      }
    }
    Matrix<double> re = framed * cos_;
    Matrix<double> im = framed * sin_;
    Matrix<double> power = re.cwiseAbs2() + im.cwiseAbs2();
    Matrix<double> logmel = ((power * mel_.transpose()).array() + 1e-6).log();
    for (Eigen::Index c = 0; c < logmel.cols(); ++c) {
      const double mean = logmel.col(c).mean();
      const double var = (logmel.col(c).array() - mean).square().mean();
      logmel.col(c) = (logmel.col(c).array() - mean) / (std::sqrt(var) + 1e-5);
    }
    return logmel.cast<T>();
  }

  const FrontendConfig& config() const { return cfg_; }

 private:
  static double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
  static double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

  // Triangular HTK-scale filters between 0 Hz and Nyquist; n_mels x bins.
  static Matrix<double> mel_filterbank(int n_mels, int bins, int sample_rate) {
    Matrix<double> fb = Matrix<double>::Zero(n_mels, bins);
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
      edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    const double bin_hz = sample_rate / 2.0 / (bins - 1);
    for (int m = 0; m < n_mels; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      for (int k = 0; k < bins; ++k) {
        const double f = k * bin_hz;
        if (f > lo && f < hi) fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
    }
    return fb;
  }

  FrontendConfig cfg_;
  Matrix<double> cos_, sin_, mel_;
};

}  // namespace vtb::nn
