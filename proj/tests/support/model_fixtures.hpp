#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vtb/model/trainer.hpp"

namespace vtb::test {

using nn::Matrix;
using nn::Parameter;

template <class T>
Matrix<T> random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(scale * standard_normal(rng));
  return m;
}

// B = 0 at init hides LoRA-A gradients; give every B a random value.
template <class T>
void randomize_lora_b(nn::MultimodalModel<T>& model, Rng& rng, double scale = 0.2) {
  for (auto* p : model.params().all())
    if (p->name.size() > 7 && p->name.compare(p->name.size() - 7, 7, ".lora_b") == 0)
      p->value = random_matrix<T>(rng, p->value.rows(), p->value.cols(), scale);
}

// One rendered conversation with a speech slot, as a training row.
template <class T>
struct SpeechRow {
  Matrix<T> mel;
  nn::SequenceInput<T> row;
};

template <class T>
SpeechRow<T> speech_row(const nn::MultimodalModel<T>& model, Rng& rng, std::size_t mel_frames = 41,
                        const std::string& question = "Say it.", const std::string& answer = "Ok then.") {
  SpeechRow<T> out;
  out.mel = random_matrix<T>(rng, static_cast<Eigen::Index>(mel_frames), model.config().frontend.n_mels);
  const Tokenizer tok;
  Conversation c{{user_turn({ContentSegment::make_speech({"x.wav", 160, {}}), ContentSegment::make_text(question)}),
                  model_turn(answer)}};
  const auto rc = render_chat(c, tok);
  out.row.ids = rc.ids;
  out.row.mask = build_loss_mask(rc);
  for (const auto& s : rc.speech_slots) out.row.slot_positions.push_back(s.position);
  out.row.mels = {&out.mel};
  return out;
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;
  std::string worst_name;
  std::map<std::string, std::size_t> per_group;
};

inline std::string group_of(const std::string& name) {
  if (name.rfind("encoder.", 0) == 0) return "encoder";
  if (name.rfind("adapter.", 0) == 0) return "adapter";
  return "lora";
}

// Central differences on `count` random scalar entries spread evenly over
// the encoder, adapter and LoRA groups.
inline GradCheckResult gradient_check(nn::MultimodalModel<double>& model, const std::vector<nn::SequenceInput<double>>& rows,
                                      std::size_t count, std::uint64_t seed, double tol = 1e-4, double h = 1e-5) {
  model.set_trainable({});
  model.zero_grad();
  nn::accumulate_batch_gradients(model, rows, true);

  std::map<std::string, std::vector<Parameter<double>*>> groups;
  for (auto* p : model.trainable_parameters()) groups[group_of(p->name)].push_back(p);
  Rng rng(seed);
  GradCheckResult res;
  const std::vector<std::string> order = {"encoder", "adapter", "lora"};
  for (std::size_t i = 0; i < count; ++i) {
    const auto& list = groups.at(order[i % order.size()]);
    auto* p = list[uniform_index(rng, list.size())];
    const auto k = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(p->size())));
    const double analytic = p->grad.data()[k];
    const double saved = p->value.data()[k];
    p->value.data()[k] = saved + h;
    const double up = nn::accumulate_batch_gradients(model, rows, false).loss;
    p->value.data()[k] = saved - h;
    const double down = nn::accumulate_batch_gradients(model, rows, false).loss;
    p->value.data()[k] = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    ++res.checked;
    ++res.per_group[group_of(p->name)];
    if (rel > tol) ++res.failed;
    if (rel > res.worst_rel) {
      res.worst_rel = rel;
      res.worst_name = p->name + "[" + std::to_string(k) + "]";
    }
  }
  return res;
}

}  // namespace vtb::test
