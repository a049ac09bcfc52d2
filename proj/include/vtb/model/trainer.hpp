#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/mixture/mixture.hpp"
#include "vtb/model/checkpoint.hpp"
#include "vtb/model/network.hpp"
#include "vtb/model/optim.hpp"

namespace vtb::nn {

enum class AblationMode { joint, no_text, frozen_lm, two_stage };

inline const char* ablation_name(AblationMode m) {
  switch (m) {
    case AblationMode::joint: return "joint";
    case AblationMode::no_text: return "no_text";
    case AblationMode::frozen_lm: return "frozen_lm";
    case AblationMode::two_stage: return "two_stage";
  }
  return "joint";
}

inline AblationMode parse_ablation(const std::string& s) {
  if (s == "joint") return AblationMode::joint;
  if (s == "no_text") return AblationMode::no_text;
  if (s == "frozen_lm") return AblationMode::frozen_lm;
  if (s == "two_stage") return AblationMode::two_stage;
  throw ConfigError("unknown ablation mode '" + s + "'");
}

struct AblationConfig {
  AblationMode mode = AblationMode::joint;
  std::int64_t stage1_steps = 0;  // two_stage only
};

// no_text drops every text-only source.
inline MixtureSpec ablate_mixture(MixtureSpec spec, const AblationConfig& a) {
  if (a.mode != AblationMode::no_text) return spec;
  std::erase_if(spec.sources, [](const SourceSpec& s) { return s.modality == Modality::text_only; });
  if (spec.sources.empty()) throw ConfigError("no_text ablation leaves an empty mixture");
  return spec;
}

// frozen_lm trains without LoRA factors at all.
inline LoraConfig ablate_lora(LoraConfig lora, const AblationConfig& a) {
  if (a.mode == AblationMode::frozen_lm) lora.rank = 0;
  return lora;
}

inline TrainableGroups trainable_groups_at(const AblationConfig& a, std::int64_t step) {
  TrainableGroups g;
  if (a.mode == AblationMode::frozen_lm) g.lora = false;
  if (a.mode == AblationMode::two_stage && step < a.stage1_steps) g.lora = false;
  return g;
}

// Log-mel features keyed by audio path.
template <class T>
class FeatureCache {
 public:
  explicit FeatureCache(const MultimodalModel<T>& model) : model_(model) {}

  const Matrix<T>& get(const std::string& key, const Waveform& wave) {
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, model_.features(wave)).first;
    return it->second;
  }

 private:
  const MultimodalModel<T>& model_;
  std::map<std::string, Matrix<T>> cache_;
};

template <class T>
std::vector<SequenceInput<T>> batch_inputs(const Batch& b, FeatureCache<T>& features) {
  std::vector<SequenceInput<T>> rows;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    SequenceInput<T> in;
    const auto len = static_cast<Eigen::Index>(b.row_length(r));
    const auto ri = static_cast<Eigen::Index>(r);
    for (Eigen::Index c = 0; c < len; ++c) {
      in.ids.push_back(b.ids(ri, c));
      in.mask.push_back(b.loss_mask(ri, c));
    }
    for (const auto& sp : b.speech[r]) {
      in.slot_positions.push_back(sp.position);
      in.mels.push_back(&features.get(sp.path, *sp.wave));
    }
    rows.push_back(std::move(in));
  }
  return rows;
}

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens = 0;
};

// Gradients accumulate into the model's trainable parameters. The loss is
// the NLL summed over the batch divided by the batch's supervised count.
template <class T>
StepStats accumulate_batch_gradients(const MultimodalModel<T>& model, const std::vector<SequenceInput<T>>& rows,
                                     bool with_grad = true) {
  std::vector<ShiftedTargets> targets;
  std::size_t total = 0;
  for (const auto& in : rows) {
    std::vector<std::size_t> frames;
    for (const auto* mel : in.mels)
      frames.push_back(static_cast<std::size_t>(mel->rows() / model.config().encoder.downsample()));
    targets.push_back(shift_targets(assembled_layout(in.ids, in.mask, in.slot_positions, frames)));
    total += targets.back().count;
  }
  if (total == 0) throw EmptyLossMask();
  StepStats st;
  st.tokens = total;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (targets[r].count == 0) continue;
    Graph<T> g(with_grad);
    auto fw = forward_sequence(model, g, rows[r]);
    Var l = model.loss(g, fw.logits, fw.targets, T(total));
    st.loss += static_cast<double>(g.value(l)(0, 0));
    if (with_grad) g.backward(l);
  }
  return st;
}

struct TrainerOptions {
  OptimizerConfig optimizer;
  AblationConfig ablation;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::filesystem::path output_dir;   // empty: nothing written
  std::int64_t stop_after = -1;       // simulate an interrupt after this many steps
  bool log_to_file = true;
};

struct StepRecord {
  std::int64_t step = 0;
  std::string source;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"source", source}, {"loss", loss}, {"lr", lr}, {"grad_norm", grad_norm}};
  }
};

inline std::filesystem::path checkpoint_dir(const std::filesystem::path& out) { return out / "checkpoints"; }

inline std::filesystem::path checkpoint_path(const std::filesystem::path& out, std::int64_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%08lld.vtbc", static_cast<long long>(step));
  return checkpoint_dir(out) / name;
}

inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& out) {
  std::optional<std::filesystem::path> best;
  const auto dir = checkpoint_dir(out);
  if (!std::filesystem::is_directory(dir)) return best;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("step_", 0) != 0 || e.path().extension() != ".vtbc") continue;
    if (!best || name > best->filename().string()) best = e.path();
  }
  return best;
}

// Keeps only records with step < keep_below; used when resuming.
inline void truncate_metrics(const std::filesystem::path& path, std::int64_t keep_below) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      if (nlohmann::json::parse(line).at("step").get<std::int64_t>() < keep_below) kept += line + "\n";
    } catch (const nlohmann::json::exception&) {
      break;  // torn tail from an interrupted write
    }
  }
  in.close();
  std::ofstream(path, std::ios::trunc) << kept;
}

class Trainer {
 public:
  Trainer(MultimodalModel<float>& model, MixtureSampler& sampler, TrainerOptions opts)
      : model_(model), sampler_(sampler), opts_(std::move(opts)), adam_(opts_.optimizer), features_(model) {
    opts_.optimizer.validate();
  }

  std::int64_t step() const { return step_; }
  Adam<float>& optimizer() { return adam_; }
  const std::vector<StepRecord>& history() const { return history_; }
  std::function<void(const StepRecord&)> on_step;

  // Adopts model weights already restored by the caller plus the rest of a checkpoint's state.
  void resume(const LoadedCheckpoint& ck) {
    step_ = ck.state.step;
    if (!ck.state.sampler_rng.empty()) sampler_.set_rng_state(ck.state.sampler_rng);
    if (ck.optimizer) {
      adam_.set_steps_taken(ck.optimizer->steps_taken());
      adam_.state() = ck.optimizer->state();
    }
    if (!opts_.output_dir.empty()) truncate_metrics(metrics_path(), step_);
  }

  std::filesystem::path metrics_path() const { return opts_.output_dir / "metrics.jsonl"; }

  StepRecord train_step() {
    model_.set_trainable(trainable_groups_at(opts_.ablation, step_));
    const Batch batch = sampler_.next_batch();
    auto rows = batch_inputs(batch, features_);
    model_.zero_grad();
    StepStats st;
    try {
      st = accumulate_batch_gradients(model_, rows);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step_) + ": " + e.what());
    }
    if (!std::isfinite(st.loss)) throw NumericError("non-finite loss at step " + std::to_string(step_));
    auto params = model_.trainable_parameters();
    StepRecord rec;
    rec.step = step_;
    rec.source = batch.source;
    rec.loss = st.loss;
    rec.lr = learning_rate(opts_.optimizer, step_);
    rec.grad_norm = adam_.clip(params);
    if (!std::isfinite(rec.grad_norm)) throw NumericError("non-finite gradient at step " + std::to_string(step_));
    adam_.step(params, rec.lr);
    ++step_;
    return rec;
  }

  // Runs until `total_steps` updates have been made (or stop_after triggers).
  void run(std::int64_t total_steps) {
    std::ofstream log;
    if (!opts_.output_dir.empty() && opts_.log_to_file) {
      std::filesystem::create_directories(opts_.output_dir);
      log.open(metrics_path(), std::ios::app);
      if (!log) throw IoError("cannot open " + metrics_path().string());
    }
    std::int64_t done_here = 0;
    while (step_ < total_steps) {
      const auto rec = train_step();
      history_.push_back(rec);
      if (log.is_open()) log << rec.to_json().dump() << "\n" << std::flush;
      if (on_step) on_step(rec);
      ++done_here;
      const bool periodic = opts_.checkpoint_every > 0 && step_ % opts_.checkpoint_every == 0;
      if (periodic && !opts_.output_dir.empty()) save(checkpoint_path(opts_.output_dir, step_));
      if (opts_.stop_after >= 0 && done_here >= opts_.stop_after) {
        if (!periodic && !opts_.output_dir.empty()) save(checkpoint_path(opts_.output_dir, step_));
        return;
      }
    }
    if (!opts_.output_dir.empty()) {
      if (!std::filesystem::exists(checkpoint_path(opts_.output_dir, step_)))
        save(checkpoint_path(opts_.output_dir, step_));
      save(opts_.output_dir / "model.vtbc");
    }
  }

  void save(const std::filesystem::path& path) {
    CheckpointState st;
    st.step = step_;
    st.sampler_rng = sampler_.rng_state();
    st.meta = {{"ablation", ablation_name(opts_.ablation.mode)}};
    save_checkpoint(path, model_, st, &adam_);
  }

 private:
  MultimodalModel<float>& model_;
  MixtureSampler& sampler_;
  TrainerOptions opts_;
  Adam<float> adam_;
  FeatureCache<float> features_;
  std::int64_t step_ = 0;
  std::vector<StepRecord> history_;
};

}  // namespace vtb::nn
