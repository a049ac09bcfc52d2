#pragma once

#include <algorithm>
#include <memory>

#include <json.hpp>

#include "vtb/common/rng.hpp"
#include "vtb/model/network.hpp"

namespace vtb::nn {

// Random assembled inputs: standard-normal rows, lengths in [4, 32].
template <class T>
std::vector<Matrix<T>> random_assembled_inputs(int width, std::size_t count, std::uint64_t seed) {
  auto rng = derive_rng(seed, "merge-check");
  std::vector<Matrix<T>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = 4 + static_cast<Eigen::Index>(uniform_index(rng, 29));
    Matrix<T> x(len, width);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = T(standard_normal(rng));
    out.push_back(std::move(x));
  }
  return out;
}

template <class T>
double max_logit_difference(const MultimodalModel<T>& a, const MultimodalModel<T>& b,
                            const std::vector<Matrix<T>>& inputs) {
  double worst = 0.0;
  for (const auto& x : inputs) {
    Graph<T> ga(false), gb(false);
    const auto& la = ga.value(a.lm_forward(ga, ga.constant(x)));
    const auto& lb = gb.value(b.lm_forward(gb, gb.constant(x)));
    worst = std::max(worst, static_cast<double>((la - lb).cwiseAbs().maxCoeff()));
  }
  return worst;
}

struct MergeCheck {
  double max_abs_diff = 0.0;
  std::string precision = "f32";
  double max_abs_diff_f32 = 0.0;
  bool passed = false;

  nlohmann::json to_json() const {
    return {{"inputs", 32},
            {"tolerance", 1e-5},
            {"max_abs_diff", max_abs_diff},
            {"max_abs_diff_f32", max_abs_diff_f32},
            {"precision", precision},
            {"passed", passed}};
  }
};

// Merges a copy of `adapted` and compares logits on 32 random inputs. When
// single precision rounding alone breaks the tolerance, the same comparison
// is repeated in double precision.
inline std::pair<std::unique_ptr<MultimodalModel<float>>, MergeCheck> merge_with_check(
    const MultimodalModel<float>& adapted, std::uint64_t seed, double tol = 1e-5) {
  if (!adapted.has_lora()) throw UsageError("model has no LoRA factors to merge");
  auto merged = adapted.clone();
  merged->merge_lora();
  MergeCheck check;
  const int width = adapted.config().lm.width;
  check.max_abs_diff_f32 = max_logit_difference(adapted, *merged, random_assembled_inputs<float>(width, 32, seed));
  check.max_abs_diff = check.max_abs_diff_f32;
  if (!(check.max_abs_diff_f32 < tol)) {
    auto a64 = adapted.cast<double>();
    auto m64 = adapted.cast<double>();
    m64->merge_lora();
    check.max_abs_diff = max_logit_difference(*a64, *m64, random_assembled_inputs<double>(width, 32, seed));
    check.precision = "f64";
  }
  check.passed = check.max_abs_diff < tol;
  return {std::move(merged), check};
}

}  // namespace vtb::nn
