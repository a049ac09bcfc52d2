#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vtb/common/error.hpp"
#include "vtb/textproc/text.hpp"

namespace vtb::eval {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
};

// Minimum edit alignment of hyp against ref; ties prefer substitutions.
inline EditCounts align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  struct Cell {
    std::size_t cost, s, i, d;
  };
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, 0, j, 0};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, 0, 0, i};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = ref[i - 1] == hyp[j - 1];
      Cell diag = prev[j - 1];
      diag.cost += same ? 0 : 1;
      diag.s += same ? 0 : 1;
      Cell del = prev[j];
      ++del.cost;
      ++del.d;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.i;
      Cell best = diag;
      if (del.cost < best.cost) best = del;
      if (ins.cost < best.cost) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  return {prev[m].s, prev[m].i, prev[m].d};
}

struct WerResult {
  double wer = 0.0;
  EditCounts counts;
  std::size_t ref_words = 0;
};

// Corpus WER over normalized text: total edits / total reference words.
inline WerResult corpus_wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size()) throw InvalidArgument("wer: reference and hypothesis counts differ");
  if (refs.empty()) throw InvalidArgument("wer: empty corpus");
  WerResult r;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto ref = split_words(normalize_text(refs[k]));
    if (ref.empty()) throw InvalidArgument("wer: reference " + std::to_string(k) + " has no words after normalization");
    const auto c = align_words(ref, split_words(normalize_text(hyps[k])));
    r.counts.substitutions += c.substitutions;
    r.counts.insertions += c.insertions;
    r.counts.deletions += c.deletions;
    r.ref_words += ref.size();
  }
  r.wer = static_cast<double>(r.counts.errors()) / static_cast<double>(r.ref_words);
  return r;
}

inline double wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  return corpus_wer(refs, hyps).wer;
}

struct BleuResult {
  double bleu = 0.0;
  double brevity_penalty = 0.0;
  std::vector<double> precisions;  // smoothed, n = 1..4
  std::vector<std::size_t> matches, totals;
  std::size_t hyp_len = 0, ref_len = 0;
};

// Corpus BLEU-4 on whitespace tokens. Orders with zero matches are smoothed
// as 1 / (2^k * total) with k counting such orders; no unigram match at all
// scores 0. When every hypothesis is shorter than n, orders >= n are dropped
// from the geometric mean.
inline BleuResult corpus_bleu(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size()) throw InvalidArgument("bleu: reference and hypothesis counts differ");
  if (refs.empty()) throw InvalidArgument("bleu: empty corpus");
  constexpr int kOrder = 4;
  BleuResult r;
  r.matches.assign(kOrder, 0);
  r.totals.assign(kOrder, 0);
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto ref = split_words(refs[k]);
    const auto hyp = split_words(hyps[k]);
    r.ref_len += ref.size();
    r.hyp_len += hyp.size();
    for (int n = 1; n <= kOrder; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
      for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) r.matches[n - 1] += std::min(c, it->second);
        r.totals[n - 1] += c;
      }
    }
  }
  if (r.hyp_len == 0 || r.matches[0] == 0) return r;
  double log_sum = 0.0, smooth = 1.0;
  int orders = 0;
  for (int n = 0; n < kOrder; ++n) {
    if (r.totals[n] == 0) break;
    double p;
    if (r.matches[n] == 0) {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(r.totals[n]));
    } else {
      p = static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    }
    r.precisions.push_back(p);
    log_sum += std::log(p);
    ++orders;
  }
  r.brevity_penalty =
      r.hyp_len < r.ref_len ? std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len)) : 1.0;
  r.bleu = 100.0 * r.brevity_penalty * std::exp(log_sum / orders);
  return r;
}

inline double bleu(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  return corpus_bleu(refs, hyps).bleu;
}

}  // namespace vtb::eval
