#include "milpath/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "milpath/error.hpp"

namespace milpath {

double roc_auc(std::span<const double> scores, std::span<const int> positive) {
  require(scores.size() == positive.size(), "scores and labels differ in length");
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require(std::isfinite(scores[i]), "AUC scores must be finite");
    require(positive[i] == 0 || positive[i] == 1, "AUC labels must be 0 or 1");
    n_pos += positive[i];
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(scores.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorKind::kUndefined, "AUC needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum, kept integral: a tie block spanning 1-based
  // ranks [lo, hi] has average rank (lo + hi) / 2.
  std::int64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const auto lo = static_cast<std::int64_t>(i) + 1;
    const auto hi = static_cast<std::int64_t>(j) + 1;
    std::int64_t block_pos = 0;
    for (std::size_t k = i; k <= j; ++k) block_pos += positive[order[k]];
    twice_rank_sum += block_pos * (lo + hi);
    i = j + 1;
  }
  const std::int64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * n_pos * n_neg);
}

Confusion confusion_at_threshold(std::span<const double> scores, std::span<const int> positive,
                                 double threshold) {
  require(scores.size() == positive.size(), "scores and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = positive[i] != 0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

PredictiveValues ppv_npv(const Confusion& c) {
  PredictiveValues v;
  if (c.tp + c.fp > 0) v.ppv = static_cast<double>(c.tp) / (c.tp + c.fp);
  if (c.tn + c.fn > 0) v.npv = static_cast<double>(c.tn) / (c.tn + c.fn);
  return v;
}

EvalResult evaluate(std::span<const double> scores, std::span<const int> positive,
                    double threshold) {
  require(!scores.empty(), "cannot evaluate an empty set");
  EvalResult r;
  r.confusion = confusion_at_threshold(scores, positive, threshold);
  r.acc = static_cast<double>(r.confusion.tp + r.confusion.tn) / r.confusion.total();
  const auto pv = ppv_npv(r.confusion);
  r.ppv = pv.ppv;
  r.npv = pv.npv;
  try {
    r.auc = roc_auc(scores, positive);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndefined) throw;
  }
  return r;
}

MetricSummary summarize(std::span<const std::optional<double>> values) {
  MetricSummary s;
  std::vector<double> defined;
  for (const auto& v : values) {
    if (v) defined.push_back(*v);
  }
  s.defined = static_cast<int>(defined.size());
  s.undefined = static_cast<int>(values.size() - defined.size());
  if (defined.empty()) return s;
  const double n = static_cast<double>(defined.size());
  const double mean = std::accumulate(defined.begin(), defined.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : defined) ss += (v - mean) * (v - mean);
  s.mean = mean;
  s.std = std::sqrt(ss / n);
  s.max = *std::max_element(defined.begin(), defined.end());
  return s;
}

}  // namespace milpath
