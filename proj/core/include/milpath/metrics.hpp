#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace milpath {

struct Confusion {
  int tp = 0;
  int fp = 0;
  int tn = 0;
  int fn = 0;

  int total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Area under the ROC curve as the Mann-Whitney statistic
/// (concordant + 0.5 * tied) / (pos * neg), via average ranks in O(n log n).
/// `positive[i]` is 1 for the positive class. Throws kUndefined when one
/// class is absent.
double roc_auc(std::span<const double> scores, std::span<const int> positive);

/// Predict positive iff score >= threshold.
Confusion confusion_at_threshold(std::span<const double> scores, std::span<const int> positive,
                                 double threshold = 0.5);

struct PredictiveValues {
  std::optional<double> ppv;  // nullopt when tp + fp == 0
  std::optional<double> npv;  // nullopt when tn + fn == 0
};

PredictiveValues ppv_npv(const Confusion& c);

struct EvalResult {
  std::optional<double> auc;  // nullopt when the evaluated set is single-class
  double acc = 0.0;
  std::optional<double> ppv;
  std::optional<double> npv;
  Confusion confusion;
};

EvalResult evaluate(std::span<const double> scores, std::span<const int> positive,
                    double threshold = 0.5);

struct MetricSummary {
  std::optional<double> mean;
  std::optional<double> std;  // population
  std::optional<double> max;
  int defined = 0;            // folds contributing
  int undefined = 0;          // folds excluded
};

/// Mean, population standard deviation and maximum over the defined values.
MetricSummary summarize(std::span<const std::optional<double>> values);

}  // namespace milpath
