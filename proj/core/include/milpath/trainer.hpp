#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milpath/datamodel.hpp"
#include "milpath/metrics.hpp"
#include "milpath/milnet.hpp"

namespace milpath {

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double dropout = 0.1;
  int max_epochs = 200;
  int patience = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct FoldPlan {
  int fold_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
};

/// Per-class quota for a subset: round-half-down of n * ratio, at least one
/// slide when the ratio is positive.
int split_quota(int class_size, double ratio);

/// Stratified folds. Each class is shuffled once; fold f takes the f-th block
/// of test quota as its test set, so test sets are disjoint across folds. The
/// validation quota follows the test block cyclically and the rest is train.
std::vector<FoldPlan> make_folds(const Manifest& manifest, int n_folds = 3,
                                 const SplitRatios& ratios = {}, std::uint64_t seed = 0);

struct AdamWState {
  MilParams m;
  MilParams v;
  std::int64_t step_count = 0;

  static AdamWState for_params(const MilParams& params);
};

/// One decoupled-weight-decay Adam update, in place:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// Throws kNumeric (params untouched) when a gradient is not finite.
void adamw_step(MilParams& params, const MilGrads& grads, AdamWState& state,
                const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_auc;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  int stopped_epoch = 0;
};

/// Tracks the best validation loss; an epoch improves only on a strict decrease.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Returns true when `val_loss` is a new best.
  bool observe(int epoch, double val_loss);
  bool should_stop(int epoch) const { return best_epoch_ > 0 && epoch - best_epoch_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
};

/// Epoch loop shared by train_fold and tests: calls `run_epoch(e)` for
/// e = 1..max_epochs, `on_improvement(e)` whenever validation loss reaches a
/// new best, and stops once `patience` epochs pass without improvement.
TrainLog run_early_stopping(int max_epochs, int patience,
                            const std::function<EpochRecord(int)>& run_epoch,
                            const std::function<void(int)>& on_improvement);

using BagStore = std::map<std::string, SlideBag, std::less<>>;

/// Reads every manifest bag and attaches its slide id and label.
BagStore load_bags(const Manifest& manifest);

struct SlideScore {
  std::string slide_id;
  std::optional<Subtype> label;
  Eigen::Vector2d probs;
};

/// Eval-mode forward over each bag, in the given order.
std::vector<SlideScore> score_bags(const MilParams& params, const BagStore& bags,
                                   const std::vector<std::string>& ids);

struct TrainedFold {
  MilParams params;  // from the best validation epoch
  TrainLog log;
};

/// Trains one fold: seeded shuffle each epoch, one AdamW step per slide,
/// validation loss after each epoch, best-checkpoint restoration.
TrainedFold train_fold(const FoldPlan& fold, const BagStore& bags, const TrainConfig& cfg,
                       const ModelConfig& model, std::ostream* log = nullptr);

struct CvConfig {
  TrainConfig train;
  ModelConfig model;  // input_dim is taken from the bags
  int n_folds = 3;
  SplitRatios ratios;
  Subtype positive = Subtype::kAbc;
  double threshold = 0.5;
  int jobs = 1;
};

struct FoldOutcome {
  FoldPlan plan;
  TrainedFold trained;
  EvalResult test;
  std::vector<SlideScore> test_scores;
};

struct CvReport {
  std::vector<FoldOutcome> folds;
  MetricSummary auc;
  MetricSummary acc;
  MetricSummary ppv;
  MetricSummary npv;
};

/// Scores for the positive class and 0/1 positive flags, for metrics.
std::pair<std::vector<double>, std::vector<int>> positive_scores(
    const std::vector<SlideScore>& scores, Subtype positive);

CvReport run_cross_validation(const Manifest& manifest, const BagStore& bags,
                              const CvConfig& cfg, std::ostream* log = nullptr);

/// Deterministic JSON: per-fold metrics and confusion, summary mean/std/max.
std::string cv_report_json(const CvReport& report, const CvConfig& cfg);
std::string train_log_csv(const TrainLog& log);
/// `fold,auc,acc,ppv,npv,tp,fp,tn,fn`; undefined values are written as NA.
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& fold, const EvalResult& r);

}  // namespace milpath
