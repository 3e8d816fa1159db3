#include "milpath/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "milpath/error.hpp"
#include "milpath/random.hpp"

namespace milpath {

void TrainConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive");
  require(weight_decay >= 0.0, "weight decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  require(epsilon > 0.0, "epsilon must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(max_epochs >= 1, "max_epochs must be at least 1");
  require(patience >= 1, "patience must be at least 1");
  require(patience <= max_epochs, "patience must not exceed max_epochs");
}

// ---------------------------------------------------------------------------
// Folds

int split_quota(int class_size, double ratio) {
  if (ratio <= 0.0) return 0;
  const double exact = class_size * ratio;
  const int rounded = static_cast<int>(std::ceil(exact - 0.5 - 1e-9));
  return std::max(1, rounded);
}

std::vector<FoldPlan> make_folds(const Manifest& manifest, int n_folds, const SplitRatios& ratios,
                                 std::uint64_t seed) {
  require(n_folds >= 1, "need at least one fold");
  require(ratios.train > 0.0 && ratios.val >= 0.0 && ratios.test > 0.0,
          "split ratios must be positive (validation may be zero)");
  require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) <= 1e-9,
          "split ratios must sum to 1");

  std::vector<FoldPlan> plans(static_cast<std::size_t>(n_folds));
  for (int f = 0; f < n_folds; ++f) plans[static_cast<std::size_t>(f)].fold_index = f;

  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::string> ids;
    for (const auto& row : manifest.rows) {
      if (class_index(row.label) == c) ids.push_back(row.slide_id);
    }
    const int n = static_cast<int>(ids.size());
    const auto name = std::string(to_string(static_cast<Subtype>(c)));
    require(n >= n_folds, "class " + name + " has " + std::to_string(n) +
                              " slides; need at least " + std::to_string(n_folds));
    const int n_test = split_quota(n, ratios.test);
    const int n_val = split_quota(n, ratios.val);
    require(n_folds * n_test <= n, "class " + name + " is too small for " +
                                       std::to_string(n_folds) + " disjoint test sets");
    require(n_test + n_val < n, "class " + name + " leaves no training slides");

    Rng rng(mix_seed(seed, 0xF01D, static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<std::string>(ids));

    for (int f = 0; f < n_folds; ++f) {
      auto& plan = plans[static_cast<std::size_t>(f)];
      const int test_begin = f * n_test;
      for (int i = 0; i < n; ++i) {
        // Position relative to the start of this fold's test block, cyclic.
        const int rel = ((i - test_begin) % n + n) % n;
        const auto& id = ids[static_cast<std::size_t>(i)];
        if (rel < n_test) {
          plan.test_ids.push_back(id);
        } else if (rel < n_test + n_val) {
          plan.val_ids.push_back(id);
        } else {
          plan.train_ids.push_back(id);
        }
      }
    }
  }
  for (auto& plan : plans) {
    std::sort(plan.train_ids.begin(), plan.train_ids.end());
    std::sort(plan.val_ids.begin(), plan.val_ids.end());
    std::sort(plan.test_ids.begin(), plan.test_ids.end());
  }
  return plans;
}

// ---------------------------------------------------------------------------
// AdamW

AdamWState AdamWState::for_params(const MilParams& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(MilParams& params, const MilGrads& grads, AdamWState& state,
                const TrainConfig& cfg) {
  if (!grads.all_finite()) {
    fail(ErrorKind::kNumeric, "non-finite gradient at optimizer step " +
                                  std::to_string(state.step_count + 1));
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  const double lr = cfg.learning_rate;
  const double wd = cfg.weight_decay;

  auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const auto m_hat = m.array() / correction1;
    const auto v_hat = v.array() / correction2;
    theta.array() -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + wd * theta.array());
  };
  update(params.w1, grads.w1, state.m.w1, state.v.w1);
  update(params.b1, grads.b1, state.m.b1, state.v.b1);
  update(params.ua, grads.ua, state.m.ua, state.v.ua);
  update(params.va, grads.va, state.m.va, state.v.va);
  update(params.wa, grads.wa, state.m.wa, state.v.wa);
  update(params.wc, grads.wc, state.m.wc, state.v.wc);
  update(params.bc, grads.bc, state.m.bc, state.v.bc);
}

// ---------------------------------------------------------------------------
// Early stopping

bool EarlyStopping::observe(int epoch, double val_loss) {
  if (best_epoch_ == 0 || val_loss < best_loss_) {
    best_epoch_ = epoch;
    best_loss_ = val_loss;
    return true;
  }
  return false;
}

TrainLog run_early_stopping(int max_epochs, int patience,
                            const std::function<EpochRecord(int)>& run_epoch,
                            const std::function<void(int)>& on_improvement) {
  require(patience >= 1 && patience <= max_epochs, "patience must lie in [1, max_epochs]");
  EarlyStopping stopper(patience);
  TrainLog log;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    EpochRecord rec = run_epoch(epoch);
    rec.epoch = epoch;
    if (!std::isfinite(rec.val_loss)) {
      fail(ErrorKind::kNumeric, "validation loss is not finite at epoch " + std::to_string(epoch));
    }
    log.epochs.push_back(rec);
    if (stopper.observe(epoch, rec.val_loss) && on_improvement) on_improvement(epoch);
    log.stopped_epoch = epoch;
    if (stopper.should_stop(epoch)) break;
  }
  log.best_epoch = stopper.best_epoch();
  return log;
}

// ---------------------------------------------------------------------------
// Training

BagStore load_bags(const Manifest& manifest) {
  BagStore bags;
  for (const auto& row : manifest.rows) {
    SlideBag bag = read_embedding_file(row.embedding_path);
    bag.slide_id = row.slide_id;
    bag.label = row.label;
    bags.emplace(row.slide_id, std::move(bag));
  }
  return bags;
}

namespace {

struct Prepared {
  std::string slide_id;
  Subtype label;
  Eigen::MatrixXd embeddings;
};

std::vector<Prepared> prepare(const BagStore& bags, const std::vector<std::string>& ids) {
  std::vector<Prepared> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = bags.find(id);
    require(it != bags.end(), "no bag loaded for slide '" + id + "'");
    require(it->second.label.has_value(), "slide '" + id + "' has no label");
    validate(it->second);
    out.push_back({id, *it->second.label, to_double(it->second.embeddings)});
  }
  return out;
}

int common_dim(const BagStore& bags) {
  require(!bags.empty(), "no bags loaded");
  const int d = bags.begin()->second.dim();
  for (const auto& [id, bag] : bags) {
    require(bag.dim() == d, "slide '" + id + "' has embedding width " + std::to_string(bag.dim()) +
                                ", expected " + std::to_string(d));
  }
  return d;
}

std::pair<double, std::optional<double>> validation_pass(const std::vector<Prepared>& set,
                                                         const MilParams& params) {
  double loss = 0.0;
  std::vector<double> scores;
  std::vector<int> positive;
  for (const auto& s : set) {
    const auto tr = forward(s.embeddings, params, ForwardMode::eval());
    loss += cross_entropy(tr.logits, s.label);
    scores.push_back(tr.probs(class_index(Subtype::kAbc)));
    positive.push_back(s.label == Subtype::kAbc ? 1 : 0);
  }
  std::optional<double> auc;
  try {
    auc = roc_auc(scores, positive);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndefined) throw;
  }
  return {loss / static_cast<double>(set.size()), auc};
}

}  // namespace

std::vector<SlideScore> score_bags(const MilParams& params, const BagStore& bags,
                                   const std::vector<std::string>& ids) {
  std::vector<SlideScore> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = bags.find(id);
    require(it != bags.end(), "no bag loaded for slide '" + id + "'");
    const auto tr = forward(it->second, params, ForwardMode::eval());
    out.push_back({id, it->second.label, tr.probs});
  }
  return out;
}

TrainedFold train_fold(const FoldPlan& fold, const BagStore& bags, const TrainConfig& cfg,
                       const ModelConfig& model, std::ostream* log) {
  cfg.validate();
  require(!fold.train_ids.empty(), "fold " + std::to_string(fold.fold_index) + " has no training slides");
  require(!fold.val_ids.empty(), "fold " + std::to_string(fold.fold_index) + " has no validation slides");
  const auto train = prepare(bags, fold.train_ids);
  const auto val = prepare(bags, fold.val_ids);

  ModelConfig mc = model;
  mc.input_dim = static_cast<int>(train.front().embeddings.cols());
  mc.dropout = cfg.dropout;
  for (const auto* set : {&train, &val}) {
    for (const auto& s : *set) {
      require(s.embeddings.cols() == mc.input_dim, "slide '" + s.slide_id +
                                                       "' has a different embedding width");
    }
  }

  const auto fold_tag = static_cast<std::uint64_t>(fold.fold_index);
  MilParams params = init_params(mc, mix_seed(cfg.seed, 0x1417, fold_tag));
  AdamWState state = AdamWState::for_params(params);
  TrainedFold result{params, {}};

  std::vector<std::size_t> order(train.size());
  auto run_epoch = [&](int epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(mix_seed(cfg.seed, 0x5EED + fold_tag, static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(std::span<std::size_t>(order));

    EpochRecord rec;
    double total = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const auto& s = train[order[step]];
      const auto dropout_seed =
          mix_seed(cfg.seed, (fold_tag << 32) | static_cast<std::uint64_t>(epoch), step);
      const auto tr = forward(s.embeddings, params, ForwardMode::training(dropout_seed));
      auto br = backward(tr, s.embeddings, params, s.label);
      if (!std::isfinite(br.loss) || !br.grads.all_finite()) {
        fail(ErrorKind::kNumeric, "non-finite loss or gradient on slide '" + s.slide_id +
                                      "' (fold " + std::to_string(fold.fold_index) + ", epoch " +
                                      std::to_string(epoch) + ")");
      }
      adamw_step(params, br.grads, state, cfg);
      total += br.loss;
    }
    rec.train_loss = total / static_cast<double>(train.size());
    std::tie(rec.val_loss, rec.val_auc) = validation_pass(val, params);
    if (log && (epoch == 1 || epoch % 10 == 0)) {
      char line[160];
      std::snprintf(line, sizeof line, "fold %d epoch %3d  train_loss %.4f  val_loss %.4f\n",
                    fold.fold_index, epoch, rec.train_loss, rec.val_loss);
      *log << line << std::flush;
    }
    return rec;
  };

  result.log = run_early_stopping(cfg.max_epochs, cfg.patience, run_epoch,
                                  [&](int) { result.params = params; });
  if (log) {
    *log << "fold " << fold.fold_index << " stopped at epoch " << result.log.stopped_epoch
         << ", best epoch " << result.log.best_epoch << '\n'
         << std::flush;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Cross-validation

std::pair<std::vector<double>, std::vector<int>> positive_scores(
    const std::vector<SlideScore>& scores, Subtype positive) {
  std::vector<double> s;
  std::vector<int> p;
  for (const auto& row : scores) {
    require(row.label.has_value(), "slide '" + row.slide_id + "' has no label");
    s.push_back(row.probs(class_index(positive)));
    p.push_back(*row.label == positive ? 1 : 0);
  }
  return {s, p};
}

CvReport run_cross_validation(const Manifest& manifest, const BagStore& bags, const CvConfig& cfg,
                              std::ostream* log) {
  cfg.train.validate();
  require(cfg.jobs >= 1, "jobs must be at least 1");
  const auto counts = manifest.class_counts();
  require(counts[0] > 0 && counts[1] > 0, "cross-validation needs slides of both classes");

  ModelConfig model = cfg.model;
  model.input_dim = common_dim(bags);
  const auto plans = make_folds(manifest, cfg.n_folds, cfg.ratios, cfg.train.seed);

  CvReport report;
  report.folds.resize(plans.size());
  std::mutex log_mutex;

  auto run_one = [&](std::size_t f) {
    std::ostringstream fold_log;
    auto& out = report.folds[f];
    out.plan = plans[f];
    out.trained = train_fold(plans[f], bags, cfg.train, model, log ? &fold_log : nullptr);
    out.test_scores = score_bags(out.trained.params, bags, plans[f].test_ids);
    const auto [scores, positive] = positive_scores(out.test_scores, cfg.positive);
    out.test = evaluate(scores, positive, cfg.threshold);
    if (log) {
      std::lock_guard lock(log_mutex);
      *log << fold_log.str() << std::flush;
    }
  };

  if (cfg.jobs == 1 || plans.size() == 1) {
    for (std::size_t f = 0; f < plans.size(); ++f) run_one(f);
  } else {
    std::vector<std::exception_ptr> errors(plans.size());
    std::size_t next = 0;
    std::mutex next_mutex;
    auto worker = [&] {
      while (true) {
        std::size_t f;
        {
          std::lock_guard lock(next_mutex);
          if (next >= plans.size()) return;
          f = next++;
        }
        try {
          run_one(f);
        } catch (...) {
          errors[f] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    const auto width = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), plans.size());
    for (std::size_t i = 0; i < width; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<std::optional<double>> auc, acc, ppv, npv;
  for (const auto& fold : report.folds) {
    auc.push_back(fold.test.auc);
    acc.push_back(fold.test.acc);
    ppv.push_back(fold.test.ppv);
    npv.push_back(fold.test.npv);
  }
  report.auc = summarize(auc);
  report.acc = summarize(acc);
  report.ppv = summarize(ppv);
  report.npv = summarize(npv);
  if (log) {
    for (const auto* m : {&report.auc, &report.ppv, &report.npv}) {
      if (m->undefined > 0) {
        *log << "warning: " << m->undefined
             << " fold(s) have an undefined metric and are excluded from its mean\n";
      }
    }
  }
  return report;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json summary_json(const MetricSummary& s) {
  nlohmann::ordered_json j;
  j["mean"] = opt(s.mean);
  j["std"] = opt(s.std);
  j["max"] = opt(s.max);
  j["folds_defined"] = s.defined;
  j["folds_undefined"] = s.undefined;
  return j;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_opt(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

}  // namespace

std::string cv_report_json(const CvReport& report, const CvConfig& cfg) {
  nlohmann::ordered_json j;
  j["positive_class"] = std::string(to_string(cfg.positive));
  j["threshold"] = cfg.threshold;
  j["n_folds"] = cfg.n_folds;
  j["seed"] = cfg.train.seed;
  auto& folds = j["folds"] = nlohmann::ordered_json::array();
  for (const auto& f : report.folds) {
    nlohmann::ordered_json fj;
    fj["fold"] = f.plan.fold_index;
    fj["auc"] = opt(f.test.auc);
    fj["acc"] = f.test.acc;
    fj["ppv"] = opt(f.test.ppv);
    fj["npv"] = opt(f.test.npv);
    fj["tp"] = f.test.confusion.tp;
    fj["fp"] = f.test.confusion.fp;
    fj["tn"] = f.test.confusion.tn;
    fj["fn"] = f.test.confusion.fn;
    fj["best_epoch"] = f.trained.log.best_epoch;
    fj["stopped_epoch"] = f.trained.log.stopped_epoch;
    fj["n_train"] = f.plan.train_ids.size();
    fj["n_val"] = f.plan.val_ids.size();
    fj["n_test"] = f.plan.test_ids.size();
    folds.push_back(std::move(fj));
  }
  auto& summary = j["summary"];
  summary["auc"] = summary_json(report.auc);
  summary["acc"] = summary_json(report.acc);
  summary["ppv"] = summary_json(report.ppv);
  summary["npv"] = summary_json(report.npv);
  return j.dump(2) + "\n";
}

std::string train_log_csv(const TrainLog& log) {
  std::string out = "epoch,train_loss,val_loss,val_auc,best\n";
  for (const auto& e : log.epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
           format_double(e.val_loss) + "," + format_opt(e.val_auc) + "," +
           (e.epoch == log.best_epoch ? "1" : "0") + "\n";
  }
  return out;
}

std::string metrics_csv_header() { return "fold,auc,acc,ppv,npv,tp,fp,tn,fn\n"; }

std::string metrics_csv_row(const std::string& fold, const EvalResult& r) {
  return fold + "," + format_opt(r.auc) + "," + format_double(r.acc) + "," + format_opt(r.ppv) +
         "," + format_opt(r.npv) + "," + std::to_string(r.confusion.tp) + "," +
         std::to_string(r.confusion.fp) + "," + std::to_string(r.confusion.tn) + "," +
         std::to_string(r.confusion.fn) + "\n";
}

}  // namespace milpath
