// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero
// when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "milpath/checkpoint.hpp"
#include "milpath/metrics.hpp"
#include "milpath/milnet.hpp"
#include "milpath/morpho.hpp"
#include "milpath/trainer.hpp"
#include "support.hpp"

using namespace milpath;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

// -- gradients ---------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const ModelConfig cfg = testing::tiny_config(5, 6, 4);
  double worst = 0.0;
  int draws = 0;
  for (int n : {1, 3, 7}) {
    for (int d = 0; d < 100; ++d) {
      const auto r = testing::check_gradients(static_cast<std::uint64_t>(n) * 1000 + d, n, cfg);
      worst = std::max(worst, r.max_rel_error);
      ++draws;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          format("%d draws, max relative error %.3g, %.1f s", draws, worst, secs)};
}

// -- attention invariants ----------------------------------------------------

Outcome attention_invariants() {
  Rng rng(2024);
  double col_err = 0.0, perm_att = 0.0, perm_prob = 0.0;
  for (int b = 0; b < 50; ++b) {
    const int n = 1 + static_cast<int>(rng.below(40));
    ModelConfig cfg = testing::tiny_config(16, 12, 8);
    if (b % 2) cfg.classifier_mode = ClassifierMode::kShared;
    const MilParams p = testing::random_params(rng, cfg, 1.0);
    const Eigen::MatrixXd e = testing::random_matrix(rng, n, 16, 2.0);
    const auto t = forward(e, p, ForwardMode::eval());
    for (Eigen::Index m = 0; m < t.attention.cols(); ++m) {
      col_err = std::max(col_err, std::abs(t.attention.col(m).sum() - 1.0));
    }
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<int>(perm));
    Eigen::MatrixXd ep(n, 16);
    for (int k = 0; k < n; ++k) ep.row(k) = e.row(perm[static_cast<std::size_t>(k)]);
    const auto tp = forward(ep, p, ForwardMode::eval());
    for (int k = 0; k < n; ++k) {
      perm_att = std::max(perm_att, (tp.attention.row(k) -
                                     t.attention.row(perm[static_cast<std::size_t>(k)])).cwiseAbs().maxCoeff());
    }
    perm_prob = std::max(perm_prob, (tp.probs - t.probs).cwiseAbs().maxCoeff());
  }
  return {col_err <= 1e-6 && perm_att <= 1e-6 && perm_prob <= 1e-6,
          format("50 bags, column-sum error %.2g, permuted attention %.2g, permuted probs %.2g",
                 col_err, perm_att, perm_prob)};
}

// -- AUC ---------------------------------------------------------------------

Outcome auc_oracle() {
  const double example =
      roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
  Rng rng(99);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const int n = 2 + static_cast<int>(rng.below(199));
    const int levels = 1 + static_cast<int>(rng.below(30));
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      s[static_cast<std::size_t>(k)] = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) / levels;
      y[static_cast<std::size_t>(k)] = static_cast<int>(rng.below(2));
    }
    y[0] = 1;
    y[1] = 0;
    rng.shuffle(std::span<int>(y));
    double hits = 0.0;
    long pairs = 0;
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        if (y[static_cast<std::size_t>(a)] != 1 || y[static_cast<std::size_t>(b)] != 0) continue;
        ++pairs;
        const double sa = s[static_cast<std::size_t>(a)], sb = s[static_cast<std::size_t>(b)];
        hits += sa > sb ? 1.0 : sa == sb ? 0.5 : 0.0;
      }
    }
    if (roc_auc(s, y) != hits / static_cast<double>(pairs)) ++mismatches;
  }
  return {mismatches == 0 && example == 0.75,
          format("1000 instances, %d mismatches, example %.4g", mismatches, example)};
}

// -- end to end --------------------------------------------------------------

int quiet_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "milpath %s failed: %s\n", args[0].c_str(), err.str().c_str());
  return code;
}

nlohmann::json read_json(const std::filesystem::path& p) {
  return nlohmann::json::parse(testing::read_text(p));
}

struct Run {
  double auc = NAN;
  double acc = NAN;
};

Run synth_and_train(const std::filesystem::path& dir, const std::string& strength, const std::string& seed) {
  const std::string corpus = (dir / "corpus").string();
  if (quiet_cli({"synth", "--out", corpus, "--slides", "60", "--seed", seed, "--signal-strength",
                 strength}) != 0 ||
      quiet_cli({"train", "--manifest", corpus + "/manifest.csv", "--out", (dir / "run").string(),
                 "--seed", seed, "--quiet"}) != 0) {
    return {};
  }
  const auto j = read_json(dir / "run" / "cv_report.json");
  Run r;
  r.auc = j["summary"]["auc"]["mean"].get<double>();
  r.acc = j["summary"]["acc"]["mean"].get<double>();
  return r;
}

const testing::TempDir& work() {
  static testing::TempDir dir("acceptance");
  return dir;
}

Outcome end_to_end() {
  const auto t0 = Clock::now();
  const Run signal = synth_and_train(work() / "signal", "3.0", "1");
  const Run null = synth_and_train(work() / "null", "0", "1");
  const double secs = seconds_since(t0);
  const bool ok = signal.auc >= 0.95 && signal.acc >= 0.85 && std::abs(null.auc - 0.5) <= 0.15 &&
                  secs < 600.0;
  return {ok, format("signal AUC %.3f ACC %.3f, null AUC %.3f, %.0f s", signal.auc, signal.acc,
                     null.auc, secs)};
}

// -- early stopping ----------------------------------------------------------

Outcome early_stopping() {
  int bad = 0, cases = 0;
  for (int E = 1; E <= 15; ++E) {
    for (int patience : {1, 2, 5, 10, 20}) {
      const TrainLog log = run_early_stopping(
          200, patience,
          [&](int e) {
            EpochRecord r;
            r.epoch = e;
            r.val_loss = e <= E ? 1.0 / e : 1.0 / E + 0.01 * ((e * 7) % 3);
            return r;
          },
          {});
      ++cases;
      if (log.stopped_epoch != E + patience || log.best_epoch > E) ++bad;
    }
  }
  return {bad == 0, format("%d schedules, %d violations", cases, bad)};
}

// -- morphometry -------------------------------------------------------------

Outcome morphometry() {
  std::vector<std::string> notes;
  bool ok = true;
  auto features = [](const LabelMask& m) {
    return nucleus_features(m, RgbImage(m.width, m.height, {120, 60, 160})).at(0);
  };

  LabelMask disk(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if ((x - 31.5) * (x - 31.5) + (y - 31.5) * (y - 31.5) <= 400.0) disk.set(x, y, 1);
    }
  }
  const auto d = features(disk);
  const double area_err = std::abs(d.area / (std::numbers::pi * 400.0) - 1.0);
  ok = ok && area_err <= 0.02 && d.circularity >= 0.92 && d.circularity <= 1.02;
  notes.push_back(format("disk area err %.4f circ %.4f", area_err, d.circularity));

  LabelMask rect(40, 30), moved(90, 70);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 20; ++x) {
      rect.set(x + 5, y + 7, 1);
      moved.set(x + 61, y + 43, 1);
    }
  }
  const auto r = features(rect);
  const auto m = features(moved);
  ok = ok && std::abs(r.aspect_ratio / 2.0 - 1.0) <= 0.02 && r.solidity == 1.0;
  notes.push_back(format("rect aspect %.4f solidity %.4f", r.aspect_ratio, r.solidity));

  double shift = 0.0;
  for (auto [a, b] : {std::pair{r.area, m.area}, {r.perimeter, m.perimeter}, {r.circularity, m.circularity},
                      {r.aspect_ratio, m.aspect_ratio}, {r.solidity, m.solidity}}) {
    shift = std::max(shift, std::abs(a - b));
  }
  ok = ok && shift <= 1e-9;
  notes.push_back(format("translation %.2g", shift));

  const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 3, 4, 5, 6};
  const WelchResult self = welch_t_test(a, a);
  const WelchResult w = welch_t_test(a, b);
  ok = ok && self.t == 0.0 && self.p == 1.0 && std::abs(w.t + 1.0) <= 1e-3 &&
       std::abs(w.p - 0.34659350708733416) <= 1e-3;
  notes.push_back(format("welch self t=%.3g p=%.3g, oracle t=%.4f p=%.4f", self.t, self.p, w.t, w.p));

  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {ok, detail};
}

// -- formats -----------------------------------------------------------------

Outcome format_round_trips() {
  const auto& dir = work();
  Rng rng(31337);
  int bag_bad = 0, ckpt_bad = 0, mask_bad = 0;
  for (int i = 0; i < 200; ++i) {
    SlideBag bag = testing::random_bag(rng, 1 + static_cast<int>(rng.below(50)),
                                       1 + static_cast<int>(rng.below(40)), "B");
    const auto path = dir / "rt.bag";
    write_embedding_file(bag, path);
    const auto bytes = testing::read_bytes(path);
    const SlideBag back = read_embedding_file(path);
    write_embedding_file(back, dir / "rt2.bag");
    if (back.embeddings != bag.embeddings || back.patches != bag.patches ||
        testing::read_bytes(dir / "rt2.bag") != bytes || encode_embedding_file(bag) != bytes) {
      ++bag_bad;
    }

    ModelConfig c = testing::tiny_config(1 + static_cast<int>(rng.below(20)),
                                         1 + static_cast<int>(rng.below(16)),
                                         1 + static_cast<int>(rng.below(8)));
    if (rng.below(2)) c.classifier_mode = ClassifierMode::kShared;
    const MilParams p = init_params(c, rng.next_u64());
    write_checkpoint(p, dir / "rt.milp");
    const auto cbytes = testing::read_bytes(dir / "rt.milp");
    const MilParams q = read_checkpoint(dir / "rt.milp");
    write_checkpoint(q, dir / "rt2.milp");
    if (!(q == p) || testing::read_bytes(dir / "rt2.milp") != cbytes) ++ckpt_bad;

    LabelMask mask(1 + static_cast<int>(rng.below(64)), 1 + static_cast<int>(rng.below(64)));
    const std::uint32_t max_id = rng.below(2) ? 255 : 65535;
    for (auto& v : mask.labels) v = rng.below(3) == 0 ? 0 : static_cast<std::uint32_t>(rng.below(max_id + 1));
    write_label_mask(mask, dir / "rt.pgm");
    const auto mbytes = testing::read_bytes(dir / "rt.pgm");
    const LabelMask mback = read_label_mask(dir / "rt.pgm");
    write_label_mask(mback, dir / "rt2.pgm");
    if (!(mback == mask) || testing::read_bytes(dir / "rt2.pgm") != mbytes) ++mask_bad;
  }
  return {bag_bad == 0 && ckpt_bad == 0 && mask_bad == 0,
          format("200 each: bag %d, checkpoint %d, mask %d failures", bag_bad, ckpt_bad, mask_bad)};
}

// -- determinism -------------------------------------------------------------

Outcome determinism() {
  const auto base = work() / "signal";
  const std::string manifest = (base / "corpus" / "manifest.csv").string();
  if (!std::filesystem::exists(manifest) &&
      quiet_cli({"synth", "--out", (base / "corpus").string(), "--slides", "60", "--seed", "1"}) != 0) {
    return {false, "synth failed"};
  }
  const auto first = base / "run" / "cv_report.json";
  if (!std::filesystem::exists(first) &&
      quiet_cli({"train", "--manifest", manifest, "--out", (base / "run").string(), "--seed", "1",
                 "--quiet"}) != 0) {
    return {false, "first train failed"};
  }
  if (quiet_cli({"train", "--manifest", manifest, "--out", (base / "rerun").string(), "--seed", "1",
                 "--quiet"}) != 0) {
    return {false, "second train failed"};
  }
  const auto a = testing::read_bytes(first);
  const auto b = testing::read_bytes(base / "rerun" / "cv_report.json");
  return {a == b && !a.empty(), format("cv_report.json %zu bytes, %s", a.size(),
                                       a == b ? "identical" : "different")};
}

}  // namespace

int main() {
  report("gradient suite", gradient_suite);
  report("attention invariants", attention_invariants);
  report("AUC oracle", auc_oracle);
  report("synthetic end-to-end", end_to_end);
  report("early stopping", early_stopping);
  report("morphometry", morphometry);
  report("format round-trips", format_round_trips);
  report("determinism", determinism);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
