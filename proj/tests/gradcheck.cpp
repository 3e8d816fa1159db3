#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "support.hpp"

namespace testing {

using namespace milpath;

GradCheck check_gradients(std::uint64_t seed, int n, const ModelConfig& config, double eps) {
  Rng rng(seed);
  GradCheck result;
  MilParams params;
  Eigen::MatrixXd e;
  ForwardMode mode;
  ForwardTrace trace;
  while (true) {
    params = random_params(rng, config, 0.6);
    e = random_matrix(rng, n, config.input_dim);
    mode = ForwardMode::training(rng.next_u64());
    trace = forward(e, params, mode);
    // A perturbation may not cross a relu kink.
    if (config.activation == CompressActivation::kIdentity ||
        trace.pre_activation.cwiseAbs().minCoeff() > 1e-3) {
      break;
    }
    ++result.redraws;
  }
  const Subtype label = rng.below(2) == 0 ? Subtype::kAbc : Subtype::kGcb;
  const BackwardResult analytic = backward(trace, e, params, label);

  auto loss = [&](const MilParams& p) { return cross_entropy(forward(e, p, mode).logits, label); };

  MilParams probe = params;
  MilGrads numeric = params.zeros_like();
  probe.for_each_tensor([&](std::string_view name, auto& tensor) {
    auto* num = [&]() -> double* {
      double* out = nullptr;
      numeric.for_each_tensor([&](std::string_view other, auto& t) {
        if (other == name) out = t.data();
      });
      return out;
    }();
    for (Eigen::Index i = 0; i < tensor.size(); ++i) {
      const double saved = tensor.data()[i];
      tensor.data()[i] = saved + eps;
      const double up = loss(probe);
      tensor.data()[i] = saved - eps;
      const double down = loss(probe);
      tensor.data()[i] = saved;
      num[i] = (up - down) / (2.0 * eps);
    }
  });

  const MilGrads& a = analytic.grads;
  auto compare = [&](std::string_view name, const auto& an, const auto& nu) {
    const double diff = (an - nu).norm();
    const double scale = std::max(an.norm() + nu.norm(), 1e-6);
    const double rel = diff / scale;
    if (rel > result.max_rel_error || result.worst_tensor.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, rel);
      if (rel >= result.max_rel_error) result.worst_tensor = std::string(name);
    }
  };
  compare("w1", a.w1, numeric.w1);
  compare("b1", a.b1, numeric.b1);
  compare("ua", a.ua, numeric.ua);
  compare("va", a.va, numeric.va);
  compare("wa", a.wa, numeric.wa);
  compare("wc", a.wc, numeric.wc);
  compare("bc", a.bc, numeric.bc);
  return result;
}

}  // namespace testing
