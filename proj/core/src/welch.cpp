#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>

#include "milpath/error.hpp"
#include "milpath/morpho.hpp"

namespace milpath {

namespace {

struct Moments {
  double n = 0;
  double mean = 0;
  double var = 0;  // unbiased
};

Moments moments(std::span<const double> x) {
  Moments m;
  m.n = static_cast<double>(x.size());
  m.mean = std::accumulate(x.begin(), x.end(), 0.0) / m.n;
  double ss = 0.0;
  for (double v : x) ss += (v - m.mean) * (v - m.mean);
  m.var = ss / (m.n - 1.0);
  return m;
}

}  // namespace

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    fail(ErrorKind::kUndefined, "Welch test needs at least two observations per sample");
  }
  for (const auto* s : {&a, &b}) {
    for (double v : *s) require(std::isfinite(v), "Welch test samples must be finite");
  }
  const Moments ma = moments(a);
  const Moments mb = moments(b);
  const double sa = ma.var / ma.n;
  const double sb = mb.var / mb.n;
  const double se2 = sa + sb;
  if (!(se2 > 0.0)) fail(ErrorKind::kUndefined, "Welch test undefined: both samples are constant");

  WelchResult r;
  r.t = (ma.mean - mb.mean) / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / (ma.n - 1.0) + sb * sb / (mb.n - 1.0));
  // Two-sided tail of Student's t: I_{df/(df+t^2)}(df/2, 1/2).
  const double x = r.df / (r.df + r.t * r.t);
  r.p = x >= 1.0 ? 1.0 : boost::math::ibeta(0.5 * r.df, 0.5, x);
  r.p = std::clamp(r.p, 0.0, 1.0);
  return r;
}

}  // namespace milpath
