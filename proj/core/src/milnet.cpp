#include "milpath/milnet.hpp"

#include <cmath>
#include <string>

#include "milpath/error.hpp"
#include "milpath/random.hpp"

namespace milpath {

std::string_view to_string(CompressActivation a) {
  return a == CompressActivation::kRelu ? "relu" : "identity";
}

std::string_view to_string(ClassifierMode m) {
  return m == ClassifierMode::kPerClass ? "per_class" : "shared";
}

CompressActivation parse_activation(std::string_view s) {
  if (s == "relu") return CompressActivation::kRelu;
  if (s == "identity") return CompressActivation::kIdentity;
  fail(ErrorKind::kValidation, "unknown compress activation '" + std::string(s) + "'");
}

ClassifierMode parse_classifier_mode(std::string_view s) {
  if (s == "per_class") return ClassifierMode::kPerClass;
  if (s == "shared") return ClassifierMode::kShared;
  fail(ErrorKind::kValidation, "unknown classifier mode '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  require(input_dim >= 1, "input dimension must be at least 1");
  require(hidden_dim >= 1, "hidden width must be at least 1");
  require(attention_dim >= 1, "attention width must be at least 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

MilParams MilParams::zeros_like() const {
  MilParams z;
  z.config = config;
  z.w1 = Eigen::MatrixXd::Zero(w1.rows(), w1.cols());
  z.b1 = Eigen::VectorXd::Zero(b1.size());
  z.ua = Eigen::MatrixXd::Zero(ua.rows(), ua.cols());
  z.va = Eigen::MatrixXd::Zero(va.rows(), va.cols());
  z.wa = Eigen::MatrixXd::Zero(wa.rows(), wa.cols());
  z.wc = Eigen::MatrixXd::Zero(wc.rows(), wc.cols());
  z.bc = Eigen::VectorXd::Zero(bc.size());
  return z;
}

bool MilParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

std::size_t MilParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

void MilParams::check_shapes() const {
  config.validate();
  const int d = config.input_dim;
  const int hid = config.hidden_dim;
  const int att = config.attention_dim;
  auto expect = [](std::string_view name, Eigen::Index r, Eigen::Index c, Eigen::Index er,
                   Eigen::Index ec) {
    require(r == er && c == ec, "parameter " + std::string(name) + " has shape " +
                                    std::to_string(r) + "x" + std::to_string(c) + ", expected " +
                                    std::to_string(er) + "x" + std::to_string(ec));
  };
  expect("w1", w1.rows(), w1.cols(), hid, d);
  expect("b1", b1.rows(), b1.cols(), hid, 1);
  expect("ua", ua.rows(), ua.cols(), att, hid);
  expect("va", va.rows(), va.cols(), att, hid);
  expect("wa", wa.rows(), wa.cols(), kNumClasses, att);
  expect("wc", wc.rows(), wc.cols(), config.num_heads(), hid);
  expect("bc", bc.rows(), bc.cols(), kNumClasses, 1);
}

MilParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  auto uniform_fill = [&](Eigen::Index rows, Eigen::Index cols, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        m(i, j) = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
      }
    }
    return m;
  };
  MilParams p;
  p.config = config;
  p.w1 = uniform_fill(config.hidden_dim, config.input_dim, config.input_dim);
  p.b1 = Eigen::VectorXd::Zero(config.hidden_dim);
  p.ua = uniform_fill(config.attention_dim, config.hidden_dim, config.hidden_dim);
  p.va = uniform_fill(config.attention_dim, config.hidden_dim, config.hidden_dim);
  p.wa = uniform_fill(kNumClasses, config.attention_dim, config.attention_dim);
  p.wc = uniform_fill(config.num_heads(), config.hidden_dim, config.hidden_dim);
  p.bc = Eigen::VectorXd::Zero(kNumClasses);
  return p;
}

Eigen::MatrixXd to_double(const EmbeddingMatrix& embeddings) {
  return embeddings.cast<double>();
}

namespace {

Eigen::MatrixXd linear_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  // Row k of the result is W x_k.
  return x * w.transpose();
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, CompressActivation act) {
  return act == CompressActivation::kRelu ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) {
    // Split by sign so exp never overflows.
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Eigen::MatrixXd dropout_scale(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Eigen::MatrixXd keep(rows, cols);
  const double scale = 1.0 / (1.0 - p);
  // Row-major draw order so the mask for row k does not depend on N.
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) keep(i, j) = rng.uniform() < p ? 0.0 : scale;
  }
  return keep;
}

void check_embeddings(const Eigen::MatrixXd& e, const MilParams& params) {
  require(e.rows() >= 1, "bag must contain at least one instance");
  require(e.cols() == params.config.input_dim,
          "embedding width " + std::to_string(e.cols()) + " does not match model input width " +
              std::to_string(params.config.input_dim));
  require(e.allFinite(), "embeddings must be finite");
}

}  // namespace

Eigen::MatrixXd compress(const Eigen::MatrixXd& embeddings, const MilParams& params) {
  check_embeddings(embeddings, params);
  Eigen::MatrixXd z = linear_rows(embeddings, params.w1);
  z.rowwise() += params.b1.transpose();
  return activate(z, params.config.activation);
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd out(scores.rows(), scores.cols());
  for (Eigen::Index m = 0; m < scores.cols(); ++m) {
    const double top = scores.col(m).maxCoeff();
    out.col(m) = (scores.col(m).array() - top).exp().matrix();
    out.col(m) /= out.col(m).sum();
  }
  return out;
}

Eigen::MatrixXd attention_scores(const Eigen::MatrixXd& h, const MilParams& params) {
  require(h.rows() >= 1, "attention needs at least one instance");
  require(h.cols() == params.config.hidden_dim, "hidden width mismatch in attention");
  const Eigen::MatrixXd t = linear_rows(h, params.va).array().tanh().matrix();
  const Eigen::MatrixXd s = sigmoid(linear_rows(h, params.ua));
  const Eigen::MatrixXd gated = t.cwiseProduct(s);
  return softmax_columns(linear_rows(gated, params.wa));
}

Eigen::MatrixXd aggregate(const Eigen::MatrixXd& h, const Eigen::MatrixXd& attention) {
  require(h.rows() == attention.rows(), "attention rows must match instance count");
  require(attention.cols() == kNumClasses, "attention must have one column per class");
  for (Eigen::Index m = 0; m < attention.cols(); ++m) {
    require(std::abs(attention.col(m).sum() - 1.0) <= 1e-6, "attention column does not sum to 1");
  }
  return attention.transpose() * h;
}

double cross_entropy(const Eigen::Vector2d& logits, Subtype label) {
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return lse - logits(class_index(label));
}

Eigen::Vector2d softmax(const Eigen::Vector2d& logits) {
  const double top = logits.maxCoeff();
  Eigen::Vector2d e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

Classification classify(const Eigen::MatrixXd& h_slide, const MilParams& params) {
  require(h_slide.rows() == kNumClasses && h_slide.cols() == params.config.hidden_dim,
          "slide aggregate has the wrong shape");
  Classification c;
  for (int m = 0; m < kNumClasses; ++m) {
    const auto head = params.config.classifier_mode == ClassifierMode::kPerClass ? m : 0;
    c.logits(m) = params.wc.row(head).dot(h_slide.row(m)) + params.bc(m);
  }
  c.probs = softmax(c.logits);
  return c;
}

ForwardTrace forward(const Eigen::MatrixXd& embeddings, const MilParams& params, ForwardMode mode) {
  check_embeddings(embeddings, params);
  const auto& cfg = params.config;
  const Eigen::Index n = embeddings.rows();
  const bool drop = mode.train && cfg.dropout > 0.0;
  Rng rng(mode.dropout_seed);

  ForwardTrace tr;
  tr.mode = mode;
  tr.pre_activation = linear_rows(embeddings, params.w1);
  tr.pre_activation.rowwise() += params.b1.transpose();
  tr.keep_hidden = drop ? dropout_scale(n, cfg.hidden_dim, cfg.dropout, rng)
                        : Eigen::MatrixXd::Ones(n, cfg.hidden_dim);
  tr.h = activate(tr.pre_activation, cfg.activation).cwiseProduct(tr.keep_hidden);

  tr.tanh_branch = linear_rows(tr.h, params.va).array().tanh().matrix();
  tr.sigm_branch = sigmoid(linear_rows(tr.h, params.ua));
  tr.keep_gate = drop ? dropout_scale(n, cfg.attention_dim, cfg.dropout, rng)
                      : Eigen::MatrixXd::Ones(n, cfg.attention_dim);
  tr.gated = tr.tanh_branch.cwiseProduct(tr.sigm_branch).cwiseProduct(tr.keep_gate);
  tr.raw_scores = linear_rows(tr.gated, params.wa);
  tr.attention = softmax_columns(tr.raw_scores);
  tr.h_slide = tr.attention.transpose() * tr.h;

  const auto c = classify(tr.h_slide, params);
  tr.logits = c.logits;
  tr.probs = c.probs;
  return tr;
}

ForwardTrace forward(const SlideBag& bag, const MilParams& params, ForwardMode mode) {
  validate(bag);
  return forward(to_double(bag.embeddings), params, mode);
}

BackwardResult backward(const ForwardTrace& tr, const Eigen::MatrixXd& embeddings,
                        const MilParams& params, Subtype label) {
  const auto& cfg = params.config;
  const Eigen::Index n = embeddings.rows();
  require(tr.h.rows() == n && tr.h.cols() == cfg.hidden_dim &&
              tr.gated.cols() == cfg.attention_dim && tr.attention.rows() == n &&
              embeddings.cols() == cfg.input_dim,
          "forward trace does not belong to this bag and parameter set");

  const int y = class_index(label);
  BackwardResult out;
  out.loss = cross_entropy(tr.logits, label);
  MilGrads& g = out.grads;
  g = params.zeros_like();

  // Softmax + cross-entropy.
  Eigen::Vector2d d_logits = tr.probs;
  d_logits(y) -= 1.0;
  g.bc = d_logits;

  // Classifier heads.
  Eigen::MatrixXd d_slide(kNumClasses, cfg.hidden_dim);
  for (int m = 0; m < kNumClasses; ++m) {
    const auto head = cfg.classifier_mode == ClassifierMode::kPerClass ? m : 0;
    g.wc.row(head) += d_logits(m) * tr.h_slide.row(m);
    d_slide.row(m) = d_logits(m) * params.wc.row(head);
  }

  // h_slide = A^T H.
  const Eigen::MatrixXd d_attention = tr.h * d_slide.transpose();  // N × classes
  Eigen::MatrixXd d_h = tr.attention * d_slide;                    // N × hidden

  // Column softmax: dr = a ⊙ (da - <a, da>).
  Eigen::MatrixXd d_raw(n, kNumClasses);
  for (int m = 0; m < kNumClasses; ++m) {
    const double inner = tr.attention.col(m).dot(d_attention.col(m));
    d_raw.col(m) = tr.attention.col(m).cwiseProduct(
        (d_attention.col(m).array() - inner).matrix());
  }

  // raw = G Wa^T.
  g.wa.noalias() = d_raw.transpose() * tr.gated;
  const Eigen::MatrixXd d_gated = (d_raw * params.wa).cwiseProduct(tr.keep_gate);

  // G = tanh(Va h) ⊙ sigm(Ua h).
  const Eigen::MatrixXd d_tanh_pre =
      d_gated.cwiseProduct(tr.sigm_branch)
          .cwiseProduct((1.0 - tr.tanh_branch.array().square()).matrix());
  const Eigen::MatrixXd d_sigm_pre =
      d_gated.cwiseProduct(tr.tanh_branch)
          .cwiseProduct(tr.sigm_branch.cwiseProduct((1.0 - tr.sigm_branch.array()).matrix()));
  g.va.noalias() = d_tanh_pre.transpose() * tr.h;
  g.ua.noalias() = d_sigm_pre.transpose() * tr.h;
  d_h.noalias() += d_tanh_pre * params.va;
  d_h.noalias() += d_sigm_pre * params.ua;

  // h = act(W1 e + b1) ⊙ keep.
  Eigen::MatrixXd d_pre = d_h.cwiseProduct(tr.keep_hidden);
  if (cfg.activation == CompressActivation::kRelu) {
    d_pre = d_pre.cwiseProduct((tr.pre_activation.array() > 0.0).cast<double>().matrix());
  }
  g.w1.noalias() = d_pre.transpose() * embeddings;
  g.b1 = d_pre.colwise().sum().transpose();
  return out;
}

BackwardResult backward(const ForwardTrace& trace, const SlideBag& bag, const MilParams& params,
                        Subtype label) {
  return backward(trace, to_double(bag.embeddings), params, label);
}

double eval_loss(const Eigen::MatrixXd& embeddings, const MilParams& params, Subtype label) {
  return cross_entropy(forward(embeddings, params, ForwardMode::eval()).logits, label);
}

}  // namespace milpath
