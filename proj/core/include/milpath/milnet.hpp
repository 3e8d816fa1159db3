#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include <Eigen/Core>

#include "milpath/datamodel.hpp"

namespace milpath {

enum class CompressActivation { kRelu, kIdentity };
/// kPerClass: head m scores aggregate m. kShared: one head scores both.
enum class ClassifierMode { kPerClass, kShared };

std::string_view to_string(CompressActivation a);
std::string_view to_string(ClassifierMode m);
CompressActivation parse_activation(std::string_view s);
ClassifierMode parse_classifier_mode(std::string_view s);

struct ModelConfig {
  int input_dim = 1024;
  int hidden_dim = 512;
  int attention_dim = 256;
  double dropout = 0.1;
  CompressActivation activation = CompressActivation::kRelu;
  ClassifierMode classifier_mode = ClassifierMode::kPerClass;

  int num_heads() const { return classifier_mode == ClassifierMode::kPerClass ? kNumClasses : 1; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// All trainable tensors. Gradients and optimizer moments reuse this type.
struct MilParams {
  ModelConfig config;
  Eigen::MatrixXd w1;  // hidden × D, compression
  Eigen::VectorXd b1;  // hidden
  Eigen::MatrixXd ua;  // attention × hidden, sigmoid gate
  Eigen::MatrixXd va;  // attention × hidden, tanh branch
  Eigen::MatrixXd wa;  // classes × attention, one scoring row per branch
  Eigen::MatrixXd wc;  // heads × hidden
  Eigen::VectorXd bc;  // classes

  /// Visits tensors in checkpoint declaration order.
  template <class F>
  void for_each_tensor(F&& f) {
    f("w1", w1); f("b1", b1); f("ua", ua); f("va", va); f("wa", wa); f("wc", wc); f("bc", bc);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f("w1", w1); f("b1", b1); f("ua", ua); f("va", va); f("wa", wa); f("wc", wc); f("bc", bc);
  }

  /// Same config and shapes, all entries zero.
  MilParams zeros_like() const;
  bool all_finite() const;
  std::size_t parameter_count() const;
  /// Throws unless every tensor has the shape implied by config.
  void check_shapes() const;

  friend bool operator==(const MilParams&, const MilParams&) = default;
};

using MilGrads = MilParams;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases. Draws are
/// rounded to float32 so a fresh model survives a checkpoint round trip exactly.
MilParams init_params(const ModelConfig& config, std::uint64_t seed);

struct ForwardMode {
  bool train = false;
  std::uint64_t dropout_seed = 0;

  static ForwardMode eval() { return {}; }
  static ForwardMode training(std::uint64_t seed) { return {true, seed}; }
};

/// Everything backward() needs, plus the quantities of interest (attention,
/// slide aggregates, probabilities).
struct ForwardTrace {
  ForwardMode mode;
  Eigen::MatrixXd pre_activation;  // N × hidden, before activation
  Eigen::MatrixXd keep_hidden;     // N × hidden dropout scale (0 or 1/(1-p)); ones in eval
  Eigen::MatrixXd h;               // N × hidden, rows h_k as consumed downstream
  Eigen::MatrixXd tanh_branch;     // N × attention
  Eigen::MatrixXd sigm_branch;     // N × attention
  Eigen::MatrixXd keep_gate;       // N × attention dropout scale
  Eigen::MatrixXd gated;           // N × attention, after dropout
  Eigen::MatrixXd raw_scores;      // N × classes, pre-softmax
  Eigen::MatrixXd attention;       // N × classes, column m = a_{·,m}
  Eigen::MatrixXd h_slide;         // classes × hidden
  Eigen::Vector2d logits;
  Eigen::Vector2d probs;

  Eigen::Index instances() const { return h.rows(); }
};

/// relu(W1 e_k + b1) per row (or identity activation, per config).
Eigen::MatrixXd compress(const Eigen::MatrixXd& embeddings, const MilParams& params);

/// Column m is the softmax over patches of W_{a,m}(tanh(Va h) ⊙ sigm(Ua h)).
Eigen::MatrixXd attention_scores(const Eigen::MatrixXd& h, const MilParams& params);

/// Column-wise softmax with max subtraction.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& scores);

/// Row m = sum_k a_{k,m} h_k.
Eigen::MatrixXd aggregate(const Eigen::MatrixXd& h, const Eigen::MatrixXd& attention);

struct Classification {
  Eigen::Vector2d logits;
  Eigen::Vector2d probs;
};

Classification classify(const Eigen::MatrixXd& h_slide, const MilParams& params);

Eigen::Vector2d softmax(const Eigen::Vector2d& logits);
/// -log softmax(logits)[label], evaluated via log-sum-exp.
double cross_entropy(const Eigen::Vector2d& logits, Subtype label);

ForwardTrace forward(const Eigen::MatrixXd& embeddings, const MilParams& params, ForwardMode mode);
ForwardTrace forward(const SlideBag& bag, const MilParams& params, ForwardMode mode);

struct BackwardResult {
  double loss = 0.0;
  MilGrads grads;
};

/// Cross-entropy -log p[label] and its exact gradient through the traced
/// computation, dropout masks included.
BackwardResult backward(const ForwardTrace& trace, const Eigen::MatrixXd& embeddings,
                        const MilParams& params, Subtype label);
BackwardResult backward(const ForwardTrace& trace, const SlideBag& bag, const MilParams& params,
                        Subtype label);

/// Convenience: eval-mode cross-entropy.
double eval_loss(const Eigen::MatrixXd& embeddings, const MilParams& params, Subtype label);

Eigen::MatrixXd to_double(const EmbeddingMatrix& embeddings);

}  // namespace milpath
