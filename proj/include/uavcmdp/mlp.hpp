#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "uavcmdp/common.hpp"

namespace uavcmdp {

enum class Activation { ReLU, Linear, Softmax };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

/// Per-layer parameter gradients, shaped like the network.
struct Gradients {
  std::vector<Matrix> dW;
  std::vector<Vector> db;

  void scale(double s);
  void add(const Gradients& other);
};

/// Activations of every layer for one forward pass over a batch (one column per sample).
struct ForwardCache {
  std::vector<Matrix> a;  // a[0] is the input, a[k] the output of layer k
};

class Mlp {
 public:
  Mlp() = default;
  /// sizes = {input, hidden..., output}; one activation per affine layer.
  Mlp(std::vector<int> sizes, std::vector<Activation> activations);

  /// He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero biases.
  void init(Rng& rng);

  Vector forward(const Vector& x) const;
  Matrix forward_batch(const Matrix& X) const;
  Matrix forward_batch(const Matrix& X, ForwardCache& cache) const;

  /// Gradients of sum(G .* output) with respect to every parameter. G has the
  /// output's shape. For a Softmax head G is taken with respect to the probabilities,
  /// or with respect to the logits when wrt_logits is set.
  /// When input_grad is non-null it receives the gradient with respect to the input.
  Gradients backward(const ForwardCache& cache, const Matrix& G, Matrix* input_grad = nullptr,
                     bool wrt_logits = false) const;

  Gradients zero_gradients() const;

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(W_.size()); }
  std::size_t num_parameters() const;
  const std::vector<int>& sizes() const { return sizes_; }
  const std::vector<Activation>& activations() const { return acts_; }

  std::vector<Matrix>& weights() { return W_; }
  std::vector<Vector>& biases() { return b_; }
  const std::vector<Matrix>& weights() const { return W_; }
  const std::vector<Vector>& biases() const { return b_; }

  bool same_architecture(const Mlp& other) const { return sizes_ == other.sizes_ && acts_ == other.acts_; }
  bool all_finite() const;

  /// Parameters flattened layer by layer: W row-major then b.
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(const std::vector<double>& p);

 private:
  std::vector<int> sizes_;
  std::vector<Activation> acts_;
  std::vector<Matrix> W_;  // W_[k] is sizes_[k+1] x sizes_[k]
  std::vector<Vector> b_;
};

/// Column-wise softmax with max subtraction.
Matrix softmax_columns(const Matrix& Z);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, AdamConfig cfg);

  /// Bias-corrected update, descending the gradient.
  void step(Mlp& net, const Gradients& g);

  const AdamConfig& config() const { return cfg_; }
  long timestep() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> mW_, vW_;
  std::vector<Vector> mb_, vb_;
};

/// target <- online, bitwise. Throws UsageError on architecture mismatch.
void sync_target(const Mlp& online, Mlp& target);

/// Adds an independent N(0, sigma^2) draw to every weight and bias.
void perturb_weights(Mlp& net, double sigma, Rng& rng);

void to_json(nlohmann::json& j, const Mlp& net);
void from_json(const nlohmann::json& j, Mlp& net);

}  // namespace uavcmdp
