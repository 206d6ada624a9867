#include "uavcmdp/mlp.hpp"

#include <cmath>

namespace uavcmdp {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Linear: return "linear";
    case Activation::Softmax: return "softmax";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "linear") return Activation::Linear;
  if (s == "softmax") return Activation::Softmax;
  throw ConfigError("unknown activation '" + s + "'");
}

void Gradients::scale(double s) {
  for (auto& w : dW) w *= s;
  for (auto& b : db) b *= s;
}

void Gradients::add(const Gradients& o) {
  for (std::size_t k = 0; k < dW.size(); ++k) {
    dW[k] += o.dW[k];
    db[k] += o.db[k];
  }
}

Mlp::Mlp(std::vector<int> sizes, std::vector<Activation> activations)
    : sizes_(std::move(sizes)), acts_(std::move(activations)) {
  if (sizes_.size() < 2) throw UsageError("an MLP needs input and output sizes");
  if (acts_.size() != sizes_.size() - 1) throw UsageError("one activation per layer required");
  for (int s : sizes_)
    if (s < 1) throw UsageError("layer sizes must be positive");
  for (std::size_t k = 0; k + 1 < acts_.size(); ++k)
    if (acts_[k] == Activation::Softmax) throw UsageError("softmax is only allowed on the output layer");
  for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
    W_.push_back(Matrix::Zero(sizes_[k + 1], sizes_[k]));
    b_.push_back(Vector::Zero(sizes_[k + 1]));
  }
}

void Mlp::init(Rng& rng) {
  for (std::size_t k = 0; k < W_.size(); ++k) {
    const double fan_in = sizes_[k];
    const double fan_out = sizes_[k + 1];
    const double limit =
        acts_[k] == Activation::ReLU ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
    auto& W = W_[k];
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = (2.0 * uniform01(rng) - 1.0) * limit;
    b_[k].setZero();
  }
}

Matrix softmax_columns(const Matrix& Z) {
  Matrix P(Z.rows(), Z.cols());
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    const double m = Z.col(c).maxCoeff();
    P.col(c) = (Z.col(c).array() - m).exp();
    P.col(c) /= P.col(c).sum();
  }
  return P;
}

namespace {

void apply_activation(Matrix& Z, Activation act) {
  switch (act) {
    case Activation::ReLU: Z = Z.cwiseMax(0.0); break;
    case Activation::Linear: break;
    case Activation::Softmax: Z = softmax_columns(Z); break;
  }
}

}  // namespace

Vector Mlp::forward(const Vector& x) const {
  if (x.size() != sizes_.front()) throw UsageError("input size mismatch");
  Matrix a = x;
  for (std::size_t k = 0; k < W_.size(); ++k) {
    Matrix z = W_[k] * a;
    z.colwise() += b_[k];
    apply_activation(z, acts_[k]);
    a = std::move(z);
  }
  return a.col(0);
}

Matrix Mlp::forward_batch(const Matrix& X) const {
  if (X.rows() != sizes_.front()) throw UsageError("input size mismatch");
  Matrix a = X;
  for (std::size_t k = 0; k < W_.size(); ++k) {
    Matrix z = W_[k] * a;
    z.colwise() += b_[k];
    apply_activation(z, acts_[k]);
    a = std::move(z);
  }
  return a;
}

Matrix Mlp::forward_batch(const Matrix& X, ForwardCache& cache) const {
  if (X.rows() != sizes_.front()) throw UsageError("input size mismatch");
  cache.a.resize(W_.size() + 1);
  cache.a[0] = X;
  for (std::size_t k = 0; k < W_.size(); ++k) {
    Matrix z = W_[k] * cache.a[k];
    z.colwise() += b_[k];
    apply_activation(z, acts_[k]);
    cache.a[k + 1] = std::move(z);
  }
  return cache.a.back();
}

Gradients Mlp::backward(const ForwardCache& cache, const Matrix& G, Matrix* input_grad, bool wrt_logits) const {
  if (cache.a.size() != W_.size() + 1) throw UsageError("backward needs a cached forward pass");
  const Matrix& out = cache.a.back();
  if (G.rows() != out.rows() || G.cols() != out.cols()) throw UsageError("upstream gradient shape mismatch");
  Gradients g;
  g.dW.resize(W_.size());
  g.db.resize(W_.size());
  Matrix delta = G;
  for (std::size_t kk = W_.size(); kk-- > 0;) {
    const Matrix& a_out = cache.a[kk + 1];
    switch (acts_[kk]) {
      case Activation::ReLU: delta = (a_out.array() > 0.0).select(delta, 0.0); break;
      case Activation::Linear: break;
      case Activation::Softmax: {
        if (wrt_logits && kk + 1 == W_.size()) break;
        // J^T g = p .* (g - p.g) per column
        const Eigen::RowVectorXd dot = (a_out.array() * delta.array()).colwise().sum();
        delta = a_out.array() * (delta.rowwise() - dot).array();
        break;
      }
    }
    g.dW[kk].noalias() = delta * cache.a[kk].transpose();
    g.db[kk] = delta.rowwise().sum();
    if (kk > 0 || input_grad) {
      Matrix prev = W_[kk].transpose() * delta;
      if (kk == 0) *input_grad = std::move(prev);
      else delta = std::move(prev);
    }
  }
  return g;
}

Gradients Mlp::zero_gradients() const {
  Gradients g;
  for (std::size_t k = 0; k < W_.size(); ++k) {
    g.dW.push_back(Matrix::Zero(W_[k].rows(), W_[k].cols()));
    g.db.push_back(Vector::Zero(b_[k].size()));
  }
  return g;
}

std::size_t Mlp::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < W_.size(); ++k) n += static_cast<std::size_t>(W_[k].size() + b_[k].size());
  return n;
}

bool Mlp::all_finite() const {
  for (std::size_t k = 0; k < W_.size(); ++k)
    if (!W_[k].allFinite() || !b_[k].allFinite()) return false;
  return true;
}

std::vector<double> Mlp::flat_parameters() const {
  std::vector<double> p;
  p.reserve(num_parameters());
  for (std::size_t k = 0; k < W_.size(); ++k) {
    for (Eigen::Index r = 0; r < W_[k].rows(); ++r)
      for (Eigen::Index c = 0; c < W_[k].cols(); ++c) p.push_back(W_[k](r, c));
    for (Eigen::Index r = 0; r < b_[k].size(); ++r) p.push_back(b_[k](r));
  }
  return p;
}

void Mlp::set_flat_parameters(const std::vector<double>& p) {
  if (p.size() != num_parameters()) throw UsageError("parameter count mismatch");
  std::size_t i = 0;
  for (std::size_t k = 0; k < W_.size(); ++k) {
    for (Eigen::Index r = 0; r < W_[k].rows(); ++r)
      for (Eigen::Index c = 0; c < W_[k].cols(); ++c) W_[k](r, c) = p[i++];
    for (Eigen::Index r = 0; r < b_[k].size(); ++r) b_[k](r) = p[i++];
  }
}

// ---------------------------------------------------------------------------

Adam::Adam(const Mlp& net, AdamConfig cfg) : cfg_(cfg) {
  for (std::size_t k = 0; k < net.weights().size(); ++k) {
    mW_.push_back(Matrix::Zero(net.weights()[k].rows(), net.weights()[k].cols()));
    vW_.push_back(mW_.back());
    mb_.push_back(Vector::Zero(net.biases()[k].size()));
    vb_.push_back(mb_.back());
  }
}

void Adam::step(Mlp& net, const Gradients& g) {
  if (g.dW.size() != mW_.size()) throw UsageError("gradient does not match optimizer state");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    if (grad.rows() != param.rows() || grad.cols() != param.cols()) throw UsageError("gradient shape mismatch");
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    param.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  };
  for (std::size_t k = 0; k < mW_.size(); ++k) {
    update(net.weights()[k], mW_[k], vW_[k], g.dW[k]);
    update(net.biases()[k], mb_[k], vb_[k], g.db[k]);
  }
}

void sync_target(const Mlp& online, Mlp& target) {
  if (!online.same_architecture(target)) throw UsageError("target architecture differs from online network");
  target = online;
}

void perturb_weights(Mlp& net, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw UsageError("sigma must be non-negative");
  if (sigma == 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (std::size_t k = 0; k < net.weights().size(); ++k) {
    auto& W = net.weights()[k];
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) += n(rng);
    auto& b = net.biases()[k];
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) += n(rng);
  }
}

void to_json(nlohmann::json& j, const Mlp& net) {
  std::vector<std::string> acts;
  for (auto a : net.activations()) acts.push_back(to_string(a));
  nlohmann::json W = nlohmann::json::array();
  nlohmann::json b = nlohmann::json::array();
  for (std::size_t k = 0; k < net.weights().size(); ++k) {
    const auto& m = net.weights()[k];
    std::vector<double> row_major;
    row_major.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) row_major.push_back(m(r, c));
    W.push_back(row_major);
    b.push_back(std::vector<double>(net.biases()[k].data(), net.biases()[k].data() + net.biases()[k].size()));
  }
  j = nlohmann::json{{"layer_sizes", net.sizes()}, {"activations", acts}, {"weights", W}, {"biases", b}};
}

void from_json(const nlohmann::json& j, Mlp& net) {
  std::vector<Activation> acts;
  for (const auto& s : j.at("activations")) acts.push_back(activation_from_string(s.get<std::string>()));
  net = Mlp(j.at("layer_sizes").get<std::vector<int>>(), acts);
  const auto& W = j.at("weights");
  const auto& b = j.at("biases");
  if (W.size() != net.weights().size() || b.size() != net.biases().size())
    throw ConfigError("checkpoint layer count mismatch");
  for (std::size_t k = 0; k < net.weights().size(); ++k) {
    auto& m = net.weights()[k];
    const auto vals = W[k].get<std::vector<double>>();
    if (vals.size() != static_cast<std::size_t>(m.size())) throw ConfigError("checkpoint weight shape mismatch");
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = vals[i++];
    const auto bv = b[k].get<std::vector<double>>();
    if (bv.size() != static_cast<std::size_t>(net.biases()[k].size())) throw ConfigError("checkpoint bias shape mismatch");
    for (std::size_t r = 0; r < bv.size(); ++r) net.biases()[k](static_cast<Eigen::Index>(r)) = bv[r];
  }
}

}  // namespace uavcmdp
