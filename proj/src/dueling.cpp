#include "uavcmdp/dueling.hpp"

#include <algorithm>
#include <cmath>

namespace uavcmdp {

DuelingNet::DuelingNet(int input, const std::vector<int>& trunk_hidden, int actions) {
  if (trunk_hidden.empty()) throw ConfigError("dueling trunk needs at least one hidden layer");
  std::vector<int> sizes{input};
  sizes.insert(sizes.end(), trunk_hidden.begin(), trunk_hidden.end());
  trunk = Mlp(sizes, std::vector<Activation>(trunk_hidden.size(), Activation::ReLU));
  value = Mlp({trunk_hidden.back(), 1}, {Activation::Linear});
  advantage = Mlp({trunk_hidden.back(), actions}, {Activation::Linear});
}

void DuelingNet::init(Rng& rng) {
  trunk.init(rng);
  value.init(rng);
  advantage.init(rng);
}

namespace {

Matrix aggregate(const Matrix& V, const Matrix& A) {
  const Eigen::RowVectorXd mean = A.colwise().mean();
  Matrix Q = A;
  Q.rowwise() -= mean;
  Q.rowwise() += V.row(0);
  return Q;
}

Matrix states_matrix(const std::vector<NStepAggregate>& batch, bool next) {
  Matrix S(kFeatureDim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& v = next ? batch[j].s_next : batch[j].s;
    for (int k = 0; k < kFeatureDim; ++k) S(k, static_cast<Eigen::Index>(j)) = v[static_cast<std::size_t>(k)];
  }
  return S;
}

}  // namespace

Matrix DuelingNet::q_values(const Matrix& X) const {
  const Matrix H = trunk.forward_batch(X);
  return aggregate(value.forward_batch(H), advantage.forward_batch(H));
}

ActionValues DuelingNet::q_values(const StateVec& s) const {
  const Matrix Q = q_values(Matrix(Eigen::Map<const Vector>(s.data(), kFeatureDim)));
  ActionValues out{};
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = Q(static_cast<Eigen::Index>(a), 0);
  return out;
}

Matrix DuelingNet::q_values(const Matrix& X, Cache& cache) const {
  const Matrix H = trunk.forward_batch(X, cache.trunk);
  return aggregate(value.forward_batch(H, cache.value), advantage.forward_batch(H, cache.advantage));
}

DuelingNet::Grads DuelingNet::backward(const Cache& cache, const Matrix& G) const {
  Grads g;
  const Matrix dV = G.colwise().sum();
  Matrix dA = G;
  dA.rowwise() -= G.colwise().mean();
  Matrix hv, ha;
  g.value = value.backward(cache.value, dV, &hv);
  g.advantage = advantage.backward(cache.advantage, dA, &ha);
  g.trunk = trunk.backward(cache.trunk, hv + ha);
  return g;
}

void DuelingNet::perturb(double sigma, Rng& rng) {
  perturb_weights(trunk, sigma, rng);
  perturb_weights(value, sigma, rng);
  perturb_weights(advantage, sigma, rng);
}

void to_json(nlohmann::json& j, const DuelingNet& n) {
  j = nlohmann::json{{"trunk", n.trunk}, {"value", n.value}, {"advantage", n.advantage}};
}

void from_json(const nlohmann::json& j, DuelingNet& n) {
  j.at("trunk").get_to(n.trunk);
  j.at("value").get_to(n.value);
  j.at("advantage").get_to(n.advantage);
}

double shaped_reward(const CmdpTransition& t, const RewardWeights& w, Vec3 goal, double L) {
  const double dist = distance(t.next_state.position, {goal.x, goal.y, t.next_state.position.z});
  return -(w.move_penalty + w.failure_penalty * t.constraint_cost + w.distance_weight * dist / L);
}

// ---------------------------------------------------------------------------

void DuelingConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (n1 < 1 || batch_size < 1) throw ConfigError("window and batch sizes must be positive");
  if (memory_capacity < static_cast<std::size_t>(batch_size)) throw ConfigError("memory smaller than a batch");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (target_sync_every < 1 || train_every < 1 || schedule_episodes < 1) throw ConfigError("intervals must be positive");
  if (!(eps_decay_fraction > 0.0)) throw ConfigError("eps_decay_fraction must be positive");
  if (!(weight_noise_sigma >= 0.0)) throw ConfigError("weight_noise_sigma must be non-negative");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  if (trunk_hidden.empty()) throw ConfigError("trunk needs at least one hidden layer");
  for (int h : trunk_hidden)
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
}

void to_json(nlohmann::json& j, const DuelingConfig& c) {
  j = nlohmann::json{{"trunk_hidden", c.trunk_hidden},
                     {"alpha", c.alpha},
                     {"n1", c.n1},
                     {"batch_size", c.batch_size},
                     {"memory_capacity", c.memory_capacity},
                     {"eta", c.eta},
                     {"lr", c.lr},
                     {"target_sync_every", c.target_sync_every},
                     {"train_every", c.train_every},
                     {"move_penalty", c.reward.move_penalty},
                     {"failure_penalty", c.reward.failure_penalty},
                     {"distance_weight", c.reward.distance_weight},
                     {"exploration", c.exploration == Exploration::WeightNoise ? "weight_noise" : "epsilon_greedy"},
                     {"eps_start", c.eps_start},
                     {"eps_end", c.eps_end},
                     {"eps_decay_fraction", c.eps_decay_fraction},
                     {"schedule_episodes", c.schedule_episodes},
                     {"weight_noise_sigma", c.weight_noise_sigma}};
}

void from_json(const nlohmann::json& j, DuelingConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("trunk_hidden", c.trunk_hidden);
  get("alpha", c.alpha);
  get("n1", c.n1);
  get("batch_size", c.batch_size);
  get("memory_capacity", c.memory_capacity);
  get("eta", c.eta);
  get("lr", c.lr);
  get("target_sync_every", c.target_sync_every);
  get("train_every", c.train_every);
  get("move_penalty", c.reward.move_penalty);
  get("failure_penalty", c.reward.failure_penalty);
  get("distance_weight", c.reward.distance_weight);
  if (j.contains("exploration")) {
    const auto e = j.at("exploration").get<std::string>();
    if (e == "weight_noise") c.exploration = Exploration::WeightNoise;
    else if (e == "epsilon_greedy") c.exploration = Exploration::EpsilonGreedy;
    else throw ConfigError("unknown exploration '" + e + "'");
  }
  get("eps_start", c.eps_start);
  get("eps_end", c.eps_end);
  get("eps_decay_fraction", c.eps_decay_fraction);
  get("schedule_episodes", c.schedule_episodes);
  get("weight_noise_sigma", c.weight_noise_sigma);
  c.validate();
}

// ---------------------------------------------------------------------------

DuelingAgent::DuelingAgent(DuelingConfig cfg, const Env& env, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      env_(&env),
      memory_(cfg_.memory_capacity),
      window_(cfg_.n1, cfg_.alpha, cfg_.eta),
      rng_(derive_seed(seed, tag_of("dueling_learner"))) {
  cfg_.validate();
  Rng init_rng(derive_seed(seed, tag_of("dueling_init")));
  net = DuelingNet(kFeatureDim, cfg_.trunk_hidden, kNumActions);
  net.init(init_rng);
  target = net;
  opt_trunk_ = Adam(net.trunk, {cfg_.lr});
  opt_value_ = Adam(net.value, {cfg_.lr});
  opt_adv_ = Adam(net.advantage, {cfg_.lr});
}

double DuelingAgent::epsilon() const {
  const double horizon = cfg_.eps_decay_fraction * cfg_.schedule_episodes;
  const double frac = std::min(1.0, episodes_ / horizon);
  return cfg_.eps_start + (cfg_.eps_end - cfg_.eps_start) * frac;
}

void DuelingAgent::begin_episode(Rng& rng) {
  acting_noisy_ = false;
  if (cfg_.exploration == Exploration::WeightNoise && cfg_.weight_noise_sigma > 0.0) {
    acting_ = net;
    acting_.perturb(cfg_.weight_noise_sigma, rng);
    acting_noisy_ = true;
  }
}

int DuelingAgent::act(const UavState& s, ActMode mode, Rng& rng) {
  const auto f = featurize(s, env_->config(), env_->area_side());
  if (mode == ActMode::Greedy) return argmax(net.q_values(f));
  if (cfg_.exploration == Exploration::EpsilonGreedy) {
    if (uniform01(rng) < epsilon()) return static_cast<int>(uniform01(rng) * kNumActions);
    return argmax(net.q_values(f));
  }
  return argmax((acting_noisy_ ? acting_ : net).q_values(f));
}

void DuelingAgent::observe(const CmdpTransition& t, bool learn) {
  Experience e = make_experience(t, env_->config(), env_->area_side());
  e.cost = shaped_reward(t, cfg_.reward, env_->config().goal, env_->area_side());
  const auto q = net.q_values(e.s);
  double boot = 0.0;
  if (!e.terminal) {
    const int a_next = argmax(net.q_values(e.s_next));
    boot = cfg_.alpha * target.q_values(e.s_next)[static_cast<std::size_t>(a_next)];
  }
  e.td_c = e.cost + boot - q[static_cast<std::size_t>(e.action)];
  e.td_d = e.td_c;

  if (auto agg = window_.push(e)) memory_.add(*agg);
  if (e.terminal)
    for (const auto& agg : window_.flush()) memory_.add(agg);

  ++env_steps_;
  if (learn && memory_.ready(static_cast<std::size_t>(cfg_.batch_size)) && env_steps_ % cfg_.train_every == 0) {
    loss_sum_ += train_step(memory_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_));
    ++train_steps_;
  }
}

LearnStats DuelingAgent::end_episode() {
  window_.clear();
  ++episodes_;
  LearnStats st;
  st.train_steps = train_steps_;
  if (train_steps_ > 0) st.loss_c = loss_sum_ / train_steps_;
  loss_sum_ = 0.0;
  train_steps_ = 0;
  if (episodes_ % cfg_.target_sync_every == 0) {
    target = net;
    st.targets_synced = true;
  }
  return st;
}

std::vector<double> DuelingAgent::targets(const std::vector<NStepAggregate>& batch) const {
  const Matrix S = states_matrix(batch, true);
  const Matrix q_on = net.q_values(S);
  const Matrix q_tg = target.q_values(S);
  std::vector<double> y(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    y[j] = batch[j].c;
    if (batch[j].terminal) continue;
    const auto J = static_cast<Eigen::Index>(j);
    Eigen::Index a_star = 0;
    q_on.col(J).maxCoeff(&a_star);
    y[j] += std::pow(cfg_.alpha, static_cast<double>(batch[j].length)) * q_tg(a_star, J);
  }
  return y;
}

void DuelingAgent::adam_step(const DuelingNet::Grads& g) {
  opt_trunk_.step(net.trunk, g.trunk);
  opt_value_.step(net.value, g.value);
  opt_adv_.step(net.advantage, g.advantage);
}

double DuelingAgent::train_step(const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw UsageError("empty training batch");
  std::vector<NStepAggregate> batch;
  batch.reserve(indices.size());
  for (auto i : indices) batch.push_back(memory_.at(i));
  const auto y = targets(batch);
  const Matrix S = states_matrix(batch, false);
  DuelingNet::Cache cache;
  const Matrix Q = net.q_values(S, cache);
  const double B = static_cast<double>(batch.size());
  Matrix G = Matrix::Zero(Q.rows(), Q.cols());
  double loss = 0.0;
  std::vector<double> deltas(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    const double p = batch[j].p_c;
    const double delta = y[j] - Q(batch[j].action, J);
    deltas[j] = delta;
    loss += p * delta * delta;
    G(batch[j].action, J) = -2.0 * p * delta / B;
  }
  loss /= B;
  if (!std::isfinite(loss)) throw DivergenceError("non-finite dueling loss at episode " + std::to_string(episodes_));
  adam_step(net.backward(cache, G));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const double p = std::abs(deltas[j]) + kMinPriority;
    memory_.update_priorities(indices[j], p, p);
  }
  return loss;
}

nlohmann::json DuelingAgent::checkpoint() const {
  nlohmann::json j;
  j["kind"] = kind();
  j["config"] = cfg_;
  j["episode_config"] = env_->config();
  j["area_side_m"] = env_->area_side();
  j["episodes"] = episodes_;
  j["net"] = net;
  j["target"] = target;
  return j;
}

std::unique_ptr<DuelingAgent> DuelingAgent::from_checkpoint(const nlohmann::json& j, const Env& env) {
  if (j.at("kind").get<std::string>() != "dueling") throw ConfigError("checkpoint is not a dueling agent");
  if (j.at("area_side_m").get<double>() != env.area_side()) throw ConfigError("checkpoint area does not match the environment");
  auto agent = std::make_unique<DuelingAgent>(j.at("config").get<DuelingConfig>(), env, 0);
  DuelingNet n = j.at("net").get<DuelingNet>();
  DuelingNet t = j.at("target").get<DuelingNet>();
  if (!n.same_architecture(agent->net) || !t.same_architecture(agent->net))
    throw ConfigError("dueling checkpoint architecture mismatch");
  agent->net = std::move(n);
  agent->target = std::move(t);
  agent->opt_trunk_ = Adam(agent->net.trunk, {agent->cfg_.lr});
  agent->opt_value_ = Adam(agent->net.value, {agent->cfg_.lr});
  agent->opt_adv_ = Adam(agent->net.advantage, {agent->cfg_.lr});
  agent->episodes_ = j.value("episodes", 0);
  return agent;
}

}  // namespace uavcmdp
