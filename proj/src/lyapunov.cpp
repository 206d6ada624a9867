#include "uavcmdp/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace uavcmdp {

double q_t(int n, double alpha, int max_steps) {
  if (n < 0 || n > max_steps) throw UsageError("step index outside [0, max_steps]");
  const int terms = max_steps - n + 1;
  if (alpha == 1.0) return terms;
  return (1.0 - std::pow(alpha, terms)) / (1.0 - alpha);
}

double epsilon_hat(double budget, const Probs& pi_b, const ActionValues& q_d, double q_t_value) {
  if (!(q_t_value > 0.0)) throw UsageError("Q_T must be positive");
  double base = 0.0;
  for (int a = 0; a < kNumActions; ++a) base += pi_b[static_cast<std::size_t>(a)] * q_d[static_cast<std::size_t>(a)];
  return (budget - base) / q_t_value;
}

ActionValues q_l(const ActionValues& q_d, double eps, double q_t_value) {
  ActionValues out{};
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = q_d[a] + eps * q_t_value;
  return out;
}

Probs solve_policy_lp(const ActionValues& q_c, const ActionValues& q_l, const Probs& pi_b, double eps) {
  double bound = eps;
  for (std::size_t a = 0; a < q_l.size(); ++a) bound += pi_b[a] * q_l[a];
  const double tol = 1e-12 * std::max(1.0, std::abs(bound));

  double best = std::numeric_limits<double>::infinity();
  Probs out{};
  bool found = false;
  auto consider = [&](double obj, const Probs& p) {
    if (!found || obj < best - 1e-12 * std::max(1.0, std::abs(best))) {
      best = obj;
      out = p;
      found = true;
    }
  };
  for (std::size_t a = 0; a < q_l.size(); ++a) {
    if (q_l[a] <= bound + tol) {
      Probs p{};
      p[a] = 1.0;
      consider(q_c[a], p);
    }
  }
  // Mixtures of one action below and one above the bound, with the constraint tight.
  for (std::size_t i = 0; i < q_l.size(); ++i) {
    for (std::size_t j = i + 1; j < q_l.size(); ++j) {
      const double li = q_l[i] - bound;
      const double lj = q_l[j] - bound;
      if (!((li < 0.0 && lj > 0.0) || (li > 0.0 && lj < 0.0))) continue;
      const double w = lj / (lj - li);  // mass on i
      Probs p{};
      p[i] = w;
      p[j] = 1.0 - w;
      consider(w * q_c[i] + (1.0 - w) * q_c[j], p);
    }
  }
  return found ? out : pi_b;
}

double kl_divergence(const Probs& p, const Probs& t, double floor) {
  double kl = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a)
    if (p[a] > 0.0) kl += p[a] * (std::log(p[a]) - std::log(t[a] + floor));
  return kl;
}

Probs inverse_distance_target(const Env& env, Vec3 position) {
  Probs t{};
  double sum = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    const Vec3 next = env.move(position, static_cast<Action>(a));
    const double w = 1.0 / std::max(distance(next, env.config().goal), 1.0);
    t[static_cast<std::size_t>(a)] = w;
    sum += w;
  }
  for (auto& v : t) v /= sum;
  return t;
}

// ---------------------------------------------------------------------------

void LyapunovConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (n1 < 1 || batch_size < 1 || policy_batch_size < 1) throw ConfigError("window and batch sizes must be positive");
  if (memory_capacity < static_cast<std::size_t>(batch_size)) throw ConfigError("memory smaller than a batch");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  if (!(lr_q > 0.0) || !(lr_policy >= 0.0) || !(pretrain_lr >= 0.0)) throw ConfigError("learning rates must be positive");
  if (policy_update_every < 1 || target_sync_every < 1 || train_every < 1) throw ConfigError("intervals must be positive");
  if (policy_update_steps < 0 || pretrain_steps < 0) throw ConfigError("step counts must be non-negative");
  if (explore_decay_episodes < 1) throw ConfigError("explore_decay_episodes must be positive");
  for (const auto* layers : {&q_hidden, &policy_hidden})
    for (int h : *layers)
      if (h < 1) throw ConfigError("hidden layer sizes must be positive");
}

namespace {

std::string to_string(BehaviorPolicy b) { return b == BehaviorPolicy::Lp ? "lp" : "policy_net"; }

BehaviorPolicy behavior_from_string(const std::string& s) {
  if (s == "lp") return BehaviorPolicy::Lp;
  if (s == "policy_net") return BehaviorPolicy::PolicyNet;
  throw ConfigError("unknown behavior policy '" + s + "'");
}

Matrix states_matrix(const std::vector<NStepAggregate>& batch, bool next) {
  Matrix S(kFeatureDim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& v = next ? batch[j].s_next : batch[j].s;
    for (int k = 0; k < kFeatureDim; ++k) S(k, static_cast<Eigen::Index>(j)) = v[static_cast<std::size_t>(k)];
  }
  return S;
}

Vector state_vector(const StateVec& s) { return Eigen::Map<const Vector>(s.data(), kFeatureDim); }

template <typename Arr>
Arr column(const Matrix& M, Eigen::Index j) {
  Arr out{};
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = M(static_cast<Eigen::Index>(a), j);
  return out;
}

Probs lp_from_rows(const ActionValues& qc, const ActionValues& qd, const Probs& pi_b, int step, double budget,
                   double alpha, int max_steps) {
  const double qt = q_t(std::clamp(step, 0, max_steps), alpha, max_steps);
  const double eps = epsilon_hat(budget, pi_b, qd, qt);
  return solve_policy_lp(qc, q_l(qd, eps, qt), pi_b, eps);
}

std::vector<int> hidden_then_output(const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{kFeatureDim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

std::vector<Activation> relu_then(std::size_t hidden, Activation head) {
  std::vector<Activation> acts(hidden, Activation::ReLU);
  acts.push_back(head);
  return acts;
}

}  // namespace

void to_json(nlohmann::json& j, const LyapunovConfig& c) {
  j = nlohmann::json{{"q_hidden", c.q_hidden},
                     {"policy_hidden", c.policy_hidden},
                     {"alpha", c.alpha},
                     {"n1", c.n1},
                     {"batch_size", c.batch_size},
                     {"memory_capacity", c.memory_capacity},
                     {"eta", c.eta},
                     {"lr_q", c.lr_q},
                     {"lr_policy", c.lr_policy},
                     {"policy_update_every", c.policy_update_every},
                     {"target_sync_every", c.target_sync_every},
                     {"policy_update_steps", c.policy_update_steps},
                     {"policy_batch_size", c.policy_batch_size},
                     {"pretrain_steps", c.pretrain_steps},
                     {"pretrain_batch_size", c.pretrain_batch_size},
                     {"pretrain_lr", c.pretrain_lr},
                     {"train_every", c.train_every},
                     {"behavior", to_string(c.behavior)},
                     {"explore_start", c.explore_start},
                     {"explore_end", c.explore_end},
                     {"explore_decay_episodes", c.explore_decay_episodes},
                     {"greedy_on_lp", c.greedy_on_lp}};
}

void from_json(const nlohmann::json& j, LyapunovConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("q_hidden", c.q_hidden);
  get("policy_hidden", c.policy_hidden);
  get("alpha", c.alpha);
  get("n1", c.n1);
  get("batch_size", c.batch_size);
  get("memory_capacity", c.memory_capacity);
  get("eta", c.eta);
  get("lr_q", c.lr_q);
  get("lr_policy", c.lr_policy);
  get("policy_update_every", c.policy_update_every);
  get("target_sync_every", c.target_sync_every);
  get("policy_update_steps", c.policy_update_steps);
  get("policy_batch_size", c.policy_batch_size);
  get("pretrain_steps", c.pretrain_steps);
  get("pretrain_batch_size", c.pretrain_batch_size);
  get("pretrain_lr", c.pretrain_lr);
  get("train_every", c.train_every);
  if (j.contains("behavior")) c.behavior = behavior_from_string(j.at("behavior").get<std::string>());
  get("explore_start", c.explore_start);
  get("explore_end", c.explore_end);
  get("explore_decay_episodes", c.explore_decay_episodes);
  get("greedy_on_lp", c.greedy_on_lp);
  c.validate();
}

// ---------------------------------------------------------------------------

LyapunovAgent::LyapunovAgent(LyapunovConfig cfg, const Env& env, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      env_(&env),
      memory_(cfg_.memory_capacity),
      window_(cfg_.n1, cfg_.alpha, cfg_.eta),
      rng_(derive_seed(seed, tag_of("lyapunov_learner"))) {
  cfg_.validate();
  Rng init_rng(derive_seed(seed, tag_of("lyapunov_init")));
  q_c = Mlp(hidden_then_output(cfg_.q_hidden, kNumActions), relu_then(cfg_.q_hidden.size(), Activation::Linear));
  q_d = q_c;
  policy = Mlp(hidden_then_output(cfg_.policy_hidden, kNumActions),
               relu_then(cfg_.policy_hidden.size(), Activation::Softmax));
  q_c.init(init_rng);
  q_d.init(init_rng);
  policy.init(init_rng);
  q_c_target = q_c;
  q_d_target = q_d;
  opt_c = Adam(q_c, {cfg_.lr_q});
  opt_d = Adam(q_d, {cfg_.lr_q});
  opt_pi = Adam(policy, {cfg_.lr_policy});
  pretrain_policy(init_rng);
}

void LyapunovAgent::pretrain_policy(Rng& rng) {
  if (cfg_.pretrain_steps == 0) return;
  const auto& ec = env_->config();
  const double L = env_->area_side();
  Adam opt(policy, {cfg_.pretrain_lr});
  const int B = cfg_.pretrain_batch_size;
  Matrix S(kFeatureDim, B);
  Matrix T(kNumActions, B);
  for (int step = 0; step < cfg_.pretrain_steps; ++step) {
    for (int j = 0; j < B; ++j) {
      UavState s;
      s.position = {uniform01(rng) * L, uniform01(rng) * L, ec.altitude_m};
      s.step_index = static_cast<int>(uniform01(rng) * ec.max_steps);
      s.cum_constraint = static_cast<int>(uniform01(rng) * (ec.d_th + 1));
      const auto f = featurize(s, ec, L);
      for (int k = 0; k < kFeatureDim; ++k) S(k, j) = f[static_cast<std::size_t>(k)];
      const auto t = inverse_distance_target(*env_, s.position);
      for (int a = 0; a < kNumActions; ++a) T(a, j) = t[static_cast<std::size_t>(a)];
    }
    ForwardCache cache;
    const Matrix P = policy.forward_batch(S, cache);
    // cross-entropy towards T; gradient with respect to the logits is P - T
    const Matrix G = (P - T) / static_cast<double>(B);
    opt.step(policy, policy.backward(cache, G, nullptr, true));
  }
  if (!policy.all_finite()) throw DivergenceError("policy pre-training produced non-finite weights");
}

Probs LyapunovAgent::policy_probs(const StateVec& s) const {
  const Vector p = policy.forward(state_vector(s));
  Probs out{};
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = p(static_cast<Eigen::Index>(a));
  return out;
}

ActionValues LyapunovAgent::cost_values(const StateVec& s) const {
  const Vector q = q_c.forward(state_vector(s));
  return column<ActionValues>(q, 0);
}

ActionValues LyapunovAgent::constraint_values(const StateVec& s) const {
  const Vector q = q_d.forward(state_vector(s));
  return column<ActionValues>(q, 0);
}

Probs LyapunovAgent::lp_policy(const StateVec& s, int step_index, double budget) const {
  return lp_from_rows(cost_values(s), constraint_values(s), policy_probs(s), step_index, budget, cfg_.alpha,
                      env_->config().max_steps);
}

Probs LyapunovAgent::lp_policy(const UavState& s) const {
  const auto& ec = env_->config();
  return lp_policy(featurize(s, ec, env_->area_side()), s.step_index,
                   static_cast<double>(ec.d_th - s.cum_constraint));
}

double LyapunovAgent::explore_weight() const {
  const double frac = std::min(1.0, static_cast<double>(episodes_) / cfg_.explore_decay_episodes);
  return cfg_.explore_start + (cfg_.explore_end - cfg_.explore_start) * frac;
}

int LyapunovAgent::act(const UavState& s, ActMode mode, Rng& rng) {
  const auto f = featurize(s, env_->config(), env_->area_side());
  if (mode == ActMode::Greedy) return cfg_.greedy_on_lp ? argmax(lp_policy(s)) : argmax(policy_probs(f));
  if (cfg_.behavior == BehaviorPolicy::PolicyNet) return sample_action(policy_probs(f), rng);
  if (uniform01(rng) < explore_weight()) return sample_action(policy_probs(f), rng);
  return sample_action(lp_policy(s), rng);
}

void LyapunovAgent::observe(const CmdpTransition& t, bool learn) {
  Experience e = make_experience(t, env_->config(), env_->area_side());
  const auto qc = cost_values(e.s);
  const auto qd = constraint_values(e.s);
  double boot_c = 0.0;
  double boot_d = 0.0;
  if (!e.terminal) {
    const auto next_c = cost_values(e.s_next);
    const int a_next = argmin(next_c);
    const Vector tc = q_c_target.forward(state_vector(e.s_next));
    const Vector td = q_d_target.forward(state_vector(e.s_next));
    boot_c = cfg_.alpha * tc(a_next);
    boot_d = cfg_.alpha * td(a_next);
  }
  e.td_c = e.cost + boot_c - qc[static_cast<std::size_t>(e.action)];
  e.td_d = e.dcost + boot_d - qd[static_cast<std::size_t>(e.action)];

  if (auto agg = window_.push(e)) memory_.add(*agg);
  if (e.terminal)
    for (const auto& agg : window_.flush()) memory_.add(agg);

  ++env_steps_;
  if (learn && memory_.ready(static_cast<std::size_t>(cfg_.batch_size)) && env_steps_ % cfg_.train_every == 0) {
    const auto idx = memory_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
    const auto [lc, ld] = train_step(idx);
    loss_c_sum_ += lc;
    loss_d_sum_ += ld;
    ++train_steps_;
  }
}

LearnStats LyapunovAgent::end_episode() {
  window_.clear();
  ++episodes_;
  LearnStats st;
  st.train_steps = train_steps_;
  if (train_steps_ > 0) {
    st.loss_c = loss_c_sum_ / train_steps_;
    st.loss_d = loss_d_sum_ / train_steps_;
  }
  loss_c_sum_ = loss_d_sum_ = 0.0;
  train_steps_ = 0;
  const auto pb = static_cast<std::size_t>(cfg_.policy_batch_size);
  if (episodes_ % cfg_.policy_update_every == 0 && memory_.ready(pb) && cfg_.policy_update_steps > 0) {
    double kl = 0.0;
    for (int k = 0; k < cfg_.policy_update_steps; ++k) {
      std::vector<NStepAggregate> states;
      states.reserve(pb);
      for (std::size_t i = 0; i < pb; ++i) {
        const auto idx = static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(memory_.size()));
        states.push_back(memory_.at(std::min(idx, memory_.size() - 1)));
      }
      kl += update_policy_net(states);
    }
    last_kl_ = kl / cfg_.policy_update_steps;
    st.policy_updated = true;
  }
  st.kl = last_kl_;
  if (episodes_ % cfg_.target_sync_every == 0) {
    sync_targets();
    st.targets_synced = true;
  }
  return st;
}

void LyapunovAgent::cut_window() {
  for (const auto& agg : window_.flush()) memory_.add(agg);
}

void LyapunovAgent::sync_targets() {
  sync_target(q_c, q_c_target);
  sync_target(q_d, q_d_target);
}

TargetValues LyapunovAgent::targets(const std::vector<NStepAggregate>& batch) const {
  const Matrix S = states_matrix(batch, true);
  const Matrix qc_on = q_c.forward_batch(S);
  const Matrix qd_on = q_d.forward_batch(S);
  const Matrix qc_tg = q_c_target.forward_batch(S);
  const Matrix qd_tg = q_d_target.forward_batch(S);
  const Matrix pi_b = policy.forward_batch(S);
  const int N = env_->config().max_steps;
  TargetValues y;
  y.y_c.resize(batch.size());
  y.y_d.resize(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& b = batch[j];
    y.y_c[j] = b.c;
    y.y_d[j] = b.d;
    if (b.terminal) continue;
    const auto J = static_cast<Eigen::Index>(j);
    const Probs star = lp_from_rows(column<ActionValues>(qc_on, J), column<ActionValues>(qd_on, J),
                                    column<Probs>(pi_b, J), b.step_next, b.budget_next, cfg_.alpha, N);
    const int a_star = argmax(star);
    const double disc = std::pow(cfg_.alpha, static_cast<double>(b.length));
    y.y_c[j] += disc * qc_tg(a_star, J);
    y.y_d[j] += disc * qd_tg(a_star, J);
  }
  return y;
}

std::pair<double, double> LyapunovAgent::batch_losses(const std::vector<NStepAggregate>& batch) const {
  const auto y = targets(batch);
  const Matrix S = states_matrix(batch, false);
  const Matrix qc = q_c.forward_batch(S);
  const Matrix qd = q_d.forward_batch(S);
  double lc = 0.0, ld = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    const double dc = y.y_c[j] - qc(batch[j].action, J);
    const double dd = y.y_d[j] - qd(batch[j].action, J);
    lc += batch[j].p_c * dc * dc;
    ld += batch[j].p_d * dd * dd;
  }
  return {lc / static_cast<double>(batch.size()), ld / static_cast<double>(batch.size())};
}

std::pair<double, double> LyapunovAgent::train_step(const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw UsageError("empty training batch");
  std::vector<NStepAggregate> batch;
  batch.reserve(indices.size());
  for (auto i : indices) batch.push_back(memory_.at(i));
  const auto y = targets(batch);
  const Matrix S = states_matrix(batch, false);
  const double B = static_cast<double>(batch.size());

  auto fit = [&](Mlp& net, Adam& opt, const std::vector<double>& target, bool constraint,
                 std::vector<double>& deltas) {
    ForwardCache cache;
    const Matrix Q = net.forward_batch(S, cache);
    Matrix G = Matrix::Zero(Q.rows(), Q.cols());
    double loss = 0.0;
    deltas.resize(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto J = static_cast<Eigen::Index>(j);
      const double p = constraint ? batch[j].p_d : batch[j].p_c;
      const double delta = target[j] - Q(batch[j].action, J);
      deltas[j] = delta;
      loss += p * delta * delta;
      G(batch[j].action, J) = -2.0 * p * delta / B;
    }
    loss /= B;
    if (!std::isfinite(loss)) throw DivergenceError("non-finite value loss at episode " + std::to_string(episodes_));
    opt.step(net, net.backward(cache, G));
    return loss;
  };
  std::vector<double> dc, dd;
  const double lc = fit(q_c, opt_c, y.y_c, false, dc);
  const double ld = fit(q_d, opt_d, y.y_d, true, dd);
  for (std::size_t j = 0; j < indices.size(); ++j)
    memory_.update_priorities(indices[j], std::abs(dc[j]) + kMinPriority, std::abs(dd[j]) + kMinPriority);
  return {lc, ld};
}

double LyapunovAgent::update_policy_net(const std::vector<NStepAggregate>& states) {
  if (states.empty()) return 0.0;
  const Matrix S = states_matrix(states, false);
  const Matrix qc = q_c.forward_batch(S);
  const Matrix qd = q_d.forward_batch(S);
  ForwardCache cache;
  const Matrix P = policy.forward_batch(S, cache);
  const int N = env_->config().max_steps;
  const double B = static_cast<double>(states.size());
  Matrix G(P.rows(), P.cols());
  double kl_sum = 0.0;
  for (std::size_t j = 0; j < states.size(); ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    const Probs p = column<Probs>(P, J);
    const Probs star = lp_from_rows(column<ActionValues>(qc, J), column<ActionValues>(qd, J), p,
                                    states[j].step_index, states[j].budget_left, cfg_.alpha, N);
    const double kl = kl_divergence(p, star);
    kl_sum += kl;
    for (int a = 0; a < kNumActions; ++a) {
      const double pa = p[static_cast<std::size_t>(a)];
      const double lp = pa > 0.0 ? std::log(pa) : 0.0;
      G(a, J) = pa * (lp - std::log(star[static_cast<std::size_t>(a)] + 1e-8) - kl) / B;
    }
  }
  opt_pi.step(policy, policy.backward(cache, G, nullptr, true));
  if (!policy.all_finite()) throw DivergenceError("policy network diverged");
  return kl_sum / B;
}

nlohmann::json LyapunovAgent::checkpoint() const {
  nlohmann::json j;
  j["kind"] = kind();
  j["config"] = cfg_;
  j["episode_config"] = env_->config();
  j["area_side_m"] = env_->area_side();
  j["episodes"] = episodes_;
  j["policy"] = policy;
  j["q_c"] = q_c;
  j["q_d"] = q_d;
  j["q_c_target"] = q_c_target;
  j["q_d_target"] = q_d_target;
  return j;
}

std::unique_ptr<LyapunovAgent> LyapunovAgent::from_checkpoint(const nlohmann::json& j, const Env& env) {
  if (j.at("kind").get<std::string>() != "lyapunov") throw ConfigError("checkpoint is not a Lyapunov agent");
  if (j.at("area_side_m").get<double>() != env.area_side()) throw ConfigError("checkpoint area does not match the environment");
  const auto ec = j.at("episode_config").get<EpisodeConfig>();
  if (ec.goal.x != env.config().goal.x || ec.goal.y != env.config().goal.y)
    throw ConfigError("checkpoint goal does not match the environment");
  auto cfg = j.at("config").get<LyapunovConfig>();
  const int pretrain_steps = cfg.pretrain_steps;
  cfg.pretrain_steps = 0;
  auto agent = std::make_unique<LyapunovAgent>(cfg, env, 0);
  agent->cfg_.pretrain_steps = pretrain_steps;
  auto load = [&](const char* key, Mlp& net) {
    Mlp loaded = j.at(key).get<Mlp>();
    if (!loaded.same_architecture(net)) throw ConfigError(std::string("architecture mismatch for ") + key);
    net = std::move(loaded);
  };
  load("policy", agent->policy);
  load("q_c", agent->q_c);
  load("q_d", agent->q_d);
  load("q_c_target", agent->q_c_target);
  load("q_d_target", agent->q_d_target);
  agent->opt_c = Adam(agent->q_c, {cfg.lr_q});
  agent->opt_d = Adam(agent->q_d, {cfg.lr_q});
  agent->opt_pi = Adam(agent->policy, {cfg.lr_policy});
  agent->episodes_ = j.value("episodes", 0);
  return agent;
}

}  // namespace uavcmdp
