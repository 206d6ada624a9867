#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavcmdp/agent.hpp"
#include "uavcmdp/env.hpp"
#include "uavcmdp/mlp.hpp"
#include "uavcmdp/replay.hpp"

namespace uavcmdp {

/// Discounted remaining-step mass: sum_{k=0}^{N-n} alpha^k.
double q_t(int n, double alpha, int max_steps);

/// (budget - pi_B . Q_D) / Q_T. Q_T does not depend on the action, so pi_B . Q_T = Q_T.
double epsilon_hat(double budget, const Probs& pi_b, const ActionValues& q_d, double q_t_value);

ActionValues q_l(const ActionValues& q_d, double eps, double q_t_value);

/// min pi . Q_C  s.t.  (pi - pi_B) . Q_L <= eps,  pi in the simplex.
/// Exact enumeration of pure actions then action pairs on the constraint
/// boundary; the first optimum in (pure, then lexicographic pair) order wins.
/// Returns pi_B when no point is feasible.
Probs solve_policy_lp(const ActionValues& q_c, const ActionValues& q_l, const Probs& pi_b, double eps);

/// KL(p || t) with an additive floor on t.
double kl_divergence(const Probs& p, const Probs& t, double floor = 1e-8);

/// Softmax targets proportional to 1 / ||q' - q_F|| over the four moves.
Probs inverse_distance_target(const Env& env, Vec3 position);

enum class BehaviorPolicy {
  PolicyNet,  // sample the policy network
  Lp,         // sample the LP policy, with decaying mixing towards the policy network
};

struct LyapunovConfig {
  std::vector<int> q_hidden{64, 64, 32};
  std::vector<int> policy_hidden{512, 256, 128, 128, 64, 64, 32};
  double alpha = 0.99;
  int n1 = 10;
  int batch_size = 32;
  std::size_t memory_capacity = 200000;
  double eta = 0.9;
  double lr_q = 1e-4;
  double lr_policy = 1e-6;
  int policy_update_every = 5;    // episodes
  int target_sync_every = 25;     // episodes
  int policy_update_steps = 10;   // minibatches per policy update
  int policy_batch_size = 32;
  int pretrain_steps = 300;
  int pretrain_batch_size = 32;
  double pretrain_lr = 1e-3;
  int train_every = 1;            // environment steps per gradient step
  BehaviorPolicy behavior = BehaviorPolicy::PolicyNet;
  double explore_start = 1.0;     // mixing weight of the policy network under Lp behavior
  double explore_end = 0.05;
  int explore_decay_episodes = 500;
  bool greedy_on_lp = true;       // greedy actions from the LP policy rather than the policy network

  void validate() const;
};

void to_json(nlohmann::json& j, const LyapunovConfig& c);
void from_json(const nlohmann::json& j, LyapunovConfig& c);

struct TargetValues {
  std::vector<double> y_c;
  std::vector<double> y_d;
};

class LyapunovAgent final : public Agent {
 public:
  /// Builds and initializes all networks; the policy network is pre-fitted
  /// to the inverse-distance targets of env.
  LyapunovAgent(LyapunovConfig cfg, const Env& env, std::uint64_t seed);

  int act(const UavState& s, ActMode mode, Rng& rng) override;
  void observe(const CmdpTransition& t, bool learn) override;
  LearnStats end_episode() override;
  void cut_window() override;
  std::string kind() const override { return "lyapunov"; }
  nlohmann::json checkpoint() const override;
  int episodes_seen() const override { return episodes_; }

  static std::unique_ptr<LyapunovAgent> from_checkpoint(const nlohmann::json& j, const Env& env);

  Probs policy_probs(const StateVec& s) const;
  ActionValues cost_values(const StateVec& s) const;
  ActionValues constraint_values(const StateVec& s) const;
  /// LP policy pi* at a state, with pi_B from the policy network.
  Probs lp_policy(const StateVec& s, int step_index, double budget) const;
  Probs lp_policy(const UavState& s) const;

  TargetValues targets(const std::vector<NStepAggregate>& batch) const;
  /// Prioritized squared-error step on both value networks; writes back priorities.
  std::pair<double, double> train_step(const std::vector<std::size_t>& indices);
  /// Losses of train_step without updating anything.
  std::pair<double, double> batch_losses(const std::vector<NStepAggregate>& batch) const;
  /// One KL step of the policy network towards pi* on the given states.
  double update_policy_net(const std::vector<NStepAggregate>& states);
  void sync_targets();
  void pretrain_policy(Rng& rng);

  const LyapunovConfig& config() const { return cfg_; }
  const Env& env() const { return *env_; }
  PrioritizedMemory& memory() { return memory_; }
  const PrioritizedMemory& memory() const { return memory_; }
  Rng& learner_rng() { return rng_; }

  Mlp q_c, q_c_target, q_d, q_d_target, policy;
  Adam opt_c, opt_d, opt_pi;

 private:
  double explore_weight() const;

  LyapunovConfig cfg_;
  const Env* env_;
  PrioritizedMemory memory_;
  NStepWindow window_;
  Rng rng_;
  int episodes_ = 0;
  long env_steps_ = 0;
  double loss_c_sum_ = 0.0;
  double loss_d_sum_ = 0.0;
  int train_steps_ = 0;
  double last_kl_ = 0.0;
};

}  // namespace uavcmdp
