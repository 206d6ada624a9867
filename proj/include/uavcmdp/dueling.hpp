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

/// Shared ReLU trunk with a scalar value head and a per-action advantage head.
class DuelingNet {
 public:
  DuelingNet() = default;
  DuelingNet(int input, const std::vector<int>& trunk_hidden, int actions);

  void init(Rng& rng);

  /// Q = V + A - mean_a A, one column per sample.
  Matrix q_values(const Matrix& X) const;
  ActionValues q_values(const StateVec& s) const;

  struct Cache {
    ForwardCache trunk, value, advantage;
  };
  Matrix q_values(const Matrix& X, Cache& cache) const;

  struct Grads {
    Gradients trunk, value, advantage;
  };
  /// Parameter gradients of sum(G .* Q).
  Grads backward(const Cache& cache, const Matrix& G) const;

  void perturb(double sigma, Rng& rng);
  bool same_architecture(const DuelingNet& o) const {
    return trunk.same_architecture(o.trunk) && value.same_architecture(o.value) &&
           advantage.same_architecture(o.advantage);
  }
  bool all_finite() const { return trunk.all_finite() && value.all_finite() && advantage.all_finite(); }

  Mlp trunk, value, advantage;
};

void to_json(nlohmann::json& j, const DuelingNet& n);
void from_json(const nlohmann::json& j, DuelingNet& n);

struct RewardWeights {
  double move_penalty = 0.5;
  double failure_penalty = 1.0;
  double distance_weight = 1.0;
};

/// -(move + failure * d + w * ||q_{n+1} - q_F|| / L).
double shaped_reward(const CmdpTransition& t, const RewardWeights& w, Vec3 goal, double area_side_m);

enum class Exploration {
  EpsilonGreedy,  // linear decay over the first part of training
  WeightNoise,    // Gaussian noise on a per-episode copy of the weights
};

struct DuelingConfig {
  std::vector<int> trunk_hidden{512, 256, 128, 128};
  double alpha = 0.99;
  int n1 = 10;
  int batch_size = 32;
  std::size_t memory_capacity = 100000;
  double eta = 0.9;
  double lr = 0.01;
  int target_sync_every = 25;
  int train_every = 1;
  RewardWeights reward;
  Exploration exploration = Exploration::EpsilonGreedy;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay_fraction = 0.5;
  int schedule_episodes = 5000;
  double weight_noise_sigma = 0.1;

  void validate() const;
};

void to_json(nlohmann::json& j, const DuelingConfig& c);
void from_json(const nlohmann::json& j, DuelingConfig& c);

class DuelingAgent final : public Agent {
 public:
  DuelingAgent(DuelingConfig cfg, const Env& env, std::uint64_t seed);

  void begin_episode(Rng& rng) override;
  int act(const UavState& s, ActMode mode, Rng& rng) override;
  void observe(const CmdpTransition& t, bool learn) override;
  LearnStats end_episode() override;
  std::string kind() const override { return "dueling"; }
  nlohmann::json checkpoint() const override;
  int episodes_seen() const override { return episodes_; }

  static std::unique_ptr<DuelingAgent> from_checkpoint(const nlohmann::json& j, const Env& env);

  /// Double-Q targets on rewards: R + alpha^len Q^-(s', argmax_a Q(s', a)).
  std::vector<double> targets(const std::vector<NStepAggregate>& batch) const;
  double train_step(const std::vector<std::size_t>& indices);
  double epsilon() const;

  const DuelingConfig& config() const { return cfg_; }
  PrioritizedMemory& memory() { return memory_; }

  DuelingNet net, target;

 private:
  void adam_step(const DuelingNet::Grads& g);

  DuelingConfig cfg_;
  const Env* env_;
  PrioritizedMemory memory_;
  NStepWindow window_;
  Rng rng_;
  Adam opt_trunk_, opt_value_, opt_adv_;
  DuelingNet acting_;  // noisy copy under weight-noise exploration
  bool acting_noisy_ = false;
  int episodes_ = 0;
  long env_steps_ = 0;
  double loss_sum_ = 0.0;
  int train_steps_ = 0;
};

}  // namespace uavcmdp
