#pragma once

#include <array>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavcmdp/common.hpp"
#include "uavcmdp/radio.hpp"
#include "uavcmdp/scenario.hpp"

namespace uavcmdp {

enum class Action : int { Left = 0, Right = 1, Forward = 2, Back = 3 };
inline constexpr int kNumActions = 4;

std::string to_string(Action a);

enum class Outcome { Running, Goal, StepLimit, BudgetExhausted };

std::string to_string(Outcome o);
Outcome outcome_from_string(const std::string& s);

struct UavState {
  Vec3 position;
  int step_index = 0;
  int cum_constraint = 0;  // radio failures so far (running d_O)
  bool done = false;
};

struct EpisodeConfig {
  Vec3 goal{700.0, 800.0, 100.0};
  double goal_halfwidth_m = 30.0;
  int d_th = 10;
  int max_steps = 100;
  double speed_mps = 20.0;
  double dt_s = 0.5;
  double altitude_m = 100.0;
  double move_cost = 0.5;
  double distance_weight = 1.0;  // multiplies ||q - q_F|| / L
  // When false, exceeding d_th no longer ends the flight; the episode still ends
  // as BudgetExhausted when it would otherwise have reached the goal.
  bool terminate_on_budget = true;
  int max_reset_attempts = 10000;

  double step_length() const { return speed_mps * dt_s; }
  void validate(double area_side_m) const;
};

void to_json(nlohmann::json& j, const EpisodeConfig& c);
void from_json(const nlohmann::json& j, EpisodeConfig& c);

struct CmdpTransition {
  UavState state;
  Action action = Action::Left;
  double cost = 0.0;
  int constraint_cost = 0;
  UavState next_state;
  bool done = false;
  Outcome outcome = Outcome::Running;
  double sinr_db = 0.0;  // mean SINR at next_state, for logging
};

/// Source of the radio-failure bit at a position.
class FailureModel {
 public:
  virtual ~FailureModel() = default;
  virtual int failure(Vec3 p, Rng& rng) const = 0;
  virtual double mean_sinr_db(Vec3 p, Rng& rng) const = 0;
  /// Failure and SINR from a single evaluation (one Monte-Carlo batch for sampled models).
  virtual std::pair<int, double> evaluate(Vec3 p, Rng& rng) const {
    return {failure(p, rng), mean_sinr_db(p, rng)};
  }
};

/// Looks the bit up in a precomputed grid; consumes no randomness.
class MapFailureModel final : public FailureModel {
 public:
  explicit MapFailureModel(RadioMap map) : map_(std::move(map)) {}
  int failure(Vec3 p, Rng&) const override { return map_.at(p.x, p.y).failure; }
  double mean_sinr_db(Vec3 p, Rng&) const override { return map_.at(p.x, p.y).mean_sinr_db; }
  const RadioMap& map() const { return map_; }

 private:
  RadioMap map_;
};

/// Draws J fading realizations at every query.
class MonteCarloFailureModel final : public FailureModel {
 public:
  MonteCarloFailureModel(std::shared_ptr<const Scenario> scenario, BandParams band, int J);
  int failure(Vec3 p, Rng& rng) const override;
  double mean_sinr_db(Vec3 p, Rng& rng) const override;
  std::pair<int, double> evaluate(Vec3 p, Rng& rng) const override;

 private:
  std::shared_ptr<const Scenario> scenario_;
  BandParams band_;
  int J_;
};

/// Grid with a hand-drawn failure set and no radio physics behind it.
RadioMap make_failure_grid(double area_side_m, double resolution_m, double altitude_m,
                           const std::vector<int>& failure_bits);

class Env {
 public:
  Env(EpisodeConfig cfg, double area_side_m, std::shared_ptr<const FailureModel> failure);

  UavState reset(Rng& rng) const;
  /// Start at a given point without rejection; the caller vouches for it.
  UavState start_at(Vec3 p) const;
  CmdpTransition step(const UavState& state, Action action, Rng& rng) const;

  bool in_goal(Vec3 p) const;
  Vec3 move(Vec3 p, Action a) const;
  double cost_at(Vec3 next) const;

  const EpisodeConfig& config() const { return cfg_; }
  double area_side() const { return L_; }
  const FailureModel& failure_model() const { return *failure_; }

 private:
  EpisodeConfig cfg_;
  double L_;
  std::shared_ptr<const FailureModel> failure_;
};

struct EpisodeReturn {
  double total_cost = 0.0;
  int d_o = 0;
  bool success = false;
  Outcome outcome = Outcome::Running;
  int steps = 0;
};

EpisodeReturn episode_return(const std::vector<CmdpTransition>& transitions);

/// Network input: [x/L, y/L, (x_F-x)/L, (y_F-y)/L, n/N, min(d/d_th, 1)].
inline constexpr int kFeatureDim = 6;
std::array<double, kFeatureDim> featurize(const UavState& s, const EpisodeConfig& cfg, double area_side_m);

void write_trajectory_csv(const std::vector<CmdpTransition>& transitions, std::ostream& out);

}  // namespace uavcmdp
