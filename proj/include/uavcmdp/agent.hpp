#pragma once

#include <array>
#include <string>

#include <nlohmann/json.hpp>

#include "uavcmdp/common.hpp"
#include "uavcmdp/env.hpp"
#include "uavcmdp/replay.hpp"

namespace uavcmdp {

using Probs = std::array<double, kNumActions>;
using ActionValues = std::array<double, kNumActions>;

enum class ActMode { Sample, Greedy };

/// Index of the largest entry; ties go to the lowest index.
int argmax(const ActionValues& v);
int argmin(const ActionValues& v);

/// Inverse-CDF draw from a distribution.
int sample_action(const Probs& p, Rng& rng);

/// Per-episode learner diagnostics.
struct LearnStats {
  double loss_c = 0.0;
  double loss_d = 0.0;
  double kl = 0.0;
  int train_steps = 0;
  bool policy_updated = false;
  bool targets_synced = false;
};

class Agent {
 public:
  virtual ~Agent() = default;

  virtual void begin_episode(Rng& rng) { (void)rng; }
  virtual int act(const UavState& s, ActMode mode, Rng& rng) = 0;
  /// Feeds one transition to the learner. With learn = false the experience is
  /// still stored but no gradient step is taken.
  virtual void observe(const CmdpTransition& t, bool learn) = 0;
  virtual LearnStats end_episode() = 0;
  /// Emits the pending window early, e.g. before a gap in the learner's own stream.
  virtual void cut_window() {}

  virtual std::string kind() const = 0;
  virtual nlohmann::json checkpoint() const = 0;
  virtual int episodes_seen() const = 0;
};

Experience make_experience(const CmdpTransition& t, const EpisodeConfig& cfg, double area_side_m);

}  // namespace uavcmdp
