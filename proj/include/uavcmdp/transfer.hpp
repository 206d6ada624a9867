#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavcmdp/common.hpp"
#include "uavcmdp/env.hpp"
#include "uavcmdp/lyapunov.hpp"

namespace uavcmdp {

struct KnownEntry {
  Vec3 state;
  int action = 0;
  double cost = 0.0;
  int dcost = 0;
  Vec3 next;
  bool terminal = false;
  long uses = 0;          // times served as nearest neighbour within theta
  std::uint64_t order = 0;  // insertion sequence number
};

/// Bounded store of teacher-visited states, indexed by a uniform grid of cell size theta.
class KnownSpaceMemory {
 public:
  KnownSpaceMemory(std::size_t capacity, double theta_m);

  /// 0 iff some stored state lies within theta (inclusive); 1 otherwise, including when empty.
  int risk(Vec3 q) const;
  /// risk(), and credits one use to the nearest stored state when it is known.
  int query(Vec3 q);
  /// Stores the entry when its state is unknown. Evicts first when full.
  bool insert(const KnownEntry& e);
  /// Drops least-frequently-used entries (oldest first among ties) down to capacity.
  void evict_to_capacity();

  std::optional<double> nearest_distance(Vec3 q) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  double theta() const { return theta_; }
  const std::vector<KnownEntry>& entries() const { return entries_; }

  nlohmann::json to_json() const;

 private:
  struct Key {
    long long x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  Key key_of(Vec3 p) const;
  /// Index of the nearest entry within theta, lowest insertion order on ties.
  std::optional<std::size_t> nearest_within(Vec3 q) const;
  void erase(std::size_t i);
  void evict_one();

  std::size_t capacity_;
  double theta_;
  std::vector<KnownEntry> entries_;
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> grid_;
  std::uint64_t next_order_ = 0;
};

struct TransferConfig {
  int q_bootstrap = 9000;
  int n_teacher_trajectories = 250;
  double theta_m = 20.0;
  double noise_sigma = 0.1;
  std::size_t capacity = 200000;
  bool transfer_value_nets = true;  // also transfer Q_C and Q_D, not only the policy
  bool learn_from_advice = true;    // advised transitions still enter the learner's replay
  std::string teacher_checkpoint;

  void validate() const;
};

void to_json(nlohmann::json& j, const TransferConfig& c);
void from_json(const nlohmann::json& j, TransferConfig& c);

struct BootstrapLog {
  int interactions = 0;
  int trajectories = 0;
  std::size_t memory_size = 0;
};

/// Runs the greedy teacher in the new domain and keeps the unknown states it visits.
KnownSpaceMemory build_known_space(LyapunovAgent& teacher, const Env& env, const TransferConfig& cfg, Rng& rng,
                                   BootstrapLog* log = nullptr);

/// Copies the teacher's networks into the student and perturbs them with N(0, sigma^2).
void transfer_weights(const LyapunovAgent& teacher, LyapunovAgent& student, double sigma, Rng& rng,
                      bool value_nets = true);

/// Per-step advice: unknown states are handled by the teacher and added to the known space.
class TeacherAdvisor {
 public:
  TeacherAdvisor(LyapunovAgent& teacher, KnownSpaceMemory& known, bool learn_from_advice)
      : teacher_(&teacher), known_(&known), learn_from_advice_(learn_from_advice) {}

  /// True when the teacher should act in s (and records the lookup).
  bool should_advise(const UavState& s) { return known_->query(s.position) == 1; }
  int advise(const UavState& s, Rng& rng) { return teacher_->act(s, ActMode::Greedy, rng); }
  void record(const CmdpTransition& t);
  void end_episode() { known_->evict_to_capacity(); }
  bool learn_from_advice() const { return learn_from_advice_; }
  const KnownSpaceMemory& known() const { return *known_; }

 private:
  LyapunovAgent* teacher_;
  KnownSpaceMemory* known_;
  bool learn_from_advice_;
};

KnownEntry known_entry_from(const CmdpTransition& t);

}  // namespace uavcmdp
