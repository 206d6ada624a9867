#include "uavcmdp/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace uavcmdp {

std::size_t KnownSpaceMemory::KeyHash::operator()(const Key& k) const noexcept {
  return static_cast<std::size_t>(
      mix64(static_cast<std::uint64_t>(k.x) ^ mix64(static_cast<std::uint64_t>(k.y) ^ mix64(static_cast<std::uint64_t>(k.z)))));
}

KnownSpaceMemory::KnownSpaceMemory(std::size_t capacity, double theta_m) : capacity_(capacity), theta_(theta_m) {
  if (!(theta_ > 0.0)) throw ConfigError("theta must be positive");
  if (capacity_ == 0) throw ConfigError("known-space capacity must be positive");
}

KnownSpaceMemory::Key KnownSpaceMemory::key_of(Vec3 p) const {
  return {static_cast<long long>(std::floor(p.x / theta_)), static_cast<long long>(std::floor(p.y / theta_)),
          static_cast<long long>(std::floor(p.z / theta_))};
}

std::optional<std::size_t> KnownSpaceMemory::nearest_within(Vec3 q) const {
  const Key k = key_of(q);
  std::optional<std::size_t> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (long long dx = -1; dx <= 1; ++dx)
    for (long long dy = -1; dy <= 1; ++dy)
      for (long long dz = -1; dz <= 1; ++dz) {
        const auto it = grid_.find({k.x + dx, k.y + dy, k.z + dz});
        if (it == grid_.end()) continue;
        for (std::size_t i : it->second) {
          const double d = distance(entries_[i].state, q);
          if (d > theta_) continue;
          if (d < best_d || (d == best_d && entries_[i].order < entries_[*best].order)) {
            best_d = d;
            best = i;
          }
        }
      }
  return best;
}

int KnownSpaceMemory::risk(Vec3 q) const { return nearest_within(q) ? 0 : 1; }

int KnownSpaceMemory::query(Vec3 q) {
  const auto i = nearest_within(q);
  if (!i) return 1;
  ++entries_[*i].uses;
  return 0;
}

std::optional<double> KnownSpaceMemory::nearest_distance(Vec3 q) const {
  if (entries_.empty()) return std::nullopt;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : entries_) best = std::min(best, distance(e.state, q));
  return best;
}

bool KnownSpaceMemory::insert(const KnownEntry& e) {
  if (risk(e.state) == 0) return false;
  if (entries_.size() >= capacity_) evict_one();
  KnownEntry copy = e;
  copy.order = next_order_++;
  entries_.push_back(copy);
  grid_[key_of(copy.state)].push_back(entries_.size() - 1);
  return true;
}

void KnownSpaceMemory::erase(std::size_t i) {
  auto drop = [&](std::size_t idx) {
    auto& bucket = grid_[key_of(entries_[idx].state)];
    bucket.erase(std::find(bucket.begin(), bucket.end(), idx));
    if (bucket.empty()) grid_.erase(key_of(entries_[idx].state));
  };
  drop(i);
  const std::size_t last = entries_.size() - 1;
  if (i != last) {
    auto& bucket = grid_[key_of(entries_[last].state)];
    *std::find(bucket.begin(), bucket.end(), last) = i;
    entries_[i] = entries_[last];
  }
  entries_.pop_back();
}

void KnownSpaceMemory::evict_one() {
  if (entries_.empty()) return;
  std::size_t victim = 0;
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = entries_[victim];
    if (a.uses < b.uses || (a.uses == b.uses && a.order < b.order)) victim = i;
  }
  erase(victim);
}

void KnownSpaceMemory::evict_to_capacity() {
  while (entries_.size() > capacity_) evict_one();
}

nlohmann::json KnownSpaceMemory::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  std::vector<const KnownEntry*> sorted;
  for (const auto& e : entries_) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->order < b->order; });
  for (const auto* e : sorted) {
    arr.push_back({{"state", {e->state.x, e->state.y, e->state.z}},
                   {"action", e->action},
                   {"cost", e->cost},
                   {"dcost", e->dcost},
                   {"next", {e->next.x, e->next.y, e->next.z}},
                   {"terminal", e->terminal},
                   {"uses", e->uses},
                   {"order", e->order}});
  }
  return {{"theta_m", theta_}, {"capacity", capacity_}, {"size", entries_.size()}, {"entries", arr}};
}

// ---------------------------------------------------------------------------

void TransferConfig::validate() const {
  if (q_bootstrap < 0 || n_teacher_trajectories < 0) throw ConfigError("bootstrap sizes must be non-negative");
  if (!(theta_m > 0.0)) throw ConfigError("theta_m must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (static_cast<std::size_t>(q_bootstrap) >= capacity) throw ConfigError("q_bootstrap must be below the capacity");
}

void to_json(nlohmann::json& j, const TransferConfig& c) {
  j = nlohmann::json{{"q_bootstrap", c.q_bootstrap},
                     {"n_teacher_trajectories", c.n_teacher_trajectories},
                     {"theta_m", c.theta_m},
                     {"noise_sigma", c.noise_sigma},
                     {"capacity", c.capacity},
                     {"transfer_value_nets", c.transfer_value_nets},
                     {"learn_from_advice", c.learn_from_advice},
                     {"teacher_checkpoint", c.teacher_checkpoint}};
}

void from_json(const nlohmann::json& j, TransferConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("q_bootstrap", c.q_bootstrap);
  get("n_teacher_trajectories", c.n_teacher_trajectories);
  get("theta_m", c.theta_m);
  get("noise_sigma", c.noise_sigma);
  get("capacity", c.capacity);
  get("transfer_value_nets", c.transfer_value_nets);
  get("learn_from_advice", c.learn_from_advice);
  get("teacher_checkpoint", c.teacher_checkpoint);
  c.validate();
}

KnownEntry known_entry_from(const CmdpTransition& t) {
  KnownEntry e;
  e.state = t.state.position;
  e.action = static_cast<int>(t.action);
  e.cost = t.cost;
  e.dcost = t.constraint_cost;
  e.next = t.next_state.position;
  e.terminal = t.done;
  return e;
}

KnownSpaceMemory build_known_space(LyapunovAgent& teacher, const Env& env, const TransferConfig& cfg, Rng& rng,
                                   BootstrapLog* log) {
  KnownSpaceMemory mem(cfg.capacity, cfg.theta_m);
  int interactions = 0;
  int trajectories = 0;
  while (interactions < cfg.q_bootstrap && trajectories < cfg.n_teacher_trajectories) {
    UavState s = env.reset(rng);
    ++trajectories;
    while (!s.done && interactions < cfg.q_bootstrap) {
      const auto a = static_cast<Action>(teacher.act(s, ActMode::Greedy, rng));
      const auto t = env.step(s, a, rng);
      ++interactions;
      mem.insert(known_entry_from(t));
      s = t.next_state;
    }
  }
  if (log) *log = {interactions, trajectories, mem.size()};
  return mem;
}

void transfer_weights(const LyapunovAgent& teacher, LyapunovAgent& student, double sigma, Rng& rng,
                      bool value_nets) {
  auto copy = [&](const Mlp& from, Mlp& to) {
    if (!from.same_architecture(to)) throw ConfigError("teacher and student architectures differ");
    to = from;
    perturb_weights(to, sigma, rng);
  };
  copy(teacher.policy, student.policy);
  if (value_nets) {
    copy(teacher.q_c, student.q_c);
    copy(teacher.q_d, student.q_d);
    student.sync_targets();
  }
  student.opt_c = Adam(student.q_c, student.opt_c.config());
  student.opt_d = Adam(student.q_d, student.opt_d.config());
  student.opt_pi = Adam(student.policy, student.opt_pi.config());
}

void TeacherAdvisor::record(const CmdpTransition& t) { known_->insert(known_entry_from(t)); }

}  // namespace uavcmdp
