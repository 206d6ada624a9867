#pragma once

#include <array>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "uavcmdp/common.hpp"
#include "uavcmdp/env.hpp"

namespace uavcmdp {

using StateVec = std::array<double, kFeatureDim>;

/// One environment step as seen by a learner.
struct Experience {
  StateVec s{};
  int action = 0;
  double cost = 0.0;
  double dcost = 0.0;
  StateVec s_next{};
  bool terminal = false;
  int step_index = 0;         // n at s
  double budget_left = 0.0;   // d_th minus failures so far, at s
  int step_next = 0;
  double budget_next = 0.0;
  double td_c = 0.0;          // one-step TD errors at insertion time
  double td_d = 0.0;
};

/// Discounted window sum starting at a given state.
struct NStepAggregate {
  StateVec s{};
  int action = 0;
  double c = 0.0;  // sum_i alpha^i c_{n+1+i}
  double d = 0.0;
  StateVec s_next{};  // state after the last step in the window
  int length = 0;
  bool terminal = false;
  int step_index = 0;
  double budget_left = 0.0;
  int step_next = 0;
  double budget_next = 0.0;
  double p_c = 1.0;
  double p_d = 1.0;
};

/// eta * max|delta| + (1 - eta) * mean|delta|.
double priority(std::span<const double> deltas, double eta);

/// Aggregates a run of consecutive experiences. Throws UsageError when empty.
NStepAggregate nstep_aggregate(std::span<const Experience> window, double alpha, double eta = 0.9);

/// Sliding window of capacity N1. Each push that fills the window emits the
/// aggregate anchored at its oldest element; flush() emits the shorter tails.
class NStepWindow {
 public:
  NStepWindow(int n1, double alpha, double eta = 0.9);

  std::optional<NStepAggregate> push(const Experience& e);
  std::vector<NStepAggregate> flush();
  void clear() { buf_.clear(); }

  std::size_t size() const { return buf_.size(); }
  int capacity() const { return n1_; }

 private:
  int n1_;
  double alpha_;
  double eta_;
  std::deque<Experience> buf_;
};

/// Binary tree of partial sums for proportional sampling.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);
  void set(std::size_t i, double value);
  double get(std::size_t i) const { return tree_[leaf0_ + i]; }
  double total() const { return tree_[1]; }
  /// Leaf whose cumulative interval contains u in [0, total).
  std::size_t find(double u) const;
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t leaf0_;
  std::vector<double> tree_;
};

/// FIFO ring of aggregates with proportional sampling on (p_c + p_d) / 2.
class PrioritizedMemory {
 public:
  explicit PrioritizedMemory(std::size_t capacity);

  void add(const NStepAggregate& a);
  bool ready(std::size_t batch_size) const { return size_ >= batch_size && batch_size > 0; }
  /// Independent draws, possibly repeated. Empty result when not ready.
  std::vector<std::size_t> sample(std::size_t batch_size, Rng& rng) const;
  void update_priorities(std::size_t index, double p_c, double p_d);

  const NStepAggregate& at(std::size_t i) const { return data_[i]; }
  double sampling_weight(std::size_t i) const { return tree_.get(i); }
  double total_weight() const { return tree_.total(); }
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t total_added() const { return added_; }

 private:
  std::size_t capacity_;
  std::vector<NStepAggregate> data_;
  SumTree tree_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
  std::size_t added_ = 0;
};

/// Priorities are kept strictly positive.
inline constexpr double kMinPriority = 1e-6;

}  // namespace uavcmdp
