#include "uavcmdp/replay.hpp"

#include <algorithm>
#include <cmath>

namespace uavcmdp {

double priority(std::span<const double> deltas, double eta) {
  if (deltas.empty()) throw UsageError("priority needs at least one TD error");
  double mx = 0.0;
  double sum = 0.0;
  for (double d : deltas) {
    mx = std::max(mx, std::abs(d));
    sum += std::abs(d);
  }
  return eta * mx + (1.0 - eta) * (sum / static_cast<double>(deltas.size()));
}

NStepAggregate nstep_aggregate(std::span<const Experience> window, double alpha, double eta) {
  if (window.empty()) throw UsageError("cannot aggregate an empty window");
  NStepAggregate a;
  const auto& first = window.front();
  a.s = first.s;
  a.action = first.action;
  a.step_index = first.step_index;
  a.budget_left = first.budget_left;
  std::vector<double> dc, dd;
  for (std::size_t i = 0; i < window.size(); ++i) {
    const double w = std::pow(alpha, static_cast<double>(i));
    a.c += w * window[i].cost;
    a.d += w * window[i].dcost;
    dc.push_back(window[i].td_c);
    dd.push_back(window[i].td_d);
  }
  a.s_next = window.back().s_next;
  a.terminal = window.back().terminal;
  a.step_next = window.back().step_next;
  a.budget_next = window.back().budget_next;
  a.length = static_cast<int>(window.size());
  a.p_c = std::max(priority(dc, eta), kMinPriority);
  a.p_d = std::max(priority(dd, eta), kMinPriority);
  return a;
}

NStepWindow::NStepWindow(int n1, double alpha, double eta) : n1_(n1), alpha_(alpha), eta_(eta) {
  if (n1_ < 1) throw ConfigError("window length must be positive");
}

std::optional<NStepAggregate> NStepWindow::push(const Experience& e) {
  buf_.push_back(e);
  if (static_cast<int>(buf_.size()) < n1_) return std::nullopt;
  std::vector<Experience> run(buf_.begin(), buf_.end());
  buf_.pop_front();
  return nstep_aggregate(run, alpha_, eta_);
}

std::vector<NStepAggregate> NStepWindow::flush() {
  std::vector<NStepAggregate> out;
  while (!buf_.empty()) {
    std::vector<Experience> run(buf_.begin(), buf_.end());
    out.push_back(nstep_aggregate(run, alpha_, eta_));
    buf_.pop_front();
  }
  return out;
}

// ---------------------------------------------------------------------------

SumTree::SumTree(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("capacity must be positive");
  leaf0_ = 1;
  while (leaf0_ < capacity_) leaf0_ <<= 1;
  tree_.assign(2 * leaf0_, 0.0);
}

void SumTree::set(std::size_t i, double value) {
  if (i >= capacity_) throw UsageError("sum-tree index out of range");
  std::size_t node = leaf0_ + i;
  tree_[node] = value;
  for (node >>= 1; node >= 1; node >>= 1) tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
}

std::size_t SumTree::find(double u) const {
  std::size_t node = 1;
  while (node < leaf0_) {
    const double left = tree_[2 * node];
    if (u < left || tree_[2 * node + 1] <= 0.0) {
      node = 2 * node;
    } else {
      u -= left;
      node = 2 * node + 1;
    }
  }
  return std::min(node - leaf0_, capacity_ - 1);
}

PrioritizedMemory::PrioritizedMemory(std::size_t capacity)
    : capacity_(capacity), data_(capacity), tree_(capacity) {}

void PrioritizedMemory::add(const NStepAggregate& a) {
  data_[next_] = a;
  data_[next_].p_c = std::max(a.p_c, kMinPriority);
  data_[next_].p_d = std::max(a.p_d, kMinPriority);
  tree_.set(next_, 0.5 * (data_[next_].p_c + data_[next_].p_d));
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  ++added_;
}

std::vector<std::size_t> PrioritizedMemory::sample(std::size_t batch_size, Rng& rng) const {
  std::vector<std::size_t> idx;
  if (!ready(batch_size)) return idx;
  idx.reserve(batch_size);
  const double total = tree_.total();
  for (std::size_t k = 0; k < batch_size; ++k) {
    std::size_t i = tree_.find(uniform01(rng) * total);
    if (i >= size_) i = size_ - 1;
    idx.push_back(i);
  }
  return idx;
}

void PrioritizedMemory::update_priorities(std::size_t i, double p_c, double p_d) {
  if (i >= size_) throw UsageError("memory index out of range");
  data_[i].p_c = std::max(p_c, kMinPriority);
  data_[i].p_d = std::max(p_d, kMinPriority);
  tree_.set(i, 0.5 * (data_[i].p_c + data_[i].p_d));
}

}  // namespace uavcmdp
