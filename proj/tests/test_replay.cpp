#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace uavcmdp;

namespace {

Experience random_experience(Rng& rng, int n) {
  Experience e;
  for (auto& v : e.s) v = uniform01(rng);
  for (auto& v : e.s_next) v = uniform01(rng);
  e.action = static_cast<int>(uniform01(rng) * 4);
  e.cost = 0.5 + uniform01(rng);
  e.dcost = uniform01(rng) < 0.3 ? 1.0 : 0.0;
  e.step_index = n;
  e.step_next = n + 1;
  e.budget_left = 10.0 - n * 0.1;
  e.budget_next = e.budget_left - e.dcost;
  e.td_c = 4.0 * uniform01(rng) - 2.0;
  e.td_d = 4.0 * uniform01(rng) - 2.0;
  return e;
}

}  // namespace

TEST(Priority, MatchesMaxMeanMixOracle) {
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> d(1 + static_cast<std::size_t>(uniform01(rng) * 12));
    for (auto& v : d) v = 10.0 * uniform01(rng) - 5.0;
    const double eta = uniform01(rng);
    EXPECT_LE(oracle::rel_err(priority(d, eta), oracle::priority(d, eta)), 1e-12);
  }
  EXPECT_THROW(priority({}, 0.9), UsageError);
}

TEST(NStep, AggregateSumsDiscountedCostsAndKeepsTheAnchor) {
  Rng rng(2);
  for (int k = 0; k < 500; ++k) {
    const int len = 1 + static_cast<int>(uniform01(rng) * 10);
    std::vector<Experience> w;
    for (int i = 0; i < len; ++i) w.push_back(random_experience(rng, i));
    w.back().terminal = uniform01(rng) < 0.5;
    const double alpha = 0.9 + 0.1 * uniform01(rng);
    const auto a = nstep_aggregate(w, alpha, 0.9);
    std::vector<double> c, d, tc, td;
    for (const auto& e : w) {
      c.push_back(e.cost);
      d.push_back(e.dcost);
      tc.push_back(e.td_c);
      td.push_back(e.td_d);
    }
    EXPECT_LE(oracle::rel_err(a.c, oracle::discounted_sum(c, alpha)), 1e-12);
    EXPECT_LE(oracle::rel_err(a.d, oracle::discounted_sum(d, alpha)), 1e-12);
    EXPECT_LE(oracle::rel_err(a.p_c, std::max(oracle::priority(tc, 0.9), kMinPriority)), 1e-12);
    EXPECT_LE(oracle::rel_err(a.p_d, std::max(oracle::priority(td, 0.9), kMinPriority)), 1e-12);
    EXPECT_EQ(a.s, w.front().s);
    EXPECT_EQ(a.action, w.front().action);
    EXPECT_EQ(a.step_index, w.front().step_index);
    EXPECT_EQ(a.s_next, w.back().s_next);
    EXPECT_EQ(a.step_next, w.back().step_next);
    EXPECT_EQ(a.budget_next, w.back().budget_next);
    EXPECT_EQ(a.terminal, w.back().terminal);
    EXPECT_EQ(a.length, len);
  }
  EXPECT_THROW(nstep_aggregate({}, 0.99), UsageError);
}

TEST(NStep, PrioritiesStayPositiveWhenEveryTdErrorIsZero) {
  Experience e;
  const auto a = nstep_aggregate(std::vector<Experience>{e, e}, 0.99);
  EXPECT_EQ(a.p_c, kMinPriority);
  EXPECT_EQ(a.p_d, kMinPriority);
}

TEST(NStep, WindowEmitsOncePerStepAfterFillingAndFlushesTails) {
  Rng rng(3);
  NStepWindow win(4, 0.99);
  std::vector<Experience> stream;
  for (int i = 0; i < 7; ++i) stream.push_back(random_experience(rng, i));
  std::vector<NStepAggregate> out;
  for (int i = 0; i < 7; ++i) {
    auto a = win.push(stream[static_cast<std::size_t>(i)]);
    EXPECT_EQ(a.has_value(), i >= 3);
    if (a) out.push_back(*a);
  }
  ASSERT_EQ(out.size(), 4u);
  for (std::size_t k = 0; k < out.size(); ++k) {
    EXPECT_EQ(out[k].step_index, static_cast<int>(k));
    EXPECT_EQ(out[k].length, 4);
  }
  const auto tails = win.flush();
  ASSERT_EQ(tails.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(tails[k].step_index, static_cast<int>(4 + k));
    EXPECT_EQ(tails[k].length, static_cast<int>(3 - k));
    EXPECT_EQ(tails[k].s_next, stream.back().s_next);
  }
  EXPECT_EQ(win.size(), 0u);
  EXPECT_THROW(NStepWindow(0, 0.99), ConfigError);
}

TEST(SumTree, FindAgreesWithALinearScan) {
  Rng rng(4);
  SumTree t(13);
  std::vector<double> v(13);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = (i % 5 == 0) ? 0.0 : uniform01(rng);
    t.set(i, v[i]);
  }
  double total = 0.0;
  for (double x : v) total += x;
  EXPECT_NEAR(t.total(), total, 1e-12);
  for (int k = 0; k < 2000; ++k) {
    const double u = uniform01(rng) * total;
    std::size_t ref = 0;
    double acc = 0.0;
    for (; ref < v.size(); ++ref) {
      acc += v[ref];
      if (u < acc) break;
    }
    EXPECT_EQ(t.find(u), ref);
  }
  EXPECT_THROW(t.set(13, 1.0), UsageError);
}

TEST(Memory, SamplingFrequenciesFollowTheMeanOfBothPriorities) {
  Rng rng(5);
  PrioritizedMemory m(8);
  std::vector<double> w;
  for (int i = 0; i < 8; ++i) {
    NStepAggregate a;
    a.p_c = 0.5 + i;
    a.p_d = 0.1 * (8 - i);
    m.add(a);
    w.push_back(0.5 * (a.p_c + a.p_d));
  }
  double tw = 0.0;
  for (double x : w) tw += x;
  std::vector<double> count(8, 0.0);
  const int draws = 200000;
  for (int k = 0; k < draws / 8; ++k)
    for (auto i : m.sample(8, rng)) count[i] += 1.0;
  double chi2 = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double expected = draws * w[static_cast<std::size_t>(i)] / tw;
    chi2 += std::pow(count[static_cast<std::size_t>(i)] - expected, 2) / expected;
  }
  EXPECT_LT(chi2, 18.48);  // chi-square, 7 dof, p = 0.01
}

TEST(Memory, AHighPriorityItemDominatesSampling) {
  Rng rng(6);
  PrioritizedMemory m(100);
  for (int i = 0; i < 100; ++i) {
    NStepAggregate a;
    a.p_c = a.p_d = (i == 42) ? 1e5 : 1.0;
    m.add(a);
  }
  int hits = 0;
  for (int k = 0; k < 100; ++k)
    for (auto i : m.sample(100, rng)) hits += (i == 42);
  EXPECT_GT(hits, 9900);
}

TEST(Memory, OverwritesOldestFirstAndFloorsPriorities) {
  PrioritizedMemory m(3);
  for (int i = 0; i < 5; ++i) {
    NStepAggregate a;
    a.step_index = i;
    a.p_c = a.p_d = 0.0;
    m.add(a);
  }
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.total_added(), 5u);
  EXPECT_EQ(m.at(0).step_index, 3);
  EXPECT_EQ(m.at(1).step_index, 4);
  EXPECT_EQ(m.at(2).step_index, 2);
  EXPECT_EQ(m.at(0).p_c, kMinPriority);
  m.update_priorities(1, 2.0, 4.0);
  EXPECT_DOUBLE_EQ(m.sampling_weight(1), 3.0);
  EXPECT_NEAR(m.total_weight(), 3.0 + 2 * kMinPriority, 1e-12);
  EXPECT_THROW(m.update_priorities(3, 1.0, 1.0), UsageError);
}

TEST(Memory, NotReadyBelowTheBatchSize) {
  Rng rng(7);
  PrioritizedMemory m(10);
  m.add({});
  EXPECT_FALSE(m.ready(2));
  EXPECT_TRUE(m.sample(2, rng).empty());
  m.add({});
  EXPECT_EQ(m.sample(2, rng).size(), 2u);
}
