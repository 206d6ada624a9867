#include <memory>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace uavcmdp;

namespace {

std::array<double, 4> random_row(Rng& rng, double lo, double hi) {
  std::array<double, 4> r{};
  for (auto& v : r) v = lo + (hi - lo) * uniform01(rng);
  return r;
}

Probs random_probs(Rng& rng) {
  Probs p = random_row(rng, 0.01, 1.0);
  double s = 0.0;
  for (double v : p) s += v;
  for (auto& v : p) v /= s;
  return p;
}

struct Fixture {
  std::shared_ptr<const FailureModel> failure;
  std::unique_ptr<Env> env;
  std::unique_ptr<LyapunovAgent> agent;

  explicit Fixture(std::uint64_t seed = 1) {
    std::vector<int> bits(100, 0);
    for (int ix = 0; ix < 7; ++ix) bits[static_cast<std::size_t>(50 + ix)] = 1;
    failure = std::make_shared<MapFailureModel>(make_failure_grid(100, 10, 100, bits));
    EpisodeConfig ec;
    ec.goal = {85, 85, 100};
    ec.goal_halfwidth_m = 10;
    ec.d_th = 3;
    ec.max_steps = 40;
    env = std::make_unique<Env>(ec, 100.0, failure);
    LyapunovConfig lc;
    lc.q_hidden = {16, 16};
    lc.policy_hidden = {32, 16};
    lc.pretrain_steps = 20;
    lc.memory_capacity = 1000;
    lc.batch_size = 8;
    agent = std::make_unique<LyapunovAgent>(lc, *env, seed);
  }
};

NStepAggregate random_aggregate(Rng& rng, bool terminal) {
  NStepAggregate a;
  for (auto& v : a.s) v = uniform01(rng);
  for (auto& v : a.s_next) v = uniform01(rng);
  a.action = static_cast<int>(uniform01(rng) * 4);
  a.c = 10.0 * uniform01(rng);
  a.d = 3.0 * uniform01(rng);
  a.length = 1 + static_cast<int>(uniform01(rng) * 10);
  a.terminal = terminal;
  a.step_index = static_cast<int>(uniform01(rng) * 30);
  a.step_next = a.step_index + a.length;
  a.budget_left = 3.0 * uniform01(rng);
  a.budget_next = a.budget_left - uniform01(rng);
  a.p_c = 0.1 + uniform01(rng);
  a.p_d = 0.1 + uniform01(rng);
  return a;
}

std::array<double, 4> row(const std::vector<double>& v) { return {v[0], v[1], v[2], v[3]}; }

std::vector<double> features(const StateVec& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Lyapunov, RemainingStepMassMatchesTheExplicitSum) {
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const int N = 1 + static_cast<int>(uniform01(rng) * 300);
    const int n = static_cast<int>(uniform01(rng) * (N + 1));
    const double alpha = 0.5 + 0.5 * uniform01(rng);
    EXPECT_LE(oracle::rel_err(q_t(n, alpha, N), oracle::q_t(n, alpha, N)), 1e-9);
  }
  EXPECT_DOUBLE_EQ(q_t(3, 1.0, 10), 8.0);
  EXPECT_DOUBLE_EQ(q_t(10, 0.99, 10), 1.0);
  EXPECT_THROW(q_t(11, 0.99, 10), UsageError);
}

TEST(Lyapunov, SlackAndShiftedConstraintValuesMatchTheirDefinitions) {
  Rng rng(2);
  for (int k = 0; k < 1000; ++k) {
    const auto pi = random_probs(rng);
    const auto qd = random_row(rng, 0, 20);
    const double qt = 1.0 + 50.0 * uniform01(rng);
    const double budget = 10.0 * uniform01(rng);
    const double eps = epsilon_hat(budget, pi, qd, qt);
    EXPECT_LE(oracle::rel_err(eps, oracle::epsilon_hat(budget, pi, qd, qt)), 1e-9);
    const auto ql = q_l(qd, eps, qt);
    double base = 0.0;
    for (int a = 0; a < 4; ++a) {
      EXPECT_LE(oracle::rel_err(ql[a], qd[a] + eps * qt), 1e-9);
      base += pi[a] * ql[a];
    }
    // pi_B . Q_L collapses to the remaining budget
    EXPECT_NEAR(base, budget, 1e-9 * std::max(1.0, std::abs(budget)));
  }
  EXPECT_THROW(epsilon_hat(1.0, {}, {}, 0.0), UsageError);
}

TEST(Lyapunov, PolicyLpReachesTheDualOptimumAndStaysFeasible) {
  Rng rng(3);
  int feasible = 0;
  for (int k = 0; k < 2000; ++k) {
    const auto qc = random_row(rng, 0, 10);
    const auto ql = random_row(rng, -5, 5);
    const auto pi = random_probs(rng);
    const double eps = 4.0 * uniform01(rng) - 2.0;
    oracle::Lp lp{qc, ql, eps};
    for (int a = 0; a < 4; ++a) lp.bound += pi[a] * ql[a];
    const auto p = solve_policy_lp(qc, ql, pi, eps);
    const double dual = oracle::lp_dual_value(lp);
    if (!std::isfinite(dual)) {
      EXPECT_EQ(p, pi);
      continue;
    }
    ++feasible;
    double sum = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_LE(lp.violation(p), 1e-9);
    EXPECT_NEAR(lp.objective(p), dual, 1e-9);
    EXPECT_LE(lp.objective(p), oracle::lp_edge_grid(lp, 1e-3) + 1e-9);
  }
  EXPECT_GT(feasible, 1000);
}

TEST(Lyapunov, PolicyLpNeverBeatsAFineSimplexGrid) {
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    const auto qc = random_row(rng, 0, 10);
    const auto ql = random_row(rng, -5, 5);
    const auto pi = random_probs(rng);
    oracle::Lp lp{qc, ql, 0.5};
    for (int a = 0; a < 4; ++a) lp.bound += pi[a] * ql[a];
    const auto p = solve_policy_lp(qc, ql, pi, 0.5);
    const double grid = oracle::lp_simplex_grid(lp, 0.02);
    EXPECT_LE(lp.objective(p), grid + 1e-9);
    EXPECT_LE(grid - lp.objective(p), 0.02 * 10.0 * 2);
  }
}

TEST(Lyapunov, NonNegativeSlackKeepsTheBaselineFeasibleAndNoWorse) {
  Rng rng(5);
  for (int k = 0; k < 500; ++k) {
    const auto qc = random_row(rng, 0, 10);
    const auto ql = random_row(rng, -5, 5);
    const auto pi = random_probs(rng);
    const double eps = uniform01(rng);
    const auto p = solve_policy_lp(qc, ql, pi, eps);
    double obj = 0.0, base = 0.0;
    for (int a = 0; a < 4; ++a) {
      obj += p[a] * qc[a];
      base += pi[a] * qc[a];
    }
    EXPECT_LE(obj, base + 1e-12);
  }
}

TEST(Lyapunov, InfeasibleLpFallsBackToTheBaseline) {
  const Probs pi{0.25, 0.25, 0.25, 0.25};
  const ActionValues ql{1, 2, 3, 4};
  const auto p = solve_policy_lp({1, 1, 1, 1}, ql, pi, -5.0);
  EXPECT_EQ(p, pi);
}

TEST(Lyapunov, KlDivergenceOfKnownPairs) {
  const Probs u{0.25, 0.25, 0.25, 0.25};
  EXPECT_NEAR(kl_divergence(u, u, 0.0), 0.0, 1e-15);
  const Probs p{0.5, 0.5, 0.0, 0.0};
  EXPECT_NEAR(kl_divergence(p, u, 0.0), std::log(2.0), 1e-15);
  Rng rng(6);
  for (int k = 0; k < 100; ++k) EXPECT_GE(kl_divergence(random_probs(rng), random_probs(rng)), 0.0);
}

TEST(Lyapunov, InverseDistanceTargetFavoursMovesTowardsTheGoal) {
  Fixture f;
  const auto t = inverse_distance_target(*f.env, {20, 20, 100});
  double s = 0.0;
  for (double v : t) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_GT(t[static_cast<int>(Action::Right)], t[static_cast<int>(Action::Left)]);
  EXPECT_GT(t[static_cast<int>(Action::Forward)], t[static_cast<int>(Action::Back)]);
  const double dr = std::hypot(85.0 - 30, 85.0 - 20), dl = std::hypot(85.0 - 10, 85.0 - 20);
  EXPECT_NEAR(t[0] / t[1], dr / dl, 1e-12);
}

TEST(Lyapunov, TargetsUseTheLpGreedyActionOnTargetNetworks) {
  Fixture f;
  auto& ag = *f.agent;
  Rng rng(7);
  // make online and target networks differ
  perturb_weights(ag.q_c_target, 0.05, rng);
  perturb_weights(ag.q_d_target, 0.05, rng);
  std::vector<NStepAggregate> batch;
  for (int k = 0; k < 1000; ++k) batch.push_back(random_aggregate(rng, k % 7 == 0));
  const auto y = ag.targets(batch);
  const int N = f.env->config().max_steps;
  const double alpha = ag.config().alpha;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& b = batch[j];
    double yc = b.c, yd = b.d;
    if (!b.terminal) {
      const auto x = features(b.s_next);
      const auto qc = row(oracle::mlp_forward(ag.q_c, x));
      const auto qd = row(oracle::mlp_forward(ag.q_d, x));
      const auto pi = row(oracle::mlp_forward(ag.policy, x));
      const double qt = oracle::q_t(std::min(b.step_next, N), alpha, N);
      const double eps = oracle::epsilon_hat(b.budget_next, pi, qd, qt);
      oracle::Lp lp{qc, {}, eps};
      for (int a = 0; a < 4; ++a) {
        lp.l[a] = qd[a] + eps * qt;
        lp.bound += pi[a] * lp.l[a];
      }
      const auto star = std::isfinite(oracle::lp_dual_value(lp)) ? oracle::lp_vertex_solution(lp) : pi;
      const int a_star = static_cast<int>(std::max_element(star.begin(), star.end()) - star.begin());
      const double disc = std::pow(alpha, b.length);
      yc += disc * oracle::mlp_forward(ag.q_c_target, x)[static_cast<std::size_t>(a_star)];
      yd += disc * oracle::mlp_forward(ag.q_d_target, x)[static_cast<std::size_t>(a_star)];
    }
    EXPECT_LE(oracle::rel_err(y.y_c[j], yc), 1e-9);
    EXPECT_LE(oracle::rel_err(y.y_d[j], yd), 1e-9);
  }
}

TEST(Lyapunov, LossIsPriorityWeightedSquaredError) {
  Fixture f;
  auto& ag = *f.agent;
  Rng rng(8);
  std::vector<NStepAggregate> batch;
  for (int k = 0; k < 16; ++k) batch.push_back(random_aggregate(rng, k % 2 == 0));
  const auto y = ag.targets(batch);
  double lc = 0.0, ld = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto x = features(batch[j].s);
    const double dc = y.y_c[j] - oracle::mlp_forward(ag.q_c, x)[static_cast<std::size_t>(batch[j].action)];
    const double dd = y.y_d[j] - oracle::mlp_forward(ag.q_d, x)[static_cast<std::size_t>(batch[j].action)];
    lc += batch[j].p_c * dc * dc / 16.0;
    ld += batch[j].p_d * dd * dd / 16.0;
  }
  const auto [bc, bd] = ag.batch_losses(batch);
  EXPECT_LE(oracle::rel_err(bc, lc), 1e-9);
  EXPECT_LE(oracle::rel_err(bd, ld), 1e-9);

  auto doubled = batch;
  for (auto& b : doubled) {
    b.p_c *= 2.0;
    b.p_d *= 2.0;
  }
  const auto [dc2, dd2] = ag.batch_losses(doubled);
  EXPECT_LE(oracle::rel_err(dc2, 2.0 * bc), 1e-12);
  EXPECT_LE(oracle::rel_err(dd2, 2.0 * bd), 1e-12);
}

TEST(Lyapunov, LossVanishesWhenTargetsEqualPredictions) {
  Fixture f;
  auto& ag = *f.agent;
  Rng rng(9);
  std::vector<NStepAggregate> batch;
  for (int k = 0; k < 8; ++k) {
    auto b = random_aggregate(rng, true);
    b.c = ag.cost_values(b.s)[static_cast<std::size_t>(b.action)];
    b.d = ag.constraint_values(b.s)[static_cast<std::size_t>(b.action)];
    batch.push_back(b);
  }
  const auto [lc, ld] = ag.batch_losses(batch);
  // batched and single-sample forward passes may differ in the last bit
  EXPECT_LE(lc, 1e-28);
  EXPECT_LE(ld, 1e-28);
}

TEST(Lyapunov, TrainStepWritesBackAbsoluteTdErrorsAsPriorities) {
  Fixture f;
  auto& ag = *f.agent;
  Rng rng(10);
  for (int k = 0; k < 20; ++k) ag.memory().add(random_aggregate(rng, k % 3 == 0));
  const std::vector<std::size_t> idx{0, 3, 5, 7};
  std::vector<NStepAggregate> batch;
  for (auto i : idx) batch.push_back(ag.memory().at(i));
  const auto y = ag.targets(batch);
  std::vector<double> dc, dd;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    dc.push_back(y.y_c[j] - ag.cost_values(batch[j].s)[static_cast<std::size_t>(batch[j].action)]);
    dd.push_back(y.y_d[j] - ag.constraint_values(batch[j].s)[static_cast<std::size_t>(batch[j].action)]);
  }
  const auto before = ag.q_c.flat_parameters();
  ag.train_step(idx);
  EXPECT_NE(ag.q_c.flat_parameters(), before);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    EXPECT_NEAR(ag.memory().at(idx[j]).p_c, std::abs(dc[j]) + kMinPriority, 1e-12);
    EXPECT_NEAR(ag.memory().at(idx[j]).p_d, std::abs(dd[j]) + kMinPriority, 1e-12);
  }
}

TEST(Lyapunov, ValueGradientsMatchCentralDifferences) {
  Fixture f;
  auto& net = f.agent->q_c;
  Rng rng(11);
  Matrix X(kFeatureDim, 5);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = uniform01(rng);
  Matrix G = Matrix::Zero(4, 5);
  for (int j = 0; j < 5; ++j) G(j % 4, j) = uniform01(rng) - 0.5;
  ForwardCache cache;
  net.forward_batch(X, cache);
  std::vector<double> analytic;
  const auto g = net.backward(cache, G);
  for (std::size_t k = 0; k < g.dW.size(); ++k) {
    for (Eigen::Index r = 0; r < g.dW[k].rows(); ++r)
      for (Eigen::Index c = 0; c < g.dW[k].cols(); ++c) analytic.push_back(g.dW[k](r, c));
    for (Eigen::Index r = 0; r < g.db[k].size(); ++r) analytic.push_back(g.db[k](r));
  }
  auto p = net.flat_parameters();
  for (std::size_t i = 0; i < p.size(); i += 7) {
    const double keep = p[i];
    p[i] = keep + 1e-5;
    net.set_flat_parameters(p);
    const double up = (net.forward_batch(X).array() * G.array()).sum();
    p[i] = keep - 1e-5;
    net.set_flat_parameters(p);
    const double down = (net.forward_batch(X).array() * G.array()).sum();
    p[i] = keep;
    net.set_flat_parameters(p);
    const double fd = (up - down) / 2e-5;
    EXPECT_LE(std::abs(analytic[i] - fd) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-8}), 1e-4);
  }
}

TEST(Lyapunov, PretrainedPolicyLeansTowardsTheGoal) {
  Fixture f;
  const auto s = f.env->start_at({20, 20, 100});
  const auto p = f.agent->policy_probs(featurize(s, f.env->config(), 100.0));
  EXPECT_GT(p[static_cast<int>(Action::Right)] + p[static_cast<int>(Action::Forward)], 0.5);
}

TEST(Lyapunov, CheckpointRestoresEveryNetworkExactly) {
  Fixture f;
  auto& ag = *f.agent;
  Rng rng(12);
  for (int e = 0; e < 3; ++e) {
    auto s = f.env->reset(rng);
    while (!s.done) {
      const auto t = f.env->step(s, static_cast<Action>(ag.act(s, ActMode::Sample, rng)), rng);
      ag.observe(t, true);
      s = t.next_state;
    }
    ag.end_episode();
  }
  const auto j = ag.checkpoint();
  const auto back = LyapunovAgent::from_checkpoint(nlohmann::json::parse(j.dump()), *f.env);
  EXPECT_EQ(back->checkpoint().dump(), j.dump());
  EXPECT_EQ(back->episodes_seen(), 3);
  const auto s = f.env->start_at({30, 70, 100});
  EXPECT_EQ(back->lp_policy(s), ag.lp_policy(s));
  Rng r1(3), r2(3);
  EXPECT_EQ(back->act(s, ActMode::Greedy, r1), ag.act(s, ActMode::Greedy, r2));
}

TEST(Lyapunov, ConfigRoundTripsAndRejectsNonsense) {
  LyapunovConfig c;
  c.behavior = BehaviorPolicy::Lp;
  c.train_every = 3;
  const nlohmann::json j = c;
  const auto back = j.get<LyapunovConfig>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
