#include <memory>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace uavcmdp;

namespace {

struct Fixture {
  std::shared_ptr<const FailureModel> failure;
  std::unique_ptr<Env> env;
  std::unique_ptr<DuelingAgent> agent;

  explicit Fixture(DuelingConfig dc = small_config()) {
    std::vector<int> bits(100, 0);
    for (int ix = 0; ix < 7; ++ix) bits[static_cast<std::size_t>(50 + ix)] = 1;
    failure = std::make_shared<MapFailureModel>(make_failure_grid(100, 10, 100, bits));
    EpisodeConfig ec;
    ec.goal = {85, 85, 100};
    ec.goal_halfwidth_m = 10;
    ec.d_th = 3;
    ec.max_steps = 40;
    env = std::make_unique<Env>(ec, 100.0, failure);
    agent = std::make_unique<DuelingAgent>(dc, *env, 1);
  }

  static DuelingConfig small_config() {
    DuelingConfig dc;
    dc.trunk_hidden = {16, 12};
    dc.memory_capacity = 1000;
    dc.batch_size = 8;
    dc.schedule_episodes = 100;
    return dc;
  }
};

NStepAggregate random_aggregate(Rng& rng, bool terminal) {
  NStepAggregate a;
  for (auto& v : a.s) v = uniform01(rng);
  for (auto& v : a.s_next) v = uniform01(rng);
  a.action = static_cast<int>(uniform01(rng) * 4);
  a.c = -10.0 * uniform01(rng);
  a.length = 1 + static_cast<int>(uniform01(rng) * 10);
  a.terminal = terminal;
  a.p_c = a.p_d = 0.1 + uniform01(rng);
  return a;
}

std::vector<double> features(const StateVec& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Dueling, AggregationMatchesValuePlusCentredAdvantage) {
  Rng rng(1);
  DuelingNet n(kFeatureDim, {20, 10}, 4);
  n.init(rng);
  n.perturb(0.05, rng);  // non-zero biases
  for (int k = 0; k < 1000; ++k) {
    StateVec s;
    for (auto& v : s) v = 2.0 * uniform01(rng) - 1.0;
    const auto q = n.q_values(s);
    const auto ref = oracle::dueling_q(n, features(s));
    for (int a = 0; a < 4; ++a) EXPECT_LE(oracle::rel_err(q[a], ref[static_cast<std::size_t>(a)]), 1e-9);
  }
}

TEST(Dueling, BackwardMatchesCentralDifferencesOnEverySubnetwork) {
  Rng rng(2);
  DuelingNet n(kFeatureDim, {14, 9}, 4);
  n.init(rng);
  n.perturb(0.05, rng);
  Matrix X(kFeatureDim, 4);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = uniform01(rng);
  Matrix G(4, 4);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = uniform01(rng) - 0.5;
  DuelingNet::Cache cache;
  n.q_values(X, cache);
  const auto g = n.backward(cache, G);
  auto loss = [&] { return (n.q_values(X).array() * G.array()).sum(); };
  for (auto [part, grad] : {std::pair{&n.trunk, &g.trunk}, std::pair{&n.value, &g.value},
                            std::pair{&n.advantage, &g.advantage}}) {
    std::vector<std::size_t> all(part->num_parameters());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    EXPECT_LE(gradcheck::max_error(*part, gradcheck::flatten(*grad), loss, all), 1e-4);
  }
}

TEST(Dueling, TargetsAreDoubleQ) {
  Fixture f;
  auto& ag = *f.agent;
  Rng rng(3);
  ag.target.perturb(0.1, rng);
  std::vector<NStepAggregate> batch;
  for (int k = 0; k < 1000; ++k) batch.push_back(random_aggregate(rng, k % 5 == 0));
  const auto y = ag.targets(batch);
  for (std::size_t j = 0; j < batch.size(); ++j) {
    double ref = batch[j].c;
    if (!batch[j].terminal) {
      const auto q_on = oracle::dueling_q(ag.net, features(batch[j].s_next));
      const auto q_tg = oracle::dueling_q(ag.target, features(batch[j].s_next));
      const auto a = std::max_element(q_on.begin(), q_on.end()) - q_on.begin();
      ref += std::pow(ag.config().alpha, batch[j].length) * q_tg[static_cast<std::size_t>(a)];
    }
    EXPECT_LE(oracle::rel_err(y[j], ref), 1e-9);
  }
}

TEST(Dueling, ShapedRewardPenalisesMovesFailuresAndDistance) {
  CmdpTransition t;
  t.next_state.position = {40, 50, 100};
  t.constraint_cost = 1;
  const RewardWeights w;
  const double d = std::hypot(85.0 - 40, 85.0 - 50);
  EXPECT_NEAR(shaped_reward(t, w, {85, 85, 100}, 100.0), -(0.5 + 1.0 + d / 100.0), 1e-15);
  t.constraint_cost = 0;
  EXPECT_NEAR(shaped_reward(t, w, {85, 85, 100}, 100.0), -(0.5 + d / 100.0), 1e-15);
}

TEST(Dueling, ExplorationRateDecaysLinearlyThenHolds) {
  Fixture f;
  auto& ag = *f.agent;
  EXPECT_DOUBLE_EQ(ag.epsilon(), 1.0);
  Rng rng(4);
  for (int e = 0; e < 60; ++e) {
    ag.begin_episode(rng);
    ag.end_episode();
    const double frac = std::min(1.0, (e + 1) / 50.0);
    EXPECT_NEAR(ag.epsilon(), 1.0 - 0.95 * frac, 1e-12);
  }
}

TEST(Dueling, TrainStepReducesTheLossOnAFixedBatch) {
  Fixture f;
  auto& ag = *f.agent;
  Rng rng(5);
  for (int k = 0; k < 8; ++k) ag.memory().add(random_aggregate(rng, true));
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
  const double first = ag.train_step(idx);
  double last = first;
  for (int k = 0; k < 50; ++k) last = ag.train_step(idx);
  EXPECT_LT(last, first);
}

TEST(Dueling, CheckpointRoundTripIsExact) {
  Fixture f;
  auto& ag = *f.agent;
  Rng rng(6);
  for (int e = 0; e < 3; ++e) {
    ag.begin_episode(rng);
    auto s = f.env->reset(rng);
    while (!s.done) {
      const auto t = f.env->step(s, static_cast<Action>(ag.act(s, ActMode::Sample, rng)), rng);
      ag.observe(t, true);
      s = t.next_state;
    }
    ag.end_episode();
  }
  const auto j = ag.checkpoint();
  const auto back = DuelingAgent::from_checkpoint(nlohmann::json::parse(j.dump()), *f.env);
  EXPECT_EQ(back->checkpoint().dump(), j.dump());
  const auto s = f.env->start_at({30, 70, 100});
  Rng r1(1), r2(1);
  EXPECT_EQ(back->act(s, ActMode::Greedy, r1), ag.act(s, ActMode::Greedy, r2));
  EXPECT_THROW(LyapunovAgent::from_checkpoint(j, *f.env), ConfigError);
}

TEST(Dueling, WeightNoiseLeavesTheLearnedNetworkUntouched) {
  auto dc = Fixture::small_config();
  dc.exploration = Exploration::WeightNoise;
  Fixture f(dc);
  auto& ag = *f.agent;
  const nlohmann::json before = ag.net;
  Rng rng(7);
  ag.begin_episode(rng);
  const auto s = f.env->start_at({30, 70, 100});
  for (int k = 0; k < 5; ++k) ag.act(s, ActMode::Sample, rng);
  EXPECT_EQ(nlohmann::json(ag.net).dump(), before.dump());
}

TEST(Dueling, ConfigRoundTripsAndRejectsNonsense) {
  DuelingConfig c;
  c.exploration = Exploration::WeightNoise;
  const nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<DuelingConfig>()).dump(), j.dump());
  c.eps_decay_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.trunk_hidden.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}
