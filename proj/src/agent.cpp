#include "uavcmdp/agent.hpp"

namespace uavcmdp {

int argmax(const ActionValues& v) {
  int best = 0;
  for (int a = 1; a < kNumActions; ++a)
    if (v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(best)]) best = a;
  return best;
}

int argmin(const ActionValues& v) {
  int best = 0;
  for (int a = 1; a < kNumActions; ++a)
    if (v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(best)]) best = a;
  return best;
}

int sample_action(const Probs& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    acc += p[static_cast<std::size_t>(a)];
    if (u < acc) return a;
  }
  for (int a = kNumActions - 1; a >= 0; --a)
    if (p[static_cast<std::size_t>(a)] > 0.0) return a;
  return kNumActions - 1;
}

Experience make_experience(const CmdpTransition& t, const EpisodeConfig& cfg, double L) {
  Experience e;
  e.s = featurize(t.state, cfg, L);
  e.action = static_cast<int>(t.action);
  e.cost = t.cost;
  e.dcost = t.constraint_cost;
  e.s_next = featurize(t.next_state, cfg, L);
  e.terminal = t.done;
  e.step_index = t.state.step_index;
  e.budget_left = cfg.d_th - t.state.cum_constraint;
  e.step_next = t.next_state.step_index;
  e.budget_next = cfg.d_th - t.next_state.cum_constraint;
  return e;
}

}  // namespace uavcmdp
