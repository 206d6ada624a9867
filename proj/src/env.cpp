#include "uavcmdp/env.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>

namespace uavcmdp {

std::string to_string(Action a) {
  switch (a) {
    case Action::Left: return "left";
    case Action::Right: return "right";
    case Action::Forward: return "forward";
    case Action::Back: return "back";
  }
  return "?";
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Running: return "running";
    case Outcome::Goal: return "goal";
    case Outcome::StepLimit: return "step_limit";
    case Outcome::BudgetExhausted: return "budget_exhausted";
  }
  return "?";
}

Outcome outcome_from_string(const std::string& s) {
  if (s == "running") return Outcome::Running;
  if (s == "goal") return Outcome::Goal;
  if (s == "step_limit") return Outcome::StepLimit;
  if (s == "budget_exhausted") return Outcome::BudgetExhausted;
  throw ConfigError("unknown outcome '" + s + "'");
}

void EpisodeConfig::validate(double L) const {
  if (!(goal.x >= 0.0 && goal.x <= L && goal.y >= 0.0 && goal.y <= L)) throw ConfigError("goal lies outside the area");
  if (!(goal_halfwidth_m >= 0.0)) throw ConfigError("goal_halfwidth_m must be non-negative");
  if (d_th < 0) throw ConfigError("d_th must be non-negative");
  if (max_steps < 1) throw ConfigError("max_steps must be positive");
  if (!(speed_mps > 0.0) || !(dt_s > 0.0)) throw ConfigError("speed and time step must be positive");
  if (!(move_cost >= 0.0) || !(distance_weight >= 0.0)) throw ConfigError("cost weights must be non-negative");
  if (max_reset_attempts < 1) throw ConfigError("max_reset_attempts must be positive");
}

void to_json(nlohmann::json& j, const EpisodeConfig& c) {
  j = nlohmann::json{{"goal", {c.goal.x, c.goal.y, c.goal.z}},
                     {"goal_halfwidth_m", c.goal_halfwidth_m},
                     {"d_th", c.d_th},
                     {"max_steps", c.max_steps},
                     {"speed_mps", c.speed_mps},
                     {"dt_s", c.dt_s},
                     {"altitude_m", c.altitude_m},
                     {"move_cost", c.move_cost},
                     {"distance_weight", c.distance_weight},
                     {"terminate_on_budget", c.terminate_on_budget},
                     {"max_reset_attempts", c.max_reset_attempts}};
}

void from_json(const nlohmann::json& j, EpisodeConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("goal")) {
    const auto g = j.at("goal").get<std::vector<double>>();
    if (g.size() < 2 || g.size() > 3) throw ConfigError("goal must have 2 or 3 coordinates");
    c.goal = {g[0], g[1], g.size() == 3 ? g[2] : c.altitude_m};
  }
  get("goal_halfwidth_m", c.goal_halfwidth_m);
  get("d_th", c.d_th);
  get("max_steps", c.max_steps);
  get("speed_mps", c.speed_mps);
  get("dt_s", c.dt_s);
  get("altitude_m", c.altitude_m);
  get("move_cost", c.move_cost);
  get("distance_weight", c.distance_weight);
  get("terminate_on_budget", c.terminate_on_budget);
  get("max_reset_attempts", c.max_reset_attempts);
}

// ---------------------------------------------------------------------------

MonteCarloFailureModel::MonteCarloFailureModel(std::shared_ptr<const Scenario> scenario, BandParams band, int J)
    : scenario_(std::move(scenario)), band_(band), J_(J) {
  if (!scenario_) throw UsageError("scenario is required");
  if (J_ < 1) throw ConfigError("J must be positive");
  band_.validate();
}

std::pair<int, double> MonteCarloFailureModel::evaluate(Vec3 p, Rng& rng) const {
  const auto samples = sample_sinr_db(p, *scenario_, band_, J_, rng);
  double mean_lin = 0.0;
  for (double s : samples) mean_lin += db_to_linear(s);
  mean_lin /= static_cast<double>(samples.size());
  const int f = failure_from_outage(outage_fraction(samples, band_.sinr_threshold_db), band_.outage_prob_threshold);
  return {f, linear_to_db(mean_lin)};
}

int MonteCarloFailureModel::failure(Vec3 p, Rng& rng) const {
  return radio_failure(p, *scenario_, band_, J_, rng);
}

double MonteCarloFailureModel::mean_sinr_db(Vec3 p, Rng& rng) const { return evaluate(p, rng).second; }

RadioMap make_failure_grid(double L, double res, double altitude_m, const std::vector<int>& bits) {
  RadioMap map;
  map.grid_resolution_m = res;
  map.altitude_m = altitude_m;
  map.area_side_m = L;
  map.nx = map.ny = static_cast<int>(std::lround(L / res));
  if (static_cast<std::size_t>(map.nx) * map.ny != bits.size()) throw ConfigError("failure grid has the wrong size");
  map.cells.resize(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    map.cells[i].failure = bits[i] ? 1 : 0;
    map.cells[i].outage_prob = bits[i] ? 1.0 : 0.0;
    map.cells[i].mean_sinr_db = bits[i] ? -10.0 : 10.0;
  }
  return map;
}

// ---------------------------------------------------------------------------

Env::Env(EpisodeConfig cfg, double area_side_m, std::shared_ptr<const FailureModel> failure)
    : cfg_(cfg), L_(area_side_m), failure_(std::move(failure)) {
  if (!(L_ > 0.0)) throw ConfigError("area side must be positive");
  if (!failure_) throw UsageError("failure model is required");
  cfg_.goal.z = cfg_.altitude_m;
  cfg_.validate(L_);
}

bool Env::in_goal(Vec3 p) const {
  return std::abs(p.x - cfg_.goal.x) <= cfg_.goal_halfwidth_m && std::abs(p.y - cfg_.goal.y) <= cfg_.goal_halfwidth_m;
}

UavState Env::reset(Rng& rng) const {
  for (int attempt = 0; attempt < cfg_.max_reset_attempts; ++attempt) {
    const Vec3 p{uniform01(rng) * L_, uniform01(rng) * L_, cfg_.altitude_m};
    if (in_goal(p)) continue;
    if (failure_->failure(p, rng)) continue;
    return start_at(p);
  }
  throw ScenarioError("no admissible start found after " + std::to_string(cfg_.max_reset_attempts) + " attempts");
}

UavState Env::start_at(Vec3 p) const {
  UavState s;
  s.position = {p.x, p.y, cfg_.altitude_m};
  return s;
}

Vec3 Env::move(Vec3 p, Action a) const {
  const double d = cfg_.step_length();
  switch (a) {
    case Action::Left: p.x -= d; break;
    case Action::Right: p.x += d; break;
    case Action::Forward: p.y += d; break;
    case Action::Back: p.y -= d; break;
  }
  p.x = std::clamp(p.x, 0.0, L_);
  p.y = std::clamp(p.y, 0.0, L_);
  return p;
}

double Env::cost_at(Vec3 next) const {
  return cfg_.move_cost + cfg_.distance_weight * distance(next, cfg_.goal) / L_;
}

CmdpTransition Env::step(const UavState& state, Action action, Rng& rng) const {
  if (state.done) throw UsageError("step called on a finished episode");
  CmdpTransition t;
  t.state = state;
  t.action = action;
  UavState next = state;
  next.position = move(state.position, action);
  next.step_index = state.step_index + 1;
  const auto [fail, sinr_db] = failure_->evaluate(next.position, rng);
  t.constraint_cost = fail;
  t.sinr_db = sinr_db;
  next.cum_constraint = state.cum_constraint + fail;
  t.cost = cost_at(next.position);

  const bool over_budget = next.cum_constraint > cfg_.d_th;
  if (over_budget && (cfg_.terminate_on_budget || in_goal(next.position))) {
    t.outcome = Outcome::BudgetExhausted;
  } else if (in_goal(next.position)) {
    t.outcome = Outcome::Goal;
  } else if (next.step_index >= cfg_.max_steps) {
    t.outcome = Outcome::StepLimit;
  }
  t.done = t.outcome != Outcome::Running;
  next.done = t.done;
  t.next_state = next;
  return t;
}

EpisodeReturn episode_return(const std::vector<CmdpTransition>& transitions) {
  EpisodeReturn r;
  for (const auto& t : transitions) {
    r.total_cost += t.cost;
    r.d_o += t.constraint_cost;
  }
  r.steps = static_cast<int>(transitions.size());
  if (!transitions.empty()) r.outcome = transitions.back().outcome;
  r.success = r.outcome == Outcome::Goal;
  return r;
}

std::array<double, kFeatureDim> featurize(const UavState& s, const EpisodeConfig& cfg, double L) {
  const double budget = cfg.d_th > 0 ? std::min(static_cast<double>(s.cum_constraint) / cfg.d_th, 1.0)
                                     : (s.cum_constraint > 0 ? 1.0 : 0.0);
  return {s.position.x / L,
          s.position.y / L,
          (cfg.goal.x - s.position.x) / L,
          (cfg.goal.y - s.position.y) / L,
          static_cast<double>(s.step_index) / cfg.max_steps,
          budget};
}

void write_trajectory_csv(const std::vector<CmdpTransition>& transitions, std::ostream& out) {
  out << "step,x,y,alt,action,cost,dcost,sinr_db,outcome\n";
  out << std::setprecision(17);
  for (const auto& t : transitions) {
    const auto& p = t.next_state.position;
    out << t.next_state.step_index << ',' << p.x << ',' << p.y << ',' << p.z << ',' << to_string(t.action) << ','
        << t.cost << ',' << t.constraint_cost << ',' << t.sinr_db << ',' << to_string(t.outcome) << '\n';
  }
}

}  // namespace uavcmdp
