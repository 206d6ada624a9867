#include "uavcmdp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace uavcmdp {

namespace fs = std::filesystem;

std::vector<int> GridWorldConfig::failure_bits() const {
  const int n = static_cast<int>(std::lround(area_side_m / resolution_m));
  if (n < 1 || std::abs(n * resolution_m - area_side_m) > 1e-9)
    throw ConfigError("grid resolution must divide the area side");
  if (static_cast<int>(rows.size()) != n) throw ConfigError("grid world needs one row per cell");
  std::vector<int> bits(static_cast<std::size_t>(n) * n, 0);
  for (int r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    if (static_cast<int>(row.size()) != n) throw ConfigError("grid world rows must have one character per cell");
    const int iy = n - 1 - r;
    for (int ix = 0; ix < n; ++ix) {
      const char c = row[static_cast<std::size_t>(ix)];
      if (c != '#' && c != '.') throw ConfigError("grid world cells must be '#' or '.'");
      bits[static_cast<std::size_t>(iy * n + ix)] = c == '#' ? 1 : 0;
    }
  }
  return bits;
}

std::string to_string(AgentKind k) { return k == AgentKind::Lyapunov ? "lyapunov" : "dueling"; }

void ExperimentConfig::validate() const {
  if (episodes < 0) throw ConfigError("episodes must be non-negative");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be at least 1");
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (map_J < 1 || step_J < 1 || export_map_J < 1) throw ConfigError("fading sample counts must be positive");
  if (!(success_threshold > 0.0 && success_threshold <= 1.0)) throw ConfigError("success_threshold must lie in (0, 1]");
}

namespace {

BandParams band_from(const nlohmann::json& j) {
  if (j.is_string()) return BandParams::preset(band_from_string(j.get<std::string>()));
  return j.get<BandParams>();
}

template <typename T>
void get_opt(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("scenario")) c.scenario = j.at("scenario");
  if (j.contains("grid_world")) {
    const auto& g = j.at("grid_world");
    GridWorldConfig gw;
    get_opt(g, "area_side_m", gw.area_side_m);
    get_opt(g, "resolution_m", gw.resolution_m);
    get_opt(g, "rows", gw.rows);
    gw.failure_bits();
    c.grid_world = gw;
  }
  if (j.contains("band")) c.band = band_from(j.at("band"));
  if (j.contains("transfer_band")) c.transfer_band = band_from(j.at("transfer_band"));
  if (j.contains("episode")) c.episode = j.at("episode").get<EpisodeConfig>();
  if (j.contains("failure_source")) {
    const auto s = j.at("failure_source").get<std::string>();
    if (s == "map") c.failure_source = FailureSource::Map;
    else if (s == "monte_carlo") c.failure_source = FailureSource::MonteCarlo;
    else throw ConfigError("unknown failure_source '" + s + "'");
  }
  get_opt(j, "map_resolution_m", c.map_resolution_m);
  get_opt(j, "map_J", c.map_J);
  get_opt(j, "step_J", c.step_J);
  get_opt(j, "export_map_J", c.export_map_J);
  if (j.contains("agent")) {
    const auto a = j.at("agent").get<std::string>();
    if (a == "lyapunov") c.agent = AgentKind::Lyapunov;
    else if (a == "dueling") c.agent = AgentKind::Dueling;
    else throw ConfigError("unknown agent '" + a + "'");
  }
  get_opt(j, "episodes", c.episodes);
  get_opt(j, "eval_every", c.eval_every);
  get_opt(j, "eval_episodes", c.eval_episodes);
  get_opt(j, "success_threshold", c.success_threshold);
  get_opt(j, "seeds", c.seeds);
  if (j.contains("lyapunov")) c.lyapunov = j.at("lyapunov").get<LyapunovConfig>();
  c.dueling.schedule_episodes = std::max(1, c.episodes);
  if (j.contains("dueling")) {
    nlohmann::json d = j.at("dueling");
    if (!d.contains("schedule_episodes")) d["schedule_episodes"] = c.dueling.schedule_episodes;
    c.dueling = d.get<DuelingConfig>();
  }
  if (j.contains("transfer")) c.transfer = j.at("transfer").get<TransferConfig>();
  c.validate();
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["scenario"] = c.scenario;
  if (c.grid_world)
    j["grid_world"] = {{"area_side_m", c.grid_world->area_side_m},
                       {"resolution_m", c.grid_world->resolution_m},
                       {"rows", c.grid_world->rows}};
  j["band"] = c.band;
  j["transfer_band"] = c.transfer_band;
  j["episode"] = c.episode;
  j["failure_source"] = c.failure_source == FailureSource::Map ? "map" : "monte_carlo";
  j["map_resolution_m"] = c.map_resolution_m;
  j["map_J"] = c.map_J;
  j["step_J"] = c.step_J;
  j["export_map_J"] = c.export_map_J;
  j["agent"] = to_string(c.agent);
  j["lyapunov"] = c.lyapunov;
  j["dueling"] = c.dueling;
  j["episodes"] = c.episodes;
  j["eval_every"] = c.eval_every;
  j["eval_episodes"] = c.eval_episodes;
  j["success_threshold"] = c.success_threshold;
  j["seeds"] = c.seeds;
  j["transfer"] = c.transfer;
  return j;
}

nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in " + p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

ExperimentConfig load_experiment(const fs::path& path) { return experiment_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------

Scenario make_scenario(const nlohmann::json& j) {
  if (j.is_null()) return generate_scenario(ScenarioConfig::preset(EnvClass::Urban));
  if (j.contains("buildings") || j.contains("base_stations")) return j.get<Scenario>();
  return generate_scenario(j.get<ScenarioConfig>());
}

World build_world(const ExperimentConfig& cfg, const BandParams& band) {
  World w;
  w.band = band;
  if (cfg.grid_world) {
    w.area_side_m = cfg.grid_world->area_side_m;
    w.map = make_failure_grid(w.area_side_m, cfg.grid_world->resolution_m, cfg.episode.altitude_m,
                              cfg.grid_world->failure_bits());
    w.map->band = band.band;
    w.failure = std::make_shared<MapFailureModel>(*w.map);
    return w;
  }
  auto scenario = std::make_shared<Scenario>(make_scenario(cfg.scenario));
  if (!(cfg.episode.altitude_m > scenario->max_bs_height()))
    throw ConfigError("flight altitude must exceed every base-station height");
  w.area_side_m = scenario->area_side();
  w.scenario = scenario;
  if (cfg.failure_source == FailureSource::Map) {
    const auto seed = derive_seed(scenario->config.seed, tag_of("failure_map"), tag_of(to_string(band.band)));
    w.map = build_radio_map(*scenario, band, cfg.episode.altitude_m, cfg.map_resolution_m, cfg.map_J, seed);
    w.failure = std::make_shared<MapFailureModel>(*w.map);
  } else {
    w.failure = std::make_shared<MonteCarloFailureModel>(scenario, band, cfg.step_J);
  }
  return w;
}

std::unique_ptr<Agent> make_agent(const ExperimentConfig& cfg, const Env& env, std::uint64_t seed) {
  if (cfg.agent == AgentKind::Lyapunov) return std::make_unique<LyapunovAgent>(cfg.lyapunov, env, seed);
  return std::make_unique<DuelingAgent>(cfg.dueling, env, seed);
}

std::unique_ptr<Agent> load_agent(const nlohmann::json& checkpoint, const Env& env) {
  const auto kind = checkpoint.at("kind").get<std::string>();
  if (kind == "lyapunov") return LyapunovAgent::from_checkpoint(checkpoint, env);
  if (kind == "dueling") return DuelingAgent::from_checkpoint(checkpoint, env);
  throw ConfigError("unknown checkpoint kind '" + kind + "'");
}

// ---------------------------------------------------------------------------

nlohmann::json EvalReport::to_json() const {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& r : episodes)
    eps.push_back({{"episode", r.episode},
                   {"start", {r.start.x, r.start.y, r.start.z}},
                   {"outcome", uavcmdp::to_string(r.outcome)},
                   {"d_O", r.d_o},
                   {"total_cost", r.total_cost},
                   {"steps", r.steps},
                   {"path_length_m", r.path_length_m}});
  return {{"mission_success_rate", success_rate},
          {"mean_d_O", mean_d_o},
          {"mean_cost", mean_cost},
          {"mean_success_path_m", mean_success_path_m},
          {"successes", successes},
          {"episodes", eps}};
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "episode,start_x,start_y,outcome,d_O,total_cost,steps,path_length_m\n";
  out << std::setprecision(17);
  for (const auto& r : episodes)
    out << r.episode << ',' << r.start.x << ',' << r.start.y << ',' << uavcmdp::to_string(r.outcome) << ',' << r.d_o
        << ',' << r.total_cost << ',' << r.steps << ',' << r.path_length_m << '\n';
}

EvalReport summarize(std::vector<EpisodeRecord> records) {
  EvalReport rep;
  double path = 0.0;
  for (const auto& r : records) {
    rep.mean_d_o += r.d_o;
    rep.mean_cost += r.total_cost;
    if (r.outcome == Outcome::Goal) {
      ++rep.successes;
      path += r.path_length_m;
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(records.size(), 1));
  rep.success_rate = rep.successes / n;
  rep.mean_d_o /= n;
  rep.mean_cost /= n;
  rep.mean_success_path_m = rep.successes > 0 ? path / rep.successes : 0.0;
  rep.episodes = std::move(records);
  return rep;
}

std::vector<Vec3> evaluation_starts(const Env& env, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> starts;
  starts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) starts.push_back(env.reset(rng).position);
  return starts;
}

namespace {

EpisodeRecord record_of(int episode, const std::vector<CmdpTransition>& ts, Vec3 start) {
  const auto ret = episode_return(ts);
  EpisodeRecord r;
  r.episode = episode;
  r.start = start;
  r.outcome = ret.outcome;
  r.d_o = ret.d_o;
  r.total_cost = ret.total_cost;
  r.steps = ret.steps;
  for (const auto& t : ts) r.path_length_m += distance(t.state.position, t.next_state.position);
  return r;
}

}  // namespace

EvalReport evaluate(Agent& agent, const Env& env, const std::vector<Vec3>& starts, std::uint64_t seed) {
  std::vector<EpisodeRecord> records(starts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < starts.size(); k = next++) {
      Rng rng(derive_seed(seed, tag_of("eval_episode"), k));
      UavState s = env.start_at(starts[k]);
      std::vector<CmdpTransition> ts;
      while (!s.done) {
        const auto a = static_cast<Action>(agent.act(s, ActMode::Greedy, rng));
        ts.push_back(env.step(s, a, rng));
        s = ts.back().next_state;
      }
      records[k] = record_of(static_cast<int>(k), ts, starts[k]);
    }
  };
  const int n_threads = std::min<int>(worker_threads(), static_cast<int>(starts.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return summarize(std::move(records));
}

EpisodeResult run_episode(Agent& agent, const Env& env, Rng& env_rng, Rng& act_rng, bool learn,
                          TeacherAdvisor* advisor) {
  EpisodeResult res;
  agent.begin_episode(act_rng);
  UavState s = env.reset(env_rng);
  while (!s.done) {
    const bool advised = advisor && advisor->should_advise(s);
    const int a = advised ? advisor->advise(s, act_rng) : agent.act(s, learn ? ActMode::Sample : ActMode::Greedy, act_rng);
    const auto t = env.step(s, static_cast<Action>(a), env_rng);
    if (advised) {
      advisor->record(t);
      ++res.advised;
      if (learn) {
        if (advisor->learn_from_advice()) agent.observe(t, false);
        else agent.cut_window();
      }
    } else if (learn) {
      agent.observe(t, true);
    }
    res.transitions.push_back(t);
    s = t.next_state;
  }
  if (advisor) advisor->end_episode();
  if (learn) res.stats = agent.end_episode();
  res.ret = episode_return(res.transitions);
  return res;
}

int episodes_to_threshold(const std::vector<CurvePoint>& curve, double threshold) {
  for (const auto& p : curve)
    if (p.success_rate >= threshold) return p.episode;
  return -1;
}

void write_learning_curve_csv(const std::vector<CurvePoint>& curve, std::ostream& out) {
  out << "episode,success_rate,mean_dO,mean_cost\n";
  out << std::setprecision(17);
  for (const auto& p : curve) out << p.episode << ',' << p.success_rate << ',' << p.mean_d_o << ',' << p.mean_cost << '\n';
}

std::vector<CurvePoint> read_learning_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "episode,success_rate,mean_dO,mean_cost")
    throw ConfigError("learning curve CSV has an unexpected header");
  std::vector<CurvePoint> curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    CurvePoint p;
    char comma = 0;
    ss >> p.episode >> comma >> p.success_rate >> comma >> p.mean_d_o >> comma >> p.mean_cost;
    if (!ss) throw ConfigError("malformed learning curve row: " + line);
    curve.push_back(p);
  }
  return curve;
}

namespace {

nlohmann::json metrics_record(int episode, const EpisodeResult& r, bool with_advice) {
  nlohmann::json m{{"episode", episode},
                   {"total_cost", r.ret.total_cost},
                   {"d_O", r.ret.d_o},
                   {"outcome", to_string(r.ret.outcome)},
                   {"loss_c", r.stats.loss_c},
                   {"loss_d", r.stats.loss_d},
                   {"kl", r.stats.kl}};
  if (with_advice)
    m["advice_rate"] = r.transitions.empty() ? 0.0 : static_cast<double>(r.advised) / r.transitions.size();
  return m;
}

CurvePoint curve_point(int episode, const EvalReport& rep) {
  return {episode, rep.success_rate, rep.mean_d_o, rep.mean_cost, rep.mean_success_path_m};
}

}  // namespace

TrainingResult train_agent(Agent& agent, const Env& env, const ExperimentConfig& cfg, std::uint64_t seed,
                           const fs::path& out_dir, TeacherAdvisor* advisor) {
  const bool write = !out_dir.empty();
  std::ofstream metrics;
  if (write) {
    fs::create_directories(out_dir);
    metrics.open(out_dir / "metrics.jsonl");
  }
  const auto starts = evaluation_starts(env, cfg.eval_episodes, derive_seed(seed, tag_of("eval_starts")));
  const auto eval_seed = derive_seed(seed, tag_of("eval"));
  Rng env_rng(derive_seed(seed, tag_of("train_env")));
  Rng act_rng(derive_seed(seed, tag_of("train_act")));

  TrainingResult result;
  nlohmann::json eval_log = nlohmann::json::array();
  bool evaluated_last = false;
  for (int ep = 1; ep <= cfg.episodes; ++ep) {
    const auto r = run_episode(agent, env, env_rng, act_rng, true, advisor);
    if (!std::isfinite(r.ret.total_cost) || !std::isfinite(r.stats.loss_c) || !std::isfinite(r.stats.loss_d))
      throw DivergenceError("non-finite metrics at episode " + std::to_string(ep));
    if (advisor)
      result.advice_rate.push_back(r.transitions.empty() ? 0.0
                                                         : static_cast<double>(r.advised) / r.transitions.size());
    if (write) metrics << metrics_record(ep, r, advisor != nullptr).dump() << '\n';
    evaluated_last = false;
    if (cfg.eval_every > 0 && ep % cfg.eval_every == 0) {
      result.final_eval = evaluate(agent, env, starts, eval_seed);
      result.curve.push_back(curve_point(ep, result.final_eval));
      evaluated_last = true;
    }
  }
  if (!evaluated_last) {
    result.final_eval = evaluate(agent, env, starts, eval_seed);
    result.curve.push_back(curve_point(cfg.episodes, result.final_eval));
  }
  result.checkpoint = agent.checkpoint();
  if (write) {
    std::ofstream curve(out_dir / "learning_curve.csv");
    write_learning_curve_csv(result.curve, curve);
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& p : result.curve)
      summary.push_back({{"episode", p.episode},
                         {"success_rate", p.success_rate},
                         {"mean_dO", p.mean_d_o},
                         {"mean_cost", p.mean_cost},
                         {"mean_success_path_m", p.mean_success_path_m}});
    write_json_file(out_dir / "eval_checkpoints.json", summary);
    write_json_file(out_dir / "checkpoint.json", result.checkpoint);
    write_json_file(out_dir / "eval_report.json", result.final_eval.to_json());
    std::ofstream csv(out_dir / "eval_episodes.csv");
    result.final_eval.write_csv(csv);
  }
  return result;
}

namespace {

void write_world(const World& w, const fs::path& out_dir) {
  if (w.scenario) write_json_file(out_dir / "scenario.json", *w.scenario);
  if (w.map) {
    std::ofstream csv(out_dir / ("failure_map_" + to_string(w.band.band) + ".csv"));
    write_radio_map_csv(*w.map, csv);
  }
}

nlohmann::json run_metadata(const ExperimentConfig& cfg, std::uint64_t seed, const World& w) {
  nlohmann::json meta{{"seed", seed}, {"agent", to_string(cfg.agent)}, {"band", to_string(w.band.band)},
                      {"area_side_m", w.area_side_m}, {"config", to_json(cfg)}};
  meta["learning_rate"] = cfg.agent == AgentKind::Dueling ? cfg.dueling.lr : cfg.lyapunov.lr_q;
  if (w.scenario) meta["scenario_seed"] = w.scenario->config.seed;
  return meta;
}

}  // namespace

TrainingResult run_training(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out_dir) {
  const World w = build_world(cfg, cfg.band);
  const Env env(cfg.episode, w.area_side_m, w.failure);
  auto agent = make_agent(cfg, env, seed);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json_file(out_dir / "run.json", run_metadata(cfg, seed, w));
    write_world(w, out_dir);
  }
  return train_agent(*agent, env, cfg, seed, out_dir);
}

EvalReport run_evaluation(const nlohmann::json& checkpoint, const ExperimentConfig& cfg, std::uint64_t seed,
                          const fs::path& out_dir) {
  const World w = build_world(cfg, cfg.band);
  const Env env(cfg.episode, w.area_side_m, w.failure);
  auto agent = load_agent(checkpoint, env);
  const auto starts = evaluation_starts(env, cfg.eval_episodes, derive_seed(seed, tag_of("eval_starts")));
  auto rep = evaluate(*agent, env, starts, derive_seed(seed, tag_of("eval")));
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json_file(out_dir / "eval_report.json", rep.to_json());
    std::ofstream csv(out_dir / "eval_episodes.csv");
    rep.write_csv(csv);
  }
  return rep;
}

TransferResult run_transfer_experiment(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out_dir,
                                       const nlohmann::json* teacher_checkpoint) {
  nlohmann::json teacher_json;
  if (teacher_checkpoint) {
    teacher_json = *teacher_checkpoint;
  } else {
    if (cfg.transfer.teacher_checkpoint.empty()) throw ConfigError("transfer needs a teacher checkpoint");
    teacher_json = read_json_file(cfg.transfer.teacher_checkpoint);
  }
  const World w = build_world(cfg, cfg.transfer_band);
  const Env env(cfg.episode, w.area_side_m, w.failure);
  auto teacher = LyapunovAgent::from_checkpoint(teacher_json, env);

  const bool write = !out_dir.empty();
  if (write) {
    fs::create_directories(out_dir);
    write_json_file(out_dir / "run.json", run_metadata(cfg, seed, w));
    write_world(w, out_dir);
  }

  TransferResult res;
  LyapunovAgent student(cfg.lyapunov, env, seed);
  Rng noise_rng(derive_seed(seed, tag_of("transfer_noise")));
  transfer_weights(*teacher, student, cfg.transfer.noise_sigma, noise_rng, cfg.transfer.transfer_value_nets);
  Rng boot_rng(derive_seed(seed, tag_of("bootstrap")));
  KnownSpaceMemory known = build_known_space(*teacher, env, cfg.transfer, boot_rng, &res.bootstrap);
  TeacherAdvisor advisor(*teacher, known, cfg.transfer.learn_from_advice);
  res.with_tl = train_agent(student, env, cfg, seed, write ? out_dir / "with_tl" : fs::path{}, &advisor);

  LyapunovAgent scratch(cfg.lyapunov, env, seed);
  res.scratch = train_agent(scratch, env, cfg, seed, write ? out_dir / "scratch" : fs::path{});

  res.episodes_to_threshold_tl = episodes_to_threshold(res.with_tl.curve, cfg.success_threshold);
  res.episodes_to_threshold_scratch = episodes_to_threshold(res.scratch.curve, cfg.success_threshold);

  if (write) {
    std::ofstream cmp(out_dir / "comparison.csv");
    cmp << "episode,tl_success_rate,scratch_success_rate,tl_mean_dO,scratch_mean_dO\n" << std::setprecision(17);
    for (std::size_t i = 0; i < std::min(res.with_tl.curve.size(), res.scratch.curve.size()); ++i) {
      const auto& a = res.with_tl.curve[i];
      const auto& b = res.scratch.curve[i];
      cmp << a.episode << ',' << a.success_rate << ',' << b.success_rate << ',' << a.mean_d_o << ',' << b.mean_d_o
          << '\n';
    }
    nlohmann::json summary{{"success_threshold", cfg.success_threshold},
                           {"episodes_to_threshold_tl", res.episodes_to_threshold_tl},
                           {"episodes_to_threshold_scratch", res.episodes_to_threshold_scratch},
                           {"d_th", cfg.episode.d_th},
                           {"bootstrap_interactions", res.bootstrap.interactions},
                           {"bootstrap_trajectories", res.bootstrap.trajectories},
                           {"bootstrap_memory_size", res.bootstrap.memory_size},
                           {"final_known_space_size", known.size()}};
    if (w.scenario) summary["scenario_seed"] = w.scenario->config.seed;
    write_json_file(out_dir / "summary.json", summary);
    write_json_file(out_dir / "known_space.json", known.to_json());
  }
  return res;
}

}  // namespace uavcmdp
