#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavcmdp/agent.hpp"
#include "uavcmdp/dueling.hpp"
#include "uavcmdp/env.hpp"
#include "uavcmdp/lyapunov.hpp"
#include "uavcmdp/radio.hpp"
#include "uavcmdp/scenario.hpp"
#include "uavcmdp/transfer.hpp"

namespace uavcmdp {

/// Hand-drawn failure layout; rows[0] is the northernmost row ('#' = failure, '.' = free).
struct GridWorldConfig {
  double area_side_m = 100.0;
  double resolution_m = 10.0;
  std::vector<std::string> rows;

  std::vector<int> failure_bits() const;  // row-major from y = 0
};

enum class FailureSource { Map, MonteCarlo };
enum class AgentKind { Lyapunov, Dueling };

struct ExperimentConfig {
  nlohmann::json scenario;                 // ScenarioConfig fields or a full scenario document
  std::optional<GridWorldConfig> grid_world;  // replaces the radio world when set
  BandParams band = BandParams::sub6();
  BandParams transfer_band = BandParams::mmwave();
  EpisodeConfig episode;
  FailureSource failure_source = FailureSource::Map;
  double map_resolution_m = 10.0;
  int map_J = 100;   // fading draws per cell of the training failure map
  int step_J = 100;  // fading draws per step under Monte-Carlo failures
  int export_map_J = 10000;
  AgentKind agent = AgentKind::Lyapunov;
  LyapunovConfig lyapunov;
  DuelingConfig dueling;
  int episodes = 5000;
  int eval_every = 100;
  int eval_episodes = 500;
  double success_threshold = 0.8;
  std::vector<std::uint64_t> seeds{1};
  TransferConfig transfer;

  void validate() const;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_experiment(const std::filesystem::path& path);

std::string to_string(AgentKind k);

/// Static world plus the failure source seen by the environment in one band.
struct World {
  std::shared_ptr<const Scenario> scenario;  // null for grid worlds
  BandParams band;
  std::shared_ptr<const FailureModel> failure;
  std::optional<RadioMap> map;
  double area_side_m = 0.0;
};

Scenario make_scenario(const nlohmann::json& j);
World build_world(const ExperimentConfig& cfg, const BandParams& band);

std::unique_ptr<Agent> make_agent(const ExperimentConfig& cfg, const Env& env, std::uint64_t seed);
std::unique_ptr<Agent> load_agent(const nlohmann::json& checkpoint, const Env& env);

struct EpisodeRecord {
  int episode = 0;
  Vec3 start;
  Outcome outcome = Outcome::Running;
  int d_o = 0;
  double total_cost = 0.0;
  int steps = 0;
  double path_length_m = 0.0;
  double advice_rate = 0.0;
};

struct EvalReport {
  double success_rate = 0.0;
  double mean_d_o = 0.0;
  double mean_cost = 0.0;
  double mean_success_path_m = 0.0;  // 0 when no episode succeeded
  int successes = 0;
  std::vector<EpisodeRecord> episodes;

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

/// Aggregates per-episode records into a report.
EvalReport summarize(std::vector<EpisodeRecord> records);

/// Admissible starts drawn once and reused at every evaluation checkpoint.
std::vector<Vec3> evaluation_starts(const Env& env, int n, std::uint64_t seed);

/// Greedy rollouts from the given starts; episodes fan out over worker threads.
EvalReport evaluate(Agent& agent, const Env& env, const std::vector<Vec3>& starts, std::uint64_t seed);

struct EpisodeResult {
  std::vector<CmdpTransition> transitions;
  EpisodeReturn ret;
  LearnStats stats;
  int advised = 0;
};

/// One training episode. With an advisor, unknown states are handled by the teacher.
EpisodeResult run_episode(Agent& agent, const Env& env, Rng& env_rng, Rng& act_rng, bool learn,
                          TeacherAdvisor* advisor = nullptr);

struct CurvePoint {
  int episode = 0;
  double success_rate = 0.0;
  double mean_d_o = 0.0;
  double mean_cost = 0.0;
  double mean_success_path_m = 0.0;
};

struct TrainingResult {
  std::vector<CurvePoint> curve;
  EvalReport final_eval;
  nlohmann::json checkpoint;
  std::vector<double> advice_rate;  // per training episode, empty without an advisor
};

/// First checkpoint episode whose success rate reaches the threshold, or -1.
int episodes_to_threshold(const std::vector<CurvePoint>& curve, double threshold);

void write_learning_curve_csv(const std::vector<CurvePoint>& curve, std::ostream& out);
std::vector<CurvePoint> read_learning_curve_csv(std::istream& in);

/// Trains with periodic evaluation. Artifacts go to out_dir when it is non-empty.
TrainingResult train_agent(Agent& agent, const Env& env, const ExperimentConfig& cfg, std::uint64_t seed,
                           const std::filesystem::path& out_dir, TeacherAdvisor* advisor = nullptr);

TrainingResult run_training(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir);

EvalReport run_evaluation(const nlohmann::json& checkpoint, const ExperimentConfig& cfg, std::uint64_t seed,
                          const std::filesystem::path& out_dir);

struct TransferResult {
  TrainingResult with_tl;
  TrainingResult scratch;
  int episodes_to_threshold_tl = -1;
  int episodes_to_threshold_scratch = -1;
  BootstrapLog bootstrap;
};

/// Paired runs in the transfer band: teacher-advised with transferred weights, and from scratch.
/// The teacher comes from cfg.transfer.teacher_checkpoint unless given explicitly.
TransferResult run_transfer_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                       const std::filesystem::path& out_dir,
                                       const nlohmann::json* teacher_checkpoint = nullptr);

nlohmann::json read_json_file(const std::filesystem::path& p);
void write_json_file(const std::filesystem::path& p, const nlohmann::json& j);

}  // namespace uavcmdp
