#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "uavcmdp/harness.hpp"

namespace fs = std::filesystem;
using namespace uavcmdp;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "Seed");
  cmd->add_option("--out", a.out, "Output directory");
}

nlohmann::json scenario_section(const nlohmann::json& doc) {
  if (doc.contains("scenario")) return doc.at("scenario");
  return doc;
}

int scenario_gen(const CommonArgs& a) {
  const auto doc = read_json_file(a.config);
  ScenarioConfig sc = scenario_section(doc).get<ScenarioConfig>();
  if (a.seed) sc.seed = *a.seed;
  const Scenario s = generate_scenario(sc);
  fs::create_directories(a.out);
  write_json_file(fs::path(a.out) / "scenario.json", s);
  std::cout << "scenario: " << s.buildings.size() << " buildings, " << s.base_stations.size()
            << " base stations, seed " << sc.seed << '\n';
  return 0;
}

int map_build(const CommonArgs& a, const std::string& band_name) {
  const auto cfg = load_experiment(a.config);
  const Scenario s = make_scenario(cfg.scenario);
  const std::uint64_t seed = a.seed.value_or(s.config.seed);
  fs::create_directories(a.out);
  write_json_file(fs::path(a.out) / "scenario.json", s);
  for (const BandParams& band : {cfg.band, cfg.transfer_band}) {
    const auto name = to_string(band.band);
    if (!band_name.empty() && band_name != name) continue;
    const auto map = build_radio_map(s, band, cfg.episode.altitude_m, cfg.map_resolution_m, cfg.export_map_J,
                                     derive_seed(seed, tag_of("radio_map"), tag_of(name)));
    std::ofstream out(fs::path(a.out) / ("radio_map_" + name + ".csv"));
    write_radio_map_csv(map, out);
    int failures = 0;
    for (const auto& c : map.cells) failures += c.failure;
    std::cout << name << ": " << map.cells.size() << " cells, " << failures << " in outage\n";
  }
  return 0;
}

void print_eval(const std::string& label, const EvalReport& r) {
  std::cout << label << "success_rate " << r.success_rate << ", mean d_O " << r.mean_d_o << ", mean cost "
            << r.mean_cost << '\n';
}

int train(const CommonArgs& a) {
  const auto cfg = load_experiment(a.config);
  if (a.seed) {
    print_eval("", run_training(cfg, *a.seed, a.out).final_eval);
    return 0;
  }
  for (const auto seed : cfg.seeds) {
    const auto dir = fs::path(a.out) / ("seed_" + std::to_string(seed));
    print_eval("seed " + std::to_string(seed) + ": ", run_training(cfg, seed, dir).final_eval);
  }
  return 0;
}

int eval(const CommonArgs& a, const std::string& checkpoint) {
  const auto cfg = load_experiment(a.config);
  const auto ckpt = read_json_file(checkpoint);
  print_eval("", run_evaluation(ckpt, cfg, a.seed.value_or(cfg.seeds.front()), a.out));
  return 0;
}

int transfer(const CommonArgs& a, const std::string& teacher) {
  const auto cfg = load_experiment(a.config);
  std::optional<nlohmann::json> t;
  if (!teacher.empty()) t = read_json_file(teacher);
  const auto r = run_transfer_experiment(cfg, a.seed.value_or(cfg.seeds.front()), a.out, t ? &*t : nullptr);
  std::cout << "episodes to threshold: with transfer " << r.episodes_to_threshold_tl << ", from scratch "
            << r.episodes_to_threshold_scratch << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV path design under a radio-failure budget"};
  app.require_subcommand(1);

  CommonArgs gen_args, map_args, train_args, eval_args, tl_args;
  std::string band_name, checkpoint, teacher;

  auto* scenario = app.add_subcommand("scenario", "Scenario tools");
  scenario->require_subcommand(1);
  auto* gen = scenario->add_subcommand("gen", "Generate buildings and base stations");
  add_common(gen, gen_args);

  auto* map = app.add_subcommand("map", "Radio map tools");
  map->require_subcommand(1);
  auto* build = map->add_subcommand("build", "Rasterize SINR, outage and failure maps");
  add_common(build, map_args);
  build->add_option("--band", band_name, "Only this band")->check(CLI::IsMember({"sub6", "mmwave"}));

  auto* tr = app.add_subcommand("train", "Train an agent with periodic evaluation");
  add_common(tr, train_args);

  auto* ev = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  add_common(ev, eval_args);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);

  auto* tl = app.add_subcommand("transfer", "Teacher-advised training against a from-scratch baseline");
  add_common(tl, tl_args);
  tl->add_option("--teacher", teacher, "Teacher checkpoint JSON")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return scenario_gen(gen_args);
    if (*build) return map_build(map_args, band_name);
    if (*tr) return train(train_args);
    if (*ev) return eval(eval_args, checkpoint);
    if (*tl) return transfer(tl_args, teacher);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
