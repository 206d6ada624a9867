#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavcmdp/common.hpp"

namespace uavcmdp {

enum class EnvClass { Urban, DenseUrban, HighRise, Custom };

std::string to_string(EnvClass c);
EnvClass env_class_from_string(const std::string& s);

/// Static world parameters. Building statistics follow the ITU
/// (built ratio, density, Rayleigh height scale) parameterization.
struct ScenarioConfig {
  EnvClass env_class = EnvClass::Urban;
  double area_side_m = 1000.0;
  double built_ratio = 0.3;
  double bldg_density_per_km2 = 500.0;
  double height_scale_m = 15.0;
  int bs_count = 7;
  double bs_height_m = 25.0;
  std::uint64_t seed = 1;

  // Base-station radio defaults.
  double tilt_sub6_deg = -10.0;  // boresight elevation, negative = downtilt
  double tilt_mmwave_deg = 10.0;
  double tx_power_sub6_dbm = 36.0;
  double tx_power_mmwave_dbm = 30.0;
  int elements_sub6 = 8;
  int elements_mmwave = 64;

  // Layout knobs for the hexagonal placement.
  double bs_jitter_frac = 0.1;  // jitter radius as a fraction of the lattice pitch
  double min_bs_spacing_m = 50.0;
  double sector_azimuth_offset_deg = 30.0;

  int max_placement_retries = 200;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  static ScenarioConfig preset(EnvClass c);
};

/// Axis-aligned box: a rectangular footprint extruded from the ground to height_m.
struct Building {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double height_m = 0.0;

  double footprint_area() const { return (x1 - x0) * (y1 - y0); }
};

using BuildingSet = std::vector<Building>;

struct BaseStation {
  Vec3 position;
  std::array<double, 3> sector_azimuth_deg{0.0, 120.0, 240.0};
  double tilt_sub6_deg = -10.0;
  double tilt_mmwave_deg = 10.0;
  double tx_power_sub6_dbm = 36.0;
  double tx_power_mmwave_dbm = 30.0;
  int elements_sub6 = 8;
  int elements_mmwave = 64;
};

struct Scenario {
  ScenarioConfig config;
  BuildingSet buildings;
  std::vector<BaseStation> base_stations;

  double area_side() const { return config.area_side_m; }
  double max_bs_height() const;
};

BuildingSet generate_buildings(const ScenarioConfig& cfg, Rng& rng);

std::vector<BaseStation> place_base_stations(const ScenarioConfig& cfg, Rng& rng);

/// Nominal hexagonal lattice pitch used by place_base_stations.
double nominal_bs_pitch(const ScenarioConfig& cfg);

/// Full world from the config seed: buildings then base stations, each from its own sub-stream.
Scenario generate_scenario(const ScenarioConfig& cfg);

/// True iff the open segment p-q meets no building interior. Touching a face is LoS.
bool is_los(Vec3 p, Vec3 q, const BuildingSet& buildings);

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);
void to_json(nlohmann::json& j, const Building& b);
void from_json(const nlohmann::json& j, Building& b);
void to_json(nlohmann::json& j, const BaseStation& b);
void from_json(const nlohmann::json& j, BaseStation& b);
void to_json(nlohmann::json& j, const Scenario& s);
void from_json(const nlohmann::json& j, Scenario& s);

}  // namespace uavcmdp
