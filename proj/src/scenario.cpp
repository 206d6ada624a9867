#include "uavcmdp/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace uavcmdp {

std::string to_string(EnvClass c) {
  switch (c) {
    case EnvClass::Urban: return "urban";
    case EnvClass::DenseUrban: return "dense_urban";
    case EnvClass::HighRise: return "high_rise";
    case EnvClass::Custom: return "custom";
  }
  return "custom";
}

EnvClass env_class_from_string(const std::string& s) {
  if (s == "urban") return EnvClass::Urban;
  if (s == "dense_urban") return EnvClass::DenseUrban;
  if (s == "high_rise") return EnvClass::HighRise;
  if (s == "custom") return EnvClass::Custom;
  throw ConfigError("unknown environment class '" + s + "'");
}

void ScenarioConfig::validate() const {
  if (!(area_side_m > 0.0)) throw ConfigError("area_side_m must be positive");
  if (!(built_ratio > 0.0 && built_ratio < 1.0)) throw ConfigError("built_ratio must lie in (0, 1)");
  if (!(bldg_density_per_km2 > 0.0)) throw ConfigError("bldg_density_per_km2 must be positive");
  if (!(height_scale_m > 0.0)) throw ConfigError("height_scale_m must be positive");
  if (!(bs_height_m > 0.0)) throw ConfigError("bs_height_m must be positive");
  if (bs_count < 1) throw ConfigError("bs_count must be at least 1");
  if (elements_sub6 < 1 || elements_mmwave < 1) throw ConfigError("element counts must be at least 1");
  if (bs_jitter_frac < 0.0 || bs_jitter_frac > 0.1)
    throw ConfigError("bs_jitter_frac must lie in [0, 0.1]");
}

ScenarioConfig ScenarioConfig::preset(EnvClass c) {
  ScenarioConfig cfg;
  cfg.env_class = c;
  switch (c) {
    case EnvClass::Urban:
      cfg.built_ratio = 0.3;
      cfg.bldg_density_per_km2 = 500.0;
      cfg.height_scale_m = 15.0;
      cfg.bs_count = 7;
      cfg.bs_height_m = 25.0;
      break;
    case EnvClass::DenseUrban:
      cfg.built_ratio = 0.5;
      cfg.bldg_density_per_km2 = 300.0;
      cfg.height_scale_m = 20.0;
      cfg.bs_count = 7;
      cfg.bs_height_m = 25.0;
      break;
    case EnvClass::HighRise:
      cfg.built_ratio = 0.5;
      cfg.bldg_density_per_km2 = 300.0;
      cfg.height_scale_m = 50.0;
      cfg.bs_count = 7;
      cfg.bs_height_m = 35.0;
      break;
    case EnvClass::Custom:
      break;
  }
  return cfg;
}

double Scenario::max_bs_height() const {
  double h = 0.0;
  for (const auto& bs : base_stations) h = std::max(h, bs.position.z);
  return h;
}

namespace {

double rayleigh(Rng& rng, double scale) {
  for (;;) {
    const double u = 1.0 - uniform01(rng);  // (0, 1]
    const double h = scale * std::sqrt(-2.0 * std::log(u));
    if (h > 0.0) return h;
  }
}

bool overlaps(const Building& a, const Building& b) {
  return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

}  // namespace

BuildingSet generate_buildings(const ScenarioConfig& cfg, Rng& rng) {
  cfg.validate();
  const double L = cfg.area_side_m;
  const double area_km2 = (L / 1000.0) * (L / 1000.0);
  const double side = std::sqrt(cfg.built_ratio * 1.0e6 / cfg.bldg_density_per_km2);
  if (side >= L) throw ConfigError("building footprint does not fit inside the area");

  std::poisson_distribution<int> count_dist(cfg.bldg_density_per_km2 * area_km2);
  const int n = count_dist(rng);

  BuildingSet out;
  out.reserve(static_cast<std::size_t>(n));
  if (n == 0) return out;

  const int k = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const double pitch = L / k;

  if (side < pitch) {
    // Jittered grid: each building owns a distinct cell, so footprints never overlap.
    std::vector<int> cells(static_cast<std::size_t>(k) * k);
    std::iota(cells.begin(), cells.end(), 0);
    for (std::size_t i = cells.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
      std::swap(cells[i], cells[std::min(j, i)]);
    }
    for (int b = 0; b < n; ++b) {
      const int cell = cells[static_cast<std::size_t>(b)];
      const double cx = (cell % k) * pitch;
      const double cy = (cell / k) * pitch;
      Building bl;
      bl.x0 = cx + uniform01(rng) * (pitch - side);
      bl.y0 = cy + uniform01(rng) * (pitch - side);
      bl.x1 = bl.x0 + side;
      bl.y1 = bl.y0 + side;
      out.push_back(bl);
    }
  } else {
    // Footprints larger than a cell: random sequential placement with rejection.
    for (int b = 0; b < n; ++b) {
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_placement_retries && !placed; ++attempt) {
        Building bl;
        bl.x0 = uniform01(rng) * (L - side);
        bl.y0 = uniform01(rng) * (L - side);
        bl.x1 = bl.x0 + side;
        bl.y1 = bl.y0 + side;
        placed = std::none_of(out.begin(), out.end(), [&](const Building& o) { return overlaps(o, bl); });
        if (placed) out.push_back(bl);
      }
      if (!placed)
        throw ConfigError("cannot place non-overlapping buildings for built_ratio=" +
                          std::to_string(cfg.built_ratio) +
                          ", density=" + std::to_string(cfg.bldg_density_per_km2));
    }
  }
  for (auto& bl : out) bl.height_m = rayleigh(rng, cfg.height_scale_m);
  return out;
}

namespace {

struct LatticePoint {
  double x, y;
};

// Lattice sites around the origin ordered by distance, then angle.
std::vector<LatticePoint> hex_sites(int count, double pitch) {
  const int rings = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count)))) + 2;
  std::vector<LatticePoint> pts;
  for (int j = -rings; j <= rings; ++j) {
    for (int i = -rings; i <= rings; ++i) {
      pts.push_back({(i + 0.5 * j) * pitch, j * pitch * std::sqrt(3.0) / 2.0});
    }
  }
  std::sort(pts.begin(), pts.end(), [](const LatticePoint& a, const LatticePoint& b) {
    const double ra = std::hypot(a.x, a.y), rb = std::hypot(b.x, b.y);
    if (std::abs(ra - rb) > 1e-9) return ra < rb;
    return std::atan2(a.y, a.x) < std::atan2(b.y, b.x);
  });
  pts.resize(static_cast<std::size_t>(count));
  double mx = 0.0, my = 0.0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= count;
  my /= count;
  for (auto& p : pts) {
    p.x -= mx;
    p.y -= my;
  }
  return pts;
}

bool fits(const std::vector<LatticePoint>& pts, double half, double margin) {
  return std::all_of(pts.begin(), pts.end(), [&](const LatticePoint& p) {
    return std::abs(p.x) <= half - margin && std::abs(p.y) <= half - margin;
  });
}

}  // namespace

double nominal_bs_pitch(const ScenarioConfig& cfg) {
  cfg.validate();
  const double L = cfg.area_side_m;
  if (cfg.bs_count == 1) return L;
  double pitch = L * std::sqrt(2.0 / (std::sqrt(3.0) * cfg.bs_count));
  for (;;) {
    const auto pts = hex_sites(cfg.bs_count, pitch);
    if (fits(pts, L / 2.0, cfg.bs_jitter_frac * pitch)) return pitch;
    pitch *= 0.95;
    if (pitch < cfg.min_bs_spacing_m)
      throw ConfigError("bs_count=" + std::to_string(cfg.bs_count) +
                        " does not fit at the minimum spacing");
  }
}

std::vector<BaseStation> place_base_stations(const ScenarioConfig& cfg, Rng& rng) {
  const double L = cfg.area_side_m;
  const double pitch = nominal_bs_pitch(cfg);
  const auto pts = cfg.bs_count == 1 ? std::vector<LatticePoint>{{0.0, 0.0}} : hex_sites(cfg.bs_count, pitch);
  const double jitter = cfg.bs_count == 1 ? 0.0 : cfg.bs_jitter_frac * pitch;

  std::vector<BaseStation> out;
  for (const auto& p : pts) {
    BaseStation bs;
    const double r = jitter * std::sqrt(uniform01(rng));
    const double a = 2.0 * kPi * uniform01(rng);
    bs.position = {std::clamp(L / 2.0 + p.x + r * std::cos(a), 0.0, L),
                   std::clamp(L / 2.0 + p.y + r * std::sin(a), 0.0, L), cfg.bs_height_m};
    for (int s = 0; s < 3; ++s) bs.sector_azimuth_deg[s] = cfg.sector_azimuth_offset_deg + 120.0 * s;
    bs.tilt_sub6_deg = cfg.tilt_sub6_deg;
    bs.tilt_mmwave_deg = cfg.tilt_mmwave_deg;
    bs.tx_power_sub6_dbm = cfg.tx_power_sub6_dbm;
    bs.tx_power_mmwave_dbm = cfg.tx_power_mmwave_dbm;
    bs.elements_sub6 = cfg.elements_sub6;
    bs.elements_mmwave = cfg.elements_mmwave;
    out.push_back(bs);
  }
  return out;
}

Scenario generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  Scenario s;
  s.config = cfg;
  Rng b_rng(derive_seed(cfg.seed, tag_of("buildings")));
  s.buildings = generate_buildings(cfg, b_rng);
  Rng s_rng(derive_seed(cfg.seed, tag_of("base_stations")));
  s.base_stations = place_base_stations(cfg, s_rng);
  return s;
}

bool is_los(Vec3 p, Vec3 q, const BuildingSet& buildings) {
  const Vec3 d = q - p;
  const double pa[3] = {p.x, p.y, p.z};
  const double da[3] = {d.x, d.y, d.z};
  for (const auto& b : buildings) {
    const double lo[3] = {b.x0, b.y0, 0.0};
    const double hi[3] = {b.x1, b.y1, b.height_m};
    double t0 = 0.0, t1 = 1.0;
    bool blocked = true;
    for (int k = 0; k < 3 && blocked; ++k) {
      if (da[k] == 0.0) {
        // Parallel to this slab: must be strictly inside it.
        if (!(pa[k] > lo[k] && pa[k] < hi[k])) blocked = false;
        continue;
      }
      double ta = (lo[k] - pa[k]) / da[k];
      double tb = (hi[k] - pa[k]) / da[k];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (!(t0 < t1)) blocked = false;
    }
    if (blocked) return false;
  }
  return true;
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{{"env_class", to_string(c.env_class)},
                     {"area_side_m", c.area_side_m},
                     {"built_ratio", c.built_ratio},
                     {"bldg_density_per_km2", c.bldg_density_per_km2},
                     {"height_scale_m", c.height_scale_m},
                     {"bs_count", c.bs_count},
                     {"bs_height_m", c.bs_height_m},
                     {"seed", c.seed},
                     {"tilt_sub6_deg", c.tilt_sub6_deg},
                     {"tilt_mmwave_deg", c.tilt_mmwave_deg},
                     {"tx_power_sub6_dbm", c.tx_power_sub6_dbm},
                     {"tx_power_mmwave_dbm", c.tx_power_mmwave_dbm},
                     {"elements_sub6", c.elements_sub6},
                     {"elements_mmwave", c.elements_mmwave},
                     {"bs_jitter_frac", c.bs_jitter_frac},
                     {"min_bs_spacing_m", c.min_bs_spacing_m},
                     {"sector_azimuth_offset_deg", c.sector_azimuth_offset_deg},
                     {"max_placement_retries", c.max_placement_retries}};
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  // A named class seeds the defaults; explicit fields override them.
  if (j.contains("env_class")) c = ScenarioConfig::preset(env_class_from_string(j.at("env_class")));
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("area_side_m", c.area_side_m);
  get("built_ratio", c.built_ratio);
  get("bldg_density_per_km2", c.bldg_density_per_km2);
  get("height_scale_m", c.height_scale_m);
  get("bs_count", c.bs_count);
  get("bs_height_m", c.bs_height_m);
  get("seed", c.seed);
  get("tilt_sub6_deg", c.tilt_sub6_deg);
  get("tilt_mmwave_deg", c.tilt_mmwave_deg);
  get("tx_power_sub6_dbm", c.tx_power_sub6_dbm);
  get("tx_power_mmwave_dbm", c.tx_power_mmwave_dbm);
  get("elements_sub6", c.elements_sub6);
  get("elements_mmwave", c.elements_mmwave);
  get("bs_jitter_frac", c.bs_jitter_frac);
  get("min_bs_spacing_m", c.min_bs_spacing_m);
  get("sector_azimuth_offset_deg", c.sector_azimuth_offset_deg);
  get("max_placement_retries", c.max_placement_retries);
}

void to_json(nlohmann::json& j, const Building& b) {
  j = nlohmann::json{{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}, {"height_m", b.height_m}};
}

void from_json(const nlohmann::json& j, Building& b) {
  j.at("x0").get_to(b.x0);
  j.at("y0").get_to(b.y0);
  j.at("x1").get_to(b.x1);
  j.at("y1").get_to(b.y1);
  j.at("height_m").get_to(b.height_m);
}

void to_json(nlohmann::json& j, const BaseStation& b) {
  j = nlohmann::json{{"position", {b.position.x, b.position.y, b.position.z}},
                     {"sector_azimuth_deg", b.sector_azimuth_deg},
                     {"tilt_sub6_deg", b.tilt_sub6_deg},
                     {"tilt_mmwave_deg", b.tilt_mmwave_deg},
                     {"tx_power_sub6_dbm", b.tx_power_sub6_dbm},
                     {"tx_power_mmwave_dbm", b.tx_power_mmwave_dbm},
                     {"elements_sub6", b.elements_sub6},
                     {"elements_mmwave", b.elements_mmwave}};
}

void from_json(const nlohmann::json& j, BaseStation& b) {
  const auto& p = j.at("position");
  b.position = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
  if (j.contains("sector_azimuth_deg")) j.at("sector_azimuth_deg").get_to(b.sector_azimuth_deg);
  if (j.contains("tilt_sub6_deg")) j.at("tilt_sub6_deg").get_to(b.tilt_sub6_deg);
  if (j.contains("tilt_mmwave_deg")) j.at("tilt_mmwave_deg").get_to(b.tilt_mmwave_deg);
  if (j.contains("tx_power_sub6_dbm")) j.at("tx_power_sub6_dbm").get_to(b.tx_power_sub6_dbm);
  if (j.contains("tx_power_mmwave_dbm")) j.at("tx_power_mmwave_dbm").get_to(b.tx_power_mmwave_dbm);
  if (j.contains("elements_sub6")) j.at("elements_sub6").get_to(b.elements_sub6);
  if (j.contains("elements_mmwave")) j.at("elements_mmwave").get_to(b.elements_mmwave);
  if (b.elements_sub6 < 1 || b.elements_mmwave < 1) throw ConfigError("element counts must be at least 1");
}

void to_json(nlohmann::json& j, const Scenario& s) {
  j = nlohmann::json{{"config", s.config}, {"seed", s.config.seed}, {"buildings", s.buildings},
                     {"base_stations", s.base_stations}};
}

void from_json(const nlohmann::json& j, Scenario& s) {
  j.at("config").get_to(s.config);
  if (j.contains("seed")) j.at("seed").get_to(s.config.seed);
  j.at("buildings").get_to(s.buildings);
  j.at("base_stations").get_to(s.base_stations);
  for (const auto& b : s.buildings) {
    if (b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > s.config.area_side_m || b.y1 > s.config.area_side_m ||
        !(b.x1 > b.x0) || !(b.y1 > b.y0) || !(b.height_m > 0.0))
      throw ConfigError("building outside the area or degenerate");
  }
}

}  // namespace uavcmdp
