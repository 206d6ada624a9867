#include "uavcmdp/radio.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

namespace uavcmdp {

std::string to_string(Band b) { return b == Band::Sub6 ? "sub6" : "mmwave"; }

std::string path_loss_model_name(PathLossModel m) {
  switch (m) {
    case PathLossModel::Uma3gpp: return "uma_3gpp";
    case PathLossModel::UmaAerial: return "uma_aerial";
    case PathLossModel::PowerLaw: return "power_law";
  }
  return "uma_3gpp";
}

Band band_from_string(const std::string& s) {
  if (s == "sub6") return Band::Sub6;
  if (s == "mmwave") return Band::MmWave;
  throw ConfigError("unknown band '" + s + "'");
}

double BandParams::noise_power_dbm() const {
  return -174.0 + 10.0 * std::log10(bandwidth_hz) + noise_figure_db;
}

void BandParams::validate() const {
  if (!(carrier_ghz > 0.0)) throw ConfigError("carrier_ghz must be positive");
  if (!(bandwidth_hz > 0.0)) throw ConfigError("bandwidth_hz must be positive");
  if (!(alpha_los > 0.0) || !(alpha_nlos > 0.0)) throw ConfigError("path-loss exponents must be positive");
  if (!(intercept_los > 0.0) || !(intercept_nlos > 0.0)) throw ConfigError("path-loss intercepts must be positive");
  if (!(nakagami_m >= 0.5)) throw ConfigError("nakagami_m must be >= 0.5");
  if (!(outage_prob_threshold > 0.0 && outage_prob_threshold <= 1.0))
    throw ConfigError("outage_prob_threshold must lie in (0, 1]");
}

BandParams BandParams::sub6() {
  BandParams p;
  p.band = Band::Sub6;
  p.carrier_ghz = 2.0;
  p.bandwidth_hz = 10.0e6;
  p.path_loss_model = PathLossModel::Uma3gpp;
  return p;
}

BandParams BandParams::mmwave() {
  BandParams p;
  p.band = Band::MmWave;
  p.carrier_ghz = 28.0;
  p.bandwidth_hz = 100.0e6;
  p.path_loss_model = PathLossModel::PowerLaw;
  p.alpha_los = 2.0;
  p.alpha_nlos = 4.0;
  p.intercept_los = 5.0e-4;
  p.intercept_nlos = 5.0e-4;
  p.nakagami_m = 3.0;
  return p;
}

void to_json(nlohmann::json& j, const BandParams& p) {
  j = nlohmann::json{{"band", to_string(p.band)},
                     {"carrier_ghz", p.carrier_ghz},
                     {"bandwidth_hz", p.bandwidth_hz},
                     {"noise_figure_db", p.noise_figure_db},
                     {"path_loss_model", path_loss_model_name(p.path_loss_model)},
                     {"alpha_los", p.alpha_los},
                     {"alpha_nlos", p.alpha_nlos},
                     {"intercept_los", p.intercept_los},
                     {"intercept_nlos", p.intercept_nlos},
                     {"nakagami_m", p.nakagami_m},
                     {"rician_k_db", p.rician_k_db},
                     {"sinr_threshold_db", p.sinr_threshold_db},
                     {"outage_prob_threshold", p.outage_prob_threshold},
                     {"interference_all_sectors", p.interference_all_sectors}};
}

void from_json(const nlohmann::json& j, BandParams& p) {
  if (j.contains("band")) p = BandParams::preset(band_from_string(j.at("band")));
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("carrier_ghz", p.carrier_ghz);
  get("bandwidth_hz", p.bandwidth_hz);
  get("noise_figure_db", p.noise_figure_db);
  if (j.contains("path_loss_model")) {
    const auto m = j.at("path_loss_model").get<std::string>();
    if (m == "uma_3gpp") p.path_loss_model = PathLossModel::Uma3gpp;
    else if (m == "uma_aerial") p.path_loss_model = PathLossModel::UmaAerial;
    else if (m == "power_law") p.path_loss_model = PathLossModel::PowerLaw;
    else throw ConfigError("unknown path_loss_model '" + m + "'");
  }
  get("alpha_los", p.alpha_los);
  get("alpha_nlos", p.alpha_nlos);
  get("intercept_los", p.intercept_los);
  get("intercept_nlos", p.intercept_nlos);
  get("nakagami_m", p.nakagami_m);
  get("rician_k_db", p.rician_k_db);
  get("sinr_threshold_db", p.sinr_threshold_db);
  get("outage_prob_threshold", p.outage_prob_threshold);
  get("interference_all_sectors", p.interference_all_sectors);
  p.validate();
}

// ---------------------------------------------------------------------------

double element_gain_db(double theta_deg, double phi_deg, const ElementPattern& pat) {
  const double v = (theta_deg - 90.0) / pat.theta_3db_deg;
  const double h = phi_deg / pat.phi_3db_deg;
  const double a_ev = -std::min(12.0 * v * v, pat.sla_v_db);
  const double a_eh = -std::min(12.0 * h * h, pat.a_m_db);
  return pat.g_max_dbi - std::min(-(a_ev + a_eh), pat.a_m_db);
}

namespace {

constexpr double kDeg = kPi / 180.0;

// |sum_{k<n} exp(j pi k u)|^2
double linear_array_power(int n, double u) {
  std::complex<double> acc{0.0, 0.0};
  for (int k = 0; k < n; ++k) acc += std::polar(1.0, kPi * k * u);
  return std::norm(acc);
}

}  // namespace

double array_factor_db(double theta_deg, double phi_deg, int n, Steering steering) {
  if (n < 1) throw UsageError("array needs at least one element");
  const double th = theta_deg * kDeg;
  const double ph = phi_deg * kDeg;
  const double th_s = (90.0 - steering.tilt_deg) * kDeg;
  double coherent = 0.0;  // |a w^T|^2
  if (steering.layout == ArrayLayout::Ula) {
    coherent = linear_array_power(n, std::cos(th) - std::cos(th_s)) / n;
  } else {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) throw ConfigError("planar array element count must be a perfect square");
    const double u_h = std::sin(th) * std::sin(ph);  // steering azimuth is the boresight (phi_s = 0)
    const double u_v = std::cos(th) - std::cos(th_s);
    coherent = linear_array_power(side, u_h) * linear_array_power(side, u_v) / n;
  }
  return 10.0 * std::log10(1.0 + coherent);
}

double array_gain_db(double theta_deg, double phi_deg, int n, Steering steering, const ElementPattern& pattern) {
  return element_gain_db(theta_deg, phi_deg, pattern) + array_factor_db(theta_deg, phi_deg, n, steering);
}

RayAngles ray_angles(Vec3 bs, Vec3 target, double sector_azimuth_deg) {
  const Vec3 d = target - bs;
  const double r = d.norm();
  const double theta = r > 0.0 ? std::acos(std::clamp(d.z / r, -1.0, 1.0)) / kDeg : 90.0;
  double phi = std::atan2(d.y, d.x) / kDeg - sector_azimuth_deg;
  phi = std::remainder(phi, 360.0);  // [-180, 180]
  return {theta, phi};
}

double sector_gain_db(const BaseStation& bs, int sector, Vec3 target, Band band) {
  const auto ang = ray_angles(bs.position, target, bs.sector_azimuth_deg[static_cast<std::size_t>(sector)]);
  if (band == Band::Sub6)
    return array_gain_db(ang.theta_deg, ang.phi_deg, bs.elements_sub6, {ArrayLayout::Ula, bs.tilt_sub6_deg});
  return array_gain_db(ang.theta_deg, ang.phi_deg, bs.elements_mmwave, {ArrayLayout::Upa, bs.tilt_mmwave_deg});
}

double path_loss_linear(const BandParams& band, double d_m, bool los, double uav_height_m) {
  if (!(d_m > 0.0)) throw UsageError("path loss needs a positive distance");
  if (band.path_loss_model == PathLossModel::PowerLaw) {
    return los ? band.intercept_los * std::pow(d_m, -band.alpha_los)
               : band.intercept_nlos * std::pow(d_m, -band.alpha_nlos);
  }
  const double f_term = 20.0 * std::log10(band.carrier_ghz);
  const double pl_los = 28.0 + 22.0 * std::log10(d_m) + f_term;
  double pl = pl_los;
  if (!los && band.path_loss_model == PathLossModel::UmaAerial) {
    const double slope = 46.0 - 7.0 * std::log10(uav_height_m);
    pl = std::max(pl_los, -17.5 + slope * std::log10(d_m) + 20.0 * std::log10(40.0 * kPi * band.carrier_ghz / 3.0));
  } else if (!los) {
    pl = std::max(pl_los, 13.54 + 39.08 * std::log10(d_m) + f_term - 0.6 * (uav_height_m - 1.5));
  }
  return std::pow(10.0, -pl / 10.0);
}

double draw_fading_power(const BandParams& band, bool los, Rng& rng) {
  if (band.band == Band::MmWave) {
    std::gamma_distribution<double> g(band.nakagami_m, 1.0 / band.nakagami_m);
    return g(rng);
  }
  if (!los) {
    std::exponential_distribution<double> e(1.0);
    return e(rng);
  }
  const double k = db_to_linear(band.rician_k_db);
  std::normal_distribution<double> n(0.0, 1.0);
  const double re = std::sqrt(k / (k + 1.0)) + std::sqrt(1.0 / (2.0 * (k + 1.0))) * n(rng);
  const double im = std::sqrt(1.0 / (2.0 * (k + 1.0))) * n(rng);
  return re * re + im * im;
}

LinkBudget link_budget(Vec3 uav, const Scenario& scenario, const BandParams& band) {
  LinkBudget budget;
  budget.noise_mw = db_to_linear(band.noise_power_dbm());
  budget.interference_all_sectors = band.interference_all_sectors;
  budget.links.reserve(scenario.base_stations.size());
  for (const auto& bs : scenario.base_stations) {
    BsLink link;
    link.los = is_los(bs.position, uav, scenario.buildings);
    const double d = distance(bs.position, uav);
    const double p_tx = db_to_linear(band.band == Band::Sub6 ? bs.tx_power_sub6_dbm : bs.tx_power_mmwave_dbm);
    const double base = p_tx * path_loss_linear(band, d, link.los, uav.z);
    double best_g = -1.0;
    for (int s = 0; s < 3; ++s) {
      const double g = db_to_linear(sector_gain_db(bs, s, uav, band.band));
      link.all_rx_mw += base * g;
      if (g > best_g) {
        best_g = g;
        link.best_sector = s;
      }
    }
    link.best_rx_mw = base * best_g;
    budget.links.push_back(link);
  }
  return budget;
}

LinkSample sinr_with_fading(const LinkBudget& budget, std::span<const double> fading) {
  LinkSample out;
  const std::size_t m = budget.links.size();
  if (fading.size() != m) throw UsageError("one fading value per base station required");
  if (m == 0) {
    out.sinr_db = -std::numeric_limits<double>::infinity();
    return out;
  }
  double total_interf = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& l = budget.links[i];
    total_interf += fading[i] * (budget.interference_all_sectors ? l.all_rx_mw : l.best_rx_mw);
  }
  // SINR_i = S_i / (N + I_total - I_i) is increasing in S_i for the best-sector
  // interference model, but the all-sector model needs the explicit comparison.
  double best_sinr = -1.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& l = budget.links[i];
    const double s = fading[i] * l.best_rx_mw;
    const double own = fading[i] * (budget.interference_all_sectors ? l.all_rx_mw : l.best_rx_mw);
    const double sinr_lin = s / (budget.noise_mw + std::max(0.0, total_interf - own));
    if (sinr_lin > best_sinr) {
      best_sinr = sinr_lin;
      out.serving_bs = static_cast<int>(i);
      out.serving_sector = l.best_sector;
      out.los = l.los;
    }
  }
  out.sinr_db = linear_to_db(best_sinr);
  return out;
}

LinkSample sinr(Vec3 uav, const Scenario& scenario, const BandParams& band, Rng& rng) {
  const auto budget = link_budget(uav, scenario, band);
  std::vector<double> fading(budget.links.size());
  for (std::size_t i = 0; i < fading.size(); ++i) fading[i] = draw_fading_power(band, budget.links[i].los, rng);
  return sinr_with_fading(budget, fading);
}

std::vector<double> sample_sinr_db(Vec3 uav, const Scenario& scenario, const BandParams& band, int J, Rng& rng) {
  if (J < 1) throw UsageError("at least one fading sample is required");
  const auto budget = link_budget(uav, scenario, band);
  std::vector<double> fading(budget.links.size());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    for (std::size_t i = 0; i < fading.size(); ++i) fading[i] = draw_fading_power(band, budget.links[i].los, rng);
    out.push_back(sinr_with_fading(budget, fading).sinr_db);
  }
  return out;
}

double outage_fraction(std::span<const double> sinr_db, double threshold_db) {
  if (sinr_db.empty()) throw UsageError("no SINR samples");
  const auto below = std::count_if(sinr_db.begin(), sinr_db.end(), [&](double s) { return s < threshold_db; });
  return static_cast<double>(below) / static_cast<double>(sinr_db.size());
}

double empirical_outage(Vec3 uav, const Scenario& scenario, const BandParams& band, int J, Rng& rng) {
  const auto samples = sample_sinr_db(uav, scenario, band, J, rng);
  return outage_fraction(samples, band.sinr_threshold_db);
}

int failure_from_outage(double outage_prob, double threshold) { return outage_prob >= threshold ? 1 : 0; }

int radio_failure(Vec3 uav, const Scenario& scenario, const BandParams& band, int J, Rng& rng) {
  return failure_from_outage(empirical_outage(uav, scenario, band, J, rng), band.outage_prob_threshold);
}

// ---------------------------------------------------------------------------

int RadioMap::index_at(double x, double y) const {
  const int ix = std::clamp(static_cast<int>(std::floor(x / grid_resolution_m)), 0, nx - 1);
  const int iy = std::clamp(static_cast<int>(std::floor(y / grid_resolution_m)), 0, ny - 1);
  return iy * nx + ix;
}

std::uint64_t cell_stream_seed(std::uint64_t seed, int cell_index) {
  return derive_seed(seed, tag_of("radio_map_cell"), static_cast<std::uint64_t>(cell_index));
}

int worker_threads() {
  if (const char* env = std::getenv("UAVCMDP_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

RadioMap build_radio_map(const Scenario& scenario, const BandParams& band, double altitude_m, double resolution_m,
                         int J, std::uint64_t seed) {
  band.validate();
  if (!(resolution_m > 0.0)) throw ConfigError("map resolution must be positive");
  const double L = scenario.area_side();
  const double cells_per_side = L / resolution_m;
  if (std::abs(cells_per_side - std::round(cells_per_side)) > 1e-9)
    throw ConfigError("map resolution must divide the area side");

  RadioMap map;
  map.band = band.band;
  map.grid_resolution_m = resolution_m;
  map.altitude_m = altitude_m;
  map.area_side_m = L;
  map.nx = map.ny = static_cast<int>(std::lround(cells_per_side));
  map.cells.resize(static_cast<std::size_t>(map.nx) * map.ny);

  const int total = map.nx * map.ny;
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int idx = next++; idx < total; idx = next++) {
      Rng rng(cell_stream_seed(seed, idx));
      const auto samples = sample_sinr_db(map.cell_center(idx % map.nx, idx / map.nx), scenario, band, J, rng);
      double mean_lin = 0.0;
      for (double s : samples) mean_lin += db_to_linear(s);
      mean_lin /= static_cast<double>(samples.size());
      auto& cell = map.cells[static_cast<std::size_t>(idx)];
      cell.mean_sinr_db = linear_to_db(mean_lin);
      cell.outage_prob = outage_fraction(samples, band.sinr_threshold_db);
      cell.failure = failure_from_outage(cell.outage_prob, band.outage_prob_threshold);
    }
  };
  const int n_threads = std::min(worker_threads(), total);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return map;
}

void write_radio_map_csv(const RadioMap& map, std::ostream& out) {
  out << "x_m,y_m,alt_m,mean_sinr_db,outage_prob,failure\n";
  out << std::setprecision(17);
  for (int iy = 0; iy < map.ny; ++iy) {
    for (int ix = 0; ix < map.nx; ++ix) {
      const auto c = map.cell_center(ix, iy);
      const auto& cell = map.cells[static_cast<std::size_t>(iy * map.nx + ix)];
      out << c.x << ',' << c.y << ',' << c.z << ',' << cell.mean_sinr_db << ',' << cell.outage_prob << ','
          << cell.failure << '\n';
    }
  }
}

RadioMap read_radio_map_csv(std::istream& in, Band band) {
  std::string line;
  if (!std::getline(in, line) || line != "x_m,y_m,alt_m,mean_sinr_db,outage_prob,failure")
    throw ConfigError("radio map CSV has an unexpected header");
  std::vector<std::array<double, 5>> rows;
  std::vector<int> failures;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::array<double, 5> r{};
    char comma = 0;
    int f = 0;
    ss >> r[0] >> comma >> r[1] >> comma >> r[2] >> comma >> r[3] >> comma >> r[4] >> comma >> f;
    if (!ss) throw ConfigError("malformed radio map row: " + line);
    rows.push_back(r);
    failures.push_back(f);
  }
  if (rows.empty()) throw ConfigError("radio map CSV has no rows");
  RadioMap map;
  map.band = band;
  map.altitude_m = rows.front()[2];
  int nx = 1;
  while (nx < static_cast<int>(rows.size()) && rows[static_cast<std::size_t>(nx)][1] == rows.front()[1]) ++nx;
  map.nx = nx;
  map.ny = static_cast<int>(rows.size()) / nx;
  if (map.nx * map.ny != static_cast<int>(rows.size())) throw ConfigError("radio map CSV is not a full grid");
  map.grid_resolution_m = 2.0 * rows.front()[0];
  map.area_side_m = map.nx * map.grid_resolution_m;
  for (std::size_t i = 0; i < rows.size(); ++i)
    map.cells.push_back({rows[i][3], rows[i][4], failures[i]});
  return map;
}

}  // namespace uavcmdp
