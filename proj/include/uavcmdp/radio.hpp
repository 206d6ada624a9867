#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavcmdp/common.hpp"
#include "uavcmdp/scenario.hpp"

namespace uavcmdp {

enum class Band { Sub6, MmWave };

std::string to_string(Band b);
Band band_from_string(const std::string& s);

enum class PathLossModel {
  Uma3gpp,   // 3GPP urban-macro LoS/NLoS expressions (dB form)
  UmaAerial, // urban-macro expressions for aerial terminals; NLoS slope falls with height
  PowerLaw,  // X * d^-alpha
};

std::string path_loss_model_name(PathLossModel m);

/// Per-band propagation and decision parameters.
struct BandParams {
  Band band = Band::Sub6;
  double carrier_ghz = 2.0;
  double bandwidth_hz = 10.0e6;
  double noise_figure_db = 0.0;
  PathLossModel path_loss_model = PathLossModel::Uma3gpp;
  double alpha_los = 2.0;
  double alpha_nlos = 4.0;
  double intercept_los = 5.0e-4;
  double intercept_nlos = 5.0e-4;
  double nakagami_m = 3.0;
  double rician_k_db = 10.0;
  double sinr_threshold_db = 0.0;
  double outage_prob_threshold = 0.9;
  // Interference from each non-serving BS: its best sector only, or all three sectors.
  bool interference_all_sectors = false;

  /// Thermal noise over the bandwidth: -174 dBm/Hz + 10 log10(BW) + NF.
  double noise_power_dbm() const;
  void validate() const;

  static BandParams sub6();
  static BandParams mmwave();
  static BandParams preset(Band b) { return b == Band::Sub6 ? sub6() : mmwave(); }
};

void to_json(nlohmann::json& j, const BandParams& p);
void from_json(const nlohmann::json& j, BandParams& p);

// ---------------------------------------------------------------------------
// Antenna model

struct ElementPattern {
  double g_max_dbi = 8.0;
  double theta_3db_deg = 65.0;
  double phi_3db_deg = 65.0;
  double sla_v_db = 30.0;
  double a_m_db = 30.0;
};

/// 3GPP sector element gain. theta is the zenith angle (90 = horizon), phi the
/// azimuth from boresight, both in the element frame.
double element_gain_db(double theta_deg, double phi_deg, const ElementPattern& pattern = {});

enum class ArrayLayout {
  Ula,  // vertical uniform linear array of n elements
  Upa,  // square planar array of sqrt(n) x sqrt(n) elements
};

struct Steering {
  ArrayLayout layout = ArrayLayout::Ula;
  double tilt_deg = 0.0;  // boresight elevation; negative points below the horizon
};

/// 10 log10(1 + rho |a w^T|^2), rho = 1, uniform amplitudes 1/sqrt(n), half-wavelength spacing.
double array_factor_db(double theta_deg, double phi_deg, int n_elements, Steering steering);

double array_gain_db(double theta_deg, double phi_deg, int n_elements, Steering steering,
                     const ElementPattern& pattern = {});

/// Zenith/azimuth of the ray from a BS sector to a point, in the sector's element frame.
struct RayAngles {
  double theta_deg;
  double phi_deg;
};
RayAngles ray_angles(Vec3 bs, Vec3 target, double sector_azimuth_deg);

/// Array gain of one sector of a BS towards a point in the given band.
double sector_gain_db(const BaseStation& bs, int sector, Vec3 target, Band band);

// ---------------------------------------------------------------------------
// Propagation

/// Linear path gain (< 1). Throws UsageError for d_m <= 0.
double path_loss_linear(const BandParams& band, double d_m, bool los, double uav_height_m);

/// Unit-mean small-scale fading power.
double draw_fading_power(const BandParams& band, bool los, Rng& rng);

struct LinkSample {
  int serving_bs = -1;
  int serving_sector = -1;
  double sinr_db = 0.0;
  bool los = false;
};

/// Deterministic part of every BS link seen from one UAV position.
struct BsLink {
  int best_sector = 0;
  double best_rx_mw = 0.0;     // P_tx * L(d) * g_best, before fading
  double all_rx_mw = 0.0;      // same, summed over the three sectors
  bool los = false;
};

struct LinkBudget {
  std::vector<BsLink> links;
  double noise_mw = 0.0;
  bool interference_all_sectors = false;
};

LinkBudget link_budget(Vec3 uav, const Scenario& scenario, const BandParams& band);

/// Max-SINR association for one fading realization (one unit-mean power per BS).
LinkSample sinr_with_fading(const LinkBudget& budget, std::span<const double> fading);

LinkSample sinr(Vec3 uav, const Scenario& scenario, const BandParams& band, Rng& rng);

/// J independent serving-SINR realizations in dB, each re-associated.
std::vector<double> sample_sinr_db(Vec3 uav, const Scenario& scenario, const BandParams& band, int J,
                                   Rng& rng);

/// Fraction of samples strictly below the threshold.
double outage_fraction(std::span<const double> sinr_db, double threshold_db);

double empirical_outage(Vec3 uav, const Scenario& scenario, const BandParams& band, int J, Rng& rng);

/// 1 iff outage_prob >= threshold.
int failure_from_outage(double outage_prob, double threshold);

int radio_failure(Vec3 uav, const Scenario& scenario, const BandParams& band, int J, Rng& rng);

// ---------------------------------------------------------------------------
// Radio maps

struct RadioCell {
  double mean_sinr_db = 0.0;
  double outage_prob = 0.0;
  int failure = 0;
};

struct RadioMap {
  Band band = Band::Sub6;
  double grid_resolution_m = 10.0;
  double altitude_m = 100.0;
  double area_side_m = 0.0;
  int nx = 0;
  int ny = 0;
  std::vector<RadioCell> cells;  // row-major: index = iy * nx + ix

  Vec3 cell_center(int ix, int iy) const {
    return {(ix + 0.5) * grid_resolution_m, (iy + 0.5) * grid_resolution_m, altitude_m};
  }
  /// Cell containing (x, y); points on the far edge map to the last cell.
  int index_at(double x, double y) const;
  const RadioCell& at(double x, double y) const { return cells[static_cast<std::size_t>(index_at(x, y))]; }
};

std::uint64_t cell_stream_seed(std::uint64_t seed, int cell_index);

/// Rasterizes mean SINR, outage and failure. Cells are independent and may be
/// evaluated on worker threads; each uses the stream cell_stream_seed(seed, index).
RadioMap build_radio_map(const Scenario& scenario, const BandParams& band, double altitude_m,
                         double resolution_m, int J, std::uint64_t seed);

void write_radio_map_csv(const RadioMap& map, std::ostream& out);
RadioMap read_radio_map_csv(std::istream& in, Band band);

/// Worker count from UAVCMDP_THREADS (default 1).
int worker_threads();

}  // namespace uavcmdp
