#include <cstdlib>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace uavcmdp;

namespace {

Scenario three_cell_world() {
  Scenario s;
  s.config.env_class = EnvClass::Custom;
  s.config.area_side_m = 400.0;
  s.buildings = {{150, 150, 250, 250, 60}};
  for (Vec3 p : {Vec3{80, 30, 25}, Vec3{320, 30, 25}, Vec3{200, 370, 25}}) {
    BaseStation bs;
    bs.position = p;
    s.base_stations.push_back(bs);
  }
  return s;
}

}  // namespace

TEST(Antenna, ElementGainMatchesReferencePattern) {
  Rng rng(1);
  for (int k = 0; k < 2000; ++k) {
    const double th = uniform01(rng) * 180.0;
    const double ph = uniform01(rng) * 360.0 - 180.0;
    EXPECT_LE(oracle::rel_err(element_gain_db(th, ph), oracle::element_gain(th, ph)), 1e-12);
  }
}

TEST(Antenna, ElementGainPeaksAtBoresightAndFloorsThirtyDecibelsDown) {
  EXPECT_DOUBLE_EQ(element_gain_db(90.0, 0.0), 8.0);
  EXPECT_DOUBLE_EQ(element_gain_db(90.0, 180.0), -22.0);
  EXPECT_DOUBLE_EQ(element_gain_db(0.0, 180.0), -22.0);
  // 3 dB down at half the beamwidth
  EXPECT_NEAR(element_gain_db(90.0 + 32.5, 0.0), 5.0, 1e-12);
  EXPECT_NEAR(element_gain_db(90.0, 32.5), 5.0, 1e-12);
}

TEST(Antenna, ArrayFactorMatchesExplicitSteeringVectors) {
  Rng rng(2);
  for (int k = 0; k < 1000; ++k) {
    const double th = uniform01(rng) * 180.0;
    const double ph = uniform01(rng) * 180.0 - 90.0;
    const double tilt = uniform01(rng) * 40.0 - 20.0;
    EXPECT_LE(oracle::rel_err(array_factor_db(th, ph, 8, {ArrayLayout::Ula, tilt}),
                              oracle::array_factor(th, ph, 8, false, tilt)),
              1e-9);
    EXPECT_LE(oracle::rel_err(array_factor_db(th, ph, 64, {ArrayLayout::Upa, tilt}),
                              oracle::array_factor(th, ph, 64, true, tilt)),
              1e-9);
  }
}

TEST(Antenna, ArrayFactorPeaksAtTheSteeringDirection) {
  // Coherent sum of n unit phasors scaled by 1/sqrt(n) gives |a w|^2 = n.
  EXPECT_NEAR(array_factor_db(100.0, 0.0, 8, {ArrayLayout::Ula, -10.0}), 10.0 * std::log10(9.0), 1e-12);
  EXPECT_NEAR(array_factor_db(80.0, 0.0, 64, {ArrayLayout::Upa, 10.0}), 10.0 * std::log10(65.0), 1e-12);
  EXPECT_NEAR(array_factor_db(70.0, 0.0, 1, {ArrayLayout::Ula, 0.0}), 10.0 * std::log10(2.0), 1e-12);
  EXPECT_THROW(array_factor_db(90.0, 0.0, 8, {ArrayLayout::Upa, 0.0}), ConfigError);
}

TEST(Antenna, RayAnglesFollowTheSectorFrame) {
  const auto a = ray_angles({0, 0, 0}, {10, 0, 0}, 0.0);
  EXPECT_NEAR(a.theta_deg, 90.0, 1e-12);
  EXPECT_NEAR(a.phi_deg, 0.0, 1e-12);
  const auto b = ray_angles({0, 0, 0}, {0, 10, 10}, 30.0);
  EXPECT_NEAR(b.theta_deg, 45.0, 1e-12);
  EXPECT_NEAR(b.phi_deg, 60.0, 1e-12);
  const auto c = ray_angles({0, 0, 0}, {-10, -1e-9, 0}, 120.0);
  EXPECT_GE(c.phi_deg, -180.0);
  EXPECT_LE(c.phi_deg, 180.0);
}

TEST(PathLoss, PowerLawMatchesReferenceAndScalesWithExponent) {
  const auto mm = BandParams::mmwave();
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const double d = 1.0 + uniform01(rng) * 2000.0;
    EXPECT_LE(oracle::rel_err(path_loss_linear(mm, d, true, 100), oracle::power_law_gain(5e-4, 2.0, d)), 1e-9);
    EXPECT_LE(oracle::rel_err(path_loss_linear(mm, d, false, 100), oracle::power_law_gain(5e-4, 4.0, d)), 1e-9);
  }
  EXPECT_NEAR(path_loss_linear(mm, 200, false, 100) / path_loss_linear(mm, 100, false, 100), 1.0 / 16.0, 1e-15);
  EXPECT_NEAR(path_loss_linear(mm, 200, true, 100) / path_loss_linear(mm, 100, true, 100), 1.0 / 4.0, 1e-15);
  EXPECT_THROW(path_loss_linear(mm, 0.0, true, 100), UsageError);
}

TEST(PathLoss, UrbanMacroMatchesReference) {
  const auto s6 = BandParams::sub6();
  Rng rng(4);
  for (int k = 0; k < 1000; ++k) {
    const double d = 10.0 + uniform01(rng) * 2000.0;
    const double h = 1.5 + uniform01(rng) * 200.0;
    EXPECT_LE(oracle::rel_err(path_loss_linear(s6, d, true, h), oracle::uma_gain(d, true, h, 2.0)), 1e-9);
    EXPECT_LE(oracle::rel_err(path_loss_linear(s6, d, false, h), oracle::uma_gain(d, false, h, 2.0)), 1e-9);
    EXPECT_LE(path_loss_linear(s6, d, false, h), path_loss_linear(s6, d, true, h));
  }
}

TEST(PathLoss, AerialNlosSlopeNeverBeatsLos) {
  auto b = BandParams::sub6();
  b.path_loss_model = PathLossModel::UmaAerial;
  for (double d : {50.0, 200.0, 800.0})
    for (double h : {30.0, 100.0, 300.0}) EXPECT_LE(path_loss_linear(b, d, false, h), path_loss_linear(b, d, true, h));
}

TEST(Fading, EveryModeHasUnitMean) {
  Rng rng(5);
  const auto s6 = BandParams::sub6();
  const auto mm = BandParams::mmwave();
  for (auto [band, los] : {std::pair{s6, true}, std::pair{s6, false}, std::pair{mm, true}}) {
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const double h = draw_fading_power(band, los, rng);
      ASSERT_GE(h, 0.0);
      sum += h;
    }
    EXPECT_NEAR(sum / 100000.0, 1.0, 0.01);
  }
}

TEST(Sinr, NoisePowerFollowsBandwidth) {
  EXPECT_NEAR(BandParams::sub6().noise_power_dbm(), -104.0, 1e-9);
  EXPECT_NEAR(BandParams::mmwave().noise_power_dbm(), -94.0, 1e-9);
}

TEST(Sinr, MaxSinrAssociationMatchesBruteForce) {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    LinkBudget b;
    b.noise_mw = 1e-9 * (0.1 + uniform01(rng));
    const int m = 1 + static_cast<int>(uniform01(rng) * 4);
    for (int i = 0; i < m; ++i) {
      BsLink l;
      l.best_rx_mw = 1e-9 * std::pow(10.0, 3.0 * uniform01(rng));
      l.all_rx_mw = l.best_rx_mw * (1.0 + uniform01(rng));
      b.links.push_back(l);
    }
    std::vector<double> h(static_cast<std::size_t>(m));
    for (auto& v : h) v = -std::log(1.0 - uniform01(rng));
    for (bool all : {false, true}) {
      b.interference_all_sectors = all;
      double best = -1.0;
      int best_i = -1;
      for (int i = 0; i < m; ++i) {
        double interf = 0.0;
        for (int k = 0; k < m; ++k)
          if (k != i) interf += h[k] * (all ? b.links[k].all_rx_mw : b.links[k].best_rx_mw);
        const double s = h[i] * b.links[i].best_rx_mw / (b.noise_mw + interf);
        if (s > best) {
          best = s;
          best_i = i;
        }
      }
      const auto out = sinr_with_fading(b, h);
      EXPECT_EQ(out.serving_bs, best_i);
      EXPECT_LE(oracle::rel_err(out.sinr_db, 10.0 * std::log10(best)), 1e-9);
    }
  }
}

TEST(Sinr, SingleBaseStationSinrFallsWithDistance) {
  Scenario s;
  s.config.area_side_m = 2000;
  BaseStation bs;
  bs.position = {0, 0, 25};
  s.base_stations = {bs};
  auto band = BandParams::mmwave();
  double prev = std::numeric_limits<double>::infinity();
  for (double x = 50; x <= 1500; x += 50) {
    const auto lb = link_budget({x, 0, 100}, s, band);
    const std::vector<double> one{1.0};
    const double sinr = sinr_with_fading(lb, one).sinr_db;
    // the array pattern ripples, so compare against path loss dominating over 50 m steps at long range
    if (x > 300) EXPECT_LT(sinr, prev + 3.0);
    prev = sinr;
  }
  EXPECT_LT(prev, sinr_with_fading(link_budget({50, 0, 100}, s, band), std::vector<double>{1.0}).sinr_db);
}

TEST(Outage, FractionCountsStrictlyBelowThreshold) {
  const std::vector<double> v{-1.0, 0.0, 0.5, -0.1};
  EXPECT_DOUBLE_EQ(outage_fraction(v, 0.0), 0.5);
  EXPECT_EQ(failure_from_outage(0.9, 0.9), 1);
  EXPECT_EQ(failure_from_outage(0.8999, 0.9), 0);
  EXPECT_THROW(outage_fraction(std::vector<double>{}, 0.0), UsageError);
}

TEST(Outage, EmpiricalOutageAgreesWithIndependentSimulation) {
  auto s = three_cell_world();
  auto band = BandParams::sub6();
  band.path_loss_model = PathLossModel::PowerLaw;
  for (auto& bs : s.base_stations) bs.tx_power_sub6_dbm = -10.0;
  for (Vec3 p : {Vec3{200, 200, 100}, Vec3{40, 300, 100}, Vec3{390, 390, 100}}) {
    Rng rng(7);
    const double lib = empirical_outage(p, s, band, 20000, rng);
    const double ref = oracle::outage(p, s, band, 200000, 99);
    EXPECT_NEAR(lib, ref, 0.02) << p.x << "," << p.y;
  }
}

TEST(RadioMap, IndexClampsToTheGrid) {
  RadioMap m;
  m.grid_resolution_m = 10;
  m.nx = m.ny = 4;
  m.cells.resize(16);
  EXPECT_EQ(m.index_at(0, 0), 0);
  EXPECT_EQ(m.index_at(39.99, 0), 3);
  EXPECT_EQ(m.index_at(40, 40), 15);
  EXPECT_EQ(m.index_at(-5, 15), 4);
}

TEST(RadioMap, DoesNotDependOnThreadCountAndRoundTripsThroughCsv) {
  const auto s = three_cell_world();
  const auto band = BandParams::mmwave();
  setenv("UAVCMDP_THREADS", "1", 1);
  const auto a = build_radio_map(s, band, 100, 40, 50, 9);
  setenv("UAVCMDP_THREADS", "4", 1);
  const auto b = build_radio_map(s, band, 100, 40, 50, 9);
  unsetenv("UAVCMDP_THREADS");
  std::ostringstream sa, sb;
  write_radio_map_csv(a, sa);
  write_radio_map_csv(b, sb);
  EXPECT_EQ(sa.str(), sb.str());
  std::istringstream in(sa.str());
  const auto back = read_radio_map_csv(in, Band::MmWave);
  ASSERT_EQ(back.nx, a.nx);
  EXPECT_DOUBLE_EQ(back.grid_resolution_m, 40.0);
  EXPECT_DOUBLE_EQ(back.area_side_m, 400.0);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    EXPECT_EQ(back.cells[i].failure, a.cells[i].failure);
    EXPECT_EQ(back.cells[i].outage_prob, a.cells[i].outage_prob);
    EXPECT_EQ(back.cells[i].mean_sinr_db, a.cells[i].mean_sinr_db);
  }
}

TEST(RadioMap, FailureIsOutageAboveThreshold) {
  const auto m = build_radio_map(three_cell_world(), BandParams::sub6(), 100, 50, 40, 3);
  for (const auto& c : m.cells) {
    EXPECT_EQ(c.failure, c.outage_prob >= 0.9 ? 1 : 0);
    EXPECT_GE(c.outage_prob, 0.0);
    EXPECT_LE(c.outage_prob, 1.0);
  }
  EXPECT_THROW(build_radio_map(three_cell_world(), BandParams::sub6(), 100, 30, 10, 3), ConfigError);
}

TEST(BandConfig, JsonOverridesPresetFields) {
  const auto p = nlohmann::json{{"band", "mmwave"}, {"alpha_nlos", 3.5}, {"path_loss_model", "power_law"}}
                     .get<BandParams>();
  EXPECT_EQ(p.band, Band::MmWave);
  EXPECT_DOUBLE_EQ(p.alpha_nlos, 3.5);
  EXPECT_DOUBLE_EQ(p.carrier_ghz, 28.0);
  EXPECT_THROW((nlohmann::json{{"band", "sub6"}, {"path_loss_model", "cost231"}}.get<BandParams>()), ConfigError);
  EXPECT_THROW((nlohmann::json{{"nakagami_m", 0.2}}.get<BandParams>()), ConfigError);
  const nlohmann::json j = BandParams::sub6();
  EXPECT_EQ(j.get<BandParams>().noise_power_dbm(), BandParams::sub6().noise_power_dbm());
}
