#include <memory>
#include <sstream>
#include <string>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "uavcmdp/harness.hpp"

namespace py = pybind11;
using namespace uavcmdp;

namespace {

nlohmann::json parse(const std::string& s) { return nlohmann::json::parse(s); }

// Env bound together with the world that owns its failure model.
struct PyEnv {
  World world;
  std::unique_ptr<Env> env;
  Rng rng;
  UavState state;
};

std::shared_ptr<PyEnv> make_env(const std::string& config, std::uint64_t seed, const std::string& band) {
  auto cfg = experiment_from_json(parse(config));
  auto e = std::make_shared<PyEnv>();
  e->world = build_world(cfg, band.empty() ? cfg.band : BandParams::preset(band_from_string(band)));
  e->env = std::make_unique<Env>(cfg.episode, e->world.area_side_m, e->world.failure);
  e->rng.seed(derive_seed(seed, tag_of("python_env")));
  return e;
}

py::dict state_dict(const UavState& s) {
  py::dict d;
  d["position"] = py::make_tuple(s.position.x, s.position.y, s.position.z);
  d["step_index"] = s.step_index;
  d["cum_constraint"] = s.cum_constraint;
  d["done"] = s.done;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "UAV path design under a radio-failure budget";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ScenarioError>(m, "ScenarioError", PyExc_RuntimeError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def("generate_scenario", [](const std::string& cfg) {
    return nlohmann::json(generate_scenario(parse(cfg).get<ScenarioConfig>())).dump();
  });
  m.def("element_gain_db", [](double theta, double phi) { return element_gain_db(theta, phi); });
  m.def("path_loss_db", [](const std::string& band, double d, bool los, double h) {
    return -linear_to_db(path_loss_linear(BandParams::preset(band_from_string(band)), d, los, h));
  });
  m.def("build_radio_map_csv", [](const std::string& config, std::uint64_t seed, const std::string& band) {
    auto cfg = experiment_from_json(parse(config));
    const Scenario s = make_scenario(cfg.scenario);
    const auto b = band.empty() ? cfg.band : BandParams::preset(band_from_string(band));
    std::ostringstream out;
    write_radio_map_csv(build_radio_map(s, b, cfg.episode.altitude_m, cfg.map_resolution_m, cfg.export_map_J, seed),
                        out);
    return out.str();
  });

  m.def("experiment_config", [](const std::string& config) { return to_json(experiment_from_json(parse(config))).dump(); });

  m.def("q_t", &q_t, py::arg("n"), py::arg("alpha"), py::arg("max_steps"));
  m.def("solve_policy_lp", &solve_policy_lp, py::arg("q_c"), py::arg("q_l"), py::arg("pi_b"), py::arg("eps"));

  py::class_<PyEnv, std::shared_ptr<PyEnv>>(m, "Env")
      .def(py::init(&make_env), py::arg("config"), py::arg("seed") = 0, py::arg("band") = "")
      .def("reset", [](PyEnv& e) {
        e.state = e.env->reset(e.rng);
        return state_dict(e.state);
      })
      .def("step", [](PyEnv& e, int action) {
        if (e.state.done) throw UsageError("episode is over; call reset()");
        if (action < 0 || action >= kNumActions) throw py::value_error("action must be 0..3");
        const auto t = e.env->step(e.state, static_cast<Action>(action), e.rng);
        e.state = t.next_state;
        py::dict d = state_dict(t.next_state);
        d["cost"] = t.cost;
        d["constraint_cost"] = t.constraint_cost;
        d["outcome"] = to_string(t.outcome);
        return d;
      })
      .def("features", [](const PyEnv& e) {
        const auto f = featurize(e.state, e.env->config(), e.env->area_side());
        return std::vector<double>(f.begin(), f.end());
      })
      .def_property_readonly("area_side_m", [](const PyEnv& e) { return e.env->area_side(); });

  m.def(
      "train",
      [](const std::string& config, std::uint64_t seed, const std::string& out_dir) {
        auto cfg = experiment_from_json(parse(config));
        py::gil_scoped_release release;
        const auto r = run_training(cfg, seed, out_dir);
        return r.final_eval.to_json().dump();
      },
      py::arg("config"), py::arg("seed"), py::arg("out_dir") = "");
  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& config, std::uint64_t seed, const std::string& out_dir) {
        auto cfg = experiment_from_json(parse(config));
        const auto ckpt = parse(checkpoint);
        py::gil_scoped_release release;
        return run_evaluation(ckpt, cfg, seed, out_dir).to_json().dump();
      },
      py::arg("checkpoint"), py::arg("config"), py::arg("seed"), py::arg("out_dir") = "");
}
