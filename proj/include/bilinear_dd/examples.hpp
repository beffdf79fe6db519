#pragma once

#include "bilinear_dd/experiment.hpp"
#include "bilinear_dd/hankel_data.hpp"

namespace bdd {

// How the data for an example is collected.
enum class DataCollection { RandomInputs, OnlineDesign };

struct ExampleSetup {
  std::string name;
  BilinearSystem system;
  OcProblem problem;
  Index L = 0;
  DataCollection collection = DataCollection::RandomInputs;
  Vector experiment_x0;     // start of the random-input experiment
  double input_amplitude = 1.0;  // random inputs are uniform in [-a, a] per entry
  double epsilon = 1e-2;         // input bound for the online design
  std::uint64_t data_seed = 1;
  double cost_scale = 1.0;  // reported cost = cost_scale · stage-cost sum
  double reference_cost = 0.0;
  double band_lo = 0.0;
  double band_hi = 0.0;
  double baseline_cost = 0.0;  // printed comparison value (upper baseline or lower bound)
  bool extended = false;
};

inline ExampleSetup example_setup(int id) {
  ExampleSetup ex;
  switch (id) {
    case 1: {
      ex.name = "example1";
      ex.system = BilinearSystem(Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1), Matrix::Constant(1, 1, 0.1));
      ex.problem = {Matrix::Identity(1, 1), Matrix::Identity(1, 1), Vector::Constant(1, 1.0),
                    Vector::Constant(1, 1.0 / 3.0), 20};
      ex.L = 60;
      ex.experiment_x0 = Vector::Constant(1, 1.0);
      ex.input_amplitude = 1.0;
      ex.data_seed = 1;
      ex.cost_scale = 0.1;
      ex.reference_cost = 1.3346;
      ex.band_lo = 1.28;
      ex.band_hi = 1.40;
      ex.baseline_cost = 1.3506;
      break;
    }
    case 2: {
      ex.name = "example2";
      Matrix A(5, 5);
      A << 0, 0, 0.024, 0, 0,   //
          1, 0, -0.26, 0, 0,    //
          0, 1, 0.9, 0, 0,      //
          0, 0, 0.2, 0, -0.06,  //
          0, 0, 0.15, 1, 0.5;
      Matrix B(5, 1);
      B << 0.8, 0.6, 0.4, 0.2, 0.5;
      Matrix N = Matrix::Zero(5, 5);
      for (Index j = 0; j < 5; ++j) N(j, j) = 0.1 * static_cast<double>(j + 1);
      ex.system = BilinearSystem(A, B, N);
      Vector xf(5);
      xf << 0.0004, -0.00038, 0.00318, 0.00062, 0.00219;
      ex.problem = {Matrix::Zero(5, 5), Matrix::Identity(1, 1), Vector::Zero(5), xf, 10};
      ex.L = 74;
      ex.collection = DataCollection::OnlineDesign;
      ex.experiment_x0 = Vector::Zero(5);
      ex.epsilon = 1e-2;
      ex.data_seed = 2;
      ex.reference_cost = 2.25e-6;
      ex.band_lo = 1.64e-6;
      ex.band_hi = 3.0e-6;
      ex.baseline_cost = 1.64e-6;
      break;
    }
    case 3: {
      ex.name = "example3";
      Matrix A(3, 3);
      A << 1, -0.01, 0,  //
          0.01, 1, 0,    //
          0, 0, 1;
      // N = [N1 N2 N3], each 3×2.
      Matrix N = Matrix::Zero(3, 6);
      N(2, 0) = -0.02;  // N1
      N(2, 3) = 0.02;   // N2
      N(0, 4) = 0.02;   // N3
      N(1, 5) = -0.02;
      ex.system = BilinearSystem(A, Matrix::Zero(3, 2), N);
      Vector x0(3), xf(3);
      x0 << 0, 0, 1;
      xf << 1, 0, 0;
      ex.problem = {Matrix::Zero(3, 3), Matrix::Identity(2, 2), x0, xf, 50};
      ex.L = 452;
      ex.experiment_x0 = x0;
      ex.input_amplitude = 5.0;
      ex.data_seed = 3;
      ex.cost_scale = 0.02;
      ex.reference_cost = 2.7999;
      ex.band_lo = 2.5;
      ex.band_hi = 3.2;
      ex.baseline_cost = 4.7976;
      ex.extended = true;
      break;
    }
    default:
      throw ArgumentError("unknown example id " + std::to_string(id));
  }
  return ex;
}

inline int example_id(const std::string& name) {
  if (name == "example1") return 1;
  if (name == "example2") return 2;
  if (name == "example3") return 3;
  throw ArgumentError("unknown fixture '" + name + "' (expected example1, example2 or example3)");
}

inline nlohmann::json example_to_json(const ExampleSetup& ex) {
  nlohmann::json j;
  j["name"] = ex.name;
  j["system"] = system_to_json(ex.system);
  j["problem"] = {{"Q", matrix_to_json(ex.problem.Q)},
                  {"R", matrix_to_json(ex.problem.R)},
                  {"x0", vector_to_json(ex.problem.x0)},
                  {"xf", vector_to_json(ex.problem.xf)},
                  {"T", ex.problem.T}};
  j["data"] = {{"collection", ex.collection == DataCollection::OnlineDesign ? "online" : "random"},
               {"L", ex.L},
               {"x0", vector_to_json(ex.experiment_x0)},
               {"amplitude", ex.input_amplitude},
               {"epsilon", ex.epsilon},
               {"seed", ex.data_seed}};
  j["report"] = {{"cost_scale", ex.cost_scale},
                 {"reference_cost", ex.reference_cost},
                 {"band", {ex.band_lo, ex.band_hi}},
                 {"baseline_cost", ex.baseline_cost},
                 {"extended", ex.extended}};
  return j;
}

inline OcProblem problem_from_json(const nlohmann::json& j) {
  for (const char* key : {"Q", "R", "x0", "xf", "T"})
    if (!j.contains(key)) throw ArgumentError(std::string("problem JSON lacks key '") + key + "'");
  if (!j["T"].is_number_integer() || j["T"].get<Index>() < 1) throw ArgumentError("problem horizon T must be a positive integer");
  return {matrix_from_json(j["Q"], "Q"), matrix_from_json(j["R"], "R"), vector_from_json(j["x0"], "x0"),
          vector_from_json(j["xf"], "xf"), j["T"].get<Index>()};
}

// Accepts the bundled fixture layout; "data" and "report" are optional.
inline ExampleSetup example_from_json(const nlohmann::json& j) {
  ExampleSetup ex;
  try {
    ex.name = j.value("name", std::string("custom"));
    if (!j.contains("system")) throw ArgumentError("fixture lacks 'system'");
    if (!j.contains("problem")) throw ArgumentError("fixture lacks 'problem'");
    ex.system = system_from_json(j["system"]);
    ex.problem = problem_from_json(j["problem"]);
    ex.problem.validate(ex.system.n(), ex.system.m());
    ex.experiment_x0 = ex.problem.x0;
    ex.L = min_data_length(ex.system.n(), ex.system.m(), ex.problem.T);
    if (j.contains("data")) {
      const auto& d = j["data"];
      const std::string c = d.value("collection", std::string("random"));
      if (c != "random" && c != "online") throw ArgumentError("data.collection must be 'random' or 'online'");
      ex.collection = c == "online" ? DataCollection::OnlineDesign : DataCollection::RandomInputs;
      ex.L = d.value("L", ex.L);
      if (d.contains("x0")) ex.experiment_x0 = vector_from_json(d["x0"], "data.x0");
      ex.input_amplitude = d.value("amplitude", 1.0);
      ex.epsilon = d.value("epsilon", 1e-2);
      ex.data_seed = d.value("seed", std::uint64_t{1});
    }
    if (j.contains("report")) {
      const auto& r = j["report"];
      ex.cost_scale = r.value("cost_scale", 1.0);
      ex.reference_cost = r.value("reference_cost", 0.0);
      if (r.contains("band")) {
        ex.band_lo = r["band"].at(0).get<double>();
        ex.band_hi = r["band"].at(1).get<double>();
      }
      ex.baseline_cost = r.value("baseline_cost", 0.0);
      ex.extended = r.value("extended", false);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed fixture: ") + e.what());
  }
  require(ex.experiment_x0.size() == ex.system.n(), "fixture data.x0 has the wrong length");
  return ex;
}

// Recorded data for an example: a random-input run of length L, or the
// online experiment design at the example's horizon.
inline Trajectory example_dataset(const ExampleSetup& ex, std::optional<std::uint64_t> seed = std::nullopt) {
  const std::uint64_t s = seed.value_or(ex.data_seed);
  if (ex.collection == DataCollection::OnlineDesign) {
    SimulatedPlant plant(ex.system, ex.experiment_x0);
    ExperimentConfig cfg;
    cfg.T = ex.problem.T;
    cfg.epsilon = ex.epsilon;
    cfg.seed = s;
    return design_experiment(plant, cfg).data;
  }
  Rng rng(s);
  Matrix U(ex.system.m(), ex.L);
  for (Index t = 0; t < ex.L; ++t) U.col(t) = uniform_vector(ex.system.m(), -ex.input_amplitude, ex.input_amplitude, rng);
  return simulate(ex.system, ex.experiment_x0, U);
}

}  // namespace bdd
