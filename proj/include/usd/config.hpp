#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "usd/shapes.hpp"

namespace usd {

// One JSON document per run. Key names follow the hyperparameter listing
// conventions (n_layers, batchSize, lrD, lrQ, tau, ...).
struct RunConfig {
  std::string engine = "kernel";  // kernel | neural
  std::string mode = "weighted";  // weighted | birth_death | none

  // descent
  int T = 400;
  double lrQ = 0.05;  // advection step size
  double tau = 1e-3;  // reaction rate
  double alpha = 0.5;
  double gamma = 1.0;
  double lambda = 1e-3;  // kernel ridge regularizer
  int snapshot_every = 0;
  bool sequential_bd_mean = false;

  // kernel engine
  int features = 128;
  double bandwidth = 0.0;  // 0 -> sqrt(d)
  int eval_features = 300;

  // neural engine
  std::vector<int> n_layers = {64, 1024, 64};
  std::string activation = "tanh";
  int batchSize = 512;
  int n_c_startup = 200;
  int n_c = 20;
  double wdecay = 1e-5;
  double lrD = 1e-4;
  double lambda_aug_init = 1e-5;
  double rho = 1e-6;
  double dropout = 0.0;

  // data
  int n_points_src = 1000;
  int n_points_target = 1000;
  bool has_source_shape = false;
  bool has_target_shape = false;
  ShapeSpec source;
  ShapeSpec target;
  std::string source_image;
  std::string target_image;

  std::uint64_t seed_data = 1;
  std::uint64_t seed_descent = 2;
  std::string out_dir;

  void validate() const;  // throws std::runtime_error on bad fields
};

nlohmann::json shape_to_json(const ShapeSpec& spec);
ShapeSpec shape_from_json(const nlohmann::json& j, int n_points);

nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config_file(const std::string& path);
void save_config_file(const RunConfig& cfg, const std::string& path);

}  // namespace usd
