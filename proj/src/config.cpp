#include "usd/config.hpp"

#include "usd/neural.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace usd {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) {
  throw std::runtime_error("config: " + msg);
}

double get_num(const json& j, const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) config_error(key + " must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const std::string& key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) config_error(key + " must be an integer");
  return j.at(key).get<int>();
}

std::string get_str(const json& j, const std::string& key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) config_error(key + " must be a string");
  return j.at(key).get<std::string>();
}

bool get_bool(const json& j, const std::string& key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) config_error(key + " must be a boolean");
  return j.at(key).get<bool>();
}

Eigen::VectorXd get_vec(const json& j, const std::string& key) {
  if (!j.contains(key) || !j.at(key).is_array())
    config_error(key + " must be an array of numbers");
  const auto& arr = j.at(key);
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) config_error(key + " must contain only numbers");
    v(static_cast<int>(i)) = arr[i].get<double>();
  }
  return v;
}

std::vector<double> get_std_vec(const json& j, const std::string& key) {
  if (!j.contains(key) || !j.at(key).is_array())
    config_error(key + " must be an array of numbers");
  std::vector<double> v;
  for (const auto& e : j.at(key)) {
    if (!e.is_number()) config_error(key + " must contain only numbers");
    v.push_back(e.get<double>());
  }
  return v;
}

json vec_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (allowed.find(it.key()) == allowed.end())
      config_error("unknown key \"" + it.key() + "\" in " + where);
}

}  // namespace

json shape_to_json(const ShapeSpec& spec) {
  json j;
  if (std::holds_alternative<GaussianShape>(spec.shape)) {
    const auto& g = std::get<GaussianShape>(spec.shape);
    j["kind"] = "gaussian";
    j["mean"] = vec_to_json(g.mean);
    j["var"] = vec_to_json(g.var);
  } else if (std::holds_alternative<MogShape>(spec.shape)) {
    const auto& m = std::get<MogShape>(spec.shape);
    j["kind"] = "mog";
    json comps = json::array();
    for (const auto& c : m.components)
      comps.push_back(json{{"mean", vec_to_json(c.mean)}, {"var", vec_to_json(c.var)}});
    j["components"] = comps;
    j["mix"] = m.mix;
  } else if (std::holds_alternative<RingsShape>(spec.shape)) {
    const auto& r = std::get<RingsShape>(spec.shape);
    j["kind"] = "rings";
    json centers = json::array();
    for (const auto& c : r.centers) centers.push_back(json::array({c(0), c(1)}));
    j["centers"] = centers;
    j["radii"] = r.radii;
    j["thickness"] = r.thickness;
  } else if (std::holds_alternative<PointCloudShape>(spec.shape)) {
    j["kind"] = "point_cloud";
    j["path"] = std::get<PointCloudShape>(spec.shape).path;
  } else {
    j["kind"] = "image_mask";
    j["path"] = std::get<ImageMaskShape>(spec.shape).path;
  }
  if (spec.weight_gradient) {
    j["weight_gradient"] = json{{"axis", spec.weight_gradient->axis},
                                {"lo", spec.weight_gradient->lo},
                                {"hi", spec.weight_gradient->hi}};
  }
  j["normalize"] = spec.normalize;
  return j;
}

ShapeSpec shape_from_json(const json& j, int n_points) {
  if (!j.is_object()) config_error("shape must be a JSON object");
  ShapeSpec spec;
  spec.n = n_points;
  const std::string kind = get_str(j, "kind", "");
  if (kind == "gaussian") {
    check_keys(j, {"kind", "mean", "var", "weight_gradient", "normalize"}, "gaussian shape");
    GaussianShape g;
    g.mean = get_vec(j, "mean");
    g.var = get_vec(j, "var");
    spec.shape = std::move(g);
  } else if (kind == "mog") {
    check_keys(j, {"kind", "components", "mix", "weight_gradient", "normalize"}, "mog shape");
    if (!j.contains("components") || !j.at("components").is_array())
      config_error("mog shape needs a components array");
    MogShape m;
    for (const auto& cj : j.at("components")) {
      check_keys(cj, {"mean", "var"}, "mog component");
      GaussianShape g;
      g.mean = get_vec(cj, "mean");
      g.var = get_vec(cj, "var");
      m.components.push_back(std::move(g));
    }
    m.mix = get_std_vec(j, "mix");
    spec.shape = std::move(m);
  } else if (kind == "rings") {
    check_keys(j, {"kind", "centers", "radii", "thickness", "weight_gradient", "normalize"},
               "rings shape");
    if (!j.contains("centers") || !j.at("centers").is_array())
      config_error("rings shape needs a centers array");
    RingsShape r;
    for (std::size_t i = 0; i < j.at("centers").size(); ++i) {
      const auto& cj = j.at("centers")[i];
      if (!cj.is_array() || cj.size() != 2 || !cj[0].is_number() || !cj[1].is_number())
        config_error("rings centers must be [x, y] pairs");
      r.centers.emplace_back(cj[0].get<double>(), cj[1].get<double>());
    }
    r.radii = get_std_vec(j, "radii");
    r.thickness = get_num(j, "thickness", 0.1);
    spec.shape = std::move(r);
  } else if (kind == "point_cloud") {
    check_keys(j, {"kind", "path", "weight_gradient", "normalize"}, "point_cloud shape");
    PointCloudShape p;
    p.path = get_str(j, "path", "");
    if (p.path.empty()) config_error("point_cloud shape needs a path");
    spec.shape = std::move(p);
  } else if (kind == "image_mask") {
    check_keys(j, {"kind", "path", "weight_gradient", "normalize"}, "image_mask shape");
    ImageMaskShape m;
    m.path = get_str(j, "path", "");
    if (m.path.empty()) config_error("image_mask shape needs a path");
    spec.shape = std::move(m);
  } else {
    config_error("unknown shape kind \"" + kind + "\"");
  }
  if (j.contains("weight_gradient")) {
    const auto& wj = j.at("weight_gradient");
    check_keys(wj, {"axis", "lo", "hi"}, "weight_gradient");
    WeightGradient w;
    w.axis = get_int(wj, "axis", 0);
    w.lo = get_num(wj, "lo", 0.0);
    w.hi = get_num(wj, "hi", 1.0);
    spec.weight_gradient = w;
  }
  spec.normalize = get_bool(j, "normalize", true);
  return spec;
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["engine"] = cfg.engine;
  j["mode"] = cfg.mode;
  j["T"] = cfg.T;
  j["lrQ"] = cfg.lrQ;
  j["tau"] = cfg.tau;
  j["alpha"] = cfg.alpha;
  j["gamma"] = cfg.gamma;
  j["lambda"] = cfg.lambda;
  j["snapshot_every"] = cfg.snapshot_every;
  j["sequential_bd_mean"] = cfg.sequential_bd_mean;
  j["features"] = cfg.features;
  j["bandwidth"] = cfg.bandwidth;
  j["eval_features"] = cfg.eval_features;
  j["n_layers"] = cfg.n_layers;
  j["activation"] = cfg.activation;
  j["batchSize"] = cfg.batchSize;
  j["n_c_startup"] = cfg.n_c_startup;
  j["n_c"] = cfg.n_c;
  j["wdecay"] = cfg.wdecay;
  j["lrD"] = cfg.lrD;
  j["lambda_aug_init"] = cfg.lambda_aug_init;
  j["rho"] = cfg.rho;
  j["dropout"] = cfg.dropout;
  j["n_points_src"] = cfg.n_points_src;
  j["n_points_target"] = cfg.n_points_target;
  if (cfg.has_source_shape) j["source"] = shape_to_json(cfg.source);
  if (cfg.has_target_shape) j["target"] = shape_to_json(cfg.target);
  if (!cfg.source_image.empty()) j["source_image"] = cfg.source_image;
  if (!cfg.target_image.empty()) j["target_image"] = cfg.target_image;
  j["seed_data"] = cfg.seed_data;
  j["seed_descent"] = cfg.seed_descent;
  if (!cfg.out_dir.empty()) j["out_dir"] = cfg.out_dir;
  return j;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) config_error("top level must be a JSON object");
  static const std::set<std::string> allowed = {
      "engine",        "mode",         "T",
      "lrQ",           "tau",          "alpha",
      "gamma",         "lambda",       "snapshot_every",
      "sequential_bd_mean",            "features",
      "bandwidth",     "eval_features", "n_layers",
      "activation",    "batchSize",    "n_c_startup",
      "n_c",           "wdecay",       "lrD",
      "lambda_aug_init",               "rho",
      "dropout",       "n_points_src", "n_points_target",
      "source",        "target",       "source_image",
      "target_image",  "seed_data",    "seed_descent",
      "out_dir",       "optimizer"};
  check_keys(j, allowed, "run config");
  if (j.contains("normalization"))
    config_error("normalization layers are not supported");

  RunConfig cfg;
  cfg.engine = get_str(j, "engine", cfg.engine);
  cfg.mode = get_str(j, "mode", cfg.mode);
  cfg.T = get_int(j, "T", cfg.T);
  cfg.lrQ = get_num(j, "lrQ", cfg.lrQ);
  cfg.tau = get_num(j, "tau", cfg.tau);
  cfg.alpha = get_num(j, "alpha", cfg.alpha);
  cfg.gamma = get_num(j, "gamma", cfg.gamma);
  cfg.lambda = get_num(j, "lambda", cfg.lambda);
  cfg.snapshot_every = get_int(j, "snapshot_every", cfg.snapshot_every);
  cfg.sequential_bd_mean = get_bool(j, "sequential_bd_mean", cfg.sequential_bd_mean);
  cfg.features = get_int(j, "features", cfg.features);
  cfg.bandwidth = get_num(j, "bandwidth", cfg.bandwidth);
  cfg.eval_features = get_int(j, "eval_features", cfg.eval_features);
  if (j.contains("n_layers")) {
    if (!j.at("n_layers").is_array()) config_error("n_layers must be an array of integers");
    cfg.n_layers.clear();
    for (const auto& e : j.at("n_layers")) {
      if (!e.is_number_integer()) config_error("n_layers must contain only integers");
      cfg.n_layers.push_back(e.get<int>());
    }
  }
  cfg.activation = get_str(j, "activation", cfg.activation);
  cfg.batchSize = get_int(j, "batchSize", cfg.batchSize);
  cfg.n_c_startup = get_int(j, "n_c_startup", cfg.n_c_startup);
  cfg.n_c = get_int(j, "n_c", cfg.n_c);
  cfg.wdecay = get_num(j, "wdecay", cfg.wdecay);
  cfg.lrD = get_num(j, "lrD", cfg.lrD);
  cfg.lambda_aug_init = get_num(j, "lambda_aug_init", cfg.lambda_aug_init);
  cfg.rho = get_num(j, "rho", cfg.rho);
  cfg.dropout = get_num(j, "dropout", cfg.dropout);
  cfg.n_points_src = get_int(j, "n_points_src", cfg.n_points_src);
  cfg.n_points_target = get_int(j, "n_points_target", cfg.n_points_target);
  if (j.contains("source")) {
    cfg.source = shape_from_json(j.at("source"), cfg.n_points_src);
    cfg.has_source_shape = true;
  }
  if (j.contains("target")) {
    cfg.target = shape_from_json(j.at("target"), cfg.n_points_target);
    cfg.has_target_shape = true;
  }
  cfg.source_image = get_str(j, "source_image", "");
  cfg.target_image = get_str(j, "target_image", "");
  if (j.contains("seed_data")) {
    if (!j.at("seed_data").is_number_integer()) config_error("seed_data must be an integer");
    cfg.seed_data = j.at("seed_data").get<std::uint64_t>();
  }
  if (j.contains("seed_descent")) {
    if (!j.at("seed_descent").is_number_integer())
      config_error("seed_descent must be an integer");
    cfg.seed_descent = j.at("seed_descent").get<std::uint64_t>();
  }
  cfg.out_dir = get_str(j, "out_dir", "");
  return cfg;
}

void RunConfig::validate() const {
  if (engine != "kernel" && engine != "neural")
    config_error("engine must be \"kernel\" or \"neural\"");
  if (mode != "weighted" && mode != "birth_death" && mode != "none")
    config_error("mode must be \"weighted\", \"birth_death\" or \"none\"");
  if (T < 0) config_error("T must be >= 0");
  if (!(lrQ > 0.0)) config_error("lrQ must be positive");
  if (!(tau > 0.0)) config_error("tau must be positive");
  if (alpha < 0.0) config_error("alpha must be nonnegative");
  if (mode != "none" && !(alpha > 0.0)) config_error("alpha must be positive when reacting");
  if (gamma != 0.0 && gamma != 1.0) config_error("gamma must be 0 or 1");
  if (!(lambda > 0.0)) config_error("lambda must be positive");
  if (snapshot_every < 0) config_error("snapshot_every must be >= 0");
  if (features < 1) config_error("features must be >= 1");
  if (bandwidth < 0.0) config_error("bandwidth must be >= 0");
  if (eval_features < 1) config_error("eval_features must be >= 1");
  for (int h : n_layers)
    if (h < 1) config_error("n_layers entries must be >= 1");
  if (batchSize < 1) config_error("batchSize must be >= 1");
  if (n_c_startup < 1) config_error("n_c_startup must be >= 1");
  if (n_c < 1) config_error("n_c must be >= 1");
  if (wdecay < 0.0) config_error("wdecay must be >= 0");
  if (!(lrD > 0.0)) config_error("lrD must be positive");
  if (rho < 0.0) config_error("rho must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) config_error("dropout must be in [0,1)");
  if (n_points_src < 1) config_error("n_points_src must be >= 1");
  if (n_points_target < 1) config_error("n_points_target must be >= 1");
  activation_from_name(activation);  // throws on unknown name
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    config_error(path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) config_error("cannot open " + path + " for writing");
  out << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace usd
