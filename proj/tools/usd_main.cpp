#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "usd/config.hpp"
#include "usd/descent.hpp"
#include "usd/image_io.hpp"
#include "usd/mmd.hpp"
#include "usd/neural.hpp"
#include "usd/parallel.hpp"
#include "usd/point_cloud_io.hpp"
#include "usd/rng.hpp"
#include "usd/selfcheck.hpp"
#include "usd/shapes.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string critic_in;
  std::string critic_out;
};

usd::ReactionMode mode_from_string(const std::string& m) {
  if (m == "weighted") return usd::ReactionMode::Weighted;
  if (m == "birth_death") return usd::ReactionMode::BirthDeath;
  return usd::ReactionMode::None;
}

usd::DescentConfig descent_config(const usd::RunConfig& cfg, bool kernel_engine) {
  usd::DescentConfig dc;
  dc.alpha = cfg.alpha;
  dc.lambda = cfg.lambda;
  dc.gamma = static_cast<int>(cfg.gamma);
  dc.step_size = cfg.lrQ;
  dc.reaction_rate = cfg.tau;
  dc.n_steps = cfg.T;
  dc.reaction_mode = mode_from_string(cfg.mode);
  dc.snapshot_every = cfg.snapshot_every;
  dc.sequential_bd_mean = cfg.sequential_bd_mean;
  // kernel runs consume the seed directly for the reaction stream; neural
  // runs derive their critic/batch/reaction streams internally
  dc.seed = kernel_engine ? usd::derive_seed(cfg.seed_descent, 2) : cfg.seed_descent;
  return dc;
}

usd::RunConfig load_and_validate(const CommonOpts& opts) {
  usd::RunConfig cfg = usd::load_config_file(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (cfg.out_dir.empty()) cfg.out_dir = ".";
  cfg.validate();
  return cfg;
}

std::string snapshot_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "snapshot_%05d.csv", step);
  return buf;
}

void write_snapshots(const usd::DescentTrace& trace, const fs::path& dir) {
  for (std::size_t i = 0; i < trace.snapshots.size(); ++i)
    usd::save_point_cloud((dir / snapshot_name(trace.snapshot_steps[i])).string(), trace.snapshots[i]);
}

json trace_summary(const usd::DescentRun& run) {
  json j;
  const auto& recs = run.trace.records;
  if (!recs.empty()) {
    j["steps"] = recs.back().step;
    j["initial_mmd2"] = recs.front().mmd2;
    j["final_mmd2"] = recs.back().mmd2;
    j["final_total_mass"] = recs.back().total_mass;
    j["final_n_particles"] = recs.back().n_particles;
  }
  if (run.error) j["error"] = *run.error;
  return j;
}

void write_summary(const json& j, const fs::path& dir) {
  std::ofstream out(dir / "summary.json");
  out << j.dump(2) << "\n";
}

// Runs the configured engine. On request the neural critic warm-starts from
// critic_in and the trained critic lands in critic_out.
usd::DescentRun execute(const usd::RunConfig& cfg, const usd::WeightedParticles& target,
                        const usd::WeightedParticles& source, const usd::FeatureMap& eval_fm,
                        const CommonOpts& opts) {
  if (cfg.engine == "kernel") {
    const int d = source.dim();
    const double bw = cfg.bandwidth > 0.0 ? cfg.bandwidth : std::sqrt(static_cast<double>(d));
    const auto fm =
        usd::FeatureMap::rff(d, cfg.features, bw, usd::derive_seed(cfg.seed_descent, 0));
    return usd::run_kernel_usd(target, source, fm, eval_fm, descent_config(cfg, true));
  }
  usd::NeuralUsdConfig nc;
  nc.descent = descent_config(cfg, false);
  nc.hidden = cfg.n_layers;
  nc.activation = usd::activation_from_name(cfg.activation);
  nc.n_c = cfg.n_c;
  nc.n_c_startup = cfg.n_c_startup;
  nc.batch_size = cfg.batchSize;
  nc.lr_critic = cfg.lrD;
  nc.weight_decay = cfg.wdecay;
  nc.lambda_aug_init = cfg.lambda_aug_init;
  nc.rho = cfg.rho;
  nc.dropout = cfg.dropout;

  usd::NeuralCritic critic;
  if (!opts.critic_in.empty()) critic = usd::load_critic(opts.critic_in);
  auto run = usd::run_neural_usd(target, source, nc, eval_fm, &critic);
  if (!opts.critic_out.empty()) usd::save_critic(critic, opts.critic_out);
  return run;
}

int finish(const usd::DescentRun& run, json summary, const fs::path& dir,
           double wall_seconds) {
  summary["wall_time_s"] = wall_seconds;
  write_summary(summary, dir);
  if (run.error) {
    std::cerr << "run stopped early: " << *run.error << "\n";
    return 1;
  }
  return 0;
}

int cmd_synth(const CommonOpts& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  usd::RunConfig cfg = load_and_validate(opts);
  if (!cfg.has_source_shape || !cfg.has_target_shape)
    throw std::runtime_error("config: synth needs source and target shapes");
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);

  usd::Rng src_rng(usd::derive_seed(cfg.seed_data, 0));
  usd::Rng tgt_rng(usd::derive_seed(cfg.seed_data, 1));
  const auto source = usd::sample_shape(cfg.source, src_rng);
  const auto target = usd::sample_shape(cfg.target, tgt_rng);
  if (source.dim() != target.dim())
    throw std::runtime_error("config: source and target dimensions differ");
  const auto eval_fm =
      usd::FeatureMap::rff(source.dim(), cfg.eval_features,
                           std::sqrt(static_cast<double>(source.dim())),
                           usd::derive_seed(cfg.seed_descent, 1));

  const auto run = execute(cfg, target, source, eval_fm, opts);

  usd::save_point_cloud((dir / "source.csv").string(), source);
  usd::save_point_cloud((dir / "target.csv").string(), target);
  usd::save_point_cloud((dir / "final.csv").string(), run.final_state.particles());
  run.trace.write_csv((dir / "trace.csv").string());
  write_snapshots(run.trace, dir);

  json summary = trace_summary(run);
  summary["command"] = "synth";
  summary["engine"] = cfg.engine;
  summary["mode"] = cfg.mode;
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  return finish(run, summary, dir, dt.count());
}

int cmd_color_transfer(const CommonOpts& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  usd::RunConfig cfg = load_and_validate(opts);
  if (cfg.source_image.empty() || cfg.target_image.empty())
    throw std::runtime_error("config: color transfer needs source_image and target_image");
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);

  const auto src_img = usd::read_png_rgb8(cfg.source_image);
  const auto tgt_img = usd::read_png_rgb8(cfg.target_image);
  const auto source = usd::image_to_particles(src_img);
  const auto target = usd::image_to_particles(tgt_img);
  const auto eval_fm = usd::FeatureMap::rff(3, cfg.eval_features, std::sqrt(3.0),
                                            usd::derive_seed(cfg.seed_descent, 1));

  const auto run = execute(cfg, target, source, eval_fm, opts);

  run.trace.write_csv((dir / "trace.csv").string());
  write_snapshots(run.trace, dir);
  const auto out_img =
      usd::particles_to_image(run.final_state.particles(), src_img.width, src_img.height);
  usd::write_png_rgb8((dir / "output.png").string(), out_img);

  json summary = trace_summary(run);
  summary["command"] = "color-transfer";
  summary["engine"] = cfg.engine;
  summary["mode"] = cfg.mode;
  summary["width"] = src_img.width;
  summary["height"] = src_img.height;
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  return finish(run, summary, dir, dt.count());
}

json midpoint_json(const usd::MidpointChoice& mid) {
  return json{{"midpoint_step", mid.step},
              {"mmd_to_source", mid.mmd_to_source},
              {"mmd_to_target", mid.mmd_to_target}};
}

void report_midpoint(const usd::MidpointChoice& mid) {
  std::cout << "midpoint step=" << mid.step << " mmd_to_source=" << mid.mmd_to_source
            << " mmd_to_target=" << mid.mmd_to_target << "\n";
}

int replay_interpolate(const usd::RunConfig& cfg, const fs::path& dir) {
  const auto source = usd::load_point_cloud((dir / "source.csv").string());
  const auto target = usd::load_point_cloud((dir / "target.csv").string());

  usd::DescentTrace trace;
  std::vector<std::pair<int, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int step = -1;
    if (std::sscanf(name.c_str(), "snapshot_%d.csv", &step) == 1 && step >= 0)
      found.emplace_back(step, entry.path());
  }
  std::sort(found.begin(), found.end());
  for (const auto& [step, path] : found) {
    trace.snapshot_steps.push_back(step);
    trace.snapshots.push_back(usd::load_point_cloud(path.string()));
  }
  if (trace.snapshots.empty())
    throw std::runtime_error("replay: no snapshot files in " + dir.string());

  const auto eval_fm =
      usd::FeatureMap::rff(source.dim(), cfg.eval_features,
                           std::sqrt(static_cast<double>(source.dim())),
                           usd::derive_seed(cfg.seed_descent, 1));
  const auto mid = usd::find_midpoint(trace, source, target, eval_fm);
  usd::save_point_cloud((dir / "midpoint.csv").string(), trace.snapshots[mid.snapshot_index]);
  report_midpoint(mid);

  json summary = midpoint_json(mid);
  summary["command"] = "interpolate";
  summary["replay"] = true;
  write_summary(summary, dir);
  return 0;
}

int cmd_interpolate(const CommonOpts& opts, bool replay) {
  const auto t0 = std::chrono::steady_clock::now();
  usd::RunConfig cfg = load_and_validate(opts);
  if (cfg.snapshot_every < 1)
    throw std::runtime_error("config: interpolate needs snapshot_every >= 1");
  const fs::path dir(cfg.out_dir);
  if (replay) return replay_interpolate(cfg, dir);

  if (!cfg.has_source_shape || !cfg.has_target_shape)
    throw std::runtime_error("config: interpolate needs source and target shapes");
  fs::create_directories(dir);

  usd::Rng src_rng(usd::derive_seed(cfg.seed_data, 0));
  usd::Rng tgt_rng(usd::derive_seed(cfg.seed_data, 1));
  const auto source = usd::sample_shape(cfg.source, src_rng);
  const auto target = usd::sample_shape(cfg.target, tgt_rng);
  if (source.dim() != target.dim())
    throw std::runtime_error("config: source and target dimensions differ");
  const auto eval_fm =
      usd::FeatureMap::rff(source.dim(), cfg.eval_features,
                           std::sqrt(static_cast<double>(source.dim())),
                           usd::derive_seed(cfg.seed_descent, 1));

  const auto run = execute(cfg, target, source, eval_fm, opts);

  usd::save_point_cloud((dir / "source.csv").string(), source);
  usd::save_point_cloud((dir / "target.csv").string(), target);
  run.trace.write_csv((dir / "trace.csv").string());
  write_snapshots(run.trace, dir);

  json summary = trace_summary(run);
  summary["command"] = "interpolate";
  summary["engine"] = cfg.engine;
  summary["mode"] = cfg.mode;
  if (!run.error) {
    const auto mid = usd::find_midpoint(run.trace, source, target, eval_fm);
    usd::save_point_cloud((dir / "midpoint.csv").string(),
                          run.trace.snapshots[mid.snapshot_index]);
    report_midpoint(mid);
    summary.update(midpoint_json(mid));
  }
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  return finish(run, summary, dir, dt.count());
}

int cmd_check(const CommonOpts& opts, std::uint64_t seed, bool seed_given) {
  if (!opts.config_path.empty()) {
    const usd::RunConfig cfg = usd::load_config_file(opts.config_path);
    if (!seed_given) seed = cfg.seed_descent;
  }
  return usd::self_check(seed, std::cout) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  usd::init_threads_from_env();

  CLI::App app{"unbalanced Sobolev descent for weighted particle transport"};
  app.require_subcommand(1);

  CommonOpts opts;
  bool replay = false;
  std::uint64_t check_seed = 12345;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", opts.config_path, "JSON run configuration");
    if (config_required) c->required();
    sub->add_option("--out", opts.out_dir, "output directory (overrides config out_dir)");
    return sub;
  };
  auto add_critic = [&](CLI::App* sub) {
    sub->add_option("--critic-in", opts.critic_in, "warm-start neural critic checkpoint");
    sub->add_option("--critic-out", opts.critic_out, "write trained neural critic here");
  };

  auto* synth = add_common(app.add_subcommand("synth", "descend between synthetic shapes"), true);
  add_critic(synth);
  auto* color = add_common(
      app.add_subcommand("color-transfer", "recolor a source image toward a target palette"),
      true);
  add_critic(color);
  auto* interp = add_common(
      app.add_subcommand("interpolate", "pick the MMD-equidistant midpoint of a descent"), true);
  add_critic(interp);
  interp->add_flag("--replay", replay, "reuse snapshots already on disk instead of re-running");
  auto* check = add_common(app.add_subcommand("check", "run the built-in oracle suites"), false);
  auto* seed_opt = check->add_option("--seed", check_seed, "seed for the check suites");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(opts);
    if (color->parsed()) return cmd_color_transfer(opts);
    if (interp->parsed()) return cmd_interpolate(opts, replay);
    if (check->parsed()) return cmd_check(opts, check_seed, seed_opt->count() > 0);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
