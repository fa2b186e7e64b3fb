#pragma once

// Command-line entry point. Each subcommand is a thin wrapper over the
// library: any exception becomes a one-line diagnostic on stderr and a
// nonzero exit, so shell pipelines can rely on the status code.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cbc/checkpoint.hpp"
#include "cbc/converter.hpp"
#include "cbc/dataset_io.hpp"
#include "cbc/density.hpp"
#include "cbc/experiment.hpp"
#include "cbc/gradient_suite.hpp"
#include "cbc/svg_plot.hpp"

namespace cbc {

namespace detail {

inline std::string format_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", s);
  return buf;
}

/// Mirrors the sweep's per-cell seeding so a manually trained checkpoint
/// reproduces the corresponding sweep cell.
inline std::uint64_t cell_seed_for(const ExperimentConfig& cfg, std::uint64_t seed, int image,
                                   int n_obs) {
  const std::uint64_t instance_seed =
      cfg.dataset.is_image() ? derive_seed(seed, static_cast<std::uint64_t>(image)) : seed;
  return derive_seed(instance_seed, static_cast<std::uint64_t>(n_obs));
}

inline Trajectory load_instance(const ExperimentConfig& cfg, std::uint64_t seed, int image) {
  if (!cfg.dataset.is_image()) return sample_dataset_trajectory(cfg.dataset, seed);
  LabeledImages loaded;
  if (const auto* mnist = std::get_if<MnistSource>(&cfg.dataset.source)) {
    loaded = load_idx_images(mnist->images_path, mnist->labels_path,
                             static_cast<std::size_t>(image) + 1);
  } else {
    const auto& cifar = std::get<CifarSource>(cfg.dataset.source);
    loaded = load_cifar_batch(cifar.batch_path, static_cast<std::size_t>(image) + 1);
  }
  if (static_cast<std::size_t>(image) >= loaded.images.size()) {
    throw std::runtime_error("the dataset holds only " + std::to_string(loaded.images.size()) +
                             " images, image " + std::to_string(image) + " was requested");
  }
  return loaded.images[static_cast<std::size_t>(image)];
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"white-noise trajectory converters and closed-form baselines"};
  app.require_subcommand(1);
  int exit_code = 0;

  // generate: draw the per-seed truth trajectories of a 1-D dataset.
  auto* generate = app.add_subcommand("generate", "write per-seed dataset trajectories as CSV");
  std::string gen_config;
  std::string gen_out = "data";
  generate->add_option("--config", gen_config, "experiment configuration (JSON)")->required();
  generate->add_option("--out", gen_out, "output directory");
  generate->callback([&] {
    const ExperimentConfig cfg = parse_config(gen_config);
    if (cfg.dataset.is_image()) {
      throw std::invalid_argument("generate draws the synthetic 1-D datasets; image datasets "
                                  "are already files");
    }
    std::filesystem::create_directories(gen_out);
    for (std::uint64_t seed : cfg.seeds) {
      const Trajectory truth = sample_dataset_trajectory(cfg.dataset, seed);
      const std::string path =
          (std::filesystem::path(gen_out) /
           (cfg.dataset.kind() + "_seed" + std::to_string(seed) + ".csv"))
              .string();
      write_trajectory_csv(truth, path);
      std::cout << path << '\n';
    }
  });

  // train: fit one converter instance and save its checkpoint.
  auto* train_cmd = app.add_subcommand("train", "train one converter instance to a checkpoint");
  std::string train_config;
  std::string train_out = "checkpoint.json";
  std::string train_obs_out;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false;
  int train_n_obs = 0;
  int train_image = 0;
  train_cmd->add_option("--config", train_config, "experiment configuration (JSON)")->required();
  train_cmd->add_option("--out", train_out, "checkpoint path");
  train_cmd->add_option("--obs-out", train_obs_out, "also write the observations as CSV (1-D)");
  train_cmd->add_option("--seed", train_seed, "dataset seed (default: first in config)")
      ->each([&](const std::string&) { train_seed_set = true; });
  train_cmd->add_option("--n-obs", train_n_obs, "observation count (default: first in config)");
  train_cmd->add_option("--image", train_image, "image ordinal for image datasets")
      ->check(CLI::NonNegativeNumber);
  train_cmd->callback([&] {
    const ExperimentConfig cfg = parse_config(train_config);
    if (!cfg.converter.has_value()) {
      throw std::invalid_argument("the configuration does not list the \"cbc\" method, so "
                                  "there is no converter to train");
    }
    const std::uint64_t seed = train_seed_set ? train_seed : cfg.seeds.front();
    const int n_obs = train_n_obs > 0 ? train_n_obs : cfg.observation_counts.front();

    const Trajectory truth = detail::load_instance(cfg, seed, train_image);
    const std::uint64_t cell_seed = detail::cell_seed_for(cfg, seed, train_image, n_obs);
    RandomStream obs_rng(derive_seed(cell_seed, detail::role_observations));
    const ObservationSet obs = select_observations(truth, n_obs, obs_rng);

    Model model = build_converter(*cfg.converter, derive_seed(cell_seed, detail::role_init));
    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = derive_seed(cell_seed, detail::role_train);
    const TrainResult result = train(model, obs, train_cfg);

    save_checkpoint(model, train_out);
    if (!train_obs_out.empty()) {
      if (!std::holds_alternative<Grid1D>(truth.domain)) {
        throw std::invalid_argument("--obs-out is only available for 1-D datasets");
      }
      write_observations_csv(obs, std::get<Grid1D>(truth.domain), train_obs_out);
    }
    std::cout << train_out << " (" << result.loss_history.size() << " steps, final loss "
              << result.loss_history.back() << (result.converged ? ", converged" : "") << ")\n";
  });

  // sample: draw an ensemble from a checkpoint.
  auto* sample = app.add_subcommand("sample", "draw an ensemble from a checkpoint");
  std::string sample_checkpoint;
  std::string sample_out = "ensemble.csv";
  int sample_count = static_cast<int>(default_ensemble_size);
  std::uint64_t sample_seed = 1;
  sample->add_option("--checkpoint", sample_checkpoint, "checkpoint path")->required();
  sample->add_option("--out", sample_out, "ensemble CSV path");
  sample->add_option("--samples", sample_count, "ensemble size")->check(CLI::PositiveNumber);
  sample->add_option("--seed", sample_seed, "ensemble seed");
  sample->callback([&] {
    Model model = load_checkpoint(sample_checkpoint);
    const EnsembleSamples ensemble =
        sample_ensemble(model, static_cast<std::size_t>(sample_count), sample_seed);
    write_ensemble_csv(ensemble, sample_out);
    std::cout << sample_out << " (" << ensemble.n_samples << " samples x "
              << ensemble.trajectory_size << " sites)\n";
  });

  // evaluate: score an ensemble against a truth trajectory.
  auto* evaluate = app.add_subcommand("evaluate", "kernel-density NLL of an ensemble");
  std::string eval_ensemble;
  std::string eval_truth;
  std::string eval_obs;
  bool eval_all = false;
  evaluate->add_option("--ensemble", eval_ensemble, "ensemble CSV")->required();
  evaluate->add_option("--truth", eval_truth, "truth trajectory CSV")->required();
  evaluate->add_option("--obs", eval_obs, "observations CSV; scoring skips these sites");
  evaluate->add_flag("--all", eval_all, "score every site, observed ones included");
  evaluate->callback([&] {
    const EnsembleSamples ensemble = read_ensemble_csv(eval_ensemble);
    const Trajectory truth = read_trajectory_csv(eval_truth);
    std::vector<int> targets;
    if (!eval_obs.empty() && !eval_all) {
      const ObservationSet obs =
          read_observations_csv(eval_obs, domain_size(truth.domain));
      targets = obs.target_indices();
    } else {
      targets.resize(truth.values.size());
      for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i);
    }
    const NllReport report = kde_nll(ensemble, truth, targets);
    std::printf("mean_nll=%.6f stddev_nll=%.6f targets=%zu\n", report.mean_nll,
                report.stddev_nll, targets.size());
  });

  // experiment: run a configured sweep.
  auto* experiment = app.add_subcommand("experiment", "run a configured sweep");
  std::string exp_config;
  bool exp_quiet = false;
  experiment->add_option("--config", exp_config, "experiment configuration (JSON)")->required();
  experiment->add_flag("--quiet", exp_quiet, "suppress per-cell progress lines");
  experiment->callback([&] {
    const ExperimentConfig cfg = parse_config(exp_config);
    const auto progress = [&](const ResultRow& row) {
      if (exp_quiet) return;
      if (row.ok()) {
        std::printf("%s %s n_obs=%d seed=%llu mean_nll=%.4f (%ss)\n", row.method.c_str(),
                    row.dataset.c_str(), row.n_obs,
                    static_cast<unsigned long long>(row.seed), row.mean_nll,
                    detail::format_seconds(row.wall_time_s).c_str());
      } else {
        std::printf("%s %s n_obs=%d seed=%llu ERROR: %s\n", row.method.c_str(),
                    row.dataset.c_str(), row.n_obs,
                    static_cast<unsigned long long>(row.seed), row.error.c_str());
      }
      std::fflush(stdout);
    };
    const ResultTable table = run_experiment(cfg, progress);
    std::size_t failed = 0;
    for (const auto& row : table.rows) {
      if (!row.ok()) ++failed;
    }
    std::cout << (std::filesystem::path(cfg.output_dir) / "results.csv").string() << " ("
              << table.rows.size() << " rows";
    if (failed > 0) std::cout << ", " << failed << " failed";
    std::cout << ")\n";
    if (failed > 0) exit_code = 1;
  });

  // gradcheck: finite-difference audit of every differentiable op.
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of the tape ops");
  std::uint64_t gc_seed = 1;
  std::size_t gc_coords = 1000;
  gradcheck->add_option("--seed", gc_seed, "suite seed");
  gradcheck->add_option("--coords", gc_coords, "coordinates probed per composed network")
      ->check(CLI::PositiveNumber);
  gradcheck->callback([&] {
    const SuiteReport report = run_gradient_suite(gc_seed, gc_coords);
    for (const SuiteEntry& entry : report.entries) {
      std::printf("%-28s max_rel_err=%.3e coords=%zu\n", entry.name.c_str(), entry.max_rel_err,
                  entry.coords_checked);
    }
    std::printf("suite max relative error = %.3e\n", report.worst());
    if (!report.passed(1e-4)) exit_code = 1;
  });

  // plot: truth, observations, and ensemble band as SVG.
  auto* plot = app.add_subcommand("plot", "render truth, observations, and ensemble band");
  std::string plot_truth;
  std::string plot_obs;
  std::string plot_ensemble;
  std::string plot_out = "plot.svg";
  plot->add_option("--truth", plot_truth, "truth trajectory CSV")->required();
  plot->add_option("--obs", plot_obs, "observations CSV")->required();
  plot->add_option("--ensemble", plot_ensemble, "ensemble CSV")->required();
  plot->add_option("--out", plot_out, "SVG path");
  plot->callback([&] {
    const Trajectory truth = read_trajectory_csv(plot_truth);
    const ObservationSet obs = read_observations_csv(plot_obs, domain_size(truth.domain));
    const EnsembleSamples ensemble = read_ensemble_csv(plot_ensemble);
    emit_svg_plot(truth, obs, summarize(ensemble), plot_out);
    std::cout << plot_out << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return exit_code;
}

}  // namespace cbc
