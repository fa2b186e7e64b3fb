#pragma once

// Experiment orchestration: a JSON-configured sweep over (seed x observation
// count x method) cells, each scored by NLL on its target set, with per-cell
// artifacts written so every recorded number can be recomputed from disk.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cbc/baselines.hpp"
#include "cbc/checkpoint.hpp"
#include "cbc/converter.hpp"
#include "cbc/dataset_io.hpp"
#include "cbc/density.hpp"
#include "cbc/process.hpp"
#include "cbc/random.hpp"
#include "cbc/spec_json.hpp"

namespace cbc {

inline constexpr int config_schema_version = 1;

/// Image datasets read from user-supplied files; the first `count` images in
/// file order are used.
struct MnistSource {
  std::string images_path;
  std::string labels_path;
  int count = 10;
};

struct CifarSource {
  std::string batch_path;
  int count = 10;
};

struct DatasetSpec {
  std::variant<GpSpec, UniformSpec, MarkovBinarySpec, MnistSource, CifarSource> source;

  std::string kind() const {
    if (std::holds_alternative<GpSpec>(source)) return "gp";
    if (std::holds_alternative<UniformSpec>(source)) return "uniform";
    if (std::holds_alternative<MarkovBinarySpec>(source)) return "markov";
    if (std::holds_alternative<MnistSource>(source)) return "mnist";
    return "cifar";
  }

  bool is_image() const {
    return std::holds_alternative<MnistSource>(source) ||
           std::holds_alternative<CifarSource>(source);
  }
};

/// GP-baseline settings. With `ell_auto` the length-scale is matched to the
/// generating kernel on the GP dataset and grid-searched over {0.5, 1, 2} by
/// held-out likelihood elsewhere.
struct GpBaselineConfig {
  double sigma = 1.0;
  double noise = 1e-4;
  bool ell_auto = true;
  double ell = 1.0;
};

enum class NllScope { targets, all };

struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<int> observation_counts;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  std::optional<ConverterSpec> converter;  // resolved; engaged iff "cbc" is requested
  TrainConfig train;
  int ensemble_size = static_cast<int>(default_ensemble_size);
  NllScope nll_scope = NllScope::targets;
  GpBaselineConfig gp_baseline;
  bool record_wall_time = true;
  std::string output_dir = "results";

  bool has_method(const std::string& m) const {
    for (const auto& method : methods) {
      if (method == m) return true;
    }
    return false;
  }
};

/// One scored cell. On failure `error` is non-empty and the numeric columns
/// are NaN; the sweep itself keeps going.
struct ResultRow {
  std::string method;
  std::string dataset;
  int n_obs = 0;
  std::uint64_t seed = 0;
  double mean_nll = std::numeric_limits<double>::quiet_NaN();
  double stddev_nll = std::numeric_limits<double>::quiet_NaN();
  double obs_mse = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0.0;
  std::string error;

  bool ok() const { return error.empty(); }
};

struct ResultTable {
  std::vector<ResultRow> rows;
};

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

inline std::vector<int> dataset_output_shape(const DatasetSpec& dataset) {
  if (const auto* gp = std::get_if<GpSpec>(&dataset.source)) return {gp->n};
  if (const auto* uni = std::get_if<UniformSpec>(&dataset.source)) return {uni->n};
  if (const auto* markov = std::get_if<MarkovBinarySpec>(&dataset.source)) return {markov->n};
  if (std::holds_alternative<MnistSource>(dataset.source)) return {1, 28, 28};
  return {3, 32, 32};
}

inline int dataset_site_capacity(const DatasetSpec& dataset) {
  const auto shape = dataset_output_shape(dataset);
  if (shape.size() == 1) return shape[0];
  return shape[1] * shape[2];
}

inline void require_file_exists(const std::string& path, const std::string& context) {
  if (!std::filesystem::exists(path)) {
    json_error(context, "file \"" + path + "\" does not exist");
  }
}

}  // namespace detail

inline json dataset_to_json(const DatasetSpec& dataset) {
  if (const auto* gp = std::get_if<GpSpec>(&dataset.source)) {
    return json{{"kind", "gp"},     {"sigma", gp->sigma}, {"ell", gp->ell},
                {"n", gp->n},       {"x_min", gp->x_min}, {"x_max", gp->x_max}};
  }
  if (const auto* uni = std::get_if<UniformSpec>(&dataset.source)) {
    return json{{"kind", "uniform"}, {"low", uni->low}, {"high", uni->high}, {"n", uni->n}};
  }
  if (const auto* markov = std::get_if<MarkovBinarySpec>(&dataset.source)) {
    return json{{"kind", "markov"},
                {"p_stay", markov->p_stay},
                {"initial", std::vector<double>{markov->initial[0], markov->initial[1]}},
                {"n", markov->n}};
  }
  if (const auto* mnist = std::get_if<MnistSource>(&dataset.source)) {
    return json{{"kind", "mnist"},
                {"images", mnist->images_path},
                {"labels", mnist->labels_path},
                {"count", mnist->count}};
  }
  const auto& cifar = std::get<CifarSource>(dataset.source);
  return json{{"kind", "cifar"}, {"batch", cifar.batch_path}, {"count", cifar.count}};
}

inline DatasetSpec dataset_from_json(const json& j, const std::string& context = "dataset") {
  detail::require_object(j, context);
  const std::string kind = detail::get_string(j, "kind", context);
  DatasetSpec dataset;
  if (kind == "gp") {
    detail::reject_unknown_keys(j, {"kind", "sigma", "ell", "n", "x_min", "x_max"}, context);
    GpSpec spec;
    spec.sigma = detail::get_double_or(j, "sigma", spec.sigma, context);
    spec.ell = detail::get_double_or(j, "ell", spec.ell, context);
    spec.n = detail::get_int_or(j, "n", spec.n, context);
    spec.x_min = detail::get_double_or(j, "x_min", spec.x_min, context);
    spec.x_max = detail::get_double_or(j, "x_max", spec.x_max, context);
    spec.validate();
    dataset.source = spec;
  } else if (kind == "uniform") {
    detail::reject_unknown_keys(j, {"kind", "low", "high", "n"}, context);
    UniformSpec spec;
    spec.low = detail::get_double_or(j, "low", spec.low, context);
    spec.high = detail::get_double_or(j, "high", spec.high, context);
    spec.n = detail::get_int_or(j, "n", spec.n, context);
    spec.validate();
    dataset.source = spec;
  } else if (kind == "markov") {
    detail::reject_unknown_keys(j, {"kind", "p_stay", "initial", "n"}, context);
    MarkovBinarySpec spec;
    spec.p_stay = detail::get_double_or(j, "p_stay", spec.p_stay, context);
    if (j.contains("initial")) {
      const json& init = j.at("initial");
      if (!init.is_array() || init.size() != 2 || !init[0].is_number() || !init[1].is_number()) {
        detail::json_error(context + ".initial", "expected an array of two numbers");
      }
      spec.initial = {init[0].get<double>(), init[1].get<double>()};
    }
    spec.n = detail::get_int_or(j, "n", spec.n, context);
    spec.validate();
    dataset.source = spec;
  } else if (kind == "mnist") {
    detail::reject_unknown_keys(j, {"kind", "images", "labels", "count"}, context);
    MnistSource src;
    src.images_path = detail::get_string(j, "images", context);
    src.labels_path = detail::get_string(j, "labels", context);
    src.count = detail::get_int_or(j, "count", src.count, context);
    if (src.count < 1) detail::json_error(context + ".count", "must be at least 1");
    detail::require_file_exists(src.images_path, context + ".images");
    detail::require_file_exists(src.labels_path, context + ".labels");
    dataset.source = src;
  } else if (kind == "cifar") {
    detail::reject_unknown_keys(j, {"kind", "batch", "count"}, context);
    CifarSource src;
    src.batch_path = detail::get_string(j, "batch", context);
    src.count = detail::get_int_or(j, "count", src.count, context);
    if (src.count < 1) detail::json_error(context + ".count", "must be at least 1");
    detail::require_file_exists(src.batch_path, context + ".batch");
    dataset.source = src;
  } else {
    detail::json_error(context + ".kind", "unknown dataset kind \"" + kind + "\"");
  }
  return dataset;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json j{{"schema_version", config_schema_version},
         {"dataset", dataset_to_json(cfg.dataset)},
         {"observation_counts", cfg.observation_counts},
         {"seeds", cfg.seeds},
         {"methods", cfg.methods},
         {"train", train_config_to_json(cfg.train)},
         {"ensemble_size", cfg.ensemble_size},
         {"nll_scope", cfg.nll_scope == NllScope::all ? "all" : "targets"},
         {"gp_baseline",
          json{{"sigma", cfg.gp_baseline.sigma},
               {"noise", cfg.gp_baseline.noise},
               {"ell", cfg.gp_baseline.ell_auto ? json("auto") : json(cfg.gp_baseline.ell)}}},
         {"record_wall_time", cfg.record_wall_time},
         {"output_dir", cfg.output_dir}};
  if (cfg.converter.has_value()) j["converter"] = converter_spec_to_json(*cfg.converter);
  return j;
}

inline ExperimentConfig config_from_json(const json& j, const std::string& context = "config") {
  detail::reject_unknown_keys(
      j,
      {"schema_version", "dataset", "observation_counts", "seeds", "methods", "converter",
       "train", "ensemble_size", "nll_scope", "gp_baseline", "record_wall_time", "output_dir"},
      context);
  const int version = detail::get_int_or(j, "schema_version", config_schema_version, context);
  if (version != config_schema_version) {
    detail::json_error(context + ".schema_version",
                       "version " + std::to_string(version) + " is not supported");
  }

  ExperimentConfig cfg;
  cfg.dataset = dataset_from_json(detail::require_field(j, "dataset", context),
                                  context + ".dataset");

  const json& counts = detail::require_field(j, "observation_counts", context);
  if (!counts.is_array() || counts.empty()) {
    detail::json_error(context + ".observation_counts", "expected a non-empty array");
  }
  const int capacity = detail::dataset_site_capacity(cfg.dataset);
  for (const json& c : counts) {
    if (!c.is_number_integer()) {
      detail::json_error(context + ".observation_counts", "expected integers");
    }
    const int n_obs = c.get<int>();
    if (n_obs < 1 || n_obs > capacity) {
      detail::json_error(context + ".observation_counts",
                         "count " + std::to_string(n_obs) + " is outside [1, " +
                             std::to_string(capacity) + "] for this dataset");
    }
    cfg.observation_counts.push_back(n_obs);
  }

  const json& seeds = detail::require_field(j, "seeds", context);
  if (!seeds.is_array() || seeds.empty()) {
    detail::json_error(context + ".seeds", "expected a non-empty array");
  }
  for (const json& s : seeds) {
    if (!s.is_number_integer() && !s.is_number_unsigned()) {
      detail::json_error(context + ".seeds", "expected integers");
    }
    cfg.seeds.push_back(s.get<std::uint64_t>());
  }

  const json& methods = detail::require_field(j, "methods", context);
  if (!methods.is_array() || methods.empty()) {
    detail::json_error(context + ".methods", "expected a non-empty array");
  }
  for (const json& m : methods) {
    if (!m.is_string()) detail::json_error(context + ".methods", "expected strings");
    const std::string method = m.get<std::string>();
    if (method != "cbc" && method != "gp" && method != "chain") {
      detail::json_error(context + ".methods",
                         "unknown method \"" + method + "\" (expected cbc, gp, or chain)");
    }
    if (cfg.has_method(method)) {
      detail::json_error(context + ".methods", "method \"" + method + "\" is listed twice");
    }
    cfg.methods.push_back(method);
  }

  if (j.contains("train")) {
    cfg.train = train_config_from_json(j.at("train"), context + ".train");
  }
  cfg.ensemble_size = detail::get_int_or(j, "ensemble_size", cfg.ensemble_size, context);
  if (cfg.ensemble_size < 2) detail::json_error(context + ".ensemble_size", "must be at least 2");

  if (j.contains("nll_scope")) {
    const std::string scope = detail::get_string(j, "nll_scope", context);
    if (scope == "targets") {
      cfg.nll_scope = NllScope::targets;
    } else if (scope == "all") {
      cfg.nll_scope = NllScope::all;
    } else {
      detail::json_error(context + ".nll_scope",
                         "expected \"targets\" or \"all\", got \"" + scope + "\"");
    }
  }

  if (j.contains("gp_baseline")) {
    const json& g = j.at("gp_baseline");
    const std::string gctx = context + ".gp_baseline";
    detail::reject_unknown_keys(g, {"sigma", "noise", "ell"}, gctx);
    cfg.gp_baseline.sigma = detail::get_double_or(g, "sigma", cfg.gp_baseline.sigma, gctx);
    cfg.gp_baseline.noise = detail::get_double_or(g, "noise", cfg.gp_baseline.noise, gctx);
    if (g.contains("ell")) {
      const json& ell = g.at("ell");
      if (ell.is_string() && ell.get<std::string>() == "auto") {
        cfg.gp_baseline.ell_auto = true;
      } else if (ell.is_number()) {
        cfg.gp_baseline.ell_auto = false;
        cfg.gp_baseline.ell = ell.get<double>();
        if (!(cfg.gp_baseline.ell > 0.0)) detail::json_error(gctx + ".ell", "must be positive");
      } else {
        detail::json_error(gctx + ".ell", "expected a number or \"auto\"");
      }
    }
  }

  if (j.contains("record_wall_time")) {
    const json& r = j.at("record_wall_time");
    if (!r.is_boolean()) detail::json_error(context + ".record_wall_time", "expected a boolean");
    cfg.record_wall_time = r.get<bool>();
  }
  if (j.contains("output_dir")) cfg.output_dir = detail::get_string(j, "output_dir", context);

  if (cfg.has_method("cbc")) {
    ConverterSpec spec;
    if (j.contains("converter")) {
      const json& conv = j.at("converter");
      if (conv.is_string()) {
        spec = canonical_spec(conv.get<std::string>());
      } else {
        spec = converter_spec_from_json(conv, context + ".converter");
      }
    } else {
      // Default to the canonical architecture for the dataset family.
      const std::string kind = cfg.dataset.kind();
      if (kind == "mnist") {
        spec = smooth2d_mnist();
      } else if (kind == "cifar") {
        spec = smooth2d_cifar();
      } else {
        spec = cbc1d_200();
      }
    }
    const auto produced = infer_shapes(spec);
    const auto wanted = detail::dataset_output_shape(cfg.dataset);
    if (produced != wanted) {
      detail::json_error(context + ".converter",
                         "converter emits " + shape_to_string(produced) +
                             " but the dataset needs " + shape_to_string(wanted));
    }
    cfg.converter = std::move(spec);
  } else if (j.contains("converter")) {
    detail::json_error(context + ".converter",
                       "a converter is given but \"cbc\" is not among the methods");
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("parse_config: " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, path);
}

// ---------------------------------------------------------------------------
// CSV emission

namespace detail {

inline std::string format_cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline bool row_before(const ResultRow& a, const ResultRow& b) {
  if (a.method != b.method) return a.method < b.method;
  if (a.dataset != b.dataset) return a.dataset < b.dataset;
  if (a.n_obs != b.n_obs) return a.n_obs < b.n_obs;
  return a.seed < b.seed;
}

}  // namespace detail

inline constexpr const char* result_csv_header =
    "method,dataset,n_obs,seed,mean_nll,stddev_nll,obs_mse,wall_time_s";

/// Writes the table sorted by (method, dataset, n_obs, seed) with fixed
/// 6-decimal numeric formatting, so equal tables give equal bytes.
inline void emit_csv(const ResultTable& table, const std::string& path) {
  ResultTable sorted = table;
  std::sort(sorted.rows.begin(), sorted.rows.end(), detail::row_before);
  auto out = detail::open_for_write(path, "emit_csv");
  out << result_csv_header << '\n';
  for (const ResultRow& row : sorted.rows) {
    out << row.method << ',' << row.dataset << ',' << row.n_obs << ',' << row.seed << ','
        << detail::format_cell(row.mean_nll) << ',' << detail::format_cell(row.stddev_nll) << ','
        << detail::format_cell(row.obs_mse) << ',' << detail::format_cell(row.wall_time_s) << '\n';
  }
}

inline ResultTable parse_result_csv(const std::string& path) {
  const auto rows = detail::read_csv(path, result_csv_header, "parse_result_csv");
  ResultTable table;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 8) {
      throw std::runtime_error("parse_result_csv: row " + std::to_string(r + 1) + " has " +
                               std::to_string(rows[r].size()) + " fields, expected 8");
    }
    ResultRow row;
    row.method = rows[r][0];
    row.dataset = rows[r][1];
    row.n_obs = static_cast<int>(detail::parse_long(rows[r][2], "parse_result_csv"));
    row.seed = static_cast<std::uint64_t>(
        std::stoull(rows[r][3]));
    row.mean_nll = detail::parse_double(rows[r][4], "parse_result_csv");
    row.stddev_nll = detail::parse_double(rows[r][5], "parse_result_csv");
    row.obs_mse = detail::parse_double(rows[r][6], "parse_result_csv");
    row.wall_time_s = detail::parse_double(rows[r][7], "parse_result_csv");
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Cell execution

namespace detail {

/// Seed roles hanging off one cell seed, so changing e.g. the ensemble draw
/// count never perturbs observation selection.
enum : std::uint64_t {
  role_trajectory = 0,
  role_observations = 1,
  role_init = 2,
  role_train = 3,
  role_ensemble = 4,
  role_gp_split = 5,
  role_obs_mse = 6,
};

inline std::string sanitize_for_path(std::string name) {
  for (char& c : name) {
    if (c == '#' || c == '/' || c == '\\' || c == ' ') c = '-';
  }
  return name;
}

/// Truth values in the generic one-sample ensemble layout, usable for any
/// domain (the 1-D trajectory CSV needs grid positions).
inline void write_truth_csv(const Trajectory& truth, const std::string& path) {
  EnsembleSamples one;
  one.n_samples = 1;
  one.trajectory_size = truth.values.size();
  one.values = truth.values;
  write_ensemble_csv(one, path);
}

inline Trajectory read_truth_csv(const std::string& path, const Domain& domain) {
  const EnsembleSamples one = read_ensemble_csv(path);
  if (one.n_samples != 1) {
    throw std::runtime_error("read_truth_csv: " + path + " holds more than one sample");
  }
  return Trajectory(domain, one.values);
}

inline void write_targets_csv(const std::vector<int>& targets, const std::string& path) {
  auto out = open_for_write(path, "write_targets_csv");
  out << "index\n";
  for (int t : targets) out << t << '\n';
}

inline std::vector<int> read_targets_csv(const std::string& path) {
  const auto rows = read_csv(path, "index", "read_targets_csv");
  std::vector<int> targets;
  for (const auto& row : rows) {
    if (row.size() != 1) throw std::runtime_error("read_targets_csv: malformed row");
    targets.push_back(static_cast<int>(parse_long(row[0], "read_targets_csv")));
  }
  return targets;
}

inline void write_posterior_csv(const GpPosterior& post, const std::string& path) {
  auto out = open_for_write(path, "write_posterior_csv");
  out << "index,mean,variance\n";
  for (std::size_t t = 0; t < post.target_indices.size(); ++t) {
    out << post.target_indices[t] << ',' << format_double(post.mean[t]) << ','
        << format_double(post.variance[t]) << '\n';
  }
}

inline GpPosterior read_posterior_csv(const std::string& path) {
  const auto rows = read_csv(path, "index,mean,variance", "read_posterior_csv");
  GpPosterior post;
  for (const auto& row : rows) {
    if (row.size() != 3) throw std::runtime_error("read_posterior_csv: malformed row");
    post.target_indices.push_back(static_cast<int>(parse_long(row[0], "read_posterior_csv")));
    post.mean.push_back(parse_double(row[1], "read_posterior_csv"));
    post.variance.push_back(parse_double(row[2], "read_posterior_csv"));
  }
  return post;
}

inline void write_marginals_csv(const ChainMarginals& marginals, const std::string& path) {
  auto out = open_for_write(path, "write_marginals_csv");
  out << "index,p_one\n";
  for (std::size_t t = 0; t < marginals.p_one.size(); ++t) {
    out << t << ',' << format_double(marginals.p_one[t]) << '\n';
  }
}

inline ChainMarginals read_marginals_csv(const std::string& path) {
  const auto rows = read_csv(path, "index,p_one", "read_marginals_csv");
  ChainMarginals marginals;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 2 ||
        parse_long(rows[r][0], "read_marginals_csv") != static_cast<long>(r)) {
      throw std::runtime_error("read_marginals_csv: malformed row " + std::to_string(r + 1));
    }
    marginals.p_one.push_back(parse_double(rows[r][1], "read_marginals_csv"));
  }
  return marginals;
}

}  // namespace detail

/// Draws the truth trajectory a sweep would use for this seed. Only the
/// process datasets are sampled; image datasets come from files.
inline Trajectory sample_dataset_trajectory(const DatasetSpec& dataset, std::uint64_t seed) {
  if (dataset.is_image()) {
    throw std::invalid_argument("sample_dataset_trajectory: image datasets are loaded, not sampled");
  }
  RandomStream rng(derive_seed(seed, detail::role_trajectory));
  if (const auto* gp = std::get_if<GpSpec>(&dataset.source)) return sample_gp(*gp, rng);
  if (const auto* uni = std::get_if<UniformSpec>(&dataset.source)) return sample_uniform(*uni, rng);
  return sample_markov_chain(std::get<MarkovBinarySpec>(dataset.source), rng);
}

namespace detail {

struct CellInputs {
  const ExperimentConfig& cfg;
  const Trajectory& truth;
  const ObservationSet& obs;
  const std::vector<int>& targets;
  std::uint64_t cell_seed;
  std::filesystem::path cell_dir;
};

inline NllReport run_cbc_cell(const CellInputs& in, double* obs_mse) {
  Model model = build_converter(*in.cfg.converter, derive_seed(in.cell_seed, role_init));
  TrainConfig train_cfg = in.cfg.train;
  train_cfg.seed = derive_seed(in.cell_seed, role_train);
  train(model, in.obs, train_cfg);

  const EnsembleSamples ensemble = sample_ensemble(
      model, static_cast<std::size_t>(in.cfg.ensemble_size),
      derive_seed(in.cell_seed, role_ensemble));
  *obs_mse = ensemble_observation_mse(model, in.obs, 64, derive_seed(in.cell_seed, role_obs_mse));

  save_checkpoint(model, (in.cell_dir / "checkpoint.json").string());
  write_ensemble_csv(ensemble, (in.cell_dir / "ensemble.csv").string());
  return kde_nll(ensemble, in.truth, in.targets);
}

inline NllReport run_gp_cell(const CellInputs& in, double* obs_mse) {
  if (!std::holds_alternative<Grid1D>(in.truth.domain)) {
    throw std::invalid_argument("gp baseline requires a 1-D dataset");
  }
  const auto& grid = std::get<Grid1D>(in.truth.domain);

  GpRegressionConfig reg;
  reg.sigma = in.cfg.gp_baseline.sigma;
  reg.noise = in.cfg.gp_baseline.noise;
  if (!in.cfg.gp_baseline.ell_auto) {
    reg.ell = in.cfg.gp_baseline.ell;
  } else if (const auto* gp = std::get_if<GpSpec>(&in.cfg.dataset.source)) {
    reg.ell = gp->ell;  // matched kernel on the GP dataset
  } else {
    reg.ell = select_length_scale(in.obs, grid, reg.sigma, reg.noise,
                                  derive_seed(in.cell_seed, role_gp_split));
  }

  const GpPosterior post = gp_posterior(in.obs, grid, reg, in.targets);

  const std::vector<int> observed = in.obs.observed_indices();
  if (observed.empty()) {
    *obs_mse = 0.0;
  } else {
    const GpPosterior at_obs = gp_posterior(in.obs, grid, reg, observed);
    double mse = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
      const double d = at_obs.mean[i] - in.obs.entries[i].value;
      mse += d * d;
    }
    *obs_mse = mse / static_cast<double>(observed.size());
  }

  write_posterior_csv(post, (in.cell_dir / "posterior.csv").string());
  return gaussian_nll(post, in.truth);
}

inline NllReport run_chain_cell(const CellInputs& in, double* obs_mse) {
  const auto* spec = std::get_if<MarkovBinarySpec>(&in.cfg.dataset.source);
  if (spec == nullptr) {
    throw std::invalid_argument("chain method requires the markov dataset");
  }
  const ChainMarginals marginals = chain_conditional_marginals(in.obs, *spec);

  double mse = 0.0;
  for (const auto& e : in.obs.entries) {
    const double d = marginals.p_one[static_cast<std::size_t>(e.index)] - e.value;
    mse += d * d;
  }
  *obs_mse = in.obs.entries.empty() ? 0.0 : mse / static_cast<double>(in.obs.entries.size());

  write_marginals_csv(marginals, (in.cell_dir / "marginals.csv").string());
  return chain_nll(marginals, in.truth, in.targets);
}

}  // namespace detail

/// Recomputes a cell's mean NLL purely from its on-disk artifacts. Artifact
/// doubles are stored losslessly, so the result equals the recorded value
/// exactly for every method.
inline double rescore_cell(const std::string& cell_dir, const std::string& method,
                           const Domain& domain) {
  namespace fs = std::filesystem;
  const fs::path dir(cell_dir);
  const Trajectory truth = detail::read_truth_csv((dir / "truth.csv").string(), domain);
  const std::vector<int> targets = detail::read_targets_csv((dir / "targets.csv").string());
  if (method == "cbc") {
    const EnsembleSamples ensemble = read_ensemble_csv((dir / "ensemble.csv").string());
    return kde_nll(ensemble, truth, targets).mean_nll;
  }
  if (method == "gp") {
    const GpPosterior post = detail::read_posterior_csv((dir / "posterior.csv").string());
    return gaussian_nll(post, truth).mean_nll;
  }
  if (method == "chain") {
    const ChainMarginals marginals = detail::read_marginals_csv((dir / "marginals.csv").string());
    return chain_nll(marginals, truth, targets).mean_nll;
  }
  throw std::invalid_argument("rescore_cell: unknown method \"" + method + "\"");
}

using CellCallback = std::function<void(const ResultRow&)>;

/// Runs the full (seed x image x n_obs x method) sweep. Every cell writes its
/// artifacts under `<output_dir>/cells/<method>_<dataset>_<n_obs>_<seed>/`;
/// failures become rows with an error marker instead of aborting the sweep.
/// Finishes by writing `results.csv` and the canonical `config.json`.
inline ResultTable run_experiment(const ExperimentConfig& cfg, const CellCallback& on_cell = {}) {
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir / "cells");

  // Truth instances: per seed for process datasets, per (seed, image) for
  // image datasets. The dataset label distinguishes images, not seeds.
  struct Instance {
    std::uint64_t seed;
    std::uint64_t instance_seed;  // cell seeds derive from this and n_obs
    std::string label;
    Trajectory truth;
  };
  std::vector<Instance> instances;

  if (cfg.dataset.is_image()) {
    LabeledImages loaded;
    if (const auto* mnist = std::get_if<MnistSource>(&cfg.dataset.source)) {
      loaded = load_idx_images(mnist->images_path, mnist->labels_path,
                               static_cast<std::size_t>(mnist->count));
    } else {
      const auto& cifar = std::get<CifarSource>(cfg.dataset.source);
      loaded = load_cifar_batch(cifar.batch_path, static_cast<std::size_t>(cifar.count));
    }
    if (loaded.images.empty()) {
      throw std::runtime_error("run_experiment: the image dataset is empty");
    }
    if (cfg.converter.has_value()) {
      const auto wanted = detail::dataset_output_shape(cfg.dataset);
      const auto& d = std::get<Grid2D>(loaded.images[0].domain);
      if (std::vector<int>{d.channels, d.height, d.width} != wanted) {
        throw std::invalid_argument("run_experiment: images are " +
                                    shape_to_string({d.channels, d.height, d.width}) +
                                    " but the configuration expects " + shape_to_string(wanted));
      }
    }
    for (std::uint64_t seed : cfg.seeds) {
      for (std::size_t k = 0; k < loaded.images.size(); ++k) {
        instances.push_back({seed, derive_seed(seed, k),
                             cfg.dataset.kind() + "#" + std::to_string(k), loaded.images[k]});
      }
    }
  } else {
    for (std::uint64_t seed : cfg.seeds) {
      instances.push_back(
          {seed, seed, cfg.dataset.kind(), sample_dataset_trajectory(cfg.dataset, seed)});
    }
  }

  ResultTable table;
  for (const Instance& instance : instances) {
    for (int n_obs : cfg.observation_counts) {
      const std::uint64_t cell_seed = derive_seed(instance.instance_seed, static_cast<std::uint64_t>(n_obs));
      RandomStream obs_rng(derive_seed(cell_seed, detail::role_observations));
      const ObservationSet obs = select_observations(instance.truth, n_obs, obs_rng);

      std::vector<int> targets;
      if (cfg.nll_scope == NllScope::all) {
        targets.resize(static_cast<std::size_t>(domain_size(instance.truth.domain)));
        for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i);
      } else {
        targets = obs.target_indices();
      }

      for (const std::string& method : cfg.methods) {
        ResultRow row;
        row.method = method;
        row.dataset = instance.label;
        row.n_obs = n_obs;
        row.seed = instance.seed;

        const fs::path cell_dir =
            out_dir / "cells" /
            (method + "_" + detail::sanitize_for_path(instance.label) + "_" +
             std::to_string(n_obs) + "_" + std::to_string(instance.seed));
        fs::create_directories(cell_dir);

        const auto t0 = std::chrono::steady_clock::now();
        try {
          detail::write_truth_csv(instance.truth, (cell_dir / "truth.csv").string());
          detail::write_targets_csv(targets, (cell_dir / "targets.csv").string());

          const detail::CellInputs inputs{cfg, instance.truth, obs, targets, cell_seed, cell_dir};
          double obs_mse = 0.0;
          NllReport report;
          if (method == "cbc") {
            report = detail::run_cbc_cell(inputs, &obs_mse);
          } else if (method == "gp") {
            report = detail::run_gp_cell(inputs, &obs_mse);
          } else {
            report = detail::run_chain_cell(inputs, &obs_mse);
          }
          row.mean_nll = report.mean_nll;
          row.stddev_nll = report.stddev_nll;
          row.obs_mse = obs_mse;
        } catch (const std::exception& e) {
          row.error = e.what();
          std::ofstream((cell_dir / "error.txt").string()) << e.what() << '\n';
        }
        const auto t1 = std::chrono::steady_clock::now();
        if (cfg.record_wall_time) {
          row.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
        }
        if (on_cell) on_cell(row);
        table.rows.push_back(std::move(row));
      }
    }
  }

  emit_csv(table, (out_dir / "results.csv").string());
  std::ofstream((out_dir / "config.json").string()) << config_to_json(cfg).dump(2) << '\n';
  return table;
}

}  // namespace cbc
