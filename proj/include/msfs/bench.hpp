#pragma once

// Exhaustive grid runner over (alpha, beta, rho, l, repetition) cells.
//
// Layout of the output directory:
//   cells/<fingerprint>.json   one file per finished cell (resume state)
//   summary.csv                one row per cell, sorted by key
//   aggregate.csv              mean/std over repetitions per grid point
//   best.csv                   best aggregate row per (dataset, metric)
//   baseline.csv               ML-KNN on all features, per repetition
//   ranks_<metric>.csv         Friedman ranks of method variants
//   cd_summary.txt             Bonferroni-Dunn comparison lines
//   run.json                   run record: fingerprint, config, seeds, timings

#include "msfs/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace msfs {

using Json = nlohmann::json;

struct DatasetEntry {
  DataSource source;
  std::optional<SplitSpec> split;
  bool split_seed_given = false;
};

struct ExperimentConfig {
  std::vector<DatasetEntry> datasets;
  double noise_ratio = 0.15;
  Index walk_steps = 80;
  WalkMode walk_mode = WalkMode::dfs;
  std::optional<double> sigma;
  std::vector<double> alpha_list;
  std::vector<double> beta_list;
  std::vector<double> rho_list;
  int max_iters = 50;
  double tol = 1e-6;
  std::vector<Index> feature_counts;
  int mlknn_k = 7;
  double mlknn_smooth = 1.0;
  int repetitions = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string output;
  Json resolved;  // fully defaulted config, used for the fingerprint
};

inline std::vector<double> default_decades() {
  return {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
}

inline std::vector<double> default_rho_grid() {
  std::vector<double> out;
  for (int i = 0; i <= 10; ++i) out.push_back(i / 10.0);
  return out;
}

inline std::vector<Index> default_feature_counts() {
  std::vector<Index> out;
  for (Index l = 5; l <= 100; l += 5) out.push_back(l);
  return out;
}

namespace detail {

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!obj.is_object()) throw UsageError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw UsageError("unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
T get_or(const Json& obj, const char* key, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw UsageError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline std::optional<SplitSpec> parse_split(const Json& j, const std::string& where) {
  reject_unknown(j, {"train_count", "test_count", "mode", "seed"}, where);
  SplitSpec s;
  s.train_count = get_or<Index>(j, "train_count", 0);
  s.test_count = get_or<Index>(j, "test_count", 0);
  s.seed = get_or<std::uint64_t>(j, "seed", 0);
  const auto mode = get_or<std::string>(j, "mode", "first_n");
  if (mode == "first_n") {
    s.mode = SplitMode::first_n;
  } else if (mode == "shuffled") {
    s.mode = SplitMode::shuffled;
  } else {
    throw UsageError("split mode must be first_n or shuffled");
  }
  if (s.train_count < 1 || s.test_count < 1) {
    throw UsageError(where + " needs positive train_count and test_count");
  }
  return s;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

/// Stable hash of a JSON value. Object keys are sorted by nlohmann::json, so
/// the result does not depend on key order in the source file.
inline std::string fingerprint(const Json& j) {
  return detail::hex64(seeds::splitmix64(seeds::fnv1a(j.dump())));
}

inline ExperimentConfig parse_config(const Json& root) {
  using detail::get_or;
  detail::reject_unknown(root,
                         {"datasets", "split", "noise", "walk", "solver", "feature_counts",
                          "mlknn", "repetitions", "seed", "threads", "output"},
                         "config");
  ExperimentConfig cfg;
  if (!root.contains("datasets") || !root["datasets"].is_array() || root["datasets"].empty()) {
    throw UsageError("config needs a nonempty 'datasets' array");
  }
  std::optional<SplitSpec> global_split;
  if (root.contains("split")) global_split = detail::parse_split(root["split"], "split");

  Json resolved = Json::object();
  Json ds_resolved = Json::array();
  std::set<std::string> names;
  for (const auto& d : root["datasets"]) {
    detail::reject_unknown(d, {"name", "format", "path", "labels", "header", "test_path", "split"},
                           "dataset entry");
    DatasetEntry e;
    e.source.path = get_or<std::string>(d, "path", "");
    if (e.source.path.empty()) throw UsageError("dataset entry needs 'path'");
    e.source.name = get_or<std::string>(d, "name", std::filesystem::path(e.source.path).stem());
    if (!names.insert(e.source.name).second) {
      throw UsageError("duplicate dataset name '" + e.source.name + "'");
    }
    e.source.format = parse_format(get_or<std::string>(d, "format", "csv"));
    if (!d.contains("labels")) throw UsageError("dataset entry needs 'labels'");
    e.source.labels = d["labels"].is_number_integer() ? std::to_string(d["labels"].get<long long>())
                                                      : get_or<std::string>(d, "labels", "");
    e.source.header = get_or<bool>(d, "header", false);
    e.source.test_path = get_or<std::string>(d, "test_path", "");
    e.split = d.contains("split") ? detail::parse_split(d["split"], "dataset split") : global_split;
    if (e.split) {
      const Json& sj = d.contains("split") ? d["split"] : root["split"];
      e.split_seed_given = sj.contains("seed");
    }
    if (!e.split && e.source.test_path.empty()) {
      throw UsageError("dataset '" + e.source.name + "' needs a split or a test_path");
    }
    Json jd = {{"name", e.source.name},     {"format", e.source.format == DataFormat::csv ? "csv" : "arff"},
               {"path", e.source.path},     {"labels", e.source.labels},
               {"header", e.source.header}, {"test_path", e.source.test_path}};
    ds_resolved.push_back(jd);
    cfg.datasets.push_back(std::move(e));
  }
  resolved["datasets"] = ds_resolved;

  if (root.contains("noise")) {
    detail::reject_unknown(root["noise"], {"ratio"}, "noise");
    cfg.noise_ratio = get_or<double>(root["noise"], "ratio", cfg.noise_ratio);
  }
  if (!(cfg.noise_ratio >= 0.0)) throw UsageError("noise ratio must be >= 0");
  resolved["noise"] = {{"ratio", cfg.noise_ratio}};

  if (root.contains("walk")) {
    const auto& w = root["walk"];
    detail::reject_unknown(w, {"steps", "mode", "sigma"}, "walk");
    cfg.walk_steps = get_or<Index>(w, "steps", cfg.walk_steps);
    cfg.walk_mode = parse_walk_mode(get_or<std::string>(w, "mode", "dfs"));
    if (w.contains("sigma") && !w["sigma"].is_null()) cfg.sigma = w["sigma"].get<double>();
  }
  if (cfg.walk_steps < 1) throw UsageError("walk steps must be >= 1");
  if (cfg.sigma && !(*cfg.sigma > 0.0)) throw UsageError("sigma must be > 0");
  resolved["walk"] = {{"steps", cfg.walk_steps},
                      {"mode", to_string(cfg.walk_mode)},
                      {"sigma", cfg.sigma ? Json(*cfg.sigma) : Json(nullptr)}};

  cfg.alpha_list = default_decades();
  cfg.beta_list = default_decades();
  cfg.rho_list = default_rho_grid();
  if (root.contains("solver")) {
    const auto& s = root["solver"];
    detail::reject_unknown(s, {"alpha", "beta", "rho", "max_iters", "tol"}, "solver");
    cfg.alpha_list = get_or<std::vector<double>>(s, "alpha", cfg.alpha_list);
    cfg.beta_list = get_or<std::vector<double>>(s, "beta", cfg.beta_list);
    cfg.rho_list = get_or<std::vector<double>>(s, "rho", cfg.rho_list);
    cfg.max_iters = get_or<int>(s, "max_iters", cfg.max_iters);
    cfg.tol = get_or<double>(s, "tol", cfg.tol);
  }
  if (cfg.alpha_list.empty() || cfg.beta_list.empty() || cfg.rho_list.empty()) {
    throw UsageError("solver grids must be nonempty");
  }
  for (double a : cfg.alpha_list) {
    for (double b : cfg.beta_list) {
      for (double r : cfg.rho_list) {
        SolverParams{a, b, r, cfg.max_iters, cfg.tol}.validate();
      }
    }
  }
  resolved["solver"] = {{"alpha", cfg.alpha_list}, {"beta", cfg.beta_list},
                        {"rho", cfg.rho_list},     {"max_iters", cfg.max_iters},
                        {"tol", cfg.tol}};

  cfg.feature_counts = get_or<std::vector<Index>>(root, "feature_counts", default_feature_counts());
  if (cfg.feature_counts.empty()) throw UsageError("feature_counts must be nonempty");
  for (Index l : cfg.feature_counts) {
    if (l < 1) throw UsageError("feature counts must be positive");
  }
  resolved["feature_counts"] = cfg.feature_counts;

  if (root.contains("mlknn")) {
    detail::reject_unknown(root["mlknn"], {"k", "smooth"}, "mlknn");
    cfg.mlknn_k = get_or<int>(root["mlknn"], "k", cfg.mlknn_k);
    cfg.mlknn_smooth = get_or<double>(root["mlknn"], "smooth", cfg.mlknn_smooth);
  }
  resolved["mlknn"] = {{"k", cfg.mlknn_k}, {"smooth", cfg.mlknn_smooth}};

  cfg.repetitions = get_or<int>(root, "repetitions", cfg.repetitions);
  if (cfg.repetitions < 1) throw UsageError("repetitions must be >= 1");
  resolved["repetitions"] = cfg.repetitions;
  cfg.seed = get_or<std::uint64_t>(root, "seed", cfg.seed);
  resolved["seed"] = cfg.seed;
  // Shuffled splits without an explicit seed draw one from the master seed.
  for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
    auto& e = cfg.datasets[d];
    if (!e.split) continue;
    if (!e.split_seed_given) e.split->seed = seeds::derive(cfg.seed, "split", d);
    resolved["datasets"][d]["split"] = {
        {"train_count", e.split->train_count},
        {"test_count", e.split->test_count},
        {"seed", e.split->mode == SplitMode::first_n ? 0 : e.split->seed},
        {"mode", e.split->mode == SplitMode::first_n ? "first_n" : "shuffled"}};
  }
  cfg.threads = get_or<unsigned>(root, "threads", cfg.threads);
  cfg.output = get_or<std::string>(root, "output", "");
  cfg.resolved = resolved;
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  Json root;
  try {
    root = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw IoError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(root);
}

/// Fingerprint of the resolved config: independent of key order, output
/// directory and thread count.
inline std::string config_fingerprint(const ExperimentConfig& cfg) {
  return fingerprint(cfg.resolved);
}

// Per-stage seeds for dataset `d`, repetition `rep`.
inline std::uint64_t noise_seed(std::uint64_t master, std::size_t d, int rep) {
  return seeds::derive(master, "noise", d, static_cast<std::uint64_t>(rep));
}
inline std::uint64_t walk_seed(std::uint64_t master, std::size_t d, int rep) {
  return seeds::derive(master, "walk", d, static_cast<std::uint64_t>(rep));
}

struct CellKey {
  std::size_t dataset = 0;
  double alpha = 0, beta = 0, rho = 0;
  Index l = 0;
  int rep = 0;

  auto tie() const { return std::tie(dataset, alpha, beta, rho, l, rep); }
  bool operator<(const CellKey& o) const { return tie() < o.tie(); }
};

struct CellResult {
  CellKey key;
  std::optional<MetricReport> metrics;
  std::string error;
  double fit_seconds = 0.0;
  double eval_seconds = 0.0;
};

/// Noisy split plus neighbourhood graph for one (dataset, repetition).
struct CellContext {
  PreparedData data;
  GraphBuild graph;
  std::uint64_t noise_seed = 0;
  std::uint64_t walk_seed = 0;
  double prepare_seconds = 0.0;
  double graph_seconds = 0.0;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline CellContext make_context(const ExperimentConfig& cfg, std::size_t d,
                                const LoadedSource& src, int rep) {
  CellContext ctx;
  ctx.noise_seed = noise_seed(cfg.seed, d, rep);
  ctx.walk_seed = walk_seed(cfg.seed, d, rep);
  auto t0 = std::chrono::steady_clock::now();
  ctx.data = prepare(src, cfg.datasets[d].split, cfg.noise_ratio, ctx.noise_seed);
  ctx.prepare_seconds = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  WalkConfig wc{cfg.walk_steps, cfg.walk_mode, ctx.walk_seed, 1};
  ctx.graph = build_graph(ctx.data.train.features, ctx.data.train.labels, wc, cfg.sigma);
  ctx.graph_seconds = seconds_since(t0);
  return ctx;
}

/// Feature counts of the config that fit the dataset width.
inline std::vector<Index> usable_counts(const ExperimentConfig& cfg, Index p) {
  std::vector<Index> out;
  for (Index l : cfg.feature_counts) {
    if (l <= p) out.push_back(l);
  }
  return out;
}

/// One solver fit shared by every feature count of a grid point.
inline std::vector<CellResult> evaluate_group(const ExperimentConfig& cfg, const CellContext& ctx,
                                              std::size_t d, int rep, double alpha, double beta,
                                              double rho, const std::vector<Index>& counts) {
  std::vector<CellResult> out;
  const SolverParams params{alpha, beta, rho, cfg.max_iters, cfg.tol};
  auto t0 = std::chrono::steady_clock::now();
  SolverState st;
  std::string fit_error;
  try {
    st = fit(ctx.data.train.features, ctx.data.train.labels, ctx.graph.graph.laplacian, params);
  } catch (const Error& e) {
    fit_error = e.what();
  }
  const double fit_s = seconds_since(t0);
  const FeatureRanking ranking = fit_error.empty() ? rank_features(st) : FeatureRanking{};
  for (Index l : counts) {
    CellResult r;
    r.key = {d, alpha, beta, rho, l, rep};
    r.fit_seconds = fit_s;
    if (!fit_error.empty()) {
      r.error = fit_error;
    } else {
      t0 = std::chrono::steady_clock::now();
      try {
        r.metrics = evaluate_selection(ctx.data.train, ctx.data.test, select_top(ranking, l),
                                       cfg.mlknn_k, cfg.mlknn_smooth);
      } catch (const Error& e) {
        r.error = e.what();
      }
      r.eval_seconds = seconds_since(t0);
    }
    out.push_back(std::move(r));
  }
  return out;
}

namespace detail {

inline Json key_json(const ExperimentConfig& cfg, const CellKey& k) {
  return {{"dataset", cfg.datasets[k.dataset].source.name},
          {"alpha", k.alpha},
          {"beta", k.beta},
          {"rho", k.rho},
          {"l", k.l},
          {"rep", k.rep}};
}

// Cell identity: everything that influences the cell except the grid lists.
inline std::string cell_fingerprint(const ExperimentConfig& cfg, const CellKey& k) {
  Json base = cfg.resolved;
  base["solver"].erase("alpha");
  base["solver"].erase("beta");
  base["solver"].erase("rho");
  base.erase("feature_counts");
  base.erase("repetitions");
  base["datasets"] = cfg.resolved["datasets"][k.dataset];
  base["cell"] = key_json(cfg, k);
  return fingerprint(base);
}

inline Json cell_json(const ExperimentConfig& cfg, const CellResult& r, const CellContext* ctx) {
  Json j = {{"key", key_json(cfg, r.key)},
            {"fit_seconds", r.fit_seconds},
            {"eval_seconds", r.eval_seconds}};
  if (ctx) j["seeds"] = {{"noise", ctx->noise_seed}, {"walk", ctx->walk_seed}};
  if (r.metrics) j["metrics"] = to_json(*r.metrics);
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline std::optional<CellResult> read_cell(const std::filesystem::path& path, const CellKey& key) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    const Json j = Json::parse(in);
    CellResult r;
    r.key = key;
    if (j.contains("metrics")) {
      const auto& m = j["metrics"];
      MetricReport rep;
      rep.hamming_loss = m.at("hamming_loss").get<double>();
      rep.ranking_loss = m.at("ranking_loss").get<double>();
      rep.one_error = m.at("one_error").get<double>();
      rep.coverage = m.at("coverage").get<double>();
      rep.coverage_normalized = m.at("coverage_normalized").get<double>();
      rep.average_precision = m.at("average_precision").get<double>();
      rep.skipped_instances = m.at("skipped_instances").get<Index>();
      r.metrics = rep;
    }
    r.error = j.value("error", "");
    r.fit_seconds = j.value("fit_seconds", 0.0);
    r.eval_seconds = j.value("eval_seconds", 0.0);
    if (!r.metrics && r.error.empty()) return std::nullopt;
    return r;
  } catch (const Json::exception&) {
    return std::nullopt;  // truncated by an interrupted run; recompute
  }
}

inline void write_atomically(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

struct MetricField {
  const char* name;
  double MetricReport::*member;
  Direction dir;
};

inline const std::array<MetricField, 6>& metric_fields() {
  static const std::array<MetricField, 6> f = {{
      {"hamming_loss", &MetricReport::hamming_loss, Direction::smaller_is_better},
      {"ranking_loss", &MetricReport::ranking_loss, Direction::smaller_is_better},
      {"one_error", &MetricReport::one_error, Direction::smaller_is_better},
      {"coverage", &MetricReport::coverage, Direction::smaller_is_better},
      {"coverage_normalized", &MetricReport::coverage_normalized, Direction::smaller_is_better},
      {"average_precision", &MetricReport::average_precision, Direction::larger_is_better},
  }};
  return f;
}

inline std::string fmt(double v) { return format_double(v); }

inline std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace detail

struct AggregateRow {
  std::size_t dataset = 0;
  double alpha = 0, beta = 0, rho = 0;
  Index l = 0;
  int reps = 0;
  std::array<double, 6> mean{};
  std::array<double, 6> stddev{};
};

struct BenchResult {
  std::vector<CellResult> cells;  // sorted by key
  std::vector<AggregateRow> aggregate;
  std::map<std::size_t, std::vector<MetricReport>> baseline;  // all-feature ML-KNN per rep
  std::map<std::size_t, std::string> baseline_errors;
  std::string fingerprint;
  std::size_t computed = 0;
  std::size_t resumed = 0;
};

inline std::vector<AggregateRow> aggregate_cells(const std::vector<CellResult>& cells) {
  std::map<std::tuple<std::size_t, double, double, double, Index>, std::vector<const MetricReport*>> groups;
  for (const auto& c : cells) {
    if (!c.metrics) continue;
    groups[{c.key.dataset, c.key.alpha, c.key.beta, c.key.rho, c.key.l}].push_back(&*c.metrics);
  }
  std::vector<AggregateRow> out;
  const auto& fields = detail::metric_fields();
  for (const auto& [k, reports] : groups) {
    AggregateRow row;
    std::tie(row.dataset, row.alpha, row.beta, row.rho, row.l) = k;
    row.reps = static_cast<int>(reports.size());
    for (std::size_t f = 0; f < fields.size(); ++f) {
      double sum = 0.0;
      for (const auto* r : reports) sum += (*r).*(fields[f].member);
      const double mean = sum / static_cast<double>(reports.size());
      double ss = 0.0;
      for (const auto* r : reports) ss += std::pow((*r).*(fields[f].member) - mean, 2);
      row.mean[f] = mean;
      row.stddev[f] = reports.size() > 1 ? std::sqrt(ss / static_cast<double>(reports.size() - 1)) : 0.0;
    }
    out.push_back(row);
  }
  return out;
}

/// Index into `rows` of the best aggregate row for metric `f` on dataset `d`,
/// optionally restricted by `filter`. Ties keep the earliest row.
inline std::optional<std::size_t> best_row(const std::vector<AggregateRow>& rows, std::size_t d,
                                           std::size_t f,
                                           const std::function<bool(const AggregateRow&)>& filter = {}) {
  const auto dir = detail::metric_fields()[f].dir;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].dataset != d || (filter && !filter(rows[i]))) continue;
    if (!best) {
      best = i;
      continue;
    }
    const double v = rows[i].mean[f];
    const double b = rows[*best].mean[f];
    if (dir == Direction::smaller_is_better ? v < b : v > b) best = i;
  }
  return best;
}

inline std::string summary_csv(const ExperimentConfig& cfg, const std::vector<CellResult>& cells) {
  std::ostringstream os;
  os << "dataset,alpha,beta,rho,l,rep";
  for (const auto& f : detail::metric_fields()) os << ',' << f.name;
  os << ",error\n";
  for (const auto& c : cells) {
    os << cfg.datasets[c.key.dataset].source.name << ',' << detail::fmt(c.key.alpha) << ','
       << detail::fmt(c.key.beta) << ',' << detail::fmt(c.key.rho) << ',' << c.key.l << ','
       << c.key.rep;
    for (const auto& f : detail::metric_fields()) {
      os << ',';
      if (c.metrics) os << detail::fmt((*c.metrics).*(f.member));
    }
    os << ',' << detail::csv_safe(c.error) << '\n';
  }
  return os.str();
}

/// Runs the whole grid. Finished cells found under `out_dir/cells` are reused.
/// `stop_after` limits how many new fit groups are computed (for resume tests).
inline BenchResult run_bench(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                             std::optional<std::size_t> stop_after = std::nullopt) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "cells");
  BenchResult result;
  result.fingerprint = config_fingerprint(cfg);
  Json seeds_used = Json::array();
  double t_load = 0, t_prepare = 0, t_graph = 0, t_fit = 0, t_eval = 0;
  std::size_t groups_started = 0;

  for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
    auto t0 = std::chrono::steady_clock::now();
    const LoadedSource src = load_source(cfg.datasets[d].source);
    t_load += seconds_since(t0);
    const auto counts = usable_counts(cfg, src.data.dim());
    if (counts.empty()) {
      throw UsageError("no feature count fits dataset '" + cfg.datasets[d].source.name + "'");
    }
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      struct Group {
        double a, b, r;
        std::vector<CellResult> cached;
        bool complete = false;
      };
      std::vector<Group> groups;
      for (double a : cfg.alpha_list) {
        for (double b : cfg.beta_list) {
          for (double r : cfg.rho_list) {
            Group g{a, b, r, {}, true};
            for (Index l : counts) {
              const CellKey key{d, a, b, r, l, rep};
              auto cell = detail::read_cell(
                  out_dir / "cells" / (detail::cell_fingerprint(cfg, key) + ".json"), key);
              if (!cell) {
                g.complete = false;
                break;
              }
              g.cached.push_back(std::move(*cell));
            }
            groups.push_back(std::move(g));
          }
        }
      }
      std::optional<CellContext> ctx;
      seeds_used.push_back({{"dataset", cfg.datasets[d].source.name},
                            {"rep", rep},
                            {"noise", noise_seed(cfg.seed, d, rep)},
                            {"walk", walk_seed(cfg.seed, d, rep)}});
      // The all-feature baseline and any incomplete group need the graph and split.
      ctx = make_context(cfg, d, src, rep);
      t_prepare += ctx->prepare_seconds;
      t_graph += ctx->graph_seconds;
      std::vector<Index> all(static_cast<std::size_t>(src.data.dim()));
      std::iota(all.begin(), all.end(), Index{0});
      try {
        result.baseline[d].push_back(evaluate_selection(ctx->data.train, ctx->data.test, all,
                                                        cfg.mlknn_k, cfg.mlknn_smooth));
      } catch (const Error& e) {
        result.baseline_errors[d] = e.what();
      }

      std::vector<std::size_t> todo;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].complete) {
          result.resumed += groups[g].cached.size();
        } else if (!stop_after || groups_started < *stop_after) {
          todo.push_back(g);
          ++groups_started;
        }
      }
      std::vector<std::vector<CellResult>> fresh(groups.size());
      std::atomic<std::size_t> next{0};
      std::mutex io_mutex;
      auto worker = [&] {
        for (std::size_t t = next++; t < todo.size(); t = next++) {
          const auto& g = groups[todo[t]];
          auto cells = evaluate_group(cfg, *ctx, d, rep, g.a, g.b, g.r, counts);
          for (const auto& c : cells) {
            const auto path = out_dir / "cells" / (detail::cell_fingerprint(cfg, c.key) + ".json");
            const std::string text = detail::cell_json(cfg, c, &*ctx).dump(2);
            std::lock_guard lock(io_mutex);
            detail::write_atomically(path, text);
          }
          fresh[todo[t]] = std::move(cells);
        }
      };
      const unsigned nthreads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(std::max<std::size_t>(todo.size(), 1))));
      if (nthreads <= 1) {
        worker();
      } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < nthreads; ++i) pool.emplace_back(worker);
      }
      for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& src_cells = groups[g].complete ? groups[g].cached : fresh[g];
        result.computed += groups[g].complete ? 0 : src_cells.size();
        for (auto& c : src_cells) {
          t_fit += c.fit_seconds / static_cast<double>(counts.size());
          t_eval += c.eval_seconds;
          result.cells.push_back(std::move(c));
        }
      }
    }
  }
  std::sort(result.cells.begin(), result.cells.end(),
            [](const CellResult& a, const CellResult& b) { return a.key < b.key; });
  result.aggregate = aggregate_cells(result.cells);

  // Outputs.
  const auto& fields = detail::metric_fields();
  detail::write_atomically(out_dir / "summary.csv", summary_csv(cfg, result.cells));
  {
    std::ostringstream os;
    os << "dataset,alpha,beta,rho,l,reps";
    for (const auto& f : fields) os << ',' << f.name << "_mean," << f.name << "_std";
    os << '\n';
    for (const auto& r : result.aggregate) {
      os << cfg.datasets[r.dataset].source.name << ',' << detail::fmt(r.alpha) << ','
         << detail::fmt(r.beta) << ',' << detail::fmt(r.rho) << ',' << r.l << ',' << r.reps;
      for (std::size_t f = 0; f < fields.size(); ++f) {
        os << ',' << detail::fmt(r.mean[f]) << ',' << detail::fmt(r.stddev[f]);
      }
      os << '\n';
    }
    detail::write_atomically(out_dir / "aggregate.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "dataset,metric,direction,alpha,beta,rho,l,mean,std\n";
    for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
      for (std::size_t f = 0; f < fields.size(); ++f) {
        auto b = best_row(result.aggregate, d, f);
        if (!b) continue;
        const auto& r = result.aggregate[*b];
        os << cfg.datasets[d].source.name << ',' << fields[f].name << ','
           << (fields[f].dir == Direction::smaller_is_better ? "min" : "max") << ','
           << detail::fmt(r.alpha) << ',' << detail::fmt(r.beta) << ',' << detail::fmt(r.rho)
           << ',' << r.l << ',' << detail::fmt(r.mean[f]) << ',' << detail::fmt(r.stddev[f])
           << '\n';
      }
    }
    detail::write_atomically(out_dir / "best.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "dataset,rep";
    for (const auto& f : fields) os << ',' << f.name;
    os << ",error\n";
    for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
      if (auto it = result.baseline_errors.find(d); it != result.baseline_errors.end()) {
        os << cfg.datasets[d].source.name << ',' << std::string(fields.size() + 1, ',')
           << detail::csv_safe(it->second) << '\n';
        continue;
      }
      const auto& reps = result.baseline[d];
      for (std::size_t r = 0; r < reps.size(); ++r) {
        os << cfg.datasets[d].source.name << ',' << r;
        for (const auto& f : fields) os << ',' << detail::fmt(reps[r].*(f.member));
        os << ",\n";
      }
    }
    detail::write_atomically(out_dir / "baseline.csv", os.str());
  }

  // Method variants reachable inside the grid, ranked per metric across datasets.
  {
    struct Variant {
      std::string name;
      std::function<bool(const AggregateRow&)> filter;
    };
    const std::vector<Variant> variants = {
        {"msfs", {}},
        {"l21_only", [](const AggregateRow& r) { return r.rho == 1.0; }},
        {"frobenius_only", [](const AggregateRow& r) { return r.rho == 0.0; }},
    };
    std::ostringstream cd_text;
    for (std::size_t f = 0; f < fields.size(); ++f) {
      std::vector<std::string> methods;
      std::vector<std::vector<double>> rows;
      for (const auto& v : variants) {
        std::vector<double> vals;
        for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
          auto b = best_row(result.aggregate, d, f, v.filter);
          if (!b) break;
          vals.push_back(result.aggregate[*b].mean[f]);
        }
        if (vals.size() == cfg.datasets.size()) {
          methods.push_back(v.name);
          rows.push_back(std::move(vals));
        }
      }
      if (result.baseline_errors.empty()) {
        std::vector<double> base_vals;
        for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
          double sum = 0.0;
          for (const auto& r : result.baseline[d]) sum += r.*(fields[f].member);
          base_vals.push_back(sum / static_cast<double>(result.baseline[d].size()));
        }
        methods.push_back("all_features");
        rows.push_back(base_vals);
      }
      if (methods.empty()) continue;

      Matrix values(static_cast<Index>(methods.size()), static_cast<Index>(cfg.datasets.size()));
      for (std::size_t m = 0; m < methods.size(); ++m) {
        for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
          values(static_cast<Index>(m), static_cast<Index>(d)) = rows[m][d];
        }
      }
      std::vector<std::string> names;
      for (const auto& e : cfg.datasets) names.push_back(e.source.name);
      const RankTable table = friedman_ranks(methods, names, values, fields[f].dir);
      std::ostringstream os;
      os << "method";
      for (const auto& n : names) os << ',' << n << "_value," << n << "_rank";
      os << ",avg_rank\n";
      for (std::size_t m = 0; m < methods.size(); ++m) {
        os << methods[m];
        for (std::size_t d = 0; d < names.size(); ++d) {
          os << ',' << detail::fmt(values(static_cast<Index>(m), static_cast<Index>(d))) << ','
             << detail::fmt(table.ranks(static_cast<Index>(m), static_cast<Index>(d)));
        }
        os << ',' << detail::fmt(table.avg_ranks(static_cast<Index>(m))) << '\n';
      }
      detail::write_atomically(out_dir / (std::string("ranks_") + fields[f].name + ".csv"),
                               os.str());
      const auto k = static_cast<Index>(methods.size());
      if (k >= 2 && k <= 10) {
        const double cd = critical_difference(k, static_cast<Index>(names.size()),
                                              bonferroni_dunn_q05(k));
        cd_text << "[" << fields[f].name << "]\n";
        for (Index m = 1; m < k; ++m) {
          cd_text << cd_summary_line(methods[0], table.avg_ranks(0),
                                     methods[static_cast<std::size_t>(m)], table.avg_ranks(m), cd)
                  << '\n';
        }
      }
    }
    detail::write_atomically(out_dir / "cd_summary.txt", cd_text.str());
  }

  Json record = {{"fingerprint", result.fingerprint},
                 {"config", cfg.resolved},
                 {"cells", result.cells.size()},
                 {"computed_cells", result.computed},
                 {"resumed_cells", result.resumed},
                 {"seeds", seeds_used},
                 {"noise_applied", "to the full dataset before the train/test split"},
                 {"repetitions_note",
                  "repetitions redraw the noise and walk seeds on a fixed split"},
                 {"wall_clock_seconds",
                  {{"load", t_load}, {"prepare", t_prepare}, {"graph", t_graph},
                   {"fit", t_fit}, {"eval", t_eval}}}};
  detail::write_atomically(out_dir / "run.json", record.dump(2) + "\n");
  return result;
}

}  // namespace msfs
