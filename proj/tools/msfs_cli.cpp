// msfs command-line front end: stats | graph | select | eval | bench.
//
// Exit codes: 0 ok, 2 I/O, 3 solver, 4 usage.

#include "msfs/msfs.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

constexpr int kExitIo = 2;
constexpr int kExitSolver = 3;
constexpr int kExitUsage = 4;

struct DataArgs {
  std::string path;
  std::string test_path;
  std::string format = "csv";
  std::string labels;
  bool header = false;
  msfs::Index train_count = 0;
  msfs::Index test_count = 0;
  std::string split_mode = "first_n";
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct WalkArgs {
  msfs::Index steps = 80;
  std::string mode = "dfs";
  std::optional<double> sigma;
  unsigned threads = 1;
};

struct SolverArgs {
  double alpha = 0.0;
  double beta = 1.0;
  double rho = 0.5;
  int max_iters = 50;
  double tol = 1e-6;
};

void add_data_options(CLI::App* app, DataArgs& a, bool with_split) {
  app->add_option("--data", a.path, "dataset file (CSV or ARFF)")->required();
  app->add_option("--format", a.format, "csv or arff")->check(CLI::IsMember({"csv", "arff"}));
  app->add_option("--labels", a.labels, "label count (CSV) or Mulan XML path (ARFF)")->required();
  app->add_flag("--header", a.header, "CSV has a header row");
  app->add_option("--test-data", a.test_path, "separate test file");
  app->add_option("--seed", a.seed, "master seed");
  if (with_split) {
    app->add_option("--train-count", a.train_count, "training rows taken from --data");
    app->add_option("--test-count", a.test_count, "test rows taken from --data");
    app->add_option("--split-mode", a.split_mode, "first_n or shuffled")
        ->check(CLI::IsMember({"first_n", "shuffled"}));
    app->add_option("--noise", a.noise, "Gaussian noise ratio of each feature's std");
  }
}

void add_walk_options(CLI::App* app, WalkArgs& w) {
  app->add_option("--steps", w.steps, "walk steps per origin");
  app->add_option("--mode", w.mode, "dfs or bfs")->check(CLI::IsMember({"dfs", "bfs"}));
  app->add_option("--sigma", w.sigma, "Gaussian kernel width (default: median distance)");
  app->add_option("--threads", w.threads, "walk threads");
}

void add_solver_options(CLI::App* app, SolverArgs& s) {
  app->add_option("--alpha", s.alpha, "manifold weight");
  app->add_option("--beta", s.beta, "sparsity weight");
  app->add_option("--rho", s.rho, "l2,1 share of the sparsity penalty");
  app->add_option("--max-iters", s.max_iters, "iteration cap");
  app->add_option("--tol", s.tol, "relative objective tolerance");
}

msfs::DataSource source_of(const DataArgs& a) {
  msfs::DataSource s;
  s.name = std::filesystem::path(a.path).stem().string();
  s.format = msfs::parse_format(a.format);
  s.path = a.path;
  s.labels = a.labels;
  s.header = a.header;
  s.test_path = a.test_path;
  return s;
}

// Train/test data with the same seeds that repetition 0 of dataset 0 gets in a bench run.
msfs::PreparedData prepared_of(const DataArgs& a) {
  const auto src = msfs::load_source(source_of(a));
  std::optional<msfs::SplitSpec> spec;
  if (a.test_path.empty() && (a.train_count > 0 || a.test_count > 0)) {
    msfs::SplitSpec s;
    s.train_count = a.train_count > 0 ? a.train_count : src.data.size() - a.test_count;
    s.test_count = a.test_count;
    s.mode = a.split_mode == "shuffled" ? msfs::SplitMode::shuffled : msfs::SplitMode::first_n;
    s.seed = msfs::seeds::derive(a.seed, "split", 0);
    spec = s;
  }
  return msfs::prepare(src, spec, a.noise, msfs::noise_seed(a.seed, 0, 0));
}

msfs::WalkConfig walk_config_of(const DataArgs& a, const WalkArgs& w) {
  return {w.steps, msfs::parse_walk_mode(w.mode), msfs::walk_seed(a.seed, 0, 0), w.threads};
}

msfs::SolverParams params_of(const SolverArgs& s) {
  msfs::SolverParams p;
  p.alpha = s.alpha;
  p.beta = s.beta;
  p.rho = s.rho;
  p.max_iters = s.max_iters;
  p.tol = s.tol;
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw msfs::IoError("cannot write " + path.string());
  out << text;
}

// Writes to <out>/<name> when --out was given, else to stdout.
void emit(const std::string& out_dir, const std::string& name, const std::string& text) {
  if (out_dir.empty()) {
    std::cout << text;
  } else {
    write_text(std::filesystem::path(out_dir) / name, text);
  }
}

msfs::NeighborhoodGraph graph_of(const msfs::Dataset& train, const DataArgs& a, const WalkArgs& w,
                                 const std::string& graph_file) {
  if (graph_file.empty()) {
    return msfs::build_graph(train.features, train.labels, walk_config_of(a, w), w.sigma).graph;
  }
  std::ifstream in(graph_file);
  if (!in) throw msfs::IoError("cannot open graph file: " + graph_file);
  return msfs::graph_from_similarity(msfs::read_coordinate_list(in, train.size()));
}

std::vector<msfs::Index> read_selection(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw msfs::IoError("cannot open selection file: " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    return j.at("selected_indices").get<std::vector<msfs::Index>>();
  } catch (const nlohmann::json::exception& e) {
    throw msfs::IoError("bad selection file " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Manifold-regularized joint sparse multi-label feature selection"};
  app.require_subcommand(1);

  DataArgs data;
  WalkArgs walk;
  SolverArgs solver;
  std::string out_dir;
  std::string graph_file;
  std::string selection_file;
  std::string config_path;
  msfs::Index count = 0;
  int knn = 7;
  std::optional<unsigned> bench_threads;

  auto* stats = app.add_subcommand("stats", "print dataset statistics as JSON");
  add_data_options(stats, data, false);

  auto* graph = app.add_subcommand("graph", "build the neighbourhood graph S");
  add_data_options(graph, data, true);
  add_walk_options(graph, walk);
  graph->add_option("--out", out_dir, "directory for S.tsv and diagnostics.json")->required();

  auto* select = app.add_subcommand("select", "rank features and keep the top l");
  add_data_options(select, data, true);
  add_walk_options(select, walk);
  add_solver_options(select, solver);
  select->add_option("-l,--count", count, "number of features to keep")->required();
  select->add_option("--graph-file", graph_file, "precomputed S coordinate list");
  select->add_option("--out", out_dir, "directory for selection.json (default: stdout)");

  auto* eval = app.add_subcommand("eval", "evaluate a selection with ML-KNN");
  add_data_options(eval, data, true);
  eval->add_option("--selection", selection_file, "selection JSON")->required();
  eval->add_option("-k,--knn", knn, "ML-KNN neighbours");
  eval->add_option("--out", out_dir, "directory for metrics.json (default: stdout)");

  auto* bench = app.add_subcommand("bench", "run a grid search from a JSON config");
  bench->add_option("config", config_path, "experiment config")->required();
  bench->add_option("--out", out_dir, "output directory (overrides the config)");
  bench->add_option("--threads", bench_threads, "concurrent grid cells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*stats) {
      auto src = msfs::load_source(source_of(data));
      msfs::Dataset all = src.data;
      if (src.test) {
        all.features.conservativeResize(src.data.size() + src.test->size(), Eigen::NoChange);
        all.labels.conservativeResize(src.data.size() + src.test->size(), Eigen::NoChange);
        all.features.bottomRows(src.test->size()) = src.test->features;
        all.labels.bottomRows(src.test->size()) = src.test->labels;
      }
      std::cout << msfs::to_json(msfs::stats(all)).dump(2) << '\n';
    } else if (*graph) {
      const auto prep = prepared_of(data);
      const auto cfg = walk_config_of(data, walk);
      const auto build = msfs::build_graph(prep.train.features, prep.train.labels, cfg, walk.sigma);
      std::ostringstream s;
      msfs::write_coordinate_list(s, build.graph.s);
      write_text(std::filesystem::path(out_dir) / "S.tsv", s.str());
      write_text(std::filesystem::path(out_dir) / "diagnostics.json",
                 msfs::diagnostics_json(build, cfg).dump(2) + "\n");
    } else if (*select) {
      const auto prep = prepared_of(data);
      const auto g = graph_of(prep.train, data, walk, graph_file);
      const auto params = params_of(solver);
      const auto r = msfs::select_features(prep.train, g, params, count);
      emit(out_dir, "selection.json",
           msfs::selection_json(r.state, r.ranking, r.selected, params).dump(2) + "\n");
    } else if (*eval) {
      const auto prep = prepared_of(data);
      const auto sel = read_selection(selection_file);
      const auto report = msfs::evaluate_selection(prep.train, prep.test, sel, knn);
      emit(out_dir, "metrics.json", msfs::to_json(report).dump(2) + "\n");
    } else if (*bench) {
      auto cfg = msfs::load_config(config_path);
      if (!out_dir.empty()) cfg.output = out_dir;
      if (bench_threads) cfg.threads = *bench_threads;
      if (cfg.output.empty()) throw msfs::UsageError("bench needs an output directory");
      const auto result = msfs::run_bench(cfg, cfg.output);
      std::cerr << "bench " << result.fingerprint << ": " << result.cells.size() << " cells ("
                << result.computed << " computed, " << result.resumed << " resumed)\n";
    }
  } catch (const msfs::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const msfs::SolverError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return kExitSolver;
  } catch (const msfs::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
