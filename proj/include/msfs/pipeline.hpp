#pragma once

// Glue shared by the CLI subcommands and the grid runner: dataset sources,
// noise-then-split preparation, feature selection and ML-KNN evaluation.

#include "msfs/common.hpp"
#include "msfs/data.hpp"
#include "msfs/graph.hpp"
#include "msfs/metrics.hpp"
#include "msfs/mlknn.hpp"
#include "msfs/solver.hpp"

#include <charconv>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace msfs {

enum class DataFormat { csv, arff };

inline DataFormat parse_format(const std::string& s) {
  if (s == "csv") return DataFormat::csv;
  if (s == "arff") return DataFormat::arff;
  throw UsageError("format must be csv or arff, got '" + s + "'");
}

/// Where a dataset comes from. `labels` is a label count for CSV and a Mulan
/// XML path for ARFF. An optional `test_path` supplies a separate test file.
struct DataSource {
  std::string name;
  DataFormat format = DataFormat::csv;
  std::string path;
  std::string labels;
  bool header = false;
  std::string test_path;
};

inline Dataset load_file(const DataSource& src, const std::string& path) {
  if (src.format == DataFormat::arff) return load_arff(path, src.labels);
  Index count = 0;
  auto [ptr, ec] = std::from_chars(src.labels.data(), src.labels.data() + src.labels.size(), count);
  if (ec != std::errc() || ptr != src.labels.data() + src.labels.size()) {
    throw UsageError("CSV sources need an integer label count, got '" + src.labels + "'");
  }
  return load_csv(path, count, src.header);
}

struct LoadedSource {
  Dataset data;
  std::optional<Dataset> test;
};

inline LoadedSource load_source(const DataSource& src) {
  LoadedSource out{load_file(src, src.path), std::nullopt};
  if (!src.test_path.empty()) {
    out.test = load_file(src, src.test_path);
    if (out.test->dim() != out.data.dim() || out.test->label_count() != out.data.label_count()) {
      throw IoError("test file shape does not match training file");
    }
  }
  return out;
}

struct PreparedData {
  Dataset train;
  Dataset test;
};

/// Applies noise to the whole dataset, then splits. With a separate test file
/// the split is skipped and each file gets its own noise stream. A zero test
/// count yields an empty test set.
inline PreparedData prepare(const LoadedSource& src, std::optional<SplitSpec> split_spec,
                            double noise_ratio, std::uint64_t noise_seed) {
  PreparedData out;
  if (src.test) {
    out.train = add_gaussian_noise(src.data, noise_ratio, seeds::derive(noise_seed, "train"));
    out.test = add_gaussian_noise(*src.test, noise_ratio, seeds::derive(noise_seed, "test"));
    return out;
  }
  Dataset noisy = add_gaussian_noise(src.data, noise_ratio, noise_seed);
  if (!split_spec) {
    out.train = std::move(noisy);
    out.test = out.train.rows({});
    return out;
  }
  auto [train, test] = split(noisy, *split_spec);
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

struct SelectionResult {
  SolverState state;
  FeatureRanking ranking;
  std::vector<Index> selected;
};

inline SelectionResult select_features(const Dataset& train, const NeighborhoodGraph& graph,
                                       const SolverParams& params, Index l) {
  if (graph.laplacian.rows() != train.size()) {
    throw UsageError("graph size does not match the training set");
  }
  SelectionResult r;
  r.state = fit(train.features, train.labels, graph.laplacian, params);
  r.ranking = rank_features(r.state);
  r.selected = select_top(r.ranking, l);
  return r;
}

/// Trains ML-KNN on the selected training columns and scores the test split.
inline MetricReport evaluate_selection(const Dataset& train, const Dataset& test,
                                       const std::vector<Index>& selected, int k = 7,
                                       double smooth = 1.0) {
  if (test.size() == 0) throw UsageError("evaluation needs a non-empty test split");
  const Dataset tr = train.select_features(selected);
  const Dataset te = test.select_features(selected);
  const MlKnnModel model = mlknn_fit(tr.features, tr.labels, k, smooth);
  const RankingPrediction pred = mlknn_predict(model, te.features);
  return evaluate(pred.scores, pred.binary, te.labels);
}

}  // namespace msfs
