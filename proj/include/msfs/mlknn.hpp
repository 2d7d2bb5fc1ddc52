#pragma once

#include "msfs/common.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

namespace msfs {

// Multi-label k-nearest-neighbour classifier (Zhang & Zhou): Laplace-smoothed
// label priors plus, per label, the distribution of "positive neighbour
// counts" among training instances that do / do not carry the label.
struct MlKnnModel {
  int k = 7;
  double smooth = 1.0;
  Vector priors;   // P(H_j = 1)
  Matrix cond;     // m x (k+1): P(count = c | H_j = 1)
  Matrix cond_neg; // m x (k+1): P(count = c | H_j = 0)
  Matrix train_features;
  Matrix train_labels;
};

struct RankingPrediction {
  Matrix scores;
  Matrix binary;
};

namespace detail {

// Indices of the k nearest rows of `ref` to `query` by Euclidean distance,
// ties broken by ascending index. `skip` excludes one row (the query itself).
inline std::vector<Index> nearest(const Matrix& ref, const RowVector& query, int k, Index skip) {
  std::vector<std::pair<double, Index>> d;
  d.reserve(static_cast<std::size_t>(ref.rows()));
  for (Index i = 0; i < ref.rows(); ++i) {
    if (i == skip) continue;
    d.emplace_back((ref.row(i) - query).squaredNorm(), i);
  }
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
  std::vector<Index> out(kk);
  for (std::size_t i = 0; i < kk; ++i) out[i] = d[i].second;
  return out;
}

}  // namespace detail

inline MlKnnModel mlknn_fit(const Matrix& features, const Matrix& labels, int k = 7,
                            double smooth = 1.0) {
  const Index n = features.rows();
  const Index m = labels.cols();
  if (n < 1 || labels.rows() != n) throw UsageError("training set is empty or inconsistent");
  if (k < 1 || k >= n) {
    throw UsageError("k=" + std::to_string(k) + " must be in [1, n_train=" + std::to_string(n) +
                     ")");
  }
  if (!(smooth > 0.0)) throw UsageError("smoothing must be > 0");

  MlKnnModel model;
  model.k = k;
  model.smooth = smooth;
  model.train_features = features;
  model.train_labels = labels;
  model.priors = ((labels.colwise().sum().array() + smooth) / (2.0 * smooth + static_cast<double>(n)))
                     .transpose()
                     .matrix();

  Matrix hits = Matrix::Zero(m, k + 1);
  Matrix misses = Matrix::Zero(m, k + 1);
  for (Index i = 0; i < n; ++i) {
    const auto nb = detail::nearest(features, features.row(i), k, i);
    for (Index j = 0; j < m; ++j) {
      int c = 0;
      for (Index q : nb) c += labels(q, j) == 1.0 ? 1 : 0;
      if (labels(i, j) == 1.0) {
        hits(j, c) += 1.0;
      } else {
        misses(j, c) += 1.0;
      }
    }
  }
  const double denom_pad = smooth * static_cast<double>(k + 1);
  model.cond.resize(m, k + 1);
  model.cond_neg.resize(m, k + 1);
  for (Index j = 0; j < m; ++j) {
    model.cond.row(j) = (hits.row(j).array() + smooth) / (denom_pad + hits.row(j).sum());
    model.cond_neg.row(j) = (misses.row(j).array() + smooth) / (denom_pad + misses.row(j).sum());
  }
  return model;
}

/// Posterior P(H_j = 1 | neighbour count) for every test row; binary = score >= 0.5.
inline RankingPrediction mlknn_predict(const MlKnnModel& model, const Matrix& test_features,
                                       unsigned threads = 1) {
  if (test_features.cols() != model.train_features.cols()) {
    throw UsageError("test feature dimension " + std::to_string(test_features.cols()) +
                     " does not match training dimension " +
                     std::to_string(model.train_features.cols()));
  }
  const Index n = test_features.rows();
  const Index m = model.train_labels.cols();
  RankingPrediction out;
  out.scores.resize(n, m);
  out.binary.resize(n, m);

  auto run = [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      const auto nb = detail::nearest(model.train_features, test_features.row(i), model.k, -1);
      for (Index j = 0; j < m; ++j) {
        int c = 0;
        for (Index q : nb) c += model.train_labels(q, j) == 1.0 ? 1 : 0;
        const double pos = model.priors(j) * model.cond(j, c);
        const double neg = (1.0 - model.priors(j)) * model.cond_neg(j, c);
        const double s = pos / (pos + neg);
        out.scores(i, j) = s;
        out.binary(i, j) = s >= 0.5 ? 1.0 : 0.0;
      }
    }
  };
  const unsigned t = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<Index>(n, 1))));
  if (t <= 1) {
    run(0, n);
  } else {
    std::vector<std::jthread> pool;
    const Index chunk = (n + t - 1) / t;
    for (unsigned w = 0; w < t; ++w) {
      const Index b = std::min<Index>(n, w * chunk);
      pool.emplace_back(run, b, std::min<Index>(n, b + chunk));
    }
  }
  return out;
}

}  // namespace msfs
