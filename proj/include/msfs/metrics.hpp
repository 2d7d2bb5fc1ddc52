#pragma once

#include "msfs/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

namespace msfs {

/// A per-instance-averaged metric: `value` is the mean over the `evaluated`
/// instances; `skipped` instances had a label set for which it is undefined.
struct MetricValue {
  double value = 0.0;
  Index evaluated = 0;
  Index skipped = 0;
};

struct MetricReport {
  double hamming_loss = 0.0;
  double ranking_loss = 0.0;
  double one_error = 0.0;
  double coverage = 0.0;
  double coverage_normalized = 0.0;
  double average_precision = 0.0;
  // Instances with an empty or full label set.
  Index skipped_instances = 0;
};

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  return {{"hamming_loss", r.hamming_loss},
          {"ranking_loss", r.ranking_loss},
          {"one_error", r.one_error},
          {"coverage", r.coverage},
          {"coverage_normalized", r.coverage_normalized},
          {"average_precision", r.average_precision},
          {"skipped_instances", r.skipped_instances}};
}

namespace detail {

inline void check_same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError("prediction and truth shapes differ");
  }
}

}  // namespace detail

/// 1-based position of every label when sorted by descending score, with
/// lower label index first among equal scores.
inline std::vector<Index> label_ranks(const RowVector& scores) {
  const Index m = scores.size();
  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores(a) > scores(b); });
  std::vector<Index> rank(static_cast<std::size_t>(m));
  for (Index pos = 0; pos < m; ++pos) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = pos + 1;
  return rank;
}

inline double hamming_loss(const Matrix& predicted, const Matrix& truth) {
  detail::check_same_shape(predicted, truth);
  Index wrong = 0;
  for (Index i = 0; i < truth.rows(); ++i) {
    for (Index j = 0; j < truth.cols(); ++j) wrong += (predicted(i, j) != truth(i, j)) ? 1 : 0;
  }
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

/// Fraction of (relevant, irrelevant) label pairs ordered wrongly; tied scores
/// count one half. Instances with empty or full label sets are skipped.
inline MetricValue ranking_loss(const Matrix& scores, const Matrix& truth) {
  detail::check_same_shape(scores, truth);
  MetricValue out;
  double total = 0.0;
  for (Index i = 0; i < truth.rows(); ++i) {
    std::vector<Index> rel, irr;
    for (Index j = 0; j < truth.cols(); ++j) (truth(i, j) == 1.0 ? rel : irr).push_back(j);
    if (rel.empty() || irr.empty()) {
      ++out.skipped;
      continue;
    }
    double bad = 0.0;
    for (Index k : rel) {
      for (Index j : irr) {
        if (scores(i, k) < scores(i, j)) {
          bad += 1.0;
        } else if (scores(i, k) == scores(i, j)) {
          bad += 0.5;
        }
      }
    }
    total += bad / static_cast<double>(rel.size() * irr.size());
    ++out.evaluated;
  }
  if (out.evaluated == 0) throw Error("ranking loss: no evaluable instances");
  out.value = total / static_cast<double>(out.evaluated);
  return out;
}

/// Fraction of instances whose top-scored label (lowest index on ties) is
/// not relevant. Instances without relevant labels are skipped.
inline MetricValue one_error(const Matrix& scores, const Matrix& truth) {
  detail::check_same_shape(scores, truth);
  MetricValue out;
  double total = 0.0;
  for (Index i = 0; i < truth.rows(); ++i) {
    if (truth.row(i).sum() == 0.0) {
      ++out.skipped;
      continue;
    }
    Index top = 0;
    for (Index j = 1; j < truth.cols(); ++j) {
      if (scores(i, j) > scores(i, top)) top = j;
    }
    total += truth(i, top) == 1.0 ? 0.0 : 1.0;
    ++out.evaluated;
  }
  if (out.evaluated > 0) out.value = total / static_cast<double>(out.evaluated);
  return out;
}

struct CoverageValue {
  double raw = 0.0;
  double normalized = 0.0;
  Index evaluated = 0;
  Index skipped = 0;
};

/// Mean depth (rank - 1) of the lowest-ranked relevant label; `normalized`
/// divides by the label count.
inline CoverageValue coverage(const Matrix& scores, const Matrix& truth) {
  detail::check_same_shape(scores, truth);
  CoverageValue out;
  double total = 0.0;
  for (Index i = 0; i < truth.rows(); ++i) {
    if (truth.row(i).sum() == 0.0) {
      ++out.skipped;
      continue;
    }
    const auto rank = label_ranks(scores.row(i));
    Index deepest = 0;
    for (Index j = 0; j < truth.cols(); ++j) {
      if (truth(i, j) == 1.0) deepest = std::max(deepest, rank[static_cast<std::size_t>(j)]);
    }
    total += static_cast<double>(deepest - 1);
    ++out.evaluated;
  }
  if (out.evaluated > 0) {
    out.raw = total / static_cast<double>(out.evaluated);
    out.normalized = out.raw / static_cast<double>(truth.cols());
  }
  return out;
}

inline MetricValue average_precision(const Matrix& scores, const Matrix& truth) {
  detail::check_same_shape(scores, truth);
  MetricValue out;
  double total = 0.0;
  for (Index i = 0; i < truth.rows(); ++i) {
    std::vector<Index> rel;
    for (Index j = 0; j < truth.cols(); ++j) {
      if (truth(i, j) == 1.0) rel.push_back(j);
    }
    if (rel.empty()) {
      ++out.skipped;
      continue;
    }
    const auto rank = label_ranks(scores.row(i));
    double sum = 0.0;
    for (Index k : rel) {
      const Index rk = rank[static_cast<std::size_t>(k)];
      Index above = 0;
      for (Index j : rel) above += rank[static_cast<std::size_t>(j)] <= rk ? 1 : 0;
      sum += static_cast<double>(above) / static_cast<double>(rk);
    }
    total += sum / static_cast<double>(rel.size());
    ++out.evaluated;
  }
  if (out.evaluated > 0) out.value = total / static_cast<double>(out.evaluated);
  return out;
}

inline MetricReport evaluate(const Matrix& scores, const Matrix& predicted, const Matrix& truth) {
  MetricReport r;
  r.hamming_loss = hamming_loss(predicted, truth);
  const auto rl = ranking_loss(scores, truth);
  r.ranking_loss = rl.value;
  r.skipped_instances = rl.skipped;
  r.one_error = one_error(scores, truth).value;
  const auto cov = coverage(scores, truth);
  r.coverage = cov.raw;
  r.coverage_normalized = cov.normalized;
  r.average_precision = average_precision(scores, truth).value;
  return r;
}

// ---------------------------------------------------------------------------
// Friedman ranks and the Bonferroni-Dunn critical difference.

enum class Direction { smaller_is_better, larger_is_better };

struct RankTable {
  std::vector<std::string> methods;
  std::vector<std::string> datasets;
  Matrix values;  // methods x datasets
  Matrix ranks;   // methods x datasets, 1 = best, ties get the mean rank
  Vector avg_ranks;
};

inline RankTable friedman_ranks(const std::vector<std::string>& methods,
                                const std::vector<std::string>& datasets, const Matrix& values,
                                Direction dir) {
  if (values.rows() != static_cast<Index>(methods.size()) ||
      values.cols() != static_cast<Index>(datasets.size())) {
    throw UsageError("rank table shape does not match method/dataset lists");
  }
  if (!values.allFinite()) throw UsageError("rank table contains non-finite values");
  RankTable t{methods, datasets, values, Matrix::Zero(values.rows(), values.cols()), {}};
  const Index k = values.rows();
  for (Index d = 0; d < values.cols(); ++d) {
    std::vector<Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Index{0});
    auto better = [&](Index a, Index b) {
      return dir == Direction::smaller_is_better ? values(a, d) < values(b, d)
                                                 : values(a, d) > values(b, d);
    };
    std::stable_sort(order.begin(), order.end(), better);
    for (Index pos = 0; pos < k;) {
      Index end = pos + 1;
      while (end < k && values(order[static_cast<std::size_t>(end)], d) ==
                            values(order[static_cast<std::size_t>(pos)], d)) {
        ++end;
      }
      const double mid = 0.5 * static_cast<double>(pos + 1 + end);
      for (Index q = pos; q < end; ++q) t.ranks(order[static_cast<std::size_t>(q)], d) = mid;
      pos = end;
    }
  }
  t.avg_ranks = t.ranks.rowwise().mean();
  return t;
}

/// CD = q_alpha * sqrt(k (k + 1) / (6 N)).
inline double critical_difference(Index k, Index n_datasets, double q_alpha) {
  if (k < 2 || n_datasets < 1) throw UsageError("critical difference needs k >= 2, N >= 1");
  return q_alpha * std::sqrt(static_cast<double>(k * (k + 1)) /
                             (6.0 * static_cast<double>(n_datasets)));
}

/// Two-tailed Bonferroni-Dunn critical values at alpha = 0.05 (Demsar 2006).
inline double bonferroni_dunn_q05(Index k) {
  static constexpr std::array<double, 9> table = {1.960, 2.241, 2.394, 2.498, 2.576,
                                                  2.638, 2.690, 2.724, 2.773};
  if (k < 2 || k > 10) throw UsageError("Bonferroni-Dunn table covers 2 <= k <= 10");
  return table[static_cast<std::size_t>(k - 2)];
}

inline std::string cd_summary_line(const std::string& a, double rank_a, const std::string& b,
                                   double rank_b, double cd) {
  const double delta = std::abs(rank_a - rank_b);
  char buf[256];
  std::snprintf(buf, sizeof buf, "method %s vs %s: |\xce\x94rank| = %.4f (CD = %.4f) \xe2\x86\x92 %s",
                a.c_str(), b.c_str(), delta, cd, delta > cd ? "significant" : "not significant");
  return buf;
}

}  // namespace msfs
