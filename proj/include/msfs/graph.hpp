#pragma once

#include "msfs/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace msfs {

/// Euclidean distances between every pair of rows of `x`.
inline Matrix pairwise_distances(const Matrix& x) {
  const Index n = x.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

/// Median of the strictly positive off-diagonal distances; 1 when there are none.
inline double median_sigma(const Matrix& dist) {
  std::vector<double> vals;
  for (Index i = 0; i < dist.rows(); ++i) {
    for (Index j = i + 1; j < dist.cols(); ++j) {
      if (dist(i, j) > 0.0) vals.push_back(dist(i, j));
    }
  }
  if (vals.empty()) return 1.0;
  const auto mid = vals.size() / 2;
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid), vals.end());
  const double hi = vals[mid];
  if (vals.size() % 2 == 1) return hi;
  const double lo = *std::max_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline Matrix gaussian_weights(const Matrix& dist, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw UsageError("sigma must be positive");
  return (-(dist.array().square()) / (sigma * sigma)).exp().matrix();
}

/// Label-set Jaccard index between instances, zero on the diagonal and for
/// pairs of empty label sets.
inline Matrix jaccard_matrix(const Matrix& y) {
  const Index n = y.rows();
  const Matrix inter = y * y.transpose();
  Matrix r = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double denom = inter(i, i) + inter(j, j) - inter(i, j);
      if (denom > 0.0) r(i, j) = inter(i, j) / denom;
    }
  }
  return r;
}

struct JointSimilarity {
  Matrix dist;
  Matrix gauss;
  Matrix jaccard;
  Matrix joint;
  double sigma = 1.0;
};

/// `sigma` overrides the median heuristic when set.
inline JointSimilarity joint_similarity(const Matrix& x, const Matrix& y,
                                        std::optional<double> sigma = std::nullopt) {
  if (x.rows() != y.rows()) throw UsageError("feature and label row counts differ");
  JointSimilarity js;
  js.dist = pairwise_distances(x);
  js.sigma = sigma ? *sigma : median_sigma(js.dist);
  js.gauss = gaussian_weights(js.dist, js.sigma);
  js.jaccard = jaccard_matrix(y);
  js.joint = js.gauss.cwiseProduct(js.jaccard);
  return js;
}

struct TransitionMatrix {
  Matrix probs;
  // Rows of T that summed to zero.
  std::vector<bool> isolated;
  // Isolated rows whose Gaussian fallback was also empty; walks from them do nothing.
  std::vector<bool> dead;
};

/// Row-normalizes T. A zero row falls back to the off-diagonal Gaussian row;
/// if that is zero too the row stays zero and is marked dead.
inline TransitionMatrix transition_matrix(const Matrix& t, const Matrix* gauss = nullptr) {
  const Index n = t.rows();
  TransitionMatrix out;
  out.probs = Matrix::Zero(n, n);
  out.isolated.assign(static_cast<std::size_t>(n), false);
  out.dead.assign(static_cast<std::size_t>(n), false);
  for (Index i = 0; i < n; ++i) {
    const double sum = t.row(i).sum();
    if (sum > 0.0) {
      out.probs.row(i) = t.row(i) / sum;
      continue;
    }
    out.isolated[static_cast<std::size_t>(i)] = true;
    if (gauss != nullptr) {
      RowVector fallback = gauss->row(i);
      fallback(i) = 0.0;
      const double gsum = fallback.sum();
      if (gsum > 0.0) {
        out.probs.row(i) = fallback / gsum;
        continue;
      }
    }
    out.dead[static_cast<std::size_t>(i)] = true;
  }
  return out;
}

enum class WalkMode { dfs, bfs };

inline const char* to_string(WalkMode m) { return m == WalkMode::dfs ? "dfs" : "bfs"; }

inline WalkMode parse_walk_mode(const std::string& s) {
  if (s == "dfs" || s == "DFS") return WalkMode::dfs;
  if (s == "bfs" || s == "BFS") return WalkMode::bfs;
  throw UsageError("walk mode must be dfs or bfs, got '" + s + "'");
}

struct WalkConfig {
  Index steps = 80;
  WalkMode mode = WalkMode::dfs;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct EarlyStop {
  Index origin = 0;
  Index steps_taken = 0;
};

struct WalkResult {
  IntMatrix counts;
  std::vector<EarlyStop> early_stops;
};

namespace detail {

// Index drawn from a nonnegative row with positive sum.
template <class Engine, class Row>
Index sample_row(Engine& rng, const Row& row, double sum) {
  const double u = uniform01(rng) * sum;
  double acc = 0.0;
  Index last = -1;
  for (Index j = 0; j < row.size(); ++j) {
    const double p = row(j);
    if (p <= 0.0) continue;
    acc += p;
    last = j;
    if (u < acc) return j;
  }
  return last;
}

inline std::optional<Index> walk_origin(const Matrix& probs, Index origin, const WalkConfig& cfg,
                                        IntMatrix& counts) {
  std::mt19937_64 rng(seeds::derive(cfg.seed, "walk", static_cast<std::uint64_t>(origin)));
  if (cfg.mode == WalkMode::bfs) {
    const double sum = probs.row(origin).sum();
    for (Index s = 0; s < cfg.steps; ++s) {
      ++counts(origin, sample_row(rng, probs.row(origin), sum));
    }
    return std::nullopt;
  }
  // DFS mutates rows of a per-origin working copy; only touched rows are stored.
  std::map<Index, RowVector> touched;
  auto row_of = [&](Index r) -> RowVector {
    auto it = touched.find(r);
    return it != touched.end() ? it->second : RowVector(probs.row(r));
  };
  Index current = origin;
  for (Index s = 0; s < cfg.steps; ++s) {
    const RowVector row = row_of(current);
    const double sum = row.sum();
    if (!(sum > 0.0)) return s;
    const Index next = sample_row(rng, row, sum);
    ++counts(origin, next);
    RowVector next_row = row_of(next);
    next_row(current) = 0.0;
    const double next_sum = next_row.sum();
    if (!(next_sum > 0.0)) {
      touched[next] = RowVector::Zero(next_row.size());
      return s + 1 < cfg.steps ? std::optional<Index>(s + 1) : std::nullopt;
    }
    touched[next] = next_row / next_sum;
    current = next;
  }
  return std::nullopt;
}

}  // namespace detail

/// Runs one walk per origin. c(i, j) counts landings on j during walks that
/// started at i. Origins use independent seeds, so the result does not depend
/// on `cfg.threads`.
inline WalkResult random_walk_counts(const TransitionMatrix& p, const WalkConfig& cfg) {
  if (cfg.steps < 1) throw UsageError("walk steps must be >= 1");
  const Index n = p.probs.rows();
  WalkResult out;
  out.counts = IntMatrix::Zero(n, n);
  std::vector<std::optional<Index>> stops(static_cast<std::size_t>(n));

  auto run_range = [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      if (p.dead[static_cast<std::size_t>(i)]) continue;
      stops[static_cast<std::size_t>(i)] = detail::walk_origin(p.probs, i, cfg, out.counts);
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    run_range(0, n);
  } else {
    std::vector<std::jthread> pool;
    const Index chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const Index b = std::min<Index>(n, t * chunk);
      const Index e = std::min<Index>(n, b + chunk);
      pool.emplace_back(run_range, b, e);
    }
  }
  for (Index i = 0; i < n; ++i) {
    if (auto s = stops[static_cast<std::size_t>(i)]) out.early_stops.push_back({i, *s});
  }
  return out;
}

struct NeighborhoodGraph {
  IntMatrix counts;
  Matrix s;
  Vector degree;
  Matrix laplacian;
};

inline NeighborhoodGraph neighborhood_graph(const IntMatrix& counts) {
  NeighborhoodGraph g;
  g.counts = counts;
  const Matrix c = counts.cast<double>();
  g.s = 0.5 * (c + c.transpose());
  g.degree = g.s.rowwise().sum();
  g.laplacian = Matrix(g.degree.asDiagonal()) - g.s;
  return g;
}

/// Graph built from an explicit similarity matrix (e.g. read from a dump).
inline NeighborhoodGraph graph_from_similarity(const Matrix& s) {
  NeighborhoodGraph g;
  g.s = s;
  g.degree = s.rowwise().sum();
  g.laplacian = Matrix(g.degree.asDiagonal()) - s;
  return g;
}

struct GraphBuild {
  JointSimilarity similarity;
  TransitionMatrix transition;
  WalkResult walk;
  NeighborhoodGraph graph;
};

/// Full pipeline: joint similarity -> transition matrix -> walks -> graph.
inline GraphBuild build_graph(const Matrix& x, const Matrix& y, const WalkConfig& cfg,
                              std::optional<double> sigma = std::nullopt) {
  GraphBuild b;
  b.similarity = joint_similarity(x, y, sigma);
  b.transition = transition_matrix(b.similarity.joint, &b.similarity.gauss);
  b.walk = random_walk_counts(b.transition, cfg);
  b.graph = neighborhood_graph(b.walk.counts);
  return b;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Writes the nonzero entries of `s` as "i<TAB>j<TAB>value" lines sorted by (i, j).
inline void write_coordinate_list(std::ostream& os, const Matrix& s) {
  for (Index i = 0; i < s.rows(); ++i) {
    for (Index j = 0; j < s.cols(); ++j) {
      if (s(i, j) != 0.0) os << i << '\t' << j << '\t' << format_double(s(i, j)) << '\n';
    }
  }
}

/// Reads a coordinate list written by write_coordinate_list into an n x n matrix.
inline Matrix read_coordinate_list(std::istream& is, Index n) {
  Matrix s = Matrix::Zero(n, n);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    long long i = 0, j = 0;
    double v = 0.0;
    if (std::sscanf(line.c_str(), "%lld\t%lld\t%lf", &i, &j, &v) != 3) {
      throw ParseError("malformed coordinate line", line_no, 1);
    }
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw ParseError("coordinate out of range for n=" + std::to_string(n), line_no, 1);
    }
    s(i, j) = v;
  }
  return s;
}

inline nlohmann::ordered_json diagnostics_json(const GraphBuild& b, const WalkConfig& cfg) {
  nlohmann::ordered_json isolated = nlohmann::ordered_json::array();
  nlohmann::ordered_json dead = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < b.transition.isolated.size(); ++i) {
    if (b.transition.isolated[i]) isolated.push_back(i);
    if (b.transition.dead[i]) dead.push_back(i);
  }
  nlohmann::ordered_json early = nlohmann::ordered_json::array();
  for (const auto& e : b.walk.early_stops) {
    early.push_back({{"origin", e.origin}, {"steps_taken", e.steps_taken}});
  }
  return {{"sigma", b.similarity.sigma},
          {"mode", to_string(cfg.mode)},
          {"steps", cfg.steps},
          {"seed", cfg.seed},
          {"isolated", isolated},
          {"dead", dead},
          {"early_terminations", early}};
}

}  // namespace msfs
