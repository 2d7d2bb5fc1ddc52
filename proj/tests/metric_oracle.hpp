#pragma once

// Brute-force multi-label metrics by explicit pair and rank enumeration.
// Ranks are counted directly: rank(k) = 1 + #{j : f_j > f_k} + #{j < k : f_j == f_k}.

#include "msfs/common.hpp"

#include <optional>

namespace metric_oracle {

using msfs::Index;
using msfs::Matrix;

inline Index rank_of(const Matrix& f, Index i, Index k) {
  Index r = 1;
  for (Index j = 0; j < f.cols(); ++j) {
    if (f(i, j) > f(i, k) || (j < k && f(i, j) == f(i, k))) ++r;
  }
  return r;
}

inline double hamming(const Matrix& pred, const Matrix& y) {
  Index bad = 0;
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index j = 0; j < y.cols(); ++j) bad += pred(i, j) != y(i, j);
  }
  return static_cast<double>(bad) / static_cast<double>(y.rows() * y.cols());
}

inline std::optional<double> ranking_loss(const Matrix& f, const Matrix& y) {
  double total = 0.0;
  Index used = 0;
  for (Index i = 0; i < y.rows(); ++i) {
    Index rel = 0, irr = 0;
    double bad = 0.0;
    for (Index a = 0; a < y.cols(); ++a) {
      if (y(i, a) != 1.0) continue;
      ++rel;
      for (Index b = 0; b < y.cols(); ++b) {
        if (y(i, b) == 1.0) continue;
        bad += f(i, a) < f(i, b) ? 1.0 : (f(i, a) == f(i, b) ? 0.5 : 0.0);
      }
    }
    irr = y.cols() - rel;
    if (rel == 0 || irr == 0) continue;
    total += bad / static_cast<double>(rel * irr);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<double>(used);
}

inline double one_error(const Matrix& f, const Matrix& y) {
  double total = 0.0;
  Index used = 0;
  for (Index i = 0; i < y.rows(); ++i) {
    if (y.row(i).sum() == 0.0) continue;
    for (Index k = 0; k < y.cols(); ++k) {
      if (rank_of(f, i, k) == 1) total += y(i, k) == 1.0 ? 0.0 : 1.0;
    }
    ++used;
  }
  return used ? total / static_cast<double>(used) : 0.0;
}

inline double coverage(const Matrix& f, const Matrix& y) {
  double total = 0.0;
  Index used = 0;
  for (Index i = 0; i < y.rows(); ++i) {
    if (y.row(i).sum() == 0.0) continue;
    Index worst = 0;
    for (Index k = 0; k < y.cols(); ++k) {
      if (y(i, k) == 1.0) worst = std::max(worst, rank_of(f, i, k));
    }
    total += static_cast<double>(worst - 1);
    ++used;
  }
  return used ? total / static_cast<double>(used) : 0.0;
}

inline double average_precision(const Matrix& f, const Matrix& y) {
  double total = 0.0;
  Index used = 0;
  for (Index i = 0; i < y.rows(); ++i) {
    Index rel = 0;
    double sum = 0.0;
    for (Index k = 0; k < y.cols(); ++k) {
      if (y(i, k) != 1.0) continue;
      ++rel;
      const Index rk = rank_of(f, i, k);
      Index above = 0;
      for (Index j = 0; j < y.cols(); ++j) above += y(i, j) == 1.0 && rank_of(f, i, j) <= rk;
      sum += static_cast<double>(above) / static_cast<double>(rk);
    }
    if (rel == 0) continue;
    total += sum / static_cast<double>(rel);
    ++used;
  }
  return used ? total / static_cast<double>(used) : 0.0;
}

// Binary matrix whose entries are the bits of `code`, row-major.
inline Matrix from_bits(Index n, Index m, unsigned code) {
  Matrix y(n, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) y(i, j) = (code >> (i * m + j)) & 1u ? 1.0 : 0.0;
  }
  return y;
}

}  // namespace metric_oracle
