#pragma once

// Hand-rolled generators and small helpers shared by the test binaries.

#include "msfs/msfs.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace testing_support {

using msfs::Index;
using msfs::Matrix;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  Index integer(Index lo, Index hi) {  // inclusive
    return std::uniform_int_distribution<Index>(lo, hi)(rng_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

  Matrix gaussian(Index r, Index c) {
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i) {
      for (Index j = 0; j < c; ++j) m(i, j) = normal();
    }
    return m;
  }
  Matrix binary(Index r, Index c, double p = 0.4) {
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i) {
      for (Index j = 0; j < c; ++j) m(i, j) = coin(p) ? 1.0 : 0.0;
    }
    return m;
  }
  // Random graph Laplacian of a nonnegative symmetric weight matrix.
  Matrix laplacian(Index n, double density = 0.3) {
    Matrix s = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        if (coin(density)) s(i, j) = s(j, i) = uniform(0.0, 3.0);
      }
    }
    return msfs::graph_from_similarity(s).laplacian;
  }
  msfs::Dataset dataset(Index n, Index p, Index m) {
    msfs::Dataset ds;
    ds.features = gaussian(n, p);
    ds.labels = binary(n, m);
    for (Index j = 0; j < p; ++j) ds.feature_names.push_back("f" + std::to_string(j));
    for (Index j = 0; j < m; ++j) ds.label_names.push_back("l" + std::to_string(j));
    return ds;
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline std::string data_path(const std::string& name) {
  return std::string(MSFS_TEST_DATA) + "/" + name;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("msfs_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path write_file(const std::filesystem::path& path,
                                        const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
  return path;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing_support
