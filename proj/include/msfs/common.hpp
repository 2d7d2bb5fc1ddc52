#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace msfs {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using IntMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// Error hierarchy. The CLI maps each family onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File missing, unreadable, or malformed on disk.
class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : IoError(what + " (row " + std::to_string(row) + ", column " +
                std::to_string(column) + ")"),
        row_(row),
        column_(column) {}

  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

// Numerical failure inside the optimizer.
class SolverError : public Error {
 public:
  using Error::Error;
};

// Arguments violate an operation's preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Deterministic seed plumbing. Every stochastic stage derives its own stream
// from (master seed, stage name, indices) so stages reproduce independently.
namespace seeds {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive(std::uint64_t master, std::string_view stage) {
  return splitmix64(master ^ splitmix64(fnv1a(stage)));
}

template <class... Ints>
std::uint64_t derive(std::uint64_t master, std::string_view stage, std::uint64_t first,
                     Ints... rest) {
  std::uint64_t h = derive(master, stage);
  for (std::uint64_t v : {first, static_cast<std::uint64_t>(rest)...}) {
    h = splitmix64(h ^ splitmix64(v + 0x632be59bd9b4e019ULL));
  }
  return h;
}

}  // namespace seeds

// Uniform double in [0, 1) from the top 53 bits of a 64-bit engine draw.
template <class Engine>
double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Unbiased integer in [0, bound) by rejection.
template <class Engine>
std::uint64_t uniform_below(Engine& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % bound;
}

}  // namespace msfs
