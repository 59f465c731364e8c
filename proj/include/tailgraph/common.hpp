#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tailgraph {

// Row-major storage so that gather/scatter over rows touches contiguous memory.
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixT<double>;
using Vector = VectorT<double>;
using Index = Eigen::Index;

std::string shape_string(Index rows, Index cols);

// Operand shapes do not conform for the named op.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, Index r0, Index c0, Index r1, Index c1);
  ShapeError(const std::string& op, const std::string& detail);
};

// A forward op produced NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& op, const std::string& detail = {});
};

// Malformed input data (corpus files, TU text files). Carries file and line when known.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what);
  DataError(const std::string& file, std::size_t line, const std::string& what);
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_ = 0;
};

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// splitmix64 finalizer; used to derive independent per-sample seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Rest>
std::uint64_t hash_seed(std::uint64_t first, Rest... rest) {
  std::uint64_t h = mix_seed(first);
  ((h = mix_seed(h ^ static_cast<std::uint64_t>(rest))), ...);
  return h;
}

}  // namespace tailgraph
