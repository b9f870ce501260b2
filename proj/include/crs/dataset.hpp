#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace crs {

// Dense row-major matrix of encoded features.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
};

// Encoded, labeled cases aligned by position.
struct Dataset {
  Matrix x;
  std::vector<int> y;
  std::vector<std::string> case_ids;
  std::vector<std::string> feature_names;

  std::size_t size() const { return y.size(); }
  Dataset subset(std::span<const std::size_t> rows) const;
};

}  // namespace crs
