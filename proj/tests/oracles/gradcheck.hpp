#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "crs/dataset.hpp"

namespace oracle {

// ||analytic - numeric|| / max(||analytic||, ||numeric||) using central differences.
inline double gradient_relative_error(
    const std::function<double(const std::vector<double>&, std::vector<double>*)>& f,
    std::vector<double> params, double h = 1e-6) {
  std::vector<double> analytic;
  f(params, &analytic);
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = f(params, nullptr);
    params[i] = saved - h;
    const double down = f(params, nullptr);
    params[i] = saved;
    const double numeric = (up - down) / (2 * h);
    diff += (analytic[i] - numeric) * (analytic[i] - numeric);
    na += analytic[i] * analytic[i];
    nn += numeric * numeric;
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  return scale == 0 ? 0 : std::sqrt(diff) / scale;
}

inline crs::Dataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  crs::Dataset ds;
  ds.x = crs::Matrix(n, d);
  for (auto& v : ds.x.values) v = z(rng);
  for (std::size_t i = 0; i < n; ++i) {
    ds.y.push_back(i % 3 == 0 ? 0 : 1);
    ds.case_ids.push_back("G" + std::to_string(i));
  }
  for (std::size_t j = 0; j < d; ++j) ds.feature_names.push_back("f" + std::to_string(j));
  return ds;
}

}  // namespace oracle
