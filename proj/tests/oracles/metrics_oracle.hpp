#pragma once

#include <algorithm>
#include <random>
#include <set>
#include <vector>

// Quadratic reference implementations for ranking metrics.
namespace oracle {

inline double pair_count_auc(const std::vector<int>& y, const std::vector<double>& s) {
  double score = 0, pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      if (s[i] > s[j]) score += 1;
      else if (s[i] == s[j]) score += 0.5;
    }
  }
  return score / pairs;
}

// Walks every distinct threshold from high to low, recounting from scratch.
inline double step_sum_ap(const std::vector<int>& y, const std::vector<double>& s) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double positives = 0;
  for (int v : y) positives += v;
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, flagged = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (s[i] >= t) {
        flagged += 1;
        tp += y[i];
      }
    double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / flagged);
    prev_recall = recall;
  }
  return ap;
}

struct Instance {
  std::vector<int> labels;
  std::vector<double> scores;
};

// Random instance with both classes; scores drawn from a small grid to force ties
// when `coarse` is set.
inline Instance random_instance(std::mt19937_64& rng, std::size_t max_n, bool coarse) {
  std::uniform_int_distribution<std::size_t> size(4, max_n);
  std::size_t n = size(rng);
  Instance inst;
  std::bernoulli_distribution coin(0.3 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng));
  std::uniform_int_distribution<int> grid(0, 9);
  std::normal_distribution<double> z;
  for (std::size_t i = 0; i < n; ++i) {
    int y = coin(rng);
    inst.labels.push_back(y);
    inst.scores.push_back(coarse ? grid(rng) / 10.0 + 0.05 * y * grid(rng) : z(rng) + y);
  }
  inst.labels[0] = 0;
  inst.labels[1] = 1;
  return inst;
}

}  // namespace oracle
