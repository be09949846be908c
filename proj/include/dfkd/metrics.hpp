#pragma once

// Epoch-series statistics for student accuracy curves.
//
// Percentile slices: with E epochs and percentile p, the slice holds the
// epochs strictly after floor(p * E / 100), counting epochs from 1. For
// [1, 2, 3, 4, 5] at p = 40 that is [3, 4, 5]. Variances are population
// variances (divide by the slice length).

#include <span>
#include <vector>

namespace dfkd::metrics {

struct PercentileStat {
  int percentile = 0;
  double mu = 0.0;
  double sigma2 = 0.0;
  std::size_t n_epochs = 0;
};

inline constexpr int kDefaultPercentiles[] = {0, 20, 40, 60, 80};

// Index of the first epoch in the slice (0-based).
std::size_t percentile_start(std::size_t epochs, int pct);
PercentileStat percentile_stats(std::span<const double> acc, int pct);
std::vector<double> cumulative_mean(std::span<const double> acc);
double acc_max(std::span<const double> acc);
double teacher_student_gap(double t_acc, double s_acc);

double mean(std::span<const double> v);
double median(std::vector<double> v);

}  // namespace dfkd::metrics
