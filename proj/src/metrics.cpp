#include "dfkd/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace dfkd::metrics {

std::size_t percentile_start(std::size_t epochs, int pct) {
  if (pct < 0 || pct >= 100) throw std::invalid_argument("percentile must lie in [0, 100), got " + std::to_string(pct));
  return (static_cast<std::size_t>(pct) * epochs) / 100;
}

PercentileStat percentile_stats(std::span<const double> acc, int pct) {
  if (acc.empty()) throw std::invalid_argument("percentile_stats: empty series");
  const std::size_t start = percentile_start(acc.size(), pct);
  if (start >= acc.size()) throw std::invalid_argument("percentile_stats: empty slice");
  const auto slice = acc.subspan(start);
  PercentileStat s;
  s.percentile = pct;
  s.n_epochs = slice.size();
  s.mu = mean(slice);
  double ss = 0.0;
  for (double a : slice) ss += (a - s.mu) * (a - s.mu);
  s.sigma2 = ss / static_cast<double>(slice.size());
  return s;
}

std::vector<double> cumulative_mean(std::span<const double> acc) {
  if (acc.empty()) throw std::invalid_argument("cumulative_mean: empty series");
  std::vector<double> out(acc.size());
  double s = 0.0;
  for (std::size_t k = 0; k < acc.size(); ++k) {
    s += acc[k];
    out[k] = s / static_cast<double>(k + 1);
  }
  return out;
}

double acc_max(std::span<const double> acc) {
  if (acc.empty()) throw std::invalid_argument("acc_max: empty series");
  return *std::max_element(acc.begin(), acc.end());
}

double teacher_student_gap(double t_acc, double s_acc) { return t_acc - s_acc; }

double mean(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean of an empty series");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty series");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace dfkd::metrics
