#include <gtest/gtest.h>

#include <random>

#include "dfkd/metrics.hpp"
#include "oracles.hpp"

using namespace dfkd::metrics;

TEST(Metrics, HandExample) {
  const std::vector<double> acc{1, 2, 3, 4, 5};
  const auto s = percentile_stats(acc, 40);
  EXPECT_EQ(s.n_epochs, 3u);
  EXPECT_DOUBLE_EQ(s.mu, 4.0);
  EXPECT_NEAR(s.sigma2, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(percentile_start(5, 40), 2u);
  EXPECT_EQ(cumulative_mean(acc), (std::vector<double>{1, 1.5, 2, 2.5, 3}));
  EXPECT_EQ(acc_max(acc), 5.0);
}

TEST(Metrics, MatchBruteForceOnRandomSeries) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> acc(1 + rng() % 200);
    for (auto& a : acc) a = u(rng);
    for (int pct : {0, 20, 40, 60, 80, 95}) {
      if (percentile_start(acc.size(), pct) >= acc.size()) continue;
      const auto got = percentile_stats(acc, pct);
      const auto ref = oracle::percentile(acc, pct);
      ASSERT_EQ(got.n_epochs, ref.n);
      ASSERT_NEAR(got.mu, ref.mu, 1e-12);
      ASSERT_NEAR(got.sigma2, ref.sigma2, 1e-12 * std::max(1.0, ref.sigma2));
    }
    const auto cm = cumulative_mean(acc), ref = oracle::cumulative_mean(acc);
    for (std::size_t i = 0; i < cm.size(); ++i) ASSERT_NEAR(cm[i], ref[i], 1e-12);
    double best = acc[0];
    for (double a : acc) best = std::max(best, a);
    ASSERT_EQ(acc_max(acc), best);
  }
}

TEST(Metrics, TeacherStudentGap) {
  EXPECT_NEAR(teacher_student_gap(77.94, 77.11), 0.83, 1e-12);
  EXPECT_NEAR(teacher_student_gap(77.94, 77.21), 0.73, 1e-12);
}

TEST(Metrics, InvalidInput) {
  const std::vector<double> empty;
  EXPECT_THROW(percentile_stats(empty, 0), std::invalid_argument);
  EXPECT_THROW(percentile_stats(std::vector<double>{1.0}, 100), std::invalid_argument);
  EXPECT_THROW(percentile_stats(std::vector<double>{1.0}, -5), std::invalid_argument);
  EXPECT_THROW(cumulative_mean(empty), std::invalid_argument);
  EXPECT_THROW(acc_max(empty), std::invalid_argument);
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
}
