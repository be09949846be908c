#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

double norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double rel_err(const Vec& a, const Vec& b) {
  Vec d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double denom = std::max(norm(a), norm(b));
  return denom == 0.0 ? 0.0 : norm(d) / denom;
}

double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec x, double h) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Mat softmax(const Mat& logits) {
  Mat out;
  for (const auto& row : logits) {
    const double m = *std::max_element(row.begin(), row.end());
    Vec e(row.size());
    double z = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) z += e[j] = std::exp(row[j] - m);
    for (auto& v : e) v /= z;
    out.push_back(e);
  }
  return out;
}

namespace {

double safe_log(double p) { return std::log(std::max(p, 1e-12)); }

}  // namespace

double kd_mae(const Mat& t, const Mat& s) {
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = 0; j < t[i].size(); ++j) total += std::abs(t[i][j] - s[i][j]);
  }
  return total / static_cast<double>(t.size());
}

double kl_rows(const Mat& p, const Mat& q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      if (p[i][j] > 0.0) total += p[i][j] * (safe_log(p[i][j]) - safe_log(q[i][j]));
    }
  }
  return total / static_cast<double>(p.size());
}

double js(const Mat& a_logits, const Mat& b_logits) {
  const Mat pa = softmax(a_logits), pb = softmax(b_logits);
  Mat m = pa;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = 0.5 * (pa[i][j] + pb[i][j]);
  }
  return 0.5 * (kl_rows(pa, m) + kl_rows(pb, m));
}

double one_hot(const Mat& probs) {
  double total = 0.0;
  for (const auto& row : probs) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    total -= safe_log(row[best]);
  }
  return total / static_cast<double>(probs.size());
}

double entropy_max(const Mat& probs) {
  Vec mean(probs.front().size(), 0.0);
  for (const auto& row : probs) {
    for (std::size_t j = 0; j < row.size(); ++j) mean[j] += row[j] / static_cast<double>(probs.size());
  }
  double s = 0.0;
  for (double p : mean) {
    if (p > 0.0) s += p * safe_log(p);
  }
  return s;
}

double activation(const std::vector<Mat>& trace) {
  double total = 0.0;
  for (const auto& layer : trace) {
    for (const auto& row : layer) {
      for (double v : row) total += std::abs(v);
    }
  }
  return -total / static_cast<double>(trace.front().size() * trace.size());
}

Stat percentile(const Vec& acc, int pct) {
  // Epoch e (1-based) belongs to the slice when e > pct * E / 100.
  const std::size_t e_max = acc.size();
  Vec slice;
  for (std::size_t e = 1; e <= e_max; ++e) {
    if (100 * e > static_cast<std::size_t>(pct) * e_max) slice.push_back(acc[e - 1]);
  }
  double mu = 0.0;
  for (double v : slice) mu += v;
  mu /= static_cast<double>(slice.size());
  double s2 = 0.0;
  for (double v : slice) s2 += (v - mu) * (v - mu);
  s2 /= static_cast<double>(slice.size());
  return {mu, s2, slice.size()};
}

Vec cumulative_mean(const Vec& acc) {
  Vec out;
  for (std::size_t k = 1; k <= acc.size(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += acc[i];
    out.push_back(s / static_cast<double>(k));
  }
  return out;
}

Quadratic Quadratic::random(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Quadratic q{Mat(n, Vec(n)), Vec(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) q.a[i][j] = q.a[j][i] = u(rng);
    q.b[i] = u(rng);
  }
  return q;
}

Vec Quadratic::apply(const Vec& v) const {
  Vec out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) out[i] += a[i][j] * v[j];
  }
  return out;
}

double Quadratic::value(const Vec& x) const {
  const Vec ax = apply(x);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += 0.5 * x[i] * ax[i] + b[i] * x[i];
  return s;
}

Vec Quadratic::grad(const Vec& x) const {
  Vec g = apply(x);
  for (std::size_t i = 0; i < x.size(); ++i) g[i] += b[i];
  return g;
}

Vec meta_grad_closed_form(const Quadratic& qa, const Quadratic& qr, const Vec& x, double alpha, bool plain) {
  const std::size_t n = x.size();
  const Vec ga = qa.grad(x);
  Vec shifted(n);
  for (std::size_t i = 0; i < n; ++i) shifted[i] = x[i] - alpha * ga[i];
  const Vec gr_shift = qr.grad(shifted);
  const Vec a_gr = qa.apply(gr_shift);  // A is symmetric, so (I - alpha A)^T = I - alpha A
  const Vec gr = qr.grad(x);
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = ga[i] + (plain ? gr[i] : 0.0) + gr_shift[i] - alpha * a_gr[i];
  return out;
}

void BankModel::push(int id) {
  slots_.push_back(id);
  if (slots_.size() > capacity_) slots_.pop_front();
}

}  // namespace oracle
