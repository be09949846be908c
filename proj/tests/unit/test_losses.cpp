#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dfkd/losses.hpp"
#include "dfkd/ops.hpp"
#include "oracles.hpp"

using namespace dfkd;
using namespace dfkd::losses;

namespace {

oracle::Mat random_mat(std::size_t n, std::size_t c, std::uint64_t seed, double scale = 2.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  oracle::Mat m(n, oracle::Vec(c));
  for (auto& row : m) {
    for (auto& v : row) v = d(rng);
  }
  return m;
}

Tensor to_tensor(const oracle::Mat& m, bool requires_grad = false) {
  std::vector<double> flat;
  for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor::from({m.size(), m.front().size()}, flat, requires_grad);
}

oracle::Mat to_mat(const oracle::Vec& flat, std::size_t n) {
  const std::size_t c = flat.size() / n;
  oracle::Mat m(n);
  for (std::size_t i = 0; i < n; ++i) m[i].assign(flat.begin() + i * c, flat.begin() + (i + 1) * c);
  return m;
}

oracle::Vec flat(const oracle::Mat& m) {
  oracle::Vec v;
  for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
  return v;
}

// Gradient of loss(x) w.r.t. an [n, c] input, against central differences of
// the oracle value.
void check_gradient(const std::function<Tensor(const Tensor&)>& loss,
                    const std::function<double(const oracle::Mat&)>& ref, const oracle::Mat& x0) {
  const Tensor leaf = to_tensor(x0, true);
  const Tensor g = grad(loss(leaf), std::span<const Tensor>(&leaf, 1))[0];
  const oracle::Vec analytic(g.values().begin(), g.values().end());
  const auto fd =
      oracle::fd_gradient([&](const oracle::Vec& x) { return ref(to_mat(x, x0.size())); }, flat(x0), 1e-6);
  EXPECT_LT(oracle::rel_err(analytic, fd), 1e-6);
}

}  // namespace

TEST(Losses, ValuesMatchOracles) {
  const auto a = random_mat(6, 5, 1), b = random_mat(6, 5, 2);
  const auto pa = oracle::softmax(a), pb = oracle::softmax(b);
  EXPECT_NEAR(kd_mae(to_tensor(a), to_tensor(b)).item(), oracle::kd_mae(a, b), 1e-12);
  EXPECT_NEAR(kl_rows(to_tensor(pa), to_tensor(pb)).item(), oracle::kl_rows(pa, pb), 1e-12);
  EXPECT_NEAR(js_divergence(to_tensor(a), to_tensor(b)).item(), oracle::js(a, b), 1e-12);
  EXPECT_NEAR(one_hot_loss(to_tensor(pa)).item(), oracle::one_hot(pa), 1e-12);
  EXPECT_NEAR(entropy_max_loss(to_tensor(pa)).item(), oracle::entropy_max(pa), 1e-12);
  const std::vector<Tensor> trace{to_tensor(a), to_tensor(b)};
  EXPECT_NEAR(activation_loss(trace).item(), oracle::activation({a, b}), 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  const auto a = random_mat(4, 5, 3), b = random_mat(4, 5, 4);
  const Tensor ta = to_tensor(a);
  check_gradient([&](const Tensor& x) { return kd_mae(ta, x); }, [&](const oracle::Mat& x) { return oracle::kd_mae(a, x); }, b);
  check_gradient([&](const Tensor& x) { return js_divergence(ta, x); }, [&](const oracle::Mat& x) { return oracle::js(a, x); }, b);
  check_gradient([&](const Tensor& x) { return js_divergence(x, ta); }, [&](const oracle::Mat& x) { return oracle::js(x, a); }, b);
  check_gradient([](const Tensor& x) { return one_hot_loss(softmax_rows(x)); },
                 [](const oracle::Mat& x) { return oracle::one_hot(oracle::softmax(x)); }, b);
  check_gradient([](const Tensor& x) { return entropy_max_loss(softmax_rows(x)); },
                 [](const oracle::Mat& x) { return oracle::entropy_max(oracle::softmax(x)); }, b);
  check_gradient([](const Tensor& x) { return activation_loss({tanh(x)}); },
                 [](const oracle::Mat& x) {
                   oracle::Mat t = x;
                   for (auto& row : t) {
                     for (auto& v : row) v = std::tanh(v);
                   }
                   return oracle::activation({t});
                 },
                 b);
}

TEST(Losses, KdMaeIdentityAndReduction) {
  const auto a = random_mat(3, 4, 5);
  EXPECT_EQ(kd_mae(to_tensor(a), to_tensor(a)).item(), 0.0);
  const Tensor t = Tensor::from({2, 2}, {0, 0, 0, 0});
  const Tensor s = Tensor::from({2, 2}, {1, -1, 2, 0});
  // Per-row L1 is 2 and 2, batch mean 2.
  EXPECT_DOUBLE_EQ(kd_mae(t, s).item(), 2.0);
  EXPECT_THROW(kd_mae(t, Tensor::zeros({2, 3})), ShapeError);
}

TEST(Losses, JsProperties) {
  const auto a = random_mat(5, 6, 6, 4.0), b = random_mat(5, 6, 7, 4.0);
  const double ab = js_divergence(to_tensor(a), to_tensor(b)).item();
  const double ba = js_divergence(to_tensor(b), to_tensor(a)).item();
  EXPECT_NEAR(ab, ba, 1e-14);
  EXPECT_GE(ab, 0.0);
  EXPECT_LE(ab, std::numbers::ln2);
  EXPECT_NEAR(js_divergence(to_tensor(a), to_tensor(a)).item(), 0.0, 1e-15);
  const Tensor d1 = Tensor::from({1, 2}, {900, 0}), d2 = Tensor::from({1, 2}, {0, 900});
  EXPECT_NEAR(js_divergence(d1, d2).item(), std::numbers::ln2, 1e-9);
}

TEST(Losses, KlDivergenceOnProbVectors) {
  const ProbVector p({0.5, 0.5}), q({0.25, 0.75});
  EXPECT_NEAR(kl_divergence(p, q), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_EQ(kl_divergence(p, p), 0.0);
  // Zero mass contributes nothing.
  EXPECT_NEAR(kl_divergence(ProbVector({1.0, 0.0}), q), std::log(4.0), 1e-15);
  EXPECT_THROW(ProbVector({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(ProbVector({1.5, -0.5}), std::invalid_argument);
}

TEST(Losses, EntropyAndOneHotBounds) {
  for (std::size_t c : {2u, 3u, 10u}) {
    const Tensor u = Tensor::full({4, c}, 1.0 / static_cast<double>(c));
    EXPECT_NEAR(entropy_max_loss(u).item(), -std::log(static_cast<double>(c)), 1e-9);
    EXPECT_NEAR(one_hot_loss(u).item(), std::log(static_cast<double>(c)), 1e-9);
  }
  const auto p = oracle::softmax(random_mat(8, 5, 8));
  const double e = entropy_max_loss(to_tensor(p)).item();
  EXPECT_GE(e, -std::log(5.0) - 1e-12);
  EXPECT_LE(e, 0.0);
  EXPECT_EQ(one_hot_loss(Tensor::from({2, 3}, {0, 1, 0, 1, 0, 0})).item(), 0.0);
  EXPECT_GT(one_hot_loss(to_tensor(p)).item(), 0.0);
}

TEST(Losses, OneHotTieBreakPicksLowestIndex) {
  // Rows tie between classes 1 and 2; the target is class 1 in both rows,
  // so the loss gradient must put all its weight on column 1.
  const Tensor p = Tensor::from({2, 3}, {0.2, 0.4, 0.4, 0.2, 0.4, 0.4}, true);
  const Tensor g = grad(one_hot_loss(p), std::span<const Tensor>(&p, 1))[0];
  EXPECT_LT(g.at(1), 0.0);
  EXPECT_EQ(g.at(2), 0.0);
  EXPECT_EQ(g.at(0), 0.0);
}

TEST(Losses, PriorLossCombination) {
  const auto logits = random_mat(6, 4, 9);
  const Tensor probs = softmax_rows(to_tensor(logits));
  const std::vector<Tensor> trace{to_tensor(random_mat(6, 3, 10))};
  EXPECT_DOUBLE_EQ(prior_loss(probs, trace, {0.0, 0.0}).item(), one_hot_loss(probs).item());
  const double expect = one_hot_loss(probs).item() + activation_loss(trace).item() + entropy_max_loss(probs).item();
  EXPECT_NEAR(prior_loss(probs, trace, {1.0, 1.0}).item(), expect, 1e-14);
  EXPECT_THROW(prior_loss(probs, trace, {-1.0, 0.0}), std::invalid_argument);
}

TEST(Losses, GeneratorLossDecomposes) {
  nn::NetSpec ts{.kind = nn::NetKind::classifier_mlp, .input_shape = {2}, .output_dim = 3, .width = 8, .depth = 2,
                 .activation = nn::Activation::tanh};
  nn::Network teacher = nn::build_network(ts, 1), student = nn::build_network(ts, 2);
  nn::NetSpec gs{.kind = nn::NetKind::generator, .input_shape = {2}, .width = 8, .depth = 1, .noise_dim = 4};
  nn::Network gen = nn::build_network(gs, 3);
  nn::Rng rng(4);
  const Tensor z = nn::sample_noise(10, 4, rng);
  const auto gl = generator_loss(teacher, student, gen, gen.params(), z, {0.5, 2.0},
                                 {.training = true, .update_buffers = false});
  EXPECT_NEAR(gl.total.item(), gl.prior - gl.js, 1e-14);
  EXPECT_NEAR(gl.prior, gl.one_hot + 0.5 * gl.activation + 2.0 * gl.entropy, 1e-14);
  EXPECT_EQ(gl.samples.shape(), (Shape{10, 2}));
  EXPECT_FALSE(teacher_logits(teacher, gl.samples).requires_grad());
}

TEST(Losses, AcquisitionAndRetentionAreTheSameDistillationLoss) {
  nn::NetSpec ts{.kind = nn::NetKind::classifier_mlp, .input_shape = {2}, .output_dim = 3, .width = 8, .depth = 1,
                 .activation = nn::Activation::tanh};
  nn::Network teacher = nn::build_network(ts, 5), student = nn::build_network(ts, 6);
  nn::Rng rng(7);
  const PseudoBatch x(nn::sample_noise(5, 2, rng), SampleSource::generator);
  const double acq = acquisition_loss(teacher, student, student.params(), x).item();
  const double ret = retention_loss(teacher, student, student.params(), x).item();
  EXPECT_EQ(acq, ret);
  const double direct = kd_mae(teacher.forward(x.samples, {.training = false}), student.forward(x.samples)).item();
  EXPECT_NEAR(acq, direct, 1e-14);
}
