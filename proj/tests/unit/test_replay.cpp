#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dfkd/ops.hpp"
#include "dfkd/replay.hpp"
#include "oracles.hpp"

using namespace dfkd;
using namespace dfkd::replay;

namespace {

// Batch whose row r of push `id` is (id * 1000 + r, -(id * 1000 + r)).
PseudoBatch tagged_batch(std::size_t id, std::size_t rows) {
  std::vector<double> v;
  for (std::size_t r = 0; r < rows; ++r) {
    const double tag = static_cast<double>(id * 1000 + r);
    v.push_back(tag);
    v.push_back(-tag);
  }
  return PseudoBatch(Tensor::from({rows, 2}, v), SampleSource::generator);
}

}  // namespace

TEST(MemoryBank, FifoCapacityAndSubsetMembership) {
  std::mt19937_64 meta(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t capacity = 1 + meta() % 6, subset = 1 + meta() % 8, batch = subset + meta() % 10;
    const std::size_t pushes = meta() % 20;
    MemoryBank bank({.capacity = capacity, .subset_size = subset, .push_frequency = 1});
    oracle::BankModel model(capacity);
    Rng rng(meta());
    for (std::size_t id = 0; id < pushes; ++id) {
      bank.push(tagged_batch(id, batch), rng);
      model.push(static_cast<int>(id));
    }
    const auto expected = model.slots();
    ASSERT_EQ(bank.slot_count(), expected.size());
    EXPECT_EQ(bank.pushes(), pushes);
    EXPECT_EQ(bank.row_count(), expected.size() * subset);
    for (std::size_t s = 0; s < expected.size(); ++s) {
      const Tensor& slot = bank.slot(s);
      ASSERT_EQ(slot.dim(0), subset);
      std::set<std::size_t> rows;
      for (std::size_t r = 0; r < subset; ++r) {
        const double tag = slot.at(r * 2);
        EXPECT_EQ(slot.at(r * 2 + 1), -tag);
        const auto t = static_cast<std::size_t>(tag);
        EXPECT_EQ(t / 1000, static_cast<std::size_t>(expected[s]));
        EXPECT_LT(t % 1000, batch);
        rows.insert(t % 1000);
      }
      EXPECT_EQ(rows.size(), subset) << "subset drawn with replacement";
    }
  }
}

TEST(MemoryBank, SamplingDrawsStoredRows) {
  MemoryBank bank({.capacity = 3, .subset_size = 4, .push_frequency = 1});
  Rng rng(1);
  for (std::size_t id = 0; id < 5; ++id) bank.push(tagged_batch(id, 6), rng);
  std::set<double> stored;
  for (std::size_t s = 0; s < bank.slot_count(); ++s) {
    for (std::size_t r = 0; r < 4; ++r) stored.insert(bank.slot(s).at(r * 2));
  }
  ASSERT_EQ(stored.size(), 12u);

  // n <= stored rows: distinct rows.
  const PseudoBatch few = bank.sample(12, rng);
  EXPECT_EQ(few.source, SampleSource::memory_bank);
  std::set<double> seen;
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_TRUE(stored.contains(few.samples.at(i * 2)));
    seen.insert(few.samples.at(i * 2));
  }
  EXPECT_EQ(seen, stored);
  // n > stored rows: with replacement, still stored rows only.
  const PseudoBatch many = bank.sample(40, rng);
  EXPECT_EQ(many.size(), 40u);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_TRUE(stored.contains(many.samples.at(i * 2)));
}

TEST(MemoryBank, EmptyAndInvalidUse) {
  MemoryBank bank({.capacity = 2, .subset_size = 4, .push_frequency = 5});
  Rng rng(2);
  EXPECT_TRUE(bank.empty());
  EXPECT_THROW(bank.sample(3, rng), EmptyMemoryError);
  EXPECT_THROW(bank.push(tagged_batch(0, 3), rng), std::invalid_argument);
  bank.push(tagged_batch(0, 4), rng);
  EXPECT_THROW(bank.sample(0, rng), std::invalid_argument);
  EXPECT_FALSE(bank.push_due(4));
  EXPECT_TRUE(bank.push_due(5));
  EXPECT_TRUE(bank.push_due(10));
  EXPECT_THROW(MemoryBank({.capacity = 0}), std::invalid_argument);
}

TEST(RandomRowSubset, DistinctRowsOfTheSource) {
  Rng rng(3);
  const PseudoBatch x = tagged_batch(0, 10);
  const Tensor s = random_row_subset(x.samples, 10, rng);
  std::set<double> tags;
  for (std::size_t r = 0; r < 10; ++r) tags.insert(s.at(r * 2));
  EXPECT_EQ(tags.size(), 10u);
  EXPECT_THROW(random_row_subset(x.samples, 11, rng), std::invalid_argument);
}

TEST(GenerativeReplay, BudgetAndFrequency) {
  GenerativeReplay gr({2}, {.latent_dim = 3, .width = 8, .depth = 1, .lr = 0.01, .update_frequency = 2,
                            .max_steps = 3, .subset_size = 8},
                      4);
  Rng rng(5);
  const PseudoBatch x = tagged_batch(0, 16);
  EXPECT_TRUE(gr.empty());
  EXPECT_THROW(gr.sample(2, rng), EmptyMemoryError);

  // Odd epochs are not update epochs.
  gr.begin_block();
  EXPECT_FALSE(gr.train_step(1, x, nullptr, rng).trained);
  EXPECT_TRUE(gr.empty());

  for (std::size_t epoch = 2; epoch <= 6; epoch += 2) {
    for (int block = 0; block < 3; ++block) {
      gr.begin_block();
      std::size_t trained = 0;
      for (int attempt = 0; attempt < 7; ++attempt) {
        if (gr.train_step(epoch, x, nullptr, rng).trained) ++trained;
        EXPECT_LE(gr.steps_this_block(), 3u);
      }
      EXPECT_EQ(trained, 3u);
    }
  }
  EXPECT_EQ(gr.total_steps(), 27u);
  EXPECT_FALSE(gr.empty());
  const PseudoBatch s = gr.sample(5, rng);
  EXPECT_EQ(s.samples.shape(), (Shape{5, 2}));
  EXPECT_EQ(s.source, SampleSource::generative_replay);
  const Tensor pre = gr.sample_pre_norm(5, rng);
  for (double v : pre.values()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(GenerativeReplay, TrainingLowersTheElbo) {
  GenerativeReplay gr({2}, {.latent_dim = 2, .width = 16, .depth = 1, .lr = 0.02, .max_steps = 1000, .subset_size = 32},
                      6);
  Rng rng(7);
  Rng data_rng(8);
  const Tensor x = scale(nn::sample_noise(32, 2, data_rng), 0.5);
  const PseudoBatch batch(x, SampleSource::generator);
  Rng eval_a(9);
  const double before = gr.evaluate(x, eval_a).loss;
  gr.begin_block();
  for (int i = 0; i < 300; ++i) gr.train_step(1, batch, nullptr, rng);
  Rng eval_b(9);
  const double after = gr.evaluate(x, eval_b).loss;
  EXPECT_LT(after, before);
}

TEST(VaeKl, MatchesClosedForm) {
  const Tensor mu = Tensor::from({2, 2}, {0.5, -1.0, 0.0, 2.0});
  const Tensor lv = Tensor::from({2, 2}, {0.1, -0.3, 0.0, 0.7});
  double ref = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double m = mu.at(i), l = lv.at(i);
    ref += 0.5 * (m * m + std::exp(l) - 1.0 - l);
  }
  EXPECT_NEAR(vae_kl(mu, lv).item(), ref / 2.0, 1e-14);
  EXPECT_EQ(vae_kl(Tensor::zeros({3, 4}), Tensor::zeros({3, 4})).item(), 0.0);
  EXPECT_THROW(vae_kl(mu, Tensor::zeros({2, 3})), ShapeError);
}
