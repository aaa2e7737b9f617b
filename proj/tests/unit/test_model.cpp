#include <cmath>
#include <cstring>

#include "doctest.h"
#include "helpers.hpp"
#include "tornado/model.hpp"
#include "tornado/rng.hpp"

using namespace tornado;

namespace {

ExampleList random_examples(std::size_t n, std::size_t k, std::size_t d, Rng& rng) {
  ExampleList out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledExample ex;
    for (std::size_t j = 0; j < d; ++j) ex.features.push_back(rng.normal());
    ex.label = rng.below(k);
    out.push_back(ex);
  }
  return out;
}

// Reference loss written directly from the definition, without stabilization tricks shared with the library.
double reference_loss(const ModelParams& p, const ExampleList& data) {
  double total = 0.0;
  for (const auto& ex : data) {
    std::vector<double> z(p.num_classes());
    double zmax = -1e300;
    for (std::size_t c = 0; c < z.size(); ++c) {
      z[c] = p.bias(c);
      for (std::size_t j = 0; j < ex.features.size(); ++j) z[c] += p.weights_row(c)[j] * ex.features[j];
      zmax = std::max(zmax, z[c]);
    }
    double s = 0.0;
    for (double v : z) s += std::exp(v - zmax);
    total += zmax + std::log(s) - z[ex.label];
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("zero model loss is log K") {
    Rng rng(1);
    const auto data = random_examples(13, 2, 3, rng);
    CHECK(loss(ModelParams(2, 3), data) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const auto data10 = random_examples(13, 10, 3, rng);
    CHECK(loss(ModelParams(10, 3), data10) == doctest::Approx(2.302585093).epsilon(1e-9));
  }

  TEST_CASE("loss matches the reference and stays finite for huge logits") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const auto data = random_examples(9, 4, 5, rng);
      const auto p = random_model(4, 5, 2.0, 100 + trial);
      CHECK(loss(p, data) == doctest::Approx(reference_loss(p, data)).epsilon(1e-12));
      CHECK(loss(p, data) >= 0.0);
    }
    ModelParams big(2, 1, {1e4, -1e4, 0, 0});
    const ExampleList xs{{{1.0}, 1}};
    CHECK(std::isfinite(loss(big, xs)));
    CHECK(loss(big, xs) == doctest::Approx(2e4));
  }

  TEST_CASE("aligned classifier on separable data has tiny loss") {
    const auto fed = test::one_hot_nodes({0, 1, 2}, 3, 4);
    const auto data = fed.pooled();
    double scale = 1.0;
    auto scaled = [](double s) {
      ModelParams p(3, 3);
      for (std::size_t c = 0; c < 3; ++c) p.values()[c * 3 + c] = s;
      return p;
    };
    while (loss(scaled(scale), data) >= 0.01) scale *= 2.0;
    CHECK(scale < 100.0);
  }

  TEST_CASE("gradient matches central finite differences") {
    Rng rng(3);
    const double h = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t k = 2 + rng.below(4), d = 1 + rng.below(5);
      const auto data = random_examples(5 + rng.below(10), k, d, rng);
      auto p = random_model(k, d, 0.5, 200 + trial);
      const auto g = gradient(p, data);
      REQUIRE(g.size() == p.size());
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double saved = p.values()[j];
        p.values()[j] = saved + h;
        const double up = loss(p, data);
        p.values()[j] = saved - h;
        const double down = loss(p, data);
        p.values()[j] = saved;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[j]) / std::max(1.0, std::abs(g[j])));
      }
    }
    CHECK(worst < 1e-5);
  }

  TEST_CASE("gradient is invariant to duplicating the data") {
    Rng rng(4);
    auto data = random_examples(7, 3, 2, rng);
    const auto p = random_model(3, 2, 1.0, 5);
    const auto g = gradient(p, data);
    auto twice = data;
    twice.insert(twice.end(), data.begin(), data.end());
    const auto g2 = gradient(p, twice);
    for (std::size_t j = 0; j < g.size(); ++j) CHECK(g2[j] == doctest::Approx(g[j]).epsilon(1e-12));
  }

  TEST_CASE("weighted node gradients equal the pooled gradient") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<ExampleList> nodes;
      ExampleList pooled;
      for (int i = 0; i < 4; ++i) {
        nodes.push_back(random_examples(1 + rng.below(12), 3, 4, rng));
        pooled.insert(pooled.end(), nodes.back().begin(), nodes.back().end());
      }
      const auto p = random_model(3, 4, 1.0, trial);
      const auto g = gradient(p, pooled);
      std::vector<double> mix(g.size(), 0.0);
      for (const auto& node : nodes) {
        const auto gi = gradient(p, node);
        const double w = static_cast<double>(node.size()) / static_cast<double>(pooled.size());
        for (std::size_t j = 0; j < g.size(); ++j) mix[j] += w * gi[j];
      }
      for (std::size_t j = 0; j < g.size(); ++j) CHECK(std::abs(mix[j] - g[j]) < 1e-10);
    }
  }

  TEST_CASE("loss is convex along segments") {
    Rng rng(7);
    const auto data = random_examples(20, 4, 3, rng);
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = random_model(4, 3, 2.0, 1000 + trial);
      const auto q = random_model(4, 3, 2.0, 2000 + trial);
      const double lambda = rng.uniform();
      const double w[] = {lambda, 1.0 - lambda};
      const ModelParams pq[] = {p, q};
      CHECK(loss(weighted_average(std::span<const ModelParams>(pq), w), data) <=
            lambda * loss(p, data) + (1.0 - lambda) * loss(q, data) + 1e-9);
    }
  }

  TEST_CASE("gradient descent reaches a stationary point on overlapping data") {
    // Both labels at every point: the optimum is finite and unique up to logit shifts.
    ExampleList data{{{1.0}, 0}, {{1.0}, 1}, {{1.0}, 1}, {{-1.0}, 0}, {{-1.0}, 0}, {{-1.0}, 1}};
    ModelParams p(2, 1);
    for (int t = 0; t < 5000; ++t) p = sgd_step(p, data, 1.0);
    double norm = 0.0;
    for (double g : gradient(p, data)) norm += g * g;
    CHECK(std::sqrt(norm) < 1e-6);
  }

  TEST_CASE("sgd step semantics") {
    Rng rng(8);
    const auto data = random_examples(10, 3, 2, rng);
    const auto p = random_model(3, 2, 0.1, 9);
    CHECK(sgd_step(p, data, 0.0).bitwise_equal(p));
    const auto q = sgd_step(p, data, 0.03);
    CHECK(loss(q, data) < loss(p, data));
    const auto g = gradient(p, data);
    for (std::size_t j = 0; j < g.size(); ++j) CHECK(q.values()[j] == p.values()[j] - 0.03 * g[j]);
    const auto two = sgd_step(sgd_step(p, data, 0.03), data, 0.03);
    CHECK(two.bitwise_equal(sgd_step(q, data, 0.03)));
  }

  TEST_CASE("shape errors") {
    const ExampleList data{{{1.0, 2.0}, 0}};
    CHECK_THROWS_AS(loss(ModelParams(2, 3), data), std::invalid_argument);
    CHECK_THROWS_AS(gradient(ModelParams(2, 3), data), std::invalid_argument);
    CHECK_THROWS_AS(loss(ModelParams(2, 2), ExampleList{}), std::invalid_argument);
    CHECK_THROWS_AS(loss(ModelParams(2, 2), ExampleList{{{1.0, 2.0}, 4}}), std::invalid_argument);
    CHECK_THROWS_AS(ModelParams(2, 2, {1.0}), std::invalid_argument);
  }

  TEST_CASE("weighted average") {
    const ModelParams a(1, 2, {1, 2, 3}), b(1, 2, {10, 20, 30}), c(1, 2, {-5, 0, 5});
    const ModelParams three[] = {a, b, c};
    const double w[] = {0.2, 0.3, 0.5};
    const auto avg = weighted_average(std::span<const ModelParams>(three), w);
    CHECK(avg.values()[0] == doctest::Approx(0.2 * 1 + 0.3 * 10 - 0.5 * 5));
    CHECK(avg.values()[1] == doctest::Approx(0.4 + 6.0));
    CHECK(avg.values()[2] == doctest::Approx(0.6 + 9.0 + 2.5));

    const ModelParams two[] = {a, b};
    const double first[] = {1.0, 0.0};
    CHECK(weighted_average(std::span<const ModelParams>(two), first).bitwise_equal(a));

    const auto m = random_model(3, 4, 1.0, 11);
    const ModelParams same[] = {m, m, m};
    CHECK(weighted_average(std::span<const ModelParams>(same), w) == m);

    const ModelParams* ptrs[] = {&a, &b, &c};
    CHECK(weighted_average(std::span<const ModelParams* const>(ptrs), w) == avg);

    const double bad_sum[] = {0.5, 0.6};
    CHECK_THROWS_AS(weighted_average(std::span<const ModelParams>(two), bad_sum), std::invalid_argument);
    const double negative[] = {1.5, -0.5};
    CHECK_THROWS_AS(weighted_average(std::span<const ModelParams>(two), negative), std::invalid_argument);
    const ModelParams mixed[] = {a, ModelParams(2, 1)};
    CHECK_THROWS_AS(weighted_average(std::span<const ModelParams>(mixed), first), std::invalid_argument);
  }

  TEST_CASE("serialization is little-endian doubles") {
    const ModelParams p(1, 1, {1.0, -2.5});
    const auto bytes = p.serialize();
    REQUIRE(bytes.size() == 16);
    CHECK(p.byte_size() == 16);
    // 1.0 = 0x3FF0000000000000
    CHECK(bytes[7] == 0x3F);
    CHECK(bytes[6] == 0xF0);
    CHECK(bytes[0] == 0x00);
    CHECK(ModelParams::deserialize(bytes, 1, 1).bitwise_equal(p));
    CHECK_THROWS_AS(ModelParams::deserialize(bytes, 2, 1), std::invalid_argument);
    CHECK(model_bytes(10, 32) == 8 * (320 + 10));
  }

  TEST_CASE("bitwise equality tells signed zeros apart") {
    const ModelParams a(1, 1, {0.0, 1.0}), b(1, 1, {-0.0, 1.0});
    CHECK(a == b);
    CHECK_FALSE(a.bitwise_equal(b));
    CHECK(a.all_finite());
    CHECK_FALSE(ModelParams(1, 1, {INFINITY, 0.0}).all_finite());
  }

  TEST_CASE("prediction ties go to the lowest class") {
    CHECK(predict(ModelParams(3, 1), std::vector<double>{1.0}) == 0);
    const ModelParams p(3, 1, {0, 1, 1, 0, 0, 0});
    CHECK(predict(p, std::vector<double>{1.0}) == 1);
    CHECK(predict(p, std::vector<double>{-1.0}) == 0);
  }

  TEST_CASE("tally sums loss and correct predictions") {
    const ModelParams p(2, 1, {1, -1, 0, 0});
    const ExampleList xs{{{1.0}, 0}, {{-1.0}, 1}, {{2.0}, 1}};
    LossTally t;
    accumulate_tally(p, xs, t);
    CHECK(t.count == 3);
    CHECK(t.correct == 2);
    CHECK(t.mean_loss() == doctest::Approx(loss(p, xs)).epsilon(1e-12));
    CHECK(t.accuracy() == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("batch selection is a cyclic window") {
    ExampleList xs;
    for (std::size_t i = 0; i < 5; ++i) xs.push_back({{static_cast<double>(i)}, 0});
    Hyperparams h;
    CHECK(select_batch(xs, h, 3).size() == 5);
    h.minibatch = 2;
    const auto b = select_batch(xs, h, 2);  // starts at 4, wraps to 0
    REQUIRE(b.size() == 2);
    CHECK(b[0].features[0] == 4.0);
    CHECK(b[1].features[0] == 0.0);
    h.minibatch = 9;
    CHECK(select_batch(xs, h, 1).size() == 5);
  }

  TEST_CASE("hyperparameter validation") {
    Hyperparams h;
    CHECK_NOTHROW(h.validate());
    h.eta = 0.0;
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
    h.eta = 0.1;
    h.steps = 0;
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
  }

  TEST_CASE("random models are seeded") {
    CHECK(random_model(3, 2, 0.01, 4) == random_model(3, 2, 0.01, 4));
    CHECK_FALSE(random_model(3, 2, 0.01, 4) == random_model(3, 2, 0.01, 5));
    Rng a(derive_seed(1, "x")), b(derive_seed(1, "x"));
    CHECK(a.next_u64() == b.next_u64());
    CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
    CHECK(derive_seed(1, "x", 0) != derive_seed(1, "x", 1));
  }
}
