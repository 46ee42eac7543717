#include "test_framework.hpp"

#include <cmath>
#include <random>

#include "fontdisent/error.hpp"
#include "fontdisent/losses.hpp"

using namespace fontdisent;
using namespace fontdisent::losses;

namespace {

using Rows = std::vector<std::vector<double>>;

torch::Tensor to_tensor(const Rows& rows) {
  auto t = torch::empty({static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows[0].size())}, torch::kFloat64);
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) t[r][c] = rows[r][c];
  }
  return t;
}

torch::Tensor ids_tensor(const std::vector<int64_t>& ids) { return torch::tensor(ids, torch::kInt64); }

/// Mean over rows of the squared distance to the row's group average.
double naive_variance(const Rows& feats, const std::vector<int64_t>& ids, const Rows& avgs) {
  double total = 0.0;
  for (size_t r = 0; r < feats.size(); ++r) {
    double sq = 0.0;
    for (size_t d = 0; d < feats[r].size(); ++d) {
      const double diff = feats[r][d] - avgs[ids[r]][d];
      sq += diff * diff;
    }
    total += sq;
  }
  return total / static_cast<double>(feats.size());
}

double naive_mae(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s / static_cast<double>(a.size());
}

double naive_ce(const Rows& probs, const std::vector<int64_t>& labels) {
  double s = 0.0;
  for (size_t r = 0; r < probs.size(); ++r) {
    const double p = std::min(std::max(probs[r][labels[r]], kProbabilityClamp), 1.0 - kProbabilityClamp);
    s -= std::log(p);
  }
  return s / static_cast<double>(probs.size());
}

Rows random_rows(std::mt19937_64& rng, int n, int d, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Rows rows(n, std::vector<double>(d));
  for (auto& row : rows) {
    for (auto& v : row) v = g(rng);
  }
  return rows;
}

AverageFeatureTable table(const Rows& style, const Rows& content) {
  AverageFeatureTable t;
  t.style = to_tensor(style);
  t.content = to_tensor(content);
  return t;
}

double value(const torch::Tensor& t) { return t.item<double>(); }

}  // namespace

TEST_CASE("variance losses match the double-loop oracle on random inputs") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const int fonts = 2 + trial % 5, classes = 3 + trial % 7, dim = 1 + trial % 17, batch = 1 + trial % 23;
    const auto style_avgs = random_rows(rng, fonts, dim), content_avgs = random_rows(rng, classes, dim);
    const auto style = random_rows(rng, batch, dim, 2.0), content = random_rows(rng, batch, dim, 2.0);
    std::vector<int64_t> font_ids(batch), class_ids(batch);
    for (int b = 0; b < batch; ++b) font_ids[b] = rng() % fonts, class_ids[b] = rng() % classes;
    const auto avgs = table(style_avgs, content_avgs);

    REQUIRE(value(style_variance_loss(to_tensor(style), ids_tensor(font_ids), avgs)) ==
            doctest::Approx(naive_variance(style, font_ids, style_avgs)).epsilon(1e-12));
    REQUIRE(value(content_variance_loss(to_tensor(content), ids_tensor(class_ids), avgs)) ==
            doctest::Approx(naive_variance(content, class_ids, content_avgs)).epsilon(1e-12));
    REQUIRE(std::abs(value(style_variance_loss(to_tensor(style), ids_tensor(font_ids), avgs)) -
                     naive_variance(style, font_ids, style_avgs)) < 1e-9);
  }
}

TEST_CASE("image and classification losses match naive loops on random inputs") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int batch = 1 + trial % 9, pixels = 16;
    std::vector<double> a(batch * pixels), b(batch * pixels);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const auto ta = torch::tensor(a, torch::kFloat64).view({batch, 1, 4, 4});
    const auto tb = torch::tensor(b, torch::kFloat64).view({batch, 1, 4, 4});
    REQUIRE(std::abs(value(reconstruction_loss(ta, tb)) - naive_mae(a, b)) < 1e-9);
    REQUIRE(value(transfer_loss(ta, tb)) == value(reconstruction_loss(ta, tb)));

    const int classes = 2 + trial % 25;
    Rows probs(batch, std::vector<double>(classes));
    std::vector<int64_t> labels(batch);
    for (int r = 0; r < batch; ++r) {
      double sum = 0.0;
      for (auto& v : probs[r]) sum += (v = std::pow(u(rng), 4));
      for (auto& v : probs[r]) v /= sum;
      labels[r] = rng() % classes;
    }
    if (trial % 10 == 0) probs[0].assign(classes, 0.0), probs[0][labels[0]] = 1.0;
    REQUIRE(std::abs(value(classification_loss(to_tensor(probs), ids_tensor(labels))) - naive_ce(probs, labels)) <
            1e-9);
  }
}

TEST_CASE("style variance examples") {
  const auto avgs = table({{0.0, 0.0, 0.0}}, {{0.0, 0.0, 0.0}});
  CHECK(value(style_variance_loss(to_tensor({{1.0, 0.0, 0.0}, {-1.0, 0.0, 0.0}}), ids_tensor({0, 0}), avgs)) == 1.0);
  const auto at_avg = table({{0.5, 1.5}, {2.0, -1.0}}, {{0.0, 0.0}});
  CHECK(value(style_variance_loss(to_tensor({{2.0, -1.0}, {0.5, 1.5}}), ids_tensor({1, 0}), at_avg)) == 0.0);

  std::mt19937_64 rng(3);
  const auto feats = random_rows(rng, 6, 4), means = random_rows(rng, 2, 4);
  const std::vector<int64_t> ids{0, 1, 1, 0, 1, 0};
  const auto base = value(style_variance_loss(to_tensor(feats), ids_tensor(ids), table(means, means)));
  const double c = 3.0;
  auto scaled = to_tensor(feats) * c;
  AverageFeatureTable t2;
  t2.style = to_tensor(means) * c;
  t2.content = t2.style;
  CHECK(value(style_variance_loss(scaled, ids_tensor(ids), t2)) == doctest::Approx(c * c * base).epsilon(1e-12));
}

TEST_CASE("content variance examples") {
  const auto avgs = table({{0.0, 0.0}}, {{0.0, 0.0}, {1.0, 1.0}});
  CHECK(value(content_variance_loss(to_tensor({{0.0, 0.0}, {1.0, 1.0}}), ids_tensor({0, 1}), avgs)) == 0.0);
  // Each feature sits at distance 2 from its class average.
  CHECK(value(content_variance_loss(to_tensor({{2.0, 0.0}, {1.0, -1.0}}), ids_tensor({0, 1}), avgs)) == 4.0);
  const auto x = to_tensor({{0.3, 0.1}, {2.0, -4.0}, {0.7, 0.2}});
  const auto perm = torch::tensor(std::vector<int64_t>{2, 0, 1});
  const auto ids = ids_tensor({0, 1, 1});
  CHECK(value(content_variance_loss(x, ids, avgs)) ==
        doctest::Approx(value(content_variance_loss(x.index_select(0, perm), ids.index_select(0, perm), avgs))));
}

TEST_CASE("variance loss errors") {
  const auto avgs = table({{0.0, 0.0}}, {{0.0, 0.0}});
  try {
    style_variance_loss(to_tensor({{1.0, 1.0}}), ids_tensor({3}), avgs);
    FAIL("expected UnknownFont");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownFont);
  }
  try {
    style_variance_loss(to_tensor({{1.0, 1.0}}), ids_tensor({0}), AverageFeatureTable{});
    FAIL("expected MissingAverages");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingAverages);
  }
  CHECK_THROWS_AS(content_variance_loss(to_tensor({{1.0, 1.0, 1.0}}), ids_tensor({0}), avgs), Error);
}

TEST_CASE("reconstruction and transfer examples") {
  const auto ones = torch::ones({2, 1, 4, 4}, torch::kFloat64), zeros = torch::zeros({2, 1, 4, 4}, torch::kFloat64);
  CHECK(value(reconstruction_loss(ones, ones)) == 0.0);
  CHECK(value(reconstruction_loss(ones, zeros)) == 1.0);
  auto half = torch::zeros({1, 1, 4, 4}, torch::kFloat64);
  half.narrow(2, 0, 2).fill_(1.0);
  CHECK(value(reconstruction_loss(half, torch::full({1, 1, 4, 4}, 0.5, torch::kFloat64))) == 0.5);
  CHECK(value(transfer_loss(ones, ones)) == 0.0);
  CHECK(value(transfer_loss(zeros + 0.5, zeros + 0.75)) == 0.25);
  try {
    reconstruction_loss(ones, torch::ones({2, 1, 4, 5}));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("classification loss examples") {
  const auto uniform = torch::full({3, 26}, 1.0 / 26.0, torch::kFloat64);
  CHECK(value(classification_loss(uniform, ids_tensor({0, 5, 25}))) == doctest::Approx(std::log(26.0)).epsilon(1e-12));
  CHECK(std::log(26.0) == doctest::Approx(3.2581).epsilon(1e-4));
  auto half = torch::zeros({1, 4}, torch::kFloat64);
  half[0][1] = 0.5, half[0][2] = 0.5;
  CHECK(value(classification_loss(half, ids_tensor({1}))) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto onehot = torch::zeros({1, 4}, torch::kFloat64);
  onehot[0][3] = 1.0;
  CHECK(value(classification_loss(onehot, ids_tensor({3}))) == doctest::Approx(1e-7).epsilon(1e-3));
  CHECK(value(classification_loss(onehot, ids_tensor({3}))) >= 0.0);

  auto bad = torch::full({1, 4}, 0.3, torch::kFloat64);
  try {
    classification_loss(bad, ids_tensor({0}));
    FAIL("expected InvalidDistribution");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidDistribution);
  }
  auto negative = torch::tensor(std::vector<double>{1.5, -0.5}, torch::kFloat64).view({1, 2});
  CHECK_THROWS_AS(classification_loss(negative, ids_tensor({0})), Error);
}

TEST_CASE("combined objectives") {
  const LossWeights w;
  CHECK(w.lambda_cls == 0.001);
  CHECK(w.lambda_style == 1.0);
  CHECK(w.lambda_content == 1.0);
  CHECK(pretrain_loss(0.0, 0.0, 0.0, w) == 0.0);
  CHECK(pretrain_loss(0.2, 0.3, 1.0, w) == doctest::Approx(0.501).epsilon(1e-12));
  CHECK(pretrain_loss(0.2, 0.3, 7.0, LossWeights{0.0, 1.0, 1.0}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(finetune_loss(0.0, 0.0, 0.0, 0.0, w) == 0.0);
  CHECK(finetune_loss(0.1, 1.0, 0.2, 0.3, w) == doctest::Approx(0.601).epsilon(1e-12));
  const double base = finetune_loss(0.1, 1.0, 0.2, 0.3, w);
  const double doubled = finetune_loss(0.1, 1.0, 0.2, 0.3, LossWeights{0.001, 2.0, 1.0});
  CHECK(doubled - base == doctest::Approx(0.2).epsilon(1e-12));
  const auto t = pretrain_loss(torch::tensor(0.2), torch::tensor(0.3), torch::tensor(1.0), w);
  CHECK(t.item<double>() == doctest::Approx(0.501).epsilon(1e-6));
}
