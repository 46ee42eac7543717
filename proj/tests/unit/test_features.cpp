#include "test_framework.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "fontdisent/error.hpp"
#include "fontdisent/features.hpp"
#include "test_support.hpp"

using namespace fontdisent;
namespace fs = std::filesystem;

namespace {

FeatureTable random_table(int fonts, int classes, int dim, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n;
  FeatureTable t;
  t.dim = dim;
  t.num_classes = classes;
  t.checkpoint_id = "ckpt" + std::to_string(seed);
  t.dataset_id = "data";
  for (int i = 0; i < fonts; ++i) t.font_names.push_back("f" + std::to_string(i));
  for (int i = 0; i < fonts; ++i) {
    for (int j = 0; j < classes; ++j) {
      FeatureRow r{i, j, std::vector<float>(dim), std::vector<float>(dim)};
      for (auto& v : r.style) v = n(rng);
      for (auto& v : r.content) v = n(rng);
      t.rows.push_back(std::move(r));
    }
  }
  return t;
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& values,
                  std::vector<std::vector<double>>& vectors) {
  const size_t n = a.size();
  vectors.assign(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) vectors[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (size_t p = 0; p < n; ++p)
      for (size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-26) break;
    for (size_t p = 0; p < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (size_t k = 0; k < n; ++k) {
          const double vkp = vectors[k][p], vkq = vectors[k][q];
          vectors[k][p] = c * vkp - s * vkq;
          vectors[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  values.resize(n);
  for (size_t i = 0; i < n; ++i) values[i] = a[i][i];
}

}  // namespace

TEST_CASE("feature table binary round trip") {
  const auto dir = testing::scratch_dir("features");
  const auto t = random_table(3, 5, 7, 1);
  save_table(dir / "t.bin", t);
  CHECK(fs::exists(index_path(dir / "t.bin")));
  const auto back = load_table(dir / "t.bin");
  CHECK(back == t);
  CHECK(back.find(2, 4).value() == 14);
  CHECK(!back.find(3, 0).has_value());
  CHECK(back.find_font("f1").value() == 1);
  CHECK(back.style_matrix().rows() == 15);
  CHECK(back.style_matrix()(14, 6) == static_cast<double>(t.rows[14].style[6]));
}

TEST_CASE("corrupt feature tables are rejected") {
  const auto dir = testing::scratch_dir("features_corrupt");
  const auto path = dir / "t.bin";
  save_table(path, random_table(2, 3, 4, 2));
  const auto size = fs::file_size(path);

  auto expect_corrupt = [&] {
    try {
      load_table(path);
      FAIL("expected CorruptFile");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::CorruptFile);
    }
  };
  fs::resize_file(path, size - 3);
  expect_corrupt();

  save_table(path, random_table(2, 3, 4, 2));
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << "x";
  }
  expect_corrupt();

  save_table(path, random_table(2, 3, 4, 2));
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    const std::uint32_t future = kFeatureTableVersion + 1;
    f.write(reinterpret_cast<const char*>(&future), sizeof future);
  }
  expect_corrupt();

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "not a table";
  }
  expect_corrupt();
}

TEST_CASE("extracted features are deterministic and tagged") {
  const auto m = testing::synthetic_matrix(2, 4, 16);
  ModelConfig c;
  c.image_size = 16;
  c.channels = {4, 8};
  c.feature_dim = 6;
  c.head_hidden = 8;
  auto net = init_params(1, c);
  const auto a = extract_features(net, m, "abc");
  const auto b = extract_features(net, m, "abc");
  CHECK(a == b);
  CHECK(a.rows.size() == 8);
  CHECK(a.dim == 6);
  CHECK(a.checkpoint_id == "abc");
  CHECK(a.dataset_id == dataset_id(m));
  CHECK(a.font_names == m.font_names());
  for (const auto& r : a.rows) {
    for (float v : r.style) CHECK(v >= 0.0f);
  }
}

TEST_CASE("PCA matches a Jacobi eigen-decomposition") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int dim = 2 + trial * 3;  // up to 29
    const int n = 3 * dim + 5;
    Eigen::MatrixXd x(n, dim);
    std::normal_distribution<double> g;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < dim; ++c) x(r, c) = g(rng) * (1.0 + c);
    const int k = std::min(dim, 3);
    const auto pca = fit_pca(x, k);

    std::vector<double> mean(dim, 0.0);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < dim; ++c) mean[c] += x(r, c) / n;
    std::vector<std::vector<double>> cov(dim, std::vector<double>(dim, 0.0));
    for (int r = 0; r < n; ++r)
      for (int a = 0; a < dim; ++a)
        for (int b = 0; b < dim; ++b) cov[a][b] += (x(r, a) - mean[a]) * (x(r, b) - mean[b]) / (n - 1);
    std::vector<double> values;
    std::vector<std::vector<double>> vectors;
    jacobi_eigen(cov, values, vectors);
    std::vector<int> order(dim);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });

    for (int c = 0; c < dim; ++c) CHECK(pca.mean(c) == doctest::Approx(mean[c]).epsilon(1e-10));
    for (int comp = 0; comp < k; ++comp) {
      const int e = order[comp];
      CHECK(pca.explained_variance(comp) == doctest::Approx(values[e]).epsilon(1e-8));
      double dot = 0.0;
      for (int c = 0; c < dim; ++c) dot += pca.axes(comp, c) * vectors[c][e];
      CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(pca.axes.row(comp).norm() == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("PCA of points on a line recovers the line") {
  Eigen::MatrixXd x(5, 3);
  for (int r = 0; r < 5; ++r) x.row(r) = Eigen::RowVector3d(1, 2, 3) + r * Eigen::RowVector3d(2, -1, 2);
  const auto pca = fit_pca(x, 1);
  const Eigen::RowVector3d dir = Eigen::RowVector3d(2, -1, 2) / 3.0;
  CHECK(pca.axes.row(0).isApprox(dir, 1e-12));  // sign convention: largest entry positive
  const auto z = project(pca, x);
  for (int r = 0; r < 5; ++r) CHECK(z(r, 0) == doctest::Approx(3.0 * (r - 2)).epsilon(1e-12));
  CHECK(pca.explained_variance(0) == doctest::Approx(9.0 * 2.5));
}

TEST_CASE("first principal axis maximises projected variance") {
  std::mt19937 rng(9);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(80, 6);
  for (int r = 0; r < 80; ++r)
    for (int c = 0; c < 6; ++c) x(r, c) = g(rng) * (c == 2 ? 3.0 : 1.0) + (c == 4 ? x(r, 2) : 0.0);
  const auto pca = fit_pca(x, 6);
  const Eigen::MatrixXd centered = x.rowwise() - pca.mean.transpose();
  const double best = (centered * pca.axes.row(0).transpose()).squaredNorm() / 79.0;
  CHECK(best == doctest::Approx(pca.explained_variance(0)));
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd u(6);
    for (int c = 0; c < 6; ++c) u(c) = g(rng);
    u.normalize();
    CHECK((centered * u).squaredNorm() / 79.0 <= best + 1e-9);
  }
  // Axes are orthonormal and the projection with all axes preserves distances.
  CHECK((pca.axes * pca.axes.transpose()).isApprox(Eigen::MatrixXd::Identity(6, 6), 1e-10));
  const auto z = project(pca, x);
  CHECK((z.row(3) - z.row(17)).norm() == doctest::Approx((x.row(3) - x.row(17)).norm()));
  CHECK(z.colwise().mean().norm() < 1e-10);
}

TEST_CASE("isotropic data has equal explained variance") {
  Eigen::MatrixXd x(4, 2);
  x << 1, 0, -1, 0, 0, 1, 0, -1;
  const auto pca = fit_pca(x, 2);
  CHECK(pca.explained_variance(0) == doctest::Approx(pca.explained_variance(1)));
  CHECK(pca.explained_variance(0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("PCA rejects degenerate input") {
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;  // sentinel: nothing was thrown
  };
  CHECK(kind_of([] { fit_pca(Eigen::MatrixXd::Ones(1, 3), 1); }) == ErrorKind::DegenerateInput);
  CHECK(kind_of([] { fit_pca(Eigen::MatrixXd::Ones(5, 3), 1); }) == ErrorKind::DegenerateInput);
  CHECK(kind_of([] { fit_pca(Eigen::MatrixXd::Random(5, 3), 4); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { fit_pca(Eigen::MatrixXd::Random(5, 3), 0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("scatter output") {
  const auto dir = testing::scratch_dir("scatter");
  CHECK_THROWS_AS(emit_scatter({}, 1, 1, dir), Error);
  const auto t = random_table(3, 4, 5, 4);
  const auto files = visualize_table(t, dir);
  CHECK(fs::exists(files.by_font));
  CHECK(fs::exists(files.by_class));
  std::ifstream csv(files.coordinates);
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 1 + 12);
}

TEST_CASE("projection identities") {
  std::mt19937 rng(12);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(40, 5);
  for (int r = 0; r < 40; ++r)
    for (int c = 0; c < 5; ++c) x(r, c) = g(rng) * (5 - c);
  const auto pca = fit_pca(x, 3);

  CHECK(project(pca, pca.mean.transpose()).norm() < 1e-12);
  const Eigen::RowVectorXd unit = pca.axes.row(0) + pca.mean.transpose();
  const auto z = project(pca, unit);
  CHECK(z(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(z(0, 1)) < 1e-12);
  CHECK(std::abs(z(0, 2)) < 1e-12);

  // What the retained axes cannot express is orthogonal to all of them.
  const Eigen::MatrixXd coords = project(pca, x);
  const Eigen::MatrixXd rebuilt = (coords * pca.axes).rowwise() + pca.mean.transpose();
  const Eigen::MatrixXd residual = x - rebuilt;
  CHECK((residual * pca.axes.transpose()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("isotropic cloud has a flat spectrum") {
  std::mt19937 rng(13);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(10000, 4);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < 4; ++c) x(r, c) = g(rng);
  const auto pca = fit_pca(x, 4);
  // Sampling error of a unit variance over 1e4 draws is about 0.014.
  CHECK(pca.explained_variance.maxCoeff() - pca.explained_variance.minCoeff() < 0.1);
  CHECK(pca.explained_variance.mean() == doctest::Approx(1.0).epsilon(0.05));
}
