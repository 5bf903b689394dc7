#include <catch_amalgamated.hpp>

#include <cmath>

#include "dca/classifier.hpp"
#include "dca/core/rng.hpp"
#include "dca/metrics.hpp"

using namespace dca;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<Vec> random_set(int n, int d, std::uint64_t seed, double shift = 0.0) {
  Rng rng(seed);
  std::vector<Vec> out;
  for (int i = 0; i < n; ++i) out.push_back(rng.normal_vector(d).array() + shift);
  return out;
}

double naive_mmd2(const std::vector<Vec>& X, const std::vector<Vec>& Y, double sigma) {
  auto k = [&](const Vec& a, const Vec& b) { return std::exp(-(a - b).squaredNorm() / (2 * sigma * sigma)); };
  double xx = 0, yy = 0, xy = 0;
  for (const auto& a : X)
    for (const auto& b : X) xx += k(a, b);
  for (const auto& a : Y)
    for (const auto& b : Y) yy += k(a, b);
  for (const auto& a : X)
    for (const auto& b : Y) xy += k(a, b);
  const double n = static_cast<double>(X.size()), m = static_cast<double>(Y.size());
  return xx / (n * n) + yy / (m * m) - 2 * xy / (n * m);
}

double naive_knn(const std::vector<Vec>& G, const std::vector<Vec>& R, int k) {
  std::vector<double> kth;
  for (const auto& g : G) {
    std::vector<double> d;
    for (const auto& r : R) d.push_back((g - r).norm());
    std::sort(d.begin(), d.end());
    kth.push_back(d[static_cast<std::size_t>(k - 1)]);
  }
  // summed in ascending order, like the implementation
  std::sort(kth.begin(), kth.end());
  double sum = 0;
  for (double x : kth) sum += x;
  return sum / static_cast<double>(G.size());
}

Vec v1(double x) { return Vec::Constant(1, x); }

}  // namespace

TEST_CASE("mmd closed forms", "[metrics]") {
  const std::vector<Vec> X{v1(0.0)}, Y{v1(1.0)};
  CHECK_THAT(mmd2_rbf(X, Y, Bandwidth::fixed(1.0)), WithinAbs(2.0 - 2.0 * std::exp(-0.5), 1e-15));
  CHECK_THAT(mmd2_rbf(X, Y, Bandwidth::fixed(1.0)), WithinAbs(0.78693, 1e-5));
  const auto A = random_set(30, 2, 1);
  CHECK(mmd2_rbf(A, A) == 0.0);
  CHECK(mmd2_rbf(A, A, Bandwidth::fixed(0.3)) == 0.0);
  CHECK_THROWS_AS(mmd2_rbf({}, A), Error);
  CHECK_THROWS_AS(mmd2_rbf(random_set(3, 3, 1), A), Error);
}

TEST_CASE("mmd matches the double-loop oracle", "[metrics]") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto X = random_set(50, 2, 10 + s);
    const auto Y = random_set(50, 2, 20 + s, 0.5);
    for (double sigma : {0.5, 1.0, 3.0}) {
      const double got = mmd2_rbf(X, Y, Bandwidth::fixed(sigma));
      CHECK_THAT(got, WithinAbs(naive_mmd2(X, Y, sigma), 1e-10));
      CHECK(got == mmd2_rbf(Y, X, Bandwidth::fixed(sigma)));
    }
    const double med = median_heuristic(X, Y);
    CHECK_THAT(mmd2_rbf(X, Y), WithinAbs(naive_mmd2(X, Y, med), 1e-10));
  }
}

TEST_CASE("median heuristic", "[metrics]") {
  const std::vector<Vec> X{v1(0.0), v1(1.0)}, Y{v1(3.0)};
  CHECK(median_heuristic(X, Y) == 2.0);  // distances 1, 2, 3
  const std::vector<Vec> same{v1(1.0), v1(1.0)};
  CHECK(median_heuristic(same, same) == 1.0);
}

TEST_CASE("knn distance examples", "[metrics]") {
  const std::vector<Vec> ref{Vec{{0.0, 0.0}}, Vec{{1.0, 0.0}}, Vec{{3.0, 0.0}}};
  CHECK(knn_dist(std::vector<Vec>{Vec{{0.5, 0.0}}}, ref, 2) == 0.5);
  CHECK(knn_dist(ref, ref, 1) == 0.0);
  CHECK_THROWS_AS(knn_dist(ref, ref, 4), Error);
  CHECK_THROWS_AS(knn_dist(ref, ref, 0), Error);
  CHECK_THROWS_AS(knn_dist({}, ref, 1), Error);
}

TEST_CASE("knn distance matches the sort oracle", "[metrics]") {
  const auto G = random_set(100, 2, 3);
  const auto R = random_set(100, 2, 4, 0.3);
  for (int k : {1, 5, 10}) {
    CHECK(knn_dist(G, R, k) == naive_knn(G, R, k));
    const auto G50 = random_set(50, 3, 5), R50 = random_set(50, 3, 6);
    CHECK_THAT(knn_dist(G50, R50, k), WithinAbs(naive_knn(G50, R50, k), 1e-10));
  }
}

TEST_CASE("knn distance is translation invariant", "[metrics]") {
  const auto G = random_set(40, 2, 7);
  const auto R = random_set(60, 2, 8);
  Vec shift(2);
  shift << 3.7, -11.2;
  std::vector<Vec> Gs, Rs;
  for (const auto& g : G) Gs.push_back(g + shift);
  for (const auto& r : R) Rs.push_back(r + shift);
  for (int k : {1, 5, 10}) CHECK_THAT(knn_dist(Gs, Rs, k), WithinAbs(knn_dist(G, R, k), 1e-12));
}

TEST_CASE("image metrics closed forms", "[metrics]") {
  const std::vector<double> a{0.1, 0.4, 0.9, 0.3};
  const auto same = image_metrics(a, a, 1.0);
  CHECK(same.rmse == 0.0);
  CHECK(std::isinf(same.psnr));
  CHECK(same.psnr > 0.0);
  CHECK(same.ssim == 1.0);

  const std::vector<double> zero(16, 0.0), half(16, 0.5);
  const auto c = image_metrics(zero, half, 1.0);
  CHECK(c.rmse == 0.5);
  CHECK_THAT(c.psnr, WithinAbs(6.0206, 1e-4));
  CHECK_THAT(c.psnr, WithinAbs(10.0 * std::log10(4.0), 1e-12));

  CHECK_THROWS_AS(image_metrics(a, zero, 1.0), Error);
  CHECK_THROWS_AS(image_metrics({}, {}, 1.0), Error);
  CHECK_THROWS_AS(image_metrics(a, a, 0.0), Error);
}

TEST_CASE("image metrics match a straight-line reimplementation", "[metrics]") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const double L = trial % 2 ? 255.0 : 1.0;
    std::vector<double> a(64), b(64);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.uniform(0.0, L);
      b[i] = std::clamp(a[i] + rng.normal() * 0.1 * L, 0.0, L);
    }
    const auto m = image_metrics(a, b, L);

    const Eigen::Map<const Vec> A(a.data(), 64), B(b.data(), 64);
    const double mse = (A - B).squaredNorm() / 64.0;
    const double ma = A.mean(), mb = B.mean();
    const double va = (A.array() - ma).square().mean(), vb = (B.array() - mb).square().mean();
    const double cov = ((A.array() - ma) * (B.array() - mb)).mean();
    const double c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
    const double ssim = (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    CHECK_THAT(m.rmse, WithinAbs(std::sqrt(mse), 1e-12 * L));
    CHECK_THAT(m.psnr, WithinAbs(10.0 * std::log10(L * L / mse), 1e-12));
    CHECK_THAT(m.ssim, WithinAbs(ssim, 1e-12));
    CHECK_THAT(m.psnr, WithinAbs(20.0 * std::log10(L / m.rmse), 1e-10));
  }
}

TEST_CASE("Welch t-test", "[metrics]") {
  const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 3, 4, 5, 6};
  const auto r = t_test_ind(a, b);
  CHECK_THAT(r.t, WithinAbs(-1.0, 1e-12));
  CHECK_THAT(r.df, WithinAbs(8.0, 1e-12));
  CHECK_THAT(r.p, WithinAbs(0.347, 5e-4));
  const auto swapped = t_test_ind(b, a);
  CHECK(swapped.t == -r.t);
  CHECK(swapped.p == r.p);

  const auto same = t_test_ind(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);
  const std::vector<double> c1{2, 2, 2}, c2{3, 3};
  CHECK(t_test_ind(c1, c2).p == 0.0);
  CHECK(t_test_ind(c1, c1).p == 1.0);

  try {
    t_test_ind(std::vector<double>{1.0}, b);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::insufficient_sample);
  }
}

TEST_CASE("accuracy examples", "[metrics]") {
  Classifier uniform(Mlp(MlpSpec{{2, 2}, Activation::relu, 0}), 2);
  Dataset ds;
  ds.num_classes = 2;
  ds.dim = 2;
  ds.split = Split::test;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) ds.points.push_back({rng.normal_vector(2), i % 2});
  CHECK(accuracy(uniform, ds) == 0.5);  // exact ties go to class 0
  for (auto& p : ds.points) p.label = 0;
  CHECK(accuracy(uniform, ds) == 1.0);
}

TEST_CASE("metric report", "[metrics]") {
  const std::vector<double> one{0.4};
  const auto m1 = metric_over_trials(one, 10);
  CHECK_FALSE(m1.std.has_value());
  const std::vector<double> three{1.0, 2.0, 3.0};
  const auto m3 = metric_over_trials(three, 10);
  REQUIRE(m3.std.has_value());
  CHECK(*m3.std == 1.0);
  CHECK(m3.mean == 2.0);
  CHECK_THROWS_AS(metric_over_trials({}, 1), Error);

  MetricsReport rep;
  rep.set("mmd", m3);
  rep.set("acc", 0.9, 100);
  CHECK_THROWS_AS(rep.set("bad", 0.1, 0), Error);
  const auto j = rep.to_json();
  CHECK(j["metrics"]["mmd"].contains("std"));
  CHECK_FALSE(j["metrics"]["acc"].contains("std"));
  CHECK(j["metrics"]["acc"]["samples"] == 100);
}
