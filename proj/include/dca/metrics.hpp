#pragma once

// Distribution and image-style metrics: RBF-kernel MMD^2, mean k-NN
// distance, PSNR / SSIM / RMSE, and Welch's t-test.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "dca/core/error.hpp"
#include "dca/core/text.hpp"

namespace dca {

using Vec = Eigen::VectorXd;

using PointSet = std::vector<Vec>;

// Pass Bandwidth::median() to use the median pairwise distance over X u Y.
struct Bandwidth {
  double sigma = 0.0;
  static Bandwidth fixed(double s) { return {s}; }
  static Bandwidth median() { return {0.0}; }
  bool is_median() const { return sigma <= 0.0; }
};

namespace detail {

inline void check_point_sets(std::span<const Vec> X, std::span<const Vec> Y) {
  require(!X.empty() && !Y.empty(), Errc::empty_input, "MMD needs two nonempty point sets");
  const auto d = X.front().size();
  for (const auto& x : X) require(x.size() == d, Errc::dimension_mismatch, "point set dimension");
  for (const auto& y : Y) require(y.size() == d, Errc::dimension_mismatch, "point set dimension");
}

// Sum after sorting: the result does not depend on the order of the terms.
inline double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline double kernel_mean(std::span<const Vec> A, std::span<const Vec> B, double sigma) {
  std::vector<double> k;
  k.reserve(A.size() * B.size());
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& a : A)
    for (const auto& b : B) k.push_back(std::exp(-(a - b).squaredNorm() * inv));
  return sorted_sum(k) / static_cast<double>(A.size() * B.size());
}

}  // namespace detail

inline double median_heuristic(std::span<const Vec> X, std::span<const Vec> Y) {
  std::vector<const Vec*> all;
  for (const auto& x : X) all.push_back(&x);
  for (const auto& y : Y) all.push_back(&y);
  std::vector<double> d;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) d.push_back((*all[i] - *all[j]).norm());
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const double med = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
  return med > 0.0 ? med : 1.0;
}

inline double resolve_bandwidth(std::span<const Vec> X, std::span<const Vec> Y, Bandwidth bw) {
  return bw.is_median() ? median_heuristic(X, Y) : bw.sigma;
}

// Biased (V-statistic) estimate: mean k(X,X) + mean k(Y,Y) - 2 mean k(X,Y),
// k(a, b) = exp(-|a - b|^2 / (2 sigma^2)).
inline double mmd2_rbf(std::span<const Vec> X, std::span<const Vec> Y, Bandwidth bw = Bandwidth::median()) {
  detail::check_point_sets(X, Y);
  const double sigma = resolve_bandwidth(X, Y, bw);
  return detail::kernel_mean(X, X, sigma) + detail::kernel_mean(Y, Y, sigma) - 2.0 * detail::kernel_mean(X, Y, sigma);
}

// Mean over generated points of the distance to the k-th nearest reference.
inline double knn_dist(std::span<const Vec> generated, std::span<const Vec> reference, int k) {
  require(k >= 1, Errc::invalid_argument, "k must be >= 1");
  require(reference.size() >= static_cast<std::size_t>(k), Errc::insufficient_sample,
          "need at least k reference points");
  require(!generated.empty(), Errc::empty_input, "no generated points");
  std::vector<double> d(reference.size());
  std::vector<double> kth;
  kth.reserve(generated.size());
  for (const auto& g : generated) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      require(reference[j].size() == g.size(), Errc::dimension_mismatch, "point set dimension");
      d[j] = (g - reference[j]).norm();
    }
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    kth.push_back(d[static_cast<std::size_t>(k - 1)]);
  }
  return detail::sorted_sum(kth) / static_cast<double>(generated.size());
}

struct ImageMetrics {
  double psnr = 0.0;  // +inf when the inputs are identical
  double ssim = 0.0;
  double rmse = 0.0;
};

// Global single-window SSIM with c1 = (0.01 L)^2, c2 = (0.03 L)^2.
inline ImageMetrics image_metrics(std::span<const double> a, std::span<const double> b, double max_val) {
  require(a.size() == b.size(), Errc::dimension_mismatch, "image metrics need equal lengths");
  require(!a.empty(), Errc::empty_input, "image metrics of empty rasters");
  require(max_val > 0.0, Errc::invalid_argument, "max_val must be > 0");
  const double n = static_cast<double>(a.size());
  double mse = 0.0, mu_a = 0.0, mu_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mse += (a[i] - b[i]) * (a[i] - b[i]);
    mu_a += a[i];
    mu_b += b[i];
  }
  mse /= n;
  mu_a /= n;
  mu_b /= n;
  double var_a = 0.0, var_b = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    var_a += (a[i] - mu_a) * (a[i] - mu_a);
    var_b += (b[i] - mu_b) * (b[i] - mu_b);
    cov += (a[i] - mu_a) * (b[i] - mu_b);
  }
  var_a /= n;
  var_b /= n;
  cov /= n;
  const double c1 = (0.01 * max_val) * (0.01 * max_val);
  const double c2 = (0.03 * max_val) * (0.03 * max_val);
  ImageMetrics m;
  m.rmse = std::sqrt(mse);
  m.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(max_val * max_val / mse);
  m.ssim = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
  return m;
}

struct TTest {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};

// Welch's two-sample t-test, two-sided, Welch-Satterthwaite degrees of
// freedom.
inline TTest t_test_ind(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, Errc::insufficient_sample, "t-test needs at least two values per sample");
  auto moments = [](std::span<const double> x, double& mean, double& var) {
    mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size() - 1);
  };
  double ma, va, mb, vb;
  moments(a, ma, va);
  moments(b, mb, vb);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  TTest r;
  const double se2 = sa + sb;
  if (se2 == 0.0) {
    // both samples constant
    r.t = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    r.p = ma == mb ? 1.0 : 0.0;
    r.df = na + nb - 2.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p = r.t == 0.0 ? 1.0 : std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

// ---------------------------------------------------------------------------
// Report

struct Metric {
  double mean = 0.0;
  std::optional<double> std;  // present iff trials > 1
  int trials = 1;
  long long samples = 0;
};

inline Metric metric_over_trials(std::span<const double> values, long long samples) {
  require(!values.empty(), Errc::empty_input, "metric over zero trials");
  Metric m;
  m.trials = static_cast<int>(values.size());
  m.samples = samples;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

struct MetricsReport {
  std::map<std::string, Metric> metrics;
  nlohmann::json metadata = nlohmann::json::object();

  void set(const std::string& name, double value, long long samples) {
    require(samples > 0, Errc::empty_input, "metric '" + name + "' over zero samples");
    metrics[name] = Metric{value, std::nullopt, 1, samples};
  }

  void set(const std::string& name, const Metric& m) {
    require(m.samples > 0, Errc::empty_input, "metric '" + name + "' over zero samples");
    metrics[name] = m;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["metadata"] = metadata;
    auto& out = j["metrics"] = nlohmann::json::object();
    for (const auto& [name, m] : metrics) {
      nlohmann::json e{{"mean", m.mean}, {"trials", m.trials}, {"samples", m.samples}};
      if (m.std) e["std"] = *m.std;
      if (!std::isfinite(m.mean)) e["mean"] = format_double(m.mean);
      out[name] = e;
    }
    return j;
  }

  std::string to_csv(const std::string& provenance = {}) const {
    std::string out;
    if (!provenance.empty()) out += "# " + provenance + "\n";
    out += "metric,mean,std,trials,samples\n";
    for (const auto& [name, m] : metrics)
      out += name + "," + format_double(m.mean) + "," + (m.std ? format_double(*m.std) : std::string()) + "," +
             std::to_string(m.trials) + "," + std::to_string(m.samples) + "\n";
    return out;
  }
};

}  // namespace dca
