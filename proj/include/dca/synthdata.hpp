#pragma once

// Synthetic ordinal datasets ("grade chains") with exact mixture oracles, and
// the latent codec that maps between data space and the latent space the SDE
// walks in.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dca/core/error.hpp"
#include "dca/core/rng.hpp"
#include "dca/core/text.hpp"

namespace dca {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct LabeledPoint {
  Vec z;
  int label = 0;
};

struct Dataset {
  std::vector<LabeledPoint> points;
  int num_classes = 0;
  int dim = 0;
  Split split = Split::train;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  std::vector<std::size_t> indices_of(int label) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (points[i].label == label) idx.push_back(i);
    return idx;
  }

  std::vector<Vec> vectors_of(int label) const {
    std::vector<Vec> out;
    for (const auto& p : points)
      if (p.label == label) out.push_back(p.z);
    return out;
  }

  std::vector<int> class_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    for (const auto& p : points) ++counts[static_cast<std::size_t>(p.label)];
    return counts;
  }
};

inline void validate(const Dataset& ds) {
  require(ds.dim >= 2, Errc::invalid_argument, "dataset dimension must be >= 2");
  for (const auto& p : ds.points) {
    require(p.z.size() == ds.dim, Errc::dimension_mismatch, "point dimension differs from dataset dimension");
    require(p.label >= 0 && p.label < ds.num_classes, Errc::invalid_argument, "label outside 0..K-1");
    require(p.z.allFinite(), Errc::non_finite, "non-finite coordinate in dataset");
  }
  if (ds.split == Split::train) {
    const auto counts = ds.class_counts();
    for (std::size_t k = 0; k < counts.size(); ++k)
      require(counts[k] > 0, Errc::degenerate_dataset, "class " + std::to_string(k) + " absent from train split");
  }
}

// ---------------------------------------------------------------------------
// Mixture oracle

struct GmmComponent {
  Vec mean;
  double variance = 1.0;  // isotropic
  double weight = 1.0;    // within its class
};

class GmmOracle {
 public:
  GmmOracle() = default;
  GmmOracle(std::vector<std::vector<GmmComponent>> classes, std::vector<double> priors)
      : classes_(std::move(classes)), priors_(std::move(priors)) {
    require(!classes_.empty() && classes_.size() == priors_.size(), Errc::invalid_argument,
            "oracle needs one prior per class");
    dim_ = static_cast<int>(classes_.front().front().mean.size());
    double prior_sum = 0.0;
    for (std::size_t k = 0; k < classes_.size(); ++k) {
      require(!classes_[k].empty(), Errc::invalid_argument, "class without components");
      double wsum = 0.0;
      for (const auto& c : classes_[k]) {
        require(c.variance > 0.0, Errc::invalid_argument, "component variance must be > 0");
        require(c.mean.size() == dim_, Errc::dimension_mismatch, "component mean dimension");
        wsum += c.weight;
      }
      require(std::abs(wsum - 1.0) <= 1e-12, Errc::invalid_argument, "mixture weights must sum to 1");
      require(priors_[k] > 0.0, Errc::invalid_argument, "class prior must be > 0");
      prior_sum += priors_[k];
    }
    require(std::abs(prior_sum - 1.0) <= 1e-12, Errc::invalid_argument, "class priors must sum to 1");
  }

  int dim() const { return dim_; }
  int num_classes() const { return static_cast<int>(classes_.size()); }
  const std::vector<GmmComponent>& components(int k) const { return classes_.at(static_cast<std::size_t>(k)); }
  double prior(int k) const { return priors_.at(static_cast<std::size_t>(k)); }

  Vec class_mean(int k) const {
    Vec m = Vec::Zero(dim_);
    for (const auto& c : components(k)) m += c.weight * c.mean;
    return m;
  }

  // Log-density of the class-marginalized mixture.
  double log_density(const Vec& z) const {
    check_dim(z);
    std::vector<double> terms;
    log_terms(z, terms);
    const double m = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (double t : terms) s += std::exp(t - m);
    return m + std::log(s);
  }

  // Closed-form grad_z log p(z): responsibility-weighted (mu - z) / var.
  Vec score(const Vec& z) const {
    check_dim(z);
    std::vector<double> terms;
    log_terms(z, terms);
    const double m = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(m)) fail(Errc::numeric_underflow, "all mixture responsibilities underflow");
    double norm = 0.0;
    for (double& t : terms) norm += (t = std::exp(t - m));
    Vec s = Vec::Zero(dim_);
    std::size_t j = 0;
    for (const auto& cls : classes_)
      for (const auto& c : cls) s += (terms[j++] / norm) * (c.mean - z) / c.variance;
    return s;
  }

  // Class posterior p(k | z).
  Vec posterior(const Vec& z) const {
    check_dim(z);
    std::vector<double> terms;
    log_terms(z, terms);
    Vec lp(num_classes());
    std::size_t j = 0;
    for (std::size_t k = 0; k < classes_.size(); ++k) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < classes_[k].size(); ++c) m = std::max(m, terms[j + c]);
      double s = 0.0;
      for (std::size_t c = 0; c < classes_[k].size(); ++c) s += std::exp(terms[j + c] - m);
      lp[static_cast<Eigen::Index>(k)] = m + std::log(s);
      j += classes_[k].size();
    }
    const double m = lp.maxCoeff();
    Vec p = (lp.array() - m).exp();
    return p / p.sum();
  }

  // Marginal of z_t = sqrt(abar) z_0 + sqrt(1 - abar) eps, itself a mixture.
  GmmOracle diffused(double alpha_bar) const {
    auto classes = classes_;
    for (auto& cls : classes)
      for (auto& c : cls) {
        c.mean *= std::sqrt(alpha_bar);
        c.variance = alpha_bar * c.variance + (1.0 - alpha_bar);
      }
    return GmmOracle(std::move(classes), priors_);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dim"] = dim_;
    j["priors"] = priors_;
    auto& arr = j["classes"] = nlohmann::json::array();
    for (const auto& cls : classes_) {
      auto comps = nlohmann::json::array();
      for (const auto& c : cls)
        comps.push_back({{"mean", std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size())},
                         {"variance", c.variance},
                         {"weight", c.weight}});
      arr.push_back(comps);
    }
    return j;
  }

  static GmmOracle from_json(const nlohmann::json& j) {
    std::vector<std::vector<GmmComponent>> classes;
    for (const auto& cls : j.at("classes")) {
      auto& out = classes.emplace_back();
      for (const auto& c : cls) {
        const auto mean = c.at("mean").get<std::vector<double>>();
        out.push_back({Eigen::Map<const Vec>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                       c.at("variance").get<double>(), c.at("weight").get<double>()});
      }
    }
    return GmmOracle(std::move(classes), j.at("priors").get<std::vector<double>>());
  }

 private:
  void check_dim(const Vec& z) const {
    require(z.size() == dim_, Errc::dimension_mismatch, "oracle query dimension");
  }

  void log_terms(const Vec& z, std::vector<double>& terms) const {
    terms.clear();
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < classes_.size(); ++k)
      for (const auto& c : classes_[k])
        terms.push_back(std::log(priors_[k]) + std::log(c.weight) - 0.5 * (z - c.mean).squaredNorm() / c.variance -
                        0.5 * dim_ * std::log(c.variance) - dim_ * half_log_2pi);
  }

  std::vector<std::vector<GmmComponent>> classes_;
  std::vector<double> priors_;
  int dim_ = 0;
};

inline Vec oracle_score(const GmmOracle& oracle, const Vec& z) { return oracle.score(z); }

// ---------------------------------------------------------------------------
// Grade chain generator

struct GradeChainSpec {
  int num_classes = 5;
  int dim = 2;
  int n_per_class = 1000;
  double spread = 0.4;
  std::uint64_t seed = 0;
  double step = 2.0;                  // arc length between adjacent class means
  double bend = std::numbers::pi / 2;  // total turning angle of the arc, radians
  std::vector<double> spacing;        // K-1 multipliers on `step`; empty = all 1
  std::vector<double> spread_scale;   // K multipliers on `spread`; empty = all 1
  std::vector<double> count_scale;    // K multipliers on `n_per_class`; empty = all 1
};

namespace detail {
inline double entry_or_one(const std::vector<double>& v, std::size_t i) { return v.empty() ? 1.0 : v.at(i); }
}  // namespace detail

inline std::vector<int> class_sizes(const GradeChainSpec& spec, int n_per_class) {
  std::vector<int> counts;
  for (int k = 0; k < spec.num_classes; ++k)
    counts.push_back(std::max(1, static_cast<int>(std::lround(n_per_class * detail::entry_or_one(spec.count_scale, k)))));
  return counts;
}

// Class means on a circular arc in the first two coordinates, centred at the
// origin; the arc turns through `bend` radians in total. Chord length is
// monotone in arc length up to a half turn, so adjacent classes are nearest
// neighbours in mean space.
inline GmmOracle make_grade_chain_oracle(const GradeChainSpec& spec) {
  require(spec.num_classes >= 2, Errc::invalid_argument, "grade chain needs K >= 2");
  require(spec.dim >= 2, Errc::invalid_argument, "grade chain needs d >= 2");
  require(spec.n_per_class >= 1, Errc::invalid_argument, "n_per_class must be >= 1");
  require(spec.spread > 0.0 && std::isfinite(spec.spread), Errc::invalid_argument, "spread must be > 0");
  require(spec.step > 0.0, Errc::invalid_argument, "step must be > 0");
  require(spec.bend > 0.0 && spec.bend <= std::numbers::pi, Errc::invalid_argument, "bend must lie in (0, pi]");
  const auto K = static_cast<std::size_t>(spec.num_classes);
  require(spec.spacing.empty() || spec.spacing.size() == K - 1, Errc::invalid_argument, "spacing needs K-1 entries");
  require(spec.spread_scale.empty() || spec.spread_scale.size() == K, Errc::invalid_argument,
          "spread_scale needs K entries");
  require(spec.count_scale.empty() || spec.count_scale.size() == K, Errc::invalid_argument,
          "count_scale needs K entries");

  std::vector<double> arc(K, 0.0);
  for (std::size_t k = 1; k < K; ++k) {
    const double m = detail::entry_or_one(spec.spacing, k - 1);
    require(m > 0.0, Errc::invalid_argument, "spacing multipliers must be > 0");
    arc[k] = arc[k - 1] + spec.step * m;
  }
  const double radius = arc.back() / spec.bend;

  std::vector<Vec> means;
  Vec centroid = Vec::Zero(spec.dim);
  for (std::size_t k = 0; k < K; ++k) {
    Vec mu = Vec::Zero(spec.dim);
    const double theta = arc[k] / radius;
    mu[0] = radius * std::sin(theta);
    mu[1] = radius * (1.0 - std::cos(theta));
    centroid += mu;
    means.push_back(std::move(mu));
  }
  centroid /= static_cast<double>(K);

  const auto counts = class_sizes(spec, spec.n_per_class);
  double total = 0.0;
  for (int c : counts) total += c;

  std::vector<std::vector<GmmComponent>> classes;
  std::vector<double> priors;
  double prior_sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double s = spec.spread * detail::entry_or_one(spec.spread_scale, k);
    require(s > 0.0, Errc::invalid_argument, "spread multipliers must be > 0");
    classes.push_back({GmmComponent{means[k] - centroid, s * s, 1.0}});
    priors.push_back(counts[k] / total);
    prior_sum += priors.back();
  }
  priors.back() += 1.0 - prior_sum;
  return GmmOracle(std::move(classes), std::move(priors));
}

// Draws counts[k] points of class k from the oracle. Each class uses its own
// stream derived from (seed, split, k).
inline Dataset sample_dataset(const GmmOracle& oracle, const std::vector<int>& counts, Split split,
                              std::uint64_t seed) {
  require(static_cast<int>(counts.size()) == oracle.num_classes(), Errc::invalid_argument, "one count per class");
  Dataset ds;
  ds.num_classes = oracle.num_classes();
  ds.dim = oracle.dim();
  ds.split = split;
  for (int k = 0; k < oracle.num_classes(); ++k) {
    Rng rng(derive_seed(seed, std::string("grade-chain/") + to_string(split), static_cast<std::uint64_t>(k)));
    const auto& comps = oracle.components(k);
    for (int i = 0; i < counts[static_cast<std::size_t>(k)]; ++i) {
      std::size_t c = 0;
      if (comps.size() > 1) {
        double u = rng.uniform();
        while (c + 1 < comps.size() && u >= comps[c].weight) u -= comps[c++].weight;
      }
      Vec z = comps[c].mean + std::sqrt(comps[c].variance) * rng.normal_vector(oracle.dim());
      ds.points.push_back({std::move(z), k});
    }
  }
  return ds;
}

inline std::pair<Dataset, GmmOracle> make_grade_chain(const GradeChainSpec& spec) {
  auto oracle = make_grade_chain_oracle(spec);
  auto ds = sample_dataset(oracle, class_sizes(spec, spec.n_per_class), Split::train, spec.seed);
  return {std::move(ds), std::move(oracle)};
}

inline std::pair<Dataset, GmmOracle> make_grade_chain(int K, int d, int n_per_class, double spread,
                                                      std::uint64_t seed) {
  GradeChainSpec spec;
  spec.num_classes = K;
  spec.dim = d;
  spec.n_per_class = n_per_class;
  spec.spread = spread;
  spec.seed = seed;
  return make_grade_chain(spec);
}

// ---------------------------------------------------------------------------
// CSV: header `dim,label,z0,z1,...`, one row per point.

inline std::string dataset_to_csv(const Dataset& ds, const std::string& provenance = {}) {
  std::string out;
  if (!provenance.empty()) out += "# " + provenance + "\n";
  out += "dim,label";
  for (int i = 0; i < ds.dim; ++i) out += ",z" + std::to_string(i);
  out += "\n";
  for (const auto& p : ds.points) {
    out += std::to_string(ds.dim) + "," + std::to_string(p.label);
    for (Eigen::Index i = 0; i < p.z.size(); ++i) out += "," + format_double(p.z[i]);
    out += "\n";
  }
  return out;
}

inline Dataset dataset_from_csv(std::string_view text, int num_classes, Split split) {
  const auto lines = csv_lines(text);
  require(!lines.empty(), Errc::io, "dataset CSV has no header");
  const auto header = dca::split(lines.front(), ',').size();
  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.dim = static_cast<int>(header) - 2;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = dca::split(lines[r], ',');
    require(cells.size() == header, Errc::io, "dataset CSV row " + std::to_string(r) + " has wrong arity");
    require(parse_int(cells[0]) == ds.dim, Errc::dimension_mismatch, "dataset CSV dim column");
    LabeledPoint p;
    p.label = static_cast<int>(parse_int(cells[1]));
    p.z.resize(ds.dim);
    for (int i = 0; i < ds.dim; ++i) p.z[i] = parse_double(cells[static_cast<std::size_t>(i) + 2]);
    ds.points.push_back(std::move(p));
  }
  validate(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Codec

class Codec {
 public:
  enum class Mode { identity, affine };

  static Codec identity(int dim) {
    Codec c;
    c.mode_ = Mode::identity;
    c.dim_ = dim;
    return c;
  }

  // decode(z) = D z + offset; encode(x) = D^{-1} (x - offset). The recorded
  // tolerance is derived from the worst round trip over `calibration`.
  static Codec affine(Mat decoder, Vec offset, const std::vector<Vec>& calibration = {}) {
    require(decoder.rows() == decoder.cols(), Errc::dimension_mismatch, "affine codec must be square");
    require(offset.size() == decoder.rows(), Errc::dimension_mismatch, "affine codec offset");
    Codec c;
    c.mode_ = Mode::affine;
    c.dim_ = static_cast<int>(decoder.rows());
    Eigen::FullPivLU<Mat> lu(decoder);
    require(lu.isInvertible(), Errc::invalid_argument, "affine decoder must be invertible");
    c.encoder_ = lu.inverse();
    c.decoder_ = std::move(decoder);
    c.offset_ = std::move(offset);
    double worst = 0.0;
    for (const auto& x : calibration) worst = std::max(worst, (c.decode(c.encode(x)) - x).lpNorm<Eigen::Infinity>());
    c.tolerance_ = 4.0 * worst + 1e-12;
    return c;
  }

  // Whitening PCA fit on a dataset: latent coordinates have unit variance.
  static Codec fit_affine(const Dataset& ds) {
    require(!ds.empty(), Errc::empty_input, "cannot fit codec on empty dataset");
    Vec mean = Vec::Zero(ds.dim);
    for (const auto& p : ds.points) mean += p.z;
    mean /= static_cast<double>(ds.size());
    Mat cov = Mat::Zero(ds.dim, ds.dim);
    for (const auto& p : ds.points) cov += (p.z - mean) * (p.z - mean).transpose();
    cov /= static_cast<double>(ds.size());
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    Vec scale = eig.eigenvalues().cwiseMax(1e-12).cwiseSqrt();
    Mat decoder = eig.eigenvectors() * scale.asDiagonal();
    std::vector<Vec> calib;
    calib.reserve(ds.size());
    for (const auto& p : ds.points) calib.push_back(p.z);
    return affine(std::move(decoder), std::move(mean), calib);
  }

  Mode mode() const { return mode_; }
  int dim() const { return dim_; }
  double tolerance() const { return tolerance_; }

  Vec encode(const Vec& x) const {
    require(x.size() == dim_, Errc::dimension_mismatch, "codec input dimension");
    if (mode_ == Mode::identity) return x;
    return encoder_ * (x - offset_);
  }

  Vec decode(const Vec& z) const {
    require(z.size() == dim_, Errc::dimension_mismatch, "codec latent dimension");
    if (mode_ == Mode::identity) return z;
    return decoder_ * z + offset_;
  }

  // Chain rule through the decoder: grad_z = J_decode^T grad_x.
  Vec pullback(const Vec& grad_x) const {
    require(grad_x.size() == dim_, Errc::dimension_mismatch, "codec gradient dimension");
    if (mode_ == Mode::identity) return grad_x;
    return decoder_.transpose() * grad_x;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"mode", mode_ == Mode::identity ? "identity" : "affine"}, {"dim", dim_}};
    if (mode_ == Mode::affine) {
      j["decoder"] = std::vector<double>(decoder_.data(), decoder_.data() + decoder_.size());
      j["offset"] = std::vector<double>(offset_.data(), offset_.data() + offset_.size());
      j["tolerance"] = tolerance_;
    }
    return j;
  }

  static Codec from_json(const nlohmann::json& j) {
    const int dim = j.at("dim").get<int>();
    if (j.at("mode").get<std::string>() == "identity") return identity(dim);
    const auto d = j.at("decoder").get<std::vector<double>>();
    const auto o = j.at("offset").get<std::vector<double>>();
    Codec c = affine(Eigen::Map<const Mat>(d.data(), dim, dim), Eigen::Map<const Vec>(o.data(), dim));
    c.tolerance_ = j.at("tolerance").get<double>();
    return c;
  }

 private:
  Mode mode_ = Mode::identity;
  int dim_ = 0;
  Mat encoder_, decoder_;
  Vec offset_;
  double tolerance_ = 0.0;
};

inline Vec codec_roundtrip(const Codec& codec, const Vec& x) { return codec.decode(codec.encode(x)); }

// Same points, labels and order, mapped to latent coordinates.
inline Dataset encode_dataset(const Dataset& ds, const Codec& codec) {
  Dataset out = ds;
  for (auto& p : out.points) p.z = codec.encode(p.z);
  return out;
}

}  // namespace dca
