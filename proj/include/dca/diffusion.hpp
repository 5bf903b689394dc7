#pragma once

// Discrete-time denoising diffusion: schedule, training of the noise
// predictor, score conversion, ancestral sampling and the partial reverse
// chain used to refine SDE outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dca/core/error.hpp"
#include "dca/core/parallel.hpp"
#include "dca/core/rng.hpp"
#include "dca/nn.hpp"
#include "dca/synthdata.hpp"

namespace dca {

// Timesteps are 1-based: beta(1) .. beta(T). alpha_bar(0) == 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02) {
    require(T >= 1, Errc::invalid_argument, "schedule needs T >= 1");
    require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, Errc::invalid_argument,
            "linear schedule needs 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i)
      betas[static_cast<std::size_t>(i)] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
    NoiseSchedule s(std::move(betas));
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    return s;
  }

  explicit NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    require(!beta_.empty(), Errc::invalid_argument, "empty schedule");
    alpha_bar_.reserve(beta_.size() + 1);
    alpha_bar_.push_back(1.0);
    for (double b : beta_) {
      require(b > 0.0 && b < 1.0, Errc::invalid_argument, "beta must lie in (0, 1)");
      alpha_bar_.push_back(alpha_bar_.back() * (1.0 - b));
    }
    beta_start_ = beta_.front();
    beta_end_ = beta_.back();
  }

  int T() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const {
    require(t >= 0 && t <= T(), Errc::out_of_range, "timestep " + std::to_string(t) + " outside 0..T");
    return alpha_bar_[static_cast<std::size_t>(t)];
  }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  // Posterior variance of the reverse step, (1 - a_t)(1 - abar_{t-1}) / (1 - abar_t).
  double posterior_variance(int t) const {
    return (1.0 - alpha(t)) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
  }

  nlohmann::json to_json() const {
    return {{"T", T()}, {"kind", "linear"}, {"beta_start", beta_start_}, {"beta_end", beta_end_}};
  }

  static NoiseSchedule from_json(const nlohmann::json& j) {
    return linear(j.at("T").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
  }

 private:
  std::size_t index(int t) const {
    require(t >= 1 && t <= T(), Errc::out_of_range, "timestep " + std::to_string(t) + " outside 1..T");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
};

struct ScoreNetConfig {
  std::vector<int> hidden{64, 64, 64};
  Activation activation = Activation::silu;
  int time_embed = 32;
};

struct ScoreModel {
  Mlp net;
  NoiseSchedule schedule;
  std::uint64_t seed = 0;
  std::vector<double> loss_trace;

  int dim() const { return net.output_dim(); }

  Vec eps(const Vec& z, int t) const { return forward(net, z, t); }
};

inline Mlp make_score_net(int dim, const ScoreNetConfig& cfg, std::uint64_t seed) {
  MlpSpec spec;
  spec.widths.push_back(dim + cfg.time_embed);
  for (int h : cfg.hidden) spec.widths.push_back(h);
  spec.widths.push_back(dim);
  spec.activation = cfg.activation;
  spec.time_embed = cfg.time_embed;
  return Mlp::init(spec, seed);
}

struct ScoreTrainConfig {
  ScoreNetConfig net;
  int iterations = 30000;
  double lr = 1e-3;
  int batch = 64;
};

// Minimises E || eps - eps_theta(sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, t) ||^2
// with t uniform on 1..T.
inline ScoreModel train_score(const Dataset& data, const NoiseSchedule& schedule, const ScoreTrainConfig& cfg,
                              std::uint64_t seed) {
  require(!data.empty(), Errc::empty_input, "cannot train a score model on an empty dataset");
  require(cfg.batch >= 1 && cfg.iterations >= 0 && cfg.lr > 0.0, Errc::invalid_argument, "score training config");
  ScoreModel model{make_score_net(data.dim, cfg.net, seed), schedule, seed, {}};
  ParamTape tape(model.net.params());
  Rng rng(derive_seed(seed, "train-score"));
  const int d = data.dim;
  Mat x(d, cfg.batch), noise(d, cfg.batch);
  std::vector<int> ts(static_cast<std::size_t>(cfg.batch));
  MlpTape fwd;
  model.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& z0 = data.points[rng.below(data.size())].z;
      const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.T())));
      const double ab = schedule.alpha_bar(t);
      ts[static_cast<std::size_t>(b)] = t;
      noise.col(b) = rng.normal_vector(d);
      x.col(b) = std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * noise.col(b);
    }
    const Mat pred = forward_batch(model.net, x, ts, &fwd);
    const Mat diff = pred - noise;
    const double loss = diff.squaredNorm() / cfg.batch;
    if (!std::isfinite(loss)) fail(Errc::non_finite, "score training loss is non-finite at iteration " + std::to_string(it));
    model.loss_trace.push_back(loss);
    backward_batch(model.net, fwd, (2.0 / cfg.batch) * diff, tape.grad_span());
    adam_step(tape, cfg.lr);
  }
  return model;
}

// grad log p(z) ~= -eps_theta(z, t) / sqrt(1 - abar_t)
inline Vec score_at(const ScoreModel& model, const Vec& z, int t) {
  require(t >= 1 && t <= model.schedule.T(), Errc::out_of_range, "score timestep " + std::to_string(t) + " outside 1..T");
  return (-1.0 / std::sqrt(1.0 - model.schedule.alpha_bar(t))) * model.eps(z, t);
}

// Points whose oracle log-density is at or above the q-quantile of the set.
inline std::vector<Vec> above_density_quantile(const GmmOracle& oracle, const std::vector<Vec>& points, double q) {
  require(!points.empty(), Errc::empty_input, "no points to filter");
  std::vector<double> ld;
  ld.reserve(points.size());
  for (const auto& p : points) ld.push_back(oracle.log_density(p));
  std::vector<double> sorted = ld;
  std::sort(sorted.begin(), sorted.end());
  const auto cut = sorted[static_cast<std::size_t>(std::floor(q * static_cast<double>(sorted.size() - 1)))];
  std::vector<Vec> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (ld[i] >= cut) out.push_back(points[i]);
  return out;
}

// Mean cosine similarity between the model score at t and the oracle score.
inline double score_cosine(const ScoreModel& model, const GmmOracle& oracle, const std::vector<Vec>& points, int t) {
  require(!points.empty(), Errc::empty_input, "no points for score comparison");
  double sum = 0.0;
  for (const auto& z : points) {
    const Vec a = score_at(model, z, t);
    const Vec b = oracle.score(z);
    const double den = a.norm() * b.norm();
    sum += den > 0.0 ? a.dot(b) / den : 0.0;
  }
  return sum / static_cast<double>(points.size());
}

// One ancestral step z_t -> z_{t-1}; `noise` is ignored at t == 1.
inline Vec reverse_step(const ScoreModel& model, const Vec& z, int t, const Vec& noise) {
  const auto& s = model.schedule;
  const double a = s.alpha(t);
  Vec next = (z - ((1.0 - a) / std::sqrt(1.0 - s.alpha_bar(t))) * model.eps(z, t)) / std::sqrt(a);
  if (t > 1) next += std::sqrt(s.posterior_variance(t)) * noise;
  return next;
}

// Forward-diffuses z to `steps` with q(z_t | z_0), then runs the reverse chain
// down to t = 1. `draw_noise(dim)` supplies every Gaussian vector in order:
// first the forward noise, then one per reverse step with t > 1.
template <class NoiseSource>
Vec refine_with(const ScoreModel& model, const Vec& z, int steps, NoiseSource&& draw_noise) {
  require(steps >= 1 && steps <= model.schedule.T(), Errc::out_of_range,
          "refine steps " + std::to_string(steps) + " outside 1..T");
  require(z.size() == model.dim(), Errc::dimension_mismatch, "refine input dimension");
  const double ab = model.schedule.alpha_bar(steps);
  Vec zt = std::sqrt(ab) * z + std::sqrt(1.0 - ab) * draw_noise(z.size());
  for (int t = steps; t >= 1; --t) {
    const Vec noise = t > 1 ? Vec(draw_noise(z.size())) : Vec::Zero(z.size());
    zt = reverse_step(model, zt, t, noise);
  }
  return zt;
}

inline Vec refine(const ScoreModel& model, const Vec& z, int steps, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "refine"));
  return refine_with(model, z, steps, [&](Eigen::Index n) { return rng.normal_vector(n); });
}

// n ancestral samples from t = T; sample i uses its own stream.
inline std::vector<Vec> sample(const ScoreModel& model, int n, std::uint64_t seed, int jobs = 1) {
  require(n >= 0, Errc::invalid_argument, "sample count must be >= 0");
  std::vector<Vec> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), jobs, [&](std::size_t i) {
    Rng rng(derive_seed(seed, "sample", i));
    Vec z = rng.normal_vector(model.dim());
    for (int t = model.schedule.T(); t >= 1; --t) {
      const Vec noise = t > 1 ? rng.normal_vector(model.dim()) : Vec::Zero(model.dim());
      z = reverse_step(model, z, t, noise);
    }
    out[i] = std::move(z);
  });
  return out;
}

inline nlohmann::json score_checkpoint_meta(const ScoreModel& model) {
  return {{"role", "score"}, {"schedule", model.schedule.to_json()}, {"training_seed", model.seed}};
}

inline ScoreModel score_model_from_checkpoint(const Checkpoint& ck) {
  require(ck.meta.value("role", "") == "score", Errc::invalid_argument, "checkpoint is not a score model");
  ScoreModel m;
  m.net = ck.net;
  m.schedule = NoiseSchedule::from_json(ck.meta.at("schedule"));
  m.seed = ck.meta.at("training_seed").get<std::uint64_t>();
  return m;
}

}  // namespace dca
