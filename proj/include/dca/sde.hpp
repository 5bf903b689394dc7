#pragma once

// Guided latent SDE: dz = f(z) ds + gamma(s) dw with gamma(s) = 1 - s / T,
// integrated by Euler-Maruyama. The drift blends the unit score direction
// (stay on the data manifold) with the unit boundary direction of the frozen
// classifier (move toward the target class), scaled by kappa.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dca/classifier.hpp"
#include "dca/core/error.hpp"
#include "dca/core/rng.hpp"
#include "dca/core/text.hpp"
#include "dca/diffusion.hpp"
#include "dca/synthdata.hpp"

namespace dca {

struct SdeConfig {
  double T_sde = 1.0;
  int N_sde = 1000;
  double lambda = 0.7;
  double kappa = 2.5;
  int t_score = 20;
  std::uint64_t seed = 0;

  double dt() const { return T_sde / N_sde; }
};

inline void validate(const SdeConfig& cfg, const NoiseSchedule& schedule) {
  require(cfg.T_sde > 0.0 && std::isfinite(cfg.T_sde), Errc::invalid_argument, "SDE horizon must be positive");
  require(cfg.N_sde >= 1, Errc::invalid_argument, "SDE needs at least one step");
  require(cfg.lambda >= 0.0 && cfg.lambda <= 1.0, Errc::out_of_range, "lambda must lie in [0, 1]");
  require(cfg.kappa >= 0.0 && std::isfinite(cfg.kappa), Errc::invalid_argument, "kappa must be >= 0");
  require(cfg.t_score >= 1 && cfg.t_score <= schedule.T(), Errc::out_of_range, "t_score outside 1..T");
}

inline nlohmann::json to_json(const SdeConfig& cfg) {
  return {{"T_sde", cfg.T_sde}, {"N_sde", cfg.N_sde}, {"lambda", cfg.lambda},
          {"kappa", cfg.kappa}, {"t_score", cfg.t_score}, {"seed", cfg.seed}};
}

// Standard-normal increments, one vector per step. Independent of the
// horizon, so paths can be shared across horizons.
class WienerPath {
 public:
  WienerPath() = default;
  explicit WienerPath(std::vector<Vec> increments, std::uint64_t seed = 0)
      : increments_(std::move(increments)), seed_(seed) {}

  static WienerPath generate(std::uint64_t seed, int steps, int dim) {
    Rng rng(derive_seed(seed, "wiener"));
    std::vector<Vec> inc;
    inc.reserve(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) inc.push_back(rng.normal_vector(dim));
    return WienerPath(std::move(inc), seed);
  }

  static WienerPath zeros(int steps, int dim) {
    return WienerPath(std::vector<Vec>(static_cast<std::size_t>(steps), Vec::Zero(dim)));
  }

  int steps() const { return static_cast<int>(increments_.size()); }
  std::uint64_t seed() const { return seed_; }
  const Vec& increment(int i) const { return increments_.at(static_cast<std::size_t>(i)); }

 private:
  std::vector<Vec> increments_;
  std::uint64_t seed_ = 0;
};

inline double diffusion_coefficient(double s, double T_sde) { return 1.0 - s / T_sde; }

// gamma at the start of step i of n; exactly 1 at i = 0 and 0 at i = n.
inline double diffusion_coefficient_at_step(int i, int n) {
  return 1.0 - static_cast<double>(i) / static_cast<double>(n);
}

inline Vec safe_normalize(const Vec& v) {
  const double n = v.norm();
  if (!(n >= 1e-12)) return Vec::Zero(v.size());
  return v / n;
}

struct DriftTerms {
  Vec f;
  Vec v_manifold;
  Vec v_boundary;
};

inline DriftTerms drift(const ScoreModel& model, const Classifier& c_star, const Codec& codec, const Vec& z, int y,
                        int y_prime, const SdeConfig& cfg) {
  require(y != y_prime, Errc::same_class, "source and target class coincide");
  DriftTerms d;
  d.v_manifold = safe_normalize(score_at(model, z, cfg.t_score));
  d.v_boundary = safe_normalize(boundary_grad(c_star, codec, z, y, y_prime));
  d.f = cfg.kappa * ((1.0 - cfg.lambda) * d.v_manifold + cfg.lambda * d.v_boundary);
  return d;
}

struct TrajectoryState {
  double s = 0.0;
  double gamma = 1.0;
  Vec z;
  Vec probs;  // C* on decode(z), unrefined
};

struct Trajectory {
  std::vector<TrajectoryState> states;
  SdeConfig cfg;
  int y = 0;
  int y_prime = 0;

  const TrajectoryState& front() const { return states.front(); }
  const TrajectoryState& back() const { return states.back(); }
};

// Euler-Maruyama with an arbitrary drift: for step i,
//   z <- z + f(z) ds + gamma_i sqrt(ds) eps_i.
// `observe(i, s, gamma, z)` sees every state including the initial one.
template <class DriftFn, class Observer>
Vec euler_maruyama(DriftFn&& drift_fn, const Vec& z0, double T_sde, int N_sde, const WienerPath& path,
                   Observer&& observe) {
  require(z0.allFinite(), Errc::non_finite, "initial SDE state is not finite");
  require(path.steps() >= N_sde, Errc::shape_mismatch, "Wiener path shorter than the step count");
  const double ds = T_sde / N_sde;
  const double sqrt_ds = std::sqrt(ds);
  Vec z = z0;
  observe(0, 0.0, 1.0, z);
  for (int i = 0; i < N_sde; ++i) {
    const double gamma = diffusion_coefficient_at_step(i, N_sde);
    const Vec f = drift_fn(z);
    const Vec& eps = path.increment(i);
    require(eps.size() == z.size(), Errc::dimension_mismatch, "Wiener increment dimension");
    const double noise_scale = gamma * sqrt_ds;
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = z[k] + f[k] * ds + noise_scale * eps[k];
    if (!z.allFinite()) fail(Errc::non_finite, "SDE state became non-finite at step " + std::to_string(i + 1));
    observe(i + 1, (i + 1) * ds, diffusion_coefficient_at_step(i + 1, N_sde), z);
  }
  return z;
}

inline Trajectory integrate(const ScoreModel& model, const Classifier& c_star, const Codec& codec, const Vec& z0,
                            int y, int y_prime, const SdeConfig& cfg, const WienerPath& path) {
  validate(cfg, model.schedule);
  Trajectory traj;
  traj.cfg = cfg;
  traj.y = y;
  traj.y_prime = y_prime;
  traj.states.reserve(static_cast<std::size_t>(cfg.N_sde) + 1);
  euler_maruyama([&](const Vec& z) { return drift(model, c_star, codec, z, y, y_prime, cfg).f; }, z0, cfg.T_sde,
                 cfg.N_sde, path, [&](int, double s, double gamma, const Vec& z) {
                   traj.states.push_back({s, gamma, z, class_probs(c_star, codec.decode(z))});
                 });
  return traj;
}

inline Trajectory integrate(const ScoreModel& model, const Classifier& c_star, const Codec& codec, const Vec& z0,
                            int y, int y_prime, const SdeConfig& cfg) {
  return integrate(model, c_star, codec, z0, y, y_prime, cfg,
                   WienerPath::generate(cfg.seed, cfg.N_sde, static_cast<int>(z0.size())));
}

// Final state only; same arithmetic as integrate().
inline Vec integrate_endpoint(const ScoreModel& model, const Classifier& c_star, const Codec& codec, const Vec& z0,
                              int y, int y_prime, const SdeConfig& cfg, const WienerPath& path) {
  validate(cfg, model.schedule);
  return euler_maruyama([&](const Vec& z) { return drift(model, c_star, codec, z, y, y_prime, cfg).f; }, z0,
                        cfg.T_sde, cfg.N_sde, path, [](int, double, double, const Vec&) {});
}

// ---------------------------------------------------------------------------
// Counterfactual extraction

struct CounterfactualSample {
  Vec z_prime;  // refined latent
  Vec x_prime;  // decode(z_prime)
  int y = 0;        // source label
  int y_prime = 0;  // label assigned by C*
  int target = 0;   // direction the trajectory was steered toward
  int step = 0;
  double t_used = 0.0;
  std::int64_t source_id = -1;
  std::uint64_t seed = 0;
};

namespace detail {
inline void check_extraction(const Trajectory& traj, int every) {
  const int n = traj.cfg.N_sde;
  require(every >= 1 && n % every == 0, Errc::invalid_argument,
          "extraction interval " + std::to_string(every) + " does not divide N_sde = " + std::to_string(n));
  require(static_cast<int>(traj.states.size()) == n + 1, Errc::shape_mismatch, "trajectory length is not N_sde + 1");
}
}  // namespace detail

// States at steps every, 2 every, ..., N_sde, each refined through the
// partial reverse chain and labelled by the argmax of C* on the decoded
// refined sample.
inline std::vector<CounterfactualSample> extract_counterfactuals(const Trajectory& traj, int every, int refine_steps,
                                                                 const ScoreModel& model, const Classifier& c_star,
                                                                 const Codec& codec, std::uint64_t seed) {
  detail::check_extraction(traj, every);
  require(refine_steps >= 1 && refine_steps <= model.schedule.T(), Errc::out_of_range,
          "refine steps " + std::to_string(refine_steps) + " outside 1..T");
  std::vector<CounterfactualSample> out;
  for (int step = every; step <= traj.cfg.N_sde; step += every) {
    CounterfactualSample cf;
    cf.seed = derive_seed(seed, "cf-refine", static_cast<std::uint64_t>(step));
    cf.z_prime = refine(model, traj.states[static_cast<std::size_t>(step)].z, refine_steps, cf.seed);
    cf.x_prime = codec.decode(cf.z_prime);
    cf.y = traj.y;
    cf.target = traj.y_prime;
    cf.y_prime = predict(c_star, cf.x_prime);
    cf.step = step;
    cf.t_used = traj.cfg.T_sde;
    out.push_back(std::move(cf));
  }
  return out;
}

// Same extraction without refinement (ablation baseline).
inline std::vector<CounterfactualSample> extract_unrefined(const Trajectory& traj, int every, const Classifier& c_star,
                                                           const Codec& codec) {
  detail::check_extraction(traj, every);
  std::vector<CounterfactualSample> out;
  for (int step = every; step <= traj.cfg.N_sde; step += every) {
    CounterfactualSample cf;
    cf.z_prime = traj.states[static_cast<std::size_t>(step)].z;
    cf.x_prime = codec.decode(cf.z_prime);
    cf.y = traj.y;
    cf.target = traj.y_prime;
    cf.y_prime = predict(c_star, cf.x_prime);
    cf.step = step;
    cf.t_used = traj.cfg.T_sde;
    out.push_back(std::move(cf));
  }
  return out;
}

// CSV with header `step,s,z0..z{d-1},p0..p{K-1}`.
inline std::string trajectory_to_csv(const Trajectory& traj, const std::string& provenance = {}) {
  std::string out;
  if (!provenance.empty()) out += "# " + provenance + "\n";
  const auto d = traj.front().z.size();
  const auto K = traj.front().probs.size();
  out += "step,s";
  for (Eigen::Index i = 0; i < d; ++i) out += ",z" + std::to_string(i);
  for (Eigen::Index k = 0; k < K; ++k) out += ",p" + std::to_string(k);
  out += "\n";
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const auto& st = traj.states[i];
    out += std::to_string(i) + "," + format_double(st.s);
    for (Eigen::Index j = 0; j < d; ++j) out += "," + format_double(st.z[j]);
    for (Eigen::Index k = 0; k < K; ++k) out += "," + format_double(st.probs[k]);
    out += "\n";
  }
  return out;
}

}  // namespace dca
