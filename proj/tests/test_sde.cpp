#include <catch_amalgamated.hpp>

#include <cmath>

#include "dca/core/rng.hpp"
#include "dca/sde.hpp"

using namespace dca;
using Catch::Matchers::WithinAbs;

namespace {

struct World {
  Dataset train, val;
  GmmOracle oracle;
  ScoreModel model;
  Classifier c_star;
  Codec codec = Codec::identity(2);
};

const World& world() {
  static const World w = [] {
    World r;
    GradeChainSpec spec;
    spec.num_classes = 3;
    spec.n_per_class = 600;
    spec.seed = 5;
    auto [ds, o] = make_grade_chain(spec);
    r.train = std::move(ds);
    r.oracle = std::move(o);
    r.val = sample_dataset(r.oracle, class_sizes(spec, 100), Split::val, 6);
    ScoreTrainConfig sc;
    sc.iterations = 8000;
    r.model = train_score(r.train, NoiseSchedule::linear(200), sc, 7);
    r.c_star = train_classifier(r.train, r.val, ClassifierTrainConfig{}, 8);
    r.c_star.freeze();
    return r;
  }();
  return w;
}

std::vector<std::size_t> correctly_classified(const World& w, int label, std::size_t n) {
  std::vector<std::size_t> out;
  for (auto i : w.train.indices_of(label))
    if (out.size() < n && predict(w.c_star, w.train.points[i].z) == label) out.push_back(i);
  return out;
}

}  // namespace

TEST_CASE("one Euler-Maruyama step by hand", "[sde]") {
  Vec z0(3), f(3), eps(3);
  z0 << 0.25, -1.5, 3.0;
  f << 0.7, -0.2, 1.1;
  eps << -0.3, 1.9, 0.05;
  const double T = 0.8;
  const int N = 4;
  const double ds = T / N;
  std::vector<Vec> inc(N, Vec::Zero(3));
  inc[0] = eps;
  std::vector<Vec> seen;
  std::vector<double> gammas;
  euler_maruyama([&](const Vec&) { return f; }, z0, T, N, WienerPath(inc), [&](int, double, double g, const Vec& z) {
    seen.push_back(z);
    gammas.push_back(g);
  });
  const Vec expect = z0 + f * ds + 1.0 * std::sqrt(ds) * eps;
  CHECK((seen[1] - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
  // later steps: gamma_i = 1 - i/N with zero noise
  const Vec step2 = seen[1] + f * ds;
  CHECK((seen[2] - step2).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(gammas.front() == 1.0);
  CHECK(gammas.back() == 0.0);
  for (std::size_t i = 1; i < gammas.size(); ++i) CHECK(gammas[i] < gammas[i - 1]);
}

TEST_CASE("diffusion coefficient schedule", "[sde]") {
  CHECK(diffusion_coefficient(0.0, 2.0) == 1.0);
  CHECK(diffusion_coefficient(2.0, 2.0) == 0.0);
  CHECK(diffusion_coefficient_at_step(0, 1000) == 1.0);
  CHECK(diffusion_coefficient_at_step(999, 1000) == 1.0 - 999.0 / 1000.0);
  for (int i = 1; i <= 1000; ++i) CHECK(diffusion_coefficient_at_step(i, 1000) < diffusion_coefficient_at_step(i - 1, 1000));
}

TEST_CASE("zero drift and zero noise keep the state", "[sde]") {
  const auto& w = world();
  SdeConfig cfg;
  cfg.kappa = 0.0;
  cfg.N_sde = 50;
  const Vec z0 = w.train.points[0].z;
  const auto traj = integrate(w.model, w.c_star, w.codec, z0, 0, 1, cfg, WienerPath::zeros(50, 2));
  REQUIRE(traj.states.size() == 51);
  for (const auto& s : traj.states) CHECK(s.z == z0);
}

TEST_CASE("trajectory shape and determinism", "[sde]") {
  const auto& w = world();
  SdeConfig cfg;
  cfg.N_sde = 200;
  cfg.seed = 12;
  const Vec z0 = w.train.points[3].z;
  const auto a = integrate(w.model, w.c_star, w.codec, z0, 0, 1, cfg);
  const auto b = integrate(w.model, w.c_star, w.codec, z0, 0, 1, cfg);
  REQUIRE(a.states.size() == 201);
  CHECK(a.front().s == 0.0);
  CHECK(a.front().gamma == 1.0);
  for (std::size_t i = 1; i < a.states.size(); ++i) {
    CHECK(a.states[i].s > a.states[i - 1].s);
    CHECK(a.states[i].gamma < a.states[i - 1].gamma);
    CHECK(a.states[i].z == b.states[i].z);
  }
  CHECK(trajectory_to_csv(a) == trajectory_to_csv(b));
  CHECK(integrate_endpoint(w.model, w.c_star, w.codec, z0, 0, 1, cfg,
                           WienerPath::generate(cfg.seed, cfg.N_sde, 2)) == a.back().z);
  const auto csv = trajectory_to_csv(a, "config_hash=x");
  CHECK(csv.rfind("# config_hash=x\nstep,s,z0,z1,p0,p1,p2\n", 0) == 0);
}

TEST_CASE("drift endpoints and norm bound", "[sde]") {
  const auto& w = world();
  Rng rng(4);
  SdeConfig cfg;
  for (int i = 0; i < 50; ++i) {
    const Vec z = w.train.points[rng.below(w.train.size())].z;
    cfg.lambda = 0.0;
    auto d = drift(w.model, w.c_star, w.codec, z, 0, 1, cfg);
    CHECK((d.f - cfg.kappa * d.v_manifold).norm() < 1e-12);
    CHECK_THAT(d.f.norm(), WithinAbs(cfg.kappa, 1e-12));
    cfg.lambda = 1.0;
    d = drift(w.model, w.c_star, w.codec, z, 1, 0, cfg);
    CHECK((d.f - cfg.kappa * d.v_boundary).norm() < 1e-12);
    cfg.lambda = rng.uniform();
    cfg.kappa = 1.0;
    d = drift(w.model, w.c_star, w.codec, z, 1, 2, cfg);
    CHECK(d.f.norm() <= 1.0 + 1e-12);
    cfg.kappa = 2.5;
  }
  CHECK_THROWS_AS(drift(w.model, w.c_star, w.codec, Vec::Zero(2), 1, 1, cfg), Error);
}

TEST_CASE("safe_normalize returns zero below 1e-12", "[sde]") {
  Vec tiny(2);
  tiny << 1e-13, 0.0;
  CHECK(safe_normalize(tiny).norm() == 0.0);
  Vec v(2);
  v << 3.0, 4.0;
  CHECK_THAT(safe_normalize(v).norm(), WithinAbs(1.0, 1e-15));
}

TEST_CASE("kappa = 1 keeps every drift inside the unit ball", "[sde]") {
  const auto& w = world();
  SdeConfig cfg;
  cfg.kappa = 1.0;
  cfg.N_sde = 100;
  for (int k = 0; k < 10; ++k) {
    cfg.seed = static_cast<std::uint64_t>(k);
    const Vec z0 = w.train.points[static_cast<std::size_t>(k) * 13].z;
    const int y = w.train.points[static_cast<std::size_t>(k) * 13].label;
    const int yp = y == 0 ? 1 : y - 1;
    euler_maruyama(
        [&](const Vec& z) {
          const Vec f = drift(w.model, w.c_star, w.codec, z, y, yp, cfg).f;
          CHECK(f.norm() <= 1.0 + 1e-12);
          return f;
        },
        z0, cfg.T_sde, cfg.N_sde, WienerPath::generate(cfg.seed, cfg.N_sde, 2), [](int, double, double, const Vec&) {});
  }
}

TEST_CASE("manifold drive keeps samples in high density", "[sde]") {
  const auto& w = world();
  SdeConfig cfg;
  cfg.lambda = 0.0;
  double start = 0.0, end = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const auto& p = w.train.points[static_cast<std::size_t>(i) * 9];
    cfg.seed = derive_seed(1, "manifold", static_cast<std::uint64_t>(i));
    const int yp = p.label == 0 ? 1 : p.label - 1;
    const Vec zT = integrate_endpoint(w.model, w.c_star, w.codec, p.z, p.label, yp, cfg,
                                      WienerPath::generate(cfg.seed, cfg.N_sde, 2));
    start += w.oracle.log_density(p.z);
    end += w.oracle.log_density(zT);
  }
  CHECK(end / n >= start / n - 0.5);
}

TEST_CASE("boundary drive raises the target probability", "[sde]") {
  const auto& w = world();
  SdeConfig cfg;
  cfg.lambda = 0.7;
  cfg.T_sde = 1.5;
  int up = 0, total = 0;
  for (const auto& [y, yp] : std::vector<std::pair<int, int>>{{0, 1}, {1, 0}, {1, 2}, {2, 1}}) {
    for (auto i : correctly_classified(w, y, 25)) {
      cfg.seed = derive_seed(2, "boundary", i * 10 + static_cast<std::size_t>(yp));
      const auto& z0 = w.train.points[i].z;
      const Vec zT = integrate_endpoint(w.model, w.c_star, w.codec, z0, y, yp, cfg,
                                        WienerPath::generate(cfg.seed, cfg.N_sde, 2));
      up += class_probs(w.c_star, zT)[yp] > class_probs(w.c_star, z0)[yp];
      ++total;
    }
  }
  CHECK(static_cast<double>(up) / total >= 0.95);
}

TEST_CASE("config validation", "[sde]") {
  const auto& w = world();
  SdeConfig cfg;
  const Vec z0 = w.train.points[0].z;
  auto run = [&](SdeConfig c) { return integrate(w.model, w.c_star, w.codec, z0, 0, 1, c); };
  cfg.lambda = 1.5;
  try {
    run(cfg);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::out_of_range);
  }
  cfg = {};
  cfg.N_sde = 0;
  CHECK_THROWS_AS(run(cfg), Error);
  cfg = {};
  cfg.t_score = 201;
  CHECK_THROWS_AS(run(cfg), Error);
  cfg = {};
  cfg.T_sde = 0.0;
  CHECK_THROWS_AS(run(cfg), Error);
  Vec bad = z0;
  bad[0] = std::nan("");
  try {
    integrate(w.model, w.c_star, w.codec, bad, 0, 1, SdeConfig{});
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_finite);
  }
}

TEST_CASE("non-finite state reports the step", "[sde]") {
  Vec z0 = Vec::Ones(2);
  int calls = 0;
  try {
    euler_maruyama(
        [&](const Vec& z) {
          return ++calls == 3 ? Vec::Constant(z.size(), std::numeric_limits<double>::infinity()) : Vec::Zero(z.size());
        },
        z0, 1.0, 10, WienerPath::zeros(10, 2), [](int, double, double, const Vec&) {});
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_finite);
    CHECK(e.message().find("step 3") != std::string::npos);
  }
}

TEST_CASE("counterfactual extraction", "[sde]") {
  const auto& w = world();
  SdeConfig cfg;
  cfg.seed = 3;
  const auto idx = correctly_classified(w, 0, 1);
  const auto traj = integrate(w.model, w.c_star, w.codec, w.train.points[idx[0]].z, 0, 1, cfg);
  const auto cfs = extract_counterfactuals(traj, 100, 50, w.model, w.c_star, w.codec, 9);
  REQUIRE(cfs.size() == 10);
  for (std::size_t i = 0; i < cfs.size(); ++i) {
    CHECK(cfs[i].step == static_cast<int>(100 * (i + 1)));
    CHECK(cfs[i].y == 0);
    CHECK(cfs[i].target == 1);
    CHECK(cfs[i].y_prime == predict(w.c_star, cfs[i].x_prime));
  }
  CHECK(extract_counterfactuals(traj, 1000, 50, w.model, w.c_star, w.codec, 9).size() == 1);
  const auto again = extract_counterfactuals(traj, 100, 50, w.model, w.c_star, w.codec, 9);
  CHECK(again.back().z_prime == cfs.back().z_prime);
  const auto raw = extract_unrefined(traj, 500, w.c_star, w.codec);
  REQUIRE(raw.size() == 2);
  CHECK(raw.back().z_prime == traj.back().z);

  SdeConfig small;
  small.N_sde = 10;
  const auto t10 = integrate(w.model, w.c_star, w.codec, w.train.points[idx[0]].z, 0, 1, small);
  try {
    extract_counterfactuals(t10, 3, 50, w.model, w.c_star, w.codec, 1);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_argument);
  }
  CHECK_THROWS_AS(extract_counterfactuals(t10, 5, 0, w.model, w.c_star, w.codec, 1), Error);
}
