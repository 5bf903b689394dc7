#pragma once

// Minimum simulation time to cross into an adjacent class.
//
// For one input the predicate "C* gives the target class probability > 0.5 at
// the end of an SDE run with horizon T" is evaluated with the same Wiener
// increments for every T (the step count stays fixed, so ds scales with T).
// Bisection on [0, T_max] then localizes the smallest horizon that crosses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dca/classifier.hpp"
#include "dca/core/error.hpp"
#include "dca/core/parallel.hpp"
#include "dca/core/rng.hpp"
#include "dca/core/text.hpp"
#include "dca/diffusion.hpp"
#include "dca/sde.hpp"
#include "dca/synthdata.hpp"

namespace dca {

inline constexpr double kNoTransition = std::numeric_limits<double>::infinity();

// How the iteration budget is spent: as bisection rounds after the T_max
// check, or as SDE evaluations including that check.
enum class IterationMode { bisection_rounds, sde_evaluations };

struct BarrierResult {
  int y = 0;
  int y_prime = 0;
  std::int64_t input_id = -1;
  double t_min = kNoTransition;
  int iterations = 0;  // bisection rounds performed
  double t_lo = 0.0;
  double t_hi = 0.0;
  bool success = false;
};

struct Bisection {
  bool success = false;
  double lo = 0.0;
  double hi = 0.0;
  int rounds = 0;
};

// Invariant on exit when successful: pred(hi) was true, pred(lo) false (or
// lo == 0, which the caller guarantees is false). Each round halves the
// bracket exactly; rounds stop early only when the midpoint is no longer
// representable between lo and hi.
template <class Pred>
Bisection bisect_min_time(Pred&& pred, double T_max, int rounds) {
  require(T_max > 0.0 && std::isfinite(T_max), Errc::invalid_argument, "T_max must be positive");
  require(rounds >= 0, Errc::invalid_argument, "bisection rounds must be >= 0");
  Bisection b;
  b.hi = T_max;
  if (!pred(T_max)) return b;
  b.success = true;
  for (int r = 0; r < rounds; ++r) {
    const double mid = b.lo + 0.5 * (b.hi - b.lo);
    if (!(mid > b.lo && mid < b.hi)) break;
    if (pred(mid))
      b.hi = mid;
    else
      b.lo = mid;
    ++b.rounds;
  }
  return b;
}

inline bool crosses_at(const ScoreModel& model, const Classifier& c_star, const Codec& codec, const Vec& z0, int y,
                       int y_prime, const SdeConfig& base_cfg, const WienerPath& path, double horizon) {
  SdeConfig cfg = base_cfg;
  cfg.T_sde = horizon;
  const Vec end = integrate_endpoint(model, c_star, codec, z0, y, y_prime, cfg, path);
  return class_probs(c_star, codec.decode(end))[y_prime] > 0.5;
}

inline BarrierResult probe_one(const ScoreModel& model, const Classifier& c_star, const Codec& codec, const Vec& z0,
                               int y, int y_prime, const SdeConfig& base_cfg, double T_max, int iterations,
                               IterationMode mode = IterationMode::bisection_rounds) {
  require(iterations >= 1, Errc::invalid_argument, "barrier probe needs iterations >= 1");
  require(predict(c_star, codec.decode(z0)) == y, Errc::precondition,
          "input is not classified as its source class " + std::to_string(y));
  const WienerPath path = WienerPath::generate(base_cfg.seed, base_cfg.N_sde, static_cast<int>(z0.size()));
  const int rounds = mode == IterationMode::bisection_rounds ? iterations : iterations - 1;
  const auto b = bisect_min_time(
      [&](double T) { return crosses_at(model, c_star, codec, z0, y, y_prime, base_cfg, path, T); }, T_max, rounds);
  BarrierResult r;
  r.y = y;
  r.y_prime = y_prime;
  r.success = b.success;
  r.iterations = b.rounds;
  r.t_lo = b.lo;
  r.t_hi = b.hi;
  r.t_min = b.success ? b.lo + 0.5 * (b.hi - b.lo) : kNoTransition;
  return r;
}

// ---------------------------------------------------------------------------
// Aggregation

struct PairStats {
  int y = 0;
  int y_prime = 0;
  int count = 0;  // successful probes
  int failures = 0;
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

struct BarrierStats {
  std::vector<PairStats> pairs;

  const PairStats* find(int y, int y_prime) const {
    for (const auto& p : pairs)
      if (p.y == y && p.y_prime == y_prime) return &p;
    return nullptr;
  }
};

// Linear interpolation between order statistics (R type 7).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Values are sorted before any summation, so the statistics do not depend on
// the input order.
inline PairStats summarize_pair(int y, int y_prime, const std::vector<BarrierResult>& results) {
  PairStats s;
  s.y = y;
  s.y_prime = y_prime;
  std::vector<double> t;
  for (const auto& r : results) {
    if (r.y != y || r.y_prime != y_prime) continue;
    if (r.success)
      t.push_back(r.t_min);
    else
      ++s.failures;
  }
  std::sort(t.begin(), t.end());
  s.count = static_cast<int>(t.size());
  if (t.empty()) return s;
  double sum = 0.0;
  for (double v : t) sum += v;
  s.mean = sum / s.count;
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : t) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (s.count - 1));
  }
  s.q1 = quantile_sorted(t, 0.25);
  s.median = quantile_sorted(t, 0.5);
  s.q3 = quantile_sorted(t, 0.75);
  return s;
}

inline std::vector<std::pair<int, int>> adjacent_pairs(int num_classes) {
  std::vector<std::pair<int, int>> pairs;
  for (int k = 0; k + 1 < num_classes; ++k) {
    pairs.emplace_back(k, k + 1);
    pairs.emplace_back(k + 1, k);
  }
  return pairs;
}

struct BarrierProbeConfig {
  double T_max = 10.0;
  int iterations = 30;
  IterationMode mode = IterationMode::bisection_rounds;
  int n_per_pair = 20;
};

struct BarrierRun {
  std::vector<BarrierResult> results;
  BarrierStats stats;
};

inline std::uint64_t probe_seed(std::uint64_t seed, int y, int y_prime, std::int64_t input_id) {
  return derive_seed(derive_seed(seed, "probe", static_cast<std::uint64_t>(y) * 1000 + static_cast<std::uint64_t>(y_prime)),
                     "input", static_cast<std::uint64_t>(input_id));
}

// Probes up to n_per_pair test inputs per direction. Inputs are drawn from
// the points of the source class that C* already assigns to it; per-input
// noise seeds derive from (seed, pair, input id).
inline BarrierRun probe_all(const Dataset& test, const std::vector<std::pair<int, int>>& pairs,
                            const ScoreModel& model, const Classifier& c_star, const Codec& codec,
                            const SdeConfig& base_cfg, const BarrierProbeConfig& probe, std::uint64_t seed,
                            int jobs = 1) {
  require(probe.n_per_pair >= 0, Errc::invalid_argument, "n_per_pair must be >= 0");
  struct Job {
    int y, y_prime;
    std::size_t index;
  };
  std::vector<Job> work;
  for (const auto& [y, yp] : pairs) {
    require(std::abs(y - yp) == 1, Errc::invalid_argument,
            "barrier probing is restricted to adjacent classes (" + std::to_string(y) + "->" + std::to_string(yp) + ")");
    if (probe.n_per_pair == 0) continue;
    const auto idx = test.indices_of(y);
    require(!idx.empty(), Errc::empty_input, "class " + std::to_string(y) + " has no points in the probe split");
    std::vector<std::size_t> eligible;
    for (auto i : idx)
      if (predict(c_star, codec.decode(test.points[i].z)) == y) eligible.push_back(i);
    Rng rng(derive_seed(seed, "probe-select", static_cast<std::uint64_t>(y) * 1000 + static_cast<std::uint64_t>(yp)));
    rng.shuffle(eligible);
    eligible.resize(std::min(eligible.size(), static_cast<std::size_t>(probe.n_per_pair)));
    std::sort(eligible.begin(), eligible.end());
    for (auto i : eligible) work.push_back({y, yp, i});
  }

  BarrierRun run;
  run.results.resize(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t j) {
    const auto& w = work[j];
    SdeConfig cfg = base_cfg;
    cfg.seed = probe_seed(seed, w.y, w.y_prime, static_cast<std::int64_t>(w.index));
    auto r = probe_one(model, c_star, codec, test.points[w.index].z, w.y, w.y_prime, cfg, probe.T_max,
                       probe.iterations, probe.mode);
    r.input_id = static_cast<std::int64_t>(w.index);
    run.results[j] = r;
  });
  for (const auto& [y, yp] : pairs) run.stats.pairs.push_back(summarize_pair(y, yp, run.results));
  return run;
}

inline std::string barrier_results_to_csv(const std::vector<BarrierResult>& results, const std::string& provenance = {}) {
  std::string out;
  if (!provenance.empty()) out += "# " + provenance + "\n";
  out += "pair_src,pair_dst,input_id,success,t_min,iterations\n";
  for (const auto& r : results)
    out += std::to_string(r.y) + "," + std::to_string(r.y_prime) + "," + std::to_string(r.input_id) + "," +
           (r.success ? "1" : "0") + "," + format_double(r.t_min) + "," + std::to_string(r.iterations) + "\n";
  return out;
}

inline std::string barrier_stats_to_csv(const BarrierStats& stats, const std::string& provenance = {}) {
  std::string out;
  if (!provenance.empty()) out += "# " + provenance + "\n";
  out += "pair_src,pair_dst,count,failures,mean,std,median,q1,q3\n";
  for (const auto& p : stats.pairs)
    out += std::to_string(p.y) + "," + std::to_string(p.y_prime) + "," + std::to_string(p.count) + "," +
           std::to_string(p.failures) + "," + format_double(p.mean) + "," + format_double(p.std) + "," +
           format_double(p.median) + "," + format_double(p.q1) + "," + format_double(p.q3) + "\n";
  return out;
}

inline BarrierStats barrier_stats_from_csv(std::string_view text) {
  const auto lines = csv_lines(text);
  require(!lines.empty(), Errc::io, "barrier stats CSV has no header");
  BarrierStats stats;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto c = split(lines[r], ',');
    require(c.size() == 9, Errc::io, "barrier stats row " + std::to_string(r) + " has wrong arity");
    PairStats p;
    p.y = static_cast<int>(parse_int(c[0]));
    p.y_prime = static_cast<int>(parse_int(c[1]));
    p.count = static_cast<int>(parse_int(c[2]));
    p.failures = static_cast<int>(parse_int(c[3]));
    p.mean = parse_double(c[4]);
    p.std = parse_double(c[5]);
    p.median = parse_double(c[6]);
    p.q1 = parse_double(c[7]);
    p.q3 = parse_double(c[8]);
    stats.pairs.push_back(p);
  }
  return stats;
}

}  // namespace dca
