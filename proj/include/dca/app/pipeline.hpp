#pragma once

// Subcommands of the `dca` tool. Every artifact lands under run.out_dir and
// carries the resolved config hash (CSV: leading `#` line, JSON: a
// "config_hash" field, checkpoints: header metadata, SVG: a comment).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dca/app/config.hpp"
#include "dca/barrier.hpp"
#include "dca/classifier.hpp"
#include "dca/core/error.hpp"
#include "dca/core/parallel.hpp"
#include "dca/core/rng.hpp"
#include "dca/core/text.hpp"
#include "dca/diffusion.hpp"
#include "dca/metrics.hpp"
#include "dca/nn.hpp"
#include "dca/plot.hpp"
#include "dca/sde.hpp"
#include "dca/selfcorrect.hpp"
#include "dca/synthdata.hpp"

namespace dca::app {

namespace fs = std::filesystem;

struct RunOptions {
  bool deterministic = false;
  int jobs = 1;
  bool force = false;  // evaluate: accept artifacts from other configs
};

// 1 usage/config, 2 missing or incompatible artifact, 3 numeric failure.
inline int exit_code_for(Errc code) {
  switch (code) {
    case Errc::missing_artifact:
    case Errc::version_mismatch:
    case Errc::mixed_config_hash:
    case Errc::missing_barrier_stats:
      return 2;
    case Errc::non_finite:
    case Errc::numeric_underflow:
      return 3;
    default:
      return 1;
  }
}

inline nlohmann::json error_json(const std::string& subcommand, const Error& e) {
  return {{"status", "error"},
          {"subcommand", subcommand},
          {"error", to_string(e.code())},
          {"message", e.message()},
          {"exit_code", exit_code_for(e.code())}};
}

// ---------------------------------------------------------------------------
// Config -> module settings

inline GradeChainSpec chain_spec(const ExperimentConfig& c) {
  GradeChainSpec s;
  s.num_classes = c.data.classes;
  s.dim = c.data.dim;
  s.n_per_class = c.data.n_train;
  s.spread = c.data.spread;
  s.step = c.data.step;
  s.bend = c.data.bend;
  s.spacing = c.data.spacing;
  s.spread_scale = c.data.spread_scale;
  s.count_scale = c.data.count_scale;
  s.seed = derive_seed(c.run.seed, "data");
  return s;
}

inline NoiseSchedule schedule_of(const ExperimentConfig& c) {
  return NoiseSchedule::linear(c.schedule.T, c.schedule.beta_start, c.schedule.beta_end);
}

inline ScoreTrainConfig score_train_config(const ExperimentConfig& c) {
  ScoreTrainConfig s;
  s.net.hidden = c.score.hidden;
  s.net.activation = activation_from_string(c.score.activation);
  s.net.time_embed = c.score.time_embed;
  s.iterations = c.score.iterations;
  s.lr = c.score.lr;
  s.batch = c.score.batch;
  return s;
}

inline ClassifierTrainConfig classifier_train_config(const ExperimentConfig& c) {
  ClassifierTrainConfig s;
  s.net.hidden = c.classifier.hidden;
  s.net.activation = activation_from_string(c.classifier.activation);
  s.epochs = c.classifier.epochs;
  s.lr = c.classifier.lr;
  s.batch = c.classifier.batch;
  return s;
}

inline SdeConfig sde_config(const ExperimentConfig& c) {
  SdeConfig s;
  s.T_sde = c.sde.t_sde;
  s.N_sde = c.sde.n_steps;
  s.lambda = c.sde.lambda;
  s.kappa = c.sde.kappa;
  s.t_score = c.sde.t_score;
  return s;
}

inline BarrierProbeConfig probe_config(const ExperimentConfig& c) {
  BarrierProbeConfig p;
  p.T_max = c.barrier.t_max;
  p.iterations = c.barrier.iterations;
  p.mode = c.barrier.iteration_mode == "evaluations" ? IterationMode::sde_evaluations : IterationMode::bisection_rounds;
  p.n_per_pair = c.barrier.n_per_pair;
  return p;
}

inline CfBuildConfig cf_build_config(const ExperimentConfig& c) {
  CfBuildConfig b;
  b.sde = sde_config(c);
  b.every = c.sde.every;
  b.refine_steps = c.sde.refine_steps;
  b.t_sde_scale = c.sde.t_sde_scale;
  b.sources_per_direction = c.selfcorrect.sources_per_direction;
  return b;
}

inline SelfCorrectConfig self_correct_config(const ExperimentConfig& c) {
  SelfCorrectConfig s;
  s.epochs = c.selfcorrect.epochs;
  s.lr = c.selfcorrect.lr;
  s.batch = c.selfcorrect.batch;
  s.loss.soft_labels = c.selfcorrect.soft_labels;
  s.loss.align_space = c.selfcorrect.align_space == "logit" ? AlignSpace::logits : AlignSpace::probabilities;
  return s;
}

// Horizon for a direction: t_sde_scale x mean T_min when barrier statistics
// are available for it, otherwise the fallback.
inline double direction_horizon(const BarrierStats* stats, int y, int y_prime, double scale, double fallback) {
  if (stats == nullptr) return fallback;
  const auto* p = stats->find(y, y_prime);
  if (p == nullptr || p->count == 0 || !std::isfinite(p->mean) || p->mean <= 0.0) return fallback;
  return scale * p->mean;
}

// ---------------------------------------------------------------------------
// Refinement ablation

struct AblationArm {
  std::vector<double> mmd2, knn1, knn5, knn10;  // one entry per trial
};

struct AblationClass {
  int target = 0;
  AblationArm refined, unrefined;
  std::vector<int> n_generated;  // per trial
  double bandwidth = 0.0;
  int wins = 0;  // trials where refinement lowers both MMD^2 and the 1-NN distance
};

struct AblationConfig {
  SdeConfig sde;
  int refine_steps = 50;
  double t_sde_scale = 1.5;
  int sources_per_direction = 40;
  int trials = 3;
};

// For every target class, SDE endpoints from correctly classified source
// points of the neighbouring classes are compared with real target-class
// points, with and without the partial reverse chain. One kernel bandwidth
// per class (median heuristic on the reference set) serves both arms.
inline std::vector<AblationClass> refinement_ablation(const Dataset& sources, const Dataset& reference,
                                                      const ScoreModel& model, const Classifier& c_star,
                                                      const Codec& codec, const BarrierStats* stats,
                                                      const AblationConfig& cfg, std::uint64_t seed, int jobs = 1) {
  require(cfg.trials >= 1 && cfg.sources_per_direction >= 1, Errc::invalid_argument, "ablation config");
  const int K = sources.num_classes;
  struct Job {
    int trial, source, target;
    std::size_t index;
    double horizon;
  };
  std::vector<Job> work;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    for (int c = 0; c < K; ++c) {
      for (int s : {c - 1, c + 1}) {
        if (s < 0 || s >= K) continue;
        std::vector<std::size_t> eligible;
        for (auto i : sources.indices_of(s))
          if (predict(c_star, codec.decode(sources.points[i].z)) == s) eligible.push_back(i);
        Rng rng(derive_seed(seed, "ablation-select",
                            static_cast<std::uint64_t>(trial) * 1000000 + static_cast<std::uint64_t>(s) * 1000 +
                                static_cast<std::uint64_t>(c)));
        rng.shuffle(eligible);
        eligible.resize(std::min(eligible.size(), static_cast<std::size_t>(cfg.sources_per_direction)));
        std::sort(eligible.begin(), eligible.end());
        const double h = direction_horizon(stats, s, c, cfg.t_sde_scale, cfg.sde.T_sde);
        for (auto i : eligible) work.push_back({trial, s, c, i, h});
      }
    }
  }

  std::vector<Vec> raw(work.size()), refined(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t j) {
    const auto& w = work[j];
    SdeConfig sde = cfg.sde;
    sde.T_sde = w.horizon;
    const std::uint64_t key = static_cast<std::uint64_t>(w.trial) * 1000000000ULL +
                              static_cast<std::uint64_t>(w.source) * 1000000ULL +
                              static_cast<std::uint64_t>(w.target) * 10000ULL + w.index;
    sde.seed = derive_seed(seed, "ablation-sde", key);
    const Vec z0 = sources.points[w.index].z;
    raw[j] = integrate_endpoint(model, c_star, codec, z0, w.source, w.target, sde,
                                WienerPath::generate(sde.seed, sde.N_sde, static_cast<int>(z0.size())));
    refined[j] = refine(model, raw[j], cfg.refine_steps, derive_seed(seed, "ablation-refine", key));
  });

  std::vector<AblationClass> out;
  for (int c = 0; c < K; ++c) {
    AblationClass ac;
    ac.target = c;
    const auto ref = reference.vectors_of(c);
    require(!ref.empty(), Errc::empty_input, "no reference points for class " + std::to_string(c));
    ac.bandwidth = median_heuristic(ref, std::span<const Vec>{});
    const auto bw = Bandwidth::fixed(ac.bandwidth);
    for (int trial = 0; trial < cfg.trials; ++trial) {
      std::vector<Vec> r, u;
      for (std::size_t j = 0; j < work.size(); ++j) {
        if (work[j].trial != trial || work[j].target != c) continue;
        r.push_back(refined[j]);
        u.push_back(raw[j]);
      }
      require(!r.empty(), Errc::empty_input, "no eligible sources for target class " + std::to_string(c));
      auto fill = [&](AblationArm& arm, const std::vector<Vec>& gen) {
        arm.mmd2.push_back(mmd2_rbf(gen, ref, bw));
        arm.knn1.push_back(knn_dist(gen, ref, 1));
        arm.knn5.push_back(knn_dist(gen, ref, std::min<int>(5, static_cast<int>(ref.size()))));
        arm.knn10.push_back(knn_dist(gen, ref, std::min<int>(10, static_cast<int>(ref.size()))));
      };
      fill(ac.refined, r);
      fill(ac.unrefined, u);
      ac.n_generated.push_back(static_cast<int>(r.size()));
      if (ac.refined.mmd2.back() < ac.unrefined.mmd2.back() && ac.refined.knn1.back() < ac.unrefined.knn1.back())
        ++ac.wins;
    }
    out.push_back(std::move(ac));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Workspace

class Workspace {
 public:
  Workspace(ExperimentConfig cfg, RunOptions opt)
      : cfg_(std::move(cfg)), opt_(opt), hash_(config_hash(cfg_)), root_(cfg_.run.out_dir) {}

  const ExperimentConfig& cfg() const { return cfg_; }
  const RunOptions& options() const { return opt_; }
  const std::string& hash() const { return hash_; }
  std::string provenance() const { return "config_hash=" + hash_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }
  bool exists(const std::string& rel) const { return fs::exists(path(rel)); }

  void write(const std::string& rel, std::string_view content) const {
    const auto p = path(rel);
    fs::create_directories(p.parent_path());
    write_file(p.string(), content);
  }

  void write_json(const std::string& rel, nlohmann::json j) const {
    j["config_hash"] = hash_;
    write(rel, j.dump(2) + "\n");
  }

  void echo_config() const { write("config.resolved.ini", "# " + provenance() + "\n" + to_ini(cfg_)); }

  std::string read(const std::string& rel, const std::string& producer) const {
    const auto p = path(rel);
    if (!fs::exists(p)) fail(Errc::missing_artifact, rel + " not found under " + root_.string() + "; run `" + producer + "` first");
    return read_file(p.string());
  }

  std::uint64_t seed(std::string_view site) const { return derive_seed(cfg_.run.seed, site); }

 private:
  ExperimentConfig cfg_;
  RunOptions opt_;
  std::string hash_;
  fs::path root_;
};

// Hash recorded in the first `# config_hash=...` line of a CSV, if any.
inline std::optional<std::string> csv_config_hash(std::string_view text) {
  const auto nl = text.find('\n');
  const auto first = trim(text.substr(0, nl));
  const std::string_view tag = "# config_hash=";
  if (first.substr(0, tag.size()) != tag) return std::nullopt;
  const auto rest = first.substr(tag.size());
  return std::string(rest.substr(0, rest.find(' ')));
}

struct DataBundle {
  Dataset train, val, test;  // data space
  Codec codec;
  GmmOracle oracle;
};

inline DataBundle load_data(const Workspace& ws) {
  const int K = ws.cfg().data.classes;
  DataBundle b{dataset_from_csv(ws.read("data/train.csv", "gen-data"), K, Split::train),
               dataset_from_csv(ws.read("data/val.csv", "gen-data"), K, Split::val),
               dataset_from_csv(ws.read("data/test.csv", "gen-data"), K, Split::test),
               Codec::from_json(nlohmann::json::parse(ws.read("data/codec.json", "gen-data"))),
               GmmOracle::from_json(nlohmann::json::parse(ws.read("data/oracle.json", "gen-data")).at("oracle"))};
  return b;
}

inline Checkpoint load_ckpt(const Workspace& ws, const std::string& rel, const std::string& producer) {
  return decode_checkpoint(ws.read(rel, producer));
}

inline ScoreModel load_score(const Workspace& ws) {
  return score_model_from_checkpoint(load_ckpt(ws, "models/score.ckpt", "train-score"));
}

inline Classifier load_c_star(const Workspace& ws) {
  auto c = classifier_from_checkpoint(load_ckpt(ws, "models/classifier.ckpt", "train-classifier"));
  if (!c.frozen()) c.freeze();
  return c;
}

inline std::optional<BarrierStats> load_barrier_stats(const Workspace& ws) {
  if (!ws.exists("barrier/stats.csv")) return std::nullopt;
  return barrier_stats_from_csv(ws.read("barrier/stats.csv", "probe-barrier"));
}

inline nlohmann::json ckpt_meta(const Workspace& ws, nlohmann::json meta) {
  meta["config_hash"] = ws.hash();
  return meta;
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns a JSON summary for stdout.

inline nlohmann::json cmd_gen_data(const Workspace& ws) {
  const auto& c = ws.cfg();
  const auto spec = chain_spec(c);
  const auto oracle = make_grade_chain_oracle(spec);
  const auto train = sample_dataset(oracle, class_sizes(spec, c.data.n_train), Split::train, spec.seed);
  const auto val = sample_dataset(oracle, class_sizes(spec, c.data.n_val), Split::val, spec.seed);
  const auto test = sample_dataset(oracle, class_sizes(spec, c.data.n_test), Split::test, spec.seed);
  validate(train);
  const Codec codec = c.data.codec == "affine" ? Codec::fit_affine(train) : Codec::identity(c.data.dim);
  ws.write("data/train.csv", dataset_to_csv(train, ws.provenance()));
  ws.write("data/val.csv", dataset_to_csv(val, ws.provenance()));
  ws.write("data/test.csv", dataset_to_csv(test, ws.provenance()));
  ws.write_json("data/oracle.json", {{"oracle", oracle.to_json()}});
  ws.write_json("data/codec.json", codec.to_json());
  return {{"train", train.size()}, {"val", val.size()}, {"test", test.size()}, {"classes", c.data.classes}};
}

inline nlohmann::json cmd_train_score(const Workspace& ws) {
  const auto data = load_data(ws);
  const auto latent = encode_dataset(data.train, data.codec);
  const auto model = train_score(latent, schedule_of(ws.cfg()), score_train_config(ws.cfg()), ws.seed("score"));
  ws.write("models/score.ckpt", encode_checkpoint(model.net, ckpt_meta(ws, score_checkpoint_meta(model))));
  std::string trace = "# " + ws.provenance() + "\niteration,mean_loss\n";
  const std::size_t window = 100;
  for (std::size_t i = 0; i < model.loss_trace.size(); i += window) {
    const std::size_t n = std::min(window, model.loss_trace.size() - i);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += model.loss_trace[i + j];
    trace += std::to_string(i + n) + "," + format_double(s / static_cast<double>(n)) + "\n";
  }
  ws.write("models/score_loss.csv", trace);
  const double last = model.loss_trace.empty() ? 0.0 : model.loss_trace.back();
  return {{"iterations", model.loss_trace.size()}, {"final_loss", last}, {"checksum", param_checksum(model.net.params())}};
}

inline nlohmann::json cmd_train_classifier(const Workspace& ws) {
  const auto data = load_data(ws);
  auto c = train_classifier(data.train, data.val, classifier_train_config(ws.cfg()), ws.seed("classifier"));
  c.freeze();
  ws.write("models/classifier.ckpt", encode_checkpoint(c.net(), ckpt_meta(ws, classifier_checkpoint_meta(c))));
  return {{"val_accuracy", c.val_accuracy}, {"test_accuracy", accuracy(c, data.test)}, {"checksum", c.checksum()}};
}

inline nlohmann::json cmd_generate(const Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto data = load_data(ws);
  const auto model = load_score(ws);
  const auto c_star = load_c_star(ws);
  const auto stats = load_barrier_stats(ws);
  const auto test = encode_dataset(data.test, data.codec);
  const int K = test.num_classes;

  std::vector<std::size_t> inputs;
  if (cfg.generate.input_id >= 0) {
    require(static_cast<std::size_t>(cfg.generate.input_id) < test.size(), Errc::out_of_range,
            "generate.input_id outside the test split");
    inputs.push_back(static_cast<std::size_t>(cfg.generate.input_id));
  } else {
    // correctly classified points, taken round-robin over classes
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(K));
    for (int c = 0; c < K; ++c)
      for (auto i : test.indices_of(c))
        if (predict(c_star, data.codec.decode(test.points[i].z)) == c) by_class[static_cast<std::size_t>(c)].push_back(i);
    const auto want = static_cast<std::size_t>(cfg.generate.n_inputs);
    for (std::size_t r = 0; inputs.size() < want; ++r) {
      bool any = false;
      for (const auto& v : by_class)
        if (r < v.size() && inputs.size() < want) inputs.push_back(v[r]), any = true;
      if (!any) break;
    }
    std::sort(inputs.begin(), inputs.end());
  }
  struct Job {
    std::size_t index;
    int y, y_prime;
    double horizon;
  };
  std::vector<Job> work;
  for (auto i : inputs) {
    const int y = test.points[i].label;
    for (int yp : {y - 1, y + 1})
      if (yp >= 0 && yp < K)
        work.push_back({i, y, yp, direction_horizon(stats ? &*stats : nullptr, y, yp, cfg.sde.t_sde_scale, cfg.sde.t_sde)});
  }
  std::vector<Trajectory> trajs(work.size());
  std::vector<std::vector<CounterfactualSample>> cfs(work.size());
  parallel_for(work.size(), ws.options().jobs, [&](std::size_t j) {
    const auto& w = work[j];
    SdeConfig sde = sde_config(cfg);
    sde.T_sde = w.horizon;
    sde.seed = derive_seed(ws.seed("generate"), "input",
                           static_cast<std::uint64_t>(w.index) * 1000 + static_cast<std::uint64_t>(w.y_prime));
    trajs[j] = integrate(model, c_star, data.codec, test.points[w.index].z, w.y, w.y_prime, sde);
    cfs[j] = extract_counterfactuals(trajs[j], cfg.sde.every, cfg.sde.refine_steps, model, c_star, data.codec, sde.seed);
    for (auto& cf : cfs[j]) cf.source_id = static_cast<std::int64_t>(w.index);
  });

  std::vector<CounterfactualSample> all;
  auto rows = nlohmann::json::array();
  for (std::size_t j = 0; j < work.size(); ++j) {
    const auto& w = work[j];
    const std::string name = "generate/traj_" + std::to_string(w.index) + "_" + std::to_string(w.y) + "to" +
                             std::to_string(w.y_prime) + ".csv";
    ws.write(name, trajectory_to_csv(trajs[j], ws.provenance()));
    int hits = 0;
    for (const auto& cf : cfs[j]) hits += cf.y_prime == w.y_prime;
    const auto& last = trajs[j].states.back();
    rows.push_back({{"input_id", w.index},
                    {"y", w.y},
                    {"y_prime", w.y_prime},
                    {"T_sde", w.horizon},
                    {"final_target_prob", last.probs[w.y_prime]},
                    {"crossed", last.probs[w.y_prime] > 0.5},
                    {"counterfactuals", cfs[j].size()},
                    {"labelled_target", hits},
                    {"trajectory", name}});
    for (auto& cf : cfs[j]) all.push_back(std::move(cf));
  }
  ws.write("generate/counterfactuals.csv", cf_set_to_csv(all, test.dim, ws.provenance()));
  nlohmann::json summary{{"trajectories", rows}, {"counterfactuals", all.size()}, {"sde", to_json(sde_config(cfg))}};
  ws.write_json("generate/summary.json", summary);
  return {{"trajectories", work.size()}, {"counterfactuals", all.size()}};
}

inline nlohmann::json cmd_probe_barrier(const Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto model = load_score(ws);
  const auto c_star = load_c_star(ws);
  const auto data = load_data(ws);
  const auto test = encode_dataset(data.test, data.codec);
  const auto run = probe_all(test, adjacent_pairs(test.num_classes), model, c_star, data.codec, sde_config(cfg),
                             probe_config(cfg), ws.seed("barrier"), ws.options().jobs);
  ws.write("barrier/results.csv", barrier_results_to_csv(run.results, ws.provenance()));
  ws.write("barrier/stats.csv", barrier_stats_to_csv(run.stats, ws.provenance()));
  std::vector<PairStats> up, down;
  for (const auto& p : run.stats.pairs) (p.y < p.y_prime ? up : down).push_back(p);
  SvgOptions o;
  o.provenance = ws.provenance();
  o.deterministic = ws.options().deterministic;
  o.title = "minimum crossing time, progression";
  ws.write("barrier/progression.svg", svg_barrier_boxplot(up, o));
  o.title = "minimum crossing time, regression";
  ws.write("barrier/regression.svg", svg_barrier_boxplot(down, o));
  auto pairs = nlohmann::json::array();
  for (const auto& p : run.stats.pairs)
    pairs.push_back({{"pair", std::to_string(p.y) + "->" + std::to_string(p.y_prime)},
                     {"count", p.count},
                     {"failures", p.failures},
                     {"mean", p.count ? nlohmann::json(p.mean) : nlohmann::json("inf")}});
  nlohmann::json summary{{"pairs", pairs},
                         {"iterations", cfg.barrier.iterations},
                         {"iteration_mode", cfg.barrier.iteration_mode},
                         {"T_max", cfg.barrier.t_max}};
  ws.write_json("barrier/summary.json", summary);
  return summary;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline nlohmann::json cmd_self_correct(const Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto data = load_data(ws);
  const auto model = load_score(ws);
  const auto c_star = load_c_star(ws);
  const auto stats = load_barrier_stats(ws);
  if (!stats) fail(Errc::missing_barrier_stats, "barrier/stats.csv not found; run `probe-barrier` first");
  const auto checksum_before = c_star.checksum();

  const auto latent_train = encode_dataset(data.train, data.codec);
  const auto cf_set = build_cf_dataset(latent_train, model, c_star, data.codec, *stats, cf_build_config(cfg),
                                       ws.seed("cf-build"), ws.options().jobs);
  ws.write("selfcorrect/cf_set.csv", cf_set_to_csv(cf_set, latent_train.dim, ws.provenance()));

  const int trials = cfg.selfcorrect.trials;
  std::vector<std::optional<std::pair<Classifier, SelfCorrectReport>>> results(static_cast<std::size_t>(trials));
  parallel_for(results.size(), ws.options().jobs, [&](std::size_t t) {
    results[t] = self_correct(c_star, c_star, data.train, data.val, cf_set, self_correct_config(cfg),
                              derive_seed(ws.seed("self-correct"), "trial", t));
  });

  const double base_acc = accuracy(c_star, data.test);
  const double base_pair = mean_adjacent_pair_accuracy(c_star, data.test);
  std::vector<double> tuned_pair, tuned_acc, base_pairs;
  auto trial_rows = nlohmann::json::array();
  for (int t = 0; t < trials; ++t) {
    auto& [c, report] = *results[static_cast<std::size_t>(t)];
    c.freeze();
    const std::string ck = "selfcorrect/trial" + std::to_string(t) + ".ckpt";
    nlohmann::json meta = classifier_checkpoint_meta(c);
    meta["role"] = "classifier";
    meta["trial"] = t;
    ws.write(ck, encode_checkpoint(c.net(), ckpt_meta(ws, meta)));
    tuned_acc.push_back(accuracy(c, data.test));
    tuned_pair.push_back(mean_adjacent_pair_accuracy(c, data.test));
    base_pairs.push_back(base_pair);
    auto row = report.to_json();
    row["trial"] = t;
    row["test_accuracy"] = tuned_acc.back();
    row["test_pair_accuracy"] = tuned_pair.back();
    row["pair_delta"] = tuned_pair.back() - base_pair;
    trial_rows.push_back(row);
  }
  int improved = 0;
  for (double v : tuned_pair) improved += v > base_pair;
  nlohmann::json summary{{"baseline_test_accuracy", base_acc},
                         {"baseline_test_pair_accuracy", base_pair},
                         {"mean_test_accuracy", mean_of(tuned_acc)},
                         {"mean_test_pair_accuracy", mean_of(tuned_pair)},
                         {"mean_pair_delta", mean_of(tuned_pair) - base_pair},
                         {"trials_improved", improved},
                         {"counterfactuals", cf_set.size()},
                         {"c_star_checksum_before", checksum_before},
                         {"c_star_checksum_after", c_star.checksum()},
                         {"c_star_unchanged", checksum_before == c_star.checksum()},
                         {"trials", trial_rows}};
  if (trials >= 2) {
    const auto tt = t_test_ind(tuned_pair, base_pairs);
    summary["welch_t"] = std::isfinite(tt.t) ? nlohmann::json(tt.t) : nlohmann::json(format_double(tt.t));
    summary["welch_p"] = tt.p;
  }
  ws.write_json("selfcorrect/report.json", summary);
  return summary;
}

inline nlohmann::json cmd_evaluate(const Workspace& ws) {
  const auto& cfg = ws.cfg();
  std::map<std::string, std::string> hashes;
  for (const auto* rel : {"data/train.csv", "data/test.csv"})
    if (auto h = csv_config_hash(ws.read(rel, "gen-data"))) hashes[rel] = *h;
  const auto score_ck = load_ckpt(ws, "models/score.ckpt", "train-score");
  const auto cls_ck = load_ckpt(ws, "models/classifier.ckpt", "train-classifier");
  hashes["models/score.ckpt"] = score_ck.meta.value("config_hash", "");
  hashes["models/classifier.ckpt"] = cls_ck.meta.value("config_hash", "");
  std::vector<Checkpoint> tuned;
  for (int t = 0;; ++t) {
    const std::string rel = "selfcorrect/trial" + std::to_string(t) + ".ckpt";
    if (!ws.exists(rel)) break;
    tuned.push_back(load_ckpt(ws, rel, "self-correct"));
    hashes[rel] = tuned.back().meta.value("config_hash", "");
  }
  std::vector<std::string> mismatched;
  for (const auto& [rel, h] : hashes)
    if (h != ws.hash()) mismatched.push_back(rel);
  if (!mismatched.empty() && !ws.options().force) {
    std::string list;
    for (const auto& m : mismatched) list += (list.empty() ? "" : ", ") + m;
    fail(Errc::mixed_config_hash, "artifacts from another configuration: " + list + " (use --force to accept)");
  }

  const auto data = load_data(ws);
  const auto model = score_model_from_checkpoint(score_ck);
  auto c_star = classifier_from_checkpoint(cls_ck);
  MetricsReport report;
  report.metadata = {{"config_hash", ws.hash()},
                     {"forced", !mismatched.empty()},
                     {"mmd_scale", "raw (no 1e-2 scaling)"},
                     {"score_t", cfg.sde.t_score}};
  const long long n_test = static_cast<long long>(data.test.size());
  report.set("classifier.test_accuracy", accuracy(c_star, data.test), n_test);
  report.set("classifier.test_pair_accuracy", mean_adjacent_pair_accuracy(c_star, data.test), n_test);
  if (!tuned.empty()) {
    std::vector<double> acc, pair;
    for (const auto& ck : tuned) {
      const auto c = classifier_from_checkpoint(ck);
      acc.push_back(accuracy(c, data.test));
      pair.push_back(mean_adjacent_pair_accuracy(c, data.test));
    }
    report.set("selfcorrect.test_accuracy", metric_over_trials(acc, n_test));
    report.set("selfcorrect.test_pair_accuracy", metric_over_trials(pair, n_test));
  }
  if (data.codec.mode() == Codec::Mode::identity) {
    std::vector<Vec> pts;
    for (const auto& p : data.test.points) pts.push_back(p.z);
    const auto kept = above_density_quantile(data.oracle, pts, 0.1);
    const int t = cfg.sde.t_score;
    report.set("score.cosine_oracle", score_cosine(model, data.oracle, kept, t), static_cast<long long>(kept.size()));
    const auto noisy = data.oracle.diffused(model.schedule.alpha_bar(t));
    report.set("score.cosine_diffused_oracle", score_cosine(model, noisy, kept, t), static_cast<long long>(kept.size()));
  }
  const auto samples = sample(model, static_cast<int>(data.test.size()), ws.seed("evaluate-sample"), ws.options().jobs);
  std::vector<Vec> real;
  for (const auto& p : encode_dataset(data.test, data.codec).points) real.push_back(p.z);
  report.set("score.sample_mmd2", mmd2_rbf(samples, real, Bandwidth::median()), static_cast<long long>(samples.size()));

  ws.write_json("eval/metrics.json", report.to_json());
  ws.write("eval/metrics.csv", report.to_csv(ws.provenance()));
  return report.to_json();
}

inline nlohmann::json cmd_ablate_refinement(const Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto data = load_data(ws);
  const auto model = load_score(ws);
  const auto c_star = load_c_star(ws);
  const auto stats = load_barrier_stats(ws);
  AblationConfig ac;
  ac.sde = sde_config(cfg);
  ac.refine_steps = cfg.sde.refine_steps;
  ac.t_sde_scale = cfg.sde.t_sde_scale;
  ac.sources_per_direction = cfg.ablation.sources_per_direction;
  ac.trials = cfg.ablation.trials;
  const auto classes = refinement_ablation(encode_dataset(data.test, data.codec), encode_dataset(data.train, data.codec),
                                           model, c_star, data.codec, stats ? &*stats : nullptr, ac,
                                           ws.seed("ablation"), ws.options().jobs);
  std::string csv = "# " + ws.provenance() + "\ntarget,arm,mmd2_mean,mmd2_std,knn1_mean,knn5_mean,knn10_mean,trials\n";
  auto rows = nlohmann::json::array();
  for (const auto& c : classes) {
    for (const auto* arm : {"W/", "W/O"}) {
      const auto& a = std::string(arm) == "W/" ? c.refined : c.unrefined;
      const auto n = static_cast<long long>(c.n_generated.empty() ? 0 : c.n_generated.front());
      const auto mmd = metric_over_trials(a.mmd2, n);
      csv += std::to_string(c.target) + "," + arm + "," + format_double(mmd.mean) + "," +
             (mmd.std ? format_double(*mmd.std) : std::string()) + "," + format_double(mean_of(a.knn1)) + "," +
             format_double(mean_of(a.knn5)) + "," + format_double(mean_of(a.knn10)) + "," + std::to_string(mmd.trials) +
             "\n";
      rows.push_back({{"target", c.target},
                      {"arm", arm},
                      {"mmd2", a.mmd2},
                      {"knn1", a.knn1},
                      {"knn5", a.knn5},
                      {"knn10", a.knn10},
                      {"bandwidth", c.bandwidth},
                      {"generated_per_trial", c.n_generated}});
    }
  }
  ws.write("ablation/report.csv", csv);
  int all_ok = 1;
  auto wins = nlohmann::json::object();
  for (const auto& c : classes) {
    wins[std::to_string(c.target)] = c.wins;
    all_ok &= 2 * c.wins > ac.trials;
  }
  nlohmann::json summary{{"rows", rows}, {"wins", wins}, {"refinement_better_everywhere", all_ok == 1},
                         {"mmd_scale", "raw (no 1e-2 scaling)"}};
  ws.write_json("ablation/report.json", summary);
  return {{"wins", wins}, {"refinement_better_everywhere", all_ok == 1}};
}

inline nlohmann::json cmd_plot(const Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto data = load_data(ws);
  const auto latent_train = encode_dataset(data.train, data.codec);
  SvgOptions o;
  o.provenance = ws.provenance();
  o.deterministic = ws.options().deterministic;
  o.title = "latent space with counterfactual trajectories";
  std::vector<Trajectory> trajs;
  nlohmann::json summary{{"latent", "plots/latent.svg"}};
  if (ws.exists("models/score.ckpt") && ws.exists("models/classifier.ckpt")) {
    const auto model = load_score(ws);
    const auto c_star = load_c_star(ws);
    const auto stats = load_barrier_stats(ws);
    const auto test = encode_dataset(data.test, data.codec);
    const auto pairs = adjacent_pairs(test.num_classes);
    trajs.resize(pairs.size());
    std::vector<std::optional<std::size_t>> src(pairs.size());
    for (std::size_t j = 0; j < pairs.size(); ++j)
      for (auto i : test.indices_of(pairs[j].first))
        if (predict(c_star, data.codec.decode(test.points[i].z)) == pairs[j].first) {
          src[j] = i;
          break;
        }
    parallel_for(pairs.size(), ws.options().jobs, [&](std::size_t j) {
      if (!src[j]) return;
      const auto [y, yp] = pairs[j];
      SdeConfig sde = sde_config(cfg);
      sde.T_sde = direction_horizon(stats ? &*stats : nullptr, y, yp, cfg.sde.t_sde_scale, cfg.sde.t_sde);
      sde.seed = derive_seed(ws.seed("plot"), "pair", j);
      trajs[j] = integrate(model, c_star, data.codec, test.points[*src[j]].z, y, yp, sde);
    });
    trajs.erase(std::remove_if(trajs.begin(), trajs.end(), [](const Trajectory& t) { return t.states.empty(); }),
                trajs.end());
    if (stats) {
      SvgOptions b = o;
      b.title = "minimum crossing time per direction";
      ws.write("plots/barrier.svg", svg_barrier_boxplot(stats->pairs, b));
      summary["barrier"] = "plots/barrier.svg";
    }
  }
  ws.write("plots/latent.svg", svg_latent_scatter(latent_train, trajs, o));
  summary["trajectories"] = trajs.size();
  return summary;
}

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"gen-data",      "train-score", "train-classifier",
                                                 "generate",      "probe-barrier", "self-correct",
                                                 "evaluate",      "ablate-refinement", "plot"};
  return names;
}

// Runs one subcommand; errors propagate as dca::Error.
inline nlohmann::json run_subcommand(const std::string& name, const ExperimentConfig& cfg, const RunOptions& opt) {
  const Workspace ws(cfg, opt);
  ws.echo_config();
  nlohmann::json out;
  if (name == "gen-data") out = cmd_gen_data(ws);
  else if (name == "train-score") out = cmd_train_score(ws);
  else if (name == "train-classifier") out = cmd_train_classifier(ws);
  else if (name == "generate") out = cmd_generate(ws);
  else if (name == "probe-barrier") out = cmd_probe_barrier(ws);
  else if (name == "self-correct") out = cmd_self_correct(ws);
  else if (name == "evaluate") out = cmd_evaluate(ws);
  else if (name == "ablate-refinement") out = cmd_ablate_refinement(ws);
  else if (name == "plot") out = cmd_plot(ws);
  else fail(Errc::invalid_argument, "unknown subcommand '" + name + "'");
  return {{"status", "ok"}, {"subcommand", name}, {"config_hash", ws.hash()}, {"result", out}};
}

}  // namespace dca::app
