#pragma once

// Experiment configuration: INI-style sections of `key = value` lines,
// overridable with `section.key=value` pairs from the command line.

#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dca/core/error.hpp"
#include "dca/core/rng.hpp"
#include "dca/core/text.hpp"

namespace dca::app {

struct ExperimentConfig {
  struct Data {
    int classes = 5;
    int dim = 2;
    int n_train = 1000;
    int n_val = 200;
    int n_test = 200;
    double spread = 0.4;
    double step = 2.0;
    double bend = 1.5707963267948966;
    std::vector<double> spacing;
    std::vector<double> spread_scale;
    std::vector<double> count_scale;
    std::string codec = "identity";
  } data;

  struct Schedule {
    int T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
  } schedule;

  struct Score {
    std::vector<int> hidden{64, 64, 64};
    std::string activation = "silu";
    int time_embed = 32;
    int iterations = 30000;
    double lr = 1e-3;
    int batch = 64;
  } score;

  struct Classifier {
    std::vector<int> hidden{32, 32};
    std::string activation = "relu";
    int epochs = 30;
    double lr = 1e-3;
    int batch = 64;
  } classifier;

  struct Sde {
    int n_steps = 1000;
    double lambda = 0.7;
    double kappa = 2.5;
    int t_score = 20;
    int refine_steps = 50;
    int every = 100;
    double t_sde_scale = 1.5;
    double t_sde = 1.0;  // horizon used by `generate` when no barrier statistics exist
  } sde;

  struct Barrier {
    double t_max = 2.5;
    int iterations = 30;
    std::string iteration_mode = "bisection";  // or "evaluations"
    int n_per_pair = 20;
  } barrier;

  struct SelfCorrect {
    int epochs = 20;
    double lr = 1e-3;
    int batch = 64;
    int trials = 3;
    int sources_per_direction = 40;
    bool soft_labels = false;
    std::string align_space = "prob";  // or "logit"
  } selfcorrect;

  struct Generate {
    int input_id = -1;  // -1: a batch of n_inputs test points
    int n_inputs = 5;
  } generate;

  struct Ablation {
    int sources_per_direction = 40;
    int trials = 3;
  } ablation;

  struct Run {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
  } run;
};

namespace detail {

inline std::string to_text(int v) { return std::to_string(v); }
inline std::string to_text(std::uint64_t v) { return std::to_string(v); }
inline std::string to_text(double v) { return format_double(v); }
inline std::string to_text(bool v) { return v ? "true" : "false"; }
inline std::string to_text(const std::string& v) { return v; }
template <class T>
std::string to_text(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + to_text(v[i]);
  return s;
}

inline void from_text(std::string_view s, int& v) { v = static_cast<int>(parse_int(s)); }
inline void from_text(std::string_view s, std::uint64_t& v) {
  const long long x = parse_int(s);
  require(x >= 0, Errc::out_of_range, "seed must be non-negative");
  v = static_cast<std::uint64_t>(x);
}
inline void from_text(std::string_view s, double& v) { v = parse_double(s); }
inline void from_text(std::string_view s, bool& v) {
  if (s == "true" || s == "1") v = true;
  else if (s == "false" || s == "0") v = false;
  else fail(Errc::invalid_argument, "not a boolean: '" + std::string(s) + "'");
}
inline void from_text(std::string_view s, std::string& v) { v = std::string(s); }
template <class T>
void from_text(std::string_view s, std::vector<T>& v) {
  v.clear();
  if (trim(s).empty()) return;
  for (const auto& part : split(s, ',')) {
    T x{};
    from_text(trim(part), x);
    v.push_back(x);
  }
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Section, class T>
Field field(std::string key, Section ExperimentConfig::*section, T Section::*member) {
  return {std::move(key),
          [section, member](ExperimentConfig& c, std::string_view s) { from_text(s, (c.*section).*member); },
          [section, member](const ExperimentConfig& c) { return to_text((c.*section).*member); }};
}

}  // namespace detail

inline const std::vector<detail::Field>& config_fields() {
  using C = ExperimentConfig;
  using detail::field;
  static const std::vector<detail::Field> fields = {
      field("data.classes", &C::data, &C::Data::classes),
      field("data.dim", &C::data, &C::Data::dim),
      field("data.n_train", &C::data, &C::Data::n_train),
      field("data.n_val", &C::data, &C::Data::n_val),
      field("data.n_test", &C::data, &C::Data::n_test),
      field("data.spread", &C::data, &C::Data::spread),
      field("data.step", &C::data, &C::Data::step),
      field("data.bend", &C::data, &C::Data::bend),
      field("data.spacing", &C::data, &C::Data::spacing),
      field("data.spread_scale", &C::data, &C::Data::spread_scale),
      field("data.count_scale", &C::data, &C::Data::count_scale),
      field("data.codec", &C::data, &C::Data::codec),
      field("schedule.T", &C::schedule, &C::Schedule::T),
      field("schedule.beta_start", &C::schedule, &C::Schedule::beta_start),
      field("schedule.beta_end", &C::schedule, &C::Schedule::beta_end),
      field("score.hidden", &C::score, &C::Score::hidden),
      field("score.activation", &C::score, &C::Score::activation),
      field("score.time_embed", &C::score, &C::Score::time_embed),
      field("score.iterations", &C::score, &C::Score::iterations),
      field("score.lr", &C::score, &C::Score::lr),
      field("score.batch", &C::score, &C::Score::batch),
      field("classifier.hidden", &C::classifier, &C::Classifier::hidden),
      field("classifier.activation", &C::classifier, &C::Classifier::activation),
      field("classifier.epochs", &C::classifier, &C::Classifier::epochs),
      field("classifier.lr", &C::classifier, &C::Classifier::lr),
      field("classifier.batch", &C::classifier, &C::Classifier::batch),
      field("sde.n_steps", &C::sde, &C::Sde::n_steps),
      field("sde.lambda", &C::sde, &C::Sde::lambda),
      field("sde.kappa", &C::sde, &C::Sde::kappa),
      field("sde.t_score", &C::sde, &C::Sde::t_score),
      field("sde.refine_steps", &C::sde, &C::Sde::refine_steps),
      field("sde.every", &C::sde, &C::Sde::every),
      field("sde.t_sde_scale", &C::sde, &C::Sde::t_sde_scale),
      field("sde.t_sde", &C::sde, &C::Sde::t_sde),
      field("barrier.t_max", &C::barrier, &C::Barrier::t_max),
      field("barrier.iterations", &C::barrier, &C::Barrier::iterations),
      field("barrier.iteration_mode", &C::barrier, &C::Barrier::iteration_mode),
      field("barrier.n_per_pair", &C::barrier, &C::Barrier::n_per_pair),
      field("selfcorrect.epochs", &C::selfcorrect, &C::SelfCorrect::epochs),
      field("selfcorrect.lr", &C::selfcorrect, &C::SelfCorrect::lr),
      field("selfcorrect.batch", &C::selfcorrect, &C::SelfCorrect::batch),
      field("selfcorrect.trials", &C::selfcorrect, &C::SelfCorrect::trials),
      field("selfcorrect.sources_per_direction", &C::selfcorrect, &C::SelfCorrect::sources_per_direction),
      field("selfcorrect.soft_labels", &C::selfcorrect, &C::SelfCorrect::soft_labels),
      field("selfcorrect.align_space", &C::selfcorrect, &C::SelfCorrect::align_space),
      field("generate.input_id", &C::generate, &C::Generate::input_id),
      field("generate.n_inputs", &C::generate, &C::Generate::n_inputs),
      field("ablation.sources_per_direction", &C::ablation, &C::Ablation::sources_per_direction),
      field("ablation.trials", &C::ablation, &C::Ablation::trials),
      field("run.seed", &C::run, &C::Run::seed),
      field("run.out_dir", &C::run, &C::Run::out_dir),
  };
  return fields;
}

inline void set_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : config_fields()) {
    if (f.key == key) {
      f.set(cfg, trim(value));
      return;
    }
  }
  fail(Errc::unknown_key, "unknown configuration key '" + std::string(key) + "'");
}

inline std::string get_value(const ExperimentConfig& cfg, std::string_view key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f.get(cfg);
  fail(Errc::unknown_key, "unknown configuration key '" + std::string(key) + "'");
}

inline void validate(const ExperimentConfig& c) {
  auto check = [](bool ok, const std::string& what) { require(ok, Errc::out_of_range, what); };
  check(c.data.classes >= 2, "data.classes must be >= 2");
  check(c.data.dim >= 2, "data.dim must be >= 2");
  check(c.data.n_train >= 1 && c.data.n_val >= 1 && c.data.n_test >= 1, "data.n_* must be >= 1");
  check(c.data.spread > 0.0, "data.spread must be > 0");
  check(c.data.step > 0.0, "data.step must be > 0");
  check(c.data.bend > 0.0 && c.data.bend <= 3.141592653589793, "data.bend must lie in (0, pi]");
  check(c.data.codec == "identity" || c.data.codec == "affine", "data.codec must be identity or affine");
  check(c.schedule.T >= 1, "schedule.T must be >= 1");
  check(c.schedule.beta_start > 0.0 && c.schedule.beta_start <= c.schedule.beta_end && c.schedule.beta_end < 1.0,
        "schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  check(!c.score.hidden.empty(), "score.hidden must list at least one width");
  check(c.score.activation == "relu" || c.score.activation == "silu", "score.activation must be relu or silu");
  check(c.score.time_embed >= 2 && c.score.time_embed % 2 == 0, "score.time_embed must be even and >= 2");
  check(c.score.iterations >= 0 && c.score.lr > 0.0 && c.score.batch >= 1, "score training values out of range");
  check(c.classifier.activation == "relu" || c.classifier.activation == "silu",
        "classifier.activation must be relu or silu");
  check(c.classifier.epochs >= 0 && c.classifier.lr > 0.0 && c.classifier.batch >= 1,
        "classifier training values out of range");
  check(c.sde.n_steps >= 1, "sde.n_steps must be >= 1");
  check(c.sde.lambda >= 0.0 && c.sde.lambda <= 1.0, "sde.lambda must lie in [0, 1]");
  check(c.sde.kappa >= 0.0, "sde.kappa must be >= 0");
  check(c.sde.t_score >= 1 && c.sde.t_score <= c.schedule.T, "sde.t_score must lie in 1..schedule.T");
  check(c.sde.refine_steps >= 1 && c.sde.refine_steps <= c.schedule.T, "sde.refine_steps must lie in 1..schedule.T");
  check(c.sde.every >= 1 && c.sde.n_steps % c.sde.every == 0, "sde.every must divide sde.n_steps");
  check(c.sde.t_sde_scale > 0.0, "sde.t_sde_scale must be > 0");
  check(c.sde.t_sde > 0.0, "sde.t_sde must be > 0");
  check(c.barrier.t_max > 0.0, "barrier.t_max must be > 0");
  check(c.barrier.iterations >= 1, "barrier.iterations must be >= 1");
  check(c.barrier.iteration_mode == "bisection" || c.barrier.iteration_mode == "evaluations",
        "barrier.iteration_mode must be bisection or evaluations");
  check(c.barrier.n_per_pair >= 0, "barrier.n_per_pair must be >= 0");
  check(c.selfcorrect.epochs >= 0 && c.selfcorrect.lr > 0.0 && c.selfcorrect.batch >= 1 && c.selfcorrect.trials >= 1,
        "selfcorrect values out of range");
  check(c.selfcorrect.sources_per_direction >= 0, "selfcorrect.sources_per_direction must be >= 0");
  check(c.selfcorrect.align_space == "prob" || c.selfcorrect.align_space == "logit",
        "selfcorrect.align_space must be prob or logit");
  check(c.generate.n_inputs >= 1, "generate.n_inputs must be >= 1");
  check(c.ablation.sources_per_direction >= 1 && c.ablation.trials >= 1, "ablation values out of range");
}

// Parses the text of a config file. Errors carry the 1-based line number.
inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::string section;
  int line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      require(line.back() == ']' && line.size() > 2, Errc::config_parse, where + "malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, Errc::config_parse, where + "expected 'key = value'");
    const auto key = std::string(trim(line.substr(0, eq)));
    require(!key.empty(), Errc::config_parse, where + "empty key");
    const auto full = section.empty() ? key : section + "." + key;
    try {
      set_value(cfg, full, line.substr(eq + 1));
    } catch (const Error& e) {
      fail(e.code() == Errc::unknown_key ? Errc::unknown_key : Errc::config_parse, where + e.message());
    }
  }
  return cfg;
}

// Applies `key=value` overrides after the file; later entries win.
inline void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos, Errc::config_parse, "override '" + o + "' is not key=value");
    try {
      set_value(cfg, trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
    } catch (const Error& e) {
      if (e.code() == Errc::unknown_key) throw;
      fail(Errc::config_parse, "override '" + o + "': " + e.message());
    }
  }
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  auto cfg = parse_config(read_file(path));
  apply_overrides(cfg, overrides);
  validate(cfg);
  return cfg;
}

// Canonical INI rendering; also the input to the config hash.
inline std::string to_ini(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : config_fields()) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

// Hash of every setting except the output location.
inline std::string config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.run.out_dir.clear();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(mix64(hash_label(to_ini(c)))));
  return buf;
}

}  // namespace dca::app
