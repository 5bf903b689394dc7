#pragma once

// Counterfactual augmentation and self-corrective fine-tuning.
//
// The augmentation set is generated from training points only: for every
// adjacent direction the SDE runs with a horizon of scale x (mean minimum
// crossing time), and refined intermediate states are labelled by C*.
// Fine-tuning minimises
//   L = L_ce / s_ce^2 + L_align / s_align^2 + log s_ce + log s_align
// over the network parameters and both log s, where L_align is the squared
// distance between C and C* outputs on the counterfactual inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dca/barrier.hpp"
#include "dca/classifier.hpp"
#include "dca/core/error.hpp"
#include "dca/core/parallel.hpp"
#include "dca/core/rng.hpp"
#include "dca/core/text.hpp"
#include "dca/diffusion.hpp"
#include "dca/nn.hpp"
#include "dca/sde.hpp"
#include "dca/synthdata.hpp"

namespace dca {

struct UncertaintyWeights {
  double log_sigma_ce = 0.0;
  double log_sigma_align = 0.0;
};

enum class AlignSpace { probabilities, logits };

struct LossOptions {
  bool soft_labels = false;  // CE on counterfactuals against the full C* distribution
  AlignSpace align_space = AlignSpace::probabilities;
};

struct CfBuildConfig {
  SdeConfig sde;  // horizon and seed are set per trajectory
  int every = 100;
  int refine_steps = 50;
  double t_sde_scale = 1.5;
  int sources_per_direction = 0;  // 0 = every training point of the source class
};

// Ordered by direction (adjacent_pairs order), then by source index.
inline std::vector<CounterfactualSample> build_cf_dataset(const Dataset& train, const ScoreModel& model,
                                                          const Classifier& c_star, const Codec& codec,
                                                          const BarrierStats& barrier, const CfBuildConfig& cfg,
                                                          std::uint64_t seed, int jobs = 1) {
  require(train.split == Split::train, Errc::precondition, "counterfactuals are built from the train split only");
  require(cfg.t_sde_scale > 0.0, Errc::invalid_argument, "t_sde_scale must be > 0");
  struct Job {
    int y, y_prime;
    std::size_t index;
    double horizon;
  };
  std::vector<Job> work;
  for (const auto& [y, yp] : adjacent_pairs(train.num_classes)) {
    auto idx = train.indices_of(y);
    if (idx.empty()) continue;
    const PairStats* s = barrier.find(y, yp);
    if (s == nullptr || s->count == 0 || !std::isfinite(s->mean) || s->mean <= 0.0)
      fail(Errc::missing_barrier_stats,
           "no finite mean minimum crossing time for " + std::to_string(y) + "->" + std::to_string(yp));
    if (cfg.sources_per_direction > 0 && idx.size() > static_cast<std::size_t>(cfg.sources_per_direction)) {
      Rng rng(derive_seed(seed, "cf-select", static_cast<std::uint64_t>(y) * 1000 + static_cast<std::uint64_t>(yp)));
      rng.shuffle(idx);
      idx.resize(static_cast<std::size_t>(cfg.sources_per_direction));
      std::sort(idx.begin(), idx.end());
    }
    for (auto i : idx) work.push_back({y, yp, i, cfg.t_sde_scale * s->mean});
  }

  std::vector<std::vector<CounterfactualSample>> per_job(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t j) {
    const auto& w = work[j];
    SdeConfig sde = cfg.sde;
    sde.T_sde = w.horizon;
    sde.seed = derive_seed(seed, "cf-sde", static_cast<std::uint64_t>(w.y) * 1000000000ULL +
                                                static_cast<std::uint64_t>(w.y_prime) * 100000000ULL + w.index);
    const auto traj = integrate(model, c_star, codec, train.points[w.index].z, w.y, w.y_prime, sde);
    auto samples = extract_counterfactuals(traj, cfg.every, cfg.refine_steps, model, c_star, codec, sde.seed);
    for (auto& cf : samples) cf.source_id = static_cast<std::int64_t>(w.index);
    per_job[j] = std::move(samples);
  });
  std::vector<CounterfactualSample> out;
  for (auto& v : per_job)
    for (auto& cf : v) out.push_back(std::move(cf));
  return out;
}

// Every counterfactual must come from a point of the given train split.
inline bool audit_split_provenance(const std::vector<CounterfactualSample>& cf_set, const Dataset& train) {
  if (train.split != Split::train) return cf_set.empty();
  for (const auto& cf : cf_set) {
    if (cf.source_id < 0 || static_cast<std::size_t>(cf.source_id) >= train.size()) return false;
    if (train.points[static_cast<std::size_t>(cf.source_id)].label != cf.y) return false;
  }
  return true;
}

// CSV `source_id,step,y,y_prime,t_used,z...`
inline std::string cf_set_to_csv(const std::vector<CounterfactualSample>& cf_set, int dim,
                                 const std::string& provenance = {}) {
  std::string out;
  if (!provenance.empty()) out += "# " + provenance + "\n";
  out += "source_id,step,y,y_prime,t_used";
  for (int i = 0; i < dim; ++i) out += ",z" + std::to_string(i);
  out += "\n";
  for (const auto& cf : cf_set) {
    out += std::to_string(cf.source_id) + "," + std::to_string(cf.step) + "," + std::to_string(cf.y) + "," +
           std::to_string(cf.y_prime) + "," + format_double(cf.t_used);
    for (Eigen::Index i = 0; i < cf.z_prime.size(); ++i) out += "," + format_double(cf.z_prime[i]);
    out += "\n";
  }
  return out;
}

inline std::vector<CounterfactualSample> cf_set_from_csv(std::string_view text, const Codec& codec) {
  const auto lines = csv_lines(text);
  require(!lines.empty(), Errc::io, "counterfactual CSV has no header");
  const auto width = split(lines.front(), ',').size();
  require(width > 5, Errc::io, "counterfactual CSV has no coordinates");
  std::vector<CounterfactualSample> out;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto c = split(lines[r], ',');
    require(c.size() == width, Errc::io, "counterfactual row " + std::to_string(r) + " has wrong arity");
    CounterfactualSample cf;
    cf.source_id = parse_int(c[0]);
    cf.step = static_cast<int>(parse_int(c[1]));
    cf.y = static_cast<int>(parse_int(c[2]));
    cf.y_prime = static_cast<int>(parse_int(c[3]));
    cf.t_used = parse_double(c[4]);
    cf.z_prime.resize(static_cast<Eigen::Index>(width - 5));
    for (std::size_t i = 5; i < width; ++i) cf.z_prime[static_cast<Eigen::Index>(i - 5)] = parse_double(c[i]);
    cf.x_prime = codec.decode(cf.z_prime);
    out.push_back(std::move(cf));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

struct LossBreakdown {
  double total = 0.0;
  double l_ce = 0.0;
  double l_align = 0.0;
  Vec grad_params;
  double grad_log_sigma_ce = 0.0;
  double grad_log_sigma_align = 0.0;
};

// CE runs over the union of original and counterfactual samples (equal
// weight per sample); L_align is the mean over counterfactuals. An empty
// counterfactual batch contributes L_align = 0.
inline LossBreakdown total_loss(const Classifier& c, const Classifier& c_star, std::span<const LabeledPoint> orig,
                                std::span<const CounterfactualSample> cf, const UncertaintyWeights& w,
                                const LossOptions& opt = {}) {
  require(!orig.empty() || !cf.empty(), Errc::empty_input, "total loss needs a nonempty batch");
  const auto& net = c.net();
  const int K = c.num_classes();
  const double n_union = static_cast<double>(orig.size() + cf.size());
  const double w_ce = std::exp(-2.0 * w.log_sigma_ce);
  const double w_align = std::exp(-2.0 * w.log_sigma_align);

  LossBreakdown out;
  out.grad_params = Vec::Zero(static_cast<Eigen::Index>(net.num_params()));
  std::span<double> grad{out.grad_params.data(), net.num_params()};
  MlpTape tape;

  if (!orig.empty()) {
    Mat x(net.input_dim(), static_cast<Eigen::Index>(orig.size()));
    for (std::size_t i = 0; i < orig.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = orig[i].z;
    const Mat logits = forward_batch(net, x, {}, &tape);
    Mat cot = softmax_columns(logits);
    for (Eigen::Index col = 0; col < logits.cols(); ++col) {
      const int y = orig[static_cast<std::size_t>(col)].label;
      const double m = logits.col(col).maxCoeff();
      out.l_ce += m + std::log((logits.col(col).array() - m).exp().sum()) - logits(y, col);
      cot(y, col) -= 1.0;
    }
    backward_batch(net, tape, (w_ce / n_union) * cot, grad);
  }

  if (!cf.empty()) {
    const double n_cf = static_cast<double>(cf.size());
    Mat x(net.input_dim(), static_cast<Eigen::Index>(cf.size()));
    for (std::size_t i = 0; i < cf.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = cf[i].x_prime;
    const Mat ref_logits = forward_batch(c_star.net(), x);
    const Mat logits = forward_batch(net, x, {}, &tape);
    const Mat p = softmax_columns(logits);
    const Mat q = softmax_columns(ref_logits);
    Mat ce_cot = p;
    Mat align_cot(K, logits.cols());
    for (Eigen::Index col = 0; col < logits.cols(); ++col) {
      const double m = logits.col(col).maxCoeff();
      const double lse = m + std::log((logits.col(col).array() - m).exp().sum());
      if (opt.soft_labels) {
        out.l_ce += (q.col(col).array() * (lse - logits.col(col).array())).sum();
        ce_cot.col(col) -= q.col(col);
      } else {
        const int y = cf[static_cast<std::size_t>(col)].y_prime;
        out.l_ce += lse - logits(y, col);
        ce_cot(y, col) -= 1.0;
      }
      if (opt.align_space == AlignSpace::probabilities) {
        const Vec d = p.col(col) - q.col(col);
        out.l_align += d.squaredNorm();
        // softmax Jacobian is symmetric: J^T d = p * d - p (p . d)
        align_cot.col(col) = 2.0 * (p.col(col).cwiseProduct(d) - p.col(col) * p.col(col).dot(d));
      } else {
        const Vec d = logits.col(col) - ref_logits.col(col);
        out.l_align += d.squaredNorm();
        align_cot.col(col) = 2.0 * d;
      }
    }
    out.l_align /= n_cf;
    backward_batch(net, tape, (w_ce / n_union) * ce_cot + (w_align / n_cf) * align_cot, grad);
  }
  out.l_ce /= n_union;

  out.total = w_ce * out.l_ce + w_align * out.l_align + w.log_sigma_ce + w.log_sigma_align;
  out.grad_log_sigma_ce = -2.0 * w_ce * out.l_ce + 1.0;
  out.grad_log_sigma_align = -2.0 * w_align * out.l_align + 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct SelfCorrectConfig {
  int epochs = 20;
  double lr = 1e-3;
  int batch = 64;
  LossOptions loss;
};

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  double l_ce = 0.0;
  double l_align = 0.0;
  double log_sigma_ce = 0.0;
  double log_sigma_align = 0.0;
  double val_accuracy = 0.0;
};

struct SelfCorrectReport {
  std::vector<EpochRecord> epochs;
  UncertaintyWeights final_weights;
  std::size_t n_original = 0;
  std::size_t n_counterfactual = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["n_original"] = n_original;
    j["n_counterfactual"] = n_counterfactual;
    j["final_log_sigma_ce"] = final_weights.log_sigma_ce;
    j["final_log_sigma_align"] = final_weights.log_sigma_align;
    auto& arr = j["epochs"] = nlohmann::json::array();
    for (const auto& e : epochs)
      arr.push_back({{"epoch", e.epoch},
                     {"total", e.total},
                     {"l_ce", e.l_ce},
                     {"l_align", e.l_align},
                     {"log_sigma_ce", e.log_sigma_ce},
                     {"log_sigma_align", e.log_sigma_align},
                     {"val_accuracy", e.val_accuracy}});
    return j;
  }
};

// Fine-tunes a learnable copy of c_init. Adam updates the network parameters
// and both log sigmas jointly (log sigma initialised at 0). Counterfactuals
// only ever join the training batches.
inline std::pair<Classifier, SelfCorrectReport> self_correct(const Classifier& c_init, const Classifier& c_star,
                                                             const Dataset& train, const Dataset& val,
                                                             const std::vector<CounterfactualSample>& cf_set,
                                                             const SelfCorrectConfig& cfg, std::uint64_t seed) {
  require(c_init.net().spec() == c_star.net().spec() && c_init.num_classes() == c_star.num_classes(),
          Errc::architecture_mismatch, "learnable and reference classifiers differ in architecture");
  require(c_star.frozen(), Errc::precondition, "reference classifier must be frozen");
  require(!train.empty(), Errc::empty_input, "self-correction needs training points");
  require(train.split == Split::train, Errc::precondition, "self-correction trains on the train split only");
  require(audit_split_provenance(cf_set, train), Errc::precondition, "counterfactual provenance audit failed");
  require(cfg.epochs >= 0 && cfg.batch >= 1 && cfg.lr > 0.0, Errc::invalid_argument, "self-correct config");

  Classifier c = c_init.thawed_copy();
  SelfCorrectReport report;
  report.n_original = train.size();
  report.n_counterfactual = cf_set.size();
  if (cfg.epochs == 0) return {std::move(c), report};

  const std::size_t P = c.net().num_params();
  Vec buffer(static_cast<Eigen::Index>(P + 2));
  std::copy(c.net().params().begin(), c.net().params().end(), buffer.data());
  buffer[static_cast<Eigen::Index>(P)] = 0.0;
  buffer[static_cast<Eigen::Index>(P + 1)] = 0.0;
  ParamTape tape({buffer.data(), P + 2});

  Rng rng(derive_seed(seed, "self-correct"));
  std::vector<std::size_t> orig_order(train.size()), cf_order(cf_set.size());
  for (std::size_t i = 0; i < orig_order.size(); ++i) orig_order[i] = i;
  for (std::size_t i = 0; i < cf_order.size(); ++i) cf_order[i] = i;
  const std::size_t n_batches = (train.size() + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch);

  std::vector<LabeledPoint> orig_batch;
  std::vector<CounterfactualSample> cf_batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(orig_order);
    rng.shuffle(cf_order);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < n_batches; ++b) {
      orig_batch.clear();
      cf_batch.clear();
      const std::size_t o_lo = b * orig_order.size() / n_batches, o_hi = (b + 1) * orig_order.size() / n_batches;
      const std::size_t c_lo = b * cf_order.size() / n_batches, c_hi = (b + 1) * cf_order.size() / n_batches;
      for (std::size_t i = o_lo; i < o_hi; ++i) orig_batch.push_back(train.points[orig_order[i]]);
      for (std::size_t i = c_lo; i < c_hi; ++i) cf_batch.push_back(cf_set[cf_order[i]]);

      UncertaintyWeights w{buffer[static_cast<Eigen::Index>(P)], buffer[static_cast<Eigen::Index>(P + 1)]};
      const auto loss = total_loss(c, c_star, orig_batch, cf_batch, w, cfg.loss);
      if (!std::isfinite(loss.total))
        fail(Errc::non_finite, "self-correct loss is non-finite in epoch " + std::to_string(epoch));
      tape.grad.head(static_cast<Eigen::Index>(P)) = loss.grad_params;
      tape.grad[static_cast<Eigen::Index>(P)] = loss.grad_log_sigma_ce;
      tape.grad[static_cast<Eigen::Index>(P + 1)] = loss.grad_log_sigma_align;
      adam_step(tape, cfg.lr);
      auto params = c.mutable_net().params();
      std::copy(buffer.data(), buffer.data() + P, params.begin());

      rec.total += loss.total / static_cast<double>(n_batches);
      rec.l_ce += loss.l_ce / static_cast<double>(n_batches);
      rec.l_align += loss.l_align / static_cast<double>(n_batches);
    }
    rec.log_sigma_ce = buffer[static_cast<Eigen::Index>(P)];
    rec.log_sigma_align = buffer[static_cast<Eigen::Index>(P + 1)];
    rec.val_accuracy = val.empty() ? 0.0 : accuracy(c, val);
    report.epochs.push_back(rec);
  }
  report.final_weights = {buffer[static_cast<Eigen::Index>(P)], buffer[static_cast<Eigen::Index>(P + 1)]};
  c.epochs = c_init.epochs + cfg.epochs;
  c.val_accuracy = val.empty() ? 0.0 : accuracy(c, val);
  return {std::move(c), report};
}

}  // namespace dca
