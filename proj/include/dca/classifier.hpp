#pragma once

// Softmax classifiers over K ordinal classes. One instance is frozen and acts
// as the reference C*: it guides generation and assigns labels. A learnable
// copy C is fine-tuned by self-corrective training.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dca/core/error.hpp"
#include "dca/core/rng.hpp"
#include "dca/nn.hpp"
#include "dca/synthdata.hpp"

namespace dca {

struct ClassifierNetConfig {
  std::vector<int> hidden{32, 32};
  Activation activation = Activation::relu;
};

struct ClassifierTrainConfig {
  ClassifierNetConfig net;
  int epochs = 30;
  double lr = 1e-3;
  int batch = 64;
};

class Classifier {
 public:
  Classifier() = default;
  Classifier(Mlp net, int num_classes) : net_(std::move(net)), num_classes_(num_classes) {
    require(net_.output_dim() == num_classes_, Errc::shape_mismatch, "classifier output must have K entries");
    require(!net_.has_time_embedding(), Errc::invalid_argument, "classifiers take no timestep");
  }

  const Mlp& net() const { return net_; }
  Mlp& mutable_net() {
    require(!frozen_, Errc::frozen_parameters, "frozen classifier rejects parameter mutation");
    return net_;
  }
  int num_classes() const { return num_classes_; }
  int input_dim() const { return net_.input_dim(); }

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  // A learnable copy with identical parameters.
  Classifier thawed_copy() const {
    Classifier c = *this;
    c.frozen_ = false;
    return c;
  }

  Vec logits(const Vec& x) const { return forward(net_, x); }

  std::uint64_t checksum() const { return param_checksum(net_.params()); }

  std::uint64_t seed = 0;
  int epochs = 0;
  double val_accuracy = 0.0;

 private:
  Mlp net_;
  int num_classes_ = 0;
  bool frozen_ = false;
};

// Lowest index wins exact ties.
inline int argmax(const Vec& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

inline Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec p = (logits.array() - m).exp();
  return p / p.sum();
}

inline Mat softmax_columns(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) p.col(c) = softmax(logits.col(c));
  return p;
}

inline Vec class_probs(const Classifier& c, const Vec& x) {
  require(x.size() == c.input_dim(), Errc::dimension_mismatch, "classifier input dimension");
  return softmax(c.logits(x));
}

inline int predict(const Classifier& c, const Vec& x) { return argmax(c.logits(x)); }

inline double accuracy(const Classifier& c, const Dataset& split) {
  require(!split.empty(), Errc::empty_input, "accuracy of an empty split");
  std::size_t correct = 0;
  for (const auto& p : split.points) correct += predict(c, p.z) == p.label;
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

// Binary accuracy on the points labelled k or k+1, deciding between those two
// logits only.
inline double adjacent_pair_accuracy(const Classifier& c, const Dataset& split, int k) {
  std::size_t n = 0, correct = 0;
  for (const auto& p : split.points) {
    if (p.label != k && p.label != k + 1) continue;
    const Vec l = c.logits(p.z);
    const int pred = l[k + 1] > l[k] ? k + 1 : k;
    correct += pred == p.label;
    ++n;
  }
  require(n > 0, Errc::empty_input, "no points for adjacent pair " + std::to_string(k));
  return static_cast<double>(correct) / static_cast<double>(n);
}

inline double mean_adjacent_pair_accuracy(const Classifier& c, const Dataset& split) {
  double sum = 0.0;
  for (int k = 0; k + 1 < c.num_classes(); ++k) sum += adjacent_pair_accuracy(c, split, k);
  return sum / (c.num_classes() - 1);
}

inline Mlp make_classifier_net(int dim, int num_classes, const ClassifierNetConfig& cfg, std::uint64_t seed) {
  MlpSpec spec;
  spec.widths.push_back(dim);
  for (int h : cfg.hidden) spec.widths.push_back(h);
  spec.widths.push_back(num_classes);
  spec.activation = cfg.activation;
  return Mlp::init(spec, seed);
}

// Mean cross-entropy gradient wrt logits for a batch: (softmax - onehot) / n.
inline Mat cross_entropy_cotangent(const Mat& logits, const std::vector<int>& labels, double& loss) {
  Mat g = softmax_columns(logits);
  loss = 0.0;
  const double n = static_cast<double>(labels.size());
  for (Eigen::Index c = 0; c < g.cols(); ++c) {
    const int y = labels[static_cast<std::size_t>(c)];
    const double m = logits.col(c).maxCoeff();
    loss += (m + std::log((logits.col(c).array() - m).exp().sum()) - logits(y, c)) / n;
    g(y, c) -= 1.0;
  }
  g /= n;
  return g;
}

// Mini-batch cross-entropy training with Adam. Returns a learnable
// classifier; callers freeze it to use it as a reference.
inline Classifier train_classifier(const Dataset& train, const Dataset& val, const ClassifierTrainConfig& cfg,
                                   std::uint64_t seed) {
  require(train.num_classes >= 2, Errc::degenerate_dataset, "classifier needs at least two classes");
  const auto counts = train.class_counts();
  for (std::size_t k = 0; k < counts.size(); ++k)
    require(counts[k] > 0, Errc::degenerate_dataset, "class " + std::to_string(k) + " absent from train split");
  require(cfg.epochs >= 0 && cfg.batch >= 1 && cfg.lr > 0.0, Errc::invalid_argument, "classifier training config");

  Classifier c(make_classifier_net(train.dim, train.num_classes, cfg.net, seed), train.num_classes);
  c.seed = seed;
  c.epochs = cfg.epochs;
  auto& net = c.mutable_net();
  ParamTape tape(net.params());
  Rng rng(derive_seed(seed, "train-classifier"));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  MlpTape fwd;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch));
      Mat x(train.dim, static_cast<Eigen::Index>(n));
      std::vector<int> labels(n);
      for (std::size_t b = 0; b < n; ++b) {
        const auto& p = train.points[order[start + b]];
        x.col(static_cast<Eigen::Index>(b)) = p.z;
        labels[b] = p.label;
      }
      const Mat logits = forward_batch(net, x, {}, &fwd);
      double loss = 0.0;
      const Mat cot = cross_entropy_cotangent(logits, labels, loss);
      if (!std::isfinite(loss)) fail(Errc::non_finite, "classifier loss is non-finite in epoch " + std::to_string(epoch));
      backward_batch(net, fwd, cot, tape.grad_span());
      adam_step(tape, cfg.lr);
    }
  }
  c.val_accuracy = val.empty() ? 0.0 : accuracy(c, val);
  return c;
}

// Gradient of log P(y'|x) - log P(y|x) with respect to the latent z, where
// x = decode(z). The log-probability ratio equals the logit difference, so
// the cotangent is e_{y'} - e_y; the result is pulled back through the
// decoder.
inline Vec boundary_grad(const Classifier& c_star, const Codec& codec, const Vec& z, int y, int y_prime) {
  require(y != y_prime, Errc::same_class, "source and target class coincide");
  require(c_star.frozen(), Errc::precondition, "boundary gradient needs a frozen reference classifier");
  require(y >= 0 && y < c_star.num_classes() && y_prime >= 0 && y_prime < c_star.num_classes(), Errc::out_of_range,
          "class index outside 0..K-1");
  const Vec x = codec.decode(z);
  require(x.size() == c_star.input_dim(), Errc::dimension_mismatch, "classifier input dimension");
  Vec cot = Vec::Zero(c_star.num_classes());
  cot[y_prime] = 1.0;
  cot[y] = -1.0;
  MlpTape tape;
  forward_batch(c_star.net(), x, {}, &tape);
  const Vec gx = backward_batch(c_star.net(), tape, cot, {}).col(0);
  return codec.pullback(gx);
}

inline nlohmann::json classifier_checkpoint_meta(const Classifier& c) {
  return {{"role", "classifier"},
          {"num_classes", c.num_classes()},
          {"frozen", c.frozen()},
          {"training_seed", c.seed},
          {"epochs", c.epochs},
          {"val_accuracy", c.val_accuracy}};
}

inline Classifier classifier_from_checkpoint(const Checkpoint& ck) {
  require(ck.meta.value("role", "") == "classifier", Errc::invalid_argument, "checkpoint is not a classifier");
  Classifier c(ck.net, ck.meta.at("num_classes").get<int>());
  c.seed = ck.meta.at("training_seed").get<std::uint64_t>();
  c.epochs = ck.meta.at("epochs").get<int>();
  c.val_accuracy = ck.meta.at("val_accuracy").get<double>();
  if (ck.meta.at("frozen").get<bool>()) c.freeze();
  return c;
}

}  // namespace dca
