#include <catch_amalgamated.hpp>

#include <cmath>

#include "dca/classifier.hpp"
#include "dca/core/rng.hpp"

using namespace dca;
using Catch::Matchers::WithinAbs;

namespace {

Classifier frozen_random(int dim, int K, std::vector<int> hidden, Activation act, std::uint64_t seed) {
  Classifier c(make_classifier_net(dim, K, {std::move(hidden), act}, seed), K);
  Rng rng(seed + 1);
  for (auto& p : c.mutable_net().params()) p += 0.05 * rng.normal();
  c.freeze();
  return c;
}

double log_ratio(const Classifier& c, const Codec& codec, const Vec& z, int y, int yp) {
  const Vec p = class_probs(c, codec.decode(z));
  return std::log(p[yp]) - std::log(p[y]);
}

// Two well separated blobs.
std::pair<Dataset, Dataset> separable(std::uint64_t seed) {
  Rng rng(seed);
  auto make = [&](Split split, int n) {
    Dataset ds;
    ds.num_classes = 2;
    ds.dim = 2;
    ds.split = split;
    for (int i = 0; i < n; ++i) {
      const int y = i % 2;
      Vec z = 0.3 * rng.normal_vector(2);
      z[0] += y ? 1.5 : -1.5;
      ds.points.push_back({z, y});
    }
    return ds;
  };
  auto tr = make(Split::train, 400);
  auto va = make(Split::val, 200);
  return {std::move(tr), std::move(va)};
}

}  // namespace

TEST_CASE("softmax closed forms", "[classifier]") {
  Vec l(2);
  l << std::log(3.0), 0.0;
  const Vec p = softmax(l);
  CHECK_THAT(p[0], WithinAbs(0.75, 1e-15));
  CHECK_THAT(p[1], WithinAbs(0.25, 1e-15));

  Classifier zero(Mlp(MlpSpec{{2, 4, 5}, Activation::relu, 0}), 5);
  const Vec u = class_probs(zero, Vec::Ones(2));
  for (int k = 0; k < 5; ++k) CHECK_THAT(u[k], WithinAbs(0.2, 1e-15));

  Vec big(3);
  big << 1000.0, 999.0, -1000.0;
  const Vec q = softmax(big);
  CHECK(q.allFinite());
  CHECK_THAT(q.sum(), WithinAbs(1.0, 1e-12));
}

TEST_CASE("class_probs lie in (0, 1) and sum to one", "[classifier]") {
  const auto c = frozen_random(2, 5, {32, 32}, Activation::relu, 3);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec p = class_probs(c, 3.0 * rng.normal_vector(2));
    CHECK_THAT(p.sum(), WithinAbs(1.0, 1e-12));
    CHECK(p.minCoeff() > 0.0);
    CHECK(p.maxCoeff() < 1.0);
  }
  try {
    class_probs(c, Vec::Zero(3));
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::dimension_mismatch);
  }
}

TEST_CASE("train_classifier on separable data", "[classifier]") {
  const auto [train, val] = separable(1);
  // a perceptron separates the data first, so the property is attainable
  Vec w = Vec::Zero(3);
  for (int epoch = 0; epoch < 100; ++epoch)
    for (const auto& p : train.points) {
      const double s = w[0] * p.z[0] + w[1] * p.z[1] + w[2];
      const double y = p.label ? 1.0 : -1.0;
      if (y * s <= 0.0) w += y * Vec{{p.z[0], p.z[1], 1.0}};
    }
  int errors = 0;
  for (const auto& p : val.points) errors += ((w[0] * p.z[0] + w[1] * p.z[1] + w[2] > 0.0) != (p.label == 1));
  REQUIRE(errors == 0);

  const auto c = train_classifier(train, val, ClassifierTrainConfig{}, 2);
  CHECK(c.val_accuracy >= 0.95);
  CHECK(c.val_accuracy == accuracy(c, val));
  const auto again = train_classifier(train, val, ClassifierTrainConfig{}, 2);
  CHECK(again.net().param_vector() == c.net().param_vector());
}

TEST_CASE("train_classifier with zero epochs records the initial accuracy", "[classifier]") {
  const auto [train, val] = separable(5);
  ClassifierTrainConfig cfg;
  cfg.epochs = 0;
  const auto c = train_classifier(train, val, cfg, 6);
  const Classifier init(make_classifier_net(2, 2, cfg.net, 6), 2);
  CHECK(c.net().param_vector() == init.net().param_vector());
  CHECK(c.val_accuracy == accuracy(init, val));
}

TEST_CASE("train_classifier rejects degenerate data", "[classifier]") {
  auto [train, val] = separable(7);
  Dataset one = train;
  one.points.erase(std::remove_if(one.points.begin(), one.points.end(), [](const auto& p) { return p.label == 1; }),
                   one.points.end());
  try {
    train_classifier(one, val, ClassifierTrainConfig{}, 1);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::degenerate_dataset);
  }
  one.num_classes = 1;
  CHECK_THROWS_AS(train_classifier(one, val, ClassifierTrainConfig{}, 1), Error);
}

TEST_CASE("frozen classifiers reject mutation", "[classifier]") {
  auto c = frozen_random(2, 3, {8}, Activation::relu, 1);
  const auto sum = c.checksum();
  try {
    c.mutable_net();
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::frozen_parameters);
  }
  auto copy = c.thawed_copy();
  copy.mutable_net().params()[0] += 1.0;
  CHECK(c.checksum() == sum);
  CHECK(copy.checksum() != sum);
}

TEST_CASE("boundary gradient of a linear classifier is w1 - w0", "[classifier]") {
  Classifier c(Mlp::init(MlpSpec{{3, 2}, Activation::relu, 0}, 8), 2);
  c.freeze();
  const Mat W = c.net().weight(0);
  Vec z(3);
  z << 0.4, -1.0, 2.0;
  const Vec g = boundary_grad(c, Codec::identity(3), z, 0, 1);
  const Vec expect = (W.row(1) - W.row(0)).transpose();
  CHECK(g == expect);
}

TEST_CASE("boundary gradient matches finite differences", "[classifier]") {
  const double h = 1e-4;
  Rng rng(9);
  const auto [ds, o] = make_grade_chain(5, 2, 50, 0.5, 3);
  const auto affine = Codec::fit_affine(ds);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = frozen_random(2, 5, {32, 32}, trial % 2 ? Activation::silu : Activation::relu, trial);
    const Codec codec = trial % 3 == 0 ? affine : Codec::identity(2);
    const Vec z = rng.normal_vector(2);
    const int y = static_cast<int>(rng.below(4));
    const int yp = y + 1;
    const Vec g = boundary_grad(c, codec, z, y, yp);
    Vec fd(2);
    for (int i = 0; i < 2; ++i) {
      Vec zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      fd[i] = (log_ratio(c, codec, zp, y, yp) - log_ratio(c, codec, zm, y, yp)) / (2 * h);
    }
    CHECK((g - fd).lpNorm<Eigen::Infinity>() / std::max(fd.lpNorm<Eigen::Infinity>(), 1e-8) < 1e-3);
    const Vec back = boundary_grad(c, codec, z, yp, y);
    CHECK((g + back).norm() <= 1e-12 * g.norm());
  }
}

TEST_CASE("boundary gradient preconditions", "[classifier]") {
  auto c = frozen_random(2, 3, {8}, Activation::relu, 1);
  const auto id = Codec::identity(2);
  try {
    boundary_grad(c, id, Vec::Zero(2), 1, 1);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::same_class);
  }
  CHECK_THROWS_AS(boundary_grad(c, Codec::identity(3), Vec::Zero(3), 0, 1), Error);
  CHECK_THROWS_AS(boundary_grad(c.thawed_copy(), id, Vec::Zero(2), 0, 1), Error);
  CHECK_THROWS_AS(boundary_grad(c, id, Vec::Zero(2), 0, 3), Error);
}

TEST_CASE("adjacent pair accuracy decides between two logits", "[classifier]") {
  Classifier c(Mlp(MlpSpec{{2, 3}, Activation::relu, 0}), 3);
  // logits (x0, x1, 0): class 1 vs class 2 decided by x1 > 0
  c.mutable_net().weight(0) << 1, 0, 0, 1, 0, 0;
  Dataset ds;
  ds.num_classes = 3;
  ds.dim = 2;
  ds.split = Split::test;
  ds.points = {{Vec{{5.0, 1.0}}, 1}, {Vec{{5.0, -1.0}}, 2}, {Vec{{5.0, -1.0}}, 1}, {Vec{{0.0, 0.0}}, 0}};
  CHECK(adjacent_pair_accuracy(c, ds, 1) == 2.0 / 3.0);
  CHECK(accuracy(c, ds) == 0.25);  // argmax picks class 0 everywhere; the tie at the origin goes to 0
  Dataset empty = ds;
  empty.points = {{Vec{{0.0, 0.0}}, 0}};
  CHECK_THROWS_AS(adjacent_pair_accuracy(c, empty, 1), Error);
}

TEST_CASE("classifier checkpoint round trip keeps the frozen flag", "[classifier]") {
  auto c = frozen_random(2, 4, {8, 8}, Activation::silu, 2);
  c.val_accuracy = 0.5;
  c.epochs = 3;
  const auto back = classifier_from_checkpoint(decode_checkpoint(encode_checkpoint(c.net(), classifier_checkpoint_meta(c))));
  CHECK(back.frozen());
  CHECK(back.num_classes() == 4);
  CHECK(back.checksum() == c.checksum());
  CHECK(back.epochs == 3);
}
