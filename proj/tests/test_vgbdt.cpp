#include <gtest/gtest.h>

#include "support.hpp"
#include "vbfi/random.hpp"
#include "vbfi/vgbdt.hpp"

using namespace vbfi;

namespace {

struct Fixture {
  Matrix x;
  std::vector<double> y;
  std::size_t d = 0;
  std::vector<std::string> names;
};

// K views of width d; view `signal` carries a step function of its first
// feature, the others are noise.
Fixture step_fixture(std::uint64_t seed, std::size_t n, std::size_t k, std::size_t d, std::size_t signal) {
  Rng rng(seed);
  Fixture f;
  f.d = d;
  f.x = Matrix(n, k * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k * d; ++c) f.x(i, c) = rng.normal();
    f.y.push_back(f.x(i, signal * d) > 0.0 ? 2.0 : -1.0);
  }
  for (std::size_t v = 0; v < k; ++v) f.names.push_back("view_" + std::to_string(v));
  return f;
}

Fixture random_fixture(std::uint64_t seed, std::size_t n, std::size_t k, std::size_t d) {
  Rng rng(seed);
  Fixture f;
  f.d = d;
  f.x = Matrix(n, k * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k * d; ++c) f.x(i, c) = rng.normal();
    f.y.push_back(rng.normal() + f.x(i, 0) - 0.5 * f.x(i, k * d - 1));
  }
  for (std::size_t v = 0; v < k; ++v) f.names.push_back("view_" + std::to_string(v));
  return f;
}

VgbdtModel fit(const Fixture& f, const BoostingConfig& cfg, TrainingTrace* trace = nullptr) {
  return train(f.x.view(), f.y, f.d, f.names, cfg, Trait::O, trace);
}

RegressionTree two_leaf_tree(double left, double right) {
  return RegressionTree::from_json({{"split",
                                     {{"feature", 0},
                                      {"threshold", 0.5},
                                      {"left", {{"leaf", {{"index", 1}, {"value", left}}}}},
                                      {"right", {{"leaf", {{"index", 2}, {"value", right}}}}}}}});
}

}  // namespace

TEST(Train, ZeroRoundsPredictsTheMean) {
  const auto f = random_fixture(1, 20, 3, 2);
  BoostingConfig cfg;
  cfg.rounds = 0;
  const auto m = fit(f, cfg);
  double sum = 0.0;
  for (double v : f.y) sum += v;
  EXPECT_EQ(m.f0, sum / 20.0);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(m.predict(f.x.row(i)), m.f0);
}

TEST(Train, OneRoundOneViewEqualsATreeOnCenteredLabels) {
  const auto f = random_fixture(2, 30, 1, 3);
  BoostingConfig cfg;
  cfg.rounds = 1;
  cfg.shrinkage = 1.0;
  cfg.leaves = 4;
  const auto m = fit(f, cfg);
  std::vector<double> centered;
  for (double v : f.y) centered.push_back(v - m.f0);
  const auto t = fit_tree(f.x, centered, 4, cfg.min_leaf);
  ASSERT_EQ(m.rounds.size(), 1u);
  EXPECT_TRUE(m.rounds[0].tree.same_structure(t));
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(m.predict(f.x.row(i)), m.f0 + t.predict(f.x.row(i)));
}

TEST(Train, PicksTheInformativeViewEveryRound) {
  const auto f = step_fixture(3, 40, 2, 2, 1);
  BoostingConfig cfg;
  cfg.rounds = 4;
  cfg.leaves = 2;
  const auto m = fit(f, cfg);
  for (const auto& r : m.rounds) {
    EXPECT_EQ(r.view, 1u);
    EXPECT_EQ(r.concept_name, "view_1");
  }
}

TEST(Train, TiesGoToTheLowerView) {
  // Two identical views: the first must win every round.
  const auto base = random_fixture(4, 20, 1, 2);
  Fixture f = base;
  f.x = Matrix(20, 4);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t c = 0; c < 2; ++c) f.x(i, c) = f.x(i, c + 2) = base.x(i, c);
  }
  f.names = {"a", "b"};
  BoostingConfig cfg;
  cfg.rounds = 3;
  for (const auto& r : fit(f, cfg).rounds) EXPECT_EQ(r.view, 0u);
}

TEST(Train, PredictMatchesTrainingFit) {
  const auto f = random_fixture(5, 50, 4, 3);
  TrainingTrace trace;
  BoostingConfig cfg;
  cfg.rounds = 6;
  const auto m = fit(f, cfg, &trace);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(m.predict(f.x.row(i)), trace.fitted[i]);
}

TEST(Train, TrainingErrorNeverIncreases) {
  for (double v : {0.1, 0.5, 1.0}) {
    const auto f = random_fixture(6, 40, 3, 2);
    TrainingTrace trace;
    BoostingConfig cfg;
    cfg.rounds = 10;
    cfg.shrinkage = v;
    fit(f, cfg, &trace);
    ASSERT_EQ(trace.sse.size(), 11u);
    for (std::size_t m = 1; m < trace.sse.size(); ++m) EXPECT_LE(trace.sse[m], trace.sse[m - 1] + 1e-9);
  }
}

TEST(Train, RoundTreesSplitOnlyInsideTheirView) {
  const auto f = random_fixture(7, 40, 3, 4);
  BoostingConfig cfg;
  cfg.rounds = 5;
  const auto m = fit(f, cfg);
  std::set<std::size_t> used;
  for (const auto& r : m.rounds) {
    EXPECT_LT(r.tree.max_feature(), 4);
    used.insert(r.view);
  }
  // Scrambling every feature outside the used views leaves predictions alone.
  Rng rng(70);
  for (std::size_t i = 0; i < 40; ++i) {
    std::vector<double> x(f.x.row(i).begin(), f.x.row(i).end());
    const double before = m.predict(x);
    for (std::size_t v = 0; v < 3; ++v) {
      if (used.count(v)) continue;
      for (std::size_t c = 0; c < 4; ++c) x[v * 4 + c] = rng.normal() * 100;
    }
    EXPECT_EQ(m.predict(x), before);
  }
}

TEST(Train, DistinctViewsNeverRepeat) {
  const auto f = step_fixture(8, 40, 4, 2, 2);
  BoostingConfig cfg;
  cfg.rounds = 4;
  cfg.distinct_views = true;
  std::set<std::size_t> seen;
  for (const auto& r : fit(f, cfg).rounds) EXPECT_TRUE(seen.insert(r.view).second);
  cfg.rounds = 5;
  EXPECT_THROW(fit(f, cfg), std::invalid_argument);
}

TEST(Train, RejectsBadInput) {
  const auto f = random_fixture(9, 10, 2, 2);
  BoostingConfig cfg;
  EXPECT_THROW(train(f.x.view(), std::vector<double>{}, 2, f.names, cfg, Trait::O), std::invalid_argument);
  EXPECT_THROW(train(f.x.view(), f.y, 3, f.names, cfg, Trait::O), std::invalid_argument);
  cfg.shrinkage = 0.0;
  EXPECT_THROW(fit(f, cfg), std::invalid_argument);
  cfg.shrinkage = 0.5;
  cfg.leaves = 0;
  EXPECT_THROW(fit(f, cfg), std::invalid_argument);
}

TEST(Predict, ArithmeticExample) {
  VgbdtModel m;
  m.f0 = 1.0;
  m.shrinkage = 0.5;
  m.feature_dim = 1;
  m.views = {"a", "b"};
  m.rounds.push_back({0, "a", two_leaf_tree(-4.0, 1.0)});
  m.rounds.push_back({1, "b", two_leaf_tree(1.0, 3.0)});
  // Round one lands right (+0.5), round two lands left (+0.5).
  EXPECT_EQ(m.predict(std::vector<double>{1.0, 0.0}), 2.0);
  EXPECT_EQ(m.score_leaves(std::vector<int>{2, 1}), 2.0);
  EXPECT_THROW(m.predict(std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Predict, RouteReconstructionIsBitExact) {
  const auto f = random_fixture(10, 60, 5, 3);
  BoostingConfig cfg;
  cfg.rounds = 8;
  cfg.shrinkage = 0.3;
  const auto m = fit(f, cfg);
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> x(15);
    for (auto& v : x) v = rng.normal() * 1.5;
    EXPECT_EQ(m.score_leaves(m.route(x)), m.predict(x));
  }
}

TEST(ModelIo, RoundTripIsLossless) {
  testing_support::TempDir dir;
  const auto f = random_fixture(12, 40, 3, 2);
  BoostingConfig cfg;
  cfg.rounds = 4;
  const auto m = fit(f, cfg);
  save_model(m, dir / "model.json");
  const auto back = load_model(dir / "model.json");
  EXPECT_EQ(model_bytes(back), model_bytes(m));
  EXPECT_EQ(model_hash(back), model_hash(m));
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(back.predict(f.x.row(i)), m.predict(f.x.row(i)));
}

TEST(ModelIo, RejectsUnknownVersionAndCorruptFiles) {
  testing_support::TempDir dir;
  const auto f = random_fixture(13, 20, 2, 2);
  auto j = fit(f, BoostingConfig{}).to_json();
  j["version"] = 99;
  EXPECT_THROW(VgbdtModel::from_json(j), DataError);
  j.erase("version");
  EXPECT_THROW(VgbdtModel::from_json(j), DataError);
  dir.write("broken.json", "{\"version\": 1, \"trait\": ");
  EXPECT_THROW(load_model(dir / "broken.json"), DataError);
  auto k = fit(f, BoostingConfig{}).to_json();
  k["rounds"][0]["view"] = 7;
  EXPECT_THROW(VgbdtModel::from_json(k), DataError);
}
