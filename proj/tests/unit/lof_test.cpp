#include <cmath>
#include <random>
#include <sstream>

#include "../oracle/lof_oracle.hpp"
#include "lfat/lof.hpp"
#include "support.hpp"

namespace lfat::lof {
namespace {

using P2 = Point<2>;

std::vector<oracle::P> to_oracle(const std::vector<P2>& pts) {
  std::vector<oracle::P> out;
  for (const auto& p : pts) out.push_back({p[0], p[1]});
  return out;
}

void expect_rel(double actual, double expected, double tol = 1e-9) {
  EXPECT_LE(std::abs(actual - expected), tol * std::max(1.0, std::abs(expected)))
      << "actual " << actual << " expected " << expected;
}

std::vector<P2> unit_square() { return {{0, 0}, {1, 0}, {0, 1}, {1, 1}}; }

TEST(Standardize, CenteringAndUnitScale) {
  StandardizationStats s{{1.5, 2000.0}, {0.25, 400.0}};
  EXPECT_EQ(standardize(FeatureVector{1.5, 2000.0}, s), (P2{0.0, 0.0}));
  EXPECT_EQ(standardize(FeatureVector{1.75, 2400.0}, s), (P2{1.0, 1.0}));
}

TEST(Standardize, MatchesArithmeticOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-5.0, 5.0), pos(0.01, 10.0);
  for (int i = 0; i < 200; ++i) {
    StandardizationStats s{{u(rng), u(rng)}, {pos(rng), pos(rng)}};
    const FeatureVector f{pos(rng), pos(rng) * 100};
    const P2 z = standardize(f, s);
    expect_rel(z[0], (f.mean_ipc - s.mean[0]) / s.std[0], 1e-15);
    expect_rel(z[1], (f.mean_cache_accesses - s.mean[1]) / s.std[1], 1e-15);
  }
}

TEST(LofIndex, InsufficientData) {
  EXPECT_ERRC((LofIndex<2>({{0, 0}, {1, 1}}, 2)), Errc::InsufficientData);
  EXPECT_ERRC((LofIndex<2>({{0, 0}, {1, 1}}, 0)), Errc::InsufficientData);
  EXPECT_NO_THROW((LofIndex<2>({{0, 0}, {1, 1}}, 1)));
}

TEST(LofIndex, UnitSquareStructuresMatchOracle) {
  const auto pts = unit_square();
  const auto o = to_oracle(pts);
  LofIndex<2> idx(pts, 2);
  ASSERT_EQ(idx.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    expect_rel(idx.k_distances()[i], oracle::k_distance(o, 2, o[i], i));
    expect_rel(idx.lrds()[i], oracle::lrd(o, 2, o[i], i));
    for (int j = 0; j < 4; ++j) expect_rel(idx.reach_dist(pts[i], j), oracle::reach(o, 2, o[i], j));
  }
  const auto train = idx.training_scores();
  for (int i = 0; i < 4; ++i) expect_rel(train[i], oracle::lof(o, 2, o[i], i));
}

TEST(LofIndex, UnitSquareCentreQuery) {
  // Every corner has k-distance 1 and lrd 1; the centre is equidistant to
  // all four corners, so its neighbourhood holds four points, each with
  // reach-dist max(1, sqrt(0.5)) = 1: lrd 1 and LOF exactly 1.
  LofIndex<2> idx(unit_square(), 2);
  const P2 q{0.5, 0.5};
  EXPECT_EQ(idx.neighborhood(q).members.size(), 4u);
  expect_rel(idx.k_distance(q), std::sqrt(0.5));
  expect_rel(idx.lrd(q), 1.0);
  expect_rel(idx.score(q), 1.0);
  expect_rel(idx.score(q), oracle::lof(to_oracle(unit_square()), 2, {0.5, 0.5}));
}

TEST(LofIndex, CoincidentQueryCountsTrainingPoint) {
  LofIndex<2> idx({{0, 0}, {3, 4}}, 1);
  EXPECT_DOUBLE_EQ(idx.k_distance({0, 0}), 0.0);
  // Leave-self-out for training points: each sees only the other one.
  EXPECT_DOUBLE_EQ(idx.k_distances()[0], 5.0);
  EXPECT_DOUBLE_EQ(idx.k_distances()[1], 5.0);
}

TEST(LofIndex, TieInclusion) {
  // Query at the origin, three training points on the unit circle.
  const std::vector<P2> pts{{1, 0}, {0, 1}, {-1, 0}, {5, 5}, {6, 5}};
  LofIndex<2> idx(pts, 2);
  const auto nb = idx.neighborhood({0, 0});
  EXPECT_EQ(nb.members.size(), 3u);
  EXPECT_EQ(nb.members, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(oracle::neighbours(to_oracle(pts), 2, {0, 0}, -1).size(), 3u);
  expect_rel(idx.score({0, 0}), oracle::lof(to_oracle(pts), 2, {0, 0}));
}

TEST(LofIndex, ExhaustiveSortNeighbourhood) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<P2> pts(30);
  for (auto& p : pts) p = {u(rng), u(rng)};
  LofIndex<2> idx(pts, 5);
  const auto o = to_oracle(pts);
  for (int t = 0; t < 20; ++t) {
    const P2 q{u(rng), u(rng)};
    const auto nb = idx.neighborhood(q);
    const auto expect = oracle::neighbours(o, 5, {q[0], q[1]}, -1);
    ASSERT_EQ(nb.members.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(nb.members[i], std::size_t(expect[i]));
    expect_rel(nb.k_distance, oracle::k_distance(o, 5, {q[0], q[1]}, -1));
  }
}

TEST(LofIndex, ReachDistFloorAndDominance) {
  const auto pts = unit_square();
  LofIndex<2> idx(pts, 2);
  EXPECT_EQ(idx.reach_dist(pts[3], 3), idx.k_distances()[3]);
  expect_rel(idx.reach_dist({100, 0}, 0), 100.0);
}

TEST(LofIndex, DuplicatedClusterGivesLargeLrd) {
  const std::vector<P2> pts{{2, 2}, {2, 2}, {2, 2}, {2, 2}, {9, 9}};
  LofIndex<2> idx(pts, 3);
  EXPECT_EQ(idx.lrd({2, 2}), kLargeLrd);
  EXPECT_EQ(idx.lrds()[0], kLargeLrd);
  expect_rel(idx.lrd({2, 2}), oracle::lrd(to_oracle(pts), 3, {2, 2}, -1));
  expect_rel(idx.score({2, 2}), oracle::lof(to_oracle(pts), 3, {2, 2}));
}

TEST(LofIndex, UniformGridInterior) {
  std::vector<P2> pts;
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 15; ++j) pts.push_back({double(i), double(j)});
  LofIndex<2> idx(pts, 8);
  const auto o = to_oracle(pts);
  const auto scores = idx.training_scores();
  int interior = 0, in_band = 0;
  for (std::size_t n = 0; n < pts.size(); ++n) {
    const auto [x, y] = pts[n];
    if (x < 3 || y < 3 || x > 11 || y > 11) continue;
    ++interior;
    if (scores[n] >= 0.9 && scores[n] <= 1.1) ++in_band;
  }
  EXPECT_GE(in_band, interior * 95 / 100);
  // Interior lrd close to its peers' and equal to the oracle.
  const std::size_t centre = 7 * 15 + 7;
  expect_rel(idx.lrds()[centre], oracle::lrd(o, 8, o[centre], int(centre)));
  expect_rel(idx.lrds()[centre], idx.lrds()[centre + 1], 1e-9);
}

TEST(LofIndex, DenseClusterCentreAndFarQuery) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<P2> pts;
  while (pts.size() < 200) {
    const P2 p{u(rng), u(rng)};
    if (p[0] * p[0] + p[1] * p[1] <= 1.0) pts.push_back(p);
  }
  LofIndex<2> idx(pts, 10);
  const auto o = to_oracle(pts);
  const double centre = idx.score({0, 0});
  expect_rel(centre, oracle::lof(o, 10, {0, 0}));
  EXPECT_GE(centre, 0.8);
  EXPECT_LE(centre, 1.2);
  const double far = idx.score({10, 0});
  expect_rel(far, oracle::lof(o, 10, {10, 0}));
  EXPECT_GT(far, 2.0);
}

TEST(LofIndex, RandomInstancesMatchOracle) {
  std::mt19937_64 rng(2024);
  for (int inst = 0; inst < 100; ++inst) {
    const int k = 2 + inst % 4;
    const int n = k + 1 + static_cast<int>(rng() % (30 - k));
    std::vector<P2> pts(n);
    for (auto& p : pts) p = {double(rng() % 1000) / 100.0, double(rng() % 1000) / 100.0};
    LofIndex<2> idx(pts, k);
    const auto o = to_oracle(pts);
    const P2 q{double(rng() % 1200) / 100.0 - 1.0, double(rng() % 1200) / 100.0 - 1.0};
    expect_rel(idx.lrd(q), oracle::lrd(o, k, {q[0], q[1]}, -1));
    expect_rel(idx.score(q), oracle::lof(o, k, {q[0], q[1]}));
  }
}

std::vector<FeatureVector> gaussian_features(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> ipc(1.4, 0.05), cache(2600.0, 80.0);
  std::vector<FeatureVector> out(n);
  for (auto& f : out) f = {ipc(rng), cache(rng)};
  return out;
}

TEST(LofModel, GaussianCalibration) {
  const auto feats = gaussian_features(99, 1000);
  const LofModel m = LofModel::fit(feats, 20, 0.99);
  EXPECT_FALSE(m.degenerate());
  EXPECT_GE(m.threshold(), 1.0 + kMinMargin);
  const auto scores = m.index().training_scores();
  std::size_t below = 0;
  for (double s : scores) below += s <= m.threshold();
  EXPECT_GE(below, 990u);
  // Quantile oracle: the nearest-rank 0.99 value is the 990th smallest.
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(m.threshold(), std::max(1.05, sorted[989]));
}

TEST(LofModel, StandardizationStatsArePopulationMoments) {
  const auto feats = gaussian_features(5, 300);
  const LofModel m = LofModel::fit(feats, 20);
  long double s0 = 0, s1 = 0;
  for (const auto& f : feats) {
    s0 += f.mean_ipc;
    s1 += f.mean_cache_accesses;
  }
  const long double m0 = s0 / 300, m1 = s1 / 300;
  long double v0 = 0, v1 = 0;
  for (const auto& f : feats) {
    v0 += (f.mean_ipc - m0) * (f.mean_ipc - m0);
    v1 += (f.mean_cache_accesses - m1) * (f.mean_cache_accesses - m1);
  }
  expect_rel(m.stats().mean[0], double(m0), 1e-12);
  expect_rel(m.stats().mean[1], double(m1), 1e-12);
  expect_rel(m.stats().std[0], double(std::sqrt(v0 / 300)), 1e-12);
  expect_rel(m.stats().std[1], double(std::sqrt(v1 / 300)), 1e-12);
}

TEST(LofModel, DegenerateFeatures) {
  std::vector<FeatureVector> same(30, FeatureVector{1.0, 500.0});
  const LofModel m = LofModel::fit(same, 5);
  EXPECT_TRUE(m.degenerate());
  EXPECT_EQ(m.stats().std[0], 1.0);
  EXPECT_EQ(m.stats().std[1], 1.0);
  EXPECT_EQ(m.predict(FeatureVector{1.0, 500.0}).decision, Decision::Normal);
}

TEST(LofModel, FitErrors) {
  const auto feats = gaussian_features(1, 20);
  EXPECT_ERRC(LofModel::fit(feats, 20), Errc::InsufficientData);
  EXPECT_ERRC(LofModel::fit(feats, 5, 0.0), Errc::InvalidArgument);
  EXPECT_ERRC(LofModel::fit(feats, 5, 1.5), Errc::InvalidArgument);
}

TEST(LofModel, PredictNormalAndOutlier) {
  const auto feats = gaussian_features(7, 500);
  const LofModel m = LofModel::fit(feats, 20);
  std::size_t normal = 0;
  for (const auto& f : feats) normal += m.predict(f).decision == Decision::Normal;
  EXPECT_GE(normal, 490u);
  const Verdict v = m.predict(FeatureVector{0.7, 6000.0});
  EXPECT_EQ(v.decision, Decision::Anomalous);
  EXPECT_GT(v.score, 10 * v.threshold_used);
  EXPECT_EQ(v.threshold_used, m.threshold());
  // Deterministic.
  EXPECT_EQ(m.predict(FeatureVector{0.7, 6000.0}).score, v.score);
}

TEST(Decide, StrictBoundary) {
  EXPECT_EQ(decide(1.5, 1.5).decision, Decision::Normal);
  EXPECT_EQ(decide(std::nextafter(1.5, 2.0), 1.5).decision, Decision::Anomalous);
  EXPECT_EQ(decide(std::nextafter(1.5, 1.0), 1.5).decision, Decision::Normal);
}

TEST(Quantile, NearestRank) {
  EXPECT_EQ(nearest_rank_quantile({3, 1, 2, 4}, 0.5), 2.0);
  EXPECT_EQ(nearest_rank_quantile({3, 1, 2, 4}, 0.51), 3.0);
  EXPECT_EQ(nearest_rank_quantile({3, 1, 2, 4}, 1.0), 4.0);
  EXPECT_EQ(nearest_rank_quantile({7}, 0.01), 7.0);
  EXPECT_ERRC(nearest_rank_quantile({}, 0.5), Errc::InvalidArgument);
}

TEST(LofModel, SaveLoadScoresIdentically) {
  const auto feats = gaussian_features(12, 400);
  const LofModel m = LofModel::fit(feats, 15, 0.95);
  std::stringstream buf;
  m.save(buf);
  const std::string text = buf.str();
  const LofModel back = LofModel::load(buf);
  EXPECT_EQ(back.threshold(), m.threshold());
  EXPECT_EQ(back.k(), m.k());
  EXPECT_EQ(back.calibration_quantile(), m.calibration_quantile());
  EXPECT_EQ(back.index().lrds(), m.index().lrds());
  std::mt19937_64 rng(4);
  std::normal_distribution<double> ipc(1.4, 0.2), cache(2600.0, 500.0);
  for (int i = 0; i < 200; ++i) {
    const FeatureVector f{std::abs(ipc(rng)), std::abs(cache(rng))};
    EXPECT_EQ(back.score(f), m.score(f));
  }
  std::stringstream again;
  back.save(again);
  EXPECT_EQ(again.str(), text);
}

TEST(LofModel, LoadRejectsCorruptFiles) {
  const LofModel m = LofModel::fit(gaussian_features(2, 30), 3);
  std::stringstream buf;
  m.save(buf);
  const std::string good = buf.str();
  for (const std::string& bad :
       {std::string(""), std::string("LFAT-LOF-MODEL 9\n"), good.substr(0, good.size() / 2),
        good.substr(0, good.rfind("end"))}) {
    std::stringstream in(bad);
    EXPECT_ERRC(LofModel::load(in), Errc::FormatError);
  }
}

}  // namespace
}  // namespace lfat::lof
