#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "atsne/similarity.hpp"
#include "atsne/synthetic.hpp"
#include "oracles.hpp"

namespace atsne {
namespace {

TEST(Sigma, HitsTargetPerplexity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.1, 50.0);
  for (int r = 0; r < 200; ++r) {
    std::vector<double> d(90);
    for (double& x : d) x = u(rng);
    std::sort(d.begin(), d.end());
    const auto sol = solve_sigma(d, 30.0);
    EXPECT_FALSE(sol.degenerate);
    EXPECT_NEAR(sol.perplexity / 30.0, 1.0, 1e-4);
    EXPECT_NEAR(oracle::perplexity_at(d, sol.sigma) / 30.0, 1.0, 1e-4);
    EXPECT_NEAR(std::accumulate(sol.probabilities.begin(), sol.probabilities.end(), 0.0), 1.0,
                1e-12);
    EXPECT_LE(sol.iterations, kMaxSigmaIterations);
  }
}

TEST(Sigma, EqualDistancesAreDegenerate) {
  const std::vector<double> d(90, 4.0);
  const auto sol = solve_sigma(d, 30.0);
  EXPECT_TRUE(sol.degenerate);
  for (double p : sol.probabilities) EXPECT_NEAR(p, 1.0 / 90.0, 1e-12);
}

TEST(Sigma, TooManyTiesAreDegenerate) {
  std::vector<double> d(90, 9.0);
  std::fill(d.begin(), d.begin() + 40, 0.0);
  const auto sol = solve_sigma(d, 30.0);
  EXPECT_TRUE(sol.degenerate);
  for (double p : sol.probabilities) EXPECT_TRUE(std::isfinite(p));
}

TEST(Sigma, ConditionalAndEntropyAgree) {
  const std::vector<double> d{1, 2, 3};
  const auto p = gaussian_conditional(d, 1.0);
  const double z = std::exp(-0.5) + std::exp(-1.0) + std::exp(-1.5);
  EXPECT_NEAR(p[0], std::exp(-0.5) / z, 1e-15);
  const std::vector<double> uniform(8, 0.125);
  EXPECT_NEAR(entropy_bits(uniform), 3.0, 1e-15);
}

TEST(Rows, NeighborhoodSizeIsThreeMu) {
  EXPECT_EQ(neighborhood_size(30.0), 90u);
  EXPECT_EQ(neighborhood_size(5.5), 16u);
}

TEST(Rows, BuildRowNormalizesAndRecordsPrecision) {
  const Dataset d = make_clusters({.n = 200, .dim = 5, .clusters = 2, .seed = 1});
  const PointStore s = d.to_store();
  const auto list = brute_force_knn(s, PointId{4}, 15);
  const auto row = build_row(PointId{4}, list, 5.0, 0.7);
  EXPECT_TRUE(row.exact);
  EXPECT_DOUBLE_EQ(row.requested_precision, 1.0);
  EXPECT_NEAR(std::accumulate(row.cond_prob.begin(), row.cond_prob.end(), 0.0), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(row.conditional(list.neighbors[0].id), row.cond_prob[0]);
  EXPECT_EQ(row.conditional(PointId{4}), 0.0);
  NeighborList approx = list;
  approx.exact = false;
  EXPECT_DOUBLE_EQ(build_row(PointId{4}, approx, 5.0, 0.7).requested_precision, 0.7);
  NeighborList one{PointId{4}, {list.neighbors[0]}, false};
  EXPECT_THROW(build_row(PointId{4}, one, 5.0, 0.7), Error);
  EXPECT_NO_THROW(build_partial_row(PointId{4}, one, 5.0, 0.7));
}

TEST(Store, JointIsSymmetricAndSumsToOne) {
  const Dataset d = make_clusters({.n = 120, .dim = 6, .clusters = 3, .seed = 5});
  const auto init = init_all(d.to_store(), {.perplexity = 5.0, .target_precision = 1.0});
  const auto& store = init.store;
  double total = 0.0;
  for (const auto& e : store.nonzero_joint()) {
    EXPECT_GT(e.p, 0.0);
    EXPECT_DOUBLE_EQ(e.p, store.joint(e.j, e.i));
    total += e.p;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_FALSE(store.validate().has_value());
}

TEST(Store, ExactInitMatchesReferenceJoint) {
  const Dataset d = make_clusters({.n = 150, .dim = 8, .clusters = 3, .seed = 9});
  const auto init = init_all(d.to_store(), {.perplexity = 6.0, .target_precision = 1.0});
  const auto ref = oracle::reference_joint(d, 6.0);
  std::vector<PointId> ids;
  for (std::uint32_t i = 0; i < d.n; ++i) ids.push_back(static_cast<PointId>(i));
  const auto got = oracle::dense_joint(init.store, ids);
  // Both sides solve sigma to the perplexity tolerance, so entries agree relatively.
  double worst = 0.0;
  for (std::size_t k = 0; k < got.v.size(); ++k) {
    worst = std::max(worst, std::abs(got.v[k] - ref.v[k]) / (ref.v[k] + 1e-15));
  }
  EXPECT_LT(worst, 1e-3);
  EXPECT_FALSE(init.calibration.has_value());
}

TEST(Store, ReplaceRowReportsChangedIds) {
  const Dataset d = make_clusters({.n = 60, .dim = 4, .clusters = 2, .seed = 3});
  const PointStore s = d.to_store();
  auto init = init_all(s, {.perplexity = 3.0, .target_precision = 1.0});
  auto& store = init.store;
  GaussianRow same = store.row(PointId{0});
  EXPECT_TRUE(store.replace_row(same).empty());

  NeighborList other = brute_force_knn(s, PointId{0}, 9);
  other.neighbors.erase(other.neighbors.begin());
  other.neighbors.push_back(brute_force_knn(s, PointId{0}, 10).neighbors.back());
  const PointId dropped = store.row(PointId{0}).neighbors.front().id;
  const auto changed = store.replace_row(build_row(PointId{0}, other, 3.0, 0.5));
  ASSERT_FALSE(changed.empty());
  EXPECT_EQ(changed.front(), PointId{0});
  EXPECT_NE(std::find(changed.begin(), changed.end(), dropped), changed.end());
  EXPECT_FALSE(store.validate().has_value());
  const auto rev = store.reverse(dropped);
  EXPECT_EQ(std::find(rev.begin(), rev.end(), PointId{0}), rev.end());
}

TEST(Store, DropAndAdmitKeepReverseIndex) {
  const Dataset d = make_clusters({.n = 80, .dim = 4, .clusters = 2, .seed = 4});
  auto init = init_all(d.to_store(), {.perplexity = 3.0, .target_precision = 1.0});
  auto& store = init.store;
  const GaussianRow before = store.row(PointId{5});
  const PointId victim = before.neighbors[3].id;
  EXPECT_TRUE(store.drop_neighbor(PointId{5}, victim));
  EXPECT_FALSE(store.drop_neighbor(PointId{5}, victim));
  EXPECT_DOUBLE_EQ(store.row(PointId{5}).sigma, before.sigma);
  EXPECT_NEAR(std::accumulate(store.row(PointId{5}).cond_prob.begin(),
                              store.row(PointId{5}).cond_prob.end(), 0.0),
              1.0, 1e-12);
  store.admit_neighbor(PointId{5}, {static_cast<PointId>(500), 1e-9f});
  EXPECT_EQ(store.row(PointId{5}).neighbors.front().id, static_cast<PointId>(500));
  EXPECT_EQ(store.reverse(static_cast<PointId>(500)).size(), 1u);
  EXPECT_FALSE(store.validate().has_value());
}

TEST(Store, ErrorsOnUnknownAndDuplicate) {
  SimilarityStore store(3.0);
  EXPECT_THROW(store.row(PointId{0}), Error);
  GaussianRow r;
  r.owner = PointId{2};
  store.add_row(r);
  EXPECT_THROW(store.add_row(r), Error);
  EXPECT_THROW(store.joint(PointId{2}, PointId{2}), Error);
  store.erase_row(PointId{2});
  EXPECT_EQ(store.size(), 0u);
}

TEST(Init, RejectsTooFewPointsAndBadPrecision) {
  const Dataset d = make_clusters({.n = 20, .dim = 3, .clusters = 2, .seed = 1});
  EXPECT_THROW(init_all(d.to_store(), {.perplexity = 30.0}), Error);
  EXPECT_THROW(init_all(d.to_store(), {.perplexity = 3.0, .target_precision = 0.0}), Error);
}

TEST(Init, ApproximateRowsCarryTargetPrecision) {
  const Dataset d = make_clusters({.n = 1500, .dim = 16, .clusters = 4, .seed = 2});
  const auto init = init_all(d.to_store(), {.perplexity = 10.0, .target_precision = 0.8,
                                            .calibration_sample = 200});
  ASSERT_TRUE(init.calibration.has_value());
  for (PointId id : init.store.owners()) {
    EXPECT_EQ(init.store.row(id).neighbors.size(), 30u);
    EXPECT_DOUBLE_EQ(init.store.row(id).requested_precision, 0.8);
  }
}

}  // namespace
}  // namespace atsne
