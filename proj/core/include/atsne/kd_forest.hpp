#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atsne/knn.hpp"
#include "atsne/point_store.hpp"

namespace atsne {

struct ForestParams {
  std::size_t trees = 4;          // T
  std::size_t variance_pool = 5;  // V
  std::size_t leaf_budget = 1024; // L
  std::uint64_t seed = 0;
};

/// Forest of randomized KD-trees over a PointStore.
///
/// Each tree splits at the median of a dimension drawn uniformly from the
/// `variance_pool` highest-variance dimensions of the node's subset, down to
/// leaf buckets of at most kLeafCapacity ids. A query descends every tree to
/// its natural leaf and defers the far branches into one priority queue shared
/// by the whole forest, keyed by a lower bound on the distance to the branch.
/// The search stops once the scanned buckets hold `leaf_budget` points (the
/// leaves of a one-point-per-leaf tree) and at least
/// k candidates were collected.
///
/// Tree t is seeded from (seed, t) only, so a forest of T trees contains the
/// first T trees of any larger forest built with the same seed.
///
/// The forest keeps a pointer to the store it indexes; the store must outlive
/// it and must not be mutated while a query runs.
class KdForest {
 public:
  static constexpr std::size_t kLeafCapacity = 16;

  static KdForest build(const PointStore& points, std::size_t trees, std::size_t variance_pool,
                        std::uint64_t seed);
  static KdForest build(const PointStore& points, const ForestParams& params) {
    return build(points, params.trees, params.variance_pool, params.seed);
  }
  /// Forest of single empty leaves, filled through insert().
  static KdForest empty(const PointStore& points, std::size_t trees, std::size_t variance_pool,
                        std::uint64_t seed);

  /// Up to k stored points closest to `query`, ascending by (distance, id).
  /// `max_trees` restricts the search to the first trees of the forest.
  std::vector<Neighbor> query(std::span<const float> query, std::size_t k,
                              std::size_t leaf_budget,
                              std::optional<PointId> exclude = std::nullopt,
                              std::size_t max_trees = SIZE_MAX) const;

  /// Approximate neighbors of a stored point, excluding the point itself.
  NeighborList query_point(PointId owner, std::size_t k, std::size_t leaf_budget,
                           std::size_t max_trees = SIZE_MAX) const;

  void insert(PointId id);
  void remove(PointId id);

  bool contains(PointId id) const noexcept;
  std::size_t tree_count() const noexcept { return trees_.size(); }
  std::size_t variance_pool() const noexcept { return variance_pool_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t built_size() const noexcept { return built_size_; }

  /// True once the indexed count drifted by 50% from the count at build time.
  bool needs_rebuild() const noexcept;

  /// Calls `visit` with the bucket of every leaf of tree `tree`.
  void for_each_leaf(std::size_t tree,
                     const std::function<void(std::span<const PointId>)>& visit) const;

  /// Split dimension of the root of `tree`, or nullopt when the root is a leaf.
  std::optional<std::size_t> root_split_dimension(std::size_t tree) const;

  /// Checks split dimensions, threshold placement and the one-leaf-per-tree
  /// census against the store. Returns a description of the first violation.
  std::optional<std::string> validate() const;

 private:
  struct Node {
    std::int32_t dim = -1;  // -1 marks a leaf
    float threshold = 0.0f;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::vector<PointId> bucket;
  };
  struct Tree {
    std::vector<Node> nodes;
    std::vector<std::int32_t> leaf_of;  // slot -> leaf node, -1 when absent
  };

  KdForest(const PointStore& points, std::size_t variance_pool, std::uint64_t seed)
      : points_(&points), variance_pool_(variance_pool), seed_(seed) {}

  void build_tree(Tree& tree, std::size_t index, std::vector<PointId> ids) const;
  void split_leaf(Tree& tree, std::int32_t leaf, std::size_t dim);
  std::size_t highest_variance_dim(std::span<const PointId> ids) const;

  const PointStore* points_;
  std::size_t variance_pool_;
  std::uint64_t seed_;
  std::size_t size_ = 0;
  std::size_t built_size_ = 0;
  std::vector<Tree> trees_;
};

struct CalibrationResult {
  std::size_t trees = 1;          // chosen T
  std::size_t leaf_budget = 1;    // chosen L
  std::size_t variance_pool = 5;  // V
  double measured_recall = 0.0;
  std::size_t sample_size = 0;
  bool reached_target = false;  // false: best-effort configuration
};

struct CalibrationOptions {
  std::vector<std::size_t> tree_grid{1, 2, 4, 8};
  std::vector<std::size_t> leaf_grid{1, 64, 256, 1024, 4096};
  std::size_t variance_pool = 5;
  /// Bisect L between grid points so the chosen budget is the smallest one
  /// reaching the target on the sample.
  bool refine_budget = true;
};

/// Chooses (T, L) for a target recall by measuring recall against brute force
/// on `sample` random owners. Among the configurations reaching the target the
/// one with the smallest estimated query cost T*log2(N) + L wins; when none
/// does, the best-recall configuration is returned with reached_target unset.
CalibrationResult calibrate(const PointStore& points, std::size_t k, double target_recall,
                            std::size_t sample, std::uint64_t seed,
                            const CalibrationOptions& options = {});

/// The owners calibrate() measures recall on for a given sample size and seed.
std::vector<PointId> calibration_owners(const PointStore& points, std::size_t sample,
                                        std::uint64_t seed);

/// Draws `count` distinct live ids, deterministic in `seed`, skipping `avoid`.
std::vector<PointId> sample_ids(const PointStore& points, std::size_t count, std::uint64_t seed,
                                std::span<const PointId> avoid = {});

}  // namespace atsne
