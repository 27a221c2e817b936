#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "atsne/kd_forest.hpp"
#include "atsne/parallel.hpp"

namespace atsne {

std::vector<PointId> sample_ids(const PointStore& points, std::size_t count, std::uint64_t seed,
                                std::span<const PointId> avoid) {
  std::unordered_set<std::uint32_t> blocked;
  for (PointId id : avoid) blocked.insert(raw(id));
  std::vector<PointId> pool;
  pool.reserve(points.size());
  for (PointId id : points.ids()) {
    if (!blocked.contains(raw(id))) pool.push_back(id);
  }
  std::sort(pool.begin(), pool.end(), [](PointId a, PointId b) { return raw(a) < raw(b); });
  std::mt19937_64 rng(seed);
  count = std::min(count, pool.size());
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

std::vector<PointId> calibration_owners(const PointStore& points, std::size_t sample,
                                        std::uint64_t seed) {
  return sample_ids(points, sample, seed ^ 0x9e3779b97f4a7c15ull);
}

CalibrationResult calibrate(const PointStore& points, std::size_t k, double target_recall,
                            std::size_t sample, std::uint64_t seed,
                            const CalibrationOptions& options) {
  if (!(target_recall > 0.0 && target_recall <= 1.0)) {
    throw Error(Errc::invalid_argument, "target recall must lie in (0, 1]");
  }
  if (sample == 0) throw Error(Errc::invalid_argument, "calibration sample must be positive");
  if (sample > points.size()) {
    throw Error(Errc::invalid_argument, "calibration sample exceeds the dataset size");
  }
  if (points.size() < 2) throw Error(Errc::empty_dataset, "empty dataset");
  if (options.tree_grid.empty() || options.leaf_grid.empty()) {
    throw Error(Errc::invalid_argument, "empty calibration grid");
  }

  const std::size_t pool = std::min(options.variance_pool, points.dim());
  const std::size_t max_trees =
      *std::max_element(options.tree_grid.begin(), options.tree_grid.end());
  const KdForest forest = KdForest::build(points, max_trees, pool, seed);

  const auto owners = calibration_owners(points, sample, seed);
  std::vector<NeighborList> exact(owners.size());
  parallel_for(owners.size(), [&](std::size_t i) {
    exact[i] = brute_force_knn(points, owners[i], k);
  });

  auto recall_of = [&](std::size_t trees, std::size_t leaves) {
    std::vector<NeighborList> approx(owners.size());
    parallel_for(owners.size(), [&](std::size_t i) {
      approx[i] = forest.query_point(owners[i], k, leaves, trees);
    });
    return measure_recall(approx, exact);
  };

  const double log_n = std::log2(static_cast<double>(points.size()));
  auto cost = [&](std::size_t trees, std::size_t leaves) {
    return static_cast<double>(trees) * log_n + static_cast<double>(leaves);
  };

  CalibrationResult best_effort;
  best_effort.measured_recall = -1.0;
  std::optional<CalibrationResult> chosen;

  std::vector<std::size_t> leaf_grid = options.leaf_grid;
  std::sort(leaf_grid.begin(), leaf_grid.end());
  for (std::size_t trees : options.tree_grid) {
    std::size_t below = 0;  // largest budget known to miss the target
    for (std::size_t leaves : leaf_grid) {
      const double recall = recall_of(trees, leaves);
      if (recall > best_effort.measured_recall) {
        best_effort = {trees, leaves, pool, recall, owners.size(), false};
      }
      if (recall < target_recall) {
        below = leaves;
        continue;
      }
      CalibrationResult hit{trees, leaves, pool, recall, owners.size(), true};
      if (options.refine_budget) {
        // Recall is monotone in the budget for a fixed query set.
        std::size_t lo = below;
        std::size_t hi = leaves;
        while (hi - lo > 1) {
          const std::size_t mid = lo + (hi - lo) / 2;
          const double r = recall_of(trees, mid);
          if (r >= target_recall) {
            hi = mid;
            hit.measured_recall = r;
          } else {
            lo = mid;
          }
        }
        hit.leaf_budget = hi;
      }
      if (!chosen || cost(hit.trees, hit.leaf_budget) < cost(chosen->trees, chosen->leaf_budget)) {
        chosen = hit;
      }
      break;
    }
  }
  return chosen ? *chosen : best_effort;
}

}  // namespace atsne
