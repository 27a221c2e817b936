#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "atsne/kd_forest.hpp"
#include "atsne/optimizer.hpp"
#include "atsne/point_store.hpp"
#include "atsne/similarity.hpp"

namespace atsne {

struct EngineConfig {
  double perplexity = 30.0;
  double target_precision = 0.8;
  std::size_t calibration_sample = 1000;
  std::size_t variance_pool = 5;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  /// Bypass calibration with explicit forest parameters.
  std::optional<ForestParams> fixed_forest;
};

struct InitStats {
  double knn_ms = 0.0;
  double rows_ms = 0.0;
  std::optional<CalibrationResult> calibration;
};

/// The data behind one embedding: points, forest, similarity rows and the
/// optimizer state. Not synchronized; Session adds the threading.
class Engine {
 public:
  /// Computes all rows for `points` and draws the initial embedding.
  static Engine create(PointStore points, const EngineConfig& config);
  /// Engine without points, grown through dynamics::insert.
  static Engine create_empty(std::size_t dim, const EngineConfig& config);

  Engine(Engine&&) noexcept = default;
  Engine& operator=(Engine&&) noexcept = default;

  const PointStore& points() const noexcept { return *points_; }
  PointStore& points() noexcept { return *points_; }
  const KdForest& forest() const noexcept { return *forest_; }
  KdForest& forest() noexcept { return *forest_; }
  const SimilarityStore& similarity() const noexcept { return *store_; }
  SimilarityStore& similarity() noexcept { return *store_; }
  const Embedding& embedding() const noexcept { return embedding_; }
  Embedding& embedding() noexcept { return embedding_; }

  const EngineConfig& config() const noexcept { return config_; }
  void set_optimizer_config(const OptimizerConfig& optimizer);
  const ForestParams& forest_params() const noexcept { return forest_params_; }
  const InitStats& init_stats() const noexcept { return init_stats_; }

  std::size_t k() const noexcept { return store_->k(); }
  /// True when neighborhoods are computed by brute force (target precision 1).
  bool exact_mode() const noexcept { return config_.target_precision >= 1.0; }

  StepStats step();

  /// Exact row of a live point from brute force neighbors.
  GaussianRow exact_row(PointId id) const;
  /// Row from the forest at the session's budget, or brute force in exact mode.
  NeighborList neighbors_of(std::span<const float> query, std::optional<PointId> exclude) const;

  /// Swaps in a refined row and raises the exaggeration of every id whose
  /// joint probabilities changed. Returns that id set.
  std::vector<PointId> apply_row(GaussianRow row);

  /// Rebuilds the forest over the current points, recalibrating when the
  /// configuration asks for a target precision below 1.
  void rebuild_forest();

  /// Replaces the points and recomputes every row. Positions are kept.
  void reset_points(PointStore points);

  Snapshot snapshot() const { return atsne::snapshot(embedding_, *store_); }

 private:
  Engine() = default;

  EngineConfig config_;
  std::unique_ptr<PointStore> points_;
  std::unique_ptr<KdForest> forest_;
  std::unique_ptr<SimilarityStore> store_;
  Embedding embedding_;
  ForestParams forest_params_;
  InitStats init_stats_;
};

}  // namespace atsne
