#include "atsne/engine.hpp"

#include <algorithm>

namespace atsne {
namespace {

SimilarityConfig similarity_config(const EngineConfig& c) {
  return {c.perplexity, c.target_precision, c.calibration_sample, c.variance_pool, c.seed,
          c.fixed_forest};
}

}  // namespace

Engine Engine::create(PointStore points, const EngineConfig& config) {
  config.optimizer.validate();
  Engine e;
  e.config_ = config;
  e.points_ = std::make_unique<PointStore>(std::move(points));
  InitResult init = init_all(*e.points_, similarity_config(config));
  e.forest_ = std::make_unique<KdForest>(std::move(init.forest));
  e.store_ = std::make_unique<SimilarityStore>(std::move(init.store));
  e.forest_params_ = init.forest_params;
  e.init_stats_ = {init.knn_ms, init.rows_ms, init.calibration};
  e.embedding_ = Embedding::random(e.points_->ids(), config.seed, config.optimizer.init_stddev);
  return e;
}

Engine Engine::create_empty(std::size_t dim, const EngineConfig& config) {
  config.optimizer.validate();
  Engine e;
  e.config_ = config;
  e.points_ = std::make_unique<PointStore>(dim);
  e.forest_params_ = config.fixed_forest.value_or(
      ForestParams{4, std::min(config.variance_pool, dim), 256, config.seed});
  e.forest_ = std::make_unique<KdForest>(KdForest::empty(
      *e.points_, e.forest_params_.trees, e.forest_params_.variance_pool, e.forest_params_.seed));
  e.store_ = std::make_unique<SimilarityStore>(config.perplexity);
  return e;
}

void Engine::set_optimizer_config(const OptimizerConfig& optimizer) {
  optimizer.validate();
  config_.optimizer = optimizer;
}

StepStats Engine::step() { return atsne::step(*store_, embedding_, config_.optimizer); }

GaussianRow Engine::exact_row(PointId id) const {
  const NeighborList list = brute_force_knn(*points_, id, store_->k());
  return build_partial_row(id, list, config_.perplexity, 1.0);
}

NeighborList Engine::neighbors_of(std::span<const float> query,
                                  std::optional<PointId> exclude) const {
  NeighborList out;
  if (exclude) out.owner = *exclude;
  const std::size_t others = points_->size() - ((exclude && points_->contains(*exclude)) ? 1 : 0);
  if (others == 0) return out;
  if (exact_mode()) {
    out.neighbors = brute_force_query(*points_, query, store_->k(), exclude);
    out.exact = true;
  } else {
    out.neighbors = forest_->query(query, store_->k(), forest_params_.leaf_budget, exclude);
  }
  return out;
}

std::vector<PointId> Engine::apply_row(GaussianRow row) {
  auto changed = store_->replace_row(std::move(row));
  embedding_.trigger_exaggeration(changed, config_.optimizer.exaggeration);
  return changed;
}

void Engine::rebuild_forest() {
  if (points_->empty()) {
    forest_ = std::make_unique<KdForest>(KdForest::empty(
        *points_, forest_params_.trees, forest_params_.variance_pool, forest_params_.seed));
    return;
  }
  const std::size_t k = store_->k();
  if (!config_.fixed_forest && !exact_mode() && points_->size() > k + 1) {
    const std::size_t sample = std::min(config_.calibration_sample, points_->size());
    const auto result =
        calibrate(*points_, k, config_.target_precision, sample, config_.seed,
                  CalibrationOptions{.variance_pool = std::min(config_.variance_pool, points_->dim())});
    forest_params_ = {result.trees, result.variance_pool, result.leaf_budget, config_.seed};
    init_stats_.calibration = result;
  }
  forest_params_.variance_pool = std::min(forest_params_.variance_pool, points_->dim());
  forest_ = std::make_unique<KdForest>(KdForest::build(*points_, forest_params_));
}

void Engine::reset_points(PointStore points) {
  auto fresh = std::make_unique<PointStore>(std::move(points));
  InitResult init = init_all(*fresh, similarity_config(config_));
  points_ = std::move(fresh);
  forest_ = std::make_unique<KdForest>(std::move(init.forest));
  store_ = std::make_unique<SimilarityStore>(std::move(init.store));
  forest_params_ = init.forest_params;
  init_stats_ = {init.knn_ms, init.rows_ms, init.calibration};
}

}  // namespace atsne
