#include "atsne/dynamics.hpp"

#include <algorithm>
#include <random>

#include "atsne/parallel.hpp"

namespace atsne {
namespace {

Vec2 placement_jitter(const Engine& engine, PointId id) {
  std::seed_seq seq{static_cast<std::uint32_t>(engine.config().seed),
                    static_cast<std::uint32_t>(engine.config().seed >> 32), raw(id),
                    engine.points().generation(id)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, engine.config().optimizer.init_stddev);
  const double x = normal(rng);
  return {x, normal(rng)};
}

void maybe_rebuild(Engine& engine) {
  if (engine.forest().needs_rebuild()) engine.rebuild_forest();
}

void grow_short_row(Engine& engine, PointId owner, Neighbor candidate) {
  const GaussianRow& old = engine.similarity().row(owner);
  NeighborList list;
  list.owner = owner;
  list.neighbors = old.neighbors;
  list.neighbors.insert(
      std::lower_bound(list.neighbors.begin(), list.neighbors.end(), candidate, closer),
      candidate);
  GaussianRow row = build_partial_row(owner, list, engine.similarity().perplexity(),
                                      old.requested_precision);
  row.exact = old.exact;
  row.missing = old.missing;
  engine.similarity().replace_row(std::move(row));
}

}  // namespace

PointId insert_point(Engine& engine, std::span<const float> coords) {
  PointStore& points = engine.points();
  SimilarityStore& store = engine.similarity();
  const PointId id = points.add(coords);
  engine.forest().insert(id);
  const std::span<const float> x = points.row(id);

  const NeighborList list = engine.neighbors_of(x, id);
  GaussianRow row =
      build_partial_row(id, list, store.perplexity(), engine.config().target_precision);

  const std::vector<PointId>& live = points.ids();
  std::vector<float> dist(live.size());
  parallel_for(live.size(), [&](std::size_t k) {
    dist[k] = live[k] == id ? 0.0f : squared_distance(x, points.row(live[k]));
  }, 256);
  const std::size_t k_max = store.k();
  for (std::size_t k = 0; k < live.size(); ++k) {
    const PointId i = live[k];
    if (i == id || !store.has_row(i)) continue;
    const GaussianRow& r = store.row(i);
    const Neighbor candidate{id, dist[k]};
    if (r.neighbors.size() + r.missing < k_max) {
      grow_short_row(engine, i, candidate);
    } else if (static_cast<double>(dist[k]) < r.d_max_sq()) {
      store.admit_neighbor(i, candidate);
    }
  }

  Embedding& embedding = engine.embedding();
  Vec2 y = placement_jitter(engine, id);
  for (std::size_t k = 0; k < row.neighbors.size(); ++k) {
    y += row.cond_prob[k] * embedding.position(row.neighbors[k].id);
  }
  store.add_row(std::move(row));
  embedding.add(id, y, engine.config().optimizer.exaggeration);
  maybe_rebuild(engine);
  return id;
}

void delete_point(Engine& engine, PointId id) {
  PointStore& points = engine.points();
  points.require(id);
  SimilarityStore& store = engine.similarity();
  const double step = 1.0 / static_cast<double>(store.k());
  const auto span = store.reverse(id);
  const std::vector<PointId> owners(span.begin(), span.end());
  for (PointId owner : owners) {
    if (owner == id || !store.drop_neighbor(owner, id)) continue;
    GaussianRow& row = store.mutable_row(owner);
    row.requested_precision = std::max(0.0, row.requested_precision - step);
    row.exact = false;
  }
  if (store.has_row(id)) store.erase_row(id);
  engine.forest().remove(id);
  points.remove(id);
  if (engine.embedding().contains(id)) engine.embedding().remove(id);
  maybe_rebuild(engine);
}

void redim(Engine& engine, PointStore points) {
  auto sorted = [](std::vector<PointId> ids) {
    std::sort(ids.begin(), ids.end(), [](PointId a, PointId b) { return raw(a) < raw(b); });
    return ids;
  };
  if (sorted(points.ids()) != sorted(engine.points().ids())) {
    throw Error(Errc::invalid_argument, "redim requires the same id set");
  }
  engine.reset_points(std::move(points));
  const OptimizerConfig& opt = engine.config().optimizer;
  engine.embedding().restart_exaggeration(opt.exaggeration, opt.exaggeration_iterations / 2);
}

StreamWindow::StreamWindow(std::int64_t duration) : duration_(duration) {
  if (duration <= 0) throw Error(Errc::invalid_argument, "window duration must be positive");
}

StreamWindow::TickResult StreamWindow::tick(Engine& engine, std::int64_t now,
                                            std::span<const float> arrivals) {
  if (now < last_now_) throw Error(Errc::invalid_argument, "stream time went backwards");
  const std::size_t dim = engine.points().dim();
  if (dim == 0 || arrivals.size() % dim != 0) {
    throw Error(Errc::dimension_mismatch, "arrivals are not a whole number of rows");
  }
  last_now_ = now;
  TickResult result;
  while (!queue_.empty() && now - queue_.front().timestamp >= duration_) {
    const Reading r = queue_.front();
    queue_.pop_front();
    if (engine.points().contains(r.id) && engine.points().generation(r.id) == r.generation) {
      delete_point(engine, r.id);
      result.expired.push_back(r.id);
    }
  }
  for (std::size_t off = 0; off < arrivals.size(); off += dim) {
    const PointId id = insert_point(engine, arrivals.subspan(off, dim));
    queue_.push_back({now, id, engine.points().generation(id)});
    result.inserted.push_back(id);
  }
  watermark_ = std::max(watermark_, queue_.size());
  return result;
}

void StreamWindow::forget(PointId id) {
  std::erase_if(queue_, [&](const Reading& r) { return r.id == id; });
}

}  // namespace atsne
