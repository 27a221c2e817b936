#include "atsne/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "atsne/parallel.hpp"
#include "atsne/quad_tree.hpp"

namespace atsne {

void OptimizerConfig::validate() const {
  auto fail = [](const char* what) { throw Error(Errc::invalid_argument, what); };
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (!(theta >= 0.0 && theta <= 1.0)) fail("theta must lie in [0, 1]");
  if (!(exaggeration >= 1.0)) fail("exaggeration must be at least 1");
  if (!(decay_lambda > 0.0)) fail("decay lambda must be positive");
  if (!(initial_momentum >= 0.0 && initial_momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(final_momentum >= 0.0 && final_momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(min_gain > 0.0)) fail("minimum gain must be positive");
  if (!(init_stddev > 0.0)) fail("initial spread must be positive");
}

Embedding Embedding::random(std::span<const PointId> ids, std::uint64_t seed, double stddev) {
  Embedding e;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (PointId id : ids) {
    const double x = normal(rng);
    const double y = normal(rng);
    e.add(id, {x, y});
  }
  e.recompute_bbox();
  return e;
}

void Embedding::ensure_slot(std::size_t s) {
  if (s < live_.size()) return;
  positions_.resize(s + 1);
  velocity_.resize(s + 1);
  gains_.resize(s + 1, {1.0, 1.0});
  tau_.resize(s + 1, 1.0);
  live_.resize(s + 1, 0);
  position_index_.resize(s + 1, 0);
}

void Embedding::add(PointId id, Vec2 position, double exaggeration) {
  const std::size_t s = slot(id);
  ensure_slot(s);
  if (live_[s]) throw Error(Errc::duplicate_id, "point " + std::to_string(raw(id)) + " already embedded");
  if (!position.finite()) throw Error(Errc::invalid_argument, "non-finite position");
  positions_[s] = position;
  velocity_[s] = {};
  gains_[s] = {1.0, 1.0};
  tau_[s] = std::max(1.0, exaggeration);
  live_[s] = 1;
  position_index_[s] = static_cast<std::uint32_t>(ids_.size());
  ids_.push_back(id);
  if (ids_.size() == 1) {
    bbox_ = {position, position};
  } else {
    bbox_.min = {std::min(bbox_.min.x, position.x), std::min(bbox_.min.y, position.y)};
    bbox_.max = {std::max(bbox_.max.x, position.x), std::max(bbox_.max.y, position.y)};
  }
}

void Embedding::remove(PointId id) {
  if (!contains(id)) throw Error(Errc::unknown_id, "point " + std::to_string(raw(id)) + " not embedded");
  const std::size_t s = slot(id);
  const std::uint32_t pos = position_index_[s];
  const PointId last = ids_.back();
  ids_[pos] = last;
  position_index_[slot(last)] = pos;
  ids_.pop_back();
  live_[s] = 0;
}

std::size_t Embedding::trigger_exaggeration(std::span<const PointId> ids, double tau) {
  if (!(tau >= 1.0)) throw Error(Errc::invalid_argument, "exaggeration must be at least 1");
  std::size_t skipped = 0;
  for (PointId id : ids) {
    if (!contains(id)) {
      ++skipped;
      continue;
    }
    tau_[slot(id)] = std::max(tau_[slot(id)], tau);
  }
  return skipped;
}

void Embedding::restart_exaggeration(double tau, std::size_t iterations) {
  for (PointId id : ids_) tau_[slot(id)] = std::max(1.0, tau);
  decay_hold_until_ = iteration_ + iterations;
}

double Embedding::global_exaggeration(const OptimizerConfig& config) const noexcept {
  return iteration_ < config.exaggeration_iterations ? config.exaggeration : 1.0;
}

void Embedding::recompute_bbox() {
  if (ids_.empty()) {
    bbox_ = {};
    return;
  }
  Vec2 lo = positions_[slot(ids_[0])];
  Vec2 hi = lo;
  for (PointId id : ids_) {
    const Vec2 p = positions_[slot(id)];
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  bbox_ = {lo, hi};
}

std::vector<Vec2> Embedding::compact_positions() const {
  std::vector<Vec2> out;
  out.reserve(ids_.size());
  for (PointId id : ids_) out.push_back(positions_[slot(id)]);
  return out;
}

std::vector<Vec2> attractive_forces(const SimilarityStore& store, const Embedding& embedding,
                                    const OptimizerConfig& config) {
  std::size_t capacity = 0;
  for (PointId id : embedding.ids()) capacity = std::max(capacity, slot(id) + 1);
  std::vector<Vec2> forces(capacity);
  const double two_n = 2.0 * static_cast<double>(store.size());
  if (two_n == 0.0) return forces;
  // Each stored link i -> j contributes p_{j|i}/2N to both p_ij and p_ji.
  for (PointId i : embedding.ids()) {
    if (!store.has_row(i)) continue;
    const GaussianRow& row = store.row(i);
    const Vec2 yi = embedding.position(i);
    for (std::size_t k = 0; k < row.neighbors.size(); ++k) {
      const PointId j = row.neighbors[k].id;
      const Vec2 d = yi - embedding.position(j);
      const double w = 1.0 / (1.0 + d.squared_norm());
      const Vec2 f = (row.cond_prob[k] / two_n * w) * d;
      forces[slot(i)] += f;
      forces[slot(j)] -= f;
    }
  }
  for (PointId i : embedding.ids()) {
    const double e = embedding.effective_exaggeration(i, config);
    if (e != 1.0) forces[slot(i)] = e * forces[slot(i)];
  }
  return forces;
}

RepulsionResult repulsive_forces(const Embedding& embedding, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw Error(Errc::invalid_argument, "theta must lie in [0, 1]");
  const auto& ids = embedding.ids();
  const std::vector<Vec2> compact = embedding.compact_positions();
  const QuadTree tree(compact);
  std::vector<Vec2> local(ids.size());
  std::vector<double> z_parts(ids.size(), 0.0);
  parallel_for(ids.size(), [&](std::size_t i) {
    tree.accumulate_repulsion(i, theta, local[i], z_parts[i]);
  });
  RepulsionResult out;
  std::size_t capacity = 0;
  for (PointId id : ids) capacity = std::max(capacity, slot(id) + 1);
  out.forces.assign(capacity, Vec2{});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.forces[slot(ids[i])] = local[i];
    out.z += z_parts[i];
  }
  return out;
}

std::vector<Vec2> gradient(const SimilarityStore& store, const Embedding& embedding,
                           const OptimizerConfig& config, double* z_out) {
  auto attr = attractive_forces(store, embedding, config);
  auto rep = repulsive_forces(embedding, config.theta);
  const double inv_z = rep.z > 0.0 ? 1.0 / rep.z : 0.0;
  std::vector<Vec2> grad(attr.size());
  for (PointId id : embedding.ids()) {
    const std::size_t s = slot(id);
    grad[s] = 4.0 * (attr[s] - inv_z * rep.forces[s]);
  }
  if (z_out) *z_out = rep.z;
  return grad;
}

namespace {

int sign(double v) noexcept { return (v > 0.0) - (v < 0.0); }

}  // namespace

StepStats step(const SimilarityStore& store, Embedding& embedding, const OptimizerConfig& config) {
  StepStats stats;
  const auto grad = gradient(store, embedding, config, &stats.z);
  for (PointId id : embedding.ids()) {
    if (!grad[slot(id)].finite()) throw DivergenceError(id, embedding.iteration_);
  }
  const double momentum = embedding.iteration_ < config.momentum_switch ? config.initial_momentum
                                                                         : config.final_momentum;
  double norm2 = 0.0;
  auto update = [&](double g, double& velocity, double& gain, double& position) {
    gain = sign(g) != sign(velocity) ? gain + 0.2 : gain * 0.8;
    if (gain < config.min_gain) gain = config.min_gain;
    velocity = momentum * velocity - config.learning_rate * gain * g;
    position += velocity;
  };
  for (PointId id : embedding.ids()) {
    const std::size_t s = slot(id);
    const Vec2 g = grad[s];
    norm2 += g.squared_norm();
    update(g.x, embedding.velocity_[s].x, embedding.gains_[s].x, embedding.positions_[s].x);
    update(g.y, embedding.velocity_[s].y, embedding.gains_[s].y, embedding.positions_[s].y);
  }
  ++embedding.iteration_;
  if (embedding.iteration_ > embedding.decay_hold_until_) {
    const double factor = std::exp(-config.decay_lambda);
    for (PointId id : embedding.ids()) {
      double& tau = embedding.tau_[slot(id)];
      tau = 1.0 + (tau - 1.0) * factor;
    }
  }
  embedding.recompute_bbox();
  stats.iteration = embedding.iteration_;
  stats.gradient_norm = std::sqrt(norm2);
  return stats;
}

namespace {

void require_finite(const Embedding& embedding) {
  for (PointId id : embedding.ids()) {
    if (!embedding.position(id).finite()) {
      throw Error(Errc::invalid_argument, "non-finite embedding position");
    }
  }
}

}  // namespace

double kl_cost_with_z(std::span<const JointEntry> p, const Embedding& embedding, double z) {
  double cost = 0.0;
  for (const auto& e : p) {
    if (e.p <= 0.0) continue;
    const Vec2 d = embedding.position(e.i) - embedding.position(e.j);
    const double w = 1.0 / (1.0 + d.squared_norm());
    cost += e.p * std::log(e.p * z / w);
  }
  return cost;
}

double kl_cost(std::span<const JointEntry> p, const Embedding& embedding) {
  require_finite(embedding);
  const auto y = embedding.compact_positions();
  std::vector<double> rows(y.size(), 0.0);
  parallel_for(y.size(), [&](std::size_t k) {
    double acc = 0.0;
    for (std::size_t l = k + 1; l < y.size(); ++l) {
      acc += 1.0 / (1.0 + (y[k] - y[l]).squared_norm());
    }
    rows[k] = acc;
  });
  double z = 0.0;
  for (double r : rows) z += 2.0 * r;
  return kl_cost_with_z(p, embedding, z);
}

Snapshot snapshot(const Embedding& embedding, const SimilarityStore& store) {
  Snapshot s;
  s.iteration = embedding.iteration();
  s.ids = embedding.ids();
  s.positions.reserve(s.ids.size());
  s.precision.reserve(s.ids.size());
  s.exaggeration.reserve(s.ids.size());
  for (PointId id : s.ids) {
    s.positions.push_back(embedding.position(id));
    s.precision.push_back(store.has_row(id) ? store.row(id).requested_precision : 0.0);
    s.exaggeration.push_back(embedding.exaggeration(id));
  }
  return s;
}

}  // namespace atsne
