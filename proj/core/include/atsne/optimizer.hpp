#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "atsne/similarity.hpp"
#include "atsne/types.hpp"

namespace atsne {

struct StepStats;
struct OptimizerConfig;
class Embedding;
StepStats step(const SimilarityStore& store, Embedding& embedding, const OptimizerConfig& config);

struct OptimizerConfig {
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  double theta = 0.5;
  double exaggeration = 4.0;                   // global early exaggeration
  std::size_t exaggeration_iterations = 250;   // I_tau
  double decay_lambda = 0.05;                  // per-point exaggeration decay rate
  std::size_t max_iterations = 1000;
  double init_stddev = 1e-4;
  double min_gain = 0.01;

  /// Throws Errc::invalid_argument on out-of-range values.
  void validate() const;
};

/// Low-dimensional positions plus the gradient-descent state of every point.
/// State is stored per PointId slot; ids() lists the live points.
class Embedding {
 public:
  Embedding() = default;

  /// Positions drawn i.i.d. from N(0, stddev^2), in the order of `ids`.
  static Embedding random(std::span<const PointId> ids, std::uint64_t seed, double stddev);

  void add(PointId id, Vec2 position, double exaggeration = 1.0);
  void remove(PointId id);
  bool contains(PointId id) const noexcept {
    return slot(id) < live_.size() && live_[slot(id)] != 0;
  }

  const std::vector<PointId>& ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t iteration() const noexcept { return iteration_; }

  Vec2 position(PointId id) const { return positions_[slot(id)]; }
  void set_position(PointId id, Vec2 p) { positions_[slot(id)] = p; }
  Vec2 velocity(PointId id) const { return velocity_[slot(id)]; }
  Vec2 gains(PointId id) const { return gains_[slot(id)]; }
  double exaggeration(PointId id) const { return tau_[slot(id)]; }

  /// tau_i <- max(tau_i, tau) for each live id; returns the number of ids
  /// skipped because they are not live.
  std::size_t trigger_exaggeration(std::span<const PointId> ids, double tau);

  /// Sets every tau_i to `tau` and holds it, without decay, for `iterations`.
  void restart_exaggeration(double tau, std::size_t iterations);

  /// Global factor applied on top of per-point factors at the current iteration.
  double global_exaggeration(const OptimizerConfig& config) const noexcept;
  /// max(global factor, tau_i).
  double effective_exaggeration(PointId id, const OptimizerConfig& config) const noexcept {
    const double g = global_exaggeration(config);
    const double t = tau_[slot(id)];
    return t > g ? t : g;
  }

  /// Axis-aligned bounds of the live positions.
  BoundingBox bbox() const noexcept { return bbox_; }
  void recompute_bbox();

  /// Live positions in ids() order.
  std::vector<Vec2> compact_positions() const;

 private:
  friend StepStats step(const SimilarityStore&, Embedding&, const OptimizerConfig&);

  void ensure_slot(std::size_t s);

  std::vector<Vec2> positions_;
  std::vector<Vec2> velocity_;
  std::vector<Vec2> gains_;
  std::vector<double> tau_;
  std::vector<std::uint8_t> live_;
  std::vector<std::uint32_t> position_index_;
  std::vector<PointId> ids_;
  std::size_t iteration_ = 0;
  std::size_t decay_hold_until_ = 0;
  BoundingBox bbox_;
};

/// Attractive term per slot: sum over neighbor links (both directions) of
/// p_ij (1 + |y_i - y_j|^2)^-1 (y_i - y_j), scaled by each point's effective
/// exaggeration.
std::vector<Vec2> attractive_forces(const SimilarityStore& store, const Embedding& embedding,
                                    const OptimizerConfig& config);

struct RepulsionResult {
  std::vector<Vec2> forces;  // per slot, unnormalized: sum_j w_ij^2 (y_i - y_j)
  double z = 0.0;            // sum over ordered pairs of w_ij
};

/// Barnes-Hut repulsion; theta = 0 evaluates all pairs exactly.
RepulsionResult repulsive_forces(const Embedding& embedding, double theta);

struct StepStats {
  std::size_t iteration = 0;  // iteration count after the step
  double z = 0.0;
  double gradient_norm = 0.0;
};

/// Full gradient 4 (F_attr - F_rep / Z) per slot, without updating anything.
std::vector<Vec2> gradient(const SimilarityStore& store, const Embedding& embedding,
                           const OptimizerConfig& config, double* z_out = nullptr);

/// One gradient-descent iteration with momentum and adaptive gains, followed
/// by the per-point exaggeration decay. Throws DivergenceError, leaving the
/// embedding untouched, if any gradient component is not finite.
StepStats step(const SimilarityStore& store, Embedding& embedding, const OptimizerConfig& config);

/// KL(P || Q) over the listed p_ij > 0 with Q computed exactly in O(N^2).
double kl_cost(std::span<const JointEntry> p, const Embedding& embedding);

/// Sparse cost estimate using a precomputed normalization Z.
double kl_cost_with_z(std::span<const JointEntry> p, const Embedding& embedding, double z);

struct Snapshot {
  std::size_t iteration = 0;
  std::vector<PointId> ids;
  std::vector<Vec2> positions;
  std::vector<double> precision;     // rho_i
  std::vector<double> exaggeration;  // tau_i

  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

Snapshot snapshot(const Embedding& embedding, const SimilarityStore& store);

}  // namespace atsne
