#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atsne/kd_forest.hpp"
#include "atsne/knn.hpp"
#include "atsne/point_store.hpp"

namespace atsne {

struct SigmaSolution {
  double sigma = 1.0;
  std::vector<double> probabilities;
  double perplexity = 0.0;  // achieved 2^H
  std::size_t iterations = 0;
  /// Set when the target perplexity cannot be met (all distances equal, or
  /// more tied nearest neighbors than the target); probabilities then come from
  /// the limiting bandwidth.
  bool degenerate = false;
};

inline constexpr double kPerplexityTolerance = 1e-5;
inline constexpr std::size_t kMaxSigmaIterations = 200;

/// Finds the Gaussian bandwidth whose conditional distribution over the given
/// squared distances has perplexity `perplexity` (relative tolerance 1e-5,
/// at most 200 steps), searching from the mean distance.
SigmaSolution solve_sigma(std::span<const double> sq_distances, double perplexity);

/// p_j proportional to exp(-d_j / (2 sigma^2)), normalized over the list.
std::vector<double> gaussian_conditional(std::span<const double> sq_distances, double sigma);

/// Shannon entropy in bits of a normalized distribution.
double entropy_bits(std::span<const double> p);

/// One point's sparse similarity row.
struct GaussianRow {
  PointId owner{};
  std::vector<Neighbor> neighbors;  // ascending by (distance, id)
  std::vector<double> cond_prob;    // p_{j|owner}, parallel to neighbors
  double sigma = 1.0;
  double requested_precision = 0.0;
  bool exact = false;
  bool degenerate = false;
  /// Slots vacated by deleted neighbors; such slots are not backfilled.
  std::uint32_t missing = 0;

  double d_max_sq() const noexcept {
    return neighbors.empty() ? 0.0 : static_cast<double>(neighbors.back().distance);
  }
  /// p_{j|owner}, or 0 when j is not a stored neighbor.
  double conditional(PointId j) const noexcept;
  /// Recomputes cond_prob from the stored distances with the current sigma.
  void renormalize();
};

/// Builds a row from a neighbor list (owner excluded). Requires at least two
/// neighbors. Exact lists force requested_precision to 1.
GaussianRow build_row(PointId owner, const NeighborList& neighbors, double perplexity,
                      double requested_precision);

/// Like build_row but accepts fewer than two neighbors, clamping the target
/// perplexity to the neighbor count. Used while a dataset is still smaller
/// than the neighborhood size.
GaussianRow build_partial_row(PointId owner, const NeighborList& neighbors, double perplexity,
                              double requested_precision);

inline std::size_t neighborhood_size(double perplexity) {
  return static_cast<std::size_t>(std::floor(3.0 * perplexity));
}

struct JointEntry {
  PointId i;
  PointId j;
  double p;
};

/// Rows of all live points plus the transpose of the neighbor relation. The
/// joint distribution p_ij = p_{j|i}/2N + p_{i|j}/2N is evaluated on demand.
class SimilarityStore {
 public:
  explicit SimilarityStore(double perplexity);

  double perplexity() const noexcept { return perplexity_; }
  std::size_t k() const noexcept { return k_; }
  /// N in the 1/2N normalization: the number of rows.
  std::size_t size() const noexcept { return rows_count_; }

  bool has_row(PointId id) const noexcept {
    return slot(id) < present_.size() && present_[slot(id)] != 0;
  }
  const GaussianRow& row(PointId id) const;
  /// Owners whose rows contain `id`.
  std::span<const PointId> reverse(PointId id) const noexcept;

  /// Installs a row for an owner without one. Throws if it already has one.
  void add_row(GaussianRow row);
  /// Swaps in a new version of an existing row and returns the ids whose
  /// joint probability with someone changed (owner plus affected partners);
  /// empty for an identical row.
  std::vector<PointId> replace_row(GaussianRow row);
  /// Drops the row of `owner` and its reverse links.
  void erase_row(PointId owner);

  /// Removes `neighbor` from `owner`'s row and renormalizes with the existing
  /// sigma. Returns false when the row did not contain it.
  bool drop_neighbor(PointId owner, PointId neighbor);
  /// Inserts `candidate` into `owner`'s row, evicting the farthest neighbor if
  /// the row is full, and renormalizes with the existing sigma.
  void admit_neighbor(PointId owner, Neighbor candidate);
  /// Direct mutable access for bookkeeping fields (precision, flags).
  GaussianRow& mutable_row(PointId id);

  double joint(PointId i, PointId j) const;

  /// Every ordered pair with p_ij > 0.
  std::vector<JointEntry> nonzero_joint() const;

  std::vector<PointId> owners() const;

  /// Full-scan check that the reverse index is the transpose of the rows.
  std::optional<std::string> validate() const;

 private:
  void link(PointId owner, PointId neighbor);
  void unlink(PointId owner, PointId neighbor);
  void ensure_slot(std::size_t s);

  double perplexity_;
  std::size_t k_;
  std::size_t rows_count_ = 0;
  std::vector<GaussianRow> rows_;
  std::vector<std::uint8_t> present_;
  std::vector<std::vector<PointId>> reverse_;
};

struct SimilarityConfig {
  double perplexity = 30.0;
  double target_precision = 0.8;
  std::size_t calibration_sample = 1000;
  std::size_t variance_pool = 5;
  std::uint64_t seed = 0;
  /// Skip calibration and use these forest parameters.
  std::optional<ForestParams> fixed_forest;
};

struct InitResult {
  SimilarityStore store;
  KdForest forest;
  ForestParams forest_params;
  std::optional<CalibrationResult> calibration;
  double knn_ms = 0.0;
  double rows_ms = 0.0;
};

/// Computes every row: brute force when the target precision is 1, otherwise
/// through a forest calibrated for the target (or the fixed parameters).
InitResult init_all(const PointStore& points, const SimilarityConfig& config);

}  // namespace atsne
