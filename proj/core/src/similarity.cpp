#include "atsne/similarity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "atsne/parallel.hpp"

namespace atsne {

std::vector<double> gaussian_conditional(std::span<const double> sq_distances, double sigma) {
  std::vector<double> p(sq_distances.size());
  if (p.empty()) return p;
  const double d_min = *std::min_element(sq_distances.begin(), sq_distances.end());
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = std::exp(-(sq_distances[j] - d_min) * inv);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

double entropy_bits(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return h;
}

SigmaSolution solve_sigma(std::span<const double> sq_distances, double perplexity) {
  const std::size_t k = sq_distances.size();
  if (k < 2) throw Error(Errc::invalid_argument, "perplexity search needs at least two distances");
  if (!(perplexity >= 1.0)) throw Error(Errc::invalid_argument, "perplexity must be at least 1");
  if (perplexity > static_cast<double>(k)) {
    throw Error(Errc::invalid_argument, "perplexity exceeds the neighbor count");
  }
  double mean = 0.0;
  for (double d : sq_distances) {
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw Error(Errc::invalid_argument, "distances must be finite and non-negative");
    }
    mean += std::sqrt(d);
  }
  mean /= static_cast<double>(k);

  SigmaSolution out;
  const auto [lo_it, hi_it] = std::minmax_element(sq_distances.begin(), sq_distances.end());
  if (*lo_it == *hi_it) {
    out.sigma = mean > 0.0 ? mean : 1.0;
    out.probabilities.assign(k, 1.0 / static_cast<double>(k));
    out.perplexity = static_cast<double>(k);
    out.degenerate = true;
    return out;
  }

  auto evaluate = [&](double sigma) {
    auto p = gaussian_conditional(sq_distances, sigma);
    const double perp = std::exp2(entropy_bits(p));
    return std::pair{perp, std::move(p)};
  };
  auto converged = [&](double perp) {
    return std::abs(perp - perplexity) / perplexity < kPerplexityTolerance;
  };

  double sigma = mean;
  auto [perp, probs] = evaluate(sigma);
  std::size_t it = 1;
  double lo = 0.0;
  double hi = 0.0;
  // Bracket by halving or doubling; perplexity grows with sigma.
  if (!converged(perp)) {
    const bool too_wide = perp > perplexity;
    (too_wide ? hi : lo) = sigma;
    while (it < kMaxSigmaIterations) {
      sigma = too_wide ? sigma * 0.5 : sigma * 2.0;
      std::tie(perp, probs) = evaluate(sigma);
      ++it;
      if (converged(perp)) break;
      if ((perp > perplexity) == too_wide) {
        (too_wide ? hi : lo) = sigma;
      } else {
        (too_wide ? lo : hi) = sigma;
        break;
      }
    }
    while (!converged(perp) && it < kMaxSigmaIterations && lo > 0.0 && hi > 0.0) {
      sigma = std::sqrt(lo * hi);
      std::tie(perp, probs) = evaluate(sigma);
      ++it;
      (perp > perplexity ? hi : lo) = sigma;
    }
  }
  out.sigma = sigma;
  out.probabilities = std::move(probs);
  out.perplexity = perp;
  out.iterations = it;
  out.degenerate = !converged(perp);
  return out;
}

double GaussianRow::conditional(PointId j) const noexcept {
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    if (neighbors[k].id == j) return cond_prob[k];
  }
  return 0.0;
}

void GaussianRow::renormalize() {
  std::vector<double> d(neighbors.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = neighbors[k].distance;
  cond_prob = gaussian_conditional(d, sigma);
}

namespace {

GaussianRow make_row(PointId owner, const NeighborList& list, double perplexity,
                     double requested_precision) {
  GaussianRow row;
  row.owner = owner;
  row.neighbors = list.neighbors;
  row.exact = list.exact;
  row.requested_precision = list.exact ? 1.0 : requested_precision;
  const std::size_t k = row.neighbors.size();
  if (k == 1) {
    row.cond_prob = {1.0};
    row.sigma = std::max(std::sqrt(static_cast<double>(row.neighbors[0].distance)), 1e-12);
    row.degenerate = true;
  } else if (k >= 2) {
    std::vector<double> d(k);
    for (std::size_t j = 0; j < k; ++j) d[j] = row.neighbors[j].distance;
    const double target = std::min(perplexity, static_cast<double>(k));
    auto solution = solve_sigma(d, target);
    row.sigma = solution.sigma;
    row.cond_prob = std::move(solution.probabilities);
    row.degenerate = solution.degenerate || target < perplexity;
  } else {
    row.degenerate = true;
  }
  return row;
}

}  // namespace

GaussianRow build_row(PointId owner, const NeighborList& neighbors, double perplexity,
                      double requested_precision) {
  if (neighbors.neighbors.size() < 2) {
    throw Error(Errc::invalid_argument, "a similarity row needs at least two neighbors");
  }
  for (const auto& n : neighbors.neighbors) {
    if (n.id == owner) throw Error(Errc::invalid_argument, "neighbor list contains its owner");
  }
  return make_row(owner, neighbors, perplexity, requested_precision);
}

GaussianRow build_partial_row(PointId owner, const NeighborList& neighbors, double perplexity,
                              double requested_precision) {
  return make_row(owner, neighbors, perplexity, requested_precision);
}

SimilarityStore::SimilarityStore(double perplexity)
    : perplexity_(perplexity), k_(neighborhood_size(perplexity)) {
  if (!(perplexity >= 1.0)) throw Error(Errc::invalid_argument, "perplexity must be at least 1");
}

void SimilarityStore::ensure_slot(std::size_t s) {
  if (s >= rows_.size()) {
    rows_.resize(s + 1);
    present_.resize(s + 1, 0);
    reverse_.resize(s + 1);
  }
}

const GaussianRow& SimilarityStore::row(PointId id) const {
  if (!has_row(id)) throw Error(Errc::unknown_id, "no row for point " + std::to_string(raw(id)));
  return rows_[slot(id)];
}

GaussianRow& SimilarityStore::mutable_row(PointId id) {
  if (!has_row(id)) throw Error(Errc::unknown_id, "no row for point " + std::to_string(raw(id)));
  return rows_[slot(id)];
}

std::span<const PointId> SimilarityStore::reverse(PointId id) const noexcept {
  if (slot(id) >= reverse_.size()) return {};
  return reverse_[slot(id)];
}

void SimilarityStore::link(PointId owner, PointId neighbor) {
  ensure_slot(slot(neighbor));
  reverse_[slot(neighbor)].push_back(owner);
}

void SimilarityStore::unlink(PointId owner, PointId neighbor) {
  auto& owners = reverse_[slot(neighbor)];
  auto it = std::find(owners.begin(), owners.end(), owner);
  if (it != owners.end()) {
    *it = owners.back();
    owners.pop_back();
  }
}

void SimilarityStore::add_row(GaussianRow row) {
  ensure_slot(slot(row.owner));
  if (present_[slot(row.owner)]) {
    throw Error(Errc::duplicate_id, "point " + std::to_string(raw(row.owner)) + " already has a row");
  }
  for (const auto& n : row.neighbors) link(row.owner, n.id);
  const std::size_t s = slot(row.owner);
  rows_[s] = std::move(row);
  present_[s] = 1;
  ++rows_count_;
}

std::vector<PointId> SimilarityStore::replace_row(GaussianRow row) {
  if (!has_row(row.owner)) {
    throw Error(Errc::unknown_id, "no row for point " + std::to_string(raw(row.owner)));
  }
  for (const auto& n : row.neighbors) ensure_slot(slot(n.id));
  GaussianRow& old = rows_[slot(row.owner)];
  std::unordered_map<std::uint32_t, double> before;
  before.reserve(old.neighbors.size());
  for (std::size_t k = 0; k < old.neighbors.size(); ++k) {
    before.emplace(raw(old.neighbors[k].id), old.cond_prob[k]);
  }
  std::vector<PointId> changed;
  for (std::size_t k = 0; k < row.neighbors.size(); ++k) {
    auto it = before.find(raw(row.neighbors[k].id));
    if (it == before.end()) {
      changed.push_back(row.neighbors[k].id);
    } else {
      if (it->second != row.cond_prob[k]) changed.push_back(row.neighbors[k].id);
      before.erase(it);
    }
  }
  for (const auto& n : old.neighbors) {
    if (before.contains(raw(n.id))) changed.push_back(n.id);
  }
  if (!changed.empty()) changed.insert(changed.begin(), row.owner);

  for (const auto& n : old.neighbors) unlink(row.owner, n.id);
  for (const auto& n : row.neighbors) link(row.owner, n.id);
  old = std::move(row);
  return changed;
}

void SimilarityStore::erase_row(PointId owner) {
  if (!has_row(owner)) {
    throw Error(Errc::unknown_id, "no row for point " + std::to_string(raw(owner)));
  }
  GaussianRow& row = rows_[slot(owner)];
  for (const auto& n : row.neighbors) unlink(owner, n.id);
  row = GaussianRow{};
  present_[slot(owner)] = 0;
  --rows_count_;
}

bool SimilarityStore::drop_neighbor(PointId owner, PointId neighbor) {
  GaussianRow& row = mutable_row(owner);
  auto it = std::find_if(row.neighbors.begin(), row.neighbors.end(),
                         [&](const Neighbor& n) { return n.id == neighbor; });
  if (it == row.neighbors.end()) return false;
  row.neighbors.erase(it);
  ++row.missing;
  unlink(owner, neighbor);
  row.renormalize();
  return true;
}

void SimilarityStore::admit_neighbor(PointId owner, Neighbor candidate) {
  ensure_slot(slot(candidate.id));
  GaussianRow& row = mutable_row(owner);
  if (row.neighbors.size() + row.missing >= k_ && !row.neighbors.empty()) {
    unlink(owner, row.neighbors.back().id);
    row.neighbors.pop_back();
  }
  auto pos = std::lower_bound(row.neighbors.begin(), row.neighbors.end(), candidate, closer);
  row.neighbors.insert(pos, candidate);
  link(owner, candidate.id);
  row.renormalize();
}

double SimilarityStore::joint(PointId i, PointId j) const {
  if (i == j) throw Error(Errc::invalid_argument, "joint probability of a point with itself");
  const double two_n = 2.0 * static_cast<double>(rows_count_);
  const double p_ji = has_row(i) ? rows_[slot(i)].conditional(j) : 0.0;
  const double p_ij = has_row(j) ? rows_[slot(j)].conditional(i) : 0.0;
  return p_ji / two_n + p_ij / two_n;
}

std::vector<JointEntry> SimilarityStore::nonzero_joint() const {
  std::vector<JointEntry> out;
  const double two_n = 2.0 * static_cast<double>(rows_count_);
  std::unordered_map<std::uint32_t, double> acc;
  for (std::size_t s = 0; s < rows_.size(); ++s) {
    if (!present_[s]) continue;
    const PointId i = to_id(s);
    acc.clear();
    const GaussianRow& row = rows_[s];
    for (std::size_t k = 0; k < row.neighbors.size(); ++k) {
      acc[raw(row.neighbors[k].id)] += row.cond_prob[k] / two_n;
    }
    for (PointId owner : reverse_[s]) {
      acc[raw(owner)] += rows_[slot(owner)].conditional(i) / two_n;
    }
    std::vector<std::pair<std::uint32_t, double>> sorted(acc.begin(), acc.end());
    std::sort(sorted.begin(), sorted.end());
    for (const auto& [j, p] : sorted) {
      if (p > 0.0) out.push_back({i, static_cast<PointId>(j), p});
    }
  }
  return out;
}

std::vector<PointId> SimilarityStore::owners() const {
  std::vector<PointId> out;
  out.reserve(rows_count_);
  for (std::size_t s = 0; s < rows_.size(); ++s) {
    if (present_[s]) out.push_back(to_id(s));
  }
  return out;
}

std::optional<std::string> SimilarityStore::validate() const {
  std::vector<std::vector<std::uint32_t>> expected(reverse_.size());
  for (std::size_t s = 0; s < rows_.size(); ++s) {
    if (!present_[s]) continue;
    const GaussianRow& row = rows_[s];
    if (row.cond_prob.size() != row.neighbors.size()) {
      return "row " + std::to_string(s) + ": probability count mismatch";
    }
    for (std::size_t k = 1; k < row.neighbors.size(); ++k) {
      if (closer(row.neighbors[k], row.neighbors[k - 1])) {
        return "row " + std::to_string(s) + ": neighbors not sorted";
      }
    }
    for (const auto& n : row.neighbors) {
      if (slot(n.id) >= expected.size()) return "row " + std::to_string(s) + ": id out of range";
      if (n.id == row.owner) return "row " + std::to_string(s) + ": contains its owner";
      expected[slot(n.id)].push_back(static_cast<std::uint32_t>(s));
    }
  }
  for (std::size_t s = 0; s < reverse_.size(); ++s) {
    std::vector<std::uint32_t> actual;
    for (PointId o : reverse_[s]) actual.push_back(raw(o));
    std::sort(actual.begin(), actual.end());
    std::sort(expected[s].begin(), expected[s].end());
    if (actual != expected[s]) {
      return "reverse index of " + std::to_string(s) + " is not the transpose of the rows";
    }
  }
  return std::nullopt;
}

InitResult init_all(const PointStore& points, const SimilarityConfig& config) {
  const std::size_t k = neighborhood_size(config.perplexity);
  if (points.size() < k + 1) {
    throw Error(Errc::invalid_argument, "dataset has " + std::to_string(points.size()) +
                                            " points; the neighborhood size " +
                                            std::to_string(k) + " needs at least " +
                                            std::to_string(k + 1));
  }
  if (!(config.target_precision > 0.0 && config.target_precision <= 1.0)) {
    throw Error(Errc::invalid_argument, "target precision must lie in (0, 1]");
  }
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();

  const std::size_t pool = std::min(config.variance_pool, points.dim());
  const bool exact = config.target_precision >= 1.0 && !config.fixed_forest;
  std::optional<CalibrationResult> calibration;
  ForestParams params;
  if (config.fixed_forest) {
    params = *config.fixed_forest;
  } else if (exact) {
    params = {4, pool, SIZE_MAX, config.seed};
  } else {
    const std::size_t sample = std::min(config.calibration_sample, points.size());
    calibration = calibrate(points, k, config.target_precision, sample, config.seed,
                            CalibrationOptions{.variance_pool = pool});
    params = {calibration->trees, calibration->variance_pool, calibration->leaf_budget,
              config.seed};
  }
  KdForest forest = KdForest::build(points, params);

  const auto& ids = points.ids();
  std::vector<NeighborList> lists(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    lists[i] = exact ? brute_force_knn(points, ids[i], k)
                     : forest.query_point(ids[i], k, params.leaf_budget);
  });
  const auto t1 = clock::now();

  std::vector<GaussianRow> rows(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    rows[i] = build_row(ids[i], lists[i], config.perplexity, config.target_precision);
  });
  SimilarityStore store(config.perplexity);
  for (auto& row : rows) store.add_row(std::move(row));
  const auto t2 = clock::now();

  InitResult result{std::move(store), std::move(forest), params, calibration, 0.0, 0.0};
  result.knn_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  result.rows_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  return result;
}

}  // namespace atsne
