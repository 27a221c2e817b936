#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "atsne/point_store.hpp"
#include "atsne/types.hpp"

namespace atsne {

struct Neighbor {
  PointId id;
  float distance;  // squared Euclidean

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Orders by distance, then by ascending id.
inline bool closer(const Neighbor& a, const Neighbor& b) noexcept {
  return a.distance < b.distance || (a.distance == b.distance && raw(a.id) < raw(b.id));
}

struct NeighborList {
  PointId owner{};
  std::vector<Neighbor> neighbors;  // ascending by (distance, id)
  bool exact = false;
};

/// Bounded collector keeping the k best candidates seen so far.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  bool full() const noexcept { return heap_.size() >= k_; }
  std::size_t size() const noexcept { return heap_.size(); }
  /// Distance of the current k-th candidate; only meaningful when full().
  float worst() const noexcept { return heap_.front().distance; }

  void offer(PointId id, float distance) {
    const Neighbor n{id, distance};
    if (heap_.size() < k_) {
      heap_.push_back(n);
      std::push_heap(heap_.begin(), heap_.end(), closer);
    } else if (k_ > 0 && closer(n, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), closer);
      heap_.back() = n;
      std::push_heap(heap_.begin(), heap_.end(), closer);
    }
  }

  std::vector<Neighbor> take_sorted() && {
    std::sort_heap(heap_.begin(), heap_.end(), closer);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

/// Exact K nearest neighbors of a stored point by linear scan. K is clamped to
/// the number of other live points.
NeighborList brute_force_knn(const PointStore& points, PointId owner, std::size_t k);

/// Exact K nearest stored points to an arbitrary query vector.
std::vector<Neighbor> brute_force_query(const PointStore& points, std::span<const float> query,
                                        std::size_t k,
                                        std::optional<PointId> exclude = std::nullopt);

/// Mean fraction of exact neighbors recovered by the approximate lists, matched
/// by owner position.
double measure_recall(std::span<const NeighborList> approx, std::span<const NeighborList> exact);

}  // namespace atsne
