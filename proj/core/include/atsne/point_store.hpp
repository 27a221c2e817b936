#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "atsne/types.hpp"

namespace atsne {

/// Dense row-major store of the high-dimensional points. Deleted rows go to a
/// free list and are reused by later insertions; a per-slot generation counter
/// distinguishes successive occupants of one slot.
class PointStore {
 public:
  explicit PointStore(std::size_t dim);

  /// Builds a store holding `rows` (row-major, n x dim) with ids 0..n-1.
  static PointStore from_rows(std::size_t dim, std::span<const float> rows);

  /// Builds a store whose live ids are exactly `ids`; slots not named are
  /// allocated dead and enter the free list.
  static PointStore with_ids(std::size_t dim, std::span<const PointId> ids,
                             std::span<const float> rows);

  PointId add(std::span<const float> coords);
  void remove(PointId id);

  bool contains(PointId id) const noexcept {
    return slot(id) < live_.size() && live_[slot(id)] != 0;
  }
  std::uint32_t generation(PointId id) const noexcept { return generation_[slot(id)]; }

  std::span<const float> row(PointId id) const {
    return {coords_.data() + slot(id) * dim_, dim_};
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return live_ids_.size(); }
  bool empty() const noexcept { return live_ids_.empty(); }
  /// One past the largest slot ever allocated.
  std::size_t capacity() const noexcept { return live_.size(); }

  /// Live ids in a deterministic order (insertion order, swap-removed).
  const std::vector<PointId>& ids() const noexcept { return live_ids_; }

  /// Throws Errc::unknown_id unless `id` is live.
  void require(PointId id) const;

 private:
  std::size_t dim_;
  std::vector<float> coords_;
  std::vector<std::uint8_t> live_;
  std::vector<std::uint32_t> generation_;
  std::vector<std::uint32_t> position_;  // index into live_ids_
  std::vector<PointId> live_ids_;
  std::vector<PointId> free_;
};

/// Squared Euclidean distance, the only metric used for neighborhoods.
inline float squared_distance(std::span<const float> a, std::span<const float> b) noexcept {
  float acc = 0.0f;
  const std::size_t n = a.size();
  for (std::size_t k = 0; k < n; ++k) {
    const float d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

}  // namespace atsne
