#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "atsne/engine.hpp"

namespace atsne {

/// Adds a point: stores and indexes it, builds its row from the approximate
/// neighborhood, offers it to every row it is closer to than that row's
/// farthest neighbor, and places it at the similarity-weighted mean of its
/// neighbors' positions plus noise at the initial embedding scale. Rows
/// shorter than K (datasets still smaller than the neighborhood) take the
/// point unconditionally.
PointId insert_point(Engine& engine, std::span<const float> coords);

/// Removes a point from every row that references it (rho -= 1/K, no
/// backfill), then from the store, forest and embedding.
void delete_point(Engine& engine, PointId id);

/// Replaces the high-dimensional data of every point. The id set must match.
/// Positions are kept and every point restarts with the global exaggeration
/// for half the exaggeration period.
void redim(Engine& engine, PointStore points);

/// Sliding window over a stream of timestamped readings.
class StreamWindow {
 public:
  /// `duration` in the caller's logical time unit.
  explicit StreamWindow(std::int64_t duration);

  struct TickResult {
    std::vector<PointId> inserted;
    std::vector<PointId> expired;
  };

  /// Expires readings with now - timestamp >= duration, then inserts the
  /// arrivals stamped `now`. `now` must not decrease. Arrivals are row-major.
  TickResult tick(Engine& engine, std::int64_t now, std::span<const float> arrivals);

  std::int64_t duration() const noexcept { return duration_; }
  std::size_t size() const noexcept { return queue_.size(); }
  std::size_t high_watermark() const noexcept { return watermark_; }
  /// Drops a reading deleted outside the window.
  void forget(PointId id);

 private:
  struct Reading {
    std::int64_t timestamp;
    PointId id;
    std::uint32_t generation;
  };
  std::int64_t duration_;
  std::int64_t last_now_ = INT64_MIN;
  std::deque<Reading> queue_;
  std::size_t watermark_ = 0;
};

}  // namespace atsne
