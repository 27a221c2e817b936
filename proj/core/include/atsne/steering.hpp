#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_set>
#include <vector>

#include "atsne/engine.hpp"

namespace atsne {

enum class Strategy { user_selection, breadth_first, density_based, random_global };
enum class TaskState { running, paused, finished, cancelled };

std::string_view to_string(Strategy s) noexcept;
std::string_view to_string(TaskState s) noexcept;
/// Throws Errc::invalid_argument for unknown names.
Strategy parse_strategy(std::string_view name);

struct RefinementTarget {
  PointId id;
  std::uint32_t generation;  // PointStore generation when scheduled
};

struct RefinementTask {
  std::uint64_t id = 0;
  std::string description;
  Strategy strategy = Strategy::user_selection;
  std::vector<RefinementTarget> targets;
  std::size_t done = 0;
  std::size_t skipped = 0;  // deleted before their turn
  std::shared_ptr<const Snapshot> snapshot_ref;
  TaskState state = TaskState::running;
};

/// done / |targets|, 1 for an empty task.
double task_progress(const RefinementTask& task) noexcept;

/// Exact row of a live point, requested precision 1.
GaussianRow refine_point(const Engine& engine, PointId id);

/// Prim-style visit of the directed KNN graph starting from the seeds (emitted
/// first, in order). The frontier is keyed by the distance of the edge from an
/// already visited point; ties go to the smaller id. Stops after `budget` ids
/// (default 10 * |seeds|).
std::vector<PointId> bfs_order(const SimilarityStore& store, std::span<const PointId> seeds,
                               std::optional<std::size_t> budget = std::nullopt);

/// Candidates by sigma descending, ties by ascending id.
std::vector<PointId> density_order(const SimilarityStore& store,
                                   std::span<const PointId> candidates);

/// All live ids in a random order determined by `seed`.
std::vector<PointId> random_order(const PointStore& points, std::uint64_t seed);

/// Orders the targets for `strategy`. Seeds must be live except for
/// random_global, which ignores them; an empty seed set for density_based
/// means every live point.
RefinementTask make_task(const Engine& engine, Strategy strategy,
                         std::span<const PointId> seeds, std::string description,
                         std::uint64_t task_id, std::uint64_t seed,
                         std::optional<std::size_t> bfs_budget = std::nullopt);

/// Runs a task to completion on the calling thread, applying every row.
void run_task(Engine& engine, RefinementTask& task);

/// Single worker thread refining tasks in FIFO order. Rows are computed under
/// a shared lock on `mutex` and handed to `publish` with the owner's
/// generation; the owner applies them at an iteration boundary, unless the
/// point was deleted meanwhile, and then calls `applied`.
class Refiner {
 public:
  using Publish = std::function<void(GaussianRow, std::uint32_t generation)>;

  Refiner(const Engine& engine, std::shared_mutex& mutex, Publish publish);
  ~Refiner();
  Refiner(const Refiner&) = delete;
  Refiner& operator=(const Refiner&) = delete;

  void enqueue(RefinementTask task);
  /// Returns false for an unknown task id.
  bool set_state(std::uint64_t task_id, TaskState state);
  /// Marks a published row as applied to the store.
  void applied(PointId id);

  std::vector<RefinementTask> tasks() const;
  std::optional<RefinementTask> task(std::uint64_t task_id) const;
  /// True when no running task has work left.
  bool idle() const;
  void stop();

 private:
  void run();
  std::shared_ptr<RefinementTask> next_task();

  const Engine& engine_;
  std::shared_mutex& engine_mutex_;
  Publish publish_;

  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::deque<std::shared_ptr<RefinementTask>> tasks_;
  std::unordered_set<std::uint32_t> pending_;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace atsne
