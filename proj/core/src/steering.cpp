#include "atsne/steering.hpp"

#include <algorithm>
#include <queue>
#include <random>
#include <unordered_map>

namespace atsne {

std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::user_selection: return "user_selection";
    case Strategy::breadth_first: return "breadth_first";
    case Strategy::density_based: return "density_based";
    case Strategy::random_global: return "random_global";
  }
  return "unknown";
}

std::string_view to_string(TaskState s) noexcept {
  switch (s) {
    case TaskState::running: return "running";
    case TaskState::paused: return "paused";
    case TaskState::finished: return "finished";
    case TaskState::cancelled: return "cancelled";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::user_selection, Strategy::breadth_first, Strategy::density_based,
                     Strategy::random_global}) {
    if (to_string(s) == name) return s;
  }
  throw Error(Errc::invalid_argument, "unknown strategy '" + std::string(name) + "'");
}

double task_progress(const RefinementTask& task) noexcept {
  if (task.targets.empty()) return 1.0;
  return static_cast<double>(task.done) / static_cast<double>(task.targets.size());
}

GaussianRow refine_point(const Engine& engine, PointId id) {
  engine.points().require(id);
  return engine.exact_row(id);
}

std::vector<PointId> bfs_order(const SimilarityStore& store, std::span<const PointId> seeds,
                               std::optional<std::size_t> budget) {
  if (seeds.empty()) throw Error(Errc::invalid_argument, "breadth-first order needs seeds");
  const std::size_t limit = budget.value_or(10 * seeds.size());
  struct Edge {
    float distance;
    PointId id;
    bool operator>(const Edge& o) const noexcept {
      return distance > o.distance || (distance == o.distance && raw(id) > raw(o.id));
    }
  };
  std::priority_queue<Edge, std::vector<Edge>, std::greater<>> frontier;
  std::unordered_set<std::uint32_t> visited;
  std::vector<PointId> out;
  auto visit = [&](PointId id) {
    if (out.size() >= limit || !visited.insert(raw(id)).second) return;
    out.push_back(id);
    if (!store.has_row(id)) return;
    for (const Neighbor& n : store.row(id).neighbors) {
      if (!visited.contains(raw(n.id))) frontier.push({n.distance, n.id});
    }
  };
  for (PointId s : seeds) visit(s);
  while (!frontier.empty() && out.size() < limit) {
    const Edge e = frontier.top();
    frontier.pop();
    visit(e.id);
  }
  return out;
}

std::vector<PointId> density_order(const SimilarityStore& store,
                                   std::span<const PointId> candidates) {
  std::vector<std::pair<double, PointId>> keyed;
  keyed.reserve(candidates.size());
  for (PointId id : candidates) keyed.emplace_back(store.row(id).sigma, id);
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && raw(a.second) < raw(b.second));
  });
  std::vector<PointId> out;
  out.reserve(keyed.size());
  for (const auto& [sigma, id] : keyed) out.push_back(id);
  return out;
}

std::vector<PointId> random_order(const PointStore& points, std::uint64_t seed) {
  std::vector<PointId> ids = points.ids();
  std::sort(ids.begin(), ids.end(), [](PointId a, PointId b) { return raw(a) < raw(b); });
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

RefinementTask make_task(const Engine& engine, Strategy strategy, std::span<const PointId> seeds,
                         std::string description, std::uint64_t task_id, std::uint64_t seed,
                         std::optional<std::size_t> bfs_budget) {
  const PointStore& points = engine.points();
  if (strategy != Strategy::random_global) {
    for (PointId id : seeds) points.require(id);
  }
  std::vector<PointId> order;
  switch (strategy) {
    case Strategy::user_selection:
      order.assign(seeds.begin(), seeds.end());
      break;
    case Strategy::breadth_first:
      order = bfs_order(engine.similarity(), seeds, bfs_budget);
      break;
    case Strategy::density_based:
      order = seeds.empty() ? density_order(engine.similarity(), points.ids())
                            : density_order(engine.similarity(), seeds);
      break;
    case Strategy::random_global:
      order = random_order(points, seed);
      break;
  }
  RefinementTask task;
  task.id = task_id;
  task.description = std::move(description);
  task.strategy = strategy;
  task.targets.reserve(order.size());
  for (PointId id : order) task.targets.push_back({id, points.generation(id)});
  task.snapshot_ref = std::make_shared<const Snapshot>(engine.snapshot());
  if (task.targets.empty()) task.state = TaskState::finished;
  return task;
}

namespace {

bool still_live(const PointStore& points, const RefinementTarget& t) {
  return points.contains(t.id) && points.generation(t.id) == t.generation;
}

bool already_exact(const SimilarityStore& store, PointId id) {
  if (!store.has_row(id)) return false;
  const GaussianRow& row = store.row(id);
  return row.exact && row.missing == 0;
}

}  // namespace

void run_task(Engine& engine, RefinementTask& task) {
  for (std::size_t k = task.done; k < task.targets.size(); ++k) {
    const RefinementTarget& t = task.targets[k];
    if (!still_live(engine.points(), t)) {
      ++task.skipped;
    } else if (!already_exact(engine.similarity(), t.id)) {
      engine.apply_row(refine_point(engine, t.id));
    }
    ++task.done;
  }
  task.state = TaskState::finished;
}

Refiner::Refiner(const Engine& engine, std::shared_mutex& mutex, Publish publish)
    : engine_(engine), engine_mutex_(mutex), publish_(std::move(publish)) {
  worker_ = std::thread([this] { run(); });
}

Refiner::~Refiner() { stop(); }

void Refiner::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Refiner::enqueue(RefinementTask task) {
  {
    std::lock_guard lock(mutex_);
    tasks_.push_back(std::make_shared<RefinementTask>(std::move(task)));
  }
  wake_.notify_all();
}

bool Refiner::set_state(std::uint64_t task_id, TaskState state) {
  {
    std::lock_guard lock(mutex_);
    auto it = std::find_if(tasks_.begin(), tasks_.end(),
                           [&](const auto& t) { return t->id == task_id; });
    if (it == tasks_.end()) return false;
    RefinementTask& task = **it;
    if (task.state == TaskState::finished || task.state == TaskState::cancelled) return true;
    if (state == TaskState::finished) {
      throw Error(Errc::invalid_argument, "a task cannot be finished externally");
    }
    task.state = state;
  }
  wake_.notify_all();
  return true;
}

void Refiner::applied(PointId id) {
  std::lock_guard lock(mutex_);
  pending_.erase(raw(id));
}

std::vector<RefinementTask> Refiner::tasks() const {
  std::lock_guard lock(mutex_);
  std::vector<RefinementTask> out;
  out.reserve(tasks_.size());
  for (const auto& t : tasks_) out.push_back(*t);
  return out;
}

std::optional<RefinementTask> Refiner::task(std::uint64_t task_id) const {
  std::lock_guard lock(mutex_);
  for (const auto& t : tasks_) {
    if (t->id == task_id) return *t;
  }
  return std::nullopt;
}

bool Refiner::idle() const {
  std::lock_guard lock(mutex_);
  return std::none_of(tasks_.begin(), tasks_.end(),
                      [](const auto& t) { return t->state == TaskState::running; });
}

std::shared_ptr<RefinementTask> Refiner::next_task() {
  for (const auto& t : tasks_) {
    if (t->state == TaskState::running) return t;
  }
  return nullptr;
}

void Refiner::run() {
  std::unique_lock lock(mutex_);
  while (true) {
    wake_.wait(lock, [&] { return stopping_ || next_task() != nullptr; });
    if (stopping_) return;
    auto task = next_task();
    const RefinementTarget target = task->targets[task->done];
    const bool pending = pending_.contains(raw(target.id));
    lock.unlock();

    std::optional<GaussianRow> row;
    bool skipped = false;
    {
      std::shared_lock read(engine_mutex_);
      if (!still_live(engine_.points(), target)) {
        skipped = true;
      } else if (!pending && !already_exact(engine_.similarity(), target.id)) {
        row = engine_.exact_row(target.id);
      }
    }

    lock.lock();
    if (row) pending_.insert(raw(target.id));
    if (skipped) ++task->skipped;
    ++task->done;
    if (task->done == task->targets.size() && task->state == TaskState::running) {
      task->state = TaskState::finished;
    }
    if (row) {
      lock.unlock();
      publish_(std::move(*row), target.generation);
      lock.lock();
    }
  }
}

}  // namespace atsne
