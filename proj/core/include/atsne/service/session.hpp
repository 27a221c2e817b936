#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "atsne/dataset_io.hpp"
#include "atsne/dynamics.hpp"
#include "atsne/engine.hpp"
#include "atsne/service/protocol.hpp"
#include "atsne/steering.hpp"

namespace atsne::service {

enum class RunState { idle, running, paused, brushing };
std::string_view to_string(RunState s) noexcept;

struct SessionConfig {
  EngineConfig engine;
  std::size_t snapshot_stride = 1;
  /// Brushing pauses only snapshot emission unless this is set.
  bool pause_optimizer_on_brush = false;
  /// Dense KL estimate in snapshot events; honored for N <= 10 000 only.
  bool emit_kl = false;
  std::size_t command_capacity = 256;
  /// Sliding window duration for stream_tick, in the caller's time unit.
  std::optional<std::int64_t> window;
};

struct TaskInfo {
  std::uint64_t id = 0;
  std::string description;
  Strategy strategy = Strategy::user_selection;
  TaskState state = TaskState::running;
  std::size_t total = 0;
  std::size_t done = 0;
  std::size_t skipped = 0;
  std::size_t snapshot_iteration = 0;

  double progress() const noexcept {
    return total == 0 ? 1.0 : static_cast<double>(done) / static_cast<double>(total);
  }
};

struct SnapshotEvent {
  Snapshot snapshot;
  std::vector<TaskInfo> tasks;
  /// Changes since the previous event, applied as: drop `removed`, then add
  /// `inserted`. Ids are reused, so one id may appear in both.
  std::vector<PointId> inserted;
  std::vector<PointId> removed;
  std::optional<double> kl;
};

/// `snapshot` envelope plus its positions (kind 1) and rho (kind 3) frames.
Message snapshot_message(const SnapshotEvent& event, std::uint64_t seq,
                         const std::string& type = "snapshot");

/// Single-slot latest-wins delivery of snapshot events. A replaced event's
/// inserted and removed lists are folded into its successor.
class Mailbox {
 public:
  void publish(std::shared_ptr<const SnapshotEvent> event);
  /// Latest unread event, or null.
  std::shared_ptr<const SnapshotEvent> try_take();
  /// Waits up to `timeout` for an unread event; null on timeout or close.
  std::shared_ptr<const SnapshotEvent> wait(std::chrono::milliseconds timeout);
  /// Events replaced before being read.
  std::uint64_t coalesced() const;
  std::uint64_t published() const;
  /// Called after every publish, outside the mailbox lock.
  void set_notify(std::function<void()> notify);
  void close();

 private:
  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::shared_ptr<const SnapshotEvent> latest_;
  std::uint64_t coalesced_ = 0;
  std::uint64_t published_ = 0;
  bool closed_ = false;
  std::function<void()> notify_;
};

/// One embedding with its optimizer loop and refinement worker. Every command
/// runs on the loop thread between two iterations, so replies and snapshots
/// always describe a whole iteration.
class Session {
 public:
  Session(std::string id, Dataset data, SessionConfig config);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const noexcept { return id_; }

  /// Runs one command and waits for its reply. Throws ProtocolError.
  Message handle(const Envelope& request);

  std::shared_ptr<Mailbox> subscribe();
  void unsubscribe(const std::shared_ptr<Mailbox>& mailbox);

  RunState state() const noexcept { return state_.load(); }
  std::size_t iteration() const noexcept { return iteration_.load(); }

  /// Stops and joins the workers. Idempotent.
  void close();
  bool closed() const noexcept { return closed_.load(); }

  std::chrono::steady_clock::time_point last_active() const;
  void attach();
  void detach();
  std::size_t attached() const noexcept { return attached_.load(); }

 private:
  struct Command {
    std::function<Message()> run;
    std::promise<Message> reply;
  };
  struct PendingRow {
    GaussianRow row;
    std::uint32_t generation;
  };

  Message execute(const Envelope& request);
  Message dispatch(const Envelope& request);
  Message reply(const Envelope& request, json payload) const;
  void loop();
  bool should_step() const;
  void publish_snapshot();
  void apply_rows(std::vector<PendingRow>& rows);
  std::vector<TaskInfo> task_infos() const;
  SnapshotEvent make_event();

  Message cmd_start(const Envelope& r);
  Message cmd_pause(const Envelope& r);
  Message cmd_resume(const Envelope& r);
  Message cmd_set_config(const Envelope& r);
  Message cmd_brush(const Envelope& r);
  Message cmd_refine(const Envelope& r);
  Message cmd_task_control(const Envelope& r);
  Message cmd_insert(const Envelope& r);
  Message cmd_delete(const Envelope& r);
  Message cmd_redim(const Envelope& r);
  Message cmd_stream_tick(const Envelope& r);
  Message cmd_get_fields(const Envelope& r);
  Message cmd_subscribe(const Envelope& r);
  Message cmd_get_state(const Envelope& r);
  Message cmd_get_point(const Envelope& r);

  std::string id_;
  SessionConfig config_;
  std::map<std::uint32_t, std::string> labels_;  // by raw id

  mutable std::shared_mutex engine_mutex_;
  Engine engine_;
  std::optional<StreamWindow> window_;
  std::vector<PointId> selection_;
  std::vector<PointId> inserted_since_event_;
  std::vector<PointId> removed_since_event_;
  std::uint64_t next_task_id_ = 1;
  RunState brush_return_ = RunState::idle;
  std::string last_error_;

  std::atomic<RunState> state_{RunState::idle};
  std::atomic<std::size_t> iteration_{0};
  std::atomic<bool> closed_{false};
  std::atomic<std::size_t> attached_{0};

  mutable std::mutex queue_mutex_;
  std::condition_variable wake_;
  std::deque<std::shared_ptr<Command>> commands_;
  std::vector<PendingRow> rows_;
  bool stopping_ = false;
  std::chrono::steady_clock::time_point last_active_;

  mutable std::mutex subscribers_mutex_;
  std::vector<std::shared_ptr<Mailbox>> subscribers_;

  std::unique_ptr<Refiner> refiner_;
  std::thread loop_thread_;
};

/// Builds the dataset named by a `load` payload: `path`, `inline`
/// {dim, values, labels?}, `synthetic` {n, dim, clusters, separation, seed}
/// or `empty` {dim}.
Dataset dataset_from_payload(const json& payload);
/// Applies the recognized keys of `payload["config"]` on top of `base`.
SessionConfig config_from_payload(const json& payload, SessionConfig base);

/// Owns the sessions of a server and closes those idle for too long.
class SessionManager {
 public:
  explicit SessionManager(SessionConfig defaults = {},
                          std::chrono::milliseconds idle_timeout = std::chrono::seconds(300));
  ~SessionManager();

  /// Handles `load`; throws ProtocolError(bad_request) for bad datasets.
  std::shared_ptr<Session> create(const json& payload);
  /// Throws ProtocolError(no_session).
  std::shared_ptr<Session> find(const std::string& id) const;
  bool close(const std::string& id);
  void close_all();
  /// Closes sessions without attached clients idle since before `now - timeout`.
  std::size_t reap(std::chrono::steady_clock::time_point now);
  std::size_t size() const;

 private:
  SessionConfig defaults_;
  std::chrono::milliseconds idle_timeout_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
  std::thread reaper_;
};

}  // namespace atsne::service
