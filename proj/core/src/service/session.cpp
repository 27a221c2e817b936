#include "atsne/service/session.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "atsne/fields.hpp"
#include "atsne/synthetic.hpp"

namespace atsne::service {

std::string_view to_string(RunState s) noexcept {
  switch (s) {
    case RunState::idle: return "idle";
    case RunState::running: return "running";
    case RunState::paused: return "paused";
    case RunState::brushing: return "brushing";
  }
  return "idle";
}

namespace {

[[noreturn]] void bad_request(const std::string& what) {
  throw ProtocolError(ErrorCode::bad_request, what);
}

[[noreturn]] void bad_state(const std::string& what) {
  throw ProtocolError(ErrorCode::bad_state, what);
}

json ids_json(std::span<const PointId> ids) {
  json out = json::array();
  for (PointId id : ids) out.push_back(raw(id));
  return out;
}

json task_json(const TaskInfo& t) {
  return {{"task_id", t.id},       {"description", t.description},
          {"strategy", to_string(t.strategy)}, {"state", to_string(t.state)},
          {"total", t.total},      {"done", t.done},
          {"skipped", t.skipped},  {"progress", t.progress()},
          {"snapshot_iteration", t.snapshot_iteration}};
}

std::vector<float> read_vector(const json& v, const char* what) {
  if (!v.is_array()) bad_request(std::string(what) + " must be an array of numbers");
  std::vector<float> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) bad_request(std::string(what) + " must be an array of numbers");
    out.push_back(x.get<float>());
  }
  return out;
}

PointId read_id(const json& v) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0 ||
      v.get<std::int64_t>() > std::numeric_limits<std::uint32_t>::max()) {
    bad_request("ids must be non-negative integers");
  }
  return static_cast<PointId>(v.get<std::uint32_t>());
}

Engine make_engine(const Dataset& data, const EngineConfig& config) {
  const std::size_t k = neighborhood_size(config.perplexity);
  if (data.n > k) return Engine::create(data.to_store(), config);
  Engine engine = Engine::create_empty(data.dim, config);
  for (std::size_t i = 0; i < data.n; ++i) insert_point(engine, data.row(i));
  return engine;
}

// Events mean "drop `removed`, then add `inserted`". An id inserted and
// removed within one interval cancels out.
void note_removed(std::vector<PointId>& inserted, std::vector<PointId>& removed, PointId id) {
  const auto it = std::find(inserted.begin(), inserted.end(), id);
  if (it != inserted.end()) {
    inserted.erase(it);
  } else {
    removed.push_back(id);
  }
}

}  // namespace

Message snapshot_message(const SnapshotEvent& event, std::uint64_t seq, const std::string& type) {
  const Snapshot& s = event.snapshot;
  json payload{{"iteration", s.iteration},
               {"n", s.ids.size()},
               {"ids", ids_json(s.ids)},
               {"inserted", ids_json(event.inserted)},
               {"removed", ids_json(event.removed)},
               {"frames", json::array({"positions", "rho"})}};
  json tasks = json::array();
  for (const auto& t : event.tasks) tasks.push_back(task_json(t));
  payload["tasks"] = std::move(tasks);
  if (event.kl) payload["kl"] = *event.kl;

  Message msg{{type, seq, std::move(payload)}, {}};
  BinaryFrame positions{static_cast<std::uint32_t>(seq), FrameKind::positions, {}};
  positions.values.reserve(2 * s.positions.size());
  for (Vec2 p : s.positions) {
    positions.values.push_back(static_cast<float>(p.x));
    positions.values.push_back(static_cast<float>(p.y));
  }
  BinaryFrame rho{static_cast<std::uint32_t>(seq), FrameKind::rho, {}};
  rho.values.assign(s.precision.begin(), s.precision.end());
  msg.frames.push_back(std::move(positions));
  msg.frames.push_back(std::move(rho));
  return msg;
}

void Mailbox::publish(std::shared_ptr<const SnapshotEvent> event) {
  std::function<void()> notify;
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    if (latest_) {
      ++coalesced_;
      if (!latest_->inserted.empty() || !latest_->removed.empty()) {
        auto merged = std::make_shared<SnapshotEvent>(*event);
        merged->inserted = latest_->inserted;
        merged->removed = latest_->removed;
        for (PointId id : event->removed) note_removed(merged->inserted, merged->removed, id);
        merged->inserted.insert(merged->inserted.end(), event->inserted.begin(),
                                event->inserted.end());
        event = std::move(merged);
      }
    }
    latest_ = std::move(event);
    ++published_;
    notify = notify_;
  }
  ready_.notify_all();
  if (notify) notify();
}

std::shared_ptr<const SnapshotEvent> Mailbox::try_take() {
  std::lock_guard lock(mutex_);
  return std::exchange(latest_, nullptr);
}

std::shared_ptr<const SnapshotEvent> Mailbox::wait(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  ready_.wait_for(lock, timeout, [&] { return closed_ || latest_ != nullptr; });
  return std::exchange(latest_, nullptr);
}

std::uint64_t Mailbox::coalesced() const {
  std::lock_guard lock(mutex_);
  return coalesced_;
}

std::uint64_t Mailbox::published() const {
  std::lock_guard lock(mutex_);
  return published_;
}

void Mailbox::set_notify(std::function<void()> notify) {
  std::lock_guard lock(mutex_);
  notify_ = std::move(notify);
}

void Mailbox::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
    notify_ = nullptr;
  }
  ready_.notify_all();
}

Session::Session(std::string id, Dataset data, SessionConfig config)
    : id_(std::move(id)), config_(std::move(config)), engine_(make_engine(data, config_.engine)) {
  if (config_.snapshot_stride == 0) throw Error(Errc::invalid_argument, "snapshot stride must be positive");
  if (!data.labels.empty()) {
    const auto& ids = engine_.points().ids();
    for (std::size_t i = 0; i < ids.size() && i < data.labels.size(); ++i) {
      labels_[raw(ids[i])] = data.labels[i];
    }
  }
  if (config_.window) window_.emplace(*config_.window);
  last_active_ = std::chrono::steady_clock::now();
  refiner_ = std::make_unique<Refiner>(engine_, engine_mutex_, [this](GaussianRow row, std::uint32_t g) {
    {
      std::lock_guard lock(queue_mutex_);
      rows_.push_back({std::move(row), g});
    }
    wake_.notify_all();
  });
  loop_thread_ = std::thread([this] { loop(); });
}

Session::~Session() { close(); }

void Session::close() {
  if (closed_.exchange(true)) return;
  if (refiner_) refiner_->stop();
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  if (loop_thread_.joinable()) loop_thread_.join();
  for (auto& cmd : commands_) {
    cmd->reply.set_exception(
        std::make_exception_ptr(ProtocolError(ErrorCode::no_session, "session closed")));
  }
  commands_.clear();
  std::lock_guard lock(subscribers_mutex_);
  for (auto& m : subscribers_) m->close();
  subscribers_.clear();
}

std::chrono::steady_clock::time_point Session::last_active() const {
  std::lock_guard lock(queue_mutex_);
  return last_active_;
}

void Session::attach() {
  ++attached_;
  std::lock_guard lock(queue_mutex_);
  last_active_ = std::chrono::steady_clock::now();
}

void Session::detach() {
  --attached_;
  std::lock_guard lock(queue_mutex_);
  last_active_ = std::chrono::steady_clock::now();
}

std::shared_ptr<Mailbox> Session::subscribe() {
  auto m = std::make_shared<Mailbox>();
  std::lock_guard lock(subscribers_mutex_);
  if (closed_) {
    m->close();
    return m;
  }
  subscribers_.push_back(m);
  return m;
}

void Session::unsubscribe(const std::shared_ptr<Mailbox>& mailbox) {
  mailbox->close();
  std::lock_guard lock(subscribers_mutex_);
  std::erase(subscribers_, mailbox);
}

Message Session::handle(const Envelope& request) {
  auto cmd = std::make_shared<Command>();
  cmd->run = [this, request] { return execute(request); };
  auto reply = cmd->reply.get_future();
  {
    std::lock_guard lock(queue_mutex_);
    if (stopping_ || closed_) throw ProtocolError(ErrorCode::no_session, "session closed");
    if (commands_.size() >= config_.command_capacity) bad_state("command queue full");
    last_active_ = std::chrono::steady_clock::now();
    commands_.push_back(std::move(cmd));
  }
  wake_.notify_all();
  return reply.get();
}

Message Session::execute(const Envelope& request) {
  try {
    return dispatch(request);
  } catch (const ProtocolError&) {
    throw;
  } catch (const json::exception& e) {
    bad_request(e.what());
  } catch (const Error& e) {
    bad_request(e.what());
  }
}

Message Session::dispatch(const Envelope& r) {
  using Handler = Message (Session::*)(const Envelope&);
  static const std::map<std::string, Handler, std::less<>> handlers{
      {"start", &Session::cmd_start},
      {"pause", &Session::cmd_pause},
      {"resume", &Session::cmd_resume},
      {"set_config", &Session::cmd_set_config},
      {"brush", &Session::cmd_brush},
      {"refine", &Session::cmd_refine},
      {"task_control", &Session::cmd_task_control},
      {"insert", &Session::cmd_insert},
      {"delete", &Session::cmd_delete},
      {"redim", &Session::cmd_redim},
      {"stream_tick", &Session::cmd_stream_tick},
      {"get_fields", &Session::cmd_get_fields},
      {"subscribe", &Session::cmd_subscribe},
      {"get_state", &Session::cmd_get_state},
      {"get_point", &Session::cmd_get_point},
  };
  const auto it = handlers.find(r.type);
  if (it == handlers.end()) bad_request("unknown command '" + r.type + "'");
  return (this->*(it->second))(r);
}

Message Session::reply(const Envelope& request, json payload) const {
  payload["applied_iteration"] = engine_.embedding().iteration();
  payload["session_id"] = id_;
  return {{request.type, request.seq, std::move(payload)}, {}};
}

bool Session::should_step() const {
  const RunState s = state_.load();
  const bool active = s == RunState::running ||
                      (s == RunState::brushing && brush_return_ == RunState::running &&
                       !config_.pause_optimizer_on_brush);
  if (!active || engine_.embedding().size() < 2) return false;
  const std::size_t cap = config_.engine.optimizer.max_iterations;
  return cap == 0 || engine_.embedding().iteration() < cap;
}

void Session::apply_rows(std::vector<PendingRow>& rows) {
  for (auto& pending : rows) {
    const PointId owner = pending.row.owner;
    const PointStore& points = engine_.points();
    if (points.contains(owner) && points.generation(owner) == pending.generation &&
        engine_.similarity().has_row(owner)) {
      engine_.apply_row(std::move(pending.row));
    }
    refiner_->applied(owner);
  }
  rows.clear();
}

void Session::loop() {
  std::vector<std::shared_ptr<Command>> batch;
  std::vector<PendingRow> rows;
  while (true) {
    {
      std::unique_lock lock(queue_mutex_);
      wake_.wait(lock, [&] {
        return stopping_ || !commands_.empty() || !rows_.empty() || should_step();
      });
      if (stopping_) return;
      batch.assign(commands_.begin(), commands_.end());
      commands_.clear();
      rows.swap(rows_);
    }
    if (!rows.empty() || !batch.empty()) {
      std::unique_lock write(engine_mutex_);
      apply_rows(rows);
      for (auto& cmd : batch) {
        try {
          cmd->reply.set_value(cmd->run());
        } catch (...) {
          cmd->reply.set_exception(std::current_exception());
        }
      }
      batch.clear();
    }
    if (!should_step()) {
      const std::size_t cap = config_.engine.optimizer.max_iterations;
      if (state_ == RunState::running && cap != 0 && engine_.embedding().iteration() >= cap) {
        state_ = RunState::paused;
      }
      continue;
    }
    try {
      std::shared_lock read(engine_mutex_);
      engine_.step();
    } catch (const DivergenceError& e) {
      last_error_ = e.what();
      state_ = RunState::paused;
      continue;
    }
    iteration_ = engine_.embedding().iteration();
    const std::size_t cap = config_.engine.optimizer.max_iterations;
    const bool at_cap = cap != 0 && iteration_ >= cap;
    if (at_cap && state_ == RunState::running) state_ = RunState::paused;
    if (iteration_ % config_.snapshot_stride == 0 || at_cap) publish_snapshot();
  }
}

std::vector<TaskInfo> Session::task_infos() const {
  std::vector<TaskInfo> out;
  for (const auto& t : refiner_->tasks()) {
    out.push_back({t.id, t.description, t.strategy, t.state, t.targets.size(), t.done, t.skipped,
                   t.snapshot_ref ? t.snapshot_ref->iteration : 0});
  }
  return out;
}

SnapshotEvent Session::make_event() {
  SnapshotEvent ev;
  ev.snapshot = engine_.snapshot();
  ev.tasks = task_infos();
  ev.inserted = std::exchange(inserted_since_event_, {});
  ev.removed = std::exchange(removed_since_event_, {});
  if (config_.emit_kl && ev.snapshot.ids.size() >= 2 && ev.snapshot.ids.size() <= 10000) {
    std::shared_lock read(engine_mutex_);
    ev.kl = kl_cost(engine_.similarity().nonzero_joint(), engine_.embedding());
  }
  return ev;
}

void Session::publish_snapshot() {
  if (state_ == RunState::brushing) return;
  {
    std::lock_guard lock(subscribers_mutex_);
    if (subscribers_.empty()) return;
  }
  auto event = std::make_shared<const SnapshotEvent>(make_event());
  std::lock_guard lock(subscribers_mutex_);
  for (auto& m : subscribers_) m->publish(event);
}

Message Session::cmd_start(const Envelope& r) {
  if (state_ != RunState::idle) bad_state("start requires an idle session");
  state_ = RunState::running;
  return reply(r, {{"state", to_string(state_.load())}});
}

Message Session::cmd_pause(const Envelope& r) {
  const RunState s = state_;
  if (s != RunState::running && s != RunState::brushing) bad_state("nothing to pause");
  state_ = RunState::paused;
  return reply(r, {{"state", "paused"}});
}

Message Session::cmd_resume(const Envelope& r) {
  if (state_ != RunState::paused) bad_state("resume requires a paused session");
  const std::size_t cap = config_.engine.optimizer.max_iterations;
  if (cap != 0 && engine_.embedding().iteration() >= cap) bad_state("iteration limit reached");
  state_ = RunState::running;
  return reply(r, {{"state", "running"}});
}

Message Session::cmd_set_config(const Envelope& r) {
  const json& p = r.payload;
  OptimizerConfig opt = config_.engine.optimizer;
  auto number = [&](const char* key, auto& field) {
    if (!p.contains(key)) return;
    if (!p[key].is_number()) bad_request(std::string(key) + " must be a number");
    field = p[key].get<std::remove_reference_t<decltype(field)>>();
  };
  number("learning_rate", opt.learning_rate);
  number("theta", opt.theta);
  number("exaggeration", opt.exaggeration);
  number("exaggeration_iterations", opt.exaggeration_iterations);
  number("decay_lambda", opt.decay_lambda);
  number("momentum_switch", opt.momentum_switch);
  number("max_iterations", opt.max_iterations);
  opt.validate();
  std::size_t stride = config_.snapshot_stride;
  number("snapshot_stride", stride);
  if (stride == 0) bad_request("snapshot_stride must be positive");
  if (p.contains("window")) {
    const std::int64_t w = p["window"].get<std::int64_t>();
    if (w <= 0) bad_request("window must be positive");
    if (!window_ || window_->duration() != w) {
      if (window_ && window_->size() > 0) bad_state("the stream window is not empty");
      window_.emplace(w);
      config_.window = w;
    }
  }
  config_.snapshot_stride = stride;
  if (p.contains("emit_kl")) config_.emit_kl = p["emit_kl"].get<bool>();
  if (p.contains("pause_optimizer_on_brush")) {
    config_.pause_optimizer_on_brush = p["pause_optimizer_on_brush"].get<bool>();
  }
  engine_.set_optimizer_config(opt);
  config_.engine.optimizer = opt;
  return reply(r, {{"snapshot_stride", config_.snapshot_stride},
                   {"theta", opt.theta},
                   {"max_iterations", opt.max_iterations}});
}

Message Session::cmd_brush(const Envelope& r) {
  const json& p = r.payload;
  std::vector<PointId> ids;
  if (p.contains("ids")) {
    for (const auto& v : p["ids"]) {
      const PointId id = read_id(v);
      if (!engine_.embedding().contains(id)) bad_request("unknown id " + std::to_string(raw(id)));
      ids.push_back(id);
    }
  } else if (p.contains("rect")) {
    const auto rect = read_vector(p["rect"], "rect");
    if (rect.size() != 4) bad_request("rect must be [x0, y0, x1, y1]");
    const double x0 = std::min(rect[0], rect[2]), x1 = std::max(rect[0], rect[2]);
    const double y0 = std::min(rect[1], rect[3]), y1 = std::max(rect[1], rect[3]);
    for (PointId id : engine_.embedding().ids()) {
      const Vec2 y = engine_.embedding().position(id);
      // Compare in f32, the precision clients see positions in.
      const double fx = static_cast<float>(y.x), fy = static_cast<float>(y.y);
      if (fx >= x0 && fx <= x1 && fy >= y0 && fy <= y1) ids.push_back(id);
    }
  } else {
    bad_request("brush needs ids or rect");
  }
  const bool final = p.value("final", true);
  if (!final && state_ != RunState::brushing) {
    brush_return_ = state_;
    state_ = RunState::brushing;
  } else if (final && state_ == RunState::brushing) {
    state_ = brush_return_;
  }
  selection_ = ids;
  return reply(r, {{"count", ids.size()}, {"ids", ids_json(ids)}, {"state", to_string(state_.load())}});
}

Message Session::cmd_refine(const Envelope& r) {
  const json& p = r.payload;
  if (!p.contains("strategy") || !p["strategy"].is_string()) bad_request("refine needs a strategy");
  const Strategy strategy = parse_strategy(p["strategy"].get<std::string>());
  std::vector<PointId> seeds;
  if (p.contains("ids")) {
    for (const auto& v : p["ids"]) seeds.push_back(read_id(v));
  } else {
    for (PointId id : selection_) {
      if (engine_.points().contains(id)) seeds.push_back(id);
    }
  }
  if (seeds.empty() && (strategy == Strategy::user_selection || strategy == Strategy::breadth_first)) {
    bad_request("strategy needs a non-empty selection");
  }
  std::optional<std::size_t> budget;
  if (p.contains("budget")) budget = p["budget"].get<std::size_t>();
  const std::uint64_t seed = p.value("seed", config_.engine.seed + next_task_id_);
  RefinementTask task = make_task(engine_, strategy, seeds, p.value("description", std::string()),
                                  next_task_id_++, seed, budget);
  const std::uint64_t id = task.id;
  const std::size_t total = task.targets.size();
  refiner_->enqueue(std::move(task));
  return reply(r, {{"task_id", id}, {"targets", total}, {"strategy", to_string(strategy)}});
}

Message Session::cmd_task_control(const Envelope& r) {
  const auto id = r.payload.at("task_id").get<std::uint64_t>();
  const auto action = r.payload.at("action").get<std::string>();
  TaskState target;
  if (action == "pause") {
    target = TaskState::paused;
  } else if (action == "resume") {
    target = TaskState::running;
  } else if (action == "cancel") {
    target = TaskState::cancelled;
  } else {
    bad_request("action must be pause, resume or cancel");
  }
  if (!refiner_->set_state(id, target)) bad_request("unknown task " + std::to_string(id));
  const auto task = refiner_->task(id);
  return reply(r, {{"task_id", id}, {"state", to_string(task->state)}});
}

Message Session::cmd_insert(const Envelope& r) {
  const auto coords = read_vector(r.payload.at("vector"), "vector");
  if (coords.size() != engine_.points().dim()) {
    bad_request("vector has " + std::to_string(coords.size()) + " values, expected " +
                std::to_string(engine_.points().dim()));
  }
  const PointId id = insert_point(engine_, coords);
  if (r.payload.contains("label")) labels_[raw(id)] = r.payload["label"].get<std::string>();
  inserted_since_event_.push_back(id);
  return reply(r, {{"id", raw(id)}, {"n", engine_.points().size()}});
}

Message Session::cmd_delete(const Envelope& r) {
  const PointId id = read_id(r.payload.at("id"));
  if (!engine_.points().contains(id)) bad_request("unknown id " + std::to_string(raw(id)));
  delete_point(engine_, id);
  if (window_) window_->forget(id);
  labels_.erase(raw(id));
  std::erase(selection_, id);
  note_removed(inserted_since_event_, removed_since_event_, id);
  return reply(r, {{"id", raw(id)}, {"n", engine_.points().size()}});
}

Message Session::cmd_redim(const Envelope& r) {
  const Dataset data = dataset_from_payload(r.payload);
  std::vector<PointId> ids;
  if (r.payload.contains("ids")) {
    for (const auto& v : r.payload["ids"]) ids.push_back(read_id(v));
  } else {
    ids = engine_.points().ids();
    std::sort(ids.begin(), ids.end(), [](PointId a, PointId b) { return raw(a) < raw(b); });
  }
  if (ids.size() != data.n) bad_request("redim data must have one row per live point");
  redim(engine_, PointStore::with_ids(data.dim, ids, data.values));
  return reply(r, {{"dim", data.dim}, {"n", data.n}});
}

Message Session::cmd_stream_tick(const Envelope& r) {
  if (!window_) bad_state("no stream window configured");
  const auto now = r.payload.at("now").get<std::int64_t>();
  std::vector<float> rows;
  std::vector<std::string> labels;
  if (r.payload.contains("arrivals")) {
    for (const auto& a : r.payload["arrivals"]) {
      const auto v = read_vector(a, "arrival");
      if (v.size() != engine_.points().dim()) bad_request("arrival dimensionality mismatch");
      rows.insert(rows.end(), v.begin(), v.end());
    }
  }
  if (r.payload.contains("labels")) labels = r.payload["labels"].get<std::vector<std::string>>();
  const auto result = window_->tick(engine_, now, rows);
  for (std::size_t k = 0; k < result.inserted.size(); ++k) {
    if (k < labels.size()) labels_[raw(result.inserted[k])] = labels[k];
  }
  for (PointId id : result.expired) {
    labels_.erase(raw(id));
    std::erase(selection_, id);
    note_removed(inserted_since_event_, removed_since_event_, id);
  }
  inserted_since_event_.insert(inserted_since_event_.end(), result.inserted.begin(),
                               result.inserted.end());
  return reply(r, {{"inserted", ids_json(result.inserted)},
                   {"expired", ids_json(result.expired)},
                   {"n", engine_.points().size()}});
}

Message Session::cmd_get_fields(const Envelope& r) {
  const json& p = r.payload;
  const double h = p.at("h").get<double>();
  if (!(h > 0.0) || !std::isfinite(h)) bad_request("h must be positive");
  std::vector<std::string> names{"density"};
  if (p.contains("fields")) names = p["fields"].get<std::vector<std::string>>();
  const std::size_t width = p.value("width", std::size_t{512});
  const std::size_t height = p.value("height", std::size_t{512});
  if (width == 0 || height == 0 || width * height > (std::size_t{1} << 24)) {
    bad_request("grid size out of range");
  }
  const Snapshot snap = engine_.snapshot();
  if (snap.ids.empty()) bad_state("no points to rasterize");
  const GridSpec grid = fit_grid(engine_.embedding().bbox(), kKernelCutoff * h, width, height);
  const FieldGrid f = density_field(snap.positions, h, grid);

  Message msg = reply(r, {});
  json order = json::array();
  for (const auto& name : names) {
    FieldGrid field;
    if (name == "density") {
      field = f;
    } else if (name == "selection") {
      std::vector<std::uint8_t> mask(snap.ids.size(), 0);
      std::vector<std::uint8_t> chosen(engine_.points().capacity(), 0);
      for (PointId id : selection_) {
        if (slot(id) < chosen.size()) chosen[slot(id)] = 1;
      }
      for (std::size_t k = 0; k < snap.ids.size(); ++k) mask[k] = chosen[slot(snap.ids[k])];
      field = selection_field(snap.positions, mask, h, grid, f);
    } else if (name == "approximation") {
      field = approximation_field(snap.positions, snap.precision, h, grid, f);
    } else {
      bad_request("unknown field '" + name + "'");
    }
    BinaryFrame frame{static_cast<std::uint32_t>(r.seq), FrameKind::field, {}};
    frame.values.assign(field.values.begin(), field.values.end());
    msg.frames.push_back(std::move(frame));
    order.push_back(name);
  }
  msg.envelope.payload["fields"] = order;
  msg.envelope.payload["h"] = h;
  msg.envelope.payload["iteration"] = snap.iteration;
  msg.envelope.payload["grid"] = {{"width", grid.width},
                                  {"height", grid.height},
                                  {"origin", {grid.origin.x, grid.origin.y}},
                                  {"scale", grid.scale}};
  return msg;
}

Message Session::cmd_subscribe(const Envelope& r) {
  SnapshotEvent ev;
  ev.snapshot = engine_.snapshot();
  ev.tasks = task_infos();
  Message msg = snapshot_message(ev, r.seq, r.type);
  msg.envelope.payload["applied_iteration"] = ev.snapshot.iteration;
  msg.envelope.payload["session_id"] = id_;
  return msg;
}

Message Session::cmd_get_state(const Envelope& r) {
  const auto& fp = engine_.forest_params();
  json tasks = json::array();
  for (const auto& t : task_infos()) tasks.push_back(task_json(t));
  json payload{{"state", to_string(state_.load())},
               {"iteration", engine_.embedding().iteration()},
               {"n", engine_.points().size()},
               {"dim", engine_.points().dim()},
               {"k", engine_.k()},
               {"perplexity", engine_.config().perplexity},
               {"target_precision", engine_.config().target_precision},
               {"forest", {{"trees", fp.trees}, {"leaf_budget", fp.leaf_budget},
                           {"variance_pool", fp.variance_pool}}},
               {"selection", selection_.size()},
               {"snapshot_stride", config_.snapshot_stride},
               {"tasks", std::move(tasks)}};
  if (window_) payload["window"] = {{"duration", window_->duration()}, {"size", window_->size()}};
  if (!last_error_.empty()) payload["last_error"] = last_error_;
  return reply(r, std::move(payload));
}

Message Session::cmd_get_point(const Envelope& r) {
  const PointId id = read_id(r.payload.at("id"));
  if (!engine_.points().contains(id)) bad_request("unknown id " + std::to_string(raw(id)));
  const auto row = engine_.points().row(id);
  const Vec2 y = engine_.embedding().position(id);
  const auto label = labels_.find(raw(id));
  return reply(r, {{"id", raw(id)},
                   {"vector", std::vector<float>(row.begin(), row.end())},
                   {"label", label == labels_.end() ? std::string() : label->second},
                   {"position", {y.x, y.y}},
                   {"rho", engine_.similarity().row(id).requested_precision},
                   {"exaggeration", engine_.embedding().exaggeration(id)}});
}

Dataset dataset_from_payload(const json& payload) {
  if (payload.contains("path")) return read_dataset(payload["path"].get<std::string>());
  if (payload.contains("inline")) {
    const json& in = payload["inline"];
    Dataset data;
    data.dim = in.at("dim").get<std::size_t>();
    if (data.dim == 0) bad_request("dim must be positive");
    data.values = read_vector(in.at("values"), "values");
    if (data.values.size() % data.dim != 0) bad_request("values are not a whole number of rows");
    for (float v : data.values) {
      if (!std::isfinite(v)) bad_request("values must be finite");
    }
    data.n = data.values.size() / data.dim;
    if (in.contains("labels")) {
      data.labels = in["labels"].get<std::vector<std::string>>();
      if (data.labels.size() != data.n) bad_request("one label per row required");
    }
    return data;
  }
  if (payload.contains("synthetic")) {
    const json& s = payload["synthetic"];
    ClusterSpec spec;
    spec.n = s.value("n", spec.n);
    spec.dim = s.value("dim", spec.dim);
    spec.clusters = s.value("clusters", spec.clusters);
    spec.separation = s.value("separation", spec.separation);
    spec.spread = s.value("spread", spec.spread);
    spec.outliers = s.value("outliers", spec.outliers);
    spec.seed = s.value("seed", spec.seed);
    return make_clusters(spec);
  }
  if (payload.contains("empty")) {
    Dataset data;
    data.dim = payload["empty"].at("dim").get<std::size_t>();
    if (data.dim == 0) bad_request("dim must be positive");
    return data;
  }
  bad_request("dataset needs path, inline, synthetic or empty");
}

SessionConfig config_from_payload(const json& payload, SessionConfig base) {
  if (!payload.contains("config")) return base;
  const json& c = payload["config"];
  if (!c.is_object()) bad_request("config must be an object");
  EngineConfig& e = base.engine;
  e.perplexity = c.value("perplexity", e.perplexity);
  e.target_precision = c.value("precision", e.target_precision);
  e.seed = c.value("seed", e.seed);
  e.calibration_sample = c.value("calibration_sample", e.calibration_sample);
  OptimizerConfig& o = e.optimizer;
  o.learning_rate = c.value("learning_rate", o.learning_rate);
  o.theta = c.value("theta", o.theta);
  o.exaggeration = c.value("exaggeration", o.exaggeration);
  o.exaggeration_iterations = c.value("exaggeration_iterations", o.exaggeration_iterations);
  o.decay_lambda = c.value("decay_lambda", o.decay_lambda);
  o.max_iterations = c.value("max_iterations", o.max_iterations);
  if (c.contains("trees") || c.contains("leaf_budget")) {
    ForestParams f;
    f.trees = c.value("trees", f.trees);
    f.leaf_budget = c.value("leaf_budget", f.leaf_budget);
    f.variance_pool = c.value("variance_pool", e.variance_pool);
    f.seed = e.seed;
    e.fixed_forest = f;
  }
  base.snapshot_stride = c.value("snapshot_stride", base.snapshot_stride);
  base.emit_kl = c.value("emit_kl", base.emit_kl);
  base.pause_optimizer_on_brush = c.value("pause_optimizer_on_brush", base.pause_optimizer_on_brush);
  if (c.contains("window")) base.window = c["window"].get<std::int64_t>();
  if (!(e.perplexity >= 1.0)) bad_request("perplexity must be at least 1");
  if (!(e.target_precision > 0.0 && e.target_precision <= 1.0)) {
    bad_request("precision must lie in (0, 1]");
  }
  if (base.snapshot_stride == 0) bad_request("snapshot_stride must be positive");
  if (base.window && *base.window <= 0) bad_request("window must be positive");
  try {
    o.validate();
  } catch (const Error& err) {
    bad_request(err.what());
  }
  return base;
}

SessionManager::SessionManager(SessionConfig defaults, std::chrono::milliseconds idle_timeout)
    : defaults_(std::move(defaults)), idle_timeout_(idle_timeout) {
  reaper_ = std::thread([this] {
    const auto period = std::clamp(idle_timeout_ / 4, std::chrono::milliseconds(10),
                                   std::chrono::milliseconds(1000));
    std::unique_lock lock(mutex_);
    while (!stop_cv_.wait_for(lock, period, [&] { return stopping_; })) {
      lock.unlock();
      reap(std::chrono::steady_clock::now());
      lock.lock();
    }
  });
}

SessionManager::~SessionManager() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  stop_cv_.notify_all();
  if (reaper_.joinable()) reaper_.join();
  close_all();
}

std::shared_ptr<Session> SessionManager::create(const json& payload) {
  SessionConfig config = config_from_payload(payload, defaults_);
  Dataset data;
  try {
    data = dataset_from_payload(payload);
  } catch (const json::exception& e) {
    bad_request(e.what());
  } catch (const Error& e) {
    bad_request(e.what());
  }
  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = "s" + std::to_string(next_id_++);
  }
  std::shared_ptr<Session> session;
  try {
    session = std::make_shared<Session>(id, std::move(data), std::move(config));
  } catch (const Error& e) {
    bad_request(e.what());
  }
  std::lock_guard lock(mutex_);
  sessions_[id] = session;
  return session;
}

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ProtocolError(ErrorCode::no_session, "unknown session '" + id + "'");
  return it->second;
}

bool SessionManager::close(const std::string& id) {
  std::shared_ptr<Session> session;
  {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) return false;
    session = std::move(it->second);
    sessions_.erase(it);
  }
  session->close();
  return true;
}

void SessionManager::close_all() {
  std::map<std::string, std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mutex_);
    all.swap(sessions_);
  }
  for (auto& [id, s] : all) s->close();
}

std::size_t SessionManager::reap(std::chrono::steady_clock::time_point now) {
  std::vector<std::shared_ptr<Session>> idle;
  {
    std::lock_guard lock(mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      const auto& s = it->second;
      if (s->attached() == 0 && now - s->last_active() >= idle_timeout_) {
        idle.push_back(s);
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& s : idle) s->close();
  return idle.size();
}

std::size_t SessionManager::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

}  // namespace atsne::service
