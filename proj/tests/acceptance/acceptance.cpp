// Acceptance suite: one PASS/FAIL line per criterion.
//
//   atsne_acceptance            runs every criterion
//   atsne_acceptance NAME...    runs the named ones

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "atsne/bench.hpp"
#include "atsne/dynamics.hpp"
#include "atsne/engine.hpp"
#include "atsne/fields.hpp"
#include "atsne/service/server.hpp"
#include "atsne/steering.hpp"
#include "atsne/synthetic.hpp"
#include "oracles.hpp"
#include "ws_client.hpp"

namespace atsne {
namespace {

using clock_type = std::chrono::steady_clock;
using namespace std::chrono_literals;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

/// Collects named checks; the criterion passes when all of them do.
class Report {
 public:
  void check(bool ok, const std::string& what) {
    std::cout << "  " << (ok ? "ok   " : "FAIL ") << what << '\n' << std::flush;
    all_ &= ok;
  }
  void note(const std::string& what) { std::cout << "  " << what << '\n' << std::flush; }
  bool passed() const { return all_; }

 private:
  bool all_ = true;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

// KNN recall oracle

void knn_recall(Report& r) {
  const Dataset data = make_clusters({.n = 10000, .dim = 128, .clusters = 10, .seed = 11});
  const PointStore points = data.to_store();
  const std::size_t k = neighborhood_size(30.0);
  const std::uint64_t seed = 5;
  const auto t0 = clock_type::now();
  const CalibrationResult c = calibrate(points, k, 0.8, 1000, seed);
  const KdForest forest =
      KdForest::build(points, {c.trees, c.variance_pool, c.leaf_budget, seed});
  const auto validation =
      sample_ids(points, 1000, seed + 1, calibration_owners(points, 1000, seed));
  std::vector<NeighborList> approx(validation.size());
  std::vector<NeighborList> exact(validation.size());
  for (std::size_t i = 0; i < validation.size(); ++i) {
    approx[i] = forest.query_point(validation[i], k, c.leaf_budget);
    exact[i] = brute_force_knn(points, validation[i], k);
  }
  const double recall = measure_recall(approx, exact);
  const double elapsed = seconds_since(t0);

  std::set<PointId> overlap(validation.begin(), validation.end());
  std::size_t shared = 0;
  for (PointId id : calibration_owners(points, 1000, seed)) shared += overlap.count(id);
  r.note(fmt("calibrated T=%zu L=%zu V=%zu, calibration recall %.4f", c.trees, c.leaf_budget,
             c.variance_pool, c.measured_recall));
  r.check(shared == 0 && validation.size() == 1000, "validation set is disjoint, 1000 queries");
  r.check(std::abs(recall - 0.8) <= 0.05, fmt("validation recall %.4f within 0.05 of 0.8", recall));
  r.check(elapsed < 60.0, fmt("runtime %.1f s < 60 s", elapsed));
}

// Speed/precision ordering

void knn_speed_ordering(Report& r) {
  const Dataset data = make_clusters({.n = 20000, .dim = 128, .clusters = 10, .seed = 12});
  KnnBenchOptions o;
  o.configs = {KnnConfig::fixed(1, 1), KnnConfig::fixed(2, 512), KnnConfig::fixed(4, 1024),
               KnnConfig::brute()};
  o.sizes = {data.n};
  o.sample = 500;
  o.repeats = 3;
  o.seed = 3;
  const auto rows = run_knn_bench(data, o);
  const std::size_t runs = o.repeats;
  auto at = [&](std::size_t config, std::size_t run) { return rows[config * runs + run]; };
  for (std::size_t c = 0; c < o.configs.size(); ++c) {
    std::string line = o.configs[c].name() + ":";
    for (std::size_t run = 0; run < runs; ++run) {
      line += fmt(" %.0f ms / %.3f", at(c, run).init_ms, at(c, run).recall);
    }
    r.note(line);
  }
  for (std::size_t c = 0; c + 1 < o.configs.size(); ++c) {
    const std::string pair = o.configs[c].name() + " < " + o.configs[c + 1].name();
    bool time_ok = true;
    bool recall_ok = true;
    for (std::size_t run = 0; run < runs; ++run) {
      time_ok &= at(c, run).init_ms * 1.05 <= at(c + 1, run).init_ms;
      recall_ok &= at(c, run).recall * 1.05 <= at(c + 1, run).recall;
    }
    r.check(time_ok, "init time " + pair + " by >= 5% in every run");
    r.check(recall_ok, "recall " + pair + " by >= 5% in every run");
  }
}

// Perplexity solver

void perplexity_calibration(Report& r) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t k = neighborhood_size(30.0);
  double worst = 0.0;
  std::size_t flagged = 0;
  for (int row = 0; row < 10000; ++row) {
    const double scale = std::pow(10.0, -3.0 + 6.0 * unit(rng));
    std::vector<double> d(k);
    for (double& x : d) x = scale * (0.01 + unit(rng));
    std::sort(d.begin(), d.end());
    const auto sol = solve_sigma(d, 30.0);
    flagged += sol.degenerate;
    worst = std::max(worst, std::abs(oracle::perplexity_at(d, sol.sigma) / 30.0 - 1.0));
  }
  r.check(worst <= 1e-4 && flagged == 0,
          fmt("10000 random rows: max relative perplexity error %.2e", worst));

  bool degenerate_ok = true;
  std::vector<std::vector<double>> odd{std::vector<double>(k, 2.5), std::vector<double>(k, 0.0)};
  std::vector<double> ties(k, 3.0);
  std::fill(ties.begin(), ties.begin() + 40, 0.5);
  odd.push_back(ties);
  for (const auto& d : odd) {
    try {
      const auto sol = solve_sigma(d, 30.0);
      double sum = 0.0;
      for (double p : sol.probabilities) {
        degenerate_ok &= std::isfinite(p);
        sum += p;
      }
      degenerate_ok &= sol.degenerate && std::abs(sum - 1.0) < 1e-12;
    } catch (const std::exception&) {
      degenerate_ok = false;
    }
  }
  r.check(degenerate_ok, "equal-distance and over-tied rows are flagged, finite and normalized");
}

// Gradient correctness

void gradient_check(Report& r) {
  const Dataset data = make_clusters({.n = 30, .dim = 5, .clusters = 3, .seed = 1});
  const SimilarityStore store =
      init_all(data.to_store(), {.perplexity = 5.0, .target_precision = 1.0}).store;
  std::vector<PointId> ids;
  for (std::uint32_t i = 0; i < data.n; ++i) ids.push_back(static_cast<PointId>(i));
  const Embedding emb = Embedding::random(ids, 7, 1.0);
  const auto p = oracle::dense_joint(store, ids);
  const auto y = emb.compact_positions();
  const auto numeric = oracle::numeric_gradient(p, y, 1e-5);
  OptimizerConfig c;
  c.theta = 0.0;
  c.exaggeration_iterations = 0;
  const auto library = gradient(store, emb, c);
  const auto dense = oracle::dense_gradient(p, y);

  double scale = 0.0;
  double err_dense = 0.0;
  double err_lib = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    scale = std::max({scale, std::abs(numeric[i].x), std::abs(numeric[i].y)});
    err_dense = std::max({err_dense, std::abs(dense[i].x - numeric[i].x),
                          std::abs(dense[i].y - numeric[i].y)});
    const Vec2 g = library[slot(ids[i])];
    err_lib = std::max({err_lib, std::abs(g.x - numeric[i].x), std::abs(g.y - numeric[i].y)});
  }
  r.check(err_dense / scale <= 1e-4,
          fmt("dense analytic vs central differences: relative error %.2e", err_dense / scale));
  r.check(err_lib / scale <= 1e-4,
          fmt("engine gradient vs central differences: relative error %.2e", err_lib / scale));
}

// Barnes-Hut fidelity

void barnes_hut(Report& r) {
  auto cloud = [](std::size_t n, std::uint64_t seed, double spread) {
    std::vector<PointId> ids;
    for (std::uint32_t i = 0; i < n; ++i) ids.push_back(static_cast<PointId>(i));
    return Embedding::random(ids, seed, spread);
  };
  {
    const Embedding e = cloud(50, 4, 3.0);
    const auto rep = repulsive_forces(e, 0.0);
    const auto dense = oracle::dense_repulsion(e.compact_positions());
    double err = std::abs(rep.z - dense.z) / dense.z;
    for (std::size_t i = 0; i < 50; ++i) {
      const Vec2 d = rep.forces[i] - dense.forces[i];
      err = std::max({err, std::abs(d.x), std::abs(d.y)});
    }
    r.check(err <= 1e-10, fmt("theta 0, N 50: max deviation %.2e", err));
  }
  {
    const Embedding e = cloud(500, 5, 10.0);
    const auto rep = repulsive_forces(e, 0.5);
    const auto dense = oracle::dense_repulsion(e.compact_positions());
    double worst = 0.0;
    double err2 = 0.0;
    double ref2 = 0.0;
    std::size_t over = 0;
    for (std::size_t i = 0; i < 500; ++i) {
      const Vec2 d = rep.forces[i] - dense.forces[i];
      const double rel = std::sqrt(d.squared_norm() / dense.forces[i].squared_norm());
      worst = std::max(worst, rel);
      over += rel > 5e-2;
      err2 += d.squared_norm();
      ref2 += dense.forces[i].squared_norm();
    }
    r.check(worst <= 5e-2, fmt("theta 0.5, N 500: max per-point relative error %.2e (%zu points over)",
                               worst, over));
    r.note(fmt("theta 0.5, N 500: relative L2 error over all points %.2e", std::sqrt(err2 / ref2)));
  }
}

// Cost ratio

void cost_ratio(Report& r) {
  const Dataset data = make_clusters({.n = 5000, .dim = 64, .clusters = 10, .seed = 1});
  CostBenchOptions o;
  o.configs = {KnnConfig::calibrated(0.8), KnnConfig::fixed(1, 1)};
  o.seeds = {1, 2, 3};
  o.checkpoints = {100, 250, 500, 1000};
  const auto t0 = clock_type::now();
  const auto rows = run_cost_bench(data, o);
  const double elapsed = seconds_since(t0);

  std::map<std::pair<std::string, std::size_t>, std::vector<double>> ratios;
  std::map<std::string, std::vector<double>> recalls;
  for (const auto& row : rows) {
    ratios[{row.config, *row.iteration}].push_back(*row.cost_ratio);
    if (*row.iteration == 1000) recalls[row.config].push_back(row.recall);
  }
  const std::string calibrated = KnnConfig::calibrated(0.8).name();
  const std::string greedy = KnnConfig::fixed(1, 1).name();
  for (const std::string& c : {calibrated, greedy}) {
    std::string line = c + fmt(" (recall %.3f):", median(recalls[c]));
    for (std::size_t it : o.checkpoints) line += fmt(" @%zu %.4f", it, median(ratios[{c, it}]));
    r.note(line);
  }
  const double cal = median(ratios[{calibrated, 1000}]);
  const double gr = median(ratios[{greedy, 1000}]);
  const double gr100 = median(ratios[{greedy, 100}]);
  r.check(cal <= 1.15, fmt("calibrated median ratio at 1000 is %.4f <= 1.15", cal));
  r.check(gr > cal, fmt("greedy median ratio at 1000 (%.4f) exceeds calibrated", gr));
  r.check(gr100 >= gr,
          fmt("greedy early-exaggeration peak: ratio@100 %.4f >= ratio@1000 %.4f", gr100, gr));
  r.check(elapsed < 600.0, fmt("runtime %.0f s < 600 s", elapsed));
}

// Refinement fixed point

void refinement_fixed_point(Report& r) {
  const Dataset data = make_clusters({.n = 2000, .dim = 32, .clusters = 10, .seed = 13});
  EngineConfig cfg;
  cfg.perplexity = 30.0;
  cfg.target_precision = 0.8;
  cfg.seed = 4;
  Engine approx = Engine::create(data.to_store(), cfg);
  EngineConfig exact_cfg = cfg;
  exact_cfg.target_precision = 1.0;
  const Engine exact = Engine::create(data.to_store(), exact_cfg);

  auto sil = [&](const Engine& e) {
    const Snapshot s = e.snapshot();
    std::vector<std::string> labels;
    for (PointId id : s.ids) labels.push_back(data.labels[raw(id)]);
    return oracle::silhouette(s.positions, labels);
  };
  for (int i = 0; i < 1000; ++i) approx.step();
  const double before = sil(approx);
  const double recall = store_recall(approx.similarity(), exact.similarity());

  auto task = make_task(approx, Strategy::random_global, {}, "all", 1, 9);
  run_task(approx, task);
  r.check(task.state == TaskState::finished && task.done == data.n,
          fmt("random_global task finished %zu of %zu rows", task.done, data.n));

  double worst = 0.0;
  for (PointId i : exact.points().ids()) {
    for (PointId j : exact.points().ids()) {
      if (i != j) {
        worst = std::max(worst,
                         std::abs(approx.similarity().joint(i, j) - exact.similarity().joint(i, j)));
      }
    }
  }
  r.check(worst <= 1e-9, fmt("refined joint matches exact store: max |dp| %.2e (recall before %.3f)",
                             worst, recall));

  for (int i = 0; i < 300; ++i) approx.step();
  const double after = sil(approx);
  r.check(before - after < 0.05,
          fmt("silhouette %.4f at iteration 1000, %.4f after refinement and 300 more", before,
              after));
}

// Dynamics oracle

void dynamics_oracle(Report& r) {
  const Dataset data = make_clusters({.n = 3000, .dim = 16, .clusters = 5, .seed = 14});
  EngineConfig cfg;
  cfg.perplexity = 10.0;
  cfg.target_precision = 1.0;
  cfg.seed = 2;
  const std::size_t start = 1000;
  Dataset initial = data;
  initial.n = start;
  initial.values.resize(start * data.dim);
  Engine e = Engine::create(initial.to_store(), cfg);
  const std::size_t k = e.k();
  oracle::NeighborCensus census(k);
  census.seed_rows(e.points());

  auto expected_rho = [&](std::uint32_t missing) {
    double rho = 1.0;
    for (std::uint32_t m = 0; m < missing; ++m) {
      rho = std::max(0.0, rho - 1.0 / static_cast<double>(k));
    }
    return rho;
  };

  std::mt19937_64 rng(15);
  std::size_t next = start;
  std::size_t inserts = 0;
  std::size_t deletes = 0;
  std::size_t bad_transpose = 0;
  std::size_t bad_rows = 0;
  std::size_t bad_rho = 0;
  std::size_t max_n = 0;
  for (int op = 0; op < 1000; ++op) {
    const std::size_t n = e.points().size();
    const bool insert = next < data.n && (n <= 2 * k || (n < 2000 && rng() % 2 == 0));
    if (insert) {
      census.insert(e.points(), insert_point(e, data.row(next++)));
      ++inserts;
    } else {
      const auto& ids = e.points().ids();
      const PointId victim = ids[rng() % ids.size()];
      delete_point(e, victim);
      census.remove(victim);
      ++deletes;
    }
    max_n = std::max(max_n, e.points().size());
    if (e.similarity().validate().has_value()) ++bad_transpose;
    for (PointId i : e.points().ids()) {
      const GaussianRow& row = e.similarity().row(i);
      std::vector<PointId> got;
      for (const auto& nb : row.neighbors) got.push_back(nb.id);
      std::sort(got.begin(), got.end(), [](PointId a, PointId b) { return raw(a) < raw(b); });
      if (got != census.neighbors(i) || row.missing != census.missing(i)) ++bad_rows;
      if (row.requested_precision != expected_rho(census.missing(i))) ++bad_rho;
    }
  }
  r.note(fmt("%zu inserts, %zu deletes, peak N %zu, K %zu", inserts, deletes, max_n, k));
  r.check(max_n <= 2000, "N stays <= 2000");
  r.check(bad_transpose == 0, fmt("reverse index is the exact transpose after every operation "
                                  "(%zu violations)", bad_transpose));
  r.check(bad_rows == 0, fmt("rows match the replace-farthest oracle after every operation "
                             "(%zu mismatches)", bad_rows));
  r.check(bad_rho == 0, fmt("rho follows the 1/K rule exactly (%zu mismatches)", bad_rho));
}

// Streaming budget

void streaming(Report& r) {
  const std::size_t window = 6000;
  const std::size_t measured = 300;
  const Dataset data =
      make_clusters({.n = window + measured, .dim = 52, .clusters = 10, .seed = 16});
  EngineConfig cfg;
  cfg.perplexity = 30.0;
  cfg.target_precision = 0.8;
  cfg.seed = 6;
  cfg.optimizer.max_iterations = 0;
  Engine e = Engine::create_empty(data.dim, cfg);
  StreamWindow w(static_cast<std::int64_t>(window));

  const auto fill0 = clock_type::now();
  for (std::size_t t = 0; t < window; ++t) w.tick(e, static_cast<std::int64_t>(t), data.row(t));
  r.note(fmt("filled %zu points in %.1f s", e.points().size(), seconds_since(fill0)));
  for (int i = 0; i < 30; ++i) e.step();

  std::vector<double> step_only;
  for (int i = 0; i < 40; ++i) {
    const auto t0 = clock_type::now();
    e.step();
    step_only.push_back(seconds_since(t0) * 1e3);
  }
  std::vector<double> ticks;
  std::vector<double> with_ticks;
  bool steady = true;
  for (std::size_t m = 0; m < measured; ++m) {
    const std::size_t t = window + m;
    const auto t0 = clock_type::now();
    const auto res = w.tick(e, static_cast<std::int64_t>(t), data.row(t));
    const double tick_ms = seconds_since(t0) * 1e3;
    e.step();
    with_ticks.push_back(seconds_since(t0) * 1e3);
    ticks.push_back(tick_ms);
    steady &= res.inserted.size() == 1 && res.expired.size() == 1 && e.points().size() == window;
  }
  const double p95 = percentile(ticks, 0.95);
  const double base = median(step_only);
  const double loaded = median(with_ticks);
  r.check(steady, "window holds 6000 points with one arrival and one expiry per tick");
  r.check(p95 < 100.0, fmt("tick latency p50 %.2f ms, p95 %.2f ms < 100 ms, max %.2f ms",
                           percentile(ticks, 0.5), p95, percentile(ticks, 1.0)));
  r.check(loaded <= 1.2 * base,
          fmt("iteration time %.1f ms with ticks vs %.1f ms without (ratio %.3f <= 1.2)", loaded,
              base, loaded / base));
}

// Field properties

void fields(Report& r) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec2> y(800);
  for (auto& p : y) p = {g(rng), g(rng)};
  BoundingBox box{y[0], y[0]};
  for (const auto& p : y) {
    box.min = {std::min(box.min.x, p.x), std::min(box.min.y, p.y)};
    box.max = {std::max(box.max.x, p.x), std::max(box.max.y, p.y)};
  }
  double density_err = 0.0;
  bool ranges = true;
  bool ones = true;
  for (double h : {0.3, 1.0, 2.5}) {
    const GridSpec grid = fit_grid(box, kKernelCutoff * h, 64, 64);
    const FieldGrid f = density_field(y, h, grid);
    const FieldGrid ref = oracle::dense_density(y, h, grid);
    for (std::size_t k = 0; k < f.values.size(); ++k) {
      density_err = std::max(density_err, std::abs(f.values[k] - ref.values[k]));
    }
    std::vector<std::uint8_t> mask(y.size());
    std::vector<double> rho(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      mask[i] = u(rng) < 0.3;
      rho[i] = u(rng);
    }
    const FieldGrid s = selection_field(y, mask, h, grid, f);
    const FieldGrid a = approximation_field(y, rho, h, grid, f);
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      ranges &= s.values[k] >= 0.0 && s.values[k] <= 1.0 && a.values[k] >= 0.0 &&
                a.values[k] <= 1.0;
    }
    const std::vector<double> exact(y.size(), 1.0);
    const FieldGrid one = approximation_field(y, exact, h, grid, f);
    for (std::size_t k = 0; k < one.values.size(); ++k) {
      if (f.values[k] > 0.0) ones &= one.values[k] == 1.0;
    }
  }
  r.check(ranges, "selection and approximation fields lie in [0, 1]");
  r.check(ones, "approximation field is 1 wherever density is positive when all rows are exact");
  r.check(density_err <= 1.2e-2, fmt("truncated density within %.2e of dense oracle", density_err));
  r.check(lens_alpha(1.0) == 0.0 && lens_alpha(0.0) == 1.0 && lens_alpha(0.5) == 0.75,
          "lens_alpha(1) = 0, lens_alpha(0) = 1, lens_alpha(0.5) = 0.75");
}

// Protocol

void protocol(Report& r) {
  using namespace service;
  using testing_support::Client;
  ServerOptions opts;
  opts.port = 0;
  opts.defaults.engine.perplexity = 5.0;
  opts.defaults.engine.calibration_sample = 100;
  opts.defaults.engine.seed = 1;
  opts.defaults.engine.optimizer.max_iterations = 0;
  Server server(opts);
  server.start();

  // Command matrix.
  {
    Client c(server.port());
    std::set<std::string> ok;
    auto call = [&](const std::string& type, json payload = json::object(), std::size_t frames = 0) {
      const auto reply = c.request(type, std::move(payload), frames);
      ok.insert(type);
      return reply.envelope.payload;
    };
    const json load = call("load", {{"synthetic", {{"n", 300}, {"dim", 6}, {"clusters", 3}}},
                                    {"config", {{"window", 1000}}}});
    const std::string sid = load["session_id"];
    call("set_config", {{"snapshot_stride", 2}});
    call("start");
    call("pause");
    call("resume");
    call("brush", {{"ids", {0, 1, 2, 3}}, {"final", false}});
    call("brush", {{"ids", {0, 1, 2, 3}}});
    const auto task = call("refine", {{"strategy", "breadth_first"}, {"budget", 20}})["task_id"];
    call("task_control", {{"task_id", task}, {"action", "pause"}});
    call("task_control", {{"task_id", task}, {"action", "resume"}});
    const auto id = call("insert", {{"vector", std::vector<float>(6, 0.1f)}})["id"];
    call("get_point", {{"id", id}});
    call("delete", {{"id", id}});
    call("stream_tick", {{"now", 1}, {"arrivals", {std::vector<float>(6, 0.2f)}}});
    call("get_fields", {{"h", 1.0}, {"fields", {"density", "selection", "approximation"}},
                        {"width", 16}, {"height", 16}}, 3);
    call("subscribe", json::object(), 2);
    call("unsubscribe");
    const auto n = call("get_state")["n"].get<std::size_t>();
    std::vector<float> values(n * 2);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(i % 11);
    call("redim", {{"inline", {{"dim", 2}, {"values", values}}}});
    Client other(server.port());
    other.request("attach", {{"session_id", sid}});
    ok.insert("attach");
    call("close");
    const std::set<std::string> all{"load",         "attach",      "close",     "subscribe",
                                    "unsubscribe",  "start",       "pause",     "resume",
                                    "set_config",   "brush",       "refine",    "task_control",
                                    "insert",       "delete",      "redim",     "stream_tick",
                                    "get_fields",   "get_state",   "get_point"};
    r.check(ok == all, fmt("%zu of %zu command types round-trip with matching seq", ok.size(),
                           all.size()));
    bool codes = other.error_of("get_state") == "no_session" && c.error_of("start") == "no_session";
    codes &= c.error_of("load", {{"inline", {{"dim", 3}, {"values", {1}}}}}) == "bad_request";
    c.request("load", {{"synthetic", {{"n", 60}, {"dim", 3}}}});
    codes &= c.error_of("resume") == "bad_state" && c.error_of("explode") == "bad_request";
    r.check(codes, "error envelopes carry bad_request, bad_state and no_session");
  }

  // Snapshot integrity under churn.
  {
    Client c(server.port());
    c.request("load", {{"synthetic", {{"n", 400}, {"dim", 6}, {"clusters", 4}, {"seed", 3}}}});
    const auto sub = c.request("subscribe", json::object(), 2);
    std::set<std::uint32_t> live;
    for (const auto& v : sub.envelope.payload["ids"]) live.insert(v.get<std::uint32_t>());
    c.request("start");
    std::mt19937_64 rng(5);
    std::size_t events = 0;
    bool whole = true;
    bool ordered = true;
    bool consistent = true;
    std::size_t last = 0;
    auto verify = [&](const testing_support::Reply& ev) {
      const json& p = ev.envelope.payload;
      const auto n = p["n"].get<std::size_t>();
      whole &= p["ids"].size() == n && ev.frames.size() == 2 &&
               ev.frames[0].values.size() == 2 * n && ev.frames[1].values.size() == n;
      for (float v : ev.frames[0].values) whole &= std::isfinite(v);
      const auto it = p["iteration"].get<std::size_t>();
      ordered &= it > last;
      last = it;
      for (const auto& v : p["removed"]) live.erase(v.get<std::uint32_t>());
      for (const auto& v : p["inserted"]) live.insert(v.get<std::uint32_t>());
      std::set<std::uint32_t> ids;
      for (const auto& v : p["ids"]) ids.insert(v.get<std::uint32_t>());
      consistent &= ids == live;
      ++events;
    };
    std::set<std::uint32_t> server_live = live;
    for (int round = 0; round < 60; ++round) {
      if (rng() % 2 == 0) {
        std::vector<float> v(6);
        for (float& x : v) x = static_cast<float>(rng() % 100) / 10.0f;
        const auto id = c.request("insert", {{"vector", v}}).envelope.payload["id"].get<std::uint32_t>();
        server_live.insert(id);
        if (rng() % 3 == 0) {
          c.request("delete", {{"id", id}});
          server_live.erase(id);
        }
      } else {
        auto victim = server_live.begin();
        std::advance(victim, rng() % server_live.size());
        c.request("delete", {{"id", *victim}});
        server_live.erase(victim);
      }
      for (auto& ev : c.events) verify(ev);
      c.events.clear();
      verify(c.expect("snapshot", 2));
    }
    r.check(whole, fmt("%zu snapshots carry complete, finite frames sized to n", events));
    r.check(ordered, "snapshot iterations strictly increase");
    r.check(consistent, "ids in every snapshot equal the previous ids after removed and inserted");
    c.request("pause");
  }

  // Slow consumer.
  {
    auto session = server.sessions().create({{"synthetic", {{"n", 200}, {"dim", 4}}}});
    auto box = session->subscribe();
    session->handle({"start", 1, json::object()});
    std::size_t taken = 0;
    std::size_t last = 0;
    bool ordered = true;
    const auto end = clock_type::now() + 1500ms;
    while (clock_type::now() < end) {
      if (const auto ev = box->wait(200ms)) {
        ordered &= ev->snapshot.iteration > last;
        last = ev->snapshot.iteration;
        ++taken;
      }
      std::this_thread::sleep_for(50ms);
    }
    session->handle({"pause", 2, json::object()});
    const std::size_t final_iteration = session->iteration();
    std::this_thread::sleep_for(50ms);
    if (const auto ev = box->try_take()) last = ev->snapshot.iteration;
    r.check(box->coalesced() > 0 && ordered && taken < box->published(),
            fmt("slow consumer took %zu of %zu events, %zu coalesced", taken,
                static_cast<std::size_t>(box->published()),
                static_cast<std::size_t>(box->coalesced())));
    r.check(last == final_iteration,
            fmt("latest event after pause is iteration %zu of %zu", last, final_iteration));
  }
  server.stop();
}

const std::vector<std::pair<std::string, std::function<void(Report&)>>> kCriteria{
    {"knn_recall", knn_recall},
    {"knn_speed_ordering", knn_speed_ordering},
    {"perplexity_calibration", perplexity_calibration},
    {"gradient", gradient_check},
    {"barnes_hut", barnes_hut},
    {"cost_ratio", cost_ratio},
    {"refinement_fixed_point", refinement_fixed_point},
    {"dynamics_oracle", dynamics_oracle},
    {"streaming", streaming},
    {"fields", fields},
    {"protocol", protocol},
};

}  // namespace
}  // namespace atsne

int main(int argc, char** argv) {
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted) {
    const bool known = std::any_of(atsne::kCriteria.begin(), atsne::kCriteria.end(),
                                   [&](const auto& c) { return c.first == w; });
    if (!known) {
      std::cerr << "unknown criterion '" << w << "'\n";
      return 2;
    }
  }
  int failed = 0;
  for (const auto& [name, run] : atsne::kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
    std::cout << name << '\n' << std::flush;
    atsne::Report report;
    const auto t0 = atsne::clock_type::now();
    try {
      run(report);
    } catch (const std::exception& e) {
      report.check(false, std::string("exception: ") + e.what());
    }
    std::cout << (report.passed() ? "PASS " : "FAIL ") << name << " ("
              << atsne::fmt("%.1f s", atsne::seconds_since(t0)) << ")\n"
              << std::flush;
    failed += !report.passed();
  }
  return failed == 0 ? 0 : 1;
}
