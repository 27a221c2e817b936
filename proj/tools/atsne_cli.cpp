#include <algorithm>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "atsne/bench.hpp"
#include "atsne/dataset_io.hpp"
#include "atsne/dynamics.hpp"
#include "atsne/engine.hpp"
#include "atsne/service/server.hpp"
#include "atsne/synthetic.hpp"

namespace {

using namespace atsne;
using clock_type = std::chrono::steady_clock;

constexpr int kExitIo = 2;
constexpr int kExitDivergence = 3;

struct CommonFlags {
  double perplexity = 30.0;
  double precision = 0.8;
  std::size_t iterations = 1000;
  std::uint64_t seed = 1;
  double theta = 0.5;
  double exaggeration = 4.0;
  std::size_t exaggeration_iters = 250;
  double decay_lambda = 0.05;

  EngineConfig engine() const {
    EngineConfig cfg;
    cfg.perplexity = perplexity;
    cfg.target_precision = precision;
    cfg.seed = seed;
    cfg.optimizer.theta = theta;
    cfg.optimizer.exaggeration = exaggeration;
    cfg.optimizer.exaggeration_iterations = exaggeration_iters;
    cfg.optimizer.decay_lambda = decay_lambda;
    cfg.optimizer.max_iterations = iterations;
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonFlags& f, bool iterations = true) {
  cmd->add_option("--perplexity", f.perplexity, "Perplexity mu")->capture_default_str();
  cmd->add_option("--precision", f.precision, "Target neighborhood precision in (0, 1]")
      ->capture_default_str();
  if (iterations) {
    cmd->add_option("--iterations", f.iterations, "Optimizer iterations")->capture_default_str();
  }
  cmd->add_option("--seed", f.seed, "Random seed")->capture_default_str();
  cmd->add_option("--theta", f.theta, "Barnes-Hut accuracy")->capture_default_str();
  cmd->add_option("--exaggeration", f.exaggeration, "Early exaggeration factor")
      ->capture_default_str();
  cmd->add_option("--exaggeration-iters", f.exaggeration_iters, "Early exaggeration iterations")
      ->capture_default_str();
  cmd->add_option("--decay-lambda", f.decay_lambda, "Per-point exaggeration decay rate")
      ->capture_default_str();
}

double ms_since(clock_type::time_point t0) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write '" + path + "'");
  return out;
}

/// Writes to `path`, or to stdout when it is empty or "-".
template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  auto out = open_output(path);
  fn(out);
  if (!out) throw Error(Errc::io, "write to '" + path + "' failed");
}

// generate

struct GenerateArgs {
  ClusterSpec spec;
  std::string output;
  bool stream = false;
  std::int64_t interval_ms = 10;
};

int run_generate(const GenerateArgs& a) {
  const Dataset data = make_clusters(a.spec);
  if (!a.stream) {
    if (a.output.empty() || a.output == "-") {
      write_csv_dataset(std::cout, data);
    } else {
      write_dataset(a.output, data);
    }
    return 0;
  }
  StreamFile stream;
  stream.dim = data.dim;
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto row = data.row(i);
    stream.readings.push_back({static_cast<std::int64_t>(i) * a.interval_ms,
                               data.labels.empty() ? std::string() : data.labels[i],
                               std::vector<float>(row.begin(), row.end())});
  }
  with_output(a.output, [&](std::ostream& out) { write_stream(out, stream); });
  return 0;
}

// embed

struct EmbedArgs {
  CommonFlags common;
  std::string input;
  std::string output;
};

int run_embed(const EmbedArgs& a) {
  const Dataset data = read_dataset(a.input);
  const EngineConfig cfg = a.common.engine();
  cfg.optimizer.validate();
  const auto t0 = clock_type::now();
  Engine engine = Engine::create(data.to_store(), cfg);
  const double init_ms = ms_since(t0);

  StepStats stats;
  try {
    for (std::size_t i = 0; i < a.common.iterations; ++i) stats = engine.step();
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  }
  with_output(a.output, [&](std::ostream& out) { write_embedding_csv(out, engine.snapshot()); });

  const auto p = engine.similarity().nonzero_joint();
  const double cost = a.common.iterations == 0
                          ? kl_cost(p, engine.embedding())
                          : kl_cost_with_z(p, engine.embedding(), stats.z);
  std::cerr << "points " << data.n << ", dim " << data.dim << ", K " << engine.k() << '\n';
  std::cerr << "forest T=" << engine.forest_params().trees
            << " L=" << engine.forest_params().leaf_budget
            << " V=" << engine.forest_params().variance_pool;
  if (const auto& c = engine.init_stats().calibration) {
    std::cerr << " (calibrated recall " << c->measured_recall << ")";
  }
  std::cerr << '\n';
  std::cerr << "init " << std::fixed << std::setprecision(1) << init_ms << " ms (neighbors "
            << engine.init_stats().knn_ms << " ms, rows " << engine.init_stats().rows_ms
            << " ms)\n";
  std::cerr << std::defaultfloat << std::setprecision(6) << "iterations "
            << engine.embedding().iteration() << ", cost estimate " << cost << '\n';
  return 0;
}

// bench-knn

struct BenchKnnArgs {
  std::string input;
  std::string output;
  std::vector<std::string> configs{"brute", "1:1", "2:512", "4:1024"};
  std::vector<std::size_t> sizes;
  std::size_t min_size = 1000;
  std::size_t steps = 4;
  std::size_t sample = 1000;
  std::size_t repeats = 1;
  std::size_t variance_pool = 5;
  double perplexity = 30.0;
  std::uint64_t seed = 1;
};

int run_bench_knn(const BenchKnnArgs& a) {
  const Dataset data = read_dataset(a.input);
  KnnBenchOptions opts;
  for (const auto& c : a.configs) opts.configs.push_back(parse_knn_config(c));
  opts.sizes = a.sizes.empty()
                   ? log_spaced_sizes(std::min(a.min_size, data.n), data.n, a.steps)
                   : a.sizes;
  opts.sample = a.sample;
  opts.repeats = a.repeats;
  opts.variance_pool = a.variance_pool;
  opts.perplexity = a.perplexity;
  opts.seed = a.seed;
  for (std::size_t n : opts.sizes) opts.sample = std::min(opts.sample, n);
  const auto rows = run_knn_bench(data, opts);
  with_output(a.output, [&](std::ostream& out) { write_bench_csv(out, rows); });
  return 0;
}

// bench-cost

struct BenchCostArgs {
  CommonFlags common;
  std::string input;
  std::string output;
  std::vector<std::string> configs{"calibrated", "1:1"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::size_t> checkpoints{100, 250, 500, 1000};
};

int run_bench_cost(const BenchCostArgs& a) {
  const Dataset data = read_dataset(a.input);
  if (data.n > kMaxDenseCostPoints) {
    std::cerr << "error: bench-cost needs N <= " << kMaxDenseCostPoints << ", got " << data.n
              << '\n';
    return kExitIo;
  }
  CostBenchOptions opts;
  for (const auto& c : a.configs) {
    KnnConfig k = parse_knn_config(c);
    if (k.kind == KnnConfig::Kind::calibrated && c == "calibrated") k.target = a.common.precision;
    opts.configs.push_back(k);
  }
  opts.seeds = a.seeds;
  opts.checkpoints.clear();
  for (std::size_t c : a.checkpoints) {
    if (c <= a.common.iterations) opts.checkpoints.push_back(c);
  }
  if (opts.checkpoints.empty()) opts.checkpoints.push_back(a.common.iterations);
  opts.perplexity = a.common.perplexity;
  opts.optimizer = a.common.engine().optimizer;
  opts.optimizer.validate();

  std::vector<BenchRow> rows;
  try {
    rows = run_cost_bench(data, opts);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  }
  with_output(a.output, [&](std::ostream& out) { write_bench_csv(out, rows); });

  const std::size_t first = opts.checkpoints.front();
  const std::size_t last = opts.checkpoints.back();
  double lowest = 2.0;
  std::string low_config;
  for (const auto& r : rows) {
    if (r.config != "brute" && r.recall < lowest) {
      lowest = r.recall;
      low_config = r.config;
    }
  }
  if (!low_config.empty() && first < last) {
    for (std::uint64_t seed : opts.seeds) {
      double at_first = 0.0;
      double at_last = 0.0;
      for (const auto& r : rows) {
        if (r.config != low_config || r.seed != seed) continue;
        if (r.iteration == first) at_first = *r.cost_ratio;
        if (r.iteration == last) at_last = *r.cost_ratio;
      }
      std::cerr << "exaggeration peak " << low_config << " seed " << seed << ": ratio@" << first
                << " = " << at_first << ", ratio@" << last << " = " << at_last
                << (at_first >= at_last ? " (present)" : " (absent)") << '\n';
    }
  }
  return 0;
}

// stream

struct StreamArgs {
  CommonFlags common;
  std::string input;
  std::int64_t window_ms = 60000;
  std::int64_t tick_ms = 100;
  std::size_t steps_per_tick = 1;
  std::string frames_dir;
  std::size_t frame_every = 10;
};

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

int run_stream(const StreamArgs& a) {
  const StreamFile stream = read_stream_file(a.input);
  if (stream.skipped_lines > 0) {
    std::cerr << "warning: skipped " << stream.skipped_lines << " malformed line(s)\n";
  }
  if (a.tick_ms <= 0) throw Error(Errc::invalid_argument, "--tick-ms must be positive");
  if (!a.frames_dir.empty()) std::filesystem::create_directories(a.frames_dir);
  if (stream.readings.empty()) {
    std::cerr << "ticks 0, frames 0\n";
    return 0;
  }

  EngineConfig cfg = a.common.engine();
  cfg.optimizer.max_iterations = 0;
  Engine engine = Engine::create_empty(stream.dim, cfg);
  StreamWindow window(a.window_ms);

  std::vector<double> latencies;
  std::size_t frames = 0;
  std::size_t next = 0;
  std::vector<float> arrivals;
  const std::int64_t start = stream.readings.front().timestamp_ms;
  const std::int64_t end = stream.readings.back().timestamp_ms;
  std::size_t tick = 0;
  try {
    for (std::int64_t now = start;; now += a.tick_ms, ++tick) {
      arrivals.clear();
      while (next < stream.readings.size() && stream.readings[next].timestamp_ms <= now) {
        const auto& f = stream.readings[next++].features;
        arrivals.insert(arrivals.end(), f.begin(), f.end());
      }
      const auto t0 = clock_type::now();
      window.tick(engine, now, arrivals);
      latencies.push_back(ms_since(t0));
      for (std::size_t s = 0; s < a.steps_per_tick && engine.embedding().size() >= 2; ++s) {
        engine.step();
      }
      if (!a.frames_dir.empty() && a.frame_every > 0 && tick % a.frame_every == 0) {
        std::ostringstream name;
        name << "frame_" << std::setw(6) << std::setfill('0') << frames++ << ".csv";
        auto out = open_output((std::filesystem::path(a.frames_dir) / name.str()).string());
        write_embedding_csv(out, engine.snapshot());
      }
      if (now >= end) break;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  }
  std::cerr << "ticks " << latencies.size() << ", frames " << frames << ", live "
            << engine.points().size() << ", peak " << window.high_watermark() << '\n';
  std::cerr << "tick latency ms: p50 " << percentile(latencies, 0.5) << ", p95 "
            << percentile(latencies, 0.95) << ", max " << percentile(latencies, 1.0) << '\n';
  return 0;
}

// serve

struct ServeArgs {
  CommonFlags common;
  std::string address = "127.0.0.1";
  std::uint16_t port = 8765;
  double idle_timeout_s = 300;
  std::size_t threads = 4;
};

int run_serve(const ServeArgs& a) {
  service::ServerOptions opts;
  opts.address = a.address;
  opts.port = a.port;
  opts.idle_timeout = std::chrono::milliseconds(static_cast<long long>(a.idle_timeout_s * 1000));
  opts.command_threads = a.threads;
  opts.defaults.engine = a.common.engine();
  opts.defaults.engine.optimizer.validate();
  service::Server server(opts);
  std::cerr << "listening on ws://" << a.address << ':' << server.port() << "/session"
            << std::endl;
  server.run();
  std::cerr << "shut down\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive, steerable tSNE"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a labeled Gaussian-cluster dataset");
  generate->add_option("-o,--output", gen.output, "Output path (.atsd for binary, '-' for stdout)");
  generate->add_option("--n", gen.spec.n, "Points")->capture_default_str();
  generate->add_option("--dim", gen.spec.dim, "Dimensions")->capture_default_str();
  generate->add_option("--clusters", gen.spec.clusters, "Clusters")->capture_default_str();
  generate->add_option("--separation", gen.spec.separation, "Center spread")->capture_default_str();
  generate->add_option("--spread", gen.spec.spread, "Cluster standard deviation")
      ->capture_default_str();
  generate->add_option("--outliers", gen.spec.outliers, "Uniform outliers")->capture_default_str();
  generate->add_option("--seed", gen.spec.seed, "Random seed")->capture_default_str();
  generate->add_flag("--stream", gen.stream, "Write a stream file instead of a dataset");
  generate->add_option("--interval-ms", gen.interval_ms, "Stream spacing between readings")
      ->capture_default_str();

  EmbedArgs emb;
  auto* embed = app.add_subcommand("embed", "Embed a dataset and write id,x,y,rho");
  embed->add_option("input", emb.input, "Dataset (CSV or ATSD)")->required();
  embed->add_option("-o,--output", emb.output, "Embedding CSV (default stdout)");
  add_common(embed, emb.common);

  BenchKnnArgs bk;
  auto* bench_knn = app.add_subcommand("bench-knn", "Neighborhood time and precision sweep");
  bench_knn->add_option("input", bk.input, "Dataset")->required();
  bench_knn->add_option("-o,--output", bk.output, "CSV (default stdout)");
  bench_knn->add_option("--config", bk.configs, "brute, calibrated[:target] or T:L")
      ->delimiter(',')
      ->capture_default_str();
  bench_knn->add_option("--sizes", bk.sizes, "Explicit prefix sizes")->delimiter(',');
  bench_knn->add_option("--min-size", bk.min_size, "Smallest prefix")->capture_default_str();
  bench_knn->add_option("--steps", bk.steps, "Log-spaced prefix count")->capture_default_str();
  bench_knn->add_option("--sample", bk.sample, "Recall sample size")->capture_default_str();
  bench_knn->add_option("--repeats", bk.repeats, "Runs per configuration")->capture_default_str();
  bench_knn->add_option("--variance-pool", bk.variance_pool, "V")->capture_default_str();
  bench_knn->add_option("--perplexity", bk.perplexity, "Perplexity mu")->capture_default_str();
  bench_knn->add_option("--seed", bk.seed, "Random seed")->capture_default_str();

  BenchCostArgs bc;
  auto* bench_cost = app.add_subcommand("bench-cost", "Approximate over exact cost ratio");
  bench_cost->add_option("input", bc.input, "Dataset with N <= 10000")->required();
  bench_cost->add_option("-o,--output", bc.output, "CSV (default stdout)");
  bench_cost->add_option("--config", bc.configs, "brute, calibrated[:target] or T:L")
      ->delimiter(',')
      ->capture_default_str();
  bench_cost->add_option("--seeds", bc.seeds, "Seeds")->delimiter(',')->capture_default_str();
  bench_cost->add_option("--checkpoints", bc.checkpoints, "Iterations to report")
      ->delimiter(',')
      ->capture_default_str();
  add_common(bench_cost, bc.common);

  StreamArgs st;
  auto* stream = app.add_subcommand("stream", "Replay a stream file through a sliding window");
  stream->add_option("input", st.input, "Stream file (timestamp_ms,label,features...)")
      ->required();
  stream->add_option("--window", st.window_ms, "Window length M in ms")->capture_default_str();
  stream->add_option("--tick-ms", st.tick_ms, "Logical tick length")->capture_default_str();
  stream->add_option("--steps-per-tick", st.steps_per_tick, "Optimizer iterations per tick")
      ->capture_default_str();
  stream->add_option("--frames", st.frames_dir, "Directory for embedding frames");
  stream->add_option("--frame-every", st.frame_every, "Ticks between frames")
      ->capture_default_str();
  add_common(stream, st.common, false);

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Run the WebSocket service");
  serve->add_option("--address", sv.address, "Bind address")->capture_default_str();
  serve->add_option("--port", sv.port, "Port (0 picks a free one)")->capture_default_str();
  serve->add_option("--idle-timeout", sv.idle_timeout_s, "Seconds before idle sessions close")
      ->capture_default_str();
  serve->add_option("--threads", sv.threads, "Command threads")->capture_default_str();
  add_common(serve, sv.common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) return run_generate(gen);
    if (*embed) return run_embed(emb);
    if (*bench_knn) return run_bench_knn(bk);
    if (*bench_cost) return run_bench_cost(bc);
    if (*stream) return run_stream(st);
    if (*serve) return run_serve(sv);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == Errc::io ? kExitIo : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
