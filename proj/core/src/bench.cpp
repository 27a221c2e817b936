#include "atsne/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "atsne/parallel.hpp"

namespace atsne {

namespace {

template <typename T>
std::string format_number(T value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string format_optional(const std::optional<T>& value) {
  return value ? format_number(*value) : std::string();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& text, const char* column) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(Errc::io, std::string("bench csv: bad value '") + text + "' in column " + column);
  }
  return value;
}

template <typename T>
std::optional<T> parse_optional(const std::string& text, const char* column) {
  if (text.empty()) return std::nullopt;
  return parse_number<T>(text, column);
}

PointStore prefix_store(const Dataset& data, std::size_t n) {
  return PointStore::from_rows(data.dim, std::span<const float>(data.values.data(), n * data.dim));
}

EngineConfig engine_config(const KnnConfig& config, double perplexity, std::size_t pool,
                           std::uint64_t seed) {
  EngineConfig cfg;
  cfg.perplexity = perplexity;
  cfg.variance_pool = pool;
  cfg.seed = seed;
  switch (config.kind) {
    case KnnConfig::Kind::brute:
      cfg.target_precision = 1.0;
      break;
    case KnnConfig::Kind::calibrated:
      cfg.target_precision = config.target;
      break;
    case KnnConfig::Kind::fixed:
      cfg.target_precision = config.target;
      cfg.fixed_forest = ForestParams{config.trees, pool, config.leaves, seed};
      break;
  }
  return cfg;
}

SimilarityConfig similarity_config(const EngineConfig& cfg) {
  return {cfg.perplexity,  cfg.target_precision, cfg.calibration_sample,
          cfg.variance_pool, cfg.seed,           cfg.fixed_forest};
}

}  // namespace

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << kBenchHeader << '\n';
  for (const auto& r : rows) {
    out << r.n << ',' << r.config << ',' << format_optional(r.trees) << ','
        << format_optional(r.leaves) << ',' << format_optional(r.variance_pool) << ','
        << format_number(r.init_ms) << ',' << format_number(r.recall) << ','
        << format_optional(r.iteration) << ',' << r.seed << ',' << format_optional(r.final_kl)
        << ',' << format_optional(r.cost_ratio) << '\n';
  }
}

std::vector<BenchRow> read_bench_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kBenchHeader) {
    throw Error(Errc::io, "bench csv: unexpected header");
  }
  std::vector<BenchRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 11) {
      throw Error(Errc::io, "bench csv: expected 11 columns, got " + std::to_string(cells.size()));
    }
    BenchRow r;
    r.n = parse_number<std::size_t>(cells[0], "n");
    r.config = cells[1];
    r.trees = parse_optional<std::size_t>(cells[2], "trees");
    r.leaves = parse_optional<std::size_t>(cells[3], "leaves");
    r.variance_pool = parse_optional<std::size_t>(cells[4], "variance_pool");
    r.init_ms = parse_number<double>(cells[5], "init_ms");
    r.recall = parse_number<double>(cells[6], "recall");
    r.iteration = parse_optional<std::size_t>(cells[7], "iteration");
    r.seed = parse_number<std::uint64_t>(cells[8], "seed");
    r.final_kl = parse_optional<double>(cells[9], "final_kl");
    r.cost_ratio = parse_optional<double>(cells[10], "cost_ratio");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string KnnConfig::name() const {
  switch (kind) {
    case Kind::brute:
      return "brute";
    case Kind::calibrated:
      return "calibrated";
    case Kind::fixed:
      break;
  }
  return "T" + std::to_string(trees) + "L" + std::to_string(leaves);
}

KnnConfig parse_knn_config(const std::string& text) {
  if (text == "brute") return KnnConfig::brute();
  if (text.rfind("calibrated", 0) == 0) {
    if (text.size() == 10) return KnnConfig::calibrated(0.8);
    if (text[10] != ':') throw Error(Errc::invalid_argument, "bad config '" + text + "'");
    const double target = parse_number<double>(text.substr(11), "target");
    if (!(target > 0.0 && target <= 1.0)) {
      throw Error(Errc::invalid_argument, "calibration target must lie in (0, 1]");
    }
    return KnnConfig::calibrated(target);
  }
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw Error(Errc::invalid_argument, "bad config '" + text + "'; expected T:L");
  }
  try {
    const auto t = parse_number<std::size_t>(text.substr(0, colon), "trees");
    const auto l = parse_number<std::size_t>(text.substr(colon + 1), "leaves");
    if (t == 0 || l == 0) throw Error(Errc::invalid_argument, "T and L must be positive");
    return KnnConfig::fixed(t, l);
  } catch (const Error& e) {
    throw Error(Errc::invalid_argument, "bad config '" + text + "': " + e.what());
  }
}

std::vector<std::size_t> log_spaced_sizes(std::size_t lo, std::size_t hi, std::size_t count) {
  if (lo == 0 || lo > hi) throw Error(Errc::invalid_argument, "sizes need 0 < lo <= hi");
  if (count <= 1 || lo == hi) return {hi};
  std::vector<std::size_t> out;
  const double a = std::log(static_cast<double>(lo));
  const double b = std::log(static_cast<double>(hi));
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(count - 1);
    out.push_back(static_cast<std::size_t>(std::llround(std::exp(a + t * (b - a)))));
  }
  out.front() = lo;
  out.back() = hi;
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double store_recall(const SimilarityStore& approx, const SimilarityStore& exact) {
  std::vector<NeighborList> a;
  std::vector<NeighborList> e;
  for (PointId id : exact.owners()) {
    if (!approx.has_row(id)) throw Error(Errc::unknown_id, "recall: rows differ");
    a.push_back({id, approx.row(id).neighbors, false});
    e.push_back({id, exact.row(id).neighbors, true});
  }
  return measure_recall(a, e);
}

std::vector<BenchRow> run_knn_bench(const Dataset& data, const KnnBenchOptions& options) {
  std::vector<std::size_t> sizes = options.sizes.empty() ? std::vector{data.n} : options.sizes;
  const std::size_t k = neighborhood_size(options.perplexity);
  for (std::size_t n : sizes) {
    if (n > data.n) throw Error(Errc::invalid_argument, "prefix size exceeds the dataset");
    if (n < k + 1) throw Error(Errc::invalid_argument, "prefix size below K + 1");
    if (options.sample > n) throw Error(Errc::invalid_argument, "sample exceeds prefix size");
  }
  const std::size_t pool = std::min(options.variance_pool, data.dim);

  std::vector<BenchRow> rows;
  for (std::size_t n : sizes) {
    const PointStore points = prefix_store(data, n);

    std::vector<PointId> sample;
    std::mt19937_64 rng(options.seed);
    std::sample(points.ids().begin(), points.ids().end(), std::back_inserter(sample),
                options.sample, rng);
    std::vector<NeighborList> truth(sample.size());
    parallel_for(sample.size(), [&](std::size_t i) {
      truth[i] = brute_force_knn(points, sample[i], k);
    });

    for (const auto& config : options.configs) {
      for (std::size_t rep = 0; rep < std::max<std::size_t>(1, options.repeats); ++rep) {
        const EngineConfig cfg = engine_config(config, options.perplexity, pool, options.seed);
        const InitResult init = init_all(points, similarity_config(cfg));
        std::vector<NeighborList> found;
        found.reserve(sample.size());
        for (PointId id : sample) found.push_back({id, init.store.row(id).neighbors, false});

        BenchRow row;
        row.n = n;
        row.config = config.name();
        if (config.kind != KnnConfig::Kind::brute) {
          row.trees = init.forest_params.trees;
          row.leaves = init.forest_params.leaf_budget;
          row.variance_pool = init.forest_params.variance_pool;
        }
        row.init_ms = init.knn_ms + init.rows_ms;
        row.recall = measure_recall(found, truth);
        row.seed = options.seed;
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::vector<BenchRow> run_cost_bench(const Dataset& data, const CostBenchOptions& options) {
  if (data.n > kMaxDenseCostPoints) {
    throw Error(Errc::invalid_argument, "cost bench needs N <= " +
                                            std::to_string(kMaxDenseCostPoints) + ", got " +
                                            std::to_string(data.n));
  }
  if (options.checkpoints.empty()) throw Error(Errc::invalid_argument, "no checkpoints");
  std::vector<std::size_t> checkpoints = options.checkpoints;
  std::sort(checkpoints.begin(), checkpoints.end());
  const std::size_t last = checkpoints.back();
  const std::size_t pool = std::min(options.variance_pool, data.dim);

  std::vector<BenchRow> rows;
  for (std::uint64_t seed : options.seeds) {
    EngineConfig exact_cfg = engine_config(KnnConfig::brute(), options.perplexity, pool, seed);
    exact_cfg.optimizer = options.optimizer;
    exact_cfg.optimizer.max_iterations = std::max(exact_cfg.optimizer.max_iterations, last);
    Engine exact = Engine::create(data.to_store(), exact_cfg);
    const std::vector<JointEntry> p = exact.similarity().nonzero_joint();

    struct Run {
      KnnConfig config;
      Engine engine;
      double recall;
    };
    std::vector<Run> runs;
    for (const auto& config : options.configs) {
      EngineConfig cfg = engine_config(config, options.perplexity, pool, seed);
      cfg.optimizer = exact_cfg.optimizer;
      Engine engine = Engine::create(data.to_store(), cfg);
      const double recall = store_recall(engine.similarity(), exact.similarity());
      runs.push_back({config, std::move(engine), recall});
    }

    std::size_t next = 0;
    for (std::size_t it = 1; it <= last; ++it) {
      exact.step();
      for (auto& run : runs) run.engine.step();
      if (it != checkpoints[next]) continue;
      const double reference = kl_cost(p, exact.embedding());
      for (auto& run : runs) {
        const double approx = kl_cost(p, run.engine.embedding());
        BenchRow row;
        row.n = data.n;
        row.config = run.config.name();
        if (run.config.kind != KnnConfig::Kind::brute) {
          row.trees = run.engine.forest_params().trees;
          row.leaves = run.engine.forest_params().leaf_budget;
          row.variance_pool = run.engine.forest_params().variance_pool;
        }
        row.init_ms = run.engine.init_stats().knn_ms + run.engine.init_stats().rows_ms;
        row.recall = run.recall;
        row.iteration = it;
        row.seed = seed;
        row.final_kl = approx;
        row.cost_ratio = approx / reference;
        rows.push_back(std::move(row));
      }
      while (next < checkpoints.size() && checkpoints[next] <= it) ++next;
      if (next == checkpoints.size()) break;
    }
  }
  return rows;
}

}  // namespace atsne
