#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "atsne/dataset_io.hpp"
#include "atsne/engine.hpp"

namespace atsne {

/// One line of a benchmark CSV. Columns that do not apply stay empty.
struct BenchRow {
  std::size_t n = 0;
  std::string config;  // "brute", "calibrated" or "T<t>L<l>"
  std::optional<std::size_t> trees;
  std::optional<std::size_t> leaves;
  std::optional<std::size_t> variance_pool;
  double init_ms = 0.0;
  double recall = 0.0;
  std::optional<std::size_t> iteration;
  std::uint64_t seed = 0;
  std::optional<double> final_kl;
  std::optional<double> cost_ratio;
};

inline constexpr const char* kBenchHeader =
    "n,config,trees,leaves,variance_pool,init_ms,recall,iteration,seed,final_kl,cost_ratio";

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);
/// Parses what write_bench_csv produced. Throws Error(Errc::io) on schema errors.
std::vector<BenchRow> read_bench_csv(std::istream& in);

/// A neighborhood configuration: brute force, calibrated to a target
/// precision, or fixed forest parameters.
struct KnnConfig {
  enum class Kind { brute, calibrated, fixed } kind = Kind::fixed;
  std::size_t trees = 1;
  std::size_t leaves = 1;
  double target = 0.8;

  static KnnConfig brute() { return {Kind::brute, 0, 0, 1.0}; }
  static KnnConfig calibrated(double target) { return {Kind::calibrated, 0, 0, target}; }
  static KnnConfig fixed(std::size_t t, std::size_t l) { return {Kind::fixed, t, l, 0.8}; }
  std::string name() const;
};

/// Parses "brute", "calibrated[:target]" or "T:L".
KnnConfig parse_knn_config(const std::string& text);

struct KnnBenchOptions {
  std::vector<KnnConfig> configs;
  std::vector<std::size_t> sizes;  // prefix sizes; empty means the whole dataset
  std::size_t sample = 1000;
  std::size_t repeats = 1;
  std::size_t variance_pool = 5;
  double perplexity = 30.0;
  std::uint64_t seed = 1;
};

/// Per prefix size and configuration: time to compute all rows (neighbors
/// plus bandwidths) and the recall of the stored neighborhoods on a sample,
/// against brute force. One row per repeat.
std::vector<BenchRow> run_knn_bench(const Dataset& data, const KnnBenchOptions& options);

/// `count` sizes spaced evenly in log scale between `lo` and `hi`.
std::vector<std::size_t> log_spaced_sizes(std::size_t lo, std::size_t hi, std::size_t count);

struct CostBenchOptions {
  std::vector<KnnConfig> configs;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::size_t> checkpoints{100, 250, 500, 1000};
  double perplexity = 30.0;
  std::size_t variance_pool = 5;
  OptimizerConfig optimizer;
};

inline constexpr std::size_t kMaxDenseCostPoints = 10000;

/// Runs the exact pipeline and each configuration from the same initial
/// embedding. At every checkpoint reports C(P, Q^A) / C(P, Q), both costs
/// taken against the exact P. Throws Error(Errc::invalid_argument) above
/// kMaxDenseCostPoints points.
std::vector<BenchRow> run_cost_bench(const Dataset& data, const CostBenchOptions& options);

/// Fraction of exact neighbors present in the approximate rows, averaged
/// over the owners of `exact`.
double store_recall(const SimilarityStore& approx, const SimilarityStore& exact);

}  // namespace atsne
