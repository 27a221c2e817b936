#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atsne/optimizer.hpp"
#include "atsne/point_store.hpp"

namespace atsne {

/// Row-major points with optional per-point labels.
struct Dataset {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<std::string> labels;  // empty or one per point

  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  PointStore to_store() const { return PointStore::from_rows(dim, values); }
};

/// CSV with a header line. A column named "label" is carried as labels; every
/// other column must be numeric.
Dataset read_csv_dataset(std::istream& in);
/// "ATSD" binary: magic, u32 N, u32 D, then N*D little-endian f32.
Dataset read_atsd(std::istream& in);
/// Picks the format from the magic bytes.
Dataset read_dataset(const std::string& path);

void write_csv_dataset(std::ostream& out, const Dataset& data);
void write_atsd(std::ostream& out, const Dataset& data);
void write_dataset(const std::string& path, const Dataset& data);

/// `id,x,y,rho` per live point in snapshot order.
void write_embedding_csv(std::ostream& out, const Snapshot& snapshot);

struct StreamReading {
  std::int64_t timestamp_ms = 0;
  std::string label;
  std::vector<float> features;
};

struct StreamFile {
  std::size_t dim = 0;
  std::vector<StreamReading> readings;
  std::size_t skipped_lines = 0;  // malformed
};

/// `timestamp_ms,label,f1..fD` with a header line. Malformed lines, including
/// ones whose timestamp goes backwards, are skipped and counted.
StreamFile read_stream(std::istream& in);
StreamFile read_stream_file(const std::string& path);
void write_stream(std::ostream& out, const StreamFile& stream);

}  // namespace atsne
