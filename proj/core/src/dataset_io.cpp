#include "atsne/dataset_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

namespace atsne {
namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_float(std::string_view s, float& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_int(std::string_view s, std::int64_t& out) {
  s = trim(s);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(Errc::io, "truncated ATSD file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string format_float(float v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

Dataset read_csv_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::io, "missing CSV header");
  const auto header = split(line);
  std::optional<std::size_t> label_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (trim(header[c]) == "label") label_col = c;
  }
  Dataset data;
  data.dim = header.size() - (label_col ? 1 : 0);
  if (data.dim == 0) throw Error(Errc::io, "CSV has no feature columns");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw Error(Errc::io, "line " + std::to_string(line_no) + ": expected " +
                                std::to_string(header.size()) + " columns");
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (label_col && c == *label_col) {
        data.labels.emplace_back(trim(cells[c]));
        continue;
      }
      float v;
      if (!parse_float(cells[c], v)) {
        throw Error(Errc::io, "line " + std::to_string(line_no) + ": bad number");
      }
      data.values.push_back(v);
    }
    ++data.n;
  }
  return data;
}

Dataset read_atsd(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "ATSD", 4) != 0) {
    throw Error(Errc::io, "not an ATSD file");
  }
  Dataset data;
  data.n = get_u32(in);
  data.dim = get_u32(in);
  if (data.dim == 0) throw Error(Errc::io, "ATSD dimensionality is zero");
  data.values.resize(data.n * data.dim);
  for (float& v : data.values) {
    v = std::bit_cast<float>(get_u32(in));
    if (!std::isfinite(v)) throw Error(Errc::io, "non-finite value in ATSD file");
  }
  return data;
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  in.clear();
  in.seekg(0);
  if (std::memcmp(magic, "ATSD", 4) == 0) return read_atsd(in);
  return read_csv_dataset(in);
}

void write_csv_dataset(std::ostream& out, const Dataset& data) {
  for (std::size_t c = 0; c < data.dim; ++c) out << (c ? "," : "") << 'f' << c;
  if (!data.labels.empty()) out << ",label";
  out << '\n';
  for (std::size_t i = 0; i < data.n; ++i) {
    for (std::size_t c = 0; c < data.dim; ++c) out << (c ? "," : "") << format_float(data.row(i)[c]);
    if (!data.labels.empty()) out << ',' << data.labels[i];
    out << '\n';
  }
  if (!out) throw Error(Errc::io, "failed to write dataset");
}

void write_atsd(std::ostream& out, const Dataset& data) {
  out.write("ATSD", 4);
  put_u32(out, static_cast<std::uint32_t>(data.n));
  put_u32(out, static_cast<std::uint32_t>(data.dim));
  for (float v : data.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw Error(Errc::io, "failed to write dataset");
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot open " + path);
  const bool binary = path.size() >= 5 && path.substr(path.size() - 5) == ".atsd";
  if (binary) {
    write_atsd(out, data);
  } else {
    write_csv_dataset(out, data);
  }
}

void write_embedding_csv(std::ostream& out, const Snapshot& snapshot) {
  out << "id,x,y,rho\n";
  for (std::size_t k = 0; k < snapshot.ids.size(); ++k) {
    out << raw(snapshot.ids[k]) << ',' << format_double(snapshot.positions[k].x) << ','
        << format_double(snapshot.positions[k].y) << ',' << format_double(snapshot.precision[k])
        << '\n';
  }
  if (!out) throw Error(Errc::io, "failed to write embedding");
}

StreamFile read_stream(std::istream& in) {
  StreamFile stream;
  std::string line;
  if (!std::getline(in, line)) return stream;
  const auto header = split(line);
  if (header.size() < 3 || trim(header[0]) != "timestamp_ms" || trim(header[1]) != "label") {
    throw Error(Errc::io, "stream header must start with timestamp_ms,label");
  }
  stream.dim = header.size() - 2;
  std::int64_t last = INT64_MIN;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    StreamReading r;
    bool ok = cells.size() == header.size() && parse_int(cells[0], r.timestamp_ms) &&
              r.timestamp_ms >= last;
    if (ok) {
      r.label = std::string(trim(cells[1]));
      r.features.resize(stream.dim);
      for (std::size_t c = 0; c < stream.dim && ok; ++c) ok = parse_float(cells[c + 2], r.features[c]);
    }
    if (!ok) {
      ++stream.skipped_lines;
      continue;
    }
    last = r.timestamp_ms;
    stream.readings.push_back(std::move(r));
  }
  return stream;
}

StreamFile read_stream_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  return read_stream(in);
}

void write_stream(std::ostream& out, const StreamFile& stream) {
  out << "timestamp_ms,label";
  for (std::size_t c = 0; c < stream.dim; ++c) out << ",f" << c + 1;
  out << '\n';
  for (const auto& r : stream.readings) {
    out << r.timestamp_ms << ',' << r.label;
    for (float v : r.features) out << ',' << format_float(v);
    out << '\n';
  }
  if (!out) throw Error(Errc::io, "failed to write stream");
}

}  // namespace atsne
