#include "atsne/fields.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "atsne/parallel.hpp"

namespace atsne {

void GridSpec::validate() const {
  if (width == 0 || height == 0) throw Error(Errc::invalid_argument, "grid must be non-empty");
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(Errc::invalid_argument, "grid scale must be positive");
  }
  if (!origin.finite()) throw Error(Errc::invalid_argument, "grid origin must be finite");
}

GridSpec fit_grid(const BoundingBox& bbox, double padding, std::size_t width, std::size_t height) {
  const double w = bbox.width() + 2.0 * padding;
  const double hgt = bbox.height() + 2.0 * padding;
  GridSpec g;
  g.width = width;
  g.height = height;
  const double extent_x = w > 0.0 ? w : 1.0;
  const double extent_y = hgt > 0.0 ? hgt : 1.0;
  g.scale = std::min(static_cast<double>(width) / extent_x, static_cast<double>(height) / extent_y);
  const Vec2 center = 0.5 * (bbox.min + bbox.max);
  g.origin = {center.x - 0.5 * static_cast<double>(width) / g.scale,
              center.y - 0.5 * static_cast<double>(height) / g.scale};
  return g;
}

namespace {

/// Per pixel, sum_i weight_i G(|p - y_i|, h) over points within 3h.
std::vector<double> splat(std::span<const Vec2> positions, const double* weights, double h,
                          const GridSpec& grid) {
  if (!(h > 0.0) || !std::isfinite(h)) throw Error(Errc::invalid_argument, "bandwidth must be positive");
  grid.validate();
  std::vector<std::uint32_t> order(positions.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return positions[a].y < positions[b].y || (positions[a].y == positions[b].y && a < b);
  });
  std::vector<double> ys(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) ys[k] = positions[order[k]].y;

  const double radius = kKernelCutoff * h;
  const double radius2 = radius * radius;
  const double inv_two_h2 = 1.0 / (2.0 * h * h);
  std::vector<double> out(grid.width * grid.height, 0.0);
  parallel_for(grid.height, [&](std::size_t py) {
    const double cy = grid.pixel_center(0, py).y;
    const auto lo = std::lower_bound(ys.begin(), ys.end(), cy - radius) - ys.begin();
    const auto hi = std::upper_bound(ys.begin(), ys.end(), cy + radius) - ys.begin();
    double* row = out.data() + py * grid.width;
    for (auto k = lo; k < hi; ++k) {
      const std::uint32_t i = order[static_cast<std::size_t>(k)];
      const Vec2 y = positions[i];
      const double w = weights ? weights[i] : 1.0;
      if (w == 0.0) continue;
      const double fx0 = std::floor((y.x - radius - grid.origin.x) * grid.scale - 0.5);
      const double fx1 = std::ceil((y.x + radius - grid.origin.x) * grid.scale - 0.5);
      const double max_px = static_cast<double>(grid.width) - 1.0;
      if (fx1 < 0.0 || fx0 > max_px) continue;
      const auto x0 = static_cast<std::size_t>(std::max(0.0, fx0));
      const auto x1 = static_cast<std::size_t>(std::min(max_px, fx1));
      for (std::size_t px = x0; px <= x1; ++px) {
        const Vec2 d = grid.pixel_center(px, py) - y;
        const double d2 = d.squared_norm();
        if (d2 <= radius2) row[px] += w * std::exp(-d2 * inv_two_h2);
      }
    }
  }, 8);
  return out;
}

void require_same_grid(const GridSpec& a, const GridSpec& b) {
  if (a.width != b.width || a.height != b.height || a.scale != b.scale || !(a.origin == b.origin)) {
    throw Error(Errc::invalid_argument, "density field computed on a different grid");
  }
}

FieldGrid ratio_field(std::span<const Vec2> positions, const double* weights, double h,
                      const GridSpec& grid, const FieldGrid& density) {
  require_same_grid(grid, density.grid);
  FieldGrid out{grid, std::vector<double>(grid.width * grid.height, 0.0)};
  const auto num = splat(positions, weights, h, grid);
  const auto den = splat(positions, nullptr, h, grid);
  for (std::size_t p = 0; p < out.values.size(); ++p) {
    if (density.values[p] > 0.0 && den[p] > 0.0) out.values[p] = num[p] / den[p];
  }
  return out;
}

}  // namespace

FieldGrid density_field(std::span<const Vec2> positions, double h, const GridSpec& grid) {
  if (positions.empty()) throw Error(Errc::empty_dataset, "density field of an empty embedding");
  FieldGrid out{grid, splat(positions, nullptr, h, grid)};
  const double inv_n = 1.0 / static_cast<double>(positions.size());
  for (double& v : out.values) v *= inv_n;
  return out;
}

FieldGrid selection_field(std::span<const Vec2> positions, std::span<const std::uint8_t> selected,
                          double h, const GridSpec& grid, const FieldGrid& density) {
  if (selected.size() != positions.size()) {
    throw Error(Errc::invalid_argument, "selection mask does not match the positions");
  }
  std::vector<double> w(positions.size());
  bool any = false;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = selected[i] ? 1.0 : 0.0;
    any = any || selected[i];
  }
  if (!any) {
    require_same_grid(grid, density.grid);
    return {grid, std::vector<double>(grid.width * grid.height, 0.0)};
  }
  return ratio_field(positions, w.data(), h, grid, density);
}

FieldGrid approximation_field(std::span<const Vec2> positions, std::span<const double> precision,
                              double h, const GridSpec& grid, const FieldGrid& density) {
  if (precision.size() != positions.size()) {
    throw Error(Errc::invalid_argument, "precision array does not match the positions");
  }
  for (double r : precision) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(Errc::invalid_argument, "precision outside [0, 1]");
  }
  return ratio_field(positions, precision.data(), h, grid, density);
}

double lens_alpha(double a, double k) { return 1.0 - std::pow(a, k); }

std::vector<std::uint8_t> classify_selection(const FieldGrid& selection, double threshold) {
  std::vector<std::uint8_t> mask(selection.values.size());
  for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = selection.values[p] > threshold ? 1 : 0;
  return mask;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(Errc::io, "truncated field header");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_field(std::ostream& out, const FieldGrid& field) {
  out.write("ATSF", 4);
  put_u32(out, static_cast<std::uint32_t>(field.grid.width));
  put_u32(out, static_cast<std::uint32_t>(field.grid.height));
  put_u32(out, 0);
  for (double v : field.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw Error(Errc::io, "failed to write field");
}

void write_field(const std::string& path, const FieldGrid& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot open " + path);
  write_field(out, field);
}

FieldGrid read_field(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "ATSF", 4) != 0) {
    throw Error(Errc::io, "not an ATSF raster");
  }
  FieldGrid field;
  field.grid.width = get_u32(in);
  field.grid.height = get_u32(in);
  get_u32(in);
  field.values.resize(field.grid.width * field.grid.height);
  for (double& v : field.values) v = std::bit_cast<float>(get_u32(in));
  return field;
}

FieldGrid read_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  return read_field(in);
}

}  // namespace atsne
