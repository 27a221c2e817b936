#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "atsne/types.hpp"

namespace atsne {

/// Pixel (px, py) covers embedding coordinates starting at
/// origin + (px, py) / scale; values are sampled at pixel centers.
struct GridSpec {
  std::size_t width = 512;
  std::size_t height = 512;
  Vec2 origin{};
  double scale = 1.0;  // pixels per embedding unit

  Vec2 pixel_center(std::size_t px, std::size_t py) const noexcept {
    return {origin.x + (static_cast<double>(px) + 0.5) / scale,
            origin.y + (static_cast<double>(py) + 0.5) / scale};
  }
  void validate() const;
};

/// Square-pixel grid of the given size covering `bbox` padded by `padding`
/// on every side, centered.
GridSpec fit_grid(const BoundingBox& bbox, double padding, std::size_t width = 512,
                  std::size_t height = 512);

struct FieldGrid {
  GridSpec grid;
  std::vector<double> values;  // row-major, height rows of width values

  double at(std::size_t px, std::size_t py) const { return values[py * grid.width + px]; }
};

inline constexpr double kKernelCutoff = 3.0;  // truncation radius in bandwidths

/// f(p) = (1/N) sum_i exp(-|p - y_i|^2 / (2 h^2)), kernel truncated at 3h.
FieldGrid density_field(std::span<const Vec2> positions, double h, const GridSpec& grid);

/// Share of the density contributed by the selected points; 0 where f = 0.
/// `selected` is parallel to `positions`.
FieldGrid selection_field(std::span<const Vec2> positions, std::span<const std::uint8_t> selected,
                          double h, const GridSpec& grid, const FieldGrid& density);

/// Precision-weighted local average sum rho_i G_i / sum G_i; 0 where f = 0.
FieldGrid approximation_field(std::span<const Vec2> positions, std::span<const double> precision,
                              double h, const GridSpec& grid, const FieldGrid& density);

/// Lens opacity 1 - a^k.
double lens_alpha(double a, double k = 2.0);

inline constexpr double kSelectionThreshold = 0.5;

/// Per-pixel s > threshold.
std::vector<std::uint8_t> classify_selection(const FieldGrid& selection,
                                             double threshold = kSelectionThreshold);

/// "ATSF" raster: 16-byte header then little-endian f32 values, row-major.
void write_field(std::ostream& out, const FieldGrid& field);
void write_field(const std::string& path, const FieldGrid& field);
/// Only width, height and values are recovered; the grid's affine map is not stored.
FieldGrid read_field(std::istream& in);
FieldGrid read_field(const std::string& path);

}  // namespace atsne
