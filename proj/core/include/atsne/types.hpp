#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace atsne {

/// Stable handle of a point. Handles are row slots of the PointStore and are
/// recycled after deletion; pair them with PointStore::generation() when a
/// reference must survive concurrent deletes.
enum class PointId : std::uint32_t {};

constexpr std::uint32_t raw(PointId id) noexcept { return static_cast<std::uint32_t>(id); }
constexpr std::size_t slot(PointId id) noexcept { return static_cast<std::size_t>(id); }
constexpr PointId to_id(std::size_t slot) noexcept {
  return static_cast<PointId>(static_cast<std::uint32_t>(slot));
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) noexcept { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) noexcept { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 v) noexcept { return {s * v.x, s * v.y}; }
  constexpr Vec2& operator+=(Vec2 o) noexcept {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(Vec2 o) noexcept {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  friend constexpr bool operator==(Vec2, Vec2) = default;

  constexpr double squared_norm() const noexcept { return x * x + y * y; }
  bool finite() const noexcept { return std::isfinite(x) && std::isfinite(y); }
};

struct BoundingBox {
  Vec2 min{0.0, 0.0};
  Vec2 max{0.0, 0.0};

  double width() const noexcept { return max.x - min.x; }
  double height() const noexcept { return max.y - min.y; }
  bool contains(Vec2 p) const noexcept {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y;
  }
};

enum class Errc {
  invalid_argument,
  empty_dataset,
  dimension_mismatch,
  unknown_id,
  duplicate_id,
  divergence,
  io,
};

/// Error raised for every rejected operation in the library.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Thrown by the optimizer when a gradient component is not finite.
class DivergenceError : public Error {
 public:
  DivergenceError(PointId id, std::size_t iteration)
      : Error(Errc::divergence, "divergence at iteration " + std::to_string(iteration) +
                                    " (point " + std::to_string(raw(id)) + ")"),
        id_(id),
        iteration_(iteration) {}
  PointId id() const noexcept { return id_; }
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  PointId id_;
  std::size_t iteration_;
};

}  // namespace atsne
