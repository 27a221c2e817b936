#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atsne/types.hpp"

namespace atsne {

/// Region quadtree over 2-D positions for Barnes-Hut summation. Leaves hold
/// single points, or several coincident points once the depth limit is hit.
class QuadTree {
 public:
  static constexpr std::size_t kMaxDepth = 48;

  struct Cell {
    Vec2 center;  // geometric center of the square
    double half = 0.0;
    Vec2 center_of_mass;
    // Second moments about the center of mass, summed over the cell's points.
    double mxx = 0.0;
    double mxy = 0.0;
    double myy = 0.0;
    std::uint32_t count = 0;
    std::uint32_t begin = 0;  // range into the point permutation
    std::uint32_t end = 0;
    std::int32_t child[4] = {-1, -1, -1, -1};

    bool leaf() const noexcept {
      return child[0] < 0 && child[1] < 0 && child[2] < 0 && child[3] < 0;
    }
    double side() const noexcept { return 2.0 * half; }
  };

  explicit QuadTree(std::span<const Vec2> positions);

  /// Adds to `force` the sum over other points j of w_ij^2 (y_i - y_j) and to
  /// `z` the sum of w_ij, where w_ij = 1 / (1 + |y_i - y_j|^2). A cell counts as
  /// one body at its center of mass when side / distance < theta, with a
  /// quadrupole correction from the cell's second moments.
  void accumulate_repulsion(std::size_t index, double theta, Vec2& force, double& z) const;

  const std::vector<Cell>& cells() const noexcept { return cells_; }
  std::span<const std::uint32_t> points_of(const Cell& cell) const noexcept {
    return {order_.data() + cell.begin, cell.end - cell.begin};
  }

  /// Root count equals N and every cell's mass and center of mass match its
  /// children.
  std::optional<std::string> validate() const;

 private:
  std::span<const Vec2> positions_;
  std::vector<std::uint32_t> order_;
  std::vector<Cell> cells_;
};

}  // namespace atsne
