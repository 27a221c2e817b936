#include "atsne/quad_tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace atsne {

QuadTree::QuadTree(std::span<const Vec2> positions) : positions_(positions) {
  const std::size_t n = positions.size();
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);
  Cell root;
  if (n > 0) {
    Vec2 lo = positions[0];
    Vec2 hi = positions[0];
    for (Vec2 p : positions) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    root.center = 0.5 * (lo + hi);
    root.half = 0.5 * std::max(hi.x - lo.x, hi.y - lo.y) * (1.0 + 1e-9) + 1e-12;
  }
  root.begin = 0;
  root.end = static_cast<std::uint32_t>(n);
  cells_.reserve(2 * n + 1);
  cells_.push_back(root);

  struct Job {
    std::int32_t cell;
    std::size_t depth;
  };
  std::vector<Job> stack{{0, 0}};
  while (!stack.empty()) {
    const Job job = stack.back();
    stack.pop_back();
    Cell& cell = cells_[static_cast<std::size_t>(job.cell)];
    cell.count = cell.end - cell.begin;
    Vec2 sum{};
    for (std::uint32_t k = cell.begin; k < cell.end; ++k) sum += positions_[order_[k]];
    if (cell.count > 0) cell.center_of_mass = (1.0 / cell.count) * sum;
    if (cell.count > 1) {
      for (std::uint32_t k = cell.begin; k < cell.end; ++k) {
        const Vec2 d = positions_[order_[k]] - cell.center_of_mass;
        cell.mxx += d.x * d.x;
        cell.mxy += d.x * d.y;
        cell.myy += d.y * d.y;
      }
    }
    if (cell.count <= 1 || job.depth >= kMaxDepth) continue;

    // Partition [begin, end) into quadrants: x split, then y split per half.
    const Vec2 c = cell.center;
    auto first = order_.begin() + cell.begin;
    auto last = order_.begin() + cell.end;
    auto mid_x = std::partition(first, last, [&](std::uint32_t i) { return positions_[i].x < c.x; });
    auto mid_lo = std::partition(first, mid_x, [&](std::uint32_t i) { return positions_[i].y < c.y; });
    auto mid_hi = std::partition(mid_x, last, [&](std::uint32_t i) { return positions_[i].y < c.y; });
    const std::uint32_t bounds[5] = {
        cell.begin, static_cast<std::uint32_t>(mid_lo - order_.begin()),
        static_cast<std::uint32_t>(mid_x - order_.begin()),
        static_cast<std::uint32_t>(mid_hi - order_.begin()), cell.end};
    const double q = 0.5 * cell.half;
    const Vec2 offsets[4] = {{-q, -q}, {-q, q}, {q, -q}, {q, q}};
    const Vec2 center = cell.center;
    for (int k = 0; k < 4; ++k) {
      if (bounds[k] == bounds[k + 1]) continue;
      Cell child;
      child.center = center + offsets[k];
      child.half = q;
      child.begin = bounds[k];
      child.end = bounds[k + 1];
      const auto index = static_cast<std::int32_t>(cells_.size());
      cells_.push_back(child);
      cells_[static_cast<std::size_t>(job.cell)].child[k] = index;
      stack.push_back({index, job.depth + 1});
    }
  }
}

void QuadTree::accumulate_repulsion(std::size_t index, double theta, Vec2& force,
                                    double& z) const {
  if (cells_.empty() || cells_[0].count == 0) return;
  const Vec2 yi = positions_[index];
  const double theta2 = theta * theta;
  std::int32_t stack[4 * kMaxDepth + 8];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Cell& cell = cells_[static_cast<std::size_t>(stack[--top])];
    if (cell.leaf()) {
      for (std::uint32_t k = cell.begin; k < cell.end; ++k) {
        const std::uint32_t j = order_[k];
        if (j == index) continue;
        const Vec2 d = yi - positions_[j];
        const double w = 1.0 / (1.0 + d.squared_norm());
        z += w;
        force += (w * w) * d;
      }
      continue;
    }
    const Vec2 d = yi - cell.center_of_mass;
    const double dist2 = d.squared_norm();
    const double side = cell.side();
    if (side * side < theta2 * dist2) {
      const double w = 1.0 / (1.0 + dist2);
      const double w2 = w * w;
      const double mass = static_cast<double>(cell.count);
      const Vec2 md{cell.mxx * d.x + cell.mxy * d.y, cell.mxy * d.x + cell.myy * d.y};
      const double dmd = d.x * md.x + d.y * md.y;
      const double trace = cell.mxx + cell.myy;
      z += mass * w + 4.0 * w2 * w * dmd - w2 * trace;
      force += (mass * w2 + 12.0 * w2 * w2 * dmd - 2.0 * w2 * w * trace) * d;
      force += (-4.0 * w2 * w) * md;
      continue;
    }
    for (std::int32_t c : cell.child) {
      if (c >= 0) stack[top++] = c;
    }
  }
}

std::optional<std::string> QuadTree::validate() const {
  if (cells_.empty()) return "no root";
  if (cells_[0].count != positions_.size()) return "root count differs from N";
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    const Cell& cell = cells_[c];
    if (cell.leaf()) continue;
    std::uint32_t mass = 0;
    Vec2 moment{};
    for (std::int32_t k : cell.child) {
      if (k < 0) continue;
      const Cell& child = cells_[static_cast<std::size_t>(k)];
      mass += child.count;
      moment += static_cast<double>(child.count) * child.center_of_mass;
    }
    if (mass != cell.count) return "cell " + std::to_string(c) + ": mass differs from children";
    const Vec2 com = (1.0 / mass) * moment;
    const double tol = 1e-9 * (1.0 + std::abs(cell.center_of_mass.x) + std::abs(cell.center_of_mass.y));
    if (std::abs(com.x - cell.center_of_mass.x) > tol || std::abs(com.y - cell.center_of_mass.y) > tol) {
      return "cell " + std::to_string(c) + ": center of mass differs from children";
    }
  }
  return std::nullopt;
}

}  // namespace atsne
