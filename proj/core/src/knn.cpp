#include "atsne/knn.hpp"

#include <string>

namespace atsne {

std::vector<Neighbor> brute_force_query(const PointStore& points, std::span<const float> query,
                                        std::size_t k, std::optional<PointId> exclude) {
  if (query.size() != points.dim()) {
    throw Error(Errc::dimension_mismatch, "query dimensionality " + std::to_string(query.size()) +
                                              " does not match store " +
                                              std::to_string(points.dim()));
  }
  TopK top(k);
  for (PointId id : points.ids()) {
    if (exclude && id == *exclude) continue;
    top.offer(id, squared_distance(query, points.row(id)));
  }
  return std::move(top).take_sorted();
}

NeighborList brute_force_knn(const PointStore& points, PointId owner, std::size_t k) {
  points.require(owner);
  const std::size_t others = points.size() - 1;
  NeighborList out;
  out.owner = owner;
  out.exact = true;
  out.neighbors = brute_force_query(points, points.row(owner), std::min(k, others), owner);
  return out;
}

double measure_recall(std::span<const NeighborList> approx, std::span<const NeighborList> exact) {
  if (approx.size() != exact.size()) {
    throw Error(Errc::invalid_argument, "recall: neighbor list sets differ in size");
  }
  if (approx.empty()) return 1.0;
  double total = 0.0;
  std::vector<std::uint32_t> a_ids;
  std::vector<std::uint32_t> e_ids;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    if (approx[i].owner != exact[i].owner) {
      throw Error(Errc::invalid_argument, "recall: owner mismatch at position " +
                                              std::to_string(i));
    }
    if (exact[i].neighbors.empty()) {
      total += 1.0;
      continue;
    }
    a_ids.clear();
    e_ids.clear();
    for (const auto& n : approx[i].neighbors) a_ids.push_back(raw(n.id));
    for (const auto& n : exact[i].neighbors) e_ids.push_back(raw(n.id));
    std::sort(a_ids.begin(), a_ids.end());
    std::sort(e_ids.begin(), e_ids.end());
    std::size_t shared = 0;
    auto a = a_ids.begin();
    auto e = e_ids.begin();
    while (a != a_ids.end() && e != e_ids.end()) {
      if (*a < *e) {
        ++a;
      } else if (*e < *a) {
        ++e;
      } else {
        ++shared;
        ++a;
        ++e;
      }
    }
    total += static_cast<double>(shared) / static_cast<double>(e_ids.size());
  }
  return total / static_cast<double>(approx.size());
}

}  // namespace atsne
