#include "atsne/point_store.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace atsne {

PointStore::PointStore(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw Error(Errc::invalid_argument, "dimensionality must be at least 1");
}

PointStore PointStore::from_rows(std::size_t dim, std::span<const float> rows) {
  PointStore store(dim);
  if (rows.size() % dim != 0) {
    throw Error(Errc::dimension_mismatch, "row data is not a multiple of the dimensionality");
  }
  const std::size_t n = rows.size() / dim;
  store.coords_.reserve(rows.size());
  for (std::size_t i = 0; i < n; ++i) store.add(rows.subspan(i * dim, dim));
  return store;
}

PointStore PointStore::with_ids(std::size_t dim, std::span<const PointId> ids,
                                std::span<const float> rows) {
  if (rows.size() != ids.size() * dim) {
    throw Error(Errc::dimension_mismatch, "row data does not match id count");
  }
  PointStore store(dim);
  std::size_t cap = 0;
  for (PointId id : ids) cap = std::max(cap, slot(id) + 1);
  store.coords_.assign(cap * dim, 0.0f);
  store.live_.assign(cap, 0);
  store.generation_.assign(cap, 0);
  store.position_.assign(cap, 0);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const std::size_t s = slot(ids[k]);
    if (store.live_[s]) throw Error(Errc::duplicate_id, "duplicate id " + std::to_string(s));
    auto src = rows.subspan(k * dim, dim);
    for (float v : src) {
      if (!std::isfinite(v)) throw Error(Errc::invalid_argument, "non-finite coordinate");
    }
    std::copy(src.begin(), src.end(), store.coords_.begin() + s * dim);
    store.live_[s] = 1;
    store.generation_[s] = 1;
    store.position_[s] = static_cast<std::uint32_t>(store.live_ids_.size());
    store.live_ids_.push_back(ids[k]);
  }
  for (std::size_t s = cap; s-- > 0;) {
    if (!store.live_[s]) store.free_.push_back(to_id(s));
  }
  return store;
}

PointId PointStore::add(std::span<const float> coords) {
  if (coords.size() != dim_) {
    throw Error(Errc::dimension_mismatch, "expected " + std::to_string(dim_) +
                                              " coordinates, got " +
                                              std::to_string(coords.size()));
  }
  for (float v : coords) {
    if (!std::isfinite(v)) throw Error(Errc::invalid_argument, "non-finite coordinate");
  }
  PointId id;
  if (!free_.empty()) {
    id = free_.back();
    free_.pop_back();
  } else {
    id = to_id(live_.size());
    live_.push_back(0);
    generation_.push_back(0);
    position_.push_back(0);
    coords_.resize(coords_.size() + dim_);
  }
  const std::size_t s = slot(id);
  std::copy(coords.begin(), coords.end(), coords_.begin() + s * dim_);
  live_[s] = 1;
  ++generation_[s];
  position_[s] = static_cast<std::uint32_t>(live_ids_.size());
  live_ids_.push_back(id);
  return id;
}

void PointStore::remove(PointId id) {
  require(id);
  const std::size_t s = slot(id);
  const std::uint32_t pos = position_[s];
  const PointId last = live_ids_.back();
  live_ids_[pos] = last;
  position_[slot(last)] = pos;
  live_ids_.pop_back();
  live_[s] = 0;
  free_.push_back(id);
}

void PointStore::require(PointId id) const {
  if (!contains(id)) throw Error(Errc::unknown_id, "unknown point id " + std::to_string(raw(id)));
}

}  // namespace atsne
