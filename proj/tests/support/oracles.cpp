#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace atsne::oracle {

double squared_distance_d(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

Dense dense_joint(const SimilarityStore& store, std::span<const PointId> ids) {
  Dense p{ids.size(), std::vector<double>(ids.size() * ids.size(), 0.0)};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (i != j) p(i, j) = store.joint(ids[i], ids[j]);
    }
  }
  return p;
}

namespace {

std::vector<double> conditional(std::span<const double> d, double sigma) {
  std::vector<double> p(d.size());
  const double dmin = *std::min_element(d.begin(), d.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    p[i] = std::exp(-(d[i] - dmin) / (2.0 * sigma * sigma));
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace

double perplexity_at(std::span<const double> sq_distances, double sigma) {
  const auto p = conditional(sq_distances, sigma);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return std::exp2(h);
}

Dense reference_joint(const Dataset& data, double perplexity) {
  const std::size_t n = data.n;
  const auto k = static_cast<std::size_t>(std::floor(3.0 * perplexity));
  Dense cond{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) all.emplace_back(squared_distance_d(data.row(i), data.row(j)), j);
    }
    std::sort(all.begin(), all.end());
    all.resize(std::min(k, all.size()));
    std::vector<double> d;
    for (const auto& e : all) d.push_back(e.first);
    // Perplexity grows with sigma; bisect in log space.
    double lo = 1e-10;
    double hi = 1e10;
    for (int it = 0; it < 400; ++it) {
      const double mid = std::sqrt(lo * hi);
      if (perplexity_at(d, mid) < perplexity) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const auto p = conditional(d, std::sqrt(lo * hi));
    for (std::size_t m = 0; m < all.size(); ++m) cond(i, all[m].second) = p[m];
  }
  Dense joint{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      joint(i, j) = (cond(i, j) + cond(j, i)) / (2.0 * static_cast<double>(n));
    }
  }
  return joint;
}

double dense_kl(const Dense& p, std::span<const Vec2> y) {
  const std::size_t n = y.size();
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) z += 1.0 / (1.0 + (y[i] - y[j]).squared_norm());
    }
  }
  double c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || p(i, j) <= 0.0) continue;
      const double q = 1.0 / (1.0 + (y[i] - y[j]).squared_norm()) / z;
      c += p(i, j) * std::log(p(i, j) / q);
    }
  }
  return c;
}

std::vector<Vec2> dense_gradient(const Dense& p, std::span<const Vec2> y) {
  const std::size_t n = y.size();
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) z += 1.0 / (1.0 + (y[i] - y[j]).squared_norm());
    }
  }
  std::vector<Vec2> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const Vec2 d = y[i] - y[j];
      const double w = 1.0 / (1.0 + d.squared_norm());
      g[i] += (4.0 * (p(i, j) - w / z) * w) * d;
    }
  }
  return g;
}

std::vector<Vec2> numeric_gradient(const Dense& p, std::span<const Vec2> y, double h) {
  std::vector<Vec2> pos(y.begin(), y.end());
  std::vector<Vec2> g(y.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (int axis = 0; axis < 2; ++axis) {
      double& c = axis == 0 ? pos[i].x : pos[i].y;
      const double orig = c;
      c = orig + h;
      const double up = dense_kl(p, pos);
      c = orig - h;
      const double down = dense_kl(p, pos);
      c = orig;
      (axis == 0 ? g[i].x : g[i].y) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

DenseRepulsion dense_repulsion(std::span<const Vec2> y) {
  DenseRepulsion r{std::vector<Vec2>(y.size()), 0.0};
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (i == j) continue;
      const Vec2 d = y[i] - y[j];
      const double w = 1.0 / (1.0 + d.squared_norm());
      r.forces[i] += (w * w) * d;
      r.z += w;
    }
  }
  return r;
}

double silhouette(std::span<const Vec2> y, std::span<const std::string> labels) {
  std::map<std::string, std::size_t> index;
  std::vector<std::size_t> label(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    label[i] = index.emplace(labels[i], index.size()).first->second;
  }
  const std::size_t c = index.size();
  std::vector<std::size_t> count(c, 0);
  for (std::size_t l : label) ++count[l];
  double total = 0.0;
  std::vector<double> sum(c);
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (j != i) sum[label[j]] += std::sqrt((y[i] - y[j]).squared_norm());
    }
    if (count[label[i]] <= 1) continue;
    const double a = sum[label[i]] / static_cast<double>(count[label[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < c; ++l) {
      if (l != label[i] && count[l] > 0) b = std::min(b, sum[l] / static_cast<double>(count[l]));
    }
    if (!std::isfinite(b)) continue;
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(y.size());
}

FieldGrid dense_density(std::span<const Vec2> y, double h, const GridSpec& grid) {
  FieldGrid f{grid, std::vector<double>(grid.width * grid.height, 0.0)};
  for (std::size_t py = 0; py < grid.height; ++py) {
    for (std::size_t px = 0; px < grid.width; ++px) {
      const Vec2 c = grid.pixel_center(px, py);
      double s = 0.0;
      for (const Vec2& p : y) s += std::exp(-(c - p).squared_norm() / (2.0 * h * h));
      f.values[py * grid.width + px] = s / static_cast<double>(y.size());
    }
  }
  return f;
}

std::vector<PointId> knn_ids(const PointStore& points, PointId owner, std::size_t k) {
  std::vector<std::pair<double, std::uint32_t>> all;
  for (PointId j : points.ids()) {
    if (j != owner) all.emplace_back(squared_distance_d(points.row(owner), points.row(j)), raw(j));
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min(k, all.size()));
  std::vector<PointId> out;
  for (const auto& e : all) out.push_back(static_cast<PointId>(e.second));
  std::sort(out.begin(), out.end(), [](PointId a, PointId b) { return raw(a) < raw(b); });
  return out;
}

void NeighborCensus::seed_rows(const PointStore& points) {
  rows_.clear();
  for (PointId i : points.ids()) {
    Row row;
    for (PointId j : points.ids()) {
      if (j != i) row.entries.emplace_back(squared_distance_d(points.row(i), points.row(j)), raw(j));
    }
    std::sort(row.entries.begin(), row.entries.end());
    row.entries.resize(std::min(k_, row.entries.size()));
    rows_[raw(i)] = std::move(row);
  }
}

void NeighborCensus::insert(const PointStore& points, PointId id) {
  Row fresh;
  for (auto& [owner, row] : rows_) {
    const PointId o = static_cast<PointId>(owner);
    const double d = squared_distance_d(points.row(id), points.row(o));
    fresh.entries.emplace_back(d, owner);
    const std::pair<double, std::uint32_t> candidate{d, raw(id)};
    if (row.entries.size() + row.missing < k_) {
      row.entries.insert(std::lower_bound(row.entries.begin(), row.entries.end(), candidate),
                         candidate);
    } else if (!row.entries.empty() && d < row.entries.back().first) {
      row.entries.pop_back();
      row.entries.insert(std::lower_bound(row.entries.begin(), row.entries.end(), candidate),
                         candidate);
    }
  }
  std::sort(fresh.entries.begin(), fresh.entries.end());
  fresh.entries.resize(std::min(k_, fresh.entries.size()));
  rows_[raw(id)] = std::move(fresh);
}

void NeighborCensus::remove(PointId id) {
  rows_.erase(raw(id));
  for (auto& [owner, row] : rows_) {
    auto it = std::find_if(row.entries.begin(), row.entries.end(),
                           [&](const auto& e) { return e.second == raw(id); });
    if (it != row.entries.end()) {
      row.entries.erase(it);
      ++row.missing;
    }
  }
}

std::vector<PointId> NeighborCensus::neighbors(PointId owner) const {
  std::vector<PointId> out;
  for (const auto& e : rows_.at(raw(owner)).entries) out.push_back(static_cast<PointId>(e.second));
  std::sort(out.begin(), out.end(), [](PointId a, PointId b) { return raw(a) < raw(b); });
  return out;
}

}  // namespace atsne::oracle
