#include "atsne/synthetic.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace atsne {

Dataset make_clusters(const ClusterSpec& spec) {
  if (spec.dim == 0 || spec.clusters == 0) {
    throw Error(Errc::invalid_argument, "clusters need a positive dimension and count");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> centers(spec.clusters * spec.dim);
  for (double& c : centers) c = spec.separation * normal(rng);

  Dataset data;
  data.dim = spec.dim;
  data.n = spec.n + spec.outliers;
  data.values.reserve(data.n * data.dim);
  data.labels.reserve(data.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t c = i % spec.clusters;
    for (std::size_t d = 0; d < spec.dim; ++d) {
      data.values.push_back(static_cast<float>(centers[c * spec.dim + d] + spec.spread * normal(rng)));
    }
    data.labels.push_back(std::to_string(c));
  }
  if (spec.outliers > 0) {
    std::vector<double> lo(spec.dim, 0.0), hi(spec.dim, 0.0);
    for (std::size_t d = 0; d < spec.dim; ++d) {
      lo[d] = hi[d] = centers[d];
      for (std::size_t c = 1; c < spec.clusters; ++c) {
        lo[d] = std::min(lo[d], centers[c * spec.dim + d]);
        hi[d] = std::max(hi[d], centers[c * spec.dim + d]);
      }
      const double pad = 4.0 * spec.spread;
      lo[d] -= pad;
      hi[d] += pad;
    }
    for (std::size_t i = 0; i < spec.outliers; ++i) {
      for (std::size_t d = 0; d < spec.dim; ++d) {
        std::uniform_real_distribution<double> u(lo[d], hi[d]);
        data.values.push_back(static_cast<float>(u(rng)));
      }
      data.labels.emplace_back("outlier");
    }
  }
  return data;
}

}  // namespace atsne
