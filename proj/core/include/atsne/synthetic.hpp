#pragma once

#include <cstddef>
#include <cstdint>

#include "atsne/dataset_io.hpp"

namespace atsne {

/// Labeled Gaussian clusters: centers drawn from N(0, separation^2 I), points
/// from N(center, spread^2 I). Outliers are uniform over the centers'
/// bounding box and labeled "outlier".
struct ClusterSpec {
  std::size_t n = 1000;
  std::size_t dim = 16;
  std::size_t clusters = 10;
  double separation = 4.0;
  double spread = 1.0;
  std::size_t outliers = 0;
  std::uint64_t seed = 1;
};

/// Points are assigned to clusters round-robin, so cluster sizes differ by at
/// most one. Labels are the cluster indices as text.
Dataset make_clusters(const ClusterSpec& spec);

}  // namespace atsne
