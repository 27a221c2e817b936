#include "atsne/kd_forest.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <random>

namespace atsne {
namespace {

std::mt19937_64 tree_rng(std::uint64_t seed, std::size_t tree) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tree), 0x6b64u};
  return std::mt19937_64(seq);
}

struct Branch {
  float key;
  std::uint32_t tree;
  std::int32_t node;
};

struct BranchAfter {
  bool operator()(const Branch& a, const Branch& b) const noexcept {
    if (a.key != b.key) return a.key > b.key;
    if (a.tree != b.tree) return a.tree > b.tree;
    return a.node > b.node;
  }
};

std::vector<double> dimension_variance(const PointStore& points, std::span<const PointId> ids) {
  const std::size_t d = points.dim();
  std::vector<double> mean(d, 0.0);
  std::vector<double> m2(d, 0.0);
  for (PointId id : ids) {
    auto row = points.row(id);
    for (std::size_t k = 0; k < d; ++k) mean[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& m : mean) m *= inv;
  for (PointId id : ids) {
    auto row = points.row(id);
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = row[k] - mean[k];
      m2[k] += diff * diff;
    }
  }
  for (double& v : m2) v *= inv;
  return m2;
}

}  // namespace

KdForest KdForest::build(const PointStore& points, std::size_t trees, std::size_t variance_pool,
                         std::uint64_t seed) {
  if (points.empty()) throw Error(Errc::empty_dataset, "empty dataset");
  if (trees == 0) throw Error(Errc::invalid_argument, "forest needs at least one tree");
  if (variance_pool == 0 || variance_pool > points.dim()) {
    throw Error(Errc::invalid_argument, "variance pool must lie in [1, d]");
  }
  KdForest forest(points, variance_pool, seed);
  forest.trees_.resize(trees);
  for (std::size_t t = 0; t < trees; ++t) {
    forest.build_tree(forest.trees_[t], t, points.ids());
  }
  forest.size_ = points.size();
  forest.built_size_ = points.size();
  return forest;
}

KdForest KdForest::empty(const PointStore& points, std::size_t trees, std::size_t variance_pool,
                         std::uint64_t seed) {
  if (trees == 0) throw Error(Errc::invalid_argument, "forest needs at least one tree");
  if (variance_pool == 0 || variance_pool > points.dim()) {
    throw Error(Errc::invalid_argument, "variance pool must lie in [1, d]");
  }
  KdForest forest(points, variance_pool, seed);
  forest.trees_.resize(trees);
  for (auto& tree : forest.trees_) tree.nodes.emplace_back();
  for (PointId id : points.ids()) forest.insert(id);
  forest.built_size_ = forest.size_;
  return forest;
}

void KdForest::build_tree(Tree& tree, std::size_t index, std::vector<PointId> ids) const {
  auto rng = tree_rng(seed_, index);
  tree.nodes.clear();
  tree.leaf_of.assign(points_->capacity(), -1);

  struct Pending {
    std::int32_t node;
    std::size_t begin;
    std::size_t end;
  };
  tree.nodes.emplace_back();
  std::vector<Pending> stack{{0, 0, ids.size()}};
  std::vector<std::size_t> order(points_->dim());
  while (!stack.empty()) {
    const Pending job = stack.back();
    stack.pop_back();
    std::span<PointId> subset(ids.data() + job.begin, job.end - job.begin);
    if (subset.size() <= kLeafCapacity) {
      Node& leaf = tree.nodes[static_cast<std::size_t>(job.node)];
      leaf.bucket.assign(subset.begin(), subset.end());
      for (PointId id : subset) tree.leaf_of[slot(id)] = job.node;
      continue;
    }
    const auto variance = dimension_variance(*points_, subset);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(variance_pool_),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        return variance[a] > variance[b] || (variance[a] == variance[b] && a < b);
                      });
    std::uniform_int_distribution<std::size_t> pick(0, variance_pool_ - 1);
    const std::size_t dim = order[pick(rng)];

    const std::size_t mid = subset.size() / 2;
    std::nth_element(subset.begin(), subset.begin() + static_cast<std::ptrdiff_t>(mid),
                     subset.end(), [&](PointId a, PointId b) {
                       const float va = points_->row(a)[dim];
                       const float vb = points_->row(b)[dim];
                       return va < vb || (va == vb && raw(a) < raw(b));
                     });
    const auto left = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    Node& node = tree.nodes[static_cast<std::size_t>(job.node)];
    node.dim = static_cast<std::int32_t>(dim);
    node.threshold = points_->row(subset[mid])[dim];
    node.left = left;
    node.right = left + 1;
    stack.push_back({left + 1, job.begin + mid, job.end});
    stack.push_back({left, job.begin, job.begin + mid});
  }
}

std::vector<Neighbor> KdForest::query(std::span<const float> q, std::size_t k,
                                      std::size_t leaf_budget, std::optional<PointId> exclude,
                                      std::size_t max_trees) const {
  if (q.size() != points_->dim()) {
    throw Error(Errc::dimension_mismatch, "query dimensionality " + std::to_string(q.size()) +
                                              " does not match forest " +
                                              std::to_string(points_->dim()));
  }
  if (size_ == 0) throw Error(Errc::empty_dataset, "empty dataset");
  if (k == 0 || leaf_budget == 0) {
    throw Error(Errc::invalid_argument, "k and leaf budget must be at least 1");
  }
  const std::size_t tree_limit = std::min(max_trees, trees_.size());
  const std::size_t available = size_ - ((exclude && contains(*exclude)) ? 1 : 0);
  const std::size_t want = std::min(k, available);

  TopK top(want);
  std::vector<std::uint64_t> seen((points_->capacity() + 63) / 64, 0);
  std::priority_queue<Branch, std::vector<Branch>, BranchAfter> frontier;
  std::size_t scanned = 0;

  auto done = [&] { return scanned >= leaf_budget && top.full(); };

  auto descend = [&](std::uint32_t t, std::int32_t node_index, float key) {
    const Tree& tree = trees_[t];
    const Node* node = &tree.nodes[static_cast<std::size_t>(node_index)];
    while (node->dim >= 0) {
      const float diff = q[static_cast<std::size_t>(node->dim)] - node->threshold;
      const std::int32_t near = diff <= 0.0f ? node->left : node->right;
      const std::int32_t far = diff <= 0.0f ? node->right : node->left;
      const float far_key = std::max(key, diff * diff);
      if (!top.full() || far_key <= top.worst()) frontier.push({far_key, t, far});
      node = &tree.nodes[static_cast<std::size_t>(near)];
    }
    for (PointId id : node->bucket) {
      std::uint64_t& word = seen[slot(id) / 64];
      const std::uint64_t bit = std::uint64_t{1} << (slot(id) % 64);
      if (word & bit) continue;
      word |= bit;
      if (exclude && id == *exclude) continue;
      top.offer(id, squared_distance(q, points_->row(id)));
    }
    scanned += node->bucket.size();
  };

  for (std::uint32_t t = 0; t < tree_limit && !done(); ++t) descend(t, 0, 0.0f);
  while (!done() && !frontier.empty()) {
    const Branch b = frontier.top();
    frontier.pop();
    // Every remaining branch is at least this far away.
    if (top.full() && b.key > top.worst()) break;
    descend(b.tree, b.node, b.key);
  }
  return std::move(top).take_sorted();
}

NeighborList KdForest::query_point(PointId owner, std::size_t k, std::size_t leaf_budget,
                                   std::size_t max_trees) const {
  points_->require(owner);
  NeighborList out;
  out.owner = owner;
  out.neighbors = query(points_->row(owner), k, leaf_budget, owner, max_trees);
  return out;
}

bool KdForest::contains(PointId id) const noexcept {
  if (trees_.empty()) return false;
  const auto& leaf_of = trees_.front().leaf_of;
  return slot(id) < leaf_of.size() && leaf_of[slot(id)] >= 0;
}

void KdForest::insert(PointId id) {
  points_->require(id);
  if (contains(id)) {
    throw Error(Errc::duplicate_id, "point " + std::to_string(raw(id)) + " already indexed");
  }
  auto row = points_->row(id);
  for (Tree& tree : trees_) {
    if (tree.leaf_of.size() < points_->capacity()) tree.leaf_of.resize(points_->capacity(), -1);
    std::int32_t index = 0;
    while (tree.nodes[static_cast<std::size_t>(index)].dim >= 0) {
      const Node& node = tree.nodes[static_cast<std::size_t>(index)];
      index = row[static_cast<std::size_t>(node.dim)] <= node.threshold ? node.left : node.right;
    }
    tree.nodes[static_cast<std::size_t>(index)].bucket.push_back(id);
    tree.leaf_of[slot(id)] = index;
    auto& bucket = tree.nodes[static_cast<std::size_t>(index)].bucket;
    if (bucket.size() > kLeafCapacity) split_leaf(tree, index, highest_variance_dim(bucket));
  }
  ++size_;
}

std::size_t KdForest::highest_variance_dim(std::span<const PointId> ids) const {
  const auto variance = dimension_variance(*points_, ids);
  return static_cast<std::size_t>(std::max_element(variance.begin(), variance.end()) -
                                  variance.begin());
}

void KdForest::split_leaf(Tree& tree, std::int32_t leaf, std::size_t dim) {
  std::vector<PointId> ids = std::move(tree.nodes[static_cast<std::size_t>(leaf)].bucket);
  const std::size_t mid = ids.size() / 2;
  std::nth_element(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(mid), ids.end(),
                   [&](PointId a, PointId b) {
                     const float va = points_->row(a)[dim];
                     const float vb = points_->row(b)[dim];
                     return va < vb || (va == vb && raw(a) < raw(b));
                   });
  const auto left = static_cast<std::int32_t>(tree.nodes.size());
  tree.nodes.emplace_back();
  tree.nodes.emplace_back();
  Node& node = tree.nodes[static_cast<std::size_t>(leaf)];
  node.dim = static_cast<std::int32_t>(dim);
  node.threshold = points_->row(ids[mid])[dim];
  node.left = left;
  node.right = left + 1;
  node.bucket.clear();
  auto& lb = tree.nodes[static_cast<std::size_t>(left)].bucket;
  auto& rb = tree.nodes[static_cast<std::size_t>(left + 1)].bucket;
  lb.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(mid));
  rb.assign(ids.begin() + static_cast<std::ptrdiff_t>(mid), ids.end());
  for (PointId id : lb) tree.leaf_of[slot(id)] = left;
  for (PointId id : rb) tree.leaf_of[slot(id)] = left + 1;
}

void KdForest::remove(PointId id) {
  if (!contains(id)) {
    throw Error(Errc::unknown_id, "point " + std::to_string(raw(id)) + " is not indexed");
  }
  for (Tree& tree : trees_) {
    auto& leaf = tree.leaf_of[slot(id)];
    auto& bucket = tree.nodes[static_cast<std::size_t>(leaf)].bucket;
    bucket.erase(std::find(bucket.begin(), bucket.end(), id));
    leaf = -1;
  }
  --size_;
}

bool KdForest::needs_rebuild() const noexcept {
  const double base = static_cast<double>(std::max<std::size_t>(built_size_, 32));
  const double n = static_cast<double>(size_);
  return n > 1.5 * base || (built_size_ >= 32 && n < 0.5 * base);
}

void KdForest::for_each_leaf(std::size_t tree,
                             const std::function<void(std::span<const PointId>)>& visit) const {
  for (const Node& node : trees_.at(tree).nodes) {
    if (node.dim < 0) visit(node.bucket);
  }
}

std::optional<std::size_t> KdForest::root_split_dimension(std::size_t tree) const {
  const Node& root = trees_.at(tree).nodes.front();
  if (root.dim < 0) return std::nullopt;
  return static_cast<std::size_t>(root.dim);
}

std::optional<std::string> KdForest::validate() const {
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    const Tree& tree = trees_[t];
    std::vector<int> seen(points_->capacity(), 0);
    // Walk with the admissible coordinate interval of each node.
    struct Frame {
      std::int32_t node;
      std::vector<std::pair<std::int32_t, std::pair<float, bool>>> bounds;  // dim, (thr, is_upper)
    };
    std::vector<Frame> stack{{0, {}}};
    while (!stack.empty()) {
      Frame f = std::move(stack.back());
      stack.pop_back();
      const Node& node = tree.nodes[static_cast<std::size_t>(f.node)];
      if (node.dim >= 0) {
        if (static_cast<std::size_t>(node.dim) >= points_->dim()) {
          return "tree " + std::to_string(t) + ": split dimension out of range";
        }
        Frame l{node.left, f.bounds};
        l.bounds.push_back({node.dim, {node.threshold, true}});
        Frame r{node.right, std::move(f.bounds)};
        r.bounds.push_back({node.dim, {node.threshold, false}});
        stack.push_back(std::move(l));
        stack.push_back(std::move(r));
        continue;
      }
      for (PointId id : node.bucket) {
        if (!points_->contains(id)) {
          return "tree " + std::to_string(t) + ": dead id " + std::to_string(raw(id));
        }
        ++seen[slot(id)];
        auto row = points_->row(id);
        for (const auto& [dim, bound] : f.bounds) {
          const float v = row[static_cast<std::size_t>(dim)];
          if (bound.second ? v > bound.first : v < bound.first) {
            return "tree " + std::to_string(t) + ": id " + std::to_string(raw(id)) +
                   " on the wrong side of a split";
          }
        }
      }
    }
    for (PointId id : points_->ids()) {
      if (seen[slot(id)] != 1) {
        return "tree " + std::to_string(t) + ": id " + std::to_string(raw(id)) + " appears " +
               std::to_string(seen[slot(id)]) + " times";
      }
    }
  }
  return std::nullopt;
}

}  // namespace atsne
