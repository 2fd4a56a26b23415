#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "vbfi/matrix.hpp"

namespace vbfi {

// Relative slack used when comparing split gains. Two candidates whose gains
// differ by less than kGainTieTolerance * (root SSE) are treated as equal and
// the deterministic tie-break decides.
inline constexpr double kGainTieTolerance = 1e-12;

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf_index = 0;  // 1-based, in-order; leaves only
  double value = 0.0;
  std::size_t count = 0;

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

// One accepted split of the best-first growth, in the order it was made.
struct SplitStep {
  std::size_t leaf_order = 0;  // creation order of the leaf that was split (root = 0)
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

class RegressionTree {
 public:
  RegressionTree() : nodes_(1) {}

  static RegressionTree constant(double value, std::size_t count = 0) {
    RegressionTree t;
    t.nodes_[0].value = value;
    t.nodes_[0].leaf_index = 1;
    t.nodes_[0].count = count;
    t.num_leaves_ = 1;
    return t;
  }

  std::size_t num_leaves() const noexcept { return num_leaves_; }
  double training_sse() const noexcept { return training_sse_; }
  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }

  // Routing rule: go left iff x[feature] <= threshold.
  const TreeNode& route(std::span<const double> x) const {
    const TreeNode* n = &nodes_[0];
    while (!n->is_leaf()) {
      n = &nodes_[static_cast<std::size_t>(x[static_cast<std::size_t>(n->feature)] <= n->threshold
                                               ? n->left
                                               : n->right)];
    }
    return *n;
  }

  double predict(std::span<const double> x) const { return route(x).value; }
  int assign_leaf(std::span<const double> x) const { return route(x).leaf_index; }

  // Leaf values indexed by leaf_index - 1.
  std::vector<double> leaf_values() const {
    std::vector<double> out(num_leaves_);
    for (const auto& n : nodes_) {
      if (n.is_leaf()) out[static_cast<std::size_t>(n.leaf_index - 1)] = n.value;
    }
    return out;
  }

  double leaf_value(int leaf_index) const {
    for (const auto& n : nodes_) {
      if (n.is_leaf() && n.leaf_index == leaf_index) return n.value;
    }
    throw std::out_of_range("no leaf with index " + std::to_string(leaf_index));
  }

  // Largest feature index read by a split, or -1 for a single leaf.
  int max_feature() const noexcept {
    int m = -1;
    for (const auto& n : nodes_) m = std::max(m, n.feature);
    return m;
  }

  bool same_structure(const RegressionTree& o) const { return nodes_ == o.nodes_; }

  nlohmann::json to_json() const { return node_json(0); }

  static RegressionTree from_json(const nlohmann::json& j) {
    RegressionTree t;
    t.nodes_.clear();
    t.parse_node(j);
    t.num_leaves_ = 0;
    for (const auto& n : t.nodes_) t.num_leaves_ += n.is_leaf() ? 1 : 0;
    std::vector<bool> seen(t.num_leaves_, false);
    for (const auto& n : t.nodes_) {
      if (!n.is_leaf()) continue;
      if (n.leaf_index < 1 || static_cast<std::size_t>(n.leaf_index) > t.num_leaves_ ||
          seen[static_cast<std::size_t>(n.leaf_index - 1)]) {
        throw std::invalid_argument("tree leaf indices must be a permutation of 1..L");
      }
      seen[static_cast<std::size_t>(n.leaf_index - 1)] = true;
    }
    return t;
  }

 private:
  friend class TreeBuilder;

  nlohmann::json node_json(std::size_t i) const {
    const TreeNode& n = nodes_[i];
    if (n.is_leaf()) return {{"leaf", {{"index", n.leaf_index}, {"value", n.value}}}};
    return {{"split",
             {{"feature", n.feature},
              {"threshold", n.threshold},
              {"left", node_json(static_cast<std::size_t>(n.left))},
              {"right", node_json(static_cast<std::size_t>(n.right))}}}};
  }

  int parse_node(const nlohmann::json& j) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (j.contains("leaf")) {
      const auto& l = j.at("leaf");
      nodes_[static_cast<std::size_t>(id)].leaf_index = l.at("index").get<int>();
      nodes_[static_cast<std::size_t>(id)].value = l.at("value").get<double>();
      return id;
    }
    const auto& s = j.at("split");
    const int feature = s.at("feature").get<int>();
    if (feature < 0) throw std::invalid_argument("negative split feature");
    const double threshold = s.at("threshold").get<double>();
    const int left = parse_node(s.at("left"));
    const int right = parse_node(s.at("right"));
    auto& n = nodes_[static_cast<std::size_t>(id)];
    n.feature = feature;
    n.threshold = threshold;
    n.left = left;
    n.right = right;
    return id;
  }

  std::vector<TreeNode> nodes_;
  std::size_t num_leaves_ = 1;
  double training_sse_ = 0.0;
};

// Row indices of each column sorted by (value, row). Computing this once per
// feature block lets every boosting round reuse it.
class SortedColumns {
 public:
  SortedColumns() = default;
  explicit SortedColumns(const MatrixView& x) : order_(x.cols()) {
    for (std::size_t f = 0; f < x.cols(); ++f) {
      auto& o = order_[f];
      o.resize(x.rows());
      std::iota(o.begin(), o.end(), std::uint32_t{0});
      std::stable_sort(o.begin(), o.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return x(a, f) < x(b, f); });
    }
  }

  std::size_t cols() const noexcept { return order_.size(); }
  const std::vector<std::uint32_t>& operator[](std::size_t f) const { return order_[f]; }

 private:
  std::vector<std::vector<std::uint32_t>> order_;
};

namespace detail {

// Sum that does not depend on the order of the inputs.
inline double order_free_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// Midpoint of two consecutive distinct sorted values that still separates them.
inline double split_threshold(double lo, double hi) {
  double t = lo + (hi - lo) / 2.0;
  if (!(t >= lo && t < hi)) t = lo;
  return t;
}

}  // namespace detail

class TreeBuilder {
 public:
  TreeBuilder(const MatrixView& x, std::span<const double> r, std::size_t max_leaves,
              std::size_t min_leaf, const SortedColumns* presorted)
      : x_(x), r_(r), max_leaves_(max_leaves), min_leaf_(min_leaf) {
    if (x.rows() == 0) throw std::invalid_argument("fit_tree: no training rows");
    if (r.size() != x.rows()) throw std::invalid_argument("fit_tree: target length mismatch");
    if (max_leaves < 1) throw std::invalid_argument("fit_tree: leaf budget must be >= 1");
    if (min_leaf < 1) throw std::invalid_argument("fit_tree: min_leaf must be >= 1");
    if (presorted == nullptr) {
      owned_sort_ = SortedColumns(x);
      presorted = &owned_sort_;
    } else if (presorted->cols() != x.cols()) {
      throw std::invalid_argument("fit_tree: presorted columns do not match input");
    }
    sorted_ = presorted;
    leaf_of_.assign(x.rows(), 0);
  }

  RegressionTree build(std::vector<SplitStep>* trace) {
    std::vector<std::uint32_t> all(x_.rows());
    std::iota(all.begin(), all.end(), std::uint32_t{0});
    open_.push_back(make_leaf(0, std::move(all)));
    tolerance_ = kGainTieTolerance * open_[0].sse;

    RegressionTree tree;
    tree.nodes_.assign(1, TreeNode{});
    std::size_t leaves = 1;
    while (leaves < max_leaves_) {
      std::size_t pick = open_.size();
      for (std::size_t i = 0; i < open_.size(); ++i) {
        const auto& o = open_[i];
        if (o.closed || o.best_feature < 0 || !(o.best_gain > tolerance_)) continue;
        if (pick == open_.size() || o.best_gain > open_[pick].best_gain + tolerance_) pick = i;
      }
      if (pick == open_.size()) break;

      OpenLeaf& parent = open_[pick];
      parent.closed = true;
      const auto f = static_cast<std::size_t>(parent.best_feature);
      std::vector<std::uint32_t> left, right;
      for (std::uint32_t i : parent.members) {
        (x_(i, f) <= parent.best_threshold ? left : right).push_back(i);
      }
      if (trace) trace->push_back({pick, parent.best_feature, parent.best_threshold, parent.best_gain});

      const int node = parent.node;
      const int feature = parent.best_feature;
      const double threshold = parent.best_threshold;
      const int left_node = static_cast<int>(tree.nodes_.size());
      tree.nodes_.emplace_back();
      tree.nodes_.emplace_back();
      auto& n = tree.nodes_[static_cast<std::size_t>(node)];
      n.feature = feature;
      n.threshold = threshold;
      n.left = left_node;
      n.right = left_node + 1;
      // `parent` may dangle once open_ grows.
      open_.push_back(make_leaf(left_node, std::move(left)));
      open_.push_back(make_leaf(left_node + 1, std::move(right)));
      ++leaves;
    }

    double sse = 0.0;
    for (const auto& o : open_) {
      if (o.closed) continue;
      auto& n = tree.nodes_[static_cast<std::size_t>(o.node)];
      n.value = o.mean;
      n.count = o.members.size();
      std::vector<double> sq;
      sq.reserve(o.members.size());
      for (std::uint32_t i : o.members) sq.push_back((r_[i] - o.mean) * (r_[i] - o.mean));
      sse += detail::order_free_sum(sq);
    }
    int next_index = 1;
    number_leaves(tree, 0, next_index);
    tree.num_leaves_ = leaves;
    tree.training_sse_ = sse;
    return tree;
  }

 private:
  struct OpenLeaf {
    int node = 0;
    std::vector<std::uint32_t> members;  // ascending row order
    double mean = 0.0;
    double sse = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gain = 0.0;
    bool closed = false;
  };

  static void number_leaves(RegressionTree& t, int id, int& next) {
    auto& n = t.nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      n.leaf_index = next++;
      return;
    }
    const int l = n.left, r = n.right;
    number_leaves(t, l, next);
    number_leaves(t, r, next);
  }

  OpenLeaf make_leaf(int node, std::vector<std::uint32_t> members) {
    OpenLeaf leaf;
    leaf.node = node;
    leaf.members = std::move(members);
    const double n = static_cast<double>(leaf.members.size());
    std::vector<double> vals;
    vals.reserve(leaf.members.size());
    for (std::uint32_t i : leaf.members) vals.push_back(r_[i]);
    leaf.mean = detail::order_free_sum(vals) / n;
    for (auto& v : vals) v = (v - leaf.mean) * (v - leaf.mean);
    leaf.sse = detail::order_free_sum(vals);
    if (leaf.members.size() >= 2 * min_leaf_) find_best_split(leaf);
    return leaf;
  }

  // Scans every feature in ascending order and every threshold in ascending
  // order; a candidate replaces the incumbent only if it is better by more
  // than the tie tolerance, which yields the lowest-feature/lowest-threshold
  // preference among equal gains.
  void find_best_split(OpenLeaf& leaf) {
    const std::uint32_t tag = ++tag_counter_;
    for (std::uint32_t i : leaf.members) leaf_of_[i] = tag;
    const std::size_t n = leaf.members.size();
    const double nd = static_cast<double>(n);

    double total = 0.0;
    for (std::uint32_t i : leaf.members) total += r_[i] - leaf.mean;
    const double parent_term = total * total / nd;
    // Gains are evaluated against the root tolerance once the root exists.
    const double tol = open_.empty() ? kGainTieTolerance * leaf.sse : tolerance_;

    for (std::size_t f = 0; f < x_.cols(); ++f) {
      const auto& order = (*sorted_)[f];
      double sum_left = 0.0;
      std::size_t n_left = 0;
      double prev_x = 0.0;
      bool have_prev = false;
      for (std::uint32_t i : order) {
        if (leaf_of_[i] != tag) continue;
        const double xi = x_(i, f);
        if (have_prev && xi > prev_x && n_left >= min_leaf_ && n - n_left >= min_leaf_) {
          const double sum_right = total - sum_left;
          const double nl = static_cast<double>(n_left);
          const double gain =
              sum_left * sum_left / nl + sum_right * sum_right / (nd - nl) - parent_term;
          if (leaf.best_feature < 0 || gain > leaf.best_gain + tol) {
            leaf.best_feature = static_cast<int>(f);
            leaf.best_threshold = detail::split_threshold(prev_x, xi);
            leaf.best_gain = gain;
          }
        }
        sum_left += r_[i] - leaf.mean;
        ++n_left;
        prev_x = xi;
        have_prev = true;
      }
    }
  }

  MatrixView x_;
  std::span<const double> r_;
  std::size_t max_leaves_;
  std::size_t min_leaf_;
  SortedColumns owned_sort_;
  const SortedColumns* sorted_ = nullptr;
  std::vector<std::uint32_t> leaf_of_;
  std::uint32_t tag_counter_ = 0;
  std::vector<OpenLeaf> open_;
  double tolerance_ = 0.0;
};

/// Best-first greedy CART regression with at most `max_leaves` leaves.
///
/// Starts from one leaf holding the mean of `r` and repeatedly splits the
/// open leaf whose best axis-aligned split removes the most squared error.
/// Candidate thresholds are midpoints between consecutive distinct values.
/// Growth stops at the leaf budget, when no split reduces the error, or when
/// no split leaves `min_leaf` rows on both sides. Leaves are numbered 1..L in
/// left-to-right order and hold the mean target of their rows.
inline RegressionTree fit_tree(const MatrixView& x, std::span<const double> r,
                               std::size_t max_leaves, std::size_t min_leaf = 2,
                               const SortedColumns* presorted = nullptr,
                               std::vector<SplitStep>* trace = nullptr) {
  TreeBuilder builder(x, r, max_leaves, min_leaf, presorted);
  return builder.build(trace);
}

inline double predict_tree(const RegressionTree& t, std::span<const double> x) {
  return t.predict(x);
}

inline int assign_leaf(const RegressionTree& t, std::span<const double> x) {
  return t.assign_leaf(x);
}

}  // namespace vbfi
