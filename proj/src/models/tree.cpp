#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "mortpred/error.hpp"
#include "mortpred/models.hpp"

namespace mortpred {

namespace {

using Index = Eigen::Index;

double gini_from(double w0, double w1) {
  const double w = w0 + w1;
  if (w <= 0) return 0.0;
  const double p0 = w0 / w, p1 = w1 / w;
  return 1.0 - p0 * p0 - p1 * p1;
}

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = -std::numeric_limits<double>::infinity();
};

double midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return (mid >= hi) ? lo : mid;
}

struct CartBuilder {
  const Matrix& X;
  const Labels& y;
  const std::vector<double>& w;
  const TreeParams& params;
  Rng& rng;
  Tree tree;
  std::vector<std::tuple<double, int, double>> buf;  // (value, label, weight)

  void evaluate_feature(const std::vector<std::size_t>& rows, int f, double w0, double w1, SplitChoice& best) {
    buf.clear();
    for (auto r : rows) buf.emplace_back(X(static_cast<Index>(r), f), y[r], w[r]);
    std::sort(buf.begin(), buf.end(),
              [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
    const double total = w0 + w1;
    const double parent = gini_from(w0, w1);
    double l0 = 0, l1 = 0;
    const double min_leaf = static_cast<double>(params.min_samples_leaf);
    for (std::size_t t = 0; t + 1 < buf.size(); ++t) {
      (std::get<1>(buf[t]) == 1 ? l1 : l0) += std::get<2>(buf[t]);
      const double v = std::get<0>(buf[t]);
      const double next = std::get<0>(buf[t + 1]);
      if (!(v < next)) continue;
      const double wl = l0 + l1;
      const double wr = total - wl;
      if (wl < min_leaf || wr < min_leaf) continue;
      const double gain = parent - (wl / total) * gini_from(l0, l1) - (wr / total) * gini_from(w0 - l0, w1 - l1);
      if (gain > best.gain) {
        best.found = true;
        best.gain = gain;
        best.feature = f;
        best.threshold = midpoint(v, next);
      }
    }
  }

  int build(std::vector<std::size_t> rows, int depth) {
    double w0 = 0, w1 = 0;
    for (auto r : rows) (y[r] == 1 ? w1 : w0) += w[r];
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.back().value = (w0 + w1) > 0 ? w1 / (w0 + w1) : 0.0;

    const bool pure = w0 == 0 || w1 == 0;
    const bool depth_ok = params.max_depth < 0 || depth < params.max_depth;
    if (pure || !depth_ok || w0 + w1 < static_cast<double>(params.min_samples_split) || rows.size() < 2) return id;

    const int p = static_cast<int>(X.cols());
    std::vector<int> features(static_cast<std::size_t>(p));
    std::iota(features.begin(), features.end(), 0);
    const std::size_t want =
        (params.max_features == 0 || params.max_features >= features.size()) ? features.size() : params.max_features;
    if (want < features.size()) shuffle(features, rng);

    SplitChoice best;
    std::size_t visited = 0;
    for (int f : features) {
      if (visited >= want && best.found) break;
      evaluate_feature(rows, f, w0, w1, best);
      ++visited;
    }
    if (!best.found) return id;

    std::vector<std::size_t> left, right;
    for (auto r : rows) (X(static_cast<Index>(r), best.feature) <= best.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    tree.nodes[static_cast<std::size_t>(id)].feature = best.feature;
    tree.nodes[static_cast<std::size_t>(id)].threshold = best.threshold;
    const int l = build(std::move(left), depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].left = l;
    const int r = build(std::move(right), depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }
};

}  // namespace

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
    best = std::max(best, d[i]);
  }
  return best;
}

std::size_t Tree::leaves() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.feature < 0; }));
}

double gini_impurity(const Labels& labels) {
  double w0 = 0, w1 = 0;
  for (int v : labels) (v == 1 ? w1 : w0) += 1.0;
  return gini_from(w0, w1);
}

double cart_split_gain(const Labels& node, const Labels& left, const Labels& right) {
  if (left.empty() || right.empty()) throw Error(ErrorCode::EmptyChild, "split child is empty");
  if (left.size() + right.size() != node.size()) {
    throw Error(ErrorCode::InvalidArgument, "children do not partition the node");
  }
  const double n = static_cast<double>(node.size());
  return gini_impurity(node) - static_cast<double>(left.size()) / n * gini_impurity(left) -
         static_cast<double>(right.size()) / n * gini_impurity(right);
}

Tree fit_cart(const Matrix& X, const Labels& y, const std::vector<double>& weights, const TreeParams& params,
              Rng& rng) {
  std::vector<double> unit;
  if (weights.empty()) unit.assign(y.size(), 1.0);
  const auto& w = weights.empty() ? unit : weights;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (w[i] > 0) rows.push_back(i);
  }
  CartBuilder b{X, y, w, params, rng, {}, {}};
  b.build(std::move(rows), 0);
  return std::move(b.tree);
}

ForestModel fit_forest(const Matrix& X, const Labels& y, const ForestParams& params, std::uint64_t seed,
                       const std::vector<std::uint64_t>& row_ids) {
  const std::size_t n = y.size();
  // Bootstrap draws index rows in ascending-id order.
  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), 0);
  if (!row_ids.empty()) {
    if (row_ids.size() != n) throw Error(ErrorCode::LengthMismatch, "row_ids length differs from rows");
    std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return row_ids[a] < row_ids[b]; });
  }
  TreeParams tp = params.tree;
  if (params.sqrt_features) {
    tp.max_features = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(X.cols()))));
  }

  ForestModel forest;
  forest.trees.resize(params.n_trees);
  auto grow = [&](std::size_t t) {
    Rng rng(derive_seed(seed, t));
    std::vector<double> w(n, 1.0);
    if (params.bootstrap) {
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t d = 0; d < n; ++d) w[by_id[uniform_index(rng, n)]] += 1.0;
    }
    forest.trees[t] = fit_cart(X, y, w, tp, rng);
  };

  const std::size_t workers =
      std::min<std::size_t>(params.n_trees, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t t = 0; t < params.n_trees; ++t) grow(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < workers; ++k) {
      pool.emplace_back([&, k] {
        for (std::size_t t = k; t < params.n_trees; t += workers) grow(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  return forest;
}

}  // namespace mortpred
