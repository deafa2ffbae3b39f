#include <algorithm>
#include <cmath>
#include <numeric>

#include "mortpred/error.hpp"
#include "mortpred/models.hpp"

namespace mortpred {

namespace {

using Index = Eigen::Index;

// xgboost's minimum loss change for a split to count.
constexpr double kMinSplitLoss = 1e-6;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double score_term(double G, double H, double lambda) { return G * G / (H + lambda); }

struct Candidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

struct NodeStats {
  double G = 0.0, H = 0.0;
};

// One regression tree grown level by level. Each level makes one pass over
// every presorted feature column, accumulating gradient sums per open node.
Tree grow_tree(const Matrix& X, const std::vector<std::vector<Index>>& order, const Vector& g, const Vector& h,
               const BoostParams& params) {
  const Index n = X.rows();
  const int p = static_cast<int>(X.cols());
  Tree tree;
  tree.nodes.push_back({});
  std::vector<int> pos(static_cast<std::size_t>(n), 0);  // node id per row
  std::vector<int> open{0};
  std::vector<NodeStats> stats(1);
  for (Index i = 0; i < n; ++i) {
    stats[0].G += g(i);
    stats[0].H += h(i);
  }

  for (int depth = 0; depth < params.max_depth && !open.empty(); ++depth) {
    // slot[node id] -> index in `open`, or -1
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < open.size(); ++k) slot[static_cast<std::size_t>(open[k])] = static_cast<int>(k);
    std::vector<Candidate> best(open.size());

    std::vector<NodeStats> acc(open.size());
    std::vector<double> last(open.size());
    std::vector<char> seen(open.size());
    for (int f = 0; f < p; ++f) {
      std::fill(acc.begin(), acc.end(), NodeStats{});
      std::fill(seen.begin(), seen.end(), 0);
      for (Index i : order[static_cast<std::size_t>(f)]) {
        const int s = slot[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])];
        if (s < 0) continue;
        const auto su = static_cast<std::size_t>(s);
        const double v = X(i, f);
        if (seen[su] && v > last[su]) {
          const NodeStats& tot = stats[static_cast<std::size_t>(open[su])];
          const double GL = acc[su].G, HL = acc[su].H;
          const double GR = tot.G - GL, HR = tot.H - HL;
          if (HL >= params.min_child_weight && HR >= params.min_child_weight) {
            const double gain = 0.5 * (score_term(GL, HL, params.lambda) + score_term(GR, HR, params.lambda) -
                                       score_term(tot.G, tot.H, params.lambda)) -
                                params.gamma;
            if (gain > best[su].gain) {
              best[su].gain = gain;
              best[su].feature = f;
              const double mid = last[su] + (v - last[su]) / 2.0;
              best[su].threshold = mid >= v ? last[su] : mid;
            }
          }
        }
        acc[su].G += g(i);
        acc[su].H += h(i);
        last[su] = v;
        seen[su] = 1;
      }
    }

    std::vector<int> next_open;
    std::vector<int> split_of(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < open.size(); ++k) {
      if (best[k].feature < 0 || best[k].gain <= kMinSplitLoss) continue;
      const int id = open[k];
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      stats.resize(tree.nodes.size());
      auto& nd = tree.nodes[static_cast<std::size_t>(id)];
      nd.feature = best[k].feature;
      nd.threshold = best[k].threshold;
      nd.left = l;
      nd.right = l + 1;
      split_of.resize(tree.nodes.size(), -1);
      split_of[static_cast<std::size_t>(id)] = id;
      next_open.push_back(l);
      next_open.push_back(l + 1);
    }
    if (next_open.empty()) break;
    for (Index i = 0; i < n; ++i) {
      auto& at = pos[static_cast<std::size_t>(i)];
      if (split_of[static_cast<std::size_t>(at)] < 0) continue;
      const auto& nd = tree.nodes[static_cast<std::size_t>(at)];
      at = X(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
      stats[static_cast<std::size_t>(at)].G += g(i);
      stats[static_cast<std::size_t>(at)].H += h(i);
    }
    open = std::move(next_open);
  }

  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    if (tree.nodes[id].feature < 0) tree.nodes[id].value = newton_leaf_weight(stats[id].G, stats[id].H, params.lambda);
  }
  return tree;
}

}  // namespace

double newton_leaf_weight(double grad_sum, double hess_sum, double lambda) {
  return -grad_sum / (hess_sum + lambda);
}

double logistic_loss(const Vector& margin, const Labels& y) {
  double loss = 0.0;
  for (Index i = 0; i < margin.size(); ++i) {
    const double z = margin(i);
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += sp - y[static_cast<std::size_t>(i)] * z;
  }
  return margin.size() > 0 ? loss / static_cast<double>(margin.size()) : 0.0;
}

Vector boosted_margin(const BoostModel& m, const Matrix& X) {
  Vector out = Vector::Constant(X.rows(), m.base_margin);
  for (const auto& t : m.trees) {
    for (Index i = 0; i < X.rows(); ++i) out(i) += m.learning_rate * t.predict(X.row(i));
  }
  return out;
}

BoostModel fit_boosted(const Matrix& X, const Labels& y, const BoostParams& params, FitInfo* info) {
  if (params.base_score <= 0 || params.base_score >= 1) {
    throw Error(ErrorCode::InvalidArgument, "base_score must lie in (0,1)");
  }
  const Index n = X.rows();
  BoostModel m;
  m.base_margin = std::log(params.base_score / (1.0 - params.base_score));
  m.learning_rate = params.learning_rate;

  std::vector<std::vector<Index>> order(static_cast<std::size_t>(X.cols()));
  for (Index f = 0; f < X.cols(); ++f) {
    auto& o = order[static_cast<std::size_t>(f)];
    o.resize(static_cast<std::size_t>(n));
    std::iota(o.begin(), o.end(), Index{0});
    std::stable_sort(o.begin(), o.end(), [&](Index a, Index b) { return X(a, f) < X(b, f); });
  }

  Vector margin = Vector::Constant(n, m.base_margin);
  Vector g(n), h(n);
  std::vector<double> losses{logistic_loss(margin, y)};
  for (int round = 0; round < params.n_rounds; ++round) {
    for (Index i = 0; i < n; ++i) {
      const double pr = sigmoid(margin(i));
      g(i) = pr - y[static_cast<std::size_t>(i)];
      h(i) = std::max(pr * (1.0 - pr), 1e-16);
    }
    Tree t = grow_tree(X, order, g, h, params);
    for (Index i = 0; i < n; ++i) margin(i) += params.learning_rate * t.predict(X.row(i));
    m.trees.push_back(std::move(t));
    losses.push_back(logistic_loss(margin, y));
  }
  if (info) {
    info->iterations = params.n_rounds;
    info->converged = true;
    info->loss_history = std::move(losses);
  }
  return m;
}

}  // namespace mortpred
