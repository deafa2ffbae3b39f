#include <algorithm>
#include <queue>

#include "mortpred/models.hpp"

namespace mortpred {

std::vector<std::size_t> knn_neighbors(const Matrix& train, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                                       std::size_t k) {
  const Eigen::Index n = train.rows();
  const Eigen::Index p = train.cols();
  k = std::min<std::size_t>(k, static_cast<std::size_t>(n));
  // Max-heap on (distance, index): the top is the worst kept neighbour.
  std::priority_queue<std::pair<double, std::size_t>> heap;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool full = heap.size() == k;
    const double bound = full ? heap.top().first : std::numeric_limits<double>::infinity();
    double d = 0.0;
    Eigen::Index j = 0;
    for (; j < p; ++j) {
      const double diff = train(i, j) - query(j);
      d += diff * diff;
      if (d > bound) break;  // partial distance already too large
    }
    if (j < p) continue;
    // Equal distance loses to the earlier index already kept.
    if (!full) {
      heap.emplace(d, static_cast<std::size_t>(i));
    } else if (d < bound) {
      heap.pop();
      heap.emplace(d, static_cast<std::size_t>(i));
    }
  }
  std::vector<std::pair<double, std::size_t>> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::sort(out.begin(), out.end());
  std::vector<std::size_t> idx;
  idx.reserve(out.size());
  for (const auto& [d, i] : out) idx.push_back(i);
  return idx;
}

}  // namespace mortpred
