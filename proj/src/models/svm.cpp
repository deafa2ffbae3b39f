#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <unordered_map>

#include "mortpred/error.hpp"
#include "mortpred/models.hpp"

namespace mortpred {

namespace {

using Index = Eigen::Index;

// LRU cache of kernel rows K(x_i, .). Capacity is derived from a memory
// budget in megabytes.
class KernelCache {
 public:
  KernelCache(const Matrix& X, double gamma, double cache_mb)
      : X_(X), gamma_(gamma), sqnorm_(X.rowwise().squaredNorm()) {
    const double row_bytes = static_cast<double>(X.rows()) * sizeof(double);
    capacity_ = std::max<std::size_t>(2, static_cast<std::size_t>(cache_mb * 1024.0 * 1024.0 / row_bytes));
  }

  const Vector& row(Index i) {
    auto it = index_.find(i);
    if (it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    Vector k = X_ * X_.row(i).transpose();
    for (Index t = 0; t < k.size(); ++t) {
      const double d2 = std::max(0.0, sqnorm_(i) + sqnorm_(t) - 2.0 * k(t));
      k(t) = std::exp(-gamma_ * d2);
    }
    k(i) = 1.0;
    lru_.emplace_front(i, std::move(k));
    index_[i] = lru_.begin();
    return lru_.front().second;
  }

 private:
  const Matrix& X_;
  double gamma_;
  Vector sqnorm_;
  std::size_t capacity_;
  std::list<std::pair<Index, Vector>> lru_;
  std::unordered_map<Index, std::list<std::pair<Index, Vector>>::iterator> index_;
};

}  // namespace

double rbf_gamma_scale(const Matrix& X) {
  const double n = static_cast<double>(X.size());
  if (n == 0) return 1.0;
  const double mean = X.mean();
  const double var = (X.array() - mean).square().sum() / n;
  return var > 0 ? 1.0 / (static_cast<double>(X.cols()) * var) : 1.0;
}

SvmModel fit_svm(const Matrix& X, const Labels& y, const SvmParams& params, FitInfo* info, SvmDiagnostics* diag) {
  const Index n = X.rows();
  const double C = params.C;
  const double gamma = params.gamma.value_or(rbf_gamma_scale(X));
  Vector sy(n);
  for (Index i = 0; i < n; ++i) sy(i) = y[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;

  KernelCache cache(X, gamma, params.cache_mb);
  Vector alpha = Vector::Zero(n);
  Vector G = Vector::Constant(n, -1.0);  // gradient of 0.5 a'Qa - e'a
  const long max_iter = params.max_iter > 0 ? params.max_iter : std::max<long>(10'000'000L, 100L * n);
  constexpr double kTau = 1e-12;

  auto in_up = [&](Index t) { return (sy(t) > 0 && alpha(t) < C) || (sy(t) < 0 && alpha(t) > 0); };
  auto in_low = [&](Index t) { return (sy(t) > 0 && alpha(t) > 0) || (sy(t) < 0 && alpha(t) < C); };

  long iter = 0;
  double violation = 0.0;
  bool converged = false;
  while (iter < max_iter) {
    // Maximal violating pair.
    Index i = -1, j = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    for (Index t = 0; t < n; ++t) {
      const double v = -sy(t) * G(t);
      if (in_up(t) && v > gmax) {
        gmax = v;
        i = t;
      }
      if (in_low(t) && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    violation = (i < 0 || j < 0) ? 0.0 : gmax - gmin;
    if (violation < params.tol) {
      converged = true;
      break;
    }
    ++iter;
    const Vector& Ki = cache.row(i);
    const Vector Ki_copy = Ki;  // the next lookup may evict it
    const Vector& Kj = cache.row(j);
    const double Qii = 1.0, Qjj = 1.0;
    const double Qij = sy(i) * sy(j) * Ki_copy(j);
    const double old_ai = alpha(i), old_aj = alpha(j);

    if (sy(i) != sy(j)) {
      double quad = Qii + Qjj + 2.0 * Qij;
      if (quad <= 0) quad = kTau;
      const double delta = (-G(i) - G(j)) / quad;
      const double diff = alpha(i) - alpha(j);
      alpha(i) += delta;
      alpha(j) += delta;
      if (diff > 0) {
        if (alpha(j) < 0) {
          alpha(j) = 0;
          alpha(i) = diff;
        }
      } else if (alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = -diff;
      }
      if (diff > 0) {
        if (alpha(i) > C) {
          alpha(i) = C;
          alpha(j) = C - diff;
        }
      } else if (alpha(j) > C) {
        alpha(j) = C;
        alpha(i) = C + diff;
      }
    } else {
      double quad = Qii + Qjj - 2.0 * Qij;
      if (quad <= 0) quad = kTau;
      const double delta = (G(i) - G(j)) / quad;
      const double sum = alpha(i) + alpha(j);
      alpha(i) -= delta;
      alpha(j) += delta;
      if (sum > C) {
        if (alpha(i) > C) {
          alpha(i) = C;
          alpha(j) = sum - C;
        }
      } else if (alpha(j) < 0) {
        alpha(j) = 0;
        alpha(i) = sum;
      }
      if (sum > C) {
        if (alpha(j) > C) {
          alpha(j) = C;
          alpha(i) = sum - C;
        }
      } else if (alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = sum;
      }
    }
    const double dai = alpha(i) - old_ai;
    const double daj = alpha(j) - old_aj;
    // Q_ik = y_i y_k K_ik
    G.array() += sy.array() * (sy(i) * dai * Ki_copy.array() + sy(j) * daj * Kj.array());
  }

  // Bias from free support vectors, else the midpoint of the feasible range.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  Index n_free = 0;
  for (Index t = 0; t < n; ++t) {
    const double yg = sy(t) * G(t);
    if (alpha(t) >= C) {
      if (sy(t) < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (alpha(t) <= 0) {
      if (sy(t) > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  SvmModel m;
  m.gamma = gamma;
  m.bias = -rho;
  std::vector<Index> sv;
  for (Index t = 0; t < n; ++t) {
    if (alpha(t) > 0) sv.push_back(t);
  }
  m.support.resize(static_cast<Index>(sv.size()), X.cols());
  m.coef.resize(static_cast<Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s) {
    m.support.row(static_cast<Index>(s)) = X.row(sv[s]);
    m.coef(static_cast<Index>(s)) = alpha(sv[s]) * sy(sv[s]);
  }
  if (info) {
    info->iterations = static_cast<int>(std::min<long>(iter, std::numeric_limits<int>::max()));
    info->converged = converged;
    if (!converged) info->warning = "SMO hit the iteration limit";
  }
  if (diag) {
    diag->alpha = alpha;
    diag->signed_y = sy;
    diag->max_violation = violation;
    diag->C = C;
    diag->iterations = iter;
    diag->gamma = gamma;
  }
  return m;
}

Vector svm_decision(const SvmModel& m, const Matrix& X) {
  Vector out(X.rows());
  if (m.support.rows() == 0) {
    out.setConstant(m.bias);
    return out;
  }
  const Vector sv_norm = m.support.rowwise().squaredNorm();
  constexpr Index kBlock = 512;
  for (Index start = 0; start < X.rows(); start += kBlock) {
    const Index nb = std::min(kBlock, X.rows() - start);
    const auto Q = X.middleRows(start, nb);
    const Vector q_norm = Q.rowwise().squaredNorm();
    Matrix K = m.support * Q.transpose();  // n_sv x nb
    for (Index b = 0; b < nb; ++b) {
      for (Index s = 0; s < K.rows(); ++s) {
        const double d2 = std::max(0.0, sv_norm(s) + q_norm(b) - 2.0 * K(s, b));
        K(s, b) = std::exp(-m.gamma * d2);
      }
    }
    out.segment(start, nb) = (K.transpose() * m.coef).array() + m.bias;
  }
  return out;
}

}  // namespace mortpred
