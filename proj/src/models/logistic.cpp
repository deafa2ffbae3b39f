#include <cmath>
#include <deque>

#include "mortpred/error.hpp"
#include "mortpred/models.hpp"

namespace mortpred {

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

LossGrad logistic_objective(const Vector& theta, const Matrix& X, const Labels& y, double C) {
  const Eigen::Index p = X.cols();
  const double n = static_cast<double>(X.rows());
  const auto w = theta.head(p);
  const double b = theta(p);
  const Vector z = (X * w).array() + b;
  LossGrad out;
  Vector resid(X.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    loss += softplus(z(i)) - yi * z(i);
    resid(i) = sigmoid(z(i)) - yi;
  }
  out.loss = loss / n + w.squaredNorm() / (2.0 * C * n);
  out.grad.resize(p + 1);
  out.grad.head(p) = X.transpose() * resid / n + w / (C * n);
  out.grad(p) = resid.sum() / n;
  return out;
}

LogisticModel fit_logistic(const Matrix& X, const Labels& y, const LogisticParams& params, FitInfo* info) {
  const Eigen::Index dim = X.cols() + 1;
  Vector theta = Vector::Zero(dim);
  auto eval = [&](const Vector& t) { return logistic_objective(t, X, y, params.C); };
  LossGrad cur = eval(theta);

  // L-BFGS with an Armijo backtracking line search.
  std::deque<std::pair<Vector, Vector>> history;  // (s, y) pairs
  int iter = 0;
  bool converged = cur.grad.lpNorm<Eigen::Infinity>() <= params.tol;
  std::vector<double> losses{cur.loss};
  while (!converged && iter < params.max_iter) {
    Vector q = cur.grad;
    std::vector<double> a(history.size());
    for (std::size_t k = history.size(); k-- > 0;) {
      const auto& [s, yk] = history[k];
      a[k] = s.dot(q) / yk.dot(s);
      q -= a[k] * yk;
    }
    if (!history.empty()) {
      const auto& [s, yk] = history.back();
      q *= s.dot(yk) / yk.squaredNorm();
    } else {
      q /= std::max(1.0, cur.grad.norm());
    }
    for (std::size_t k = 0; k < history.size(); ++k) {
      const auto& [s, yk] = history[k];
      const double bk = yk.dot(q) / yk.dot(s);
      q += s * (a[k] - bk);
    }
    Vector dir = -q;
    double slope = cur.grad.dot(dir);
    if (slope >= 0) {
      history.clear();
      dir = -cur.grad;
      slope = -cur.grad.squaredNorm();
    }
    double step = 1.0;
    LossGrad next;
    Vector cand;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      cand = theta + step * dir;
      next = eval(cand);
      if (next.loss <= cur.loss + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    ++iter;
    if (!accepted) break;
    Vector s = cand - theta;
    Vector yk = next.grad - cur.grad;
    if (s.dot(yk) > 1e-12 * yk.squaredNorm()) {
      history.emplace_back(std::move(s), std::move(yk));
      if (static_cast<int>(history.size()) > params.memory) history.pop_front();
    }
    const double prev_loss = cur.loss;
    theta = cand;
    cur = std::move(next);
    losses.push_back(cur.loss);
    converged = cur.grad.lpNorm<Eigen::Infinity>() <= params.tol;
    // Relative reduction test, as in the reference quasi-Newton driver.
    if (!converged && (prev_loss - cur.loss) <= 2.220446049250313e-09 * std::max({std::abs(prev_loss), std::abs(cur.loss), 1.0})) {
      converged = true;
    }
  }
  if (info) {
    info->iterations = iter;
    info->converged = converged;
    info->loss_history = losses;
    if (!converged) info->warning = "L-BFGS reached max_iter=" + std::to_string(params.max_iter) + " before tol";
  }
  LogisticModel m;
  m.weights = theta.head(X.cols());
  m.intercept = theta(X.cols());
  return m;
}

}  // namespace mortpred
