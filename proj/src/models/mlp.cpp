#include <algorithm>
#include <cmath>
#include <numeric>

#include "mortpred/error.hpp"
#include "mortpred/models.hpp"

namespace mortpred {

namespace {

using Index = Eigen::Index;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct Gradients {
  std::vector<Matrix> dW;
  std::vector<Vector> db;
};

// Loss and gradient on a batch: mean log-loss + alpha/(2 n) * ||W||^2.
double backprop(const MlpModel& m, const Matrix& X, const Labels& y, const std::vector<Index>& rows, double alpha,
                Gradients& grad) {
  const std::size_t L = m.weights.size();
  const auto n = static_cast<Index>(rows.size());
  Matrix A0(n, X.cols());
  for (Index r = 0; r < n; ++r) A0.row(r) = X.row(rows[static_cast<std::size_t>(r)]);

  std::vector<Matrix> acts{std::move(A0)};
  for (std::size_t l = 0; l < L; ++l) {
    Matrix Z = acts.back() * m.weights[l];
    Z.rowwise() += m.biases[l].transpose();
    if (l + 1 < L) Z = Z.cwiseMax(0.0);
    acts.push_back(std::move(Z));
  }
  // acts.back() holds output logits.
  const Vector z = acts.back().col(0);
  double loss = 0.0;
  Matrix delta(n, 1);
  for (Index r = 0; r < n; ++r) {
    const double yi = y[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
    loss += softplus(z(r)) - yi * z(r);
    delta(r, 0) = (sigmoid(z(r)) - yi) / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);
  double sq = 0.0;
  for (const auto& W : m.weights) sq += W.squaredNorm();
  loss += alpha * sq / (2.0 * static_cast<double>(n));

  grad.dW.resize(L);
  grad.db.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    grad.dW[l] = acts[l].transpose() * delta + (alpha / static_cast<double>(n)) * m.weights[l];
    grad.db[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = delta * m.weights[l].transpose();
      back.array() *= (acts[l].array() > 0.0).cast<double>();
      delta = std::move(back);
    }
  }
  return loss;
}

MlpModel init_mlp(const std::vector<std::size_t>& sizes, Rng& rng) {
  MlpModel m;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto fi = static_cast<Index>(sizes[l]);
    const auto fo = static_cast<Index>(sizes[l + 1]);
    // Glorot uniform; the sigmoid output layer uses the narrower bound.
    const double factor = (l + 2 == sizes.size()) ? 2.0 : 6.0;
    const double bound = std::sqrt(factor / static_cast<double>(fi + fo));
    Matrix W(fi, fo);
    Vector b(fo);
    for (Index c = 0; c < fo; ++c) {
      for (Index r = 0; r < fi; ++r) W(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
    }
    for (Index c = 0; c < fo; ++c) b(c) = (2.0 * uniform01(rng) - 1.0) * bound;
    m.weights.push_back(std::move(W));
    m.biases.push_back(std::move(b));
  }
  return m;
}

double accuracy_of(const MlpModel& m, const Matrix& X, const Labels& y, const std::vector<Index>& rows) {
  Matrix sub(static_cast<Index>(rows.size()), X.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Index>(r)) = X.row(rows[r]);
  const Vector p = mlp_forward(m, sub);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) hit += ((p(static_cast<Index>(r)) >= 0.5 ? 1 : 0) == y[static_cast<std::size_t>(rows[r])]);
  return rows.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(rows.size());
}

}  // namespace

std::vector<std::size_t> mlp_layer_sizes(std::size_t n_inputs, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> s{n_inputs};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(1);
  return s;
}

Vector mlp_flatten(const MlpModel& m) {
  Index total = 0;
  for (std::size_t l = 0; l < m.weights.size(); ++l) total += m.weights[l].size() + m.biases[l].size();
  Vector theta(total);
  Index at = 0;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    theta.segment(at, m.weights[l].size()) = m.weights[l].reshaped();
    at += m.weights[l].size();
    theta.segment(at, m.biases[l].size()) = m.biases[l];
    at += m.biases[l].size();
  }
  return theta;
}

MlpModel mlp_unflatten(const Vector& theta, const std::vector<std::size_t>& sizes) {
  MlpModel m;
  Index at = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto fi = static_cast<Index>(sizes[l]);
    const auto fo = static_cast<Index>(sizes[l + 1]);
    if (at + fi * fo + fo > theta.size()) throw Error(ErrorCode::ShapeMismatch, "parameter vector too short");
    m.weights.push_back(theta.segment(at, fi * fo).reshaped(fi, fo));
    at += fi * fo;
    m.biases.push_back(theta.segment(at, fo));
    at += fo;
  }
  if (at != theta.size()) throw Error(ErrorCode::ShapeMismatch, "parameter vector too long");
  return m;
}

LossGrad mlp_objective(const Vector& theta, const std::vector<std::size_t>& sizes, const Matrix& X,
                       const Labels& y, double alpha) {
  const MlpModel m = mlp_unflatten(theta, sizes);
  std::vector<Index> rows(static_cast<std::size_t>(X.rows()));
  std::iota(rows.begin(), rows.end(), Index{0});
  Gradients g;
  LossGrad out;
  out.loss = backprop(m, X, y, rows, alpha, g);
  MlpModel gm{g.dW, g.db};
  out.grad = mlp_flatten(gm);
  return out;
}

Vector mlp_forward(const MlpModel& m, const Matrix& X) {
  Matrix A = X;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    Matrix Z = A * m.weights[l];
    Z.rowwise() += m.biases[l].transpose();
    if (l + 1 < m.weights.size()) Z = Z.cwiseMax(0.0);
    A = std::move(Z);
  }
  Vector out(A.rows());
  for (Index i = 0; i < A.rows(); ++i) out(i) = sigmoid(A(i, 0));
  return out;
}

MlpModel fit_mlp(const Matrix& X, const Labels& y, const MlpParams& params, std::uint64_t seed, FitInfo* info) {
  const auto n = static_cast<std::size_t>(X.rows());
  Rng rng(seed);
  const auto sizes = mlp_layer_sizes(static_cast<std::size_t>(X.cols()), params.hidden);
  MlpModel m = init_mlp(sizes, rng);

  // Stratified validation hold-out for early stopping.
  std::vector<Index> train_rows, val_rows;
  const bool use_val = params.early_stopping && n >= 10;
  if (use_val) {
    std::vector<Index> by_class[2];
    for (std::size_t i = 0; i < n; ++i) by_class[y[i] == 1 ? 1 : 0].push_back(static_cast<Index>(i));
    for (auto& cls : by_class) {
      shuffle(cls, rng);
      const auto take = static_cast<std::size_t>(std::ceil(params.validation_fraction * static_cast<double>(cls.size())));
      const std::size_t nv = std::min(take, cls.size() > 0 ? cls.size() - 1 : 0);
      val_rows.insert(val_rows.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(nv));
      train_rows.insert(train_rows.end(), cls.begin() + static_cast<std::ptrdiff_t>(nv), cls.end());
    }
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(train_rows.begin(), train_rows.end());
    if (val_rows.empty()) train_rows.clear();
  }
  if (train_rows.empty()) {
    val_rows.clear();
    train_rows.resize(n);
    std::iota(train_rows.begin(), train_rows.end(), Index{0});
  }
  const bool validate = !val_rows.empty();

  // Adam state, one slot per parameter block.
  std::vector<Matrix> mW, vW;
  std::vector<Vector> mb, vb;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    mW.push_back(Matrix::Zero(m.weights[l].rows(), m.weights[l].cols()));
    vW.push_back(mW.back());
    mb.push_back(Vector::Zero(m.biases[l].size()));
    vb.push_back(mb.back());
  }
  long step = 0;
  const std::size_t batch = std::clamp<std::size_t>(params.batch_size, 1, train_rows.size());

  MlpModel best = m;
  double best_val = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  int stall = 0;
  int epochs = 0;
  bool stopped = false;
  std::vector<double> history;
  Gradients g;
  std::vector<Index> bidx;
  for (int epoch = 0; epoch < params.max_epochs; ++epoch) {
    shuffle(train_rows, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_rows.size(); start += batch) {
      const std::size_t end = std::min(train_rows.size(), start + batch);
      bidx.assign(train_rows.begin() + static_cast<std::ptrdiff_t>(start),
                  train_rows.begin() + static_cast<std::ptrdiff_t>(end));
      epoch_loss += backprop(m, X, y, bidx, params.alpha, g) * static_cast<double>(end - start);
      ++step;
      const double c1 = 1.0 - std::pow(params.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(params.beta2, static_cast<double>(step));
      const double lr = params.learning_rate * std::sqrt(c2) / c1;
      for (std::size_t l = 0; l < m.weights.size(); ++l) {
        mW[l] = params.beta1 * mW[l] + (1.0 - params.beta1) * g.dW[l];
        vW[l] = params.beta2 * vW[l] + (1.0 - params.beta2) * g.dW[l].cwiseAbs2();
        m.weights[l].array() -= lr * mW[l].array() / (vW[l].array().sqrt() + params.epsilon);
        mb[l] = params.beta1 * mb[l] + (1.0 - params.beta1) * g.db[l];
        vb[l] = params.beta2 * vb[l] + (1.0 - params.beta2) * g.db[l].cwiseAbs2();
        m.biases[l].array() -= lr * mb[l].array() / (vb[l].array().sqrt() + params.epsilon);
      }
    }
    epoch_loss /= static_cast<double>(train_rows.size());
    history.push_back(epoch_loss);
    epochs = epoch + 1;

    if (validate) {
      const double acc = accuracy_of(m, X, y, val_rows);
      if (acc < best_val + params.tol) ++stall;
      else stall = 0;
      if (acc > best_val) {
        best_val = acc;
        best = m;
      }
    } else {
      if (epoch_loss > best_loss - params.tol) ++stall;
      else stall = 0;
      if (epoch_loss < best_loss) best_loss = epoch_loss;
    }
    if (stall > params.n_iter_no_change) {
      stopped = true;
      break;
    }
  }
  if (validate) m = std::move(best);
  if (info) {
    info->iterations = epochs;
    info->converged = stopped;
    info->loss_history = std::move(history);
    if (!stopped) info->warning = "MLP reached max_epochs=" + std::to_string(params.max_epochs) + " before converging";
  }
  return m;
}

}  // namespace mortpred
