#include "mortpred/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mortpred/error.hpp"
#include "mortpred/io.hpp"

namespace mortpred {

namespace {

using Index = Eigen::Index;

Index ix(std::size_t i) { return static_cast<Index>(i); }

Vector column_means_observed(const Matrix& X) {
  Vector means(X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    double sum = 0.0;
    Index count = 0;
    for (Index i = 0; i < X.rows(); ++i) {
      if (!is_missing(X(i, j))) {
        sum += X(i, j);
        ++count;
      }
    }
    if (count == 0) {
      throw Error(ErrorCode::AllMissingColumn, "column " + std::to_string(j) + " has no observed values");
    }
    means(j) = sum / static_cast<double>(count);
  }
  return means;
}

// Ordinary least squares with intercept on the given rows.
void fit_ols(const Matrix& X, const std::vector<Index>& rows, const std::vector<std::size_t>& predictors,
             Index target, const Matrix& observed, Vector& coef, double& intercept) {
  const Index n = static_cast<Index>(rows.size());
  const Index q = static_cast<Index>(predictors.size());
  Matrix A(n, q + 1);
  Vector b(n);
  for (Index r = 0; r < n; ++r) {
    A(r, 0) = 1.0;
    for (Index c = 0; c < q; ++c) A(r, c + 1) = X(rows[static_cast<std::size_t>(r)], ix(predictors[static_cast<std::size_t>(c)]));
    b(r) = observed(rows[static_cast<std::size_t>(r)], target);
  }
  Vector sol = A.colPivHouseholderQr().solve(b);
  intercept = sol(0);
  coef = sol.tail(q);
}

double predict_regressor(const IterativeImputerModel::Regressor& reg, const Matrix& X, Index row) {
  double v = reg.intercept;
  for (std::size_t c = 0; c < reg.predictors.size(); ++c) v += reg.coef(ix(c)) * X(row, ix(reg.predictors[c]));
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

IterativeImputerModel fit_iterative_imputer(const Matrix& X, const IterativeImputerOptions& opts) {
  IterativeImputerModel model;
  model.max_rounds = opts.max_rounds;
  model.tol = opts.tol;
  model.means = column_means_observed(X);

  const Index p = X.cols();
  std::vector<std::vector<Index>> missing_rows(static_cast<std::size_t>(p));
  std::vector<std::vector<Index>> observed_rows(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < X.rows(); ++i) {
      (is_missing(X(i, j)) ? missing_rows : observed_rows)[static_cast<std::size_t>(j)].push_back(i);
    }
  }

  Matrix filled = X;
  for (Index j = 0; j < p; ++j) {
    for (auto i : missing_rows[static_cast<std::size_t>(j)]) filled(i, j) = model.means(j);
  }

  for (Index j = 0; j < p; ++j) {
    if (missing_rows[static_cast<std::size_t>(j)].empty()) continue;
    IterativeImputerModel::Regressor reg;
    reg.target = static_cast<std::size_t>(j);
    for (Index k = 0; k < p; ++k) {
      if (k != j) reg.predictors.push_back(static_cast<std::size_t>(k));
    }
    model.regressors.push_back(std::move(reg));
  }
  if (model.regressors.empty() || p < 2) {
    model.converged = true;
    return model;
  }

  for (int round = 0; round < opts.max_rounds; ++round) {
    double max_change = 0.0;
    for (auto& reg : model.regressors) {
      const Index j = ix(reg.target);
      fit_ols(filled, observed_rows[reg.target], reg.predictors, j, X, reg.coef, reg.intercept);
      for (auto i : missing_rows[reg.target]) {
        const double v = predict_regressor(reg, filled, i);
        max_change = std::max(max_change, std::abs(v - filled(i, j)));
        filled(i, j) = v;
      }
    }
    model.rounds_run = round + 1;
    if (max_change < opts.tol) {
      model.converged = true;
      break;
    }
  }
  return model;
}

Matrix IterativeImputerModel::transform(const Matrix& X) const {
  if (X.cols() != means.size()) throw Error(ErrorCode::ShapeMismatch, "imputer width mismatch");
  Matrix out = X;
  std::vector<std::vector<Index>> missing(static_cast<std::size_t>(X.cols()));
  for (Index j = 0; j < X.cols(); ++j) {
    for (Index i = 0; i < X.rows(); ++i) {
      if (is_missing(X(i, j))) {
        out(i, j) = means(j);
        missing[static_cast<std::size_t>(j)].push_back(i);
      }
    }
  }
  for (int round = 0; round < rounds_run; ++round) {
    for (const auto& reg : regressors) {
      for (auto i : missing[reg.target]) out(i, ix(reg.target)) = predict_regressor(reg, out, i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

KnnImputerModel fit_knn_imputer(const Matrix& reference, std::vector<std::size_t> target_columns, std::size_t k) {
  if (reference.rows() == 0) throw Error(ErrorCode::EmptyReference, "KNN imputer needs reference rows");
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "KNN imputer needs k >= 1");
  KnnImputerModel m;
  m.reference = reference;
  m.target_columns = std::move(target_columns);
  m.k = k;
  m.center = Vector::Zero(reference.cols());
  m.scale = Vector::Ones(reference.cols());
  for (Index j = 0; j < reference.cols(); ++j) {
    double sum = 0.0, sq = 0.0;
    Index cnt = 0;
    for (Index i = 0; i < reference.rows(); ++i) {
      const double v = reference(i, j);
      if (is_missing(v)) continue;
      sum += v;
      sq += v * v;
      ++cnt;
    }
    if (cnt == 0) continue;
    const double mu = sum / static_cast<double>(cnt);
    const double var = std::max(0.0, sq / static_cast<double>(cnt) - mu * mu);
    m.center(j) = mu;
    if (var > 0.0) m.scale(j) = std::sqrt(var);
  }
  return m;
}

Matrix impute_knn(const Matrix& X, const KnnImputerModel& model) {
  const Matrix& R = model.reference;
  if (R.rows() == 0) throw Error(ErrorCode::EmptyReference, "KNN imputer has no reference rows");
  if (X.cols() != R.cols()) throw Error(ErrorCode::ShapeMismatch, "KNN imputer width mismatch");
  const Index p = R.cols();
  const Index nr = R.rows();

  // Standardised values with NaN -> 0 plus observation masks, so the masked
  // squared distance expands into three matrix products.
  auto prepare = [&](const Matrix& A, Matrix& Z, Matrix& M) {
    Z.resize(A.rows(), p);
    M.resize(A.rows(), p);
    for (Index i = 0; i < A.rows(); ++i) {
      for (Index j = 0; j < p; ++j) {
        const double v = A(i, j);
        const bool obs = !is_missing(v);
        M(i, j) = obs ? 1.0 : 0.0;
        Z(i, j) = obs ? (v - model.center(j)) / model.scale(j) : 0.0;
      }
    }
  };
  Matrix RZ, RM;
  prepare(R, RZ, RM);
  const Matrix RZ2 = RZ.cwiseProduct(RZ);

  Matrix out = X;
  std::vector<Index> queries;
  for (Index i = 0; i < X.rows(); ++i) {
    for (auto c : model.target_columns) {
      if (is_missing(X(i, ix(c)))) {
        queries.push_back(i);
        break;
      }
    }
  }

  constexpr Index kBlock = 256;
  std::vector<std::pair<double, Index>> cand;
  for (std::size_t start = 0; start < queries.size(); start += kBlock) {
    const Index nb = std::min<Index>(kBlock, static_cast<Index>(queries.size() - start));
    Matrix Q(nb, p);
    for (Index b = 0; b < nb; ++b) Q.row(b) = X.row(queries[start + static_cast<std::size_t>(b)]);
    Matrix QZ, QM;
    prepare(Q, QZ, QM);
    const Matrix QZ2 = QZ.cwiseProduct(QZ);
    // sum_j Mr Mq (r - q)^2 = (Mr.*r^2) Mq' - 2 (Mr.*r) (Mq.*q)' + Mr (Mq.*q^2)'
    const Matrix D = RZ2 * QM.transpose() - 2.0 * RZ * QZ.transpose() + RM * QZ2.transpose();
    const Matrix C = RM * QM.transpose();
    for (Index b = 0; b < nb; ++b) {
      const Index qi = queries[start + static_cast<std::size_t>(b)];
      for (auto c : model.target_columns) {
        const Index col = ix(c);
        if (!is_missing(X(qi, col))) continue;
        cand.clear();
        for (Index r = 0; r < nr; ++r) {
          if (is_missing(R(r, col))) continue;
          const double co = C(r, b);
          const double d = co > 0.0 ? std::max(0.0, D(r, b)) * static_cast<double>(p) / co
                                    : std::numeric_limits<double>::infinity();
          cand.emplace_back(d, r);
        }
        if (cand.empty()) {
          throw Error(ErrorCode::EmptyReference, "no reference row observes column " + std::to_string(c));
        }
        const std::size_t kk = std::min(model.k, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
        std::map<double, std::size_t> votes;
        for (std::size_t t = 0; t < kk; ++t) ++votes[R(cand[t].second, col)];
        double best = 0.0;
        std::size_t best_count = 0;
        for (const auto& [value, count] : votes) {  // ascending code order: first max wins ties
          if (count > best_count) {
            best = value;
            best_count = count;
          }
        }
        out(qi, col) = best;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> StandardScalerModel::constant_columns() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < constant.size(); ++j) {
    if (constant[j]) out.push_back(j);
  }
  return out;
}

StandardScalerModel fit_scaler(const Matrix& X, std::vector<bool> passthrough) {
  if (X.array().isNaN().any()) throw Error(ErrorCode::InvalidArgument, "scaler needs a complete matrix");
  if (passthrough.empty()) passthrough.assign(static_cast<std::size_t>(X.cols()), false);
  if (passthrough.size() != static_cast<std::size_t>(X.cols())) {
    throw Error(ErrorCode::ShapeMismatch, "passthrough mask width mismatch");
  }
  StandardScalerModel m;
  m.passthrough = std::move(passthrough);
  const double n = static_cast<double>(X.rows());
  m.mean = X.colwise().mean().transpose();
  m.sd.resize(X.cols());
  m.constant.assign(static_cast<std::size_t>(X.cols()), false);
  for (Index j = 0; j < X.cols(); ++j) {
    const double var = (X.col(j).array() - m.mean(j)).square().sum() / n;
    m.sd(j) = std::sqrt(var);
    bool same = true;
    for (Index i = 1; i < X.rows() && same; ++i) same = X(i, j) == X(0, j);
    if (same || m.sd(j) == 0.0) {
      m.sd(j) = 0.0;
      m.constant[static_cast<std::size_t>(j)] = true;
    }
  }
  return m;
}

Matrix apply_scaler(const StandardScalerModel& model, const Matrix& X) {
  if (X.cols() != model.mean.size()) throw Error(ErrorCode::ShapeMismatch, "scaler width mismatch");
  Matrix Z(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    if (!model.passthrough.empty() && model.passthrough[static_cast<std::size_t>(j)]) Z.col(j) = X.col(j);
    else if (model.constant[static_cast<std::size_t>(j)]) Z.col(j).setZero();
    else Z.col(j) = (X.col(j).array() - model.mean(j)) / model.sd(j);
  }
  return Z;
}

Matrix inverse_scaler(const StandardScalerModel& model, const Matrix& Z) {
  Matrix X(Z.rows(), Z.cols());
  for (Index j = 0; j < Z.cols(); ++j) {
    if (!model.passthrough.empty() && model.passthrough[static_cast<std::size_t>(j)]) X.col(j) = Z.col(j);
    else X.col(j) = Z.col(j).array() * model.sd(j) + model.mean(j);
  }
  return X;
}

// ---------------------------------------------------------------------------

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

double lasso_alpha_max(const Matrix& X, const Vector& y) {
  const double n = static_cast<double>(X.rows());
  const Vector yc = y.array() - y.mean();
  double amax = 0.0;
  for (Index j = 0; j < X.cols(); ++j) {
    const Vector xc = X.col(j).array() - X.col(j).mean();
    amax = std::max(amax, std::abs(xc.dot(yc)) / n);
  }
  return amax;
}

double lasso_kkt_residual(const Matrix& X, const Vector& y, const Vector& beta, double intercept, double alpha) {
  const double n = static_cast<double>(X.rows());
  const Vector r = y - X * beta - Vector::Constant(X.rows(), intercept);
  double worst = 0.0;
  for (Index j = 0; j < X.cols(); ++j) {
    const double g = X.col(j).dot(r) / n;
    const double v = beta(j) != 0.0 ? std::abs(g - alpha * (beta(j) > 0 ? 1.0 : -1.0))
                                    : std::max(0.0, std::abs(g) - alpha);
    worst = std::max(worst, v);
  }
  return worst;
}

LassoFit lasso_fit(const Matrix& X, const Vector& y, double alpha, const LassoOptions& opts, const Vector* warm_start) {
  if (alpha < 0.0) throw Error(ErrorCode::InvalidArgument, "lasso alpha must be nonnegative");
  if (X.rows() != y.size()) throw Error(ErrorCode::ShapeMismatch, "lasso X/y row mismatch");
  const Index n = X.rows();
  const Index p = X.cols();
  const double nd = static_cast<double>(n);
  const Vector xmean = X.colwise().mean().transpose();
  const double ymean = y.mean();
  const Matrix Xc = X.rowwise() - xmean.transpose();
  const Vector yc = y.array() - ymean;
  Vector a(p);
  for (Index j = 0; j < p; ++j) a(j) = Xc.col(j).squaredNorm() / nd;

  LassoFit fit;
  fit.beta = warm_start ? *warm_start : Vector::Zero(p);
  for (Index j = 0; j < p; ++j) {
    if (a(j) == 0.0) fit.beta(j) = 0.0;
  }
  Vector r = yc - Xc * fit.beta;

  auto kkt = [&]() {
    r = yc - Xc * fit.beta;
    double worst = 0.0;
    for (Index j = 0; j < p; ++j) {
      if (a(j) == 0.0) continue;
      const double g = Xc.col(j).dot(r) / nd;
      const double v = fit.beta(j) != 0.0 ? std::abs(g - alpha * (fit.beta(j) > 0 ? 1.0 : -1.0))
                                          : std::max(0.0, std::abs(g) - alpha);
      worst = std::max(worst, v);
    }
    return worst;
  };

  fit.kkt_residual = kkt();
  while (fit.kkt_residual > opts.kkt_tol && fit.sweeps < opts.max_sweeps) {
    for (Index j = 0; j < p; ++j) {
      if (a(j) == 0.0) continue;
      const double old = fit.beta(j);
      const double z = Xc.col(j).dot(r) / nd + a(j) * old;
      const double updated = soft_threshold(z, alpha) / a(j);
      if (updated != old) {
        r -= (updated - old) * Xc.col(j);
        fit.beta(j) = updated;
      }
    }
    ++fit.sweeps;
    fit.kkt_residual = kkt();
  }
  fit.converged = fit.kkt_residual <= opts.kkt_tol;
  fit.intercept = ymean - xmean.dot(fit.beta);
  if (fit.kkt_residual > opts.kkt_accept) {
    throw Error(ErrorCode::NonConvergence, "lasso did not converge after " + std::to_string(fit.sweeps) +
                                               " sweeps (KKT residual " + std::to_string(fit.kkt_residual) + ")");
  }
  return fit;
}

namespace {

Vector labels_as_vector(const Labels& y) {
  Vector v(static_cast<Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) v(ix(i)) = y[i];
  return v;
}

std::vector<std::size_t> rank_by_magnitude(const Vector& beta) {
  std::vector<std::size_t> order(static_cast<std::size_t>(beta.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(beta(ix(a))) > std::abs(beta(ix(b))); });
  return order;
}

}  // namespace

LassoRanking lasso_rank(const Matrix& X, const Labels& y, double alpha, std::size_t k, const LassoOptions& opts) {
  if (k > static_cast<std::size_t>(X.cols())) throw Error(ErrorCode::InvalidArgument, "top-k exceeds feature count");
  const auto fit = lasso_fit(X, labels_as_vector(y), alpha, opts);
  LassoRanking r;
  r.alpha = alpha;
  r.beta = fit.beta;
  r.kkt_residual = fit.kkt_residual;
  r.ranking = rank_by_magnitude(fit.beta);
  r.selected.assign(r.ranking.begin(), r.ranking.begin() + static_cast<std::ptrdiff_t>(k));
  return r;
}

std::vector<double> default_lasso_alpha_grid() {
  std::vector<double> grid;
  for (int e = -8; e <= 0; ++e) grid.push_back(std::pow(10.0, e / 2.0));
  return grid;
}

LassoRanking lasso_rank_cv(const Matrix& X, const Labels& y, std::size_t k, const std::vector<double>& alphas,
                           std::size_t folds, std::uint64_t seed, const LassoOptions& opts) {
  if (alphas.empty()) throw Error(ErrorCode::InvalidArgument, "empty lasso alpha grid");
  const Vector yv = labels_as_vector(y);
  const auto fold_of = stratified_folds(y, folds, seed);
  // Descending alpha so each fold warm-starts from the sparser solution.
  std::vector<std::size_t> order(alphas.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return alphas[a] > alphas[b]; });

  std::vector<double> mse(alphas.size(), 0.0);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < y.size(); ++i) (fold_of[i] == f ? va : tr).push_back(i);
    if (tr.empty() || va.empty()) throw Error(ErrorCode::DegenerateFold, "lasso CV fold is empty");
    const Matrix Xtr = select_rows(X, tr);
    const Matrix Xva = select_rows(X, va);
    Vector ytr(ix(tr.size())), yva(ix(va.size()));
    for (std::size_t i = 0; i < tr.size(); ++i) ytr(ix(i)) = yv(ix(tr[i]));
    for (std::size_t i = 0; i < va.size(); ++i) yva(ix(i)) = yv(ix(va[i]));
    Vector warm = Vector::Zero(X.cols());
    for (auto a : order) {
      const auto fit = lasso_fit(Xtr, ytr, alphas[a], opts, &warm);
      warm = fit.beta;
      const Vector pred = (Xva * fit.beta).array() + fit.intercept;
      mse[a] += (yva - pred).squaredNorm() / static_cast<double>(va.size()) / static_cast<double>(folds);
    }
  }
  std::size_t best = order[0];
  for (auto a : order) {
    if (mse[a] < mse[best]) best = a;
  }
  auto r = lasso_rank(X, y, alphas[best], k, opts);
  r.cv_alphas = alphas;
  r.cv_mse = mse;
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> minority_neighbors(const Matrix& X, const std::vector<std::size_t>& minority,
                                                         std::size_t k) {
  const std::size_t m = minority.size();
  std::vector<std::vector<std::size_t>> out(m);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t a = 0; a < m; ++a) {
    cand.clear();
    const auto xa = X.row(ix(minority[a]));
    for (std::size_t b = 0; b < m; ++b) {
      if (b == a) continue;
      cand.emplace_back((X.row(ix(minority[b])) - xa).squaredNorm(), minority[b]);
    }
    const std::size_t kk = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
    for (std::size_t t = 0; t < kk; ++t) out[a].push_back(cand[t].second);
  }
  return out;
}

SmoteResult smote(const Matrix& X, const Labels& y, const SmoteConfig& cfg) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw Error(ErrorCode::ShapeMismatch, "SMOTE X/y mismatch");
  std::vector<std::size_t> cls[2];
  for (std::size_t i = 0; i < y.size(); ++i) cls[y[i] == 1 ? 1 : 0].push_back(i);
  if (cls[0].empty() || cls[1].empty()) throw Error(ErrorCode::SingleClassInput, "SMOTE needs both classes");
  if (cfg.k_neighbors < 1) throw Error(ErrorCode::InvalidArgument, "SMOTE k_neighbors must be >= 1");

  SmoteResult res;
  res.minority_class = cls[1].size() <= cls[0].size() ? 1 : 0;
  const auto& minority = cls[res.minority_class];
  const auto& majority = cls[1 - res.minority_class];
  res.n_original = y.size();
  const std::size_t needed = majority.size() - minority.size();
  if (needed > 0 && minority.size() <= cfg.k_neighbors) {
    throw Error(ErrorCode::TooFewMinority, "SMOTE needs more than k_neighbors=" + std::to_string(cfg.k_neighbors) +
                                               " minority rows, got " + std::to_string(minority.size()));
  }
  if (needed > 0) res.neighbors = minority_neighbors(X, minority, cfg.k_neighbors);

  res.synthetic.reserve(needed);
  for (std::size_t t = 0; t < needed; ++t) {
    Rng rng(derive_seed(cfg.seed, t));
    const std::size_t base = uniform_index(rng, minority.size());
    const auto& nbrs = res.neighbors[base];
    const std::size_t nn = nbrs[uniform_index(rng, nbrs.size())];
    res.synthetic.push_back({minority[base], nn, uniform01(rng)});
  }
  res.X = apply_smote_samples(X, res.synthetic);
  res.y = y;
  res.y.insert(res.y.end(), needed, res.minority_class);
  return res;
}

Matrix apply_smote_samples(const Matrix& X, const std::vector<SmoteSample>& samples) {
  Matrix out(X.rows() + ix(samples.size()), X.cols());
  out.topRows(X.rows()) = X;
  for (std::size_t t = 0; t < samples.size(); ++t) {
    const auto& s = samples[t];
    const auto x = X.row(ix(s.base));
    out.row(X.rows() + ix(t)) = x + s.u * (X.row(ix(s.neighbor)) - x);
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const IterativeImputerModel& m) {
  nlohmann::json regs = nlohmann::json::array();
  for (const auto& r : m.regressors) {
    regs.push_back({{"target", r.target},
                    {"predictors", r.predictors},
                    {"coef", io::to_json(r.coef)},
                    {"intercept", r.intercept}});
  }
  return {{"means", io::to_json(m.means)}, {"regressors", regs},   {"max_rounds", m.max_rounds},
          {"tol", m.tol},                  {"rounds_run", m.rounds_run}, {"converged", m.converged}};
}

nlohmann::json to_json(const KnnImputerModel& m, bool include_reference) {
  nlohmann::json j = {{"k", m.k},
                      {"target_columns", m.target_columns},
                      {"center", io::to_json(m.center)},
                      {"scale", io::to_json(m.scale)},
                      {"reference_rows", m.reference.rows()}};
  if (include_reference) j["reference"] = io::to_json(m.reference);
  return j;
}

nlohmann::json to_json(const StandardScalerModel& m) {
  nlohmann::json j = {{"mean", io::to_json(m.mean)}, {"sd", io::to_json(m.sd)}, {"constant_columns", m.constant_columns()}};
  std::vector<std::size_t> pass;
  for (std::size_t j = 0; j < m.passthrough.size(); ++j) if (m.passthrough[j]) pass.push_back(j);
  j["passthrough_columns"] = pass;
  return j;
}

nlohmann::json to_json(const PreprocessConfig& c) {
  nlohmann::json j = {{"independent_per_split", c.independent_per_split},
                      {"smote_eval_sets", c.smote_eval_sets},
                      {"top_k", c.top_k},
                      {"knn_k", c.knn_k},
                      {"smote_k", c.smote_k},
                      {"imputer_max_rounds", c.imputer.max_rounds},
                      {"imputer_tol", c.imputer.tol},
                      {"lasso_alphas", c.lasso_alphas},
                      {"lasso_folds", c.lasso_folds},
                      {"seed", c.seed}};
  if (c.lasso_alpha) j["lasso_alpha"] = *c.lasso_alpha;
  return j;
}

PreprocessConfig preprocess_config_from_json(const nlohmann::json& j) {
  PreprocessConfig c;
  c.independent_per_split = j.value("independent_per_split", c.independent_per_split);
  c.smote_eval_sets = j.value("smote_eval_sets", c.smote_eval_sets);
  c.top_k = j.value("top_k", c.top_k);
  c.knn_k = j.value("knn_k", c.knn_k);
  c.smote_k = j.value("smote_k", c.smote_k);
  c.imputer.max_rounds = j.value("imputer_max_rounds", c.imputer.max_rounds);
  c.imputer.tol = j.value("imputer_tol", c.imputer.tol);
  if (j.contains("lasso_alphas")) c.lasso_alphas = j.at("lasso_alphas").get<std::vector<double>>();
  c.lasso_folds = j.value("lasso_folds", c.lasso_folds);
  if (j.contains("lasso_alpha") && !j.at("lasso_alpha").is_null()) c.lasso_alpha = j.at("lasso_alpha").get<double>();
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

struct FittedImputation {
  IterativeImputerModel numeric;
  KnnImputerModel categorical;
  StandardScalerModel scaler;
  bool has_numeric = false;
  bool has_categorical = false;
};

struct ColumnGroups {
  std::vector<std::size_t> numeric;
  std::vector<std::size_t> categorical;
};

ColumnGroups column_groups(const FeatureSchema& schema) {
  ColumnGroups g;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    (schema.features[j].dtype == FeatureType::Numeric ? g.numeric : g.categorical).push_back(j);
  }
  return g;
}

// Numeric imputation: chained equations when there are >= 2 numeric
// columns, otherwise mean fill.
Matrix impute_numeric(const Matrix& rows, const ColumnGroups& g, const IterativeImputerModel& model) {
  Matrix out = rows;
  if (g.numeric.empty()) return out;
  const Matrix filled = model.transform(select_cols(rows, g.numeric));
  for (std::size_t c = 0; c < g.numeric.size(); ++c) out.col(ix(g.numeric[c])) = filled.col(ix(c));
  return out;
}

FittedImputation fit_imputation(const Dataset& source, const ColumnGroups& g, const PreprocessConfig& cfg,
                                const FitObserver& observer, std::string_view split, Matrix& imputed_source) {
  FittedImputation f;
  if (!g.numeric.empty()) {
    const Matrix num = select_cols(source.rows, g.numeric);
    if (observer) observer("iterative_imputer", split, num);
    IterativeImputerOptions opts = cfg.imputer;
    if (g.numeric.size() < 2) opts.max_rounds = 0;
    f.numeric = fit_iterative_imputer(num, opts);
    f.has_numeric = true;
  }
  Matrix partly = impute_numeric(source.rows, g, f.numeric);
  if (!g.categorical.empty()) {
    if (observer) observer("knn_imputer", split, partly);
    f.categorical = fit_knn_imputer(partly, g.categorical, cfg.knn_k);
    f.has_categorical = true;
    imputed_source = impute_knn(partly, f.categorical);
  } else {
    imputed_source = partly;
  }
  if (observer) observer("scaler", split, imputed_source);
  // Only numeric columns are standardised; 0/1 columns keep the same two
  // levels in every split.
  std::vector<bool> passthrough(source.p(), false);
  for (auto j : g.categorical) passthrough[j] = true;
  f.scaler = fit_scaler(imputed_source, std::move(passthrough));
  return f;
}

Matrix apply_imputation(const Dataset& ds, const ColumnGroups& g, const FittedImputation& f) {
  Matrix m = impute_numeric(ds.rows, g, f.numeric);
  if (f.has_categorical) m = impute_knn(m, f.categorical);
  return m;
}

nlohmann::json imputation_counts(const Dataset& ds) {
  nlohmann::json counts = nlohmann::json::object();
  for (std::size_t j = 0; j < ds.p(); ++j) {
    counts[ds.schema.features[j].name] = static_cast<std::size_t>(ds.rows.col(ix(j)).array().isNaN().count());
  }
  return counts;
}

PreparedSplit prepare(const std::string& name, const Dataset& ds, const Matrix& imputed, const FittedImputation& fit,
                      const std::vector<std::size_t>& selected, bool oversample, std::size_t smote_k,
                      std::uint64_t seed, std::string_view fit_source) {
  PreparedSplit s;
  s.name = name;
  s.ids = ds.ids;
  s.imputed_full = imputed;
  const Matrix scaled = apply_scaler(fit.scaler, imputed);
  s.X = select_cols(scaled, selected);
  s.X_unscaled = select_cols(imputed, selected);
  s.y = ds.labels;
  s.n_original = ds.n();

  std::vector<std::string> constant_names;
  for (auto c : fit.scaler.constant_columns()) constant_names.push_back(ds.schema.features[c].name);
  std::size_t pos = 0;
  for (int v : ds.labels) pos += v == 1;
  s.report = {{"rows", ds.n()},
              {"fit_source", fit_source},
              {"imputed_per_column", imputation_counts(ds)},
              {"constant_columns", constant_names},
              {"class_counts_before", {{"survive", ds.n() - pos}, {"die", pos}}}};

  if (oversample && ds.n() > 0) {
    const std::size_t minority = std::min(pos, ds.n() - pos);
    if (minority >= 2) {
      SmoteConfig sc{std::min(smote_k, minority - 1), seed};
      auto res = smote(s.X, s.y, sc);
      s.X = res.X;
      s.y = res.y;
      s.X_unscaled = apply_smote_samples(s.X_unscaled, res.synthetic);
      s.report["smote"] = {{"k_neighbors", sc.k_neighbors},
                           {"synthetic", res.synthetic.size()},
                           {"rows_after", res.y.size()}};
    } else {
      s.report["smote"] = {{"skipped", "fewer than two minority rows"}};
    }
  }
  std::size_t pos_after = 0;
  for (int v : s.y) pos_after += v == 1;
  s.report["class_counts_after"] = {{"survive", s.y.size() - pos_after}, {"die", pos_after}};
  return s;
}

}  // namespace

PreprocessOutput run_preprocess(const SplitBundle& bundle, const PreprocessConfig& cfg, const FitObserver& observer) {
  const auto& schema = bundle.train.schema;
  const auto groups = column_groups(schema);
  PreprocessOutput out;

  Matrix train_imputed;
  const auto train_fit = fit_imputation(bundle.train, groups, cfg, observer, "train", train_imputed);
  // Lasso ranks by |beta|, so every column is standardised for it.
  const Matrix train_scaled = apply_scaler(fit_scaler(train_imputed), train_imputed);

  const std::size_t k = std::min(cfg.top_k, schema.size());
  if (observer) observer("lasso", "train", train_scaled);
  out.lasso = cfg.lasso_alpha
                  ? lasso_rank(train_scaled, bundle.train.labels, *cfg.lasso_alpha, k)
                  : lasso_rank_cv(train_scaled, bundle.train.labels, k, cfg.lasso_alphas, cfg.lasso_folds,
                                  derive_seed(cfg.seed, 100));
  out.selected = out.lasso.selected;
  for (auto c : out.selected) out.selected_names.push_back(schema.features[c].name);

  out.train = prepare("train", bundle.train, train_imputed, train_fit, out.selected, true, cfg.smote_k,
                      derive_seed(cfg.seed, 0), "train");

  nlohmann::json fitted = nlohmann::json::object();
  auto record_fit = [&](const std::string& split, const FittedImputation& f) {
    nlohmann::json j = {{"scaler", to_json(f.scaler)}};
    if (f.has_numeric) j["iterative_imputer"] = to_json(f.numeric);
    if (f.has_categorical) j["knn_imputer"] = to_json(f.categorical);
    fitted[split] = std::move(j);
  };
  record_fit("train", train_fit);

  auto eval_split = [&](const std::string& name, const Dataset& ds, std::uint64_t stream) {
    if (ds.n() == 0) {
      PreparedSplit empty;
      empty.name = name;
      return empty;
    }
    if (cfg.independent_per_split) {
      Matrix imputed;
      const auto f = fit_imputation(ds, groups, cfg, observer, name, imputed);
      record_fit(name, f);
      return prepare(name, ds, imputed, f, out.selected, cfg.smote_eval_sets, cfg.smote_k,
                     derive_seed(cfg.seed, stream), name);
    }
    return prepare(name, ds, apply_imputation(ds, groups, train_fit), train_fit, out.selected, cfg.smote_eval_sets,
                   cfg.smote_k, derive_seed(cfg.seed, stream), "train");
  };
  out.internal_test = eval_split("internal_test", bundle.internal_test, 1);
  out.external = eval_split("external", bundle.external, 2);

  nlohmann::json ranking = nlohmann::json::array();
  for (auto c : out.lasso.ranking) {
    ranking.push_back({{"feature", schema.features[c].name}, {"beta", out.lasso.beta(ix(c))}});
  }
  out.pipeline = {{"version", kPipelineArtifactVersion},
                  {"config", to_json(cfg)},
                  {"features", schema.names()},
                  {"fitted", fitted},
                  {"lasso", {{"alpha", out.lasso.alpha},
                             {"kkt_residual", out.lasso.kkt_residual},
                             {"cv_alphas", out.lasso.cv_alphas},
                             {"cv_mse", out.lasso.cv_mse},
                             {"ranking", ranking}}},
                  {"selected", out.selected_names}};
  out.report = {{"train", out.train.report},
                {"internal_test", out.internal_test.report},
                {"external", out.external.report},
                {"selected", out.selected_names}};
  return out;
}

}  // namespace mortpred
