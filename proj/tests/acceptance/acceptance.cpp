// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "mock_chat_server.hpp"
#include "mortpred/cli.hpp"
#include "mortpred/error.hpp"
#include "mortpred/explain.hpp"
#include "mortpred/io.hpp"
#include "mortpred/llm.hpp"
#include "mortpred/metrics.hpp"
#include "mortpred/models.hpp"
#include "mortpred/narrative.hpp"
#include "mortpred/preprocess.hpp"
#include "mortpred/synth.hpp"
#include "oracles.hpp"

using namespace mortpred;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Collects failures within one criterion; the first few are reported.
struct Check {
  std::vector<std::string> failures;
  std::vector<std::string> notes;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

Matrix standardized(const Matrix& X) { return apply_scaler(fit_scaler(X), X); }

// --- 1. metric oracle ---------------------------------------------------------

void criterion_1(Check& c) {
  Rng rng(101);
  const auto t0 = Clock::now();
  double worst_identity = 0.0;
  for (int t = 0; t < 1000; ++t) {
    // Random label vectors; the oracle tallies them independently.
    const std::size_t n = 1 + uniform_index(rng, 200);
    const double base = uniform01(rng), hit = uniform01(rng);
    Labels truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = uniform01(rng) < base ? 1 : 0;
      pred[i] = uniform01(rng) < hit ? truth[i] : 1 - truth[i];
    }
    const auto r = binary_metrics(confusion(truth, pred));
    const auto o = oracle::rates_from_counts(oracle::count_outcomes(truth, pred));
    c.expect(r.accuracy == o.accuracy && r.precision == o.precision && r.recall == o.recall &&
                 r.specificity == o.specificity && r.f1 == o.f1,
             "metrics differ from brute force at trial " + std::to_string(t));
    const double identity = std::abs(r.f1 * (r.precision + r.recall) - 2.0 * r.precision * r.recall);
    worst_identity = std::max(worst_identity, identity);
  }
  const double elapsed = seconds_since(t0);
  c.expect(worst_identity <= 1e-12, "F1 identity residual " + sci(worst_identity));
  c.expect(elapsed < 1.0, "runtime " + num(elapsed) + " s");
  c.note("1000 matrices, max |f1(p+r)-2pr| = " + sci(worst_identity) + ", " + num(elapsed, 3) + " s");
}

// --- 2. reference F1 ------------------------------------------------------------

void criterion_2(Check& c) {
  // tp/(tp+fp) = 21/25 = 0.84 and tp/(tp+fn) = 21/75 = 0.28.
  ConfusionMatrix cm;
  cm.tp = 21;
  cm.fp = 4;
  cm.fn = 54;
  cm.tn = 100;
  const auto r = binary_metrics(cm);
  c.expect(std::abs(r.precision - 0.84) < 1e-12 && std::abs(r.recall - 0.28) < 1e-12, "construction");
  // 2*0.84*0.28/1.12 = 0.42 lies on the inclusive edge of the band; the
  // 1e-12 absorbs the binary representation of 0.43 - 0.42.
  c.expect(std::abs(r.f1 - 0.43) <= 0.01 + 1e-12, "F1 " + num(r.f1) + " not within 0.01 of 0.43");
  c.note("precision 0.84, recall 0.28 -> F1 " + num(r.f1) + " (reported 0.43)");
}

// --- 3. AUC equivalence ------------------------------------------------------------

void criterion_3(Check& c) {
  Rng rng(303);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 5 + uniform_index(rng, 80);
    Labels y(n);
    Vector s(static_cast<Eigen::Index>(n));
    std::vector<double> sv(n);
    // Scores on a coarse grid so ties are frequent.
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = uniform01(rng) < 0.4 ? 1 : 0;
      sv[i] = static_cast<double>(uniform_index(rng, 12)) / 11.0;
      s(static_cast<Eigen::Index>(i)) = sv[i];
    }
    y[0] = 1;
    y[1] = 0;
    const double a = roc_auc(y, s).auc;
    const double o = oracle::mann_whitney_auc(y, sv);
    worst = std::max(worst, std::abs(a - o));
  }
  c.expect(worst <= 1e-12, "max |trapezoid - Mann-Whitney| = " + sci(worst));
  c.note("200 tied score vectors, max difference " + sci(worst));
}

// --- 4. gradients --------------------------------------------------------------------

void criterion_4(Check& c) {
  Rng rng(404);
  Matrix X;
  Labels y;
  fixtures::blobs(rng, 20, 4, 0.5, X, y);
  double worst_lr = 0.0, worst_mlp = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Vector theta = fixtures::random_matrix(rng, 5, 1).col(0);
    const auto lg = logistic_objective(theta, X, y, 0.7);
    const Vector fd =
        oracle::finite_difference([&](const Vector& th) { return logistic_objective(th, X, y, 0.7).loss; }, theta);
    worst_lr = std::max(worst_lr, rel_err(lg.grad, fd));
  }
  const auto sizes = mlp_layer_sizes(4, {5, 3});
  const long n_params = 4 * 5 + 5 + 5 * 3 + 3 + 3 + 1;
  for (int t = 0; t < 20; ++t) {
    const Vector theta = fixtures::random_matrix(rng, n_params, 1).col(0);
    const auto lg = mlp_objective(theta, sizes, X, y, 0.3);
    const Vector fd = oracle::finite_difference(
        [&](const Vector& th) { return mlp_objective(th, sizes, X, y, 0.3).loss; }, theta);
    worst_mlp = std::max(worst_mlp, rel_err(lg.grad, fd));
  }
  c.expect(worst_lr <= 1e-4, "LR relative error " + sci(worst_lr));
  c.expect(worst_mlp <= 1e-4, "MLP relative error " + sci(worst_mlp));
  c.note("max relative error LR " + sci(worst_lr) + ", MLP " + sci(worst_mlp));
}

// --- 5. Lasso -----------------------------------------------------------------------------

void criterion_5(Check& c) {
  Rng rng(505);
  {
    const Matrix X = standardized(fixtures::random_matrix(rng, 30, 1));
    const Vector y = 2.0 * X.col(0) + fixtures::random_matrix(rng, 30, 1).col(0);
    const double z = X.col(0).dot(y) / 30.0;
    for (double alpha : {0.05, 0.3, 1.0, 5.0}) {
      const double got = lasso_fit(X, y, alpha).beta(0);
      c.expect(std::abs(got - soft_threshold(z, alpha)) <= 1e-8, "1-D soft threshold at alpha " + num(alpha));
      // Independent closed form: sign(z) * max(|z| - alpha, 0).
      const double closed = (z > 0 ? 1.0 : -1.0) * std::max(std::abs(z) - alpha, 0.0);
      c.expect(std::abs(got - closed) <= 1e-8, "1-D closed form at alpha " + num(alpha));
    }
  }
  double worst_kkt = 0.0;
  for (int t = 0; t < 50; ++t) {
    const long n = 20 + static_cast<long>(uniform_index(rng, 60));
    const long p = 2 + static_cast<long>(uniform_index(rng, 10));
    const Matrix X = standardized(fixtures::random_matrix(rng, n, p));
    const Vector y = X * fixtures::random_matrix(rng, p, 1).col(0) + fixtures::random_matrix(rng, n, 1).col(0);
    const double alpha = lasso_alpha_max(X, y) * (0.01 + 0.9 * uniform01(rng));
    const auto fit = lasso_fit(X, y, alpha);
    worst_kkt = std::max(worst_kkt, lasso_kkt_residual(X, y, fit.beta, fit.intercept, alpha));
  }
  c.expect(worst_kkt <= 1e-6, "KKT residual " + sci(worst_kkt));
  {
    const Matrix X = standardized(fixtures::random_matrix(rng, 40, 5));
    const Vector y = X.col(0) + 0.5 * fixtures::random_matrix(rng, 40, 1).col(0);
    const double amax = lasso_alpha_max(X, y);
    const auto fit = lasso_fit(X, y, amax);
    c.expect((fit.beta.array() == 0.0).all(), "beta not exactly zero at alpha_max");
  }
  {
    const Matrix X = standardized(fixtures::random_matrix(rng, 80, 8));
    const Vector y = X * Vector::LinSpaced(8, -1, 1) + fixtures::random_matrix(rng, 80, 1).col(0);
    long prev = 9;
    for (double a : {0.001, 0.01, 0.05, 0.1, 0.2, 0.3, 0.6, 1.0, 2.0}) {
      const long nnz = (lasso_fit(X, y, a).beta.array() != 0.0).count();
      c.expect(nnz <= prev, "support grew at alpha " + num(a));
      prev = nnz;
    }
  }
  c.note("max KKT residual over 50 problems " + sci(worst_kkt));
}

// --- 6. SVM ---------------------------------------------------------------------------------

void criterion_6(Check& c) {
  Rng rng(606);
  double worst_violation = 0.0;
  std::size_t compared = 0, agreed = 0;
  for (int t = 0; t < 20; ++t) {
    const long per_class = 6 + static_cast<long>(uniform_index(rng, 15));  // n <= 40
    const long p = 2 + static_cast<long>(uniform_index(rng, 3));
    Matrix X;
    Labels y;
    fixtures::blobs(rng, per_class, p, 0.6 + uniform01(rng), X, y);
    SvmParams sp;
    sp.C = 0.5 + 2.0 * uniform01(rng);
    sp.tol = 1e-6;
    SvmDiagnostics d;
    const auto m = fit_svm(X, y, sp, nullptr, &d);
    worst_violation = std::max(worst_violation, d.max_violation);
    c.expect(d.max_violation <= sp.tol, "KKT violation " + sci(d.max_violation) + " > tol");
    c.expect(d.alpha.minCoeff() >= 0.0 && d.alpha.maxCoeff() <= sp.C, "dual variable outside [0, C]");

    const auto qp = oracle::svm_dual_qp(X, y, sp.C, d.gamma);
    Matrix Q(X.rows() + 20, X.cols());
    Q << X, fixtures::random_matrix(rng, 20, p) * 1.5;
    const Vector f = svm_decision(m, Q);
    for (Eigen::Index i = 0; i < Q.rows(); ++i) {
      ++compared;
      agreed += (f(i) >= 0) == (qp.decision(Q.row(i)) >= 0);
    }
  }
  c.expect(agreed == compared, std::to_string(compared - agreed) + " label disagreements with the QP oracle");
  c.note("20 problems, max violation " + sci(worst_violation) + ", label agreement " + std::to_string(agreed) + "/" +
         std::to_string(compared));
}

// --- 7. GBT -----------------------------------------------------------------------------------

void criterion_7(Check& c) {
  Rng rng(707);
  Matrix X;
  Labels y;
  fixtures::blobs(rng, 80, 5, 0.7, X, y);
  FitInfo info;
  BoostParams bp;
  bp.n_rounds = 100;
  fit_boosted(X, y, bp, &info);
  c.expect(info.loss_history.size() == 101, "loss history length");
  for (std::size_t r = 1; r < info.loss_history.size(); ++r) {
    c.expect(info.loss_history[r] <= info.loss_history[r - 1], "loss increased at round " + std::to_string(r));
  }
  // Two positives at base score 0.5: g = p - y = -0.5 each, h = p(1-p) = 0.25 each.
  // w = -G/(H+lambda) = 1 / (0.5 + 1).
  Matrix X2(2, 1);
  X2 << 1, 2;
  BoostParams one;
  one.n_rounds = 1;
  const auto m = fit_boosted(X2, {1, 1}, one);
  const double expected = -(-0.5 - 0.5) / (0.25 + 0.25 + 1.0);
  c.expect(m.trees.size() == 1 && m.trees[0].nodes.size() == 1, "single leaf tree");
  if (!m.trees.empty()) {
    c.expect(std::abs(m.trees[0].nodes[0].value - expected) <= 1e-10, "leaf weight " + num(m.trees[0].nodes[0].value, 12));
  }
  c.expect(std::abs(newton_leaf_weight(-1.0, 0.5, 1.0) - expected) <= 1e-10, "newton_leaf_weight");

  auto spec = default_spec(Family::GBT);
  std::get<BoostParams>(spec.params).n_rounds = 0;
  const auto zero = fit(spec, X, y);
  const Vector s = predict_score(zero, X);
  c.expect((s.array() == 0.5).all(), "zero-round scores not 0.5");
  c.note("loss " + num(info.loss_history.front()) + " -> " + num(info.loss_history.back()) + " over 100 rounds, leaf " +
         num(expected, 6));
}

// --- 8. SMOTE -----------------------------------------------------------------------------------

void criterion_8(Check& c) {
  Rng rng(808);
  const Matrix X = fixtures::random_matrix(rng, 6118, 4);
  Labels y(6118, 0);
  std::vector<std::size_t> idx(6118);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle(idx, rng);
  for (std::size_t i = 0; i < 1238; ++i) y[idx[i]] = 1;
  const auto r = smote(X, y, {5, 42});
  std::size_t pos = 0;
  for (int v : r.y) pos += v;
  c.expect(r.y.size() == 9760, "total " + std::to_string(r.y.size()));
  c.expect(pos == 4880 && r.y.size() - pos == 4880, "classes not 4880/4880");
  double worst = 0.0;
  for (std::size_t t = 0; t < r.synthetic.size(); ++t) {
    const auto& s = r.synthetic[t];
    c.expect(y[s.base] == 1 && y[s.neighbor] == 1, "endpoint not minority");
    c.expect(s.u >= 0.0 && s.u <= 1.0, "interpolation weight outside [0,1]");
    const Eigen::RowVectorXd a = X.row(static_cast<Eigen::Index>(s.base));
    const Eigen::RowVectorXd b = X.row(static_cast<Eigen::Index>(s.neighbor));
    const Eigen::RowVectorXd z = r.X.row(static_cast<Eigen::Index>(6118 + t));
    // Distance from z to the segment [a, b], by projection.
    const Eigen::RowVectorXd d = b - a;
    const double len2 = d.squaredNorm();
    const double u = len2 > 0 ? std::clamp((z - a).dot(d) / len2, 0.0, 1.0) : 0.0;
    worst = std::max(worst, (z - (a + u * d)).norm());
  }
  // The partner of each of the first 200 samples is among the base's 5
  // nearest minority rows, by brute force.
  std::vector<std::size_t> minority;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1) minority.push_back(i);
  }
  Matrix M(static_cast<Eigen::Index>(minority.size()), X.cols());
  for (std::size_t i = 0; i < minority.size(); ++i) M.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(minority[i]));
  for (std::size_t t = 0; t < std::min<std::size_t>(200, r.synthetic.size()); ++t) {
    const auto& s = r.synthetic[t];
    const auto near = oracle::brute_knn(M, X.row(static_cast<Eigen::Index>(s.base)), 6);
    bool found = false;
    for (std::size_t q : near) found |= minority[q] == s.neighbor && minority[q] != s.base;
    c.expect(found, "neighbour of synthetic sample " + std::to_string(t) + " not among the 5 nearest");
  }
  c.expect(worst <= 1e-9, "max distance to segment " + sci(worst));
  c.note("6118 rows (1238 minority / 4880 majority) -> " + std::to_string(r.y.size()) + ", " +
         std::to_string(r.synthetic.size()) + " synthetic, max segment distance " + sci(worst));
}

// --- 9. SHAP ----------------------------------------------------------------------------------------

void criterion_9(Check& c) {
  Rng rng(909);
  double worst_oracle = 0.0;
  for (std::size_t p : {2, 3, 4, 5, 6, 7, 8}) {
    const Vector w = fixtures::random_matrix(rng, static_cast<long>(p), 1).col(0);
    const Matrix bg = fixtures::random_matrix(rng, 3, static_cast<long>(p));
    const Eigen::RowVectorXd x = fixtures::random_matrix(rng, 1, static_cast<long>(p)).row(0);
    // Nonlinear score with interactions.
    auto score_row = [&](const Eigen::RowVectorXd& r) {
      double s = r.dot(w.transpose());
      s += std::tanh(r(0) * r(p - 1)) + 0.3 * r(1) * r(1);
      return s;
    };
    BatchScoreFn f = [&](const Matrix& M) {
      Vector out(M.rows());
      for (Eigen::Index i = 0; i < M.rows(); ++i) out(i) = score_row(M.row(i));
      return out;
    };
    KernelShapConfig kc;
    kc.mode = ShapMode::Exhaustive;
    const auto got = kernel_shap(f, x, bg, kc);
    const auto expect = oracle::permutation_shapley(p, [&](unsigned mask) {
      double v = 0.0;
      for (Eigen::Index b = 0; b < bg.rows(); ++b) {
        Eigen::RowVectorXd r = bg.row(b);
        for (std::size_t j = 0; j < p; ++j) {
          if (mask & (1u << j)) r(static_cast<Eigen::Index>(j)) = x(static_cast<Eigen::Index>(j));
        }
        v += score_row(r);
      }
      return v / static_cast<double>(bg.rows());
    });
    for (std::size_t j = 0; j < p; ++j) worst_oracle = std::max(worst_oracle, std::abs(got.phi(static_cast<Eigen::Index>(j)) - expect[j]));
  }
  c.expect(worst_oracle <= 1e-10, "exhaustive vs permutation oracle " + sci(worst_oracle));

  // p = 40, 2048 sampled coalitions: local accuracy.
  double worst_local = 0.0;
  {
    const long p = 40;
    const Vector w = fixtures::random_matrix(rng, p, 1).col(0);
    BatchScoreFn f = [&](const Matrix& M) {
      Vector z = M * w;
      return Vector(z.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); }));
    };
    const Matrix bg = fixtures::random_matrix(rng, 20, p);
    for (int t = 0; t < 5; ++t) {
      const Eigen::RowVectorXd x = fixtures::random_matrix(rng, 1, p).row(0);
      KernelShapConfig kc;
      kc.mode = ShapMode::Sampled;
      kc.n_samples = 2048;
      kc.seed = static_cast<std::uint64_t>(t);
      const auto r = kernel_shap(f, x, bg, kc);
      worst_local = std::max(worst_local, std::abs(r.base + r.phi.sum() - r.fx));
    }
  }
  c.expect(worst_local <= 1e-6, "local accuracy " + sci(worst_local));

  // Linear closed form with one background row.
  double worst_linear = 0.0;
  {
    const long p = 6;
    const Vector w = fixtures::random_matrix(rng, p, 1).col(0);
    const Matrix b = fixtures::random_matrix(rng, 1, p);
    const Eigen::RowVectorXd x = fixtures::random_matrix(rng, 1, p).row(0);
    BatchScoreFn f = [&](const Matrix& M) { return Vector(M * w); };
    for (auto mode : {ShapMode::Exhaustive, ShapMode::Sampled}) {
      KernelShapConfig kc;
      kc.mode = mode;
      kc.n_samples = 64;
      const auto r = kernel_shap(f, x, b, kc);
      for (long j = 0; j < p; ++j) worst_linear = std::max(worst_linear, std::abs(r.phi(j) - w(j) * (x(j) - b(0, j))));
    }
  }
  c.expect(worst_linear <= 1e-9, "linear closed form " + sci(worst_linear));

  // Dummy and symmetry (exhaustive): features 1 and 2 interchangeable, 3 ignored.
  {
    BatchScoreFn f = [](const Matrix& M) {
      Vector out(M.rows());
      for (Eigen::Index i = 0; i < M.rows(); ++i) out(i) = M(i, 0) * (M(i, 1) + M(i, 2)) + std::sin(M(i, 1) * M(i, 2));
      return out;
    };
    Matrix bg(2, 4);
    bg << 0.1, 0.3, 0.3, 5.0, -0.4, 0.7, 0.7, -2.0;
    Eigen::RowVectorXd x(4);
    x << 1.2, 0.9, 0.9, 8.0;
    KernelShapConfig kc;
    kc.mode = ShapMode::Exhaustive;
    const auto r = kernel_shap(f, x, bg, kc);
    c.expect(std::abs(r.phi(1) - r.phi(2)) <= 1e-8, "symmetry");
    c.expect(std::abs(r.phi(3)) <= 1e-8, "dummy");
  }

  // Percentage closure on random attributions.
  double worst_closure = 0.0;
  for (int t = 0; t < 20; ++t) {
    ShapMatrix sm;
    sm.phi = fixtures::random_matrix(rng, 10, 7);
    for (int j = 0; j < 7; ++j) sm.feature_names.push_back("f" + std::to_string(j));
    const auto s = impact_percentages(sm);
    double total = 0.0;
    for (double v : s.impact_pct) total += v;
    worst_closure = std::max(worst_closure, std::abs(total - 100.0));
    const auto agg = aggregate_impacts({s, s}, "g");
    total = 0.0;
    for (double v : agg.impact_pct) total += v;
    worst_closure = std::max(worst_closure, std::abs(total - 100.0));
  }
  c.expect(worst_closure <= 1e-6, "percentage closure " + sci(worst_closure));
  c.note("oracle " + sci(worst_oracle) + ", local accuracy p=40 " + sci(worst_local) + ", linear " + sci(worst_linear) +
         ", closure " + sci(worst_closure));
}

// --- 10. synthetic cohort reproduction ------------------------------------------------------------

void criterion_10(Check& c, const fs::path& work) {
  const auto t0 = Clock::now();
  const json cfg = {{"seed", 42},
                    {"synth", {{"n", 9000}}},
                    {"train", {{"models", {"LR", "DT", "KNN", "RF", "GBT"}}}},
                    {"curve", {{"models", {"RF", "GBT"}}}}};
  const auto config = cli::run_config_from_json(cfg, work);
  std::ostringstream log;
  for (const char* cmd : {"synth", "preprocess", "train", "evaluate", "curve"}) cli::run_command(cmd, config, log);
  const auto out = work / config.output;
  std::map<std::string, double> auc;
  for (const char* m : {"LR", "DT", "KNN", "RF", "GBT"}) {
    auc[m] = io::read_json(out / "metrics" / (std::string(m) + ".json")).at("internal_test_original").at("auc").get<double>();
  }
  const double bayes = io::read_json(out / "metrics" / "bayes.json").at("internal_test_original_auc").get<double>();
  for (const char* top : {"RF", "GBT"}) {
    for (const char* base : {"LR", "DT", "KNN"}) {
      c.expect(auc[top] >= auc[base], std::string(top) + " AUC below " + base);
    }
  }
  c.expect(bayes - auc["GBT"] <= 0.05, "GBT AUC " + num(auc["GBT"]) + " more than 0.05 below Bayes " + num(bayes));

  const auto curve = io::read_json(out / "curve" / "learning_curve.json");
  std::map<std::pair<std::string, std::size_t>, double> acc;
  for (const auto& cell : curve.at("cells")) {
    acc[{cell.at("model").get<std::string>(), cell.at("size").get<std::size_t>()}] = cell.at("accuracy").get<double>();
  }
  std::string curve_note;
  for (const char* m : {"RF", "GBT"}) {
    const double gain = acc[{m, 2476}] - acc[{m, 20}];
    c.expect(gain >= 0.05, std::string(m) + " learning-curve gain " + num(gain));
    curve_note += std::string(" ") + m + " " + num(acc[{m, 20}], 3) + "->" + num(acc[{m, 2476}], 3);
  }
  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 600.0, "runtime " + num(elapsed, 1) + " s");
  c.note("AUC (original internal-test rows): LR " + num(auc["LR"]) + " DT " + num(auc["DT"]) + " KNN " +
         num(auc["KNN"]) + " RF " + num(auc["RF"]) + " GBT " + num(auc["GBT"]) + " Bayes " + num(bayes) +
         "; accuracy n=20->2476:" + curve_note + "; " + num(elapsed, 1) + " s");
}

// --- 11. ZSC harness ---------------------------------------------------------------------------------------

std::vector<CorpusRecord> balanced_corpus(std::size_t n) {
  std::vector<CorpusRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    CorpusRecord r;
    r.patient_id = "Z" + std::to_string(i + 1);
    r.label = static_cast<int>(i % 2);
    r.narrative = "The patient's age is " + std::to_string(40 + i) + ". The patient is " + (i % 3 ? "male" : "female") + ".";
    out.push_back(r);
  }
  return out;
}

ChatEndpointConfig endpoint_for(const mock::MockChatServer& s) {
  ChatEndpointConfig e;
  e.base_url = s.base_url();
  e.api_key = "test-key";
  e.timeout_seconds = 5;
  return e;
}

ZscRunOptions quiet() {
  ZscRunOptions o;
  o.sleep = [](std::chrono::duration<double>) {};
  return o;
}

void criterion_11(Check& c, const fs::path& work) {
  const auto corpus = balanced_corpus(20);
  // Attempt bound: the endpoint never answers with a usable label.
  {
    mock::MockChatServer server(mock::scripted(json{{"default", "I cannot say."}}));
    HttpChatClient client(endpoint_for(server));
    const auto r = run_zsc(corpus, client, quiet(), work / "zsc_bound.jsonl");
    c.expect(server.request_count() == 5 * corpus.size(), "requests " + std::to_string(server.request_count()));
    std::map<std::string, int> max_attempt;
    for (const auto& q : server.requests()) max_attempt[q.patient_id] = std::max(max_attempt[q.patient_id], q.attempt);
    for (const auto& [id, a] : max_attempt) c.expect(a == 5, id + " reached attempt " + std::to_string(a));
    for (const auto& o : r.outcomes) c.expect(o.final_label == ZscLabel::Failed && o.attempts.size() == 5, "outcome not Failed after 5");
  }
  // Session isolation and payload.
  {
    mock::MockChatServer server(mock::scripted(json{{"default", "die"}}));
    HttpChatClient client(endpoint_for(server));
    const auto log = work / "zsc_die.jsonl";
    const auto r = run_zsc(corpus, client, quiet(), log);
    std::map<std::string, std::string> narrative;
    for (const auto& rec : corpus) narrative[rec.patient_id] = rec.narrative;
    for (const auto& q : server.requests()) {
      const auto& msgs = q.body.at("messages");
      std::string users;
      bool assistant = false;
      for (const auto& m : msgs) {
        assistant |= m.at("role") == "assistant";
        if (m.at("role") == "user") users += m.at("content").get<std::string>();
      }
      c.expect(!assistant, "request carries an assistant turn");
      c.expect(msgs.size() <= 2, "request carries more than system + user");
      for (const auto& [id, text] : narrative) {
        const bool present = users.find(text) != std::string::npos;
        c.expect(present == (id == q.patient_id), "narrative of " + id + " leaked into request for " + q.patient_id);
      }
      c.expect(q.body.at("temperature") == 1 && q.body.at("max_tokens") == 1024 && q.body.at("seed") == 123,
               "sampling parameters in payload");
    }
    c.expect(r.report.recall == 1.0 && r.report.specificity == 0.0 && r.report.accuracy == 0.5,
             "constant die: recall " + num(r.report.recall) + " spec " + num(r.report.specificity) + " acc " +
                 num(r.report.accuracy));
    // Resume.
    mock::MockChatServer again(mock::scripted(json{{"default", "die"}}));
    HttpChatClient client2(endpoint_for(again));
    const auto r2 = run_zsc(corpus, client2, quiet(), log);
    c.expect(again.request_count() == 0 && r2.requests == 0, "resume issued " + std::to_string(again.request_count()) + " calls");
    c.expect(r2.resumed == corpus.size(), "resumed count");
    c.note("attempt bound 5, payload temperature 1 / max_tokens 1024 / seed 123, constant die: recall " +
           num(r.report.recall, 2) + " spec " + num(r.report.specificity, 2) + " acc " + num(r.report.accuracy, 2) +
           ", resume calls " + std::to_string(again.request_count()));
  }
}

// --- 12. serializer conformance ----------------------------------------------------------------------------

void criterion_12(Check& c) {
  SynthConfig sc;
  sc.n = 1000;
  sc.missing_rate = 0.1;
  sc.seed = 1212;
  const auto syn = generate(sc);
  const auto& schema = syn.dataset.schema;
  std::map<std::string, std::string> names;
  for (const auto& f : schema.features) names[f.display_name.empty() ? f.name : f.display_name] = f.name;

  bool saw_male = false, saw_female = false, saw_shared = false;
  std::size_t checked = 0;
  for (Eigen::Index i = 0; i < syn.dataset.rows.rows(); ++i) {
    const Eigen::RowVectorXd row = syn.dataset.rows.row(i);
    const auto n = render_narrative(row, schema);
    c.expect(n.text.rfind("The patient's age is ", 0) == 0, "age fragment");
    saw_male |= n.text.find("The patient is male.") != std::string::npos;
    saw_female |= n.text.find("The patient is female.") != std::string::npos;
    saw_shared |= n.text.find(" are higher than the normal range.") != std::string::npos &&
                  n.text.find(" are lower than the normal range.") != std::string::npos;

    // Truth from the raw values alone.
    std::set<std::pair<std::string, std::string>> truth;
    for (std::size_t j = 0; j < schema.features.size(); ++j) {
      const auto& f = schema.features[j];
      const double v = row(static_cast<Eigen::Index>(j));
      if (is_missing(v)) continue;
      if (f.name == schema.age_feature) truth.emplace(f.name, std::to_string(std::lround(v)));
      else if (f.name == schema.sex_feature) truth.emplace(f.name, v == schema.male_value ? "male" : "female");
      else if (f.dtype == FeatureType::Binary) {
        if (v == 1.0) truth.emplace(f.name, "positive");
      } else if (f.normal_range) {
        if (v > f.normal_range->hi) truth.emplace(f.name, "above");
        if (v < f.normal_range->lo) truth.emplace(f.name, "below");
      }
    }
    std::set<std::pair<std::string, std::string>> parsed;
    try {
      parsed = oracle::parse_narrative(n.text, names);
    } catch (const std::exception& e) {
      c.expect(false, std::string("unparseable narrative: ") + e.what());
      continue;
    }
    c.expect(parsed == truth, "row " + std::to_string(i) + " content differs from raw values");
    // Omitted features are never mentioned.
    std::string lower = n.text;
    for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::set<std::string> mentioned;
    for (const auto& [f, s] : truth) mentioned.insert(f);
    for (const auto& f : schema.features) {
      if (mentioned.count(f.name) || f.name == schema.age_feature || f.name == schema.sex_feature) continue;
      std::string shown = f.display_name.empty() ? f.name : f.display_name;
      for (auto& ch : shown) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      // Skip names that are substrings of a mentioned name.
      bool inside_other = false;
      for (const auto& m : mentioned) {
        std::string other = schema.at(m).display_name;
        for (auto& ch : other) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        inside_other |= other.find(shown) != std::string::npos;
      }
      if (!inside_other) c.expect(lower.find(shown) == std::string::npos, "omitted feature " + f.name + " is mentioned");
    }
    ++checked;
  }
  c.expect(saw_male && saw_female, "male/female wording");
  c.expect(saw_shared, "no shared-predicate sentence in 1000 rows");

  // An explicit shared-predicate example.
  FeatureSchema s;
  s.features = {{"age", FeatureKind::Demographic, FeatureType::Numeric, std::nullopt, "age"},
                {"sex", FeatureKind::Demographic, FeatureType::Binary, std::nullopt, "sex"},
                {"o2_sat", FeatureKind::Vital, FeatureType::Numeric, NormalRange{95, 100}, "oxygen saturation"},
                {"crp", FeatureKind::Lab, FeatureType::Numeric, NormalRange{0, 10}, "C-reactive protein"},
                {"wbc", FeatureKind::Lab, FeatureType::Numeric, NormalRange{4, 11}, "white blood cell count"}};
  Eigen::RowVectorXd r(5);
  r << 70, 0, 101, 25, 2;
  const auto text = render_narrative(r, s).text;
  const std::string expected =
      "The patient's age is 70. The patient is female. Oxygen saturation and C-reactive protein are higher than the "
      "normal range. White blood cell count is lower than the normal range.";
  c.expect(text == expected, "explicit example rendered as: " + text);
  c.note(std::to_string(checked) + " random rows round-tripped; fragments present; example: \"" + expected + "\"");
}

// --- 13. end-to-end determinism ------------------------------------------------------------------------------

void criterion_13(Check& c, const fs::path& work) {
  mock::MockChatServer server(mock::scripted(json{{"default", "The patient will die."}}));
  const json cfg = {{"seed", 13},
                    {"synth", {{"n", 2000}}},
                    {"split", {{"zsc_size", 30}}},
                    {"curve", {{"sizes", {20, 100, 400}}}},
                    {"llm", {{"enabled", true}, {"endpoint", {{"base_url", server.base_url()}}}}},
                    {"shap", {{"models", {"LR", "DT", "GBT"}}, {"rows", 10}, {"background", 20}, {"n_samples", 256}}}};
  std::vector<std::string> manifests;
  for (const char* name : {"first", "second"}) {
    auto config = cli::run_config_from_json(cfg, work);
    config.output = name;
    std::ostringstream log;
    cli::run_command("all", config, log);
    manifests.push_back(io::read_text(work / name / "manifest.json"));
  }
  c.expect(manifests[0] == manifests[1], "manifests differ");
  const auto m = json::parse(manifests[0]);
  c.note("two full runs, " + std::to_string(m.at("files").size()) + " files, manifest sha256 " +
         io::sha256_hex(manifests[0]).substr(0, 16));
}

}  // namespace

int main() {
  fixtures::TempDir work("acceptance");
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
      {"metric oracle", criterion_1},
      {"reference F1", criterion_2},
      {"AUC equivalence", criterion_3},
      {"gradient checks", criterion_4},
      {"lasso", criterion_5},
      {"SVM", criterion_6},
      {"GBT", criterion_7},
      {"SMOTE", criterion_8},
      {"SHAP", criterion_9},
      {"synthetic cohort reproduction", [&](Check& c) { criterion_10(c, work.path() / "c10"); }},
      {"ZSC harness", [&](Check& c) { criterion_11(c, work.path()); }},
      {"serializer conformance", criterion_12},
      {"end-to-end determinism", [&](Check& c) { criterion_13(c, work.path() / "c13"); }},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Check c;
    const auto t0 = Clock::now();
    try {
      criteria[k].second(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = c.failures.empty();
    failed += !ok;
    std::string detail;
    for (const auto& n : c.notes) detail += (detail.empty() ? "" : "; ") + n;
    if (!ok) {
      detail += detail.empty() ? "" : "; ";
      detail += "failures: ";
      for (std::size_t i = 0; i < std::min<std::size_t>(3, c.failures.size()); ++i) {
        detail += (i ? " | " : "") + c.failures[i];
      }
      if (c.failures.size() > 3) detail += " | (" + std::to_string(c.failures.size() - 3) + " more)";
    }
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << (k + 1) << " " << criteria[k].first << " ["
              << num(seconds_since(t0), 1) << " s]: " << detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
