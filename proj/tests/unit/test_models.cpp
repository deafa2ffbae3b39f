#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mortpred/error.hpp"
#include "mortpred/models.hpp"
#include "oracles.hpp"

using namespace mortpred;

namespace {

double accuracy(const Labels& a, const Labels& b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

Matrix xor_points() {
  Matrix X(4, 2);
  X << 0, 0, 0, 1, 1, 0, 1, 1;
  return X;
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

}  // namespace

TEST_CASE("gini gain on hand-counted splits") {
  CHECK(cart_split_gain({0, 0, 1, 1}, {0, 0}, {1, 1}) == doctest::Approx(0.5));
  CHECK(cart_split_gain({1, 1, 1}, {1}, {1, 1}) == doctest::Approx(0.0));
  CHECK(cart_split_gain({0, 1, 0, 1}, {0, 1}, {0, 1}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(cart_split_gain({0, 1}, {}, {0, 1}), Error);
}

TEST_CASE("decision tree fits XOR exactly") {
  const Matrix X = xor_points();
  const Labels y{0, 1, 1, 0};
  auto m = fit(default_spec(Family::DT), X, y);
  CHECK(accuracy(predict_label(m, X), y) == 1.0);
  CHECK(std::get<TreeModel>(m.params).tree.depth() >= 2);
}

TEST_CASE("logistic regression") {
  SUBCASE("separable pair") {
    Matrix X(2, 1);
    X << -1, 1;
    const Labels y{0, 1};
    auto m = fit(default_spec(Family::LR), X, y);
    CHECK(accuracy(predict_label(m, X), y) == 1.0);
  }
  SUBCASE("zero weights give 0.5") {
    TrainedModel m;
    m.spec = default_spec(Family::LR);
    m.n_features = 3;
    m.params = LogisticModel{Vector::Zero(3), 0.0};
    Rng rng(1);
    const Vector s = predict_score(m, fixtures::random_matrix(rng, 5, 3));
    for (double v : s) CHECK(v == 0.5);
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(7);
    Matrix X;
    Labels y;
    fixtures::blobs(rng, 15, 4, 0.5, X, y);
    for (int t = 0; t < 5; ++t) {
      const Vector theta = fixtures::random_matrix(rng, 5, 1).col(0);
      const auto lg = logistic_objective(theta, X, y, 0.7);
      const Vector fd = oracle::finite_difference(
          [&](const Vector& th) { return logistic_objective(th, X, y, 0.7).loss; }, theta);
      CHECK(rel_err(lg.grad, fd) <= 1e-4);
    }
  }
  SUBCASE("optimum has small gradient") {
    Rng rng(3);
    Matrix X;
    Labels y;
    fixtures::blobs(rng, 40, 3, 1.0, X, y);
    FitInfo info;
    const auto m = fit_logistic(X, y, {}, &info);
    Vector theta(4);
    theta << m.weights, m.intercept;
    CHECK(info.converged);
    CHECK(logistic_objective(theta, X, y, 1.0).grad.lpNorm<Eigen::Infinity>() <= 1e-4);
  }
}

TEST_CASE("SVM dual feasibility and QP agreement") {
  Rng rng(11);
  Matrix X;
  Labels y;
  fixtures::blobs(rng, 15, 2, 1.0, X, y);
  SvmParams p;
  p.tol = 1e-6;
  SvmDiagnostics d;
  const auto m = fit_svm(X, y, p, nullptr, &d);
  CHECK(d.max_violation <= p.tol);
  CHECK(d.alpha.minCoeff() >= 0.0);
  CHECK(d.alpha.maxCoeff() <= p.C);
  CHECK(std::abs(d.alpha.dot(d.signed_y)) <= 1e-9);

  const auto qp = oracle::svm_dual_qp(X, y, p.C, d.gamma);
  CHECK((qp.alpha - d.alpha).lpNorm<Eigen::Infinity>() <= 1e-3);
  const Matrix Q = fixtures::random_matrix(rng, 30, 2);
  const Vector f = svm_decision(m, Q);
  for (Eigen::Index i = 0; i < Q.rows(); ++i) CHECK(f(i) == doctest::Approx(qp.decision(Q.row(i))).epsilon(1e-3));
}

TEST_CASE("SVM threshold counts the boundary as positive") {
  Vector s(3);
  s << -1.2, 0.0, 3.1;
  CHECK(threshold_scores(s, default_threshold(Family::SVM)) == Labels{0, 1, 1});
  Vector q(2);
  q << 0.4, 0.6;
  CHECK(threshold_scores(q, 0.5) == Labels{0, 1});
}

TEST_CASE("boosting") {
  SUBCASE("zero rounds score 0.5") {
    auto spec = default_spec(Family::GBT);
    std::get<BoostParams>(spec.params).n_rounds = 0;
    Rng rng(2);
    Matrix X;
    Labels y;
    fixtures::blobs(rng, 10, 3, 1.0, X, y);
    const auto m = fit(spec, X, y);
    for (double v : predict_score(m, X)) CHECK(v == 0.5);
  }
  SUBCASE("single leaf Newton step") {
    Matrix X(2, 1);
    X << 1, 2;
    BoostParams p;
    p.n_rounds = 1;
    const auto m = fit_boosted(X, {1, 1}, p);
    REQUIRE(m.trees.size() == 1);
    CHECK(m.trees[0].nodes.size() == 1);
    CHECK(m.trees[0].nodes[0].value == doctest::Approx(1.0 / 1.5).epsilon(1e-12));
    const double s = 1.0 / (1.0 + std::exp(-0.1 / 1.5));
    CHECK(boosted_margin(m, X)(0) == doctest::Approx(0.1 / 1.5));
    CHECK(s == doctest::Approx(0.5167).epsilon(1e-4));
    CHECK(newton_leaf_weight(-1.0, 0.5, 1.0) == doctest::Approx(1.0 / 1.5));
  }
  SUBCASE("training loss never increases") {
    Rng rng(5);
    Matrix X;
    Labels y;
    fixtures::blobs(rng, 60, 4, 0.8, X, y);
    FitInfo info;
    fit_boosted(X, y, {}, &info);
    REQUIRE(info.loss_history.size() == 101);
    for (std::size_t r = 1; r < info.loss_history.size(); ++r) CHECK(info.loss_history[r] <= info.loss_history[r - 1] + 1e-15);
  }
  SUBCASE("depth-one stump agrees with the best Gini stump in sign") {
    Rng rng(8);
    Matrix X;
    Labels y;
    fixtures::blobs(rng, 30, 3, 1.5, X, y);
    BoostParams p;
    p.n_rounds = 1;
    p.max_depth = 1;
    p.learning_rate = 1.0;
    p.lambda = 1e-9;
    const auto gbt = fit_boosted(X, y, p);
    TreeParams tp;
    tp.max_depth = 1;
    Rng r2(0);
    const Tree stump = fit_cart(X, y, {}, tp, r2);
    const Vector margin = boosted_margin(gbt, X);
    for (Eigen::Index i = 0; i < X.rows(); ++i) CHECK((margin(i) > 0) == (stump.predict(X.row(i)) > 0.5));
  }
}

TEST_CASE("KNN") {
  SUBCASE("unanimous neighbours score 1") {
    Matrix X(6, 1);
    X << 0, 0.1, 0.2, 0.3, 0.4, 10;
    const Labels y{1, 1, 1, 1, 1, 0};
    const auto m = fit(default_spec(Family::KNN), X, y);
    Matrix q(1, 1);
    q << 0.2;
    CHECK(predict_score(m, q)(0) == 1.0);
  }
  SUBCASE("early abandon agrees with brute force") {
    Rng rng(13);
    const Matrix T = fixtures::random_matrix(rng, 200, 6);
    const Matrix Q = fixtures::random_matrix(rng, 50, 6);
    for (Eigen::Index i = 0; i < Q.rows(); ++i) CHECK(knn_neighbors(T, Q.row(i), 5) == oracle::brute_knn(T, Q.row(i), 5));
  }
}

TEST_CASE("random forest determinism and row-id invariance") {
  Rng rng(21);
  Matrix X;
  Labels y;
  fixtures::blobs(rng, 30, 4, 0.7, X, y);
  ForestParams p;
  p.n_trees = 15;
  std::vector<std::uint64_t> ids(y.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = 1000 + i;
  const auto a = fit_forest(X, y, p, 42, ids);
  const auto b = fit_forest(X, y, p, 42, ids);

  std::vector<std::size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng pr(3);
  shuffle(perm, pr);
  std::vector<std::uint64_t> pids;
  for (auto i : perm) pids.push_back(ids[i]);
  const auto c = fit_forest(select_rows(X, perm), select(y, perm), p, 42, pids);

  const Matrix Q = fixtures::random_matrix(rng, 40, 4);
  for (Eigen::Index i = 0; i < Q.rows(); ++i) {
    for (std::size_t t = 0; t < a.trees.size(); ++t) {
      CHECK(a.trees[t].predict(Q.row(i)) == b.trees[t].predict(Q.row(i)));
      CHECK(a.trees[t].predict(Q.row(i)) == c.trees[t].predict(Q.row(i)));
    }
  }
}

TEST_CASE("MLP") {
  SUBCASE("gradient matches finite differences") {
    Rng rng(17);
    Matrix X;
    Labels y;
    fixtures::blobs(rng, 8, 3, 0.5, X, y);
    const auto sizes = mlp_layer_sizes(3, {4, 3});
    Rng init(4);
    for (int t = 0; t < 5; ++t) {
      const Vector theta = fixtures::random_matrix(init, 3 * 4 + 4 + 4 * 3 + 3 + 3 + 1, 1).col(0);
      const auto lg = mlp_objective(theta, sizes, X, y, 0.3);
      const Vector fd = oracle::finite_difference(
          [&](const Vector& th) { return mlp_objective(th, sizes, X, y, 0.3).loss; }, theta);
      CHECK(rel_err(lg.grad, fd) <= 1e-4);
    }
  }
  SUBCASE("flatten round trip") {
    Rng rng(1);
    const auto sizes = mlp_layer_sizes(5, {3});
    const Vector theta = fixtures::random_matrix(rng, 5 * 3 + 3 + 3 + 1, 1).col(0);
    CHECK(mlp_flatten(mlp_unflatten(theta, sizes)) == theta);
  }
  SUBCASE("learns separable blobs, same seed same weights") {
    Rng rng(19);
    Matrix X;
    Labels y;
    fixtures::blobs(rng, 1000, 3, 2.0, X, y);
    const auto a = fit(default_spec(Family::MLP), X, y);
    const auto b = fit(default_spec(Family::MLP), X, y);
    CHECK(accuracy(predict_label(a, X), y) >= 0.9);
    CHECK(predict_score(a, X) == predict_score(b, X));
  }
}

TEST_CASE("grid search") {
  Rng rng(23);
  Matrix X;
  Labels y;
  fixtures::blobs(rng, 40, 3, 1.5, X, y);
  SUBCASE("single candidate wins") {
    const auto r = grid_search_cv({default_spec(Family::LR)}, X, y, 5, 42);
    CHECK(r.winner == 0);
    REQUIRE(r.model.info.cv_accuracy.has_value());
    CHECK(*r.model.info.cv_accuracy == doctest::Approx(r.mean_accuracy[0]));
  }
  SUBCASE("ties go to the first candidate") {
    const auto r = grid_search_cv({default_spec(Family::DT), default_spec(Family::DT)}, X, y, 5, 42);
    CHECK(r.mean_accuracy[0] == r.mean_accuracy[1]);
    CHECK(r.winner == 0);
  }
  SUBCASE("degenerate fold") {
    Labels few(y.size(), 0);
    few[0] = 1;
    few[1] = 1;
    CHECK_THROWS_AS(grid_search_cv({default_spec(Family::LR)}, X, few, 5, 42), Error);
  }
  SUBCASE("capacity-limited architecture loses") {
    // Concentric rings: a 1-unit hidden layer cannot separate them.
    Rng r(29);
    Matrix R(300, 2);
    Labels ry(300);
    for (int i = 0; i < 300; ++i) {
      const double ang = 2 * M_PI * uniform01(r);
      const double rad = i % 2 ? 1.0 + 0.1 * uniform01(r) : 2.0 + 0.1 * uniform01(r);
      R(i, 0) = rad * std::cos(ang);
      R(i, 1) = rad * std::sin(ang);
      ry[static_cast<std::size_t>(i)] = i % 2;
    }
    auto small = default_spec(Family::MLP);
    std::get<MlpParams>(small.params).hidden = {1};
    auto wide = default_spec(Family::MLP);
    std::get<MlpParams>(wide.params).hidden = {50, 50};
    std::get<MlpParams>(wide.params).learning_rate = 1e-2;
    const auto res = grid_search_cv({small, wide}, R, ry, 5, 42);
    CHECK(res.mean_accuracy[1] > res.mean_accuracy[0]);
    CHECK(res.winner == 1);
  }
}

TEST_CASE("fit and predict error paths") {
  Matrix X(3, 2);
  X.setZero();
  CHECK_THROWS_AS(fit(default_spec(Family::LR), X, {1, 1, 1}), Error);
  try {
    fit(default_spec(Family::LR), X, {1, 1, 1});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingleClassInput);
  }
  X << 0, 0, 1, 1, 2, 2;
  const auto m = fit(default_spec(Family::LR), X, {0, 1, 1});
  try {
    predict_score(m, Matrix::Zero(2, 3));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("model artifacts round-trip bit-exactly") {
  Rng rng(31);
  Matrix X;
  Labels y;
  fixtures::blobs(rng, 25, 3, 1.0, X, y);
  const Matrix Q = fixtures::random_matrix(rng, 20, 3);
  for (Family f : all_families()) {
    CAPTURE(to_string(f));
    auto spec = default_spec(f);
    if (auto* rf = std::get_if<ForestParams>(&spec.params)) rf->n_trees = 10;
    const auto m = fit(spec, X, y, {"a", "b", "c"});
    const auto text = to_json(m).dump();
    const auto back = trained_model_from_json(nlohmann::json::parse(text));
    CHECK(to_json(back).dump() == text);
    CHECK(predict_score(back, Q) == predict_score(m, Q));
    for (double v : predict_score(m, Q)) {
      CHECK(std::isfinite(v));
      if (f != Family::SVM) CHECK((v >= 0 && v <= 1));
    }
  }
}
