#include <algorithm>
#include <cmath>

#include "mortpred/error.hpp"
#include "mortpred/io.hpp"
#include "mortpred/models.hpp"

namespace mortpred {

using nlohmann::json;
using Index = Eigen::Index;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

std::size_t params_index(Family f) {
  switch (f) {
    case Family::LR: return 0;
    case Family::SVM: return 1;
    case Family::DT: return 2;
    case Family::KNN: return 3;
    case Family::RF: return 4;
    case Family::GBT: return 5;
    case Family::MLP: return 6;
  }
  return 0;
}

// --- hyperparameter JSON ----------------------------------------------------

json tree_params_json(const TreeParams& p) {
  return {{"max_depth", p.max_depth},
          {"min_samples_split", p.min_samples_split},
          {"min_samples_leaf", p.min_samples_leaf},
          {"max_features", p.max_features}};
}

TreeParams tree_params_from(const json& j) {
  TreeParams p;
  p.max_depth = j.value("max_depth", p.max_depth);
  p.min_samples_split = j.value("min_samples_split", p.min_samples_split);
  p.min_samples_leaf = j.value("min_samples_leaf", p.min_samples_leaf);
  p.max_features = j.value("max_features", p.max_features);
  return p;
}

json params_json(const Hyperparameters& hp) {
  return std::visit(
      overloaded{
          [](const LogisticParams& p) -> json {
            return {{"C", p.C}, {"tol", p.tol}, {"max_iter", p.max_iter}, {"memory", p.memory}};
          },
          [](const SvmParams& p) -> json {
            json j = {{"C", p.C}, {"tol", p.tol}, {"cache_mb", p.cache_mb}, {"max_iter", p.max_iter}};
            j["gamma"] = p.gamma ? json(*p.gamma) : json("scale");
            return j;
          },
          [](const TreeParams& p) -> json { return tree_params_json(p); },
          [](const KnnParams& p) -> json { return {{"k", p.k}}; },
          [](const ForestParams& p) -> json {
            return {{"n_trees", p.n_trees},
                    {"tree", tree_params_json(p.tree)},
                    {"sqrt_features", p.sqrt_features},
                    {"bootstrap", p.bootstrap}};
          },
          [](const BoostParams& p) -> json {
            return {{"n_rounds", p.n_rounds},         {"max_depth", p.max_depth}, {"learning_rate", p.learning_rate},
                    {"lambda", p.lambda},             {"gamma", p.gamma},         {"min_child_weight", p.min_child_weight},
                    {"base_score", p.base_score}};
          },
          [](const MlpParams& p) -> json {
            return {{"hidden", p.hidden},
                    {"alpha", p.alpha},
                    {"learning_rate", p.learning_rate},
                    {"max_epochs", p.max_epochs},
                    {"batch_size", p.batch_size},
                    {"early_stopping", p.early_stopping},
                    {"validation_fraction", p.validation_fraction},
                    {"n_iter_no_change", p.n_iter_no_change},
                    {"tol", p.tol},
                    {"beta1", p.beta1},
                    {"beta2", p.beta2},
                    {"epsilon", p.epsilon}};
          },
      },
      hp);
}

Hyperparameters params_from(Family f, const json& j) {
  switch (f) {
    case Family::LR: {
      LogisticParams p;
      p.C = j.value("C", p.C);
      p.tol = j.value("tol", p.tol);
      p.max_iter = j.value("max_iter", p.max_iter);
      p.memory = j.value("memory", p.memory);
      return p;
    }
    case Family::SVM: {
      SvmParams p;
      p.C = j.value("C", p.C);
      p.tol = j.value("tol", p.tol);
      p.cache_mb = j.value("cache_mb", p.cache_mb);
      p.max_iter = j.value("max_iter", p.max_iter);
      if (j.contains("gamma") && j["gamma"].is_number()) p.gamma = j["gamma"].get<double>();
      return p;
    }
    case Family::DT: return tree_params_from(j);
    case Family::KNN: {
      KnnParams p;
      p.k = j.value("k", p.k);
      return p;
    }
    case Family::RF: {
      ForestParams p;
      p.n_trees = j.value("n_trees", p.n_trees);
      if (j.contains("tree")) p.tree = tree_params_from(j["tree"]);
      p.sqrt_features = j.value("sqrt_features", p.sqrt_features);
      p.bootstrap = j.value("bootstrap", p.bootstrap);
      return p;
    }
    case Family::GBT: {
      BoostParams p;
      p.n_rounds = j.value("n_rounds", p.n_rounds);
      p.max_depth = j.value("max_depth", p.max_depth);
      p.learning_rate = j.value("learning_rate", p.learning_rate);
      p.lambda = j.value("lambda", p.lambda);
      p.gamma = j.value("gamma", p.gamma);
      p.min_child_weight = j.value("min_child_weight", p.min_child_weight);
      p.base_score = j.value("base_score", p.base_score);
      return p;
    }
    case Family::MLP: {
      MlpParams p;
      p.hidden = j.value("hidden", p.hidden);
      p.alpha = j.value("alpha", p.alpha);
      p.learning_rate = j.value("learning_rate", p.learning_rate);
      p.max_epochs = j.value("max_epochs", p.max_epochs);
      p.batch_size = j.value("batch_size", p.batch_size);
      p.early_stopping = j.value("early_stopping", p.early_stopping);
      p.validation_fraction = j.value("validation_fraction", p.validation_fraction);
      p.n_iter_no_change = j.value("n_iter_no_change", p.n_iter_no_change);
      p.tol = j.value("tol", p.tol);
      p.beta1 = j.value("beta1", p.beta1);
      p.beta2 = j.value("beta2", p.beta2);
      p.epsilon = j.value("epsilon", p.epsilon);
      return p;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown family");
}

// --- fitted-parameter JSON --------------------------------------------------

json tree_json(const Tree& t) {
  json f = json::array(), th = json::array(), l = json::array(), r = json::array(), v = json::array();
  for (const auto& n : t.nodes) {
    f.push_back(n.feature);
    th.push_back(n.threshold);
    l.push_back(n.left);
    r.push_back(n.right);
    v.push_back(n.value);
  }
  return {{"feature", f}, {"threshold", th}, {"left", l}, {"right", r}, {"value", v}};
}

Tree tree_from(const json& j) {
  Tree t;
  const auto& f = j.at("feature");
  t.nodes.resize(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    auto& n = t.nodes[i];
    n.feature = f[i].get<int>();
    n.threshold = j.at("threshold")[i].get<double>();
    n.left = j.at("left")[i].get<int>();
    n.right = j.at("right")[i].get<int>();
    n.value = j.at("value")[i].get<double>();
    if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || static_cast<std::size_t>(std::max(n.left, n.right)) >= f.size())) {
      throw Error(ErrorCode::FormatError, "tree node has invalid children");
    }
  }
  return t;
}

json trees_json(const std::vector<Tree>& ts) {
  json a = json::array();
  for (const auto& t : ts) a.push_back(tree_json(t));
  return a;
}

std::vector<Tree> trees_from(const json& j) {
  std::vector<Tree> ts;
  for (const auto& t : j) ts.push_back(tree_from(t));
  return ts;
}

json fitted_json(const FittedParams& fp) {
  return std::visit(
      overloaded{
          [](const LogisticModel& m) -> json { return {{"weights", io::to_json(m.weights)}, {"intercept", m.intercept}}; },
          [](const SvmModel& m) -> json {
            return {{"support", io::to_json(m.support)}, {"coef", io::to_json(m.coef)}, {"bias", m.bias}, {"gamma", m.gamma}};
          },
          [](const TreeModel& m) -> json { return {{"tree", tree_json(m.tree)}}; },
          [](const KnnModel& m) -> json { return {{"X", io::to_json(m.X)}, {"y", m.y}, {"k", m.k}}; },
          [](const ForestModel& m) -> json { return {{"trees", trees_json(m.trees)}}; },
          [](const BoostModel& m) -> json {
            return {{"trees", trees_json(m.trees)}, {"base_margin", m.base_margin}, {"learning_rate", m.learning_rate}};
          },
          [](const MlpModel& m) -> json {
            json w = json::array(), b = json::array();
            for (const auto& W : m.weights) w.push_back(io::to_json(W));
            for (const auto& B : m.biases) b.push_back(io::to_json(B));
            return {{"weights", w}, {"biases", b}};
          },
      },
      fp);
}

FittedParams fitted_from(Family f, const json& j) {
  switch (f) {
    case Family::LR: return LogisticModel{io::vector_from_json(j.at("weights")), j.at("intercept").get<double>()};
    case Family::SVM:
      return SvmModel{io::matrix_from_json(j.at("support")), io::vector_from_json(j.at("coef")), j.at("bias").get<double>(),
                      j.at("gamma").get<double>()};
    case Family::DT: return TreeModel{tree_from(j.at("tree"))};
    case Family::KNN: return KnnModel{io::matrix_from_json(j.at("X")), j.at("y").get<Labels>(), j.at("k").get<std::size_t>()};
    case Family::RF: return ForestModel{trees_from(j.at("trees"))};
    case Family::GBT:
      return BoostModel{trees_from(j.at("trees")), j.at("base_margin").get<double>(), j.at("learning_rate").get<double>()};
    case Family::MLP: {
      MlpModel m;
      for (const auto& w : j.at("weights")) m.weights.push_back(io::matrix_from_json(w));
      for (const auto& b : j.at("biases")) m.biases.push_back(io::vector_from_json(b));
      return m;
    }
  }
  throw Error(ErrorCode::FormatError, "unknown family");
}

}  // namespace

// --- family metadata --------------------------------------------------------

std::string to_string(Family f) {
  switch (f) {
    case Family::LR: return "LR";
    case Family::SVM: return "SVM";
    case Family::DT: return "DT";
    case Family::KNN: return "KNN";
    case Family::RF: return "RF";
    case Family::GBT: return "GBT";
    case Family::MLP: return "MLP";
  }
  return "?";
}

Family parse_family(const std::string& s) {
  for (Family f : all_families()) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown model family '" + s + "'");
}

const std::vector<Family>& all_families() {
  static const std::vector<Family> v{Family::LR,  Family::SVM, Family::DT, Family::KNN,
                                     Family::RF, Family::GBT, Family::MLP};
  return v;
}

std::string ClassifierSpec::label() const {
  std::string s = to_string(family);
  if (const auto* p = std::get_if<MlpParams>(&params)) {
    s += "(";
    for (std::size_t i = 0; i < p->hidden.size(); ++i) s += (i ? "," : "") + std::to_string(p->hidden[i]);
    s += ")";
  }
  return s;
}

ClassifierSpec default_spec(Family f, std::uint64_t seed) {
  ClassifierSpec s;
  s.family = f;
  s.seed = seed;
  switch (f) {
    case Family::LR: s.params = LogisticParams{}; break;
    case Family::SVM: s.params = SvmParams{}; break;
    case Family::DT: s.params = TreeParams{}; break;
    case Family::KNN: s.params = KnnParams{}; break;
    case Family::RF: s.params = ForestParams{}; break;
    case Family::GBT: s.params = BoostParams{}; break;
    case Family::MLP: s.params = MlpParams{}; break;
  }
  return s;
}

std::vector<ClassifierSpec> default_grid(Family f, std::uint64_t seed) {
  if (f != Family::MLP) return {default_spec(f, seed)};
  ClassifierSpec wide = default_spec(f, seed);
  ClassifierSpec deep = wide;
  std::get<MlpParams>(deep.params).hidden = {50, 50};
  return {wide, deep};
}

void validate(const ClassifierSpec& spec) {
  require(spec.params.index() == params_index(spec.family), "hyperparameters do not match family " + to_string(spec.family));
  auto check_tree = [](const TreeParams& p) {
    require(p.max_depth == -1 || p.max_depth >= 1, "max_depth must be -1 or >= 1");
    require(p.min_samples_split >= 2, "min_samples_split must be >= 2");
    require(p.min_samples_leaf >= 1, "min_samples_leaf must be >= 1");
  };
  std::visit(overloaded{
                 [](const LogisticParams& p) {
                   require(p.C > 0 && p.tol > 0 && p.max_iter >= 1 && p.memory >= 1, "invalid LR hyperparameters");
                 },
                 [](const SvmParams& p) {
                   require(p.C > 0 && p.tol > 0 && p.cache_mb > 0, "invalid SVM hyperparameters");
                   require(!p.gamma || *p.gamma > 0, "SVM gamma must be positive");
                 },
                 [&](const TreeParams& p) { check_tree(p); },
                 [](const KnnParams& p) { require(p.k >= 1, "KNN k must be >= 1"); },
                 [&](const ForestParams& p) {
                   require(p.n_trees >= 1, "RF needs at least one tree");
                   check_tree(p.tree);
                 },
                 [](const BoostParams& p) {
                   require(p.n_rounds >= 0 && p.max_depth >= 1 && p.learning_rate > 0 && p.lambda >= 0 &&
                               p.gamma >= 0 && p.min_child_weight >= 0 && p.base_score > 0 && p.base_score < 1,
                           "invalid GBT hyperparameters");
                 },
                 [](const MlpParams& p) {
                   require(!p.hidden.empty(), "MLP needs at least one hidden layer");
                   for (auto h : p.hidden) require(h >= 1, "MLP layer width must be >= 1");
                   require(p.alpha >= 0 && p.learning_rate > 0 && p.max_epochs >= 1 && p.batch_size >= 1 &&
                               p.validation_fraction > 0 && p.validation_fraction < 1 && p.n_iter_no_change >= 1,
                           "invalid MLP hyperparameters");
                 },
             },
             spec.params);
}

// --- fit / predict ----------------------------------------------------------

TrainedModel fit(const ClassifierSpec& spec, const Matrix& X, const Labels& y, std::vector<std::string> feature_names) {
  validate(spec);
  if (static_cast<std::size_t>(X.rows()) != y.size()) {
    throw Error(ErrorCode::ShapeMismatch, "X has " + std::to_string(X.rows()) + " rows but y has " + std::to_string(y.size()));
  }
  if (!feature_names.empty() && feature_names.size() != static_cast<std::size_t>(X.cols())) {
    throw Error(ErrorCode::ShapeMismatch, "feature_names length differs from X width");
  }
  if (!X.allFinite()) throw Error(ErrorCode::InvalidArgument, "X contains missing or non-finite values");
  std::size_t pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos == 0 || pos == y.size()) throw Error(ErrorCode::SingleClassInput, "training labels contain a single class");

  TrainedModel m;
  m.spec = spec;
  m.n_features = static_cast<std::size_t>(X.cols());
  m.feature_names = std::move(feature_names);
  switch (spec.family) {
    case Family::LR: m.params = fit_logistic(X, y, std::get<LogisticParams>(spec.params), &m.info); break;
    case Family::SVM: m.params = fit_svm(X, y, std::get<SvmParams>(spec.params), &m.info); break;
    case Family::DT: {
      Rng rng(spec.seed);
      m.params = TreeModel{fit_cart(X, y, {}, std::get<TreeParams>(spec.params), rng)};
      break;
    }
    case Family::KNN: m.params = KnnModel{X, y, std::get<KnnParams>(spec.params).k}; break;
    case Family::RF: m.params = fit_forest(X, y, std::get<ForestParams>(spec.params), spec.seed); break;
    case Family::GBT: m.params = fit_boosted(X, y, std::get<BoostParams>(spec.params), &m.info); break;
    case Family::MLP: m.params = fit_mlp(X, y, std::get<MlpParams>(spec.params), spec.seed, &m.info); break;
  }
  return m;
}

Vector predict_score(const TrainedModel& model, const Matrix& X) {
  if (static_cast<std::size_t>(X.cols()) != model.n_features) {
    throw Error(ErrorCode::ShapeMismatch, "model expects " + std::to_string(model.n_features) + " features, got " +
                                              std::to_string(X.cols()));
  }
  const Index n = X.rows();
  return std::visit(
      overloaded{
          [&](const LogisticModel& m) -> Vector {
            Vector z = (X * m.weights).array() + m.intercept;
            return z.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
          },
          [&](const SvmModel& m) -> Vector { return svm_decision(m, X); },
          [&](const TreeModel& m) -> Vector {
            Vector s(n);
            for (Index i = 0; i < n; ++i) s(i) = m.tree.predict(X.row(i));
            return s;
          },
          [&](const KnnModel& m) -> Vector {
            Vector s(n);
            for (Index i = 0; i < n; ++i) {
              const auto nb = knn_neighbors(m.X, X.row(i), m.k);
              double pos = 0;
              for (auto j : nb) pos += m.y[j];
              s(i) = nb.empty() ? 0.0 : pos / static_cast<double>(nb.size());
            }
            return s;
          },
          [&](const ForestModel& m) -> Vector {
            Vector s = Vector::Zero(n);
            for (const auto& t : m.trees) {
              for (Index i = 0; i < n; ++i) s(i) += t.predict(X.row(i)) > 0.5 ? 1.0 : 0.0;
            }
            return m.trees.empty() ? s : Vector(s / static_cast<double>(m.trees.size()));
          },
          [&](const BoostModel& m) -> Vector {
            return boosted_margin(m, X).unaryExpr(
                [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
          },
          [&](const MlpModel& m) -> Vector { return mlp_forward(m, X); },
      },
      model.params);
}

double default_threshold(Family f) { return f == Family::SVM ? 0.0 : 0.5; }

Labels threshold_scores(const Vector& scores, double threshold) {
  Labels out(static_cast<std::size_t>(scores.size()));
  for (Index i = 0; i < scores.size(); ++i) out[static_cast<std::size_t>(i)] = scores(i) >= threshold ? 1 : 0;
  return out;
}

Labels predict_label(const TrainedModel& model, const Matrix& X, std::optional<double> threshold) {
  return threshold_scores(predict_score(model, X), threshold.value_or(default_threshold(model.spec.family)));
}

// --- artifacts --------------------------------------------------------------

json to_json(const ClassifierSpec& s) {
  return {{"family", to_string(s.family)}, {"label", s.label()}, {"seed", s.seed}, {"params", params_json(s.params)}};
}

ClassifierSpec classifier_spec_from_json(const json& j) {
  ClassifierSpec s;
  s.family = parse_family(j.at("family").get<std::string>());
  s.seed = j.value("seed", std::uint64_t{42});
  s.params = params_from(s.family, j.value("params", json::object()));
  validate(s);
  return s;
}

json to_json(const TrainedModel& m) {
  json info = {{"iterations", m.info.iterations},
               {"converged", m.info.converged},
               {"loss_history", m.info.loss_history},
               {"warning", m.info.warning}};
  info["cv_accuracy"] = m.info.cv_accuracy ? json(*m.info.cv_accuracy) : json(nullptr);
  return {{"version", kModelArtifactVersion},
          {"spec", to_json(m.spec)},
          {"n_features", m.n_features},
          {"feature_names", m.feature_names},
          {"info", info},
          {"fitted", fitted_json(m.params)}};
}

TrainedModel trained_model_from_json(const json& j) {
  const int version = j.value("version", 0);
  if (version != kModelArtifactVersion) {
    throw Error(ErrorCode::FormatError, "unsupported model artifact version " + std::to_string(version));
  }
  TrainedModel m;
  m.spec = classifier_spec_from_json(j.at("spec"));
  m.n_features = j.at("n_features").get<std::size_t>();
  m.feature_names = j.value("feature_names", std::vector<std::string>{});
  const auto& info = j.at("info");
  m.info.iterations = info.value("iterations", 0);
  m.info.converged = info.value("converged", true);
  m.info.loss_history = info.value("loss_history", std::vector<double>{});
  m.info.warning = info.value("warning", std::string{});
  if (info.contains("cv_accuracy") && info["cv_accuracy"].is_number()) m.info.cv_accuracy = info["cv_accuracy"].get<double>();
  m.params = fitted_from(m.spec.family, j.at("fitted"));
  return m;
}

// --- grid search ------------------------------------------------------------

GridSearchResult grid_search_cv(const std::vector<ClassifierSpec>& specs, const Matrix& X, const Labels& y,
                                std::size_t folds, std::uint64_t seed, const std::vector<std::string>& feature_names) {
  if (specs.empty()) throw Error(ErrorCode::InvalidArgument, "empty candidate grid");
  if (folds < 2) throw Error(ErrorCode::InvalidArgument, "grid search needs at least 2 folds");
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw Error(ErrorCode::ShapeMismatch, "X/y row count differ");
  for (const auto& s : specs) validate(s);

  const auto fold_of = stratified_folds(y, folds, seed);
  std::vector<std::vector<std::size_t>> train_idx(folds), val_idx(folds);
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t f = 0; f < folds; ++f) (fold_of[i] == f ? val_idx[f] : train_idx[f]).push_back(i);
  }
  for (std::size_t f = 0; f < folds; ++f) {
    for (const auto* part : {&train_idx[f], &val_idx[f]}) {
      std::size_t pos = 0;
      for (auto i : *part) pos += static_cast<std::size_t>(y[i]);
      if (pos == 0 || pos == part->size()) {
        throw Error(ErrorCode::DegenerateFold, "fold " + std::to_string(f) + " lacks one of the classes");
      }
    }
  }

  GridSearchResult r;
  r.candidates = specs;
  for (const auto& spec : specs) {
    std::vector<double> acc;
    for (std::size_t f = 0; f < folds; ++f) {
      const auto model = fit(spec, select_rows(X, train_idx[f]), select(y, train_idx[f]));
      const auto pred = predict_label(model, select_rows(X, val_idx[f]));
      std::size_t hit = 0;
      for (std::size_t k = 0; k < pred.size(); ++k) hit += pred[k] == y[val_idx[f][k]];
      acc.push_back(static_cast<double>(hit) / static_cast<double>(pred.size()));
    }
    double mean = 0;
    for (double a : acc) mean += a;
    r.mean_accuracy.push_back(mean / static_cast<double>(folds));
    r.fold_accuracy.push_back(std::move(acc));
  }
  // Strict comparison keeps the earliest candidate on ties.
  for (std::size_t c = 1; c < specs.size(); ++c) {
    if (r.mean_accuracy[c] > r.mean_accuracy[r.winner]) r.winner = c;
  }
  r.model = fit(specs[r.winner], X, y, feature_names);
  r.model.info.cv_accuracy = r.mean_accuracy[r.winner];
  return r;
}

json to_json(const GridSearchResult& r) {
  json cands = json::array();
  for (std::size_t c = 0; c < r.candidates.size(); ++c) {
    json cj = {{"spec", to_json(r.candidates[c])}};
    // A single candidate is fitted directly, without cross-validation.
    if (c < r.mean_accuracy.size()) cj["mean_accuracy"] = r.mean_accuracy[c];
    if (c < r.fold_accuracy.size()) cj["fold_accuracy"] = r.fold_accuracy[c];
    cands.push_back(std::move(cj));
  }
  return {{"candidates", cands}, {"winner", r.winner}, {"winner_label", r.candidates[r.winner].label()}};
}

TrainedModel fit_family(Family f, const Matrix& X, const Labels& y, std::uint64_t seed, std::size_t folds,
                        const std::vector<std::string>& feature_names, GridSearchResult* grid) {
  const auto specs = default_grid(f, seed);
  std::size_t pos = 0;
  for (int v : y) pos += static_cast<std::size_t>(v == 1);
  const std::size_t usable = std::min({folds, pos, y.size() - pos});
  if (specs.size() == 1 || usable < 2) {
    auto m = fit(specs.front(), X, y, feature_names);
    if (grid) {
      grid->candidates = {specs.front()};
      grid->mean_accuracy.clear();
      grid->fold_accuracy.clear();
      grid->winner = 0;
      grid->model = m;
    }
    return m;
  }
  auto r = grid_search_cv(specs, X, y, usable, seed, feature_names);
  auto m = r.model;
  if (grid) *grid = std::move(r);
  return m;
}

}  // namespace mortpred
