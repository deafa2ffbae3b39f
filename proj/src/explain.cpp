#include "mortpred/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "mortpred/error.hpp"
#include "mortpred/io.hpp"

namespace mortpred {

using nlohmann::json;

double shapley_kernel_weight(std::size_t p, std::size_t s) {
  if (s == 0 || s >= p) return 0.0;
  // (p-1) / (C(p,s) s (p-s)), with the binomial in log space for large p.
  const double log_binom = std::lgamma(static_cast<double>(p) + 1) - std::lgamma(static_cast<double>(s) + 1) -
                           std::lgamma(static_cast<double>(p - s) + 1);
  return static_cast<double>(p - 1) / (std::exp(log_binom) * static_cast<double>(s) * static_cast<double>(p - s));
}

namespace {

constexpr std::size_t kMaxExhaustiveFeatures = 20;

struct Coalitions {
  std::vector<std::vector<char>> z;
  std::vector<double> w;
};

Coalitions enumerate_all(std::size_t p) {
  Coalitions c;
  const std::uint64_t full = (std::uint64_t{1} << p) - 1;
  for (std::uint64_t mask = 1; mask < full; ++mask) {
    std::vector<char> z(p);
    std::size_t s = 0;
    for (std::size_t j = 0; j < p; ++j) {
      z[j] = static_cast<char>((mask >> j) & 1U);
      s += static_cast<std::size_t>(z[j]);
    }
    c.w.push_back(shapley_kernel_weight(p, s));
    c.z.push_back(std::move(z));
  }
  return c;
}

// Sizes drawn with probability proportional to the total kernel mass of that
// size, each sample paired with its complement, all weighted equally.
Coalitions sample_paired(std::size_t p, std::size_t n_samples, Rng& rng) {
  std::vector<double> cum(p - 1);
  double total = 0;
  for (std::size_t s = 1; s < p; ++s) {
    total += 1.0 / (static_cast<double>(s) * static_cast<double>(p - s));
    cum[s - 1] = total;
  }
  std::vector<std::size_t> idx(p);
  std::iota(idx.begin(), idx.end(), 0);
  Coalitions c;
  for (std::size_t k = 0; k < n_samples / 2; ++k) {
    const double u = uniform01(rng) * total;
    const std::size_t s = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin()) + 1;
    // Partial Fisher-Yates for a uniform subset of size s.
    for (std::size_t i = 0; i < s; ++i) std::swap(idx[i], idx[i + uniform_index(rng, p - i)]);
    std::vector<char> z(p, 0);
    for (std::size_t i = 0; i < std::min(s, p - 1); ++i) z[idx[i]] = 1;
    std::vector<char> comp(p);
    for (std::size_t j = 0; j < p; ++j) comp[j] = static_cast<char>(1 - z[j]);
    c.z.push_back(std::move(z));
    c.z.push_back(std::move(comp));
    c.w.push_back(1.0);
    c.w.push_back(1.0);
  }
  return c;
}

// FNV-1a over the row's bytes: identical rows share a sampling seed.
std::uint64_t row_hash(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  std::uint64_t h = 1469598103934665603ULL;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double v = x(j);
    const auto* bytes = reinterpret_cast<const unsigned char*>(&v);
    for (std::size_t b = 0; b < sizeof(double); ++b) h = (h ^ bytes[b]) * 1099511628211ULL;
  }
  return h;
}

double mean_score(const BatchScoreFn& f, const Matrix& M) {
  const Vector s = f(M);
  if (s.size() != M.rows()) throw Error(ErrorCode::ShapeMismatch, "score function returned the wrong length");
  return s.mean();
}

}  // namespace

ShapRow kernel_shap(const BatchScoreFn& f, const Eigen::Ref<const Eigen::RowVectorXd>& x, const Matrix& background,
                    const KernelShapConfig& config) {
  const auto p = static_cast<std::size_t>(x.size());
  if (p == 0) throw Error(ErrorCode::InvalidArgument, "no features to explain");
  if (background.rows() == 0) throw Error(ErrorCode::InvalidArgument, "empty background");
  if (static_cast<std::size_t>(background.cols()) != p) {
    throw Error(ErrorCode::ShapeMismatch, "background width differs from the explained row");
  }

  ShapRow out;
  out.base = mean_score(f, background);
  out.fx = f(Matrix(x))(0);
  const double delta = out.fx - out.base;
  if (p == 1) {
    out.phi = Vector::Constant(1, delta);
    return out;
  }

  bool exhaustive = false;
  switch (config.mode) {
    case ShapMode::Exhaustive:
      if (p > kMaxExhaustiveFeatures) {
        throw Error(ErrorCode::InvalidArgument, "exhaustive mode supports at most 20 features");
      }
      exhaustive = true;
      break;
    case ShapMode::Auto:
      exhaustive = p <= kMaxExhaustiveFeatures && (std::size_t{1} << p) - 2 <= config.n_samples;
      break;
    case ShapMode::Sampled: break;
  }
  if (!exhaustive && config.n_samples < 2 * p + 2) {
    throw Error(ErrorCode::TooFewSamples, "need at least " + std::to_string(2 * p + 2) + " coalition samples, got " +
                                              std::to_string(config.n_samples));
  }
  Rng rng(config.seed);
  const Coalitions c = exhaustive ? enumerate_all(p) : sample_paired(p, config.n_samples, rng);
  const std::size_t m = c.z.size();

  // Coalition values, scored in chunks of stacked background copies.
  const auto nb = static_cast<std::size_t>(background.rows());
  const std::size_t chunk = std::max<std::size_t>(1, 65536 / nb);
  Vector v(static_cast<Eigen::Index>(m));
  for (std::size_t start = 0; start < m; start += chunk) {
    const std::size_t stop = std::min(m, start + chunk);
    Matrix M((stop - start) * nb, p);
    for (std::size_t k = start; k < stop; ++k) {
      auto block = M.middleRows(static_cast<Eigen::Index>((k - start) * nb), static_cast<Eigen::Index>(nb));
      block = background;
      for (std::size_t j = 0; j < p; ++j) {
        if (c.z[k][j]) block.col(static_cast<Eigen::Index>(j)).setConstant(x(static_cast<Eigen::Index>(j)));
      }
    }
    const Vector s = f(M);
    if (s.size() != M.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "score function returned the wrong length");
    }
    for (std::size_t k = start; k < stop; ++k) {
      v(static_cast<Eigen::Index>(k)) =
          s.segment(static_cast<Eigen::Index>((k - start) * nb), static_cast<Eigen::Index>(nb)).mean() - out.base;
    }
  }

  // Eliminate the last coefficient through sum(phi) = delta and solve the
  // remaining weighted least squares by QR.
  const std::size_t last = p - 1;
  Matrix A(m, last);
  Vector y(static_cast<Eigen::Index>(m));
  for (std::size_t k = 0; k < m; ++k) {
    const double sw = std::sqrt(c.w[k]);
    const double zl = c.z[k][last];
    for (std::size_t j = 0; j < last; ++j) A(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = sw * (c.z[k][j] - zl);
    y(static_cast<Eigen::Index>(k)) = sw * (v(static_cast<Eigen::Index>(k)) - zl * delta);
  }
  const Vector beta = A.colPivHouseholderQr().solve(y);
  out.phi.resize(static_cast<Eigen::Index>(p));
  out.phi.head(static_cast<Eigen::Index>(last)) = beta;
  out.phi(static_cast<Eigen::Index>(last)) = delta - beta.sum();
  return out;
}

Matrix sample_background(const Matrix& X, std::size_t size, std::uint64_t seed) {
  if (static_cast<std::size_t>(X.rows()) <= size) return X;
  std::vector<std::size_t> idx(static_cast<std::size_t>(X.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  shuffle(idx, rng);
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return select_rows(X, idx);
}

ShapMatrix explain_rows(const BatchScoreFn& f, const Matrix& X, const Matrix& background,
                        const KernelShapConfig& config, bool serial) {
  ShapMatrix out;
  const auto n = static_cast<std::size_t>(X.rows());
  out.phi.resize(X.rows(), X.cols());
  out.fx.resize(X.rows());
  std::vector<double> bases(n, 0.0);
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&](std::size_t t, std::size_t stride) {
    for (std::size_t i = t; i < n; i += stride) {
      try {
        KernelShapConfig cfg = config;
        cfg.seed = derive_seed(config.seed, row_hash(X.row(static_cast<Eigen::Index>(i))));
        const auto r = kernel_shap(f, X.row(static_cast<Eigen::Index>(i)), background, cfg);
        out.phi.row(static_cast<Eigen::Index>(i)) = r.phi.transpose();
        out.fx(static_cast<Eigen::Index>(i)) = r.fx;
        bases[i] = r.base;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t threads =
      serial ? 1 : std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), n));
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  out.base = n ? bases[0] : mean_score(f, background);
  return out;
}

// --- impact percentages --------------------------------------------------------

ImpactSummary impact_percentages(const ShapMatrix& shap) {
  if (shap.phi.rows() < 1) throw Error(ErrorCode::InvalidArgument, "no explained rows");
  const auto p = static_cast<std::size_t>(shap.phi.cols());
  ImpactSummary s;
  s.model = shap.model;
  s.features = shap.feature_names;
  if (s.features.size() != p) {
    s.features.clear();
    for (std::size_t j = 0; j < p; ++j) s.features.push_back("f" + std::to_string(j));
  }
  const Matrix a = shap.phi.cwiseAbs();
  double total = 0;
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = a.col(static_cast<Eigen::Index>(j));
    const double mean = col.mean();
    s.mean_abs.push_back(mean);
    s.std_abs.push_back(std::sqrt((col.array() - mean).square().mean()));
    total += mean;
  }
  if (total == 0.0) {
    s.warning = "AllZeroAttribution";
    s.impact_pct.assign(p, 100.0 / static_cast<double>(p));
    return s;
  }
  for (double m : s.mean_abs) s.impact_pct.push_back(100.0 * m / total);
  return s;
}

AggregateImpact aggregate_impacts(const std::vector<ImpactSummary>& summaries, const std::string& group) {
  if (summaries.empty()) throw Error(ErrorCode::InvalidArgument, "no summaries to aggregate");
  AggregateImpact g;
  g.group = group;
  g.features = summaries[0].features;
  const std::size_t p = g.features.size();
  std::vector<double> mean(p, 0.0), sd(p, 0.0);
  for (const auto& s : summaries) {
    std::vector<std::string> a = s.features, b = g.features;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) throw Error(ErrorCode::FeatureSetMismatch, "summary '" + s.model + "' has a different feature set");
    for (std::size_t j = 0; j < p; ++j) {
      const auto k = static_cast<std::size_t>(std::find(s.features.begin(), s.features.end(), g.features[j]) -
                                              s.features.begin());
      mean[j] += s.mean_abs[k];
      sd[j] += s.std_abs[k];
    }
    g.models.push_back(s.model);
  }
  const auto n = static_cast<double>(summaries.size());
  double total = 0;
  for (std::size_t j = 0; j < p; ++j) {
    mean[j] /= n;
    sd[j] /= n;
    total += mean[j];
  }
  g.mean_abs = mean;
  for (std::size_t j = 0; j < p; ++j) {
    g.impact_pct.push_back(total == 0.0 ? 100.0 / static_cast<double>(p) : 100.0 * mean[j] / total);
    g.adjusted_std.push_back(mean[j] == 0.0 ? 0.0 : sd[j] * g.impact_pct[j] / mean[j]);
  }
  return g;
}

// --- exports ---------------------------------------------------------------------

std::string violin_csv(const ShapMatrix& shap, const Matrix& X) {
  if (shap.phi.rows() != X.rows() || shap.phi.cols() != X.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "SHAP matrix and feature matrix differ in shape");
  }
  const auto p = static_cast<std::size_t>(X.cols());
  const Vector mean = shap.phi.cwiseAbs().colwise().mean().transpose();
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mean(static_cast<Eigen::Index>(a)) > mean(static_cast<Eigen::Index>(b));
  });
  std::string out = "feature,shap,value,instance\n";
  for (std::size_t j : order) {
    const std::string name = j < shap.feature_names.size() ? shap.feature_names[j] : "f" + std::to_string(j);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const std::string id = k < shap.ids.size() ? shap.ids[k] : std::to_string(k);
      out += io::csv_line({name, io::format_double(shap.phi(i, static_cast<Eigen::Index>(j))),
                           io::format_double(X(i, static_cast<Eigen::Index>(j))), id});
    }
  }
  return out;
}

std::string impact_csv(const ImpactSummary& s) {
  std::string out = "feature,mean_abs_shap,std_abs_shap,impact_pct\n";
  for (std::size_t j = 0; j < s.features.size(); ++j) {
    out += io::csv_line({s.features[j], io::format_double(s.mean_abs[j]), io::format_double(s.std_abs[j]),
                         io::format_double(s.impact_pct[j])});
  }
  return out;
}

std::string impact_csv(const AggregateImpact& a) {
  std::string out = "feature,mean_abs_shap,impact_pct,adjusted_std\n";
  for (std::size_t j = 0; j < a.features.size(); ++j) {
    out += io::csv_line({a.features[j], io::format_double(a.mean_abs[j]), io::format_double(a.impact_pct[j]),
                         io::format_double(a.adjusted_std[j])});
  }
  return out;
}

json to_json(const ImpactSummary& s) {
  json j = {{"model", s.model},       {"features", s.features},     {"mean_abs", s.mean_abs},
            {"std_abs", s.std_abs},   {"impact_pct", s.impact_pct}};
  if (!s.warning.empty()) j["warning"] = s.warning;
  return j;
}

ImpactSummary impact_summary_from_json(const json& j) {
  ImpactSummary s;
  s.model = j.value("model", std::string());
  s.features = j.at("features").get<std::vector<std::string>>();
  s.mean_abs = j.at("mean_abs").get<std::vector<double>>();
  s.std_abs = j.at("std_abs").get<std::vector<double>>();
  s.impact_pct = j.at("impact_pct").get<std::vector<double>>();
  s.warning = j.value("warning", std::string());
  if (s.mean_abs.size() != s.features.size() || s.std_abs.size() != s.features.size() ||
      s.impact_pct.size() != s.features.size()) {
    throw Error(ErrorCode::FormatError, "impact summary arrays differ in length");
  }
  return s;
}

json to_json(const AggregateImpact& a) {
  return {{"group", a.group},           {"models", a.models},         {"features", a.features},
          {"mean_abs", a.mean_abs},     {"impact_pct", a.impact_pct}, {"adjusted_std", a.adjusted_std}};
}

json to_json(const ShapMatrix& s) {
  return {{"model", s.model}, {"base", s.base}, {"feature_names", s.feature_names}, {"ids", s.ids},
          {"phi", io::to_json(s.phi)}, {"fx", io::to_json(s.fx)}};
}

ShapMatrix shap_matrix_from_json(const json& j) {
  ShapMatrix s;
  s.model = j.value("model", std::string());
  s.base = j.at("base").get<double>();
  s.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  s.ids = j.value("ids", std::vector<std::string>{});
  s.phi = io::matrix_from_json(j.at("phi"));
  s.fx = io::vector_from_json(j.at("fx"));
  return s;
}

// --- score functions ---------------------------------------------------------------

BatchScoreFn model_scorer(const TrainedModel& model) {
  return [&model](const Matrix& X) { return predict_score(model, X); };
}

TrainedModel fit_surrogate_gbt(const TrainedModel& target, const Matrix& X, std::uint64_t seed) {
  const Labels y = predict_label(target, X);
  auto m = fit(default_spec(Family::GBT, seed), X, y, target.feature_names);
  m.info.warning = "surrogate of " + target.spec.label();
  return m;
}

Eigen::RowVectorXd narrative_baseline(const Matrix& X, const FeatureSchema& schema) {
  if (static_cast<std::size_t>(X.cols()) != schema.size()) throw Error(ErrorCode::ShapeMismatch, "X width differs from schema");
  Eigen::RowVectorXd b(X.cols());
  auto observed = [&](Eigen::Index j) {
    std::vector<double> v;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (!is_missing(X(i, j))) v.push_back(X(i, j));
    }
    return v;
  };
  auto median = [](std::vector<double> v) {
    if (v.empty()) return kMissing;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  };
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& f = schema.features[j];
    const auto col = static_cast<Eigen::Index>(j);
    if (f.name == schema.sex_feature) {
      std::size_t male = 0, total = 0;
      for (double v : observed(col)) {
        ++total;
        male += v == schema.male_value;
      }
      b(col) = 2 * male >= total ? schema.male_value : 1.0 - schema.male_value;
    } else if (f.name == schema.age_feature) {
      b(col) = median(observed(col));
    } else if (f.dtype != FeatureType::Numeric) {
      b(col) = 0.0;
    } else if (f.normal_range) {
      b(col) = 0.5 * (f.normal_range->lo + f.normal_range->hi);
    } else {
      b(col) = median(observed(col));
    }
  }
  return b;
}

LlmNarrativeScorer::LlmNarrativeScorer(FeatureSchema schema, std::string model_name, ChatClient* client,
                                       EscalationPolicy policy, SamplingParams sampling)
    : schema_(std::move(schema)),
      model_name_(std::move(model_name)),
      client_(client),
      policy_(policy),
      sampling_(sampling) {}

std::string LlmNarrativeScorer::cache_key(const std::string& narrative) const {
  return io::sha256_hex(model_name_ + "\n" + narrative);
}

double LlmNarrativeScorer::score_narrative(const std::string& narrative) {
  const std::string key = cache_key(narrative);
  std::optional<ZscLabel> label;
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) label = it->second.second;
    else if (!client_) throw Error(ErrorCode::CacheMiss, "no cached response for narrative " + key.substr(0, 12));
  }
  if (!label) {
    label = classify_patient({key.substr(0, 16), narrative, 0, PromptVariant::Improved}, *client_, policy_, sampling_)
                .final_label;
    std::lock_guard lock(mu_);
    cache_[key] = {narrative, *label};
    ++queries_;
  }
  switch (*label) {
    case ZscLabel::Die: return 1.0;
    case ZscLabel::Survive: return 0.0;
    default: return 0.5;
  }
}

Vector LlmNarrativeScorer::operator()(const Matrix& rows) {
  Vector out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out(i) = score_narrative(render_narrative(rows.row(i), schema_).text);
  return out;
}

void LlmNarrativeScorer::load_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open response cache " + path.string());
  std::lock_guard lock(mu_);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    cache_[j.at("key").get<std::string>()] = {j.at("narrative").get<std::string>(),
                                              parse_zsc_label(j.at("label").get<std::string>())};
  }
}

void LlmNarrativeScorer::save_cache(const std::filesystem::path& path) const {
  std::string out;
  std::lock_guard lock(mu_);
  for (const auto& [key, entry] : cache_) {
    out += json{{"key", key}, {"narrative", entry.first}, {"label", to_string(entry.second)}}.dump() + "\n";
  }
  io::write_text(path, out);
}

std::size_t LlmNarrativeScorer::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

}  // namespace mortpred
