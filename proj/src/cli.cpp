#include "mortpred/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>

#include "mortpred/dataset.hpp"
#include "mortpred/error.hpp"
#include "mortpred/io.hpp"
#include "mortpred/narrative.hpp"

namespace mortpred::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad_config(const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) bad_config(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) bad_config("unknown key '" + k + "' in " + where);
  }
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> s;
  for (const auto& [k, v] : j.items()) s.insert(k);
  return s;
}

std::string to_string(ShapMode m) {
  switch (m) {
    case ShapMode::Auto: return "auto";
    case ShapMode::Exhaustive: return "exhaustive";
    case ShapMode::Sampled: return "sampled";
  }
  return "?";
}

ShapMode parse_shap_mode(const std::string& s) {
  if (s == "auto") return ShapMode::Auto;
  if (s == "exhaustive") return ShapMode::Exhaustive;
  if (s == "sampled") return ShapMode::Sampled;
  bad_config("unknown shap mode '" + s + "'");
}

std::vector<Family> families_from(const json& j, const std::string& where) {
  std::vector<Family> out;
  try {
    for (const auto& s : j.get<std::vector<std::string>>()) out.push_back(parse_family(s));
  } catch (const Error& e) {
    bad_config(where + ": " + e.what());
  }
  if (out.empty()) bad_config(where + " must name at least one model");
  return out;
}

json families_json(const std::vector<Family>& fs) {
  json a = json::array();
  for (Family f : fs) a.push_back(to_string(f));
  return a;
}

std::vector<Family> parse_family_list(const std::string& csv) {
  std::vector<Family> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const auto tok = csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!tok.empty()) out.push_back(parse_family(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) bad_config("empty model list");
  return out;
}

// --- run context ------------------------------------------------------------

class Run {
 public:
  Run(const RunConfig& cfg, std::ostream& log) : cfg_(cfg), log_(log) {
    out_ = (cfg.base_dir / cfg.output).lexically_normal();
    if (out_.is_relative()) out_ = (fs::current_path() / out_).lexically_normal();
  }

  const RunConfig& cfg() const { return cfg_; }
  std::ostream& log() { return log_; }
  fs::path out(const fs::path& rel) const { return out_ / rel; }

  fs::path resolve(const std::string& configured, const fs::path& fallback) const {
    if (configured.empty()) return out(fallback);
    fs::path p(configured);
    return (p.is_absolute() ? p : cfg_.base_dir / p).lexically_normal();
  }
  fs::path data_csv() const { return resolve(cfg_.data_csv, "synth/data.csv"); }
  fs::path schema_file() const { return resolve(cfg_.schema_file, "synth/schema.json"); }
  fs::path truth_file() const { return resolve(cfg_.truth_file, "synth/truth.json"); }

  // Every read goes through here so the manifest lists it.
  const fs::path& input(const fs::path& p) {
    if (!fs::exists(p)) {
      throw Error(ErrorCode::MissingArtifact, "required input " + rel(p) + " does not exist");
    }
    inputs_.insert(p);
    return p;
  }
  void wrote(const fs::path& p) { outputs_.insert(p); }

  void write_text(const fs::path& rel_path, std::string_view content) {
    const auto p = out(rel_path);
    io::write_text(p, content);
    wrote(p);
  }
  void write_json(const fs::path& rel_path, const json& j) { write_text(rel_path, j.dump(2) + "\n"); }

  std::string rel(const fs::path& p) const {
    auto r = p.lexically_normal().lexically_relative(out_);
    return (r.empty() ? p : r).generic_string();
  }

  void finish(const std::string& command, const json& seeds) {
    json inputs = json::array(), outputs = json::array();
    for (const auto& p : inputs_) inputs.push_back({{"path", rel(p)}, {"sha256", io::sha256_file(p)}});
    for (const auto& p : outputs_) outputs.push_back({{"path", rel(p)}, {"sha256", io::sha256_file(p)}});
    json m = {{"command", command},
              {"config_sha256", config_hash(cfg_)},
              {"seed", cfg_.seed},
              {"seeds", seeds},
              {"inputs", inputs},
              {"outputs", outputs}};
    io::write_text(out("manifests/" + command + ".json"), m.dump(2) + "\n");
    inputs_.clear();
    outputs_.clear();
    write_run_manifest();
  }

 private:
  void write_run_manifest() {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(out_)) {
      if (!e.is_regular_file()) continue;
      const auto r = rel(e.path());
      if (r == "manifest.json") continue;
      files.push_back(r);
    }
    std::sort(files.begin(), files.end());
    json list = json::array();
    for (const auto& f : files) list.push_back({{"path", f}, {"sha256", io::sha256_file(out_ / f)}});
    json m = {{"config_sha256", config_hash(cfg_)}, {"seed", cfg_.seed}, {"files", list}};
    io::write_text(out_ / "manifest.json", m.dump(2) + "\n");
  }

  const RunConfig& cfg_;
  std::ostream& log_;
  fs::path out_;
  std::set<fs::path> inputs_;
  std::set<fs::path> outputs_;
};

// --- shared loaders -----------------------------------------------------------

struct LoadedData {
  SchemaFile schema_file;
  Dataset dataset;  // after duplicate-feature removal
  std::vector<std::string> dropped;
};

LoadedData load_data(Run& run) {
  LoadedData d;
  d.schema_file = load_schema_file(run.input(run.schema_file()));
  Dataset raw = load_csv(run.input(run.data_csv()), d.schema_file.schema);
  if (run.cfg().drop_duplicate_features) {
    auto dd = drop_duplicate_features(raw);
    d.dataset = std::move(dd.dataset);
    d.dropped = std::move(dd.dropped);
  } else {
    d.dataset = std::move(raw);
  }
  return d;
}

std::string external_hospital(const Run& run, const LoadedData& d) {
  if (run.cfg().external_hospital) return *run.cfg().external_hospital;
  if (d.schema_file.external_hospital) return *d.schema_file.external_hospital;
  bad_config("no external hospital in the config or the schema file");
}

SplitBundle load_splits(Run& run, const LoadedData& d) {
  return splits_from_indices(d.dataset, io::read_json(run.input(run.out("preprocess/splits.json"))));
}

struct LoadedSplit {
  Matrix X;
  Labels y;
  std::vector<std::string> names;
  std::size_t n_original = 0;
  std::vector<std::string> ids;
  Matrix X_unscaled;
};

LoadedSplit load_prepared(Run& run, const std::string& name) {
  LoadedSplit s;
  auto mf = io::read_matrix_csv(run.input(run.out("preprocess/" + name + ".csv")), "death");
  s.X = std::move(mf.X);
  s.y = std::move(mf.labels);
  s.names = std::move(mf.header);
  const auto meta = io::read_json(run.input(run.out("preprocess/" + name + ".meta.json")));
  s.n_original = meta.at("n_original").get<std::size_t>();
  s.ids = meta.at("ids").get<std::vector<std::string>>();
  s.X_unscaled = io::read_matrix_csv(run.input(run.out("preprocess/" + name + ".unscaled.csv")), "death").X;
  return s;
}

TrainedModel load_model(Run& run, Family f) {
  return trained_model_from_json(io::read_json(run.input(run.out("models/" + to_string(f) + ".json"))));
}

// --- commands -----------------------------------------------------------------

void cmd_synth(Run& run) {
  SynthConfig sc = run.cfg().synth;
  sc.seed = run.cfg().seed;
  const auto r = generate(sc);
  write_synth(r, run.out("synth"));
  for (const char* f : {"data.csv", "schema.json", "truth.json"}) run.wrote(run.out(fs::path("synth") / f));
  run.log() << "synth: " << r.dataset.n() << " rows, " << r.dataset.p() << " features\n";
  run.finish("synth", {{"synth", sc.seed}});
}

void write_prepared(Run& run, const PreparedSplit& s, const std::vector<std::string>& names) {
  const fs::path dir = "preprocess";
  io::write_matrix_csv(run.out(dir / (s.name + ".csv")), names, s.X, &s.y, "death");
  run.wrote(run.out(dir / (s.name + ".csv")));
  io::write_matrix_csv(run.out(dir / (s.name + ".unscaled.csv")), names, s.X_unscaled, &s.y, "death");
  run.wrote(run.out(dir / (s.name + ".unscaled.csv")));
  run.write_json(dir / (s.name + ".meta.json"),
                 {{"n_original", s.n_original}, {"rows", s.X.rows()}, {"ids", s.ids}, {"report", s.report}});
}

void cmd_preprocess(Run& run) {
  const auto& cfg = run.cfg();
  const auto d = load_data(run);
  const auto bundle = make_splits(d.dataset, external_hospital(run, d), cfg.test_fraction, cfg.zsc_size, cfg.seed);
  run.write_json("preprocess/splits.json", split_indices_json(bundle));

  PreprocessConfig pc = cfg.preprocess;
  pc.seed = cfg.seed;
  const auto prep = run_preprocess(bundle, pc);
  write_prepared(run, prep.train, prep.selected_names);
  write_prepared(run, prep.internal_test, prep.selected_names);
  write_prepared(run, prep.external, prep.selected_names);
  run.write_json("preprocess/pipeline.json", prep.pipeline);
  json report = prep.report;
  report["dropped_duplicate_features"] = d.dropped;
  report["selected"] = prep.selected_names;
  run.write_json("preprocess/report.json", report);
  run.log() << "preprocess: train " << prep.train.X.rows() << " rows, " << prep.selected_names.size()
            << " features selected\n";
  run.finish("preprocess", {{"splits", cfg.seed}, {"preprocess", pc.seed}});
}

void cmd_train(Run& run) {
  const auto& cfg = run.cfg();
  const auto train = load_prepared(run, "train");
  for (Family f : cfg.models) {
    GridSearchResult grid;
    const auto m = fit_family(f, train.X, train.y, cfg.seed, cfg.cv_folds, train.names, &grid);
    run.write_json("models/" + to_string(f) + ".json", to_json(m));
    run.write_json("models/" + to_string(f) + ".grid.json", to_json(grid));
    run.log() << "train: " << m.spec.label() << "\n";
  }
  run.finish("train", {{"models", cfg.seed}, {"cv_folds", cfg.cv_folds}});
}

json evaluate_on(Run& run, const TrainedModel& m, const LoadedSplit& s, const std::string& set, bool original_only) {
  const auto n = static_cast<Eigen::Index>(original_only ? s.n_original : static_cast<std::size_t>(s.X.rows()));
  const Matrix X = s.X.topRows(n);
  const Labels y(s.y.begin(), s.y.begin() + n);
  const auto rep = evaluate_scores(y, predict_score(m, X), default_threshold(m.spec.family));
  if (!original_only && !rep.roc.empty()) {
    run.write_text("metrics/" + to_string(m.spec.family) + "." + set + ".roc.csv", roc_csv(rep.roc));
  }
  return to_json(rep);
}

void cmd_evaluate(Run& run) {
  const auto& cfg = run.cfg();
  const auto internal = load_prepared(run, "internal_test");
  const auto external = load_prepared(run, "external");
  json summary = json::object();
  for (Family f : cfg.models) {
    const auto m = load_model(run, f);
    json j = {{"model", m.spec.label()},
              {"threshold", default_threshold(f)},
              {"internal_test", evaluate_on(run, m, internal, "internal_test", false)},
              {"external", evaluate_on(run, m, external, "external", false)},
              {"internal_test_original", evaluate_on(run, m, internal, "internal_test", true)},
              {"external_original", evaluate_on(run, m, external, "external", true)}};
    run.write_json("metrics/" + to_string(f) + ".json", j);
    summary[to_string(f)] = {{"internal_test", j["internal_test"]}, {"external", j["external"]}};
  }
  // Reference score for synthetic cohorts: the generator's true probability.
  const auto truth_path = run.truth_file();
  if (fs::exists(truth_path)) {
    const auto truth = io::read_json(run.input(truth_path));
    const std::vector<std::string> ids(internal.ids.begin(), internal.ids.end());
    const Labels y(internal.y.begin(), internal.y.begin() + static_cast<std::ptrdiff_t>(internal.n_original));
    const auto auc = roc_auc(y, bayes_scores_for(truth, ids)).auc;
    run.write_json("metrics/bayes.json", {{"internal_test_original_auc", auc}});
  }
  run.write_json("metrics/summary.json", summary);
  run.log() << "evaluate: " << cfg.models.size() << " models\n";
  run.finish("evaluate", {{"models", cfg.seed}});
}

void cmd_curve(Run& run) {
  const auto& cfg = run.cfg();
  const auto d = load_data(run);
  const auto bundle = load_splits(run, d);
  PreprocessConfig pc = cfg.preprocess;
  pc.seed = cfg.seed;
  const auto r = learning_curve(cfg.curve_models, bundle, cfg.curve_sizes, cfg.seed, pc, cfg.cv_folds);
  run.write_json("curve/learning_curve.json", to_json(r));
  run.write_text("curve/learning_curve.csv", learning_curve_csv(r));
  run.log() << "curve: " << r.cells.size() << " cells\n";
  run.finish("curve", {{"curve", cfg.seed}});
}

void cmd_serialize(Run& run) {
  const auto& cfg = run.cfg();
  const auto d = load_data(run);
  const auto bundle = load_splits(run, d);
  const auto& z = bundle.zsc_subset;
  const auto corpus = build_corpus(z.rows, z.labels, z.ids, z.schema, cfg.prompt_variant);
  run.write_text("corpus/corpus.jsonl", corpus_jsonl(corpus));
  run.log() << "serialize: " << corpus.size() << " narratives\n";
  run.finish("serialize", {{"splits", bundle.seed}});
}

void cmd_zsc(Run& run) {
  const auto& cfg = run.cfg();
  const auto corpus_path = run.out("corpus/corpus.jsonl");
  if (!fs::exists(corpus_path)) {
    throw Error(ErrorCode::MissingArtifact, "no serialized corpus at " + run.rel(corpus_path) + "; run serialize first");
  }
  const auto corpus = read_corpus(run.input(corpus_path));
  HttpChatClient client(cfg.endpoint);
  ZscRunOptions opt;
  opt.policy = cfg.escalation;
  opt.policy.first = cfg.prompt_variant;
  opt.sampling = cfg.endpoint.sampling();
  opt.failed = cfg.failed_policy;
  opt.max_parallel = cfg.endpoint.max_parallel;
  opt.max_transport_retries = cfg.endpoint.max_transport_retries;
  opt.backoff_initial_seconds = cfg.endpoint.backoff_initial_seconds;
  opt.record_latency = cfg.record_latency;
  const auto log_path = run.out("zsc/log.jsonl");
  const auto r = run_zsc(corpus, client, opt, log_path);
  run.wrote(log_path);

  json metrics = {{"model", cfg.endpoint.model},
                  {"failed_policy", to_string(cfg.failed_policy)},
                  {"evaluated", r.evaluated},
                  {"failed", r.failed},
                  {"patients", corpus.size()},
                  {"completed", r.outcomes.size()},
                  {"metrics", to_json(r.report)}};
  run.write_json("zsc/metrics.json", metrics);
  json errors = json::array();
  for (const auto& e : r.errors) errors.push_back({{"patient_id", e.patient_id}, {"code", e.code}, {"message", e.message}});
  run.write_json("zsc/errors.json", errors);
  run.log() << "zsc: " << r.outcomes.size() << "/" << corpus.size() << " classified, " << r.requests
            << " requests, " << r.resumed << " resumed, " << r.errors.size() << " errors\n";
  run.finish("zsc", {{"sampling_seed", cfg.endpoint.seed}});
}

void shap_llm(Run& run, const LoadedData& d, const SplitBundle& bundle, const std::vector<std::string>& selected) {
  const auto& cfg = run.cfg();
  const auto& schema = d.dataset.schema;
  // Explained features: the top selected ones present in the schema.
  std::vector<std::size_t> cols;
  std::vector<std::string> names;
  for (const auto& s : selected) {
    if (cols.size() >= cfg.shap_llm_features) break;
    if (const auto j = schema.index_of(s)) {
      cols.push_back(*j);
      names.push_back(s);
    }
  }
  const auto& z = bundle.zsc_subset.n() > 0 ? bundle.zsc_subset : bundle.internal_test;
  const auto imputed = z.rows;  // narratives omit missing cells
  const auto baseline = narrative_baseline(bundle.train.rows, schema);

  std::unique_ptr<HttpChatClient> client;
  if (!cfg.shap_llm_cache_only) client = std::make_unique<HttpChatClient>(cfg.endpoint);
  EscalationPolicy pol = cfg.escalation;
  pol.first = cfg.prompt_variant;
  LlmNarrativeScorer scorer(schema, cfg.endpoint.model, client.get(), pol, cfg.endpoint.sampling());
  const auto cache = run.out("shap/llm/cache.jsonl");
  if (fs::exists(cache)) scorer.load_cache(cache);
  else if (cfg.shap_llm_cache_only) run.input(cache);

  const std::size_t n = std::min<std::size_t>(cfg.shap_llm_rows, z.n());
  ShapMatrix sm;
  sm.phi.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  sm.fx.resize(static_cast<Eigen::Index>(n));
  sm.feature_names = names;
  sm.model = cfg.endpoint.model;
  Matrix values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  double base_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::RowVectorXd patient = imputed.row(static_cast<Eigen::Index>(i));
    // Features outside the explained set stay at the patient's own values.
    BatchScoreFn f = [&](const Matrix& sub) {
      Matrix full = patient.replicate(sub.rows(), 1);
      for (std::size_t k = 0; k < cols.size(); ++k) {
        full.col(static_cast<Eigen::Index>(cols[k])) = sub.col(static_cast<Eigen::Index>(k));
      }
      return scorer(full);
    };
    Eigen::RowVectorXd x(static_cast<Eigen::Index>(cols.size())), b(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      x(static_cast<Eigen::Index>(k)) = patient(static_cast<Eigen::Index>(cols[k]));
      b(static_cast<Eigen::Index>(k)) = baseline(static_cast<Eigen::Index>(cols[k]));
    }
    KernelShapConfig kc;
    kc.mode = cfg.shap_mode;
    kc.n_samples = cfg.shap_samples;
    kc.seed = derive_seed(cfg.seed, i);
    const auto row = kernel_shap(f, x, Matrix(b), kc);
    sm.phi.row(static_cast<Eigen::Index>(i)) = row.phi.transpose();
    sm.fx(static_cast<Eigen::Index>(i)) = row.fx;
    values.row(static_cast<Eigen::Index>(i)) = x;
    base_sum += row.base;
    sm.ids.push_back(z.ids[i]);
  }
  sm.base = n ? base_sum / static_cast<double>(n) : 0.0;
  scorer.save_cache(cache);
  run.wrote(cache);
  run.write_json("shap/llm/shap.json", to_json(sm));
  run.write_text("shap/llm/impact.csv", impact_csv(impact_percentages(sm)));
  run.write_text("shap/llm/violin.csv", violin_csv(sm, values));
  run.log() << "shap: llm " << n << " rows, " << scorer.queries() << " queries\n";
}

void cmd_shap(Run& run) {
  const auto& cfg = run.cfg();
  const auto train = load_prepared(run, "train");
  const auto test = load_prepared(run, "internal_test");
  const auto n_train = static_cast<Eigen::Index>(train.n_original);
  const auto n_test = static_cast<Eigen::Index>(test.n_original);
  const Matrix background = sample_background(train.X.topRows(n_train), cfg.shap_background, derive_seed(cfg.seed, 1));
  // Explained rows: a seeded sample of the original internal-test rows.
  std::vector<std::size_t> pick(static_cast<std::size_t>(n_test));
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  Rng rng(derive_seed(cfg.seed, 2));
  shuffle(pick, rng);
  pick.resize(std::min<std::size_t>(cfg.shap_rows, pick.size()));
  std::sort(pick.begin(), pick.end());
  const Matrix Xe = select_rows(test.X, pick);
  const Matrix Xv = select_rows(test.X_unscaled, pick);
  std::vector<std::string> ids;
  for (auto i : pick) ids.push_back(test.ids[i]);

  KernelShapConfig kc;
  kc.mode = cfg.shap_mode;
  kc.n_samples = cfg.shap_samples;
  kc.seed = cfg.seed;
  std::vector<ImpactSummary> summaries;
  for (Family f : cfg.shap_models) {
    const auto model = load_model(run, f);
    BatchScoreFn score;
    std::string tag = to_string(f);
    if (cfg.shap_explainer == "surrogate-gbt") {
      const auto sur = fit_surrogate_gbt(model, train.X.topRows(n_train), cfg.seed);
      score = model_scorer(sur);
    } else {
      score = model_scorer(model);
    }
    auto sm = explain_rows(score, Xe, background, kc);
    sm.feature_names = train.names;
    sm.ids = ids;
    sm.model = model.spec.label();
    auto summary = impact_percentages(sm);
    summary.model = tag;
    run.write_json("shap/" + tag + "/shap.json", to_json(sm));
    run.write_text("shap/" + tag + "/impact.csv", impact_csv(summary));
    run.write_text("shap/" + tag + "/violin.csv", violin_csv(sm, Xv));
    if (!summary.warning.empty()) run.log() << "shap: " << tag << " warning " << summary.warning << "\n";
    run.log() << "shap: " << tag << " " << pick.size() << " rows\n";
    summaries.push_back(std::move(summary));
  }
  const auto agg = aggregate_impacts(summaries, "CML");
  run.write_json("shap/aggregate.json", to_json(agg));
  run.write_text("shap/aggregate_impact.csv", impact_csv(agg));

  if (cfg.shap_llm) {
    const auto d = load_data(run);
    const auto bundle = load_splits(run, d);
    shap_llm(run, d, bundle, train.names);
  }
  run.finish("shap", {{"background", derive_seed(cfg.seed, 1)}, {"rows", derive_seed(cfg.seed, 2)}, {"kernel", cfg.seed}});
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void cmd_report(Run& run) {
  const auto& cfg = run.cfg();
  std::string csv = io::csv_line({"set", "approach", "model", "accuracy", "precision", "recall", "specificity", "f1", "auc"});
  json table = json::array();
  auto add = [&](const std::string& set, const std::string& approach, const std::string& model, const json& m) {
    const std::string auc = m.contains("auc") && !m["auc"].is_null() ? fixed4(m["auc"].get<double>()) : "";
    csv += io::csv_line({set, approach, model, fixed4(m.at("accuracy").get<double>()),
                         fixed4(m.at("precision").get<double>()), fixed4(m.at("recall").get<double>()),
                         fixed4(m.at("specificity").get<double>()), fixed4(m.at("f1").get<double>()), auc});
    table.push_back({{"set", set}, {"approach", approach}, {"model", model}, {"metrics", m}});
  };
  std::map<Family, json> per_model;
  for (Family f : cfg.models) per_model[f] = io::read_json(run.input(run.out("metrics/" + to_string(f) + ".json")));
  for (const char* set : {"internal_test", "external"}) {
    for (Family f : cfg.models) add(set, "CML", to_string(f), per_model[f].at(set));
  }
  const auto zsc = run.out("zsc/metrics.json");
  if (fs::exists(zsc)) {
    const auto z = io::read_json(run.input(zsc));
    add("zsc", "LLM", z.at("model").get<std::string>(), z.at("metrics"));
  }
  run.write_text("report/table.csv", csv);
  run.write_json("report/table.json", table);

  const auto curve = run.out("curve/learning_curve.csv");
  if (fs::exists(curve)) run.write_text("report/learning_curve.csv", io::read_text(run.input(curve)));
  const auto impact = run.out("shap/aggregate_impact.csv");
  if (fs::exists(impact)) run.write_text("report/impact.csv", io::read_text(run.input(impact)));
  for (Family f : cfg.shap_models) {
    const auto p = run.out("shap/" + to_string(f) + "/impact.csv");
    if (fs::exists(p)) run.write_text("report/impact_" + to_string(f) + ".csv", io::read_text(run.input(p)));
  }
  run.log() << "report: " << table.size() << " rows\n";
  run.finish("report", json::object());
}

const std::map<std::string, std::function<void(Run&)>>& commands() {
  static const std::map<std::string, std::function<void(Run&)>> m{
      {"synth", cmd_synth},         {"preprocess", cmd_preprocess}, {"train", cmd_train},
      {"evaluate", cmd_evaluate},   {"curve", cmd_curve},           {"serialize", cmd_serialize},
      {"zsc", cmd_zsc},             {"shap", cmd_shap},             {"report", cmd_report}};
  return m;
}

}  // namespace

// --- configuration --------------------------------------------------------------

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, {"output", "seed", "data", "synth", "split", "preprocess", "train", "curve", "llm", "shap"}, "config");
  RunConfig c;
  c.base_dir = base_dir;
  try {
    c.output = j.value("output", c.output);
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys(d, {"csv", "schema", "truth"}, "data");
      c.data_csv = d.value("csv", c.data_csv);
      c.schema_file = d.value("schema", c.schema_file);
      c.truth_file = d.value("truth", c.truth_file);
    }
    if (j.contains("synth")) {
      check_keys(j.at("synth"), keys_of(to_json(SynthConfig{})), "synth");
      c.synth = synth_config_from_json(j.at("synth"));
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"external_hospital", "test_fraction", "zsc_size", "drop_duplicate_features"}, "split");
      if (s.contains("external_hospital") && !s.at("external_hospital").is_null()) {
        c.external_hospital = s.at("external_hospital").get<std::string>();
      }
      c.test_fraction = s.value("test_fraction", c.test_fraction);
      c.zsc_size = s.value("zsc_size", c.zsc_size);
      c.drop_duplicate_features = s.value("drop_duplicate_features", c.drop_duplicate_features);
    }
    if (j.contains("preprocess")) {
      check_keys(j.at("preprocess"), keys_of(to_json(PreprocessConfig{})), "preprocess");
      c.preprocess = preprocess_config_from_json(j.at("preprocess"));
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, {"models", "cv_folds"}, "train");
      if (t.contains("models")) c.models = families_from(t.at("models"), "train.models");
      c.cv_folds = t.value("cv_folds", c.cv_folds);
    }
    if (j.contains("curve")) {
      const auto& t = j.at("curve");
      check_keys(t, {"sizes", "models"}, "curve");
      if (t.contains("sizes")) c.curve_sizes = t.at("sizes").get<std::vector<std::size_t>>();
      if (t.contains("models")) c.curve_models = families_from(t.at("models"), "curve.models");
    }
    if (j.contains("llm")) {
      const auto& l = j.at("llm");
      check_keys(l, {"enabled", "endpoint", "prompt_variant", "max_attempts", "strict_from_attempt", "failed_policy",
                     "record_latency"},
                 "llm");
      c.llm_enabled = l.value("enabled", c.llm_enabled);
      if (l.contains("endpoint")) {
        check_keys(l.at("endpoint"), keys_of(to_json(ChatEndpointConfig{})), "llm.endpoint");
        c.endpoint = endpoint_from_json(l.at("endpoint"));
      }
      if (l.contains("prompt_variant")) c.prompt_variant = parse_prompt_variant(l.at("prompt_variant").get<std::string>());
      c.escalation.max_attempts = l.value("max_attempts", c.escalation.max_attempts);
      c.escalation.strict_from_attempt = l.value("strict_from_attempt", c.escalation.strict_from_attempt);
      if (l.contains("failed_policy")) c.failed_policy = parse_failed_policy(l.at("failed_policy").get<std::string>());
      c.record_latency = l.value("record_latency", c.record_latency);
    }
    if (j.contains("shap")) {
      const auto& s = j.at("shap");
      check_keys(s, {"models", "rows", "background", "n_samples", "mode", "explainer", "llm"}, "shap");
      if (s.contains("models")) c.shap_models = families_from(s.at("models"), "shap.models");
      c.shap_rows = s.value("rows", c.shap_rows);
      c.shap_background = s.value("background", c.shap_background);
      c.shap_samples = s.value("n_samples", c.shap_samples);
      if (s.contains("mode")) c.shap_mode = parse_shap_mode(s.at("mode").get<std::string>());
      c.shap_explainer = s.value("explainer", c.shap_explainer);
      if (s.contains("llm")) {
        const auto& l = s.at("llm");
        check_keys(l, {"enabled", "features", "rows", "cache_only"}, "shap.llm");
        c.shap_llm = l.value("enabled", c.shap_llm);
        c.shap_llm_features = l.value("features", c.shap_llm_features);
        c.shap_llm_rows = l.value("rows", c.shap_llm_rows);
        c.shap_llm_cache_only = l.value("cache_only", c.shap_llm_cache_only);
      }
    }
  } catch (const json::exception& e) {
    bad_config(std::string("malformed config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidConfig) throw;
    bad_config(e.what());
  }
  if (c.shap_explainer != "own" && c.shap_explainer != "surrogate-gbt") {
    bad_config("shap.explainer must be 'own' or 'surrogate-gbt'");
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) bad_config("split.test_fraction must lie in (0, 1)");
  if (c.cv_folds < 2) bad_config("train.cv_folds must be at least 2");
  if (c.escalation.max_attempts < 1) bad_config("llm.max_attempts must be at least 1");
  if (c.shap_background == 0 || c.shap_rows == 0) bad_config("shap.rows and shap.background must be positive");
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingArtifact, "config file " + path.string() + " does not exist");
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    bad_config("config is not valid JSON: " + std::string(e.what()));
  }
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return run_config_from_json(j, base);
}

json to_json(const RunConfig& c) {
  json synth = to_json(c.synth);
  synth.erase("seed");
  json pre = to_json(c.preprocess);
  pre.erase("seed");
  return {{"output", c.output},
          {"seed", c.seed},
          {"data", {{"csv", c.data_csv}, {"schema", c.schema_file}, {"truth", c.truth_file}}},
          {"synth", synth},
          {"split",
           {{"external_hospital", c.external_hospital ? json(*c.external_hospital) : json(nullptr)},
            {"test_fraction", c.test_fraction},
            {"zsc_size", c.zsc_size},
            {"drop_duplicate_features", c.drop_duplicate_features}}},
          {"preprocess", pre},
          {"train", {{"models", families_json(c.models)}, {"cv_folds", c.cv_folds}}},
          {"curve", {{"sizes", c.curve_sizes}, {"models", families_json(c.curve_models)}}},
          {"llm",
           {{"enabled", c.llm_enabled},
            {"endpoint", to_json(c.endpoint)},
            {"prompt_variant", to_string(c.prompt_variant)},
            {"max_attempts", c.escalation.max_attempts},
            {"strict_from_attempt", c.escalation.strict_from_attempt},
            {"failed_policy", to_string(c.failed_policy)},
            {"record_latency", c.record_latency}}},
          {"shap",
           {{"models", families_json(c.shap_models)},
            {"rows", c.shap_rows},
            {"background", c.shap_background},
            {"n_samples", c.shap_samples},
            {"mode", to_string(c.shap_mode)},
            {"explainer", c.shap_explainer},
            {"llm",
             {{"enabled", c.shap_llm},
              {"features", c.shap_llm_features},
              {"rows", c.shap_llm_rows},
              {"cache_only", c.shap_llm_cache_only}}}}}};
}

std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output");
  // The endpoint URL is where replies come from, not what is asked.
  j["llm"]["endpoint"].erase("base_url");
  return io::sha256_hex(j.dump());
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> v{"synth", "preprocess", "train", "evaluate", "curve",
                                          "serialize", "zsc", "shap", "report"};
  return v;
}

void run_command(const std::string& name, const RunConfig& config, std::ostream& log) {
  Run run(config, log);
  if (name == "all") {
    for (const auto& c : command_names()) {
      if (c == "zsc" && !config.llm_enabled) continue;
      commands().at(c)(run);
    }
    return;
  }
  const auto it = commands().find(name);
  if (it == commands().end()) throw Error(ErrorCode::InvalidArgument, "unknown command '" + name + "'");
  it->second(run);
}

// --- command line -------------------------------------------------------------------

namespace {

void emit_error(std::ostream& err, const std::string& code, const std::string& message, const std::string& command) {
  err << json{{"error", code}, {"message", message}, {"command", command}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mortality prediction pipeline: classical models, narratives, zero-shot LLM and SHAP"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  app.add_option("--config", config_path, "Run config (JSON)");
  app.add_option("--seed", seed, "Global seed override");
  app.add_option("--output", output, "Output directory override");

  std::string models, base_url, endpoint_model;
  std::optional<std::size_t> shap_rows, zsc_parallel;
  bool print_config = false;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : command_names()) subs[name] = app.add_subcommand(name, "Run the " + name + " step");
  subs["all"] = app.add_subcommand("all", "Run every step in order");
  subs["config"] = app.add_subcommand("config", "Print the effective configuration");
  for (const char* n : {"train", "evaluate", "curve", "shap", "report", "all"}) {
    subs[n]->add_option("--models", models, "Comma-separated model families");
  }
  for (const char* n : {"zsc", "shap", "all"}) {
    subs[n]->add_option("--base-url", base_url, "Chat endpoint base URL");
    subs[n]->add_option("--llm-model", endpoint_model, "Chat model name");
  }
  subs["zsc"]->add_option("--parallel", zsc_parallel, "Concurrent patients");
  subs["shap"]->add_option("--rows", shap_rows, "Rows explained per model");
  subs["config"]->callback([&] { print_config = true; });

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    emit_error(err, "UsageError", e.what(), "");
    return 2;
  }
  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (output) {
      cfg.output = fs::absolute(*output).lexically_normal().string();
    }
    if (!models.empty()) {
      const auto fams = parse_family_list(models);
      if (command == "curve") cfg.curve_models = fams;
      else if (command == "shap") cfg.shap_models = fams;
      else cfg.models = fams;
    }
    if (!base_url.empty()) cfg.endpoint.base_url = base_url;
    if (!endpoint_model.empty()) cfg.endpoint.model = endpoint_model;
    if (zsc_parallel) cfg.endpoint.max_parallel = *zsc_parallel;
    if (shap_rows) cfg.shap_rows = *shap_rows;
    validate(cfg.endpoint);
    if (print_config) {
      out << to_json(cfg).dump(2) << "\n";
      return 0;
    }
    run_command(command, cfg, out);
    return 0;
  } catch (const Error& e) {
    emit_error(err, std::string(e.code_name()), e.what(), command);
    return 1;
  } catch (const std::exception& e) {
    emit_error(err, "InternalError", e.what(), command);
    return 1;
  }
}

}  // namespace mortpred::cli
