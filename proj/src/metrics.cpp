#include "mortpred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mortpred/error.hpp"
#include "mortpred/io.hpp"

namespace mortpred {

using nlohmann::json;

namespace {

double ratio(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

void check_binary(const Labels& y, const char* what) {
  for (int v : y) {
    if (v != 0 && v != 1) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be 0/1");
  }
}

}  // namespace

ConfusionMatrix confusion(const Labels& y_true, const Labels& y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw Error(ErrorCode::LengthMismatch, "y_true has " + std::to_string(y_true.size()) + " entries, y_pred " +
                                               std::to_string(y_pred.size()));
  }
  check_binary(y_true, "y_true");
  check_binary(y_pred, "y_pred");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] == 1) (y_pred[i] == 1 ? cm.tp : cm.fn)++;
    else (y_pred[i] == 1 ? cm.fp : cm.tn)++;
  }
  return cm;
}

MetricsReport binary_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error(ErrorCode::InvalidArgument, "empty confusion matrix");
  const auto tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
  const auto fn = static_cast<double>(cm.fn), tn = static_cast<double>(cm.tn);
  MetricsReport r;
  r.cm = cm;
  r.accuracy = (tp + tn) / static_cast<double>(cm.total());
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.specificity = ratio(tn, tn + fp);
  r.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);  // harmonic mean of precision and recall, from counts
  return r;
}

RocCurve roc_auc(const Labels& y_true, const Vector& scores) {
  if (y_true.size() != static_cast<std::size_t>(scores.size())) {
    throw Error(ErrorCode::LengthMismatch, "labels and scores differ in length");
  }
  check_binary(y_true, "y_true");
  if (!scores.allFinite()) throw Error(ErrorCode::InvalidArgument, "scores must be finite");
  std::size_t P = 0;
  for (int v : y_true) P += static_cast<std::size_t>(v);
  const std::size_t N = y_true.size() - P;
  if (P == 0 || N == 0) throw Error(ErrorCode::SingleClass, "ROC needs both classes");

  std::vector<std::size_t> order(y_true.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
  });

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  // Accumulate the area in integer units (tp * fp steps) so ties and long
  // curves do not drift: twice the trapezoid area is sum (fp1-fp0)(tp1+tp0).
  double twice_area = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores(static_cast<Eigen::Index>(order[k]));
    const std::size_t tp0 = tp, fp0 = fp;
    while (k < order.size() && scores(static_cast<Eigen::Index>(order[k])) == s) {
      (y_true[order[k]] == 1 ? tp : fp)++;
      ++k;
    }
    twice_area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0);
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(N), static_cast<double>(tp) / static_cast<double>(P), s});
  }
  roc.auc = twice_area / (2.0 * static_cast<double>(P) * static_cast<double>(N));
  return roc;
}

MetricsReport evaluate_scores(const Labels& y_true, const Vector& scores, double threshold) {
  MetricsReport r = binary_metrics(confusion(y_true, threshold_scores(scores, threshold)));
  const auto pos = std::count(y_true.begin(), y_true.end(), 1);
  if (pos > 0 && static_cast<std::size_t>(pos) < y_true.size()) {
    auto roc = roc_auc(y_true, scores);
    r.auc = roc.auc;
    r.roc = std::move(roc.points);
  }
  return r;
}

json to_json(const ConfusionMatrix& cm) { return {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}}; }

json to_json(const MetricsReport& r, bool include_roc) {
  json j = {{"confusion", to_json(r.cm)},   {"accuracy", r.accuracy}, {"precision", r.precision},
            {"recall", r.recall},           {"specificity", r.specificity}, {"f1", r.f1}};
  j["auc"] = r.auc ? json(*r.auc) : json(nullptr);
  if (include_roc) {
    json pts = json::array();
    for (const auto& p : r.roc) {
      pts.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", std::isfinite(p.threshold) ? json(p.threshold) : json("inf")}});
    }
    j["roc"] = std::move(pts);
  }
  return j;
}

std::string roc_csv(const std::vector<RocPoint>& roc) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : roc) {
    out += io::format_double(p.fpr) + "," + io::format_double(p.tpr) + "," +
           (std::isfinite(p.threshold) ? io::format_double(p.threshold) : std::string("inf")) + "\n";
  }
  return out;
}

// --- learning curve ---------------------------------------------------------

std::vector<std::vector<std::size_t>> nested_stratified_subsamples(const Labels& y,
                                                                   const std::vector<std::size_t>& sizes,
                                                                   std::uint64_t seed) {
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) throw Error(ErrorCode::InvalidArgument, "curve sizes must be strictly increasing");
  }
  std::vector<std::size_t> cls[2];
  for (std::size_t i = 0; i < y.size(); ++i) cls[y[i] == 1 ? 1 : 0].push_back(i);
  Rng rng(seed);
  shuffle(cls[0], rng);
  shuffle(cls[1], rng);
  const double frac = y.empty() ? 0.0 : static_cast<double>(cls[1].size()) / static_cast<double>(y.size());

  std::vector<std::vector<std::size_t>> out;
  std::size_t prev_pos = 0;
  for (std::size_t s : sizes) {
    if (s > y.size()) {
      throw Error(ErrorCode::SizeExceedsTrain,
                  "curve size " + std::to_string(s) + " exceeds " + std::to_string(y.size()) + " training rows");
    }
    // Proportional allocation, at least one of each class, and never fewer
    // positives than the previous size so that subsamples nest.
    auto n_pos = static_cast<std::size_t>(std::floor(frac * static_cast<double>(s) + 0.5));
    n_pos = std::max<std::size_t>({n_pos, 1, prev_pos});
    n_pos = std::min({n_pos, cls[1].size(), s - std::min<std::size_t>(s, 1)});
    const std::size_t n_neg = s - n_pos;
    if (n_pos == 0 || n_neg == 0 || n_neg > cls[0].size() || n_pos < prev_pos) {
      throw Error(ErrorCode::DegenerateSubsample, "cannot draw a two-class subsample of size " + std::to_string(s));
    }
    prev_pos = n_pos;
    std::vector<std::size_t> rows(cls[1].begin(), cls[1].begin() + static_cast<std::ptrdiff_t>(n_pos));
    rows.insert(rows.end(), cls[0].begin(), cls[0].begin() + static_cast<std::ptrdiff_t>(n_neg));
    std::sort(rows.begin(), rows.end());
    out.push_back(std::move(rows));
  }
  return out;
}

LearningCurveResult learning_curve(const std::vector<Family>& families, const SplitBundle& bundle,
                                   const std::vector<std::size_t>& sizes, std::uint64_t seed,
                                   const PreprocessConfig& preprocess, std::size_t cv_folds) {
  LearningCurveResult r;
  r.sizes = sizes;
  r.seed = seed;
  const auto subsamples = nested_stratified_subsamples(bundle.train.labels, sizes, seed);
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    SplitBundle sub;
    sub.seed = bundle.seed;
    sub.train = bundle.train.subset(subsamples[k]);
    sub.internal_test = bundle.internal_test;
    sub.external = bundle.external.subset({});
    PreprocessConfig cfg = preprocess;
    cfg.lasso_folds = std::min<std::size_t>(cfg.lasso_folds, sizes[k]);
    const auto prep = run_preprocess(sub, cfg);
    r.test_rows = prep.internal_test.y.size();
    for (Family f : families) {
      const auto model = fit_family(f, prep.train.X, prep.train.y, seed, cv_folds);
      const auto m = binary_metrics(confusion(prep.internal_test.y, predict_label(model, prep.internal_test.X)));
      r.cells.push_back({to_string(f), sizes[k], m.f1, m.accuracy});
    }
  }
  return r;
}

json to_json(const LearningCurveResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"model", c.model}, {"size", c.size}, {"f1", c.f1}, {"accuracy", c.accuracy}});
  }
  return {{"sizes", r.sizes}, {"seed", r.seed}, {"test_rows", r.test_rows}, {"cells", cells}};
}

std::string learning_curve_csv(const LearningCurveResult& r) {
  std::string out = "model,size,metric,value\n";
  for (const auto& c : r.cells) {
    out += c.model + "," + std::to_string(c.size) + ",f1," + io::format_double(c.f1) + "\n";
    out += c.model + "," + std::to_string(c.size) + ",accuracy," + io::format_double(c.accuracy) + "\n";
  }
  return out;
}

}  // namespace mortpred
