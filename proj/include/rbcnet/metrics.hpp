#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Binary-classification bookkeeping. The positive class is a parasitized
// cell; labels are assigned at the fixed threshold p >= 0.5.
// ---------------------------------------------------------------------------

struct PredictionRecord {
  std::string id;  // sample identity, usually the image path
  int y = 0;       // true label
  double p = 0.0;  // predicted positive-class probability
  int predicted = 0;
};

inline PredictionRecord make_prediction(std::string id, int y, double p) {
  if (p < 0.0 || p > 1.0)
    throw RangeError("probability outside [0,1]: " + std::to_string(p));
  PredictionRecord r;
  r.id = std::move(id);
  r.y = y;
  r.p = p;
  r.predicted = p >= 0.5 ? 1 : 0;
  return r;
}

struct ConfusionMatrix {
  size_t tp = 0, fp = 0, fn = 0, tn = 0;
  size_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionMatrix confusion(const std::vector<PredictionRecord>& preds) {
  if (preds.empty()) throw HarnessError("confusion matrix of zero samples");
  ConfusionMatrix cm;
  for (const auto& r : preds) {
    const int yhat = r.p >= 0.5 ? 1 : 0;
    if (r.y == 1)
      ++(yhat == 1 ? cm.tp : cm.fn);
    else
      ++(yhat == 1 ? cm.fp : cm.tn);
  }
  return cm;
}

// ---------------------------------------------------------------------------
// The scalar metrics. Zero-denominator cases return 0 and set the degenerate
// flag rather than poisoning downstream aggregation with NaNs.
// ---------------------------------------------------------------------------

struct BasicMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;
};

inline BasicMetrics basic_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw HarnessError("metrics of zero samples");
  BasicMetrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) /
               static_cast<double>(cm.total());
  if (cm.tp + cm.fp > 0) {
    m.precision = static_cast<double>(cm.tp) /
                  static_cast<double>(cm.tp + cm.fp);
  } else {
    m.degenerate = true;
  }
  if (cm.tp + cm.fn > 0) {
    m.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  } else {
    m.degenerate = true;
  }
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.degenerate = true;
  }
  return m;
}

inline double mcc(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw HarnessError("mcc of zero samples");
  const double tp = static_cast<double>(cm.tp), tn = static_cast<double>(cm.tn);
  const double fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);
  const double den =
      (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (den <= 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(den);
}

// Area under the ROC curve by trapezoidal integration across score-tie
// groups; identical to the probability that a random positive outscores a
// random negative with ties counted one half.
inline double roc_auc(const std::vector<PredictionRecord>& preds) {
  size_t pos = 0, neg = 0;
  for (const auto& r : preds) (r.y == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw MetricError("roc_auc needs both classes present");

  std::vector<std::pair<double, int>> scored;
  scored.reserve(preds.size());
  for (const auto& r : preds) scored.push_back({r.p, r.y});
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  double area = 0.0;
  double tp = 0.0, fp = 0.0, prev_tp = 0.0, prev_fp = 0.0;
  size_t i = 0;
  while (i < scored.size()) {
    const double score = scored[i].first;
    while (i < scored.size() && scored[i].first == score) {
      (scored[i].second == 1 ? tp : fp) += 1.0;
      ++i;
    }
    area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
    prev_tp = tp;
    prev_fp = fp;
  }
  return area / (static_cast<double>(pos) * static_cast<double>(neg));
}

// ---------------------------------------------------------------------------
// The full report row: six headline metrics plus mean loss and the raw
// confusion counts, printed as key/value text or one delimited table row.
// ---------------------------------------------------------------------------

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
  double auc = 0.0;
  double loss = 0.0;
  ConfusionMatrix cm;
  bool degenerate = false;
};

inline MetricsReport compute_report(const std::vector<PredictionRecord>& preds,
                                    double mean_loss = 0.0) {
  MetricsReport rep;
  rep.cm = confusion(preds);
  const BasicMetrics basic = basic_metrics(rep.cm);
  rep.accuracy = basic.accuracy;
  rep.precision = basic.precision;
  rep.recall = basic.recall;
  rep.f1 = basic.f1;
  rep.degenerate = basic.degenerate;
  rep.mcc = mcc(rep.cm);
  rep.loss = mean_loss;
  try {
    rep.auc = roc_auc(preds);
  } catch (const MetricError&) {
    rep.auc = 0.0;  // single-class evaluation set
    rep.degenerate = true;
  }
  return rep;
}

namespace metrics_detail {

inline std::string to_text(double v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << v;
  return os.str();
}

}  // namespace metrics_detail

inline constexpr const char* kMetricsTableHeader =
    "accuracy,precision,recall,f1,mcc,auc,loss";

inline std::string metrics_table_row(const MetricsReport& r) {
  using metrics_detail::to_text;
  return to_text(r.accuracy) + "," + to_text(r.precision) + "," +
         to_text(r.recall) + "," + to_text(r.f1) + "," + to_text(r.mcc) +
         "," + to_text(r.auc) + "," + to_text(r.loss);
}

inline std::string render_report(const MetricsReport& r) {
  using metrics_detail::to_text;
  std::ostringstream os;
  os << "accuracy=" << to_text(r.accuracy) << "\n"
     << "precision=" << to_text(r.precision) << "\n"
     << "recall=" << to_text(r.recall) << "\n"
     << "f1=" << to_text(r.f1) << "\n"
     << "mcc=" << to_text(r.mcc) << "\n"
     << "auc=" << to_text(r.auc) << "\n"
     << "loss=" << to_text(r.loss) << "\n"
     << "tp=" << r.cm.tp << "\n"
     << "fp=" << r.cm.fp << "\n"
     << "fn=" << r.cm.fn << "\n"
     << "tn=" << r.cm.tn << "\n"
     << "degenerate=" << (r.degenerate ? 1 : 0) << "\n";
  return os.str();
}

inline void write_metrics_report(const std::string& path,
                                 const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw HarnessError("cannot write metrics report: " + path);
  out << render_report(r);
  if (!out) throw HarnessError("short metrics write: " + path);
}

}  // namespace rbcnet
