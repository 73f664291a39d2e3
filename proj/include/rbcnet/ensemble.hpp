#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rbcnet/augment.hpp"
#include "rbcnet/errors.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/manifest.hpp"
#include "rbcnet/metrics.hpp"
#include "rbcnet/model.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Probability-vector ensembling: a weighted mean of per-model (p_neg, p_pos)
// rows. Weights are normalized internally, so any positive rescaling leaves
// the combination unchanged; the label is the argmax.
// ---------------------------------------------------------------------------

inline std::vector<double> normalize_weights(std::vector<double> w,
                                             size_t expect) {
  if (w.empty()) w.assign(expect, 1.0);
  if (w.size() != expect)
    throw ParameterError("ensemble weight count " + std::to_string(w.size()) +
                         " does not match member count " +
                         std::to_string(expect));
  double total = 0.0;
  for (double v : w) {
    if (v < 0.0) throw ParameterError("ensemble weights must be >= 0");
    total += v;
  }
  if (total <= 0.0) throw ParameterError("ensemble weights sum to zero");
  for (double& v : w) v /= total;
  return w;
}

inline std::array<double, 2> ensemble_probs(
    const std::vector<std::array<double, 2>>& members,
    std::vector<double> weights = {}) {
  if (members.size() < 2)
    throw ParameterError("ensemble needs >= 2 member predictions");
  const auto w = normalize_weights(std::move(weights), members.size());
  std::array<double, 2> out{0.0, 0.0};
  for (size_t i = 0; i < members.size(); ++i) {
    out[0] += w[i] * members[i][0];
    out[1] += w[i] * members[i][1];
  }
  return out;
}

inline int ensemble_label(const std::array<double, 2>& probs) {
  return probs[1] >= probs[0] ? 1 : 0;
}

// Batch form over (N,2) probability tensors, one per model.
inline Tensor<float> ensemble_batch(const std::vector<Tensor<float>>& members,
                                    std::vector<double> weights = {}) {
  if (members.size() < 2)
    throw ParameterError("ensemble needs >= 2 member predictions");
  const auto& first = members.front();
  if (first.rank() != 2 || first.dim(1) != 2)
    throw ParameterError("ensemble members must be (N,2) probability rows");
  for (const auto& m : members)
    if (m.rank() != 2 || m.dim(0) != first.dim(0) || m.dim(1) != 2)
      throw ParameterError("ensemble member shape mismatch: " + m.shape_str() +
                           " vs " + first.shape_str());
  const auto w = normalize_weights(std::move(weights), members.size());
  Tensor<float> out({first.dim(0), 2});
  for (int r = 0; r < first.dim(0); ++r)
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (size_t m = 0; m < members.size(); ++m)
        acc += w[m] * members[m].at2(r, c);
      out.at2(r, c) = static_cast<float>(acc);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Test-time augmentation: the prediction is the equal-weight mean of the
// model's output on the original patch and on k seeded augmentations of it.
// The preprocessing hook maps a patch to the (3,H,W) network input exactly
// as the training pipeline did.
// ---------------------------------------------------------------------------

using PreprocessFn = std::function<Tensor<float>(const ImagePatch&)>;

template <typename T>
std::array<double, 2> tta_predict(ModelGraph<T>& model, const ImagePatch& patch,
                                  int k, const AugmentPolicy& policy,
                                  RngStream& stream, const PreprocessFn& prep) {
  if (k < 1) throw ParameterError("tta needs k >= 1 augmentations");
  std::vector<Tensor<float>> inputs;
  inputs.reserve(static_cast<size_t>(k) + 1);
  inputs.push_back(prep(patch));
  for (int i = 0; i < k; ++i)
    inputs.push_back(prep(augment_sample(patch, policy, stream)));

  const auto& shape0 = inputs.front();
  Tensor<T> batch({static_cast<int>(inputs.size()), shape0.dim(0),
                   shape0.dim(1), shape0.dim(2)});
  const size_t sample = shape0.size();
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != sample)
      throw ShapeError("tta preprocessing produced inconsistent shapes");
    for (size_t j = 0; j < sample; ++j)
      batch[i * sample + j] = static_cast<T>(inputs[i][j]);
  }
  model.set_mode(Mode::eval);
  Tensor<T> probs = model.forward(batch);
  std::array<double, 2> mean{0.0, 0.0};
  for (int r = 0; r < probs.dim(0); ++r) {
    mean[0] += probs.at2(r, 0);
    mean[1] += probs.at2(r, 1);
  }
  mean[0] /= probs.dim(0);
  mean[1] /= probs.dim(0);
  return mean;
}

// ---------------------------------------------------------------------------
// Patient-level diagnosis: a patient is positive iff any of their cells is
// predicted positive. Cell ids join to patients through the supplied map;
// patient ranking for AUC uses the maximum positive-class probability.
// ---------------------------------------------------------------------------

struct PatientDiagnosis {
  std::string patient_id;
  size_t cells = 0;
  int predicted = 0;  // OR over cell predictions
  int truth = 0;      // OR over cell labels
  double max_prob = 0.0;
};

struct PatientReport {
  std::vector<PatientDiagnosis> patients;  // ordered by patient id
  double accuracy = 0.0;
  double auc = 0.0;
  bool auc_valid = false;
};

inline PatientReport patient_diagnose(
    const std::vector<PredictionRecord>& preds,
    const std::map<std::string, std::string>& patient_of_id) {
  if (preds.empty()) throw HarnessError("patient diagnosis of zero cells");
  std::map<std::string, PatientDiagnosis> grouped;
  for (const auto& r : preds) {
    const auto it = patient_of_id.find(r.id);
    if (it == patient_of_id.end())
      throw JoinError("prediction id '" + r.id + "' has no patient mapping");
    PatientDiagnosis& d = grouped[it->second];
    d.patient_id = it->second;
    ++d.cells;
    d.predicted |= r.p >= 0.5 ? 1 : 0;
    d.truth |= r.y;
    d.max_prob = std::max(d.max_prob, r.p);
  }
  PatientReport rep;
  size_t correct = 0;
  std::vector<PredictionRecord> ranked;
  for (const auto& [id, d] : grouped) {
    rep.patients.push_back(d);
    correct += d.predicted == d.truth ? 1 : 0;
    ranked.push_back(make_prediction(id, d.truth, d.max_prob));
  }
  rep.accuracy = static_cast<double>(correct) /
                 static_cast<double>(rep.patients.size());
  try {
    rep.auc = roc_auc(ranked);
    rep.auc_valid = true;
  } catch (const MetricError&) {
    rep.auc_valid = false;  // single-class cohort
  }
  return rep;
}

// ---------------------------------------------------------------------------
// False-case export: misclassified samples split into false positives and
// false negatives, written as listings plus per-class image copies for
// review. Unreadable sources are recorded, never fatal.
// ---------------------------------------------------------------------------

struct FalseCaseReport {
  std::vector<PredictionRecord> false_positives;
  std::vector<PredictionRecord> false_negatives;
  std::vector<std::string> copy_failures;
};

namespace ensemble_detail {

inline void write_listing(const std::filesystem::path& path,
                          const std::vector<PredictionRecord>& rows) {
  std::ofstream out(path);
  if (!out) throw HarnessError("cannot write listing: " + path.string());
  out << "id,probability\n";
  for (const auto& r : rows)
    out << r.id << ',' << metrics_detail::to_text(r.p) << "\n";
}

}  // namespace ensemble_detail

inline FalseCaseReport false_case_report(
    const std::vector<PredictionRecord>& preds, const Manifest& manifest,
    const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::map<std::string, std::string> path_of_id;
  for (const auto& row : manifest.rows) path_of_id[row.path] = row.path;

  FalseCaseReport rep;
  for (const auto& r : preds) {
    const int yhat = r.p >= 0.5 ? 1 : 0;
    if (yhat == r.y) continue;
    (yhat == 1 ? rep.false_positives : rep.false_negatives).push_back(r);
  }

  fs::create_directories(fs::path(out_dir) / "false_positive");
  fs::create_directories(fs::path(out_dir) / "false_negative");
  ensemble_detail::write_listing(fs::path(out_dir) / "false_positives.csv",
                                 rep.false_positives);
  ensemble_detail::write_listing(fs::path(out_dir) / "false_negatives.csv",
                                 rep.false_negatives);

  auto copy_all = [&](const std::vector<PredictionRecord>& rows,
                      const char* sub) {
    for (const auto& r : rows) {
      const auto it = path_of_id.find(r.id);
      const fs::path src = it != path_of_id.end() ? it->second : r.id;
      std::error_code ec;
      fs::copy_file(src, fs::path(out_dir) / sub / src.filename(),
                    fs::copy_options::overwrite_existing, ec);
      if (ec)
        rep.copy_failures.push_back(src.string() + ": " + ec.message());
    }
  };
  copy_all(rep.false_positives, "false_positive");
  copy_all(rep.false_negatives, "false_negative");
  return rep;
}

}  // namespace rbcnet
