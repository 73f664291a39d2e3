#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rbcnet/checkpoint.hpp"

#include "rbcnet/augment.hpp"
#include "rbcnet/config.hpp"
#include "rbcnet/curves.hpp"
#include "rbcnet/errors.hpp"
#include "rbcnet/gradcheck.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/manifest.hpp"
#include "rbcnet/metrics.hpp"
#include "rbcnet/model.hpp"
#include "rbcnet/preprocess.hpp"
#include "rbcnet/train.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Preprocessing plan: every statistic is fitted on the training split alone
// and then applied unchanged to validation/test, so no evaluation pixel ever
// leaks into a normalization constant. Order: stain transfer (byte scale),
// base mode (rescale / standardize / mean-normalize), then the optional
// featurewise and ZCA dataset transforms.
// ---------------------------------------------------------------------------

struct PreprocessOptions {
  std::string mode = "rescale";
  bool stain = false;
  bool featurewise = false;
  bool zca = false;
};

inline PreprocessOptions preprocess_options(const RunConfig& cfg) {
  return {cfg.preprocess, cfg.stain_norm, cfg.featurewise, cfg.zca};
}

struct PreprocessPlan {
  PreprocessOptions opt;
  StainStats stain_target;    // mean of per-image stain stats over train
  StandardizeStats channel;   // byte-scale channel stats (standardize modes)
  FeaturewiseStats fw;
  ZcaChannelStats zc;
};

namespace harness_detail {

inline ImagePatch maybe_stain(const PreprocessPlan& plan,
                              const ImagePatch& patch) {
  return plan.opt.stain ? stain_normalize(patch, plan.stain_target) : patch;
}

inline Tensor<float> base_transform(const PreprocessPlan& plan,
                                    const Tensor<float>& batch) {
  if (plan.opt.mode == "rescale") return min_max_rescale(batch);
  if (plan.opt.mode == "standardize") return standardize(batch, plan.channel);
  if (plan.opt.mode == "mean-normalize")
    return mean_normalize(batch, plan.channel);
  throw ConfigError("unknown preprocess mode '" + plan.opt.mode + "'");
}

inline Tensor<float> stack_stained(const PreprocessPlan& plan,
                                   const std::vector<ImagePatch>& patches) {
  if (!plan.opt.stain) return make_batch(patches);
  std::vector<ImagePatch> stained;
  stained.reserve(patches.size());
  for (const auto& p : patches) stained.push_back(maybe_stain(plan, p));
  return make_batch(stained);
}

}  // namespace harness_detail

inline PreprocessPlan fit_preprocess(const std::vector<ImagePatch>& train,
                                     const PreprocessOptions& opt) {
  if (train.empty()) throw HarnessError("preprocessing fit on empty split");
  PreprocessPlan plan;
  plan.opt = opt;
  if (opt.stain) {
    for (const auto& p : train) {
      const StainStats s = compute_stain_stats(p);
      for (int c = 0; c < 3; ++c) {
        plan.stain_target.mean[c] += s.mean[c] / train.size();
        plan.stain_target.std[c] += s.std[c] / train.size();
      }
    }
  }
  const Tensor<float> bytes = harness_detail::stack_stained(plan, train);
  if (opt.mode != "rescale") plan.channel = compute_channel_stats(bytes);
  if (opt.featurewise || opt.zca) {
    // Fit each stage on exactly the tensor it will later transform.
    Tensor<float> staged = harness_detail::base_transform(plan, bytes);
    if (opt.featurewise) {
      plan.fw = compute_featurewise_stats(staged);
      if (opt.zca) staged = featurewise_standardize(staged, plan.fw);
    }
    if (opt.zca) plan.zc = compute_zca_channel_stats(staged);
  }
  return plan;
}

// (N,3,H,W) network input for a list of patches.
inline Tensor<float> preprocess_batch(const PreprocessPlan& plan,
                                      const std::vector<ImagePatch>& patches) {
  Tensor<float> x = harness_detail::base_transform(
      plan, harness_detail::stack_stained(plan, patches));
  if (plan.opt.featurewise) x = featurewise_standardize(x, plan.fw);
  if (plan.opt.zca) x = zca_channel_whiten(x, plan.zc);
  return x;
}

// (3,H,W) input for one patch; the hook form feeds test-time augmentation.
inline Tensor<float> preprocess_one(const PreprocessPlan& plan,
                                    const ImagePatch& patch) {
  Tensor<float> batch = preprocess_batch(plan, {patch});
  Tensor<float> one({batch.dim(1), batch.dim(2), batch.dim(3)});
  std::copy(batch.data(), batch.data() + batch.size(), one.data());
  return one;
}

inline std::function<Tensor<float>(const ImagePatch&)> preprocess_fn(
    const PreprocessPlan& plan) {
  return [plan](const ImagePatch& p) { return preprocess_one(plan, p); };
}

// ---------------------------------------------------------------------------
// Labeled in-memory set with ids for per-sample reporting.
// ---------------------------------------------------------------------------

struct LabeledSet {
  Dataset<float> data;
  std::vector<std::string> ids;       // source path, or index when absent
  std::vector<std::string> patients;  // parallel to ids; may hold empties
};

inline LabeledSet assemble(const PreprocessPlan& plan,
                           const std::vector<ImagePatch>& patches) {
  if (patches.empty()) throw HarnessError("assembling an empty split");
  LabeledSet set;
  set.data.x = preprocess_batch(plan, patches);
  for (size_t i = 0; i < patches.size(); ++i) {
    set.data.y.push_back(patches[i].label);
    set.ids.push_back(patches[i].source_path.empty()
                          ? "sample-" + std::to_string(i)
                          : patches[i].source_path);
    set.patients.push_back(patches[i].patient_id);
  }
  return set;
}

// Reads every manifest row into memory at the network input size. Labels and
// patient ids come from the manifest; the source path identifies the sample in
// downstream reports.
inline std::vector<ImagePatch> load_patches(const Manifest& m, int input_size) {
  std::vector<ImagePatch> out;
  out.reserve(m.size());
  for (const auto& row : m.rows) {
    ImagePatch p = resample_to(read_image(row.path), input_size);
    p.label = row.label;
    p.patient_id = row.patient_id;
    p.source_path = row.path;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<ImagePatch> select_patches(
    const std::vector<ImagePatch>& pool, const std::vector<size_t>& idx) {
  std::vector<ImagePatch> out;
  out.reserve(idx.size());
  for (size_t i : idx) {
    if (i >= pool.size()) throw RangeError("patch index out of range");
    out.push_back(pool[i]);
  }
  return out;
}

// Offline expansion: variant 0 keeps the original, variants 1..copies are
// fresh augmentations, each from the (seed, row, variant) stream, so the
// expanded set is order-independent and reproducible row by row.
inline std::vector<ImagePatch> expand_patches(
    const std::vector<ImagePatch>& rows, int copies,
    const AugmentPolicy& policy, uint64_t seed) {
  if (copies < 0) throw ParameterError("augment copies must be >= 0");
  std::vector<ImagePatch> out;
  out.reserve(rows.size() * (static_cast<size_t>(copies) + 1));
  for (size_t r = 0; r < rows.size(); ++r) {
    out.push_back(rows[r]);
    for (int v = 1; v <= copies; ++v) {
      RngStream s = augment_stream(seed, r, v);
      out.push_back(augment_sample(rows[r], policy, s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation to per-sample records plus the aggregate report.
// ---------------------------------------------------------------------------

struct EvalResult {
  std::vector<PredictionRecord> preds;
  MetricsReport report;
};

template <typename T>
EvalResult evaluate_records(ModelGraph<T>& model, const LabeledSet& set,
                            int batch_size = 64) {
  const size_t n = set.data.size();
  if (n == 0) throw HarnessError("evaluating an empty set");
  model.set_mode(Mode::eval);
  EvalResult res;
  double loss_sum = 0.0;
  for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
    const size_t stop = std::min(n, start + static_cast<size_t>(batch_size));
    std::vector<size_t> sel(stop - start);
    std::iota(sel.begin(), sel.end(), start);
    Batch<float> b = set.data.gather(sel);
    Tensor<T> x = tensor_cast<T>(b.x);
    Tensor<T> probs = model.forward(x);
    loss_sum += bce_loss(probs, b.y) * static_cast<double>(sel.size());
    for (size_t i = 0; i < sel.size(); ++i)
      res.preds.push_back(make_prediction(
          set.ids[sel[i]], b.y[i],
          static_cast<double>(probs.at2(static_cast<int>(i), 1))));
  }
  res.report = compute_report(res.preds, loss_sum / static_cast<double>(n));
  return res;
}

// ---------------------------------------------------------------------------
// One train/evaluate pass: fit the preprocessing plan on the training
// patches, train a freshly initialized model with per-epoch validation, then
// score the best-validation model on the held-out set.
// ---------------------------------------------------------------------------

inline ModelGraph<float> build_model(const RunConfig& cfg) {
  if (cfg.model == "custom") return build_custom_net<float>(cfg.input_size);
  if (cfg.model == "custom-small")
    return build_custom_net_small<float>(cfg.input_size, cfg.base_width,
                                         cfg.head_width);
  if (cfg.model == "vgg") return build_vgg_baseline<float>(cfg.input_size);
  throw ConfigError("unknown model '" + cfg.model + "'");
}

inline TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.optimizer.lr = cfg.lr;
  tc.optimizer.rho = cfg.rho;
  tc.optimizer.eps = cfg.eps;
  tc.seed = cfg.seed;
  return tc;
}

struct SingleRun {
  PreprocessPlan plan;
  FitResult<float> fit;
  EvalResult test;
};

inline SingleRun run_single(const RunConfig& cfg,
                            const std::vector<ImagePatch>& train,
                            const std::vector<ImagePatch>& val,
                            const std::vector<ImagePatch>& test) {
  std::vector<ImagePatch> train_used =
      cfg.augment_copies > 0
          ? expand_patches(train, cfg.augment_copies, AugmentPolicy{}, cfg.seed)
          : train;
  SingleRun run;
  run.plan = fit_preprocess(train_used, preprocess_options(cfg));
  LabeledSet tr = assemble(run.plan, train_used);
  LabeledSet va = assemble(run.plan, val);
  LabeledSet te = assemble(run.plan, test);

  ModelGraph<float> model = build_model(cfg);
  glorot_init(model, RngStream(cfg.seed, 0x696e6974ULL));  // "init"
  if (!cfg.init_from.empty()) load_checkpoint(cfg.init_from, model);
  if (cfg.model == "vgg") freeze_vgg_layers(model, cfg.freeze);

  run.fit = fit(model, tr.data.size(), tr.data.batch_fn(), va.data.size(),
                va.data.batch_fn(), train_config(cfg));
  run.test = evaluate_records(run.fit.best_model, te, cfg.batch_size);
  return run;
}

// ---------------------------------------------------------------------------
// Aggregation: mean with the sample standard deviation; a single repeat has
// no spread estimate, so the deviation is absent rather than zero.
// ---------------------------------------------------------------------------

struct Aggregate {
  double mean = 0.0;
  std::optional<double> stdev;
};

inline Aggregate aggregate(const std::vector<double>& v) {
  if (v.empty()) throw HarnessError("aggregating zero values");
  Aggregate a;
  for (double x : v) a.mean += x;
  a.mean /= static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.stdev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

struct MetricAggregate {
  Aggregate accuracy, precision, recall, f1, mcc, auc;
};

inline MetricAggregate aggregate_reports(
    const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw HarnessError("aggregating zero reports");
  auto pull = [&](double MetricsReport::*field) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(r.*field);
    return aggregate(v);
  };
  return {pull(&MetricsReport::accuracy), pull(&MetricsReport::precision),
          pull(&MetricsReport::recall),   pull(&MetricsReport::f1),
          pull(&MetricsReport::mcc),      pull(&MetricsReport::auc)};
}

// ---------------------------------------------------------------------------
// Cross-validation: a plain k-way partition of the pool; each round trains on
// everything outside its fold and both validates and scores on the fold.
// Round r gets its own derived training seed so folds are independent runs.
// ---------------------------------------------------------------------------

struct CvOutcome {
  CvPlan plan;
  std::vector<MetricsReport> rounds;
  MetricAggregate summary;
};

inline uint64_t derive_seed(uint64_t base, uint64_t family, uint64_t index) {
  return RngStream(base, family).substream(index).next_u64();
}

inline CvOutcome run_cv(const RunConfig& cfg,
                        const std::vector<ImagePatch>& pool) {
  CvOutcome out;
  std::vector<size_t> pool_idx(pool.size());
  std::iota(pool_idx.begin(), pool_idx.end(), size_t{0});
  out.plan =
      kfold_plan(pool_idx, static_cast<size_t>(cfg.cv_parts), cfg.split_seed);
  if (cfg.cv_rounds > cfg.cv_parts)
    throw PlanError("cv rounds exceed fold count");
  for (int r = 0; r < cfg.cv_rounds; ++r) {
    const auto [train_idx, val_idx] =
        out.plan.round_split(static_cast<size_t>(r));
    RunConfig round_cfg = cfg;
    round_cfg.seed = derive_seed(cfg.seed, 0x63767264ULL, r);  // "cvrd"
    SingleRun run =
        run_single(round_cfg, select_patches(pool, train_idx),
                   select_patches(pool, val_idx), select_patches(pool, val_idx));
    out.rounds.push_back(run.test.report);
  }
  out.summary = aggregate_reports(out.rounds);
  return out;
}

// ---------------------------------------------------------------------------
// Repeated holdout: independent 80:10:10 splits (patient-disjoint when asked),
// each with a derived split seed and training seed, aggregated the same way.
// ---------------------------------------------------------------------------

struct HoldoutOutcome {
  std::vector<MetricsReport> repeats;
  MetricAggregate summary;
};

inline Manifest manifest_of(const std::vector<ImagePatch>& patches) {
  Manifest m;
  for (size_t i = 0; i < patches.size(); ++i) {
    ManifestRow row;
    row.path = patches[i].source_path.empty() ? "sample-" + std::to_string(i)
                                              : patches[i].source_path;
    row.label = patches[i].label;
    row.patient_id = patches[i].patient_id;
    m.rows.push_back(std::move(row));
  }
  return m;
}

inline HoldoutOutcome run_holdout(const RunConfig& cfg,
                                  const std::vector<ImagePatch>& pool) {
  if (cfg.holdout_repeats < 1) throw ParameterError("holdout repeats must be >= 1");
  const Manifest manifest = manifest_of(pool);
  HoldoutOutcome out;
  for (int rep = 0; rep < cfg.holdout_repeats; ++rep) {
    const uint64_t split_seed =
        cfg.holdout_repeats == 1
            ? cfg.split_seed
            : derive_seed(cfg.split_seed, 0x686f7264ULL, rep);  // "hord"
    const SplitPlan plan = cfg.patient_split
                               ? split_80_10_10_patient_disjoint(manifest, split_seed)
                               : split_80_10_10(manifest, split_seed);
    RunConfig rep_cfg = cfg;
    rep_cfg.seed = derive_seed(cfg.seed, 0x686f7265ULL, rep);  // "hore"
    SingleRun run = run_single(rep_cfg, select_patches(pool, plan.train),
                               select_patches(pool, plan.val),
                               select_patches(pool, plan.test));
    out.repeats.push_back(run.test.report);
  }
  out.summary = aggregate_reports(out.repeats);
  return out;
}

// ---------------------------------------------------------------------------
// Ablation grids: named config variants run through the same holdout loop,
// reported as one table with the six headline metrics per row.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string name;
  MetricAggregate metrics;
};

using ConfigVariant = std::pair<std::string, RunConfig>;

inline std::vector<AblationRow> run_ablation(
    const std::vector<ConfigVariant>& variants,
    const std::vector<ImagePatch>& pool) {
  if (variants.empty()) throw HarnessError("ablation over an empty grid");
  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : variants)
    rows.push_back({name, run_holdout(cfg, pool).summary});
  return rows;
}

// Baseline freeze sweep used for transfer studies.
inline std::vector<ConfigVariant> freeze_sweep_variants(const RunConfig& base) {
  std::vector<ConfigVariant> out;
  for (const char* range : {"none", "all", "L1-L8", "L1-L14", "L1-L16"}) {
    RunConfig cfg = base;
    cfg.model = "vgg";
    cfg.freeze = range;
    out.emplace_back(std::string("freeze-") + range, cfg);
  }
  return out;
}

// Model x preprocessing grid.
inline std::vector<ConfigVariant> model_preprocess_grid(
    const RunConfig& base, const std::vector<std::string>& models,
    const std::vector<std::string>& modes) {
  std::vector<ConfigVariant> out;
  for (const auto& m : models)
    for (const auto& p : modes) {
      RunConfig cfg = base;
      cfg.model = m;
      cfg.preprocess = p;
      out.emplace_back(m + "+" + p, cfg);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Table writers. Absent deviations print as empty cells, so a single-repeat
// table is visibly different from a zero-spread one.
// ---------------------------------------------------------------------------

inline constexpr const char* kAggregateTableHeader =
    "name,accuracy,accuracy_sd,precision,precision_sd,recall,recall_sd,"
    "f1,f1_sd,mcc,mcc_sd,auc,auc_sd";

namespace harness_detail {

inline void put_agg(std::ostream& os, const Aggregate& a) {
  os << ',' << metrics_detail::to_text(a.mean) << ',';
  if (a.stdev) os << metrics_detail::to_text(*a.stdev);
}

}  // namespace harness_detail

inline void write_aggregate_table(const std::string& path,
                                  const std::vector<AblationRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw HarnessError("cannot write table: " + path);
  os << kAggregateTableHeader << "\n";
  for (const auto& row : rows) {
    os << row.name;
    harness_detail::put_agg(os, row.metrics.accuracy);
    harness_detail::put_agg(os, row.metrics.precision);
    harness_detail::put_agg(os, row.metrics.recall);
    harness_detail::put_agg(os, row.metrics.f1);
    harness_detail::put_agg(os, row.metrics.mcc);
    harness_detail::put_agg(os, row.metrics.auc);
    os << "\n";
  }
}

inline void write_round_table(const std::string& path,
                              const std::vector<MetricsReport>& rounds) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw HarnessError("cannot write table: " + path);
  os << "round," << kMetricsTableHeader << "\n";
  for (size_t i = 0; i < rounds.size(); ++i)
    os << (i + 1) << ',' << metrics_table_row(rounds[i]) << "\n";
}

inline void write_predictions_csv(const std::string& path,
                                  const std::vector<PredictionRecord>& preds) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw HarnessError("cannot write predictions: " + path);
  os << "id,label,probability,predicted\n";
  for (const auto& r : preds)
    os << r.id << ',' << r.y << ',' << metrics_detail::to_text(r.p) << ','
       << r.predicted << "\n";
}

// ---------------------------------------------------------------------------
// Gradient self-check: finite differences against the analytic backward of
// every layer kind, on double storage with kink margins enforced by
// construction. The optional fault injection flips the sign of the dense
// weight gradient; a healthy checker must flag it.
// ---------------------------------------------------------------------------

enum class GradFault { none, dense_sign };

struct GradCheckRow {
  std::string kind;
  int instances = 0;
  double worst_rel = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double tolerance = 0.0;
  bool all_pass = false;
};

namespace harness_detail {

using DTensor = Tensor<double>;

inline DTensor rand_tensor(const std::vector<int>& shape, RngStream& s,
                           double lo = -1.0, double hi = 1.0) {
  DTensor t(shape);
  for (size_t i = 0; i < t.size(); ++i) t[i] = s.uniform(lo, hi);
  return t;
}

// Linear probe loss sum(u .* y) turns any layer into a scalar function whose
// exact input gradient is the backward pass applied to u.
inline double probe_loss(const DTensor& y, const DTensor& u) {
  double acc = 0.0;
  for (size_t i = 0; i < y.size(); ++i) acc += y[i] * u[i];
  return acc;
}

// Keeps every relu input away from the kink by at least `margin`.
inline void enforce_relu_margin(DTensor& x, double margin) {
  for (size_t i = 0; i < x.size(); ++i)
    if (std::fabs(x[i]) < margin) x[i] = x[i] < 0 ? -margin : margin;
}

// Keeps each 2x2 pool window's top-two gap at least `margin`.
inline void enforce_pool_margin(DTensor& x, double margin) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (int in = 0; in < n; ++in)
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy + 1 < h; yy += 2)
        for (int xx = 0; xx + 1 < w; xx += 2) {
          size_t idx[4] = {x.idx4(in, ch, yy, xx), x.idx4(in, ch, yy, xx + 1),
                           x.idx4(in, ch, yy + 1, xx),
                           x.idx4(in, ch, yy + 1, xx + 1)};
          size_t best = 0;
          for (size_t k = 1; k < 4; ++k)
            if (x[idx[k]] > x[idx[best]]) best = k;
          double second = -1e300;
          for (size_t k = 0; k < 4; ++k)
            if (k != best) second = std::max(second, x[idx[k]]);
          if (x[idx[best]] - second < margin) x[idx[best]] = second + margin;
        }
}

}  // namespace harness_detail

inline GradCheckReport run_gradcheck(int instances = 100, double tol = 1e-3,
                                     uint64_t seed = 7,
                                     GradFault fault = GradFault::none) {
  using harness_detail::DTensor;
  using harness_detail::probe_loss;
  using harness_detail::rand_tensor;
  if (instances < 1) throw ParameterError("gradcheck needs >= 1 instance");
  const double h = 1e-6;
  const double margin = 1e-3;  // >> 30h: probes cannot cross a kink
  GradCheckReport rep;
  rep.tolerance = tol;
  RngStream base(seed, 0x67636b21ULL);  // "gck!"

  auto run_kind = [&](const std::string& kind,
                      const std::function<double(RngStream&)>& one) {
    GradCheckRow row;
    row.kind = kind;
    row.instances = instances;
    for (int i = 0; i < instances; ++i) {
      RngStream s = base.substream(std::hash<std::string>{}(kind))
                        .substream(static_cast<uint64_t>(i));
      row.worst_rel = std::max(row.worst_rel, one(s));
    }
    row.pass = row.worst_rel < tol;
    rep.rows.push_back(row);
  };

  run_kind("conv2d", [&](RngStream& s) {
    DTensor x = rand_tensor({1, 2, 5, 5}, s);
    DTensor w = rand_tensor({3, 2, 3, 3}, s);
    DTensor b = rand_tensor({3}, s);
    DTensor u = rand_tensor({1, 3, 5, 5}, s);
    auto g = conv2d_backward(x, w, u);
    double worst = max_relative_error(
        g.dx, finite_diff_gradient<double>(
                  [&](const DTensor& t) {
                    return probe_loss(conv2d_forward(t, w, b), u);
                  },
                  x, h));
    worst = std::max(worst, max_relative_error(
                                g.dw, finite_diff_gradient<double>(
                                          [&](const DTensor& t) {
                                            return probe_loss(
                                                conv2d_forward(x, t, b), u);
                                          },
                                          w, h)));
    worst = std::max(worst, max_relative_error(
                                g.db, finite_diff_gradient<double>(
                                          [&](const DTensor& t) {
                                            return probe_loss(
                                                conv2d_forward(x, w, t), u);
                                          },
                                          b, h)));
    return worst;
  });

  run_kind("maxpool2d", [&](RngStream& s) {
    DTensor x = rand_tensor({1, 2, 6, 6}, s);
    harness_detail::enforce_pool_margin(x, margin);
    DTensor u = rand_tensor({1, 2, 3, 3}, s);
    auto fwd = maxpool2d_forward(x);
    DTensor dx = maxpool2d_backward(x.shape(), fwd.argmax, u);
    return max_relative_error(
        dx, finite_diff_gradient<double>(
                [&](const DTensor& t) {
                  return probe_loss(maxpool2d_forward(t).y, u);
                },
                x, h));
  });

  run_kind("relu", [&](RngStream& s) {
    DTensor x = rand_tensor({4, 7}, s);
    harness_detail::enforce_relu_margin(x, margin);
    DTensor u = rand_tensor({4, 7}, s);
    DTensor dx = relu_backward(x, u);
    return max_relative_error(
        dx, finite_diff_gradient<double>(
                [&](const DTensor& t) { return probe_loss(relu_forward(t), u); },
                x, h));
  });

  run_kind("dense", [&](RngStream& s) {
    DTensor x = rand_tensor({4, 5}, s);
    DTensor w = rand_tensor({5, 3}, s);
    DTensor b = rand_tensor({3}, s);
    DTensor u = rand_tensor({4, 3}, s);
    auto g = dense_backward(x, w, u);
    if (fault == GradFault::dense_sign)
      for (size_t i = 0; i < g.dw.size(); ++i) g.dw[i] = -g.dw[i];
    double worst = max_relative_error(
        g.dx, finite_diff_gradient<double>(
                  [&](const DTensor& t) {
                    return probe_loss(dense_forward(t, w, b), u);
                  },
                  x, h));
    worst = std::max(worst, max_relative_error(
                                g.dw, finite_diff_gradient<double>(
                                          [&](const DTensor& t) {
                                            return probe_loss(
                                                dense_forward(x, t, b), u);
                                          },
                                          w, h)));
    worst = std::max(worst, max_relative_error(
                                g.db, finite_diff_gradient<double>(
                                          [&](const DTensor& t) {
                                            return probe_loss(
                                                dense_forward(x, w, t), u);
                                          },
                                          b, h)));
    return worst;
  });

  run_kind("dropout", [&](RngStream& s) {
    DTensor x = rand_tensor({4, 6}, s);
    DTensor u = rand_tensor({4, 6}, s);
    RngStream mask_stream = s.substream(99);
    auto fwd = dropout_forward(x, 0.5, Mode::train, mask_stream);
    // The mask is part of the sampled function, so differentiate x -> x.*mask
    // with the realized mask held fixed.
    DTensor dx = dropout_backward(fwd.mask, u);
    return max_relative_error(
        dx, finite_diff_gradient<double>(
                [&](const DTensor& t) {
                  DTensor y(t.shape());
                  for (size_t i = 0; i < t.size(); ++i)
                    y[i] = t[i] * fwd.mask[i];
                  return probe_loss(y, u);
                },
                x, h));
  });

  run_kind("flatten", [&](RngStream& s) {
    DTensor x = rand_tensor({2, 3, 4, 4}, s);
    DTensor u = rand_tensor({2, 48}, s);
    DTensor du = u;
    DTensor dx(x.shape());
    std::copy(du.data(), du.data() + du.size(), dx.data());
    return max_relative_error(
        dx, finite_diff_gradient<double>(
                [&](const DTensor& t) {
                  return probe_loss(flatten_forward(t), u);
                },
                x, h));
  });

  run_kind("softmax-bce", [&](RngStream& s) {
    DTensor z = rand_tensor({5, 2}, s, -2.0, 2.0);
    std::vector<int> labels(5);
    for (auto& l : labels) l = s.uniform(0.0, 1.0) < 0.5 ? 0 : 1;
    DTensor probs = softmax2_forward(z);
    DTensor dz = softmax_bce_grad(probs, labels);
    return max_relative_error(
        dz, finite_diff_gradient<double>(
                [&](const DTensor& t) {
                  return bce_loss(softmax2_forward(t), labels);
                },
                z, h));
  });

  rep.all_pass = true;
  for (const auto& r : rep.rows) rep.all_pass = rep.all_pass && r.pass;
  return rep;
}

inline std::string render_gradcheck(const GradCheckReport& rep) {
  std::string out;
  char buf[128];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%-12s instances=%d worst_rel=%.3e %s\n",
                  r.kind.c_str(), r.instances, r.worst_rel,
                  r.pass ? "pass" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "tolerance=%.1e overall=%s\n", rep.tolerance,
                rep.all_pass ? "pass" : "FAIL");
  out += buf;
  return out;
}

}  // namespace rbcnet
