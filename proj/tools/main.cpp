// rbcnet command line: dataset preparation, training, evaluation,
// resampling studies, ensembles, patient diagnosis, and the gradient
// self-check. Every key in RunConfig is exposed as a flag; flag > config
// file > default. All artifacts land in one output directory together with
// the effective configuration that produced them, and reruns with the same
// inputs, config, and seeds write byte-identical files.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "rbcnet/augment.hpp"
#include "rbcnet/checkpoint.hpp"
#include "rbcnet/config.hpp"
#include "rbcnet/ensemble.hpp"
#include "rbcnet/errors.hpp"
#include "rbcnet/features.hpp"
#include "rbcnet/harness.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/manifest.hpp"
#include "rbcnet/metrics.hpp"
#include "rbcnet/model.hpp"
#include "rbcnet/svm.hpp"
#include "rbcnet/train.hpp"

namespace rbcnet {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Flag plumbing: every config key becomes an option on every subcommand, all
// bound to one value buffer. Presence is checked across the parent app and
// the parsed subcommand, so `rbcnet --seed 5 train` and `rbcnet train --seed
// 5` behave identically.
// ---------------------------------------------------------------------------

struct FlagBook {
  std::string config_path;
  std::map<std::string, std::string> value;
  std::map<std::string, std::vector<CLI::Option*>> opts;

  void add_key(CLI::App* cmd, const std::string& key,
               const std::string& names) {
    opts[key].push_back(cmd->add_option(names, value[key]));
  }

  void add_all_keys(CLI::App* cmd) {
    for (const auto& [key, unused] : config_kv(RunConfig{})) {
      std::string names = "--" + key;
      if (key == "batch_size") names += ",--batch";
      if (key == "data_dir") names += ",--data";
      add_key(cmd, key, names);
    }
    cmd->add_option("--config", config_path);
  }

  bool present(const std::string& key) const {
    const auto it = opts.find(key);
    if (it == opts.end()) return false;
    for (const CLI::Option* o : it->second)
      if (o->count() > 0) return true;
    return false;
  }
};

struct Effective {
  RunConfig cfg;
  ConfigOrigin origin;
};

Effective build_config(const FlagBook& book) {
  Effective eff;
  eff.origin = default_origin();
  std::vector<std::string> problems;
  if (!book.config_path.empty())
    problems = apply_config_file(eff.cfg, book.config_path, &eff.origin);
  for (const auto& [key, unused] : book.opts) {
    if (!book.present(key)) continue;
    std::string v = book.value.at(key);
    if (key == "model" && v == "vgg-baseline") v = "vgg";
    if (auto err = set_config_key(eff.cfg, key, v))
      problems.push_back(*err);
    else
      eff.origin[key] = "flag";
  }
  const auto bad = validate_config(eff.cfg);
  problems.insert(problems.end(), bad.begin(), bad.end());
  if (!problems.empty()) throw ConfigError(join_problems(problems));
  return eff;
}

std::string utc_stamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// Pins the output directory (timestamped unless the user chose one), creates
// it, and drops the effective config for provenance.
std::string open_out_dir(Effective& eff, const std::string& cmd) {
  if (eff.origin["out"] == "default")
    eff.cfg.out = "runs/" + cmd + "-" + utc_stamp();
  fs::create_directories(eff.cfg.out);
  write_effective_config(eff.cfg.out + "/effective-config.txt", eff.cfg,
                         &eff.origin);
  return eff.cfg.out;
}

Manifest input_manifest(const RunConfig& cfg) {
  if (!cfg.manifest.empty()) return load_manifest(cfg.manifest);
  if (!cfg.data_dir.empty()) return scan_class_tree(cfg.data_dir);
  throw ConfigError("set manifest= or data_dir= to locate input samples");
}

SplitPlan make_split(const Manifest& man, const RunConfig& cfg) {
  return cfg.patient_split
             ? split_80_10_10_patient_disjoint(man, cfg.split_seed)
             : split_80_10_10(man, cfg.split_seed);
}

void write_history_csv(const std::string& path,
                       const std::vector<HistoryRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw HarnessError("cannot write history: " + path);
  os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : rows)
    os << r.epoch << ',' << metrics_detail::to_text(r.train_loss) << ','
       << metrics_detail::to_text(r.train_acc) << ','
       << metrics_detail::to_text(r.val_loss) << ','
       << metrics_detail::to_text(r.val_acc) << "\n";
}

void write_metrics_csv(const std::string& path, const MetricsReport& rep) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw HarnessError("cannot write metrics table: " + path);
  os << kMetricsTableHeader << "\n" << metrics_table_row(rep) << "\n";
}

void write_eval_files(const std::string& out, const std::string& stem,
                      const MetricsReport& rep,
                      const std::vector<PredictionRecord>& preds) {
  write_metrics_report(out + "/" + stem + "_metrics.txt", rep);
  write_metrics_csv(out + "/" + stem + "_metrics.csv", rep);
  write_predictions_csv(out + "/" + stem + "_predictions.csv", preds);
}

std::vector<float> feature_row(const Tensor<float>& x, int r) {
  std::vector<float> v(static_cast<size_t>(x.dim(1)));
  for (int d = 0; d < x.dim(1); ++d) v[static_cast<size_t>(d)] = x.at2(r, d);
  return v;
}

double hard_or_soft_loss(const std::vector<PredictionRecord>& preds) {
  double sum = 0.0;
  for (const auto& r : preds) {
    const double p = r.y == 1 ? r.p : 1.0 - r.p;
    sum += -std::log(std::max(p, 1e-12));
  }
  return sum / static_cast<double>(preds.size());
}

ModelGraph<float> load_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty())
    throw ConfigError("set checkpoint= to point at a trained model");
  ModelGraph<float> model = build_model(cfg);
  load_checkpoint(cfg.checkpoint, model);
  return model;
}

// Eval-side preprocessing: statistics are fitted on the evaluation pool
// itself. The default `rescale` mode is stateless, so this matches training
// exactly; stateful modes are refit and documented as such.
struct EvalSet {
  PreprocessPlan plan;
  LabeledSet set;
};

EvalSet assemble_pool(const RunConfig& cfg,
                      const std::vector<ImagePatch>& pool) {
  EvalSet es;
  es.plan = fit_preprocess(pool, preprocess_options(cfg));
  es.set = assemble(es.plan, pool);
  return es;
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

int cmd_prepare(Effective eff) {
  RunConfig& cfg = eff.cfg;
  if (cfg.data_dir.empty())
    throw ConfigError("prepare needs data_dir= (directory with one folder "
                      "per class)");
  const Manifest scanned = scan_class_tree(cfg.data_dir);
  const std::string out = open_out_dir(eff, "prepare");

  Manifest cached;
  int skipped = 0;
  for (const auto& row : scanned.rows) {
    const fs::path dst = fs::path(out) / "patches" / label_name(row.label) /
                         (fs::path(row.path).stem().string() + ".png");
    try {
      const ImagePatch patch = resample_to(read_image(row.path), cfg.input_size);
      fs::create_directories(dst.parent_path());
      write_png(dst.string(), patch);
    } catch (const std::exception& e) {
      ++skipped;
      std::cerr << "skip " << row.path << ": " << e.what() << "\n";
      continue;
    }
    ManifestRow out_row = row;
    out_row.path = dst.string();
    cached.rows.push_back(std::move(out_row));
  }
  if (cached.rows.empty()) throw IngestError("no readable images prepared");
  std::sort(cached.rows.begin(), cached.rows.end(),
            [](const ManifestRow& a, const ManifestRow& b) {
              return a.path < b.path;
            });
  save_manifest(out + "/manifest.csv", cached);
  std::cout << "prepare ok rows=" << cached.rows.size()
            << " skipped=" << skipped << " manifest=" << out
            << "/manifest.csv\n";
  return 0;
}

int cmd_train(Effective eff, bool with_svm) {
  RunConfig& cfg = eff.cfg;
  const Manifest man = input_manifest(cfg);
  const auto pool = load_patches(man, cfg.input_size);
  const SplitPlan split = make_split(man, cfg);
  const std::string out = open_out_dir(eff, "train");

  const auto train = select_patches(pool, split.train);
  const auto val = select_patches(pool, split.val);
  const auto test = select_patches(pool, split.test);
  SingleRun run = run_single(cfg, train, val, test);

  write_history_csv(out + "/history.csv", run.fit.history);
  save_checkpoint(out + "/model.ckpt", run.fit.best_model,
                  CheckpointMeta{run.fit.best_epoch, run.fit.best_val_acc});
  write_eval_files(out, "test", run.test.report, run.test.preds);

  if (with_svm) {
    LabeledSet tr = assemble(run.plan, train);
    const FeatureMatrix ftr =
        extract_features(run.fit.best_model, tr.data.x, tr.data.y,
                         cfg.batch_size);
    const SmoResult smo = smo_train(
        ftr, SvmConfig{cfg.svm_c, cfg.svm_gamma, cfg.svm_tol,
                       cfg.svm_max_sweeps});
    save_svm_checkpoint(out + "/svm.ckpt", smo.model);

    LabeledSet te = assemble(run.plan, test);
    const FeatureMatrix fte =
        extract_features(run.fit.best_model, te.data.x, te.data.y,
                         cfg.batch_size);
    std::vector<PredictionRecord> preds;
    for (int i = 0; i < fte.x.dim(0); ++i) {
      const SvmDecision d = svm_predict(smo.model, feature_row(fte.x, i));
      preds.push_back(make_prediction(te.ids[static_cast<size_t>(i)],
                                      te.data.y[static_cast<size_t>(i)],
                                      d.label == 1 ? 1.0 : 0.0));
    }
    MetricsReport rep = compute_report(preds, hard_or_soft_loss(preds));
    write_eval_files(out, "svm", rep, preds);
  }

  std::cout << "train ok best_epoch=" << run.fit.best_epoch << " val_acc="
            << metrics_detail::to_text(run.fit.best_val_acc) << " test_acc="
            << metrics_detail::to_text(run.test.report.accuracy)
            << " out=" << out << "\n";
  return 0;
}

int cmd_eval(Effective eff, bool false_cases) {
  RunConfig& cfg = eff.cfg;
  ModelGraph<float> model = load_model(cfg);
  const Manifest man = input_manifest(cfg);
  const auto pool = load_patches(man, cfg.input_size);
  const std::string out = open_out_dir(eff, "eval");

  EvalSet es = assemble_pool(cfg, pool);
  const EvalResult res = evaluate_records(model, es.set, cfg.batch_size);
  write_eval_files(out, "eval", res.report, res.preds);
  if (false_cases) {
    const FalseCaseReport fc =
        false_case_report(res.preds, man, out + "/false_cases");
    std::cout << "false_positives=" << fc.false_positives.size()
              << " false_negatives=" << fc.false_negatives.size()
              << " copy_failures=" << fc.copy_failures.size() << "\n";
  }
  std::cout << render_report(res.report);
  return 0;
}

int cmd_cv(Effective eff) {
  RunConfig& cfg = eff.cfg;
  const auto pool = load_patches(input_manifest(cfg), cfg.input_size);
  const std::string out = open_out_dir(eff, "cv");
  const CvOutcome cv = run_cv(cfg, pool);
  write_round_table(out + "/rounds.csv", cv.rounds);
  write_aggregate_table(out + "/summary.csv", {{"cv", cv.summary}});
  std::cout << "cv ok rounds=" << cv.rounds.size() << " accuracy="
            << metrics_detail::to_text(cv.summary.accuracy.mean) << " out="
            << out << "\n";
  return 0;
}

int cmd_holdout(Effective eff) {
  RunConfig& cfg = eff.cfg;
  const auto pool = load_patches(input_manifest(cfg), cfg.input_size);
  const std::string out = open_out_dir(eff, "holdout");
  const HoldoutOutcome ho = run_holdout(cfg, pool);
  write_round_table(out + "/repeats.csv", ho.repeats);
  write_aggregate_table(out + "/summary.csv", {{"holdout", ho.summary}});
  std::cout << "holdout ok repeats=" << ho.repeats.size() << " accuracy="
            << metrics_detail::to_text(ho.summary.accuracy.mean) << " out="
            << out << "\n";
  return 0;
}

int cmd_ablate(Effective eff, const std::string& grid) {
  RunConfig& cfg = eff.cfg;
  const auto pool = load_patches(input_manifest(cfg), cfg.input_size);
  const std::string out = open_out_dir(eff, "ablate");
  const std::vector<ConfigVariant> variants =
      grid == "freeze"
          ? freeze_sweep_variants(cfg)
          : model_preprocess_grid(
                cfg, {cfg.model},
                {"rescale", "standardize", "mean-normalize"});
  const auto rows = run_ablation(variants, pool);
  write_aggregate_table(out + "/ablation.csv", rows);
  for (const auto& row : rows)
    std::cout << row.name << " accuracy="
              << metrics_detail::to_text(row.metrics.accuracy.mean) << "\n";
  std::cout << "ablate ok variants=" << rows.size() << " out=" << out << "\n";
  return 0;
}

// Members are checkpoint paths separated by commas; an `svm:` prefix marks a
// decision-function member whose features come from the first network in the
// list. SVM members vote with hard one-hot probabilities.
int cmd_ensemble(Effective eff, const std::string& members_arg) {
  RunConfig& cfg = eff.cfg;
  std::vector<std::string> net_paths, svm_paths;
  std::istringstream in(members_arg);
  for (std::string tok; std::getline(in, tok, ',');) {
    if (tok.rfind("svm:", 0) == 0)
      svm_paths.push_back(tok.substr(4));
    else if (!tok.empty())
      net_paths.push_back(tok);
  }
  if (net_paths.empty())
    throw ConfigError("ensemble needs at least one network checkpoint");
  if (net_paths.size() + svm_paths.size() < 2)
    throw ConfigError("ensemble needs at least two members");

  std::vector<ModelGraph<float>> nets;
  for (const auto& path : net_paths) {
    ModelGraph<float> m = build_model(cfg);
    load_checkpoint(path, m);
    nets.push_back(std::move(m));
  }

  const auto pool = load_patches(input_manifest(cfg), cfg.input_size);
  const std::string out = open_out_dir(eff, "ensemble");
  EvalSet es = assemble_pool(cfg, pool);
  const size_t n = es.set.data.size();

  // member_probs[m][i] = (p_neg, p_pos) of member m on sample i.
  std::vector<std::vector<std::array<double, 2>>> member_probs;
  for (auto& net : nets) {
    const EvalResult res = evaluate_records(net, es.set, cfg.batch_size);
    std::vector<std::array<double, 2>> probs(n);
    for (size_t i = 0; i < n; ++i)
      probs[i] = {1.0 - res.preds[i].p, res.preds[i].p};
    member_probs.push_back(std::move(probs));
  }
  for (const auto& path : svm_paths) {
    const KernelSvmModel svm = load_svm_checkpoint(path);
    const FeatureMatrix f =
        extract_features(nets.front(), es.set.data.x, es.set.data.y,
                         cfg.batch_size);
    std::vector<std::array<double, 2>> probs(n);
    for (size_t i = 0; i < n; ++i) {
      const SvmDecision d =
          svm_predict(svm, feature_row(f.x, static_cast<int>(i)));
      probs[i] = d.label == 1 ? std::array<double, 2>{0.0, 1.0}
                              : std::array<double, 2>{1.0, 0.0};
    }
    member_probs.push_back(std::move(probs));
  }

  const std::vector<double> weights = parse_weight_list(cfg.weights);
  std::vector<PredictionRecord> preds;
  for (size_t i = 0; i < n; ++i) {
    std::vector<std::array<double, 2>> at_i;
    at_i.reserve(member_probs.size());
    for (const auto& m : member_probs) at_i.push_back(m[i]);
    const auto combined = ensemble_probs(at_i, weights);
    preds.push_back(make_prediction(es.set.ids[i], es.set.data.y[i],
                                    combined[1]));
  }
  const MetricsReport rep = compute_report(preds, hard_or_soft_loss(preds));
  write_eval_files(out, "ensemble", rep, preds);
  std::cout << "ensemble ok members=" << member_probs.size() << "\n"
            << render_report(rep);
  return 0;
}

int cmd_tta(Effective eff) {
  RunConfig& cfg = eff.cfg;
  ModelGraph<float> model = load_model(cfg);
  const auto pool = load_patches(input_manifest(cfg), cfg.input_size);
  const std::string out = open_out_dir(eff, "tta");

  PreprocessPlan plan = fit_preprocess(pool, preprocess_options(cfg));
  const PreprocessFn prep = preprocess_fn(plan);
  std::vector<PredictionRecord> preds;
  for (size_t i = 0; i < pool.size(); ++i) {
    RngStream stream = RngStream(cfg.seed, 0x747461ULL).substream(i);  // "tta"
    const auto probs = tta_predict(model, pool[i], cfg.tta_k, AugmentPolicy{},
                                   stream, prep);
    const std::string id = pool[i].source_path.empty()
                               ? "sample-" + std::to_string(i)
                               : pool[i].source_path;
    preds.push_back(make_prediction(id, pool[i].label, probs[1]));
  }
  const MetricsReport rep = compute_report(preds, hard_or_soft_loss(preds));
  write_eval_files(out, "tta", rep, preds);
  std::cout << "tta ok k=" << cfg.tta_k << "\n" << render_report(rep);
  return 0;
}

int cmd_diagnose(Effective eff, const std::string& patients_file) {
  RunConfig& cfg = eff.cfg;
  ModelGraph<float> model = load_model(cfg);
  const Manifest man = input_manifest(cfg);
  const auto pool = load_patches(man, cfg.input_size);
  const std::string out = open_out_dir(eff, "diagnose");

  EvalSet es = assemble_pool(cfg, pool);
  const EvalResult res = evaluate_records(model, es.set, cfg.batch_size);

  std::map<std::string, std::string> patient_of_id;
  for (const auto& row : man.rows) patient_of_id[row.path] = row.patient_id;
  if (!patients_file.empty()) {
    std::ifstream pf(patients_file);
    if (!pf) throw LoadError("cannot read patients file: " + patients_file);
    std::string line;
    while (std::getline(pf, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line == "id,patient_id") continue;
      const size_t comma = line.find(',');
      if (comma == std::string::npos)
        throw FormatError("patients file line needs id,patient_id: " + line);
      patient_of_id[line.substr(0, comma)] = line.substr(comma + 1);
    }
  }

  const PatientReport rep = patient_diagnose(res.preds, patient_of_id);
  std::ofstream os(out + "/patients.csv", std::ios::trunc);
  if (!os) throw HarnessError("cannot write patient table");
  os << "patient_id,cells,predicted,truth,max_prob\n";
  for (const auto& p : rep.patients)
    os << p.patient_id << ',' << p.cells << ',' << p.predicted << ','
       << p.truth << ',' << metrics_detail::to_text(p.max_prob) << "\n";
  os.close();

  std::cout << "diagnose ok patients=" << rep.patients.size() << " accuracy="
            << metrics_detail::to_text(rep.accuracy) << " auc="
            << (rep.auc_valid ? metrics_detail::to_text(rep.auc)
                              : std::string("n/a"))
            << " out=" << out << "\n";
  return 0;
}

int cmd_gradcheck(int instances) {
  const GradCheckReport rep = run_gradcheck(instances);
  std::cout << render_gradcheck(rep);
  return rep.all_pass ? 0 : 1;
}

std::string one_line(std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ';');
  return msg;
}

}  // namespace
}  // namespace rbcnet

int main(int argc, char** argv) {
  using namespace rbcnet;

  CLI::App app{"malaria red-blood-cell classification pipeline"};
  app.require_subcommand(1);
  FlagBook book;

  struct Sub {
    CLI::App* cmd;
    std::string name;
  };
  std::vector<Sub> subs;
  auto add = [&](const std::string& name, const std::string& desc) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    cmd->fallthrough();
    book.add_all_keys(cmd);
    subs.push_back({cmd, name});
    return cmd;
  };

  CLI::App* prepare = add("prepare",
                          "scan a class-per-folder image tree, cache resized "
                          "patches, and write a manifest");
  CLI::App* train = add("train", "train a model on an 80:10:10 split");
  bool with_svm = false;
  train->add_flag("--svm", with_svm,
                  "also fit an RBF-kernel SVM on penultimate-layer features");
  CLI::App* eval = add("eval", "score a checkpoint on a manifest");
  bool false_cases = false;
  eval->add_flag("--false-cases", false_cases,
                 "export misclassified samples with image copies");
  CLI::App* cv = add("cv", "k-way cross-validation");
  CLI::App* holdout = add("holdout", "repeated independent 80:10:10 splits");
  CLI::App* ablate = add("ablate", "run a named config grid");
  std::string grid = "freeze";
  ablate->add_option("--grid", grid, "freeze | preprocess")
      ->check(CLI::IsMember({"freeze", "preprocess"}));
  CLI::App* ensemble = add("ensemble", "combine member checkpoints");
  std::string members;
  ensemble
      ->add_option("--members", members,
                   "comma list of checkpoints; prefix svm: for decision "
                   "members")
      ->required();
  CLI::App* tta = add("tta", "test-time augmentation averaging");
  CLI::App* diagnose = add("diagnose", "per-patient OR-rule diagnosis");
  std::string patients_file;
  diagnose->add_option("--patients", patients_file,
                       "id,patient_id override table");
  CLI::App* gradcheck = add("gradcheck",
                            "finite-difference check of every layer kind");
  int instances = 100;
  gradcheck->add_option("--instances", instances,
                        "random instances per layer kind");

  // Global flags stay usable before the subcommand name.
  app.add_option("--config", book.config_path);
  book.add_key(&app, "seed", "--seed");
  book.add_key(&app, "out", "--out");
  book.add_key(&app, "threads", "--threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: CliError: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(instances);
    Effective eff = build_config(book);
    if (prepare->parsed()) return cmd_prepare(std::move(eff));
    if (train->parsed()) return cmd_train(std::move(eff), with_svm);
    if (eval->parsed()) return cmd_eval(std::move(eff), false_cases);
    if (cv->parsed()) return cmd_cv(std::move(eff));
    if (holdout->parsed()) return cmd_holdout(std::move(eff));
    if (ablate->parsed()) return cmd_ablate(std::move(eff), grid);
    if (ensemble->parsed()) return cmd_ensemble(std::move(eff), members);
    if (tta->parsed()) return cmd_tta(std::move(eff));
    if (diagnose->parsed()) return cmd_diagnose(std::move(eff), patients_file);
    throw ParameterError("no subcommand dispatched");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}
