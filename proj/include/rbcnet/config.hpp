#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/model.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Flat run configuration. One struct covers every subcommand; unused keys are
// simply ignored by commands that do not need them. Files are `key=value`
// lines ('#' comments and blank lines allowed) and every key can also be set
// from the command line, which wins over the file, which wins over defaults.
// ---------------------------------------------------------------------------

struct RunConfig {
  // data / io
  std::string manifest;       // sample listing (path,label,patient_id)
  std::string data_dir;       // raw image root for `prepare`
  std::string out = "runs/out";
  std::string checkpoint;     // model or svm checkpoint path

  // model
  std::string model = "custom";  // custom | custom-small | vgg
  int input_size = 200;
  int base_width = 8;            // custom-small conv width
  int head_width = 64;           // custom-small dense width
  std::string freeze = "none";   // none | all | La-Lb (vgg numbering)
  std::string init_from;         // warm-start checkpoint

  // training
  int epochs = 30;
  int batch_size = 64;
  double lr = 1.0;
  double rho = 0.95;
  double eps = 1e-6;
  uint64_t seed = 1;

  // preprocessing
  std::string preprocess = "rescale";  // rescale | standardize | mean-normalize
  bool stain_norm = false;
  bool featurewise = false;
  bool zca = false;

  // augmentation
  int augment_copies = 0;  // extra variants per training sample

  // splits / resampling
  uint64_t split_seed = 17;
  bool patient_split = false;
  int cv_parts = 10;
  int cv_rounds = 5;
  int holdout_repeats = 5;

  // svm bridge
  double svm_c = 1.0;
  double svm_gamma = 0.1;
  double svm_tol = 1e-3;
  int svm_max_sweeps = 2000;

  // inference
  int tta_k = 5;
  std::string weights;  // comma list of ensemble weights; empty = equal

  int threads = 1;
};

namespace cfg_detail {

inline std::string to_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::optional<long long> parse_ll(const std::string& s) {
  if (s.empty()) return std::nullopt;
  size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (...) {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (...) {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;
  return v;
}

inline std::optional<bool> parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  return std::nullopt;
}

}  // namespace cfg_detail

// Sets one key; returns an error message instead of throwing so callers can
// collect every problem before reporting.
inline std::optional<std::string> set_config_key(RunConfig& cfg,
                                                 const std::string& key,
                                                 const std::string& value) {
  using namespace cfg_detail;
  auto bad = [&](const char* want) {
    return "key '" + key + "': cannot parse '" + value + "' as " + want;
  };
  auto set_int = [&](int& slot) -> std::optional<std::string> {
    auto v = parse_ll(value);
    if (!v) return bad("integer");
    slot = static_cast<int>(*v);
    return std::nullopt;
  };
  auto set_u64 = [&](uint64_t& slot) -> std::optional<std::string> {
    auto v = parse_ll(value);
    if (!v || *v < 0) return bad("unsigned integer");
    slot = static_cast<uint64_t>(*v);
    return std::nullopt;
  };
  auto set_dbl = [&](double& slot) -> std::optional<std::string> {
    auto v = parse_double(value);
    if (!v) return bad("number");
    slot = *v;
    return std::nullopt;
  };
  auto set_flag = [&](bool& slot) -> std::optional<std::string> {
    auto v = parse_bool(value);
    if (!v) return bad("boolean (true/false)");
    slot = *v;
    return std::nullopt;
  };

  if (key == "manifest") { cfg.manifest = value; return std::nullopt; }
  if (key == "data_dir") { cfg.data_dir = value; return std::nullopt; }
  if (key == "out") { cfg.out = value; return std::nullopt; }
  if (key == "checkpoint") { cfg.checkpoint = value; return std::nullopt; }
  if (key == "model") { cfg.model = value; return std::nullopt; }
  if (key == "input_size") return set_int(cfg.input_size);
  if (key == "base_width") return set_int(cfg.base_width);
  if (key == "head_width") return set_int(cfg.head_width);
  if (key == "freeze") { cfg.freeze = value; return std::nullopt; }
  if (key == "init_from") { cfg.init_from = value; return std::nullopt; }
  if (key == "epochs") return set_int(cfg.epochs);
  if (key == "batch_size") return set_int(cfg.batch_size);
  if (key == "lr") return set_dbl(cfg.lr);
  if (key == "rho") return set_dbl(cfg.rho);
  if (key == "eps") return set_dbl(cfg.eps);
  if (key == "seed") return set_u64(cfg.seed);
  if (key == "preprocess") { cfg.preprocess = value; return std::nullopt; }
  if (key == "stain_norm") return set_flag(cfg.stain_norm);
  if (key == "featurewise") return set_flag(cfg.featurewise);
  if (key == "zca") return set_flag(cfg.zca);
  if (key == "augment_copies") return set_int(cfg.augment_copies);
  if (key == "split_seed") return set_u64(cfg.split_seed);
  if (key == "patient_split") return set_flag(cfg.patient_split);
  if (key == "cv_parts") return set_int(cfg.cv_parts);
  if (key == "cv_rounds") return set_int(cfg.cv_rounds);
  if (key == "holdout_repeats") return set_int(cfg.holdout_repeats);
  if (key == "svm_c") return set_dbl(cfg.svm_c);
  if (key == "svm_gamma") return set_dbl(cfg.svm_gamma);
  if (key == "svm_tol") return set_dbl(cfg.svm_tol);
  if (key == "svm_max_sweeps") return set_int(cfg.svm_max_sweeps);
  if (key == "tta_k") return set_int(cfg.tta_k);
  if (key == "weights") { cfg.weights = value; return std::nullopt; }
  if (key == "threads") return set_int(cfg.threads);
  return "unknown key '" + key + "'";
}

// Canonical serialization: every key in declaration order. Feeding the output
// back through set_config_key reproduces the struct exactly.
inline std::vector<std::pair<std::string, std::string>> config_kv(
    const RunConfig& c) {
  using cfg_detail::to_text;
  auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
  return {
      {"manifest", c.manifest},
      {"data_dir", c.data_dir},
      {"out", c.out},
      {"checkpoint", c.checkpoint},
      {"model", c.model},
      {"input_size", std::to_string(c.input_size)},
      {"base_width", std::to_string(c.base_width)},
      {"head_width", std::to_string(c.head_width)},
      {"freeze", c.freeze},
      {"init_from", c.init_from},
      {"epochs", std::to_string(c.epochs)},
      {"batch_size", std::to_string(c.batch_size)},
      {"lr", to_text(c.lr)},
      {"rho", to_text(c.rho)},
      {"eps", to_text(c.eps)},
      {"seed", std::to_string(c.seed)},
      {"preprocess", c.preprocess},
      {"stain_norm", b(c.stain_norm)},
      {"featurewise", b(c.featurewise)},
      {"zca", b(c.zca)},
      {"augment_copies", std::to_string(c.augment_copies)},
      {"split_seed", std::to_string(c.split_seed)},
      {"patient_split", b(c.patient_split)},
      {"cv_parts", std::to_string(c.cv_parts)},
      {"cv_rounds", std::to_string(c.cv_rounds)},
      {"holdout_repeats", std::to_string(c.holdout_repeats)},
      {"svm_c", to_text(c.svm_c)},
      {"svm_gamma", to_text(c.svm_gamma)},
      {"svm_tol", to_text(c.svm_tol)},
      {"svm_max_sweeps", std::to_string(c.svm_max_sweeps)},
      {"tta_k", std::to_string(c.tta_k)},
      {"weights", c.weights},
      {"threads", std::to_string(c.threads)},
  };
}

// Where each key's final value came from: "default", "file", or "flag".
using ConfigOrigin = std::map<std::string, std::string>;

inline ConfigOrigin default_origin() {
  ConfigOrigin origin;
  for (const auto& [k, v] : config_kv(RunConfig{})) origin[k] = "default";
  return origin;
}

// Parses key=value text, applying pairs in order. Problems (syntax, unknown
// keys, unparseable values) are collected, not thrown.
inline std::vector<std::string> apply_config_text(RunConfig& cfg,
                                                  const std::string& text,
                                                  ConfigOrigin* origin,
                                                  const std::string& tag) {
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) +
                         ": expected key=value, got '" + line + "'");
      continue;
    }
    std::string key = line.substr(first, eq - first);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t'))
      key.pop_back();
    std::string value = line.substr(eq + 1);
    const size_t vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    if (auto err = set_config_key(cfg, key, value)) {
      problems.push_back("line " + std::to_string(lineno) + ": " + *err);
    } else if (origin) {
      (*origin)[key] = tag;
    }
  }
  return problems;
}

inline std::vector<std::string> apply_config_file(RunConfig& cfg,
                                                  const std::string& path,
                                                  ConfigOrigin* origin) {
  std::ifstream in(path);
  if (!in) return {"cannot open config file: " + path};
  std::ostringstream text;
  text << in.rdbuf();
  return apply_config_text(cfg, text.str(), origin, "file");
}

// Range and vocabulary checks. Returns *every* violation so a bad config is
// fixed in one round trip.
inline std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };
  check(c.model == "custom" || c.model == "custom-small" || c.model == "vgg",
        "model must be custom, custom-small or vgg (got '" + c.model + "')");
  check(c.input_size >= 8, "input_size must be >= 8");
  check(c.base_width >= 1, "base_width must be >= 1");
  check(c.head_width >= 2, "head_width must be >= 2");
  try {
    parse_freeze_range(c.freeze);
  } catch (const ParameterError& e) {
    bad.emplace_back(e.what());
  }
  check(c.epochs >= 1, "epochs must be >= 1");
  check(c.batch_size >= 1, "batch_size must be >= 1");
  check(c.lr > 0.0, "lr must be > 0");
  check(c.rho >= 0.0 && c.rho < 1.0, "rho must be in [0,1)");
  check(c.eps > 0.0, "eps must be > 0");
  check(c.preprocess == "rescale" || c.preprocess == "standardize" ||
            c.preprocess == "mean-normalize",
        "preprocess must be rescale, standardize or mean-normalize (got '" +
            c.preprocess + "')");
  check(c.augment_copies >= 0, "augment_copies must be >= 0");
  check(c.cv_parts >= 2, "cv_parts must be >= 2");
  check(c.cv_rounds >= 1, "cv_rounds must be >= 1");
  check(c.cv_rounds <= c.cv_parts, "cv_rounds must be <= cv_parts");
  check(c.holdout_repeats >= 1, "holdout_repeats must be >= 1");
  check(c.svm_c > 0.0, "svm_c must be > 0");
  check(c.svm_gamma > 0.0, "svm_gamma must be > 0");
  check(c.svm_tol > 0.0, "svm_tol must be > 0");
  check(c.svm_max_sweeps >= 1, "svm_max_sweeps must be >= 1");
  check(c.tta_k >= 1, "tta_k must be >= 1");
  check(c.threads >= 1, "threads must be >= 1");
  return bad;
}

inline std::string join_problems(const std::vector<std::string>& problems) {
  std::string all;
  for (const auto& p : problems) {
    if (!all.empty()) all += "; ";
    all += p;
  }
  return all;
}

inline void require_valid(const RunConfig& cfg) {
  const auto bad = validate_config(cfg);
  if (!bad.empty()) throw ConfigError(join_problems(bad));
}

// Effective-config dump: provenance as a comment block, then clean key=value
// lines that this same parser can read back.
inline std::string serialize_config(const RunConfig& cfg,
                                    const ConfigOrigin* origin = nullptr) {
  std::ostringstream out;
  const auto kv = config_kv(cfg);
  if (origin) {
    out << "# effective configuration\n";
    for (const auto& [k, v] : kv) {
      const auto it = origin->find(k);
      out << "# " << k << ": "
          << (it != origin->end() ? it->second : std::string("default"))
          << "\n";
    }
  }
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  return out.str();
}

inline void write_effective_config(const std::string& path,
                                   const RunConfig& cfg,
                                   const ConfigOrigin* origin = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write effective config: " + path);
  out << serialize_config(cfg, origin);
}

// Comma-separated ensemble weights; empty means equal weighting.
inline std::vector<double> parse_weight_list(const std::string& text) {
  std::vector<double> w;
  if (text.empty()) return w;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    auto v = cfg_detail::parse_double(tok);
    if (!v) throw ConfigError("bad weight '" + tok + "' in weight list");
    w.push_back(*v);
  }
  return w;
}

}  // namespace rbcnet
