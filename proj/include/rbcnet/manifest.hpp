#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/rng.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Dataset manifest: one row per cell image, delimited text with the fixed
// header `path,label,patient_id`. Labels are the two class-name tokens;
// paths must be unique (they identify samples downstream).
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string path;
  int label = kUninfected;
  std::string patient_id;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  size_t size() const { return rows.size(); }
  size_t count(int label) const {
    size_t n = 0;
    for (const auto& r : rows) n += r.label == label ? 1 : 0;
    return n;
  }
};

inline constexpr const char* kManifestHeader = "path,label,patient_id";

inline int parse_label_token(const std::string& token, size_t line_no) {
  if (token == "parasitized") return kParasitized;
  if (token == "uninfected") return kUninfected;
  throw IngestError("unknown label token '" + token + "' at line " +
                    std::to_string(line_no));
}

inline Manifest parse_manifest(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line))
    throw IngestError("empty manifest: " + origin);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw IngestError("manifest header must be '" +
                      std::string(kManifestHeader) + "', got '" + line +
                      "' in " + origin);
  Manifest m;
  std::set<std::string> seen;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t c1 = line.find(',');
    const size_t c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw IngestError("manifest row needs 3 fields at line " +
                        std::to_string(line_no) + " of " + origin);
    ManifestRow row;
    row.path = line.substr(0, c1);
    row.label = parse_label_token(line.substr(c1 + 1, c2 - c1 - 1), line_no);
    row.patient_id = line.substr(c2 + 1);
    if (row.path.empty())
      throw IngestError("empty path at line " + std::to_string(line_no));
    if (!seen.insert(row.path).second)
      throw IngestError("duplicate path '" + row.path + "' at line " +
                        std::to_string(line_no));
    m.rows.push_back(std::move(row));
  }
  if (m.rows.empty()) throw IngestError("manifest has no rows: " + origin);
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open manifest: " + path);
  return parse_manifest(in, path);
}

inline void save_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write manifest: " + path);
  out << kManifestHeader << "\n";
  for (const auto& r : m.rows)
    out << r.path << ',' << label_name(r.label) << ',' << r.patient_id
        << "\n";
  if (!out) throw IngestError("short manifest write: " + path);
}

// Builds a manifest from the canonical on-disk layout: one folder per class
// name under `dir`, image files inside. The patient id is the filename prefix
// before the first '_' (whole stem when there is none). Rows come out sorted
// by path so the manifest is independent of directory iteration order.
inline Manifest scan_class_tree(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw IngestError("data directory not found: " + dir);
  Manifest m;
  for (int label : {kParasitized, kUninfected}) {
    const fs::path sub = fs::path(dir) / label_name(label);
    if (!fs::is_directory(sub))
      throw IngestError("missing class directory: " + sub.string());
    for (const auto& entry : fs::directory_iterator(sub)) {
      if (!entry.is_regular_file()) continue;
      const std::string ext = entry.path().extension().string();
      if (ext != ".png" && ext != ".ppm") continue;
      ManifestRow row;
      row.path = entry.path().string();
      row.label = label;
      const std::string stem = entry.path().stem().string();
      const size_t us = stem.find('_');
      row.patient_id = us == std::string::npos ? "unknown" : stem.substr(0, us);
      m.rows.push_back(std::move(row));
    }
  }
  if (m.rows.empty())
    throw IngestError("no .png/.ppm images under " + dir);
  std::sort(m.rows.begin(), m.rows.end(),
            [](const ManifestRow& a, const ManifestRow& b) {
              return a.path < b.path;
            });
  return m;
}

// ---------------------------------------------------------------------------
// 80:10:10 splitting. Rounding rule: train gets floor(0.8 n); the remainder
// is halved with any odd sample going to test. Classes are allocated to the
// global sizes by largest remainder, so every split's class ratio stays
// within one sample of the dataset's.
// ---------------------------------------------------------------------------

struct SplitSizes {
  size_t train = 0, val = 0, test = 0;
};

inline SplitSizes split_sizes_80_10_10(size_t n) {
  SplitSizes s;
  s.train = n * 8 / 10;
  const size_t rem = n - s.train;
  s.val = rem / 2;
  s.test = rem - s.val;
  return s;
}

struct SplitPlan {
  uint64_t seed = 0;
  std::vector<size_t> train, val, test;
};

namespace split_detail {

// Distributes `total` across classes proportionally to their sizes using
// largest-remainder rounding; ties break toward the lower class id.
inline std::vector<size_t> allocate(const std::vector<size_t>& class_sizes,
                                    size_t total) {
  const size_t n_all =
      std::accumulate(class_sizes.begin(), class_sizes.end(), size_t{0});
  std::vector<size_t> out(class_sizes.size(), 0);
  std::vector<std::pair<double, size_t>> frac;
  size_t assigned = 0;
  for (size_t c = 0; c < class_sizes.size(); ++c) {
    const double quota =
        n_all == 0 ? 0.0
                   : static_cast<double>(class_sizes[c]) *
                         static_cast<double>(total) /
                         static_cast<double>(n_all);
    out[c] = static_cast<size_t>(quota);
    assigned += out[c];
    frac.push_back({quota - static_cast<double>(out[c]), c});
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (size_t i = 0; assigned < total; ++i, ++assigned)
    ++out[frac[i % frac.size()].second];
  return out;
}

}  // namespace split_detail

inline SplitPlan split_80_10_10(const Manifest& m, uint64_t seed) {
  if (m.size() < 10)
    throw SplitError("80:10:10 split needs >= 10 rows, got " +
                     std::to_string(m.size()));
  std::vector<std::vector<size_t>> by_class(2);
  for (size_t i = 0; i < m.rows.size(); ++i)
    by_class[static_cast<size_t>(m.rows[i].label)].push_back(i);
  for (size_t c = 0; c < 2; ++c)
    if (!by_class[c].empty() && by_class[c].size() < 3)
      throw SplitError("class '" + std::string(label_name(static_cast<int>(c))) +
                       "' has fewer than 3 rows");

  RngStream base(seed, 0x73706c6974);  // split-plan stream family
  for (size_t c = 0; c < 2; ++c)
    base.substream(c).shuffle(by_class[c]);

  const SplitSizes sizes = split_sizes_80_10_10(m.size());
  std::vector<size_t> class_sizes = {by_class[0].size(), by_class[1].size()};
  const auto train_c = split_detail::allocate(class_sizes, sizes.train);
  std::vector<size_t> rest_sizes = {class_sizes[0] - train_c[0],
                                    class_sizes[1] - train_c[1]};
  const auto val_c = split_detail::allocate(rest_sizes, sizes.val);

  SplitPlan plan;
  plan.seed = seed;
  for (size_t c = 0; c < 2; ++c) {
    const auto& idx = by_class[c];
    size_t at = 0;
    for (size_t i = 0; i < train_c[c]; ++i) plan.train.push_back(idx[at++]);
    for (size_t i = 0; i < val_c[c]; ++i) plan.val.push_back(idx[at++]);
    while (at < idx.size()) plan.test.push_back(idx[at++]);
  }
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.val.begin(), plan.val.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

// Patient-disjoint variant: whole patients are dealt greedily into splits
// until each reaches its target size. Class stratification is then only
// approximate; this is an extension beyond the cell-level protocol.
inline SplitPlan split_80_10_10_patient_disjoint(const Manifest& m,
                                                 uint64_t seed) {
  if (m.size() < 10)
    throw SplitError("80:10:10 split needs >= 10 rows, got " +
                     std::to_string(m.size()));
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < m.rows.size(); ++i)
    groups[m.rows[i].patient_id].push_back(i);
  std::vector<std::string> patients;
  for (const auto& [id, _] : groups) patients.push_back(id);
  RngStream base(seed, 0x70617469656e74);  // patient-split stream family
  base.shuffle(patients);

  const SplitSizes sizes = split_sizes_80_10_10(m.size());
  SplitPlan plan;
  plan.seed = seed;
  for (const auto& id : patients) {
    auto& dst = plan.train.size() < sizes.train ? plan.train
                : plan.val.size() < sizes.val   ? plan.val
                                                : plan.test;
    for (size_t i : groups[id]) dst.push_back(i);
  }
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.val.begin(), plan.val.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

// ---------------------------------------------------------------------------
// Cross-validation plan: `parts` disjoint near-equal folds over a pool of
// row indices; a CV run uses fold r as the validation set of round r. With
// parts=10 over the full set, each round sees a 9:1 train/validation split
// (24,802 / 2,756 on the NIH counts); parts=5 gives the classical k-fold
// reading. Oversized folds come first, so early rounds get the exact
// ceil-size validation fold.
// ---------------------------------------------------------------------------

struct CvPlan {
  uint64_t seed = 0;
  std::vector<std::vector<size_t>> folds;

  struct Round {
    std::vector<size_t> train, val;
  };

  Round round_split(size_t r) const {
    if (r >= folds.size())
      throw PlanError("cv round " + std::to_string(r) + " out of range");
    Round out;
    out.val = folds[r];
    for (size_t f = 0; f < folds.size(); ++f)
      if (f != r)
        out.train.insert(out.train.end(), folds[f].begin(), folds[f].end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    return out;
  }
};

inline CvPlan kfold_plan(const std::vector<size_t>& pool, size_t parts,
                         uint64_t seed) {
  if (parts < 2) throw PlanError("cv needs >= 2 folds");
  if (parts > pool.size())
    throw PlanError("cv fold count " + std::to_string(parts) +
                    " exceeds pool size " + std::to_string(pool.size()));
  std::vector<size_t> order = pool;
  RngStream base(seed, 0x666f6c64);  // fold-plan stream family
  base.shuffle(order);

  CvPlan plan;
  plan.seed = seed;
  plan.folds.resize(parts);
  const size_t small = pool.size() / parts;
  const size_t oversized = pool.size() % parts;
  size_t at = 0;
  for (size_t f = 0; f < parts; ++f) {
    const size_t take = small + (f < oversized ? 1 : 0);
    plan.folds[f].assign(order.begin() + static_cast<long>(at),
                         order.begin() + static_cast<long>(at + take));
    std::sort(plan.folds[f].begin(), plan.folds[f].end());
    at += take;
  }
  return plan;
}

inline std::vector<size_t> all_indices(const Manifest& m) {
  std::vector<size_t> idx(m.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

// Leakage guard: the three splits must tile [0, n) exactly.
inline void assert_partition(const SplitPlan& plan, size_t n) {
  std::vector<char> seen(n, 0);
  size_t total = 0;
  for (const auto* part : {&plan.train, &plan.val, &plan.test})
    for (size_t i : *part) {
      if (i >= n || seen[i])
        throw SplitError("split plan is not a partition at index " +
                         std::to_string(i));
      seen[i] = 1;
      ++total;
    }
  if (total != n)
    throw SplitError("split plan covers " + std::to_string(total) + " of " +
                     std::to_string(n) + " rows");
}

}  // namespace rbcnet
