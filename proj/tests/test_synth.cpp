#include "rbcnet/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/harness.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/manifest.hpp"
#include "rbcnet/rng.hpp"

namespace rbcnet {
namespace {

double channel_mean(const ImagePatch& p, int c) {
  double sum = 0.0;
  const int h = p.pixels.dim(0), w = p.pixels.dim(1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) sum += p.at(y, x, c);
  return sum / (h * w);
}

// ---------------------------------------------------------------------------
// Single-patch generator
// ---------------------------------------------------------------------------

TEST(SynthPatch, ShapeRangeAndMetadata) {
  RngStream s(1, 0x73796e7468ULL);
  const ImagePatch p = make_synth_patch(48, 1, SynthTask::task_a(), s);
  ASSERT_EQ(p.pixels.rank(), 3);
  EXPECT_EQ(p.pixels.dim(0), 48);
  EXPECT_EQ(p.pixels.dim(1), 48);
  EXPECT_EQ(p.pixels.dim(2), 3);
  EXPECT_EQ(p.label, 1);
  for (size_t i = 0; i < p.pixels.size(); ++i) {
    EXPECT_GE(p.pixels[i], 0.0f);
    EXPECT_LE(p.pixels[i], 255.0f);
  }
}

TEST(SynthPatch, SameStreamStateReproducesPixelsExactly) {
  RngStream a(7, 0x73796e7468ULL), b(7, 0x73796e7468ULL);
  const ImagePatch pa = make_synth_patch(32, 0, SynthTask::task_a(), a);
  const ImagePatch pb = make_synth_patch(32, 0, SynthTask::task_a(), b);
  ASSERT_EQ(pa.pixels.size(), pb.pixels.size());
  for (size_t i = 0; i < pa.pixels.size(); ++i)
    ASSERT_EQ(pa.pixels[i], pb.pixels[i]);
}

TEST(SynthPatch, HasCellStructureNotJustNoise) {
  RngStream s(3, 0x73796e7468ULL);
  const ImagePatch p = make_synth_patch(64, 0, SynthTask::task_a(), s);
  // Center sits inside the cell (bright), corners on the field (dark).
  double center = 0.0, corner = 0.0;
  for (int c = 0; c < 3; ++c) {
    center += p.at(32, 32, c);
    corner += (p.at(0, 0, c) + p.at(0, 63, c) + p.at(63, 0, c) +
               p.at(63, 63, c)) /
              4.0;
  }
  EXPECT_GT(center / 3.0, 100.0);
  EXPECT_LT(corner / 3.0, 60.0);
}

TEST(SynthPatch, ClassChangesColorStatisticsInAggregate) {
  // The positive blob palette is green-poor, so over many samples the mean
  // green level separates the classes; geometry ranges are identical.
  const auto set = make_synth_set(200, 32, SynthTask::task_a(), 5);
  double g_pos = 0.0, g_neg = 0.0;
  int n_pos = 0, n_neg = 0;
  for (const auto& p : set) {
    (p.label == 1 ? g_pos : g_neg) += channel_mean(p, 1);
    (p.label == 1 ? n_pos : n_neg) += 1;
  }
  ASSERT_EQ(n_pos, 200);
  ASSERT_EQ(n_neg, 200);
  EXPECT_GT(g_neg / n_neg - g_pos / n_pos, 3.0);
}

TEST(SynthPatch, TaskPalettesDiffer) {
  const SynthTask a = SynthTask::task_a(), b = SynthTask::task_b();
  EXPECT_NE(a.cell, b.cell);
  EXPECT_NE(a.pos_blob, b.pos_blob);
  // Aggregate color shifts with the task under identical draws.
  RngStream s1(11, 0x73796e7468ULL), s2(11, 0x73796e7468ULL);
  const ImagePatch pa = make_synth_patch(32, 0, a, s1);
  const ImagePatch pb = make_synth_patch(32, 0, b, s2);
  EXPECT_GT(channel_mean(pb, 1) - channel_mean(pa, 1), 10.0);  // greener cells
}

TEST(SynthPatch, RejectsBadArguments) {
  RngStream s(1, 0x73796e7468ULL);
  EXPECT_THROW(make_synth_patch(7, 0, SynthTask::task_a(), s), ParameterError);
  EXPECT_THROW(make_synth_patch(32, 2, SynthTask::task_a(), s), ParameterError);
  EXPECT_THROW(make_synth_set(0, 32, SynthTask::task_a(), 1), ParameterError);
  EXPECT_THROW(make_synth_set(4, 32, SynthTask::task_a(), 1, 0),
               ParameterError);
}

// ---------------------------------------------------------------------------
// In-memory set
// ---------------------------------------------------------------------------

TEST(SynthSet, BalancedLabeledAndPatientBlocked) {
  const auto set = make_synth_set(20, 16, SynthTask::task_a(), 9, 8);
  ASSERT_EQ(set.size(), 40u);
  std::set<std::string> ids;
  std::map<std::string, std::set<int>> patient_labels;
  for (const auto& p : set) {
    EXPECT_TRUE(ids.insert(p.source_path).second) << "duplicate sample id";
    patient_labels[p.patient_id].insert(p.label);
  }
  // 20 cells per class in blocks of 8 -> patients 0,1,2 per class.
  EXPECT_EQ(patient_labels.size(), 6u);
  for (const auto& [pid, labels] : patient_labels) {
    EXPECT_EQ(labels.size(), 1u) << pid;  // class-pure patients in this form
    EXPECT_EQ(pid[0], 'S');
  }
}

TEST(SynthSet, IsAPrefixStableFunctionOfTheSeed) {
  const auto big = make_synth_set(12, 16, SynthTask::task_a(), 4);
  const auto small = make_synth_set(8, 16, SynthTask::task_a(), 4);
  // Class c sample i matches between the two sizes (prefix stability).
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 8; ++i) {
      const ImagePatch& a = big[static_cast<size_t>(c) * 12 + i];
      const ImagePatch& b = small[static_cast<size_t>(c) * 8 + i];
      ASSERT_EQ(a.label, b.label);
      for (size_t j = 0; j < a.pixels.size(); ++j)
        ASSERT_EQ(a.pixels[j], b.pixels[j]);
    }
  const auto other = make_synth_set(8, 16, SynthTask::task_a(), 5);
  bool any_diff = false;
  for (size_t j = 0; j < other[0].pixels.size(); ++j)
    any_diff = any_diff || other[0].pixels[j] != small[0].pixels[j];
  EXPECT_TRUE(any_diff);
}

// ---------------------------------------------------------------------------
// On-disk tree and its ingest round trip
// ---------------------------------------------------------------------------

TEST(SynthTree, WritesScansAndLoadsBack) {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "rbcnet-synth-tree";
  fs::remove_all(root);

  const int patients = 6, cells = 5, size = 24;
  const int written =
      write_synth_tree(root.string(), patients, cells, size,
                       SynthTask::task_a(), 31);
  EXPECT_EQ(written, patients * cells);

  const Manifest m = scan_class_tree(root.string());
  ASSERT_EQ(m.size(), static_cast<size_t>(written));
  EXPECT_GE(m.count(kParasitized), static_cast<size_t>(patients / 2));

  // Patient ids come from the filename prefix; infected cells only appear in
  // even-numbered patients and every even patient has at least one.
  std::map<std::string, size_t> positives;
  for (const auto& row : m.rows) {
    ASSERT_EQ(row.patient_id.substr(0, 2), "PT");
    if (row.label == kParasitized) ++positives[row.patient_id];
  }
  for (int pat = 0; pat < patients; ++pat) {
    char pid[8];
    std::snprintf(pid, sizeof pid, "PT%03d", pat);
    if (pat % 2 == 0)
      EXPECT_GE(positives[pid], 1u) << pid;
    else
      EXPECT_EQ(positives.count(pid), 0u) << pid;
  }

  // The loader resamples to the requested input size and keeps metadata.
  const auto patches = load_patches(m, 16);
  ASSERT_EQ(patches.size(), m.size());
  for (size_t i = 0; i < patches.size(); ++i) {
    EXPECT_EQ(patches[i].pixels.dim(0), 16);
    EXPECT_EQ(patches[i].pixels.dim(1), 16);
    EXPECT_EQ(patches[i].label, m.rows[i].label);
    EXPECT_EQ(patches[i].patient_id, m.rows[i].patient_id);
    EXPECT_EQ(patches[i].source_path, m.rows[i].path);
  }

  fs::remove_all(root);
}

TEST(SynthTree, RegenerationIsByteIdentical) {
  namespace fs = std::filesystem;
  const fs::path a = fs::temp_directory_path() / "rbcnet-synth-a";
  const fs::path b = fs::temp_directory_path() / "rbcnet-synth-b";
  fs::remove_all(a);
  fs::remove_all(b);
  write_synth_tree(a.string(), 4, 3, 16, SynthTask::task_b(), 77);
  write_synth_tree(b.string(), 4, 3, 16, SynthTask::task_b(), 77);

  size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    std::ifstream fa(entry.path(), std::ios::binary);
    std::ifstream fb(b / rel, std::ios::binary);
    ASSERT_TRUE(fb.good()) << rel;
    const std::string da((std::istreambuf_iterator<char>(fa)),
                         std::istreambuf_iterator<char>());
    const std::string db((std::istreambuf_iterator<char>(fb)),
                         std::istreambuf_iterator<char>());
    ASSERT_EQ(da, db) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 12u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(SynthTree, FirstImageMatchesItsDerivedStream) {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "rbcnet-synth-one";
  fs::remove_all(root);
  write_synth_tree(root.string(), 2, 2, 20, SynthTask::task_a(), 13);

  // Patient 0 is infected and its first cell is forced positive before any
  // label draw, so its pixels derive from substream (0).(1).
  RngStream cs = RngStream(13, 0x73796e7468ULL).substream(0).substream(1);
  const ImagePatch expect = make_synth_patch(20, 1, SynthTask::task_a(), cs);
  const ImagePatch got =
      read_image((root / "parasitized" / "PT000_000.png").string());
  ASSERT_EQ(got.pixels.size(), expect.pixels.size());
  for (size_t i = 0; i < got.pixels.size(); ++i)
    ASSERT_NEAR(got.pixels[i], expect.pixels[i], 0.5f);  // byte quantization
  fs::remove_all(root);
}

TEST(SynthTree, RejectsBadArguments) {
  EXPECT_THROW(write_synth_tree("/tmp/x", 1, 3, 16, SynthTask::task_a(), 1),
               ParameterError);
  EXPECT_THROW(write_synth_tree("/tmp/x", 2, 0, 16, SynthTask::task_a(), 1),
               ParameterError);
  EXPECT_THROW(scan_class_tree("/nonexistent-dir"), IngestError);
}

}  // namespace
}  // namespace rbcnet
