#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/rng.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Synthetic cell-patch generator. Every image is a soft-edged disc (the cell)
// on a dark field with one interior blob whose color carries the class: the
// positive palette mimics stained parasites, the negative palette matches
// healthy cytoplasm. Geometry is shared across classes so color is the only
// reliable cue. Two palettes (task A and task B) support transfer
// experiments: early filters carry over, the head must re-learn the mapping.
// ---------------------------------------------------------------------------

struct SynthTask {
  std::array<float, 3> cell{200.0f, 160.0f, 150.0f};  // cytoplasm byte RGB
  std::array<float, 3> pos_blob{160.0f, 40.0f, 140.0f};
  std::array<float, 3> neg_blob{210.0f, 175.0f, 160.0f};
  float field = 12.0f;        // background gray level
  float noise_sigma = 6.0f;   // per-channel pixel noise, byte scale

  static SynthTask task_a() { return SynthTask{}; }

  // Same geometry family, disjoint palette: bluish parasite on greenish cells.
  static SynthTask task_b() {
    SynthTask t;
    t.cell = {150.0f, 200.0f, 170.0f};
    t.pos_blob = {40.0f, 90.0f, 210.0f};
    t.neg_blob = {160.0f, 205.0f, 180.0f};
    return t;
  }
};

namespace synth_detail {

// 0 inside, 1 outside, smooth over `soft` pixels around radius r.
inline float edge(float d, float r, float soft) {
  const float t = std::clamp((d - r) / soft, 0.0f, 1.0f);
  return t * t * (3.0f - 2.0f * t);
}

}  // namespace synth_detail

// Draw order is fixed (center, radius, tint, blob center, blob radius, then
// one noise draw per pixel per channel) so adding parameters later cannot
// silently shift existing datasets.
inline ImagePatch make_synth_patch(int size, int label, const SynthTask& task,
                                   RngStream& stream) {
  if (size < 8) throw ParameterError("synthetic patch size must be >= 8");
  if (label != 0 && label != 1)
    throw ParameterError("synthetic label must be 0 or 1");
  const float half = 0.5f * static_cast<float>(size - 1);
  const float ccx = half + static_cast<float>(stream.uniform(-0.05, 0.05)) * size;
  const float ccy = half + static_cast<float>(stream.uniform(-0.05, 0.05)) * size;
  const float cr = static_cast<float>(stream.uniform(0.36, 0.44)) * size;
  std::array<float, 3> tint;
  for (int c = 0; c < 3; ++c)
    tint[c] = static_cast<float>(stream.uniform(-10.0, 10.0));
  // Blob center stays well inside the cell.
  const float br = static_cast<float>(stream.uniform(0.10, 0.16)) * size;
  const float ang = static_cast<float>(stream.uniform(0.0, 6.2831853));
  const float rad = static_cast<float>(stream.uniform(0.0, 0.55)) * cr;
  const float bcx = ccx + rad * std::cos(ang);
  const float bcy = ccy + rad * std::sin(ang);
  const auto& blob = label == 1 ? task.pos_blob : task.neg_blob;

  ImagePatch p;
  p.pixels = Tensor<float>({size, size, 3});
  p.label = label;
  const float soft = 0.06f * size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float dc = std::hypot(static_cast<float>(x) - ccx,
                                  static_cast<float>(y) - ccy);
      const float db = std::hypot(static_cast<float>(x) - bcx,
                                  static_cast<float>(y) - bcy);
      const float out_cell = synth_detail::edge(dc, cr, soft);
      const float in_blob = 1.0f - synth_detail::edge(db, br, soft);
      for (int c = 0; c < 3; ++c) {
        float v = task.cell[c] + tint[c];
        v = v * (1.0f - in_blob) + blob[c] * in_blob;
        v = v * (1.0f - out_cell) + task.field * out_cell;
        v += static_cast<float>(stream.normal(0.0, task.noise_sigma));
        p.pixels.data()[(static_cast<size_t>(y) * size + x) * 3 + c] =
            std::clamp(v, 0.0f, 255.0f);
      }
    }
  return p;
}

// Balanced in-memory set: n_per_class of each label, patients assigned in
// blocks of `cells_per_patient` within each class. Sample i of class c draws
// from substream (c, i), so the set is a prefix-stable function of the seed.
inline std::vector<ImagePatch> make_synth_set(int n_per_class, int size,
                                              const SynthTask& task,
                                              uint64_t seed,
                                              int cells_per_patient = 8) {
  if (n_per_class < 1) throw ParameterError("need n_per_class >= 1");
  if (cells_per_patient < 1) throw ParameterError("need cells_per_patient >= 1");
  RngStream base(seed, 0x73796e7468ULL);  // "synth"
  std::vector<ImagePatch> out;
  out.reserve(2 * static_cast<size_t>(n_per_class));
  char buf[32];
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < n_per_class; ++i) {
      RngStream s = base.substream(static_cast<uint64_t>(c))
                        .substream(static_cast<uint64_t>(i));
      ImagePatch p = make_synth_patch(size, c, task, s);
      std::snprintf(buf, sizeof buf, "S%c%04d", c == 1 ? 'P' : 'N',
                    i / cells_per_patient);
      p.patient_id = buf;
      std::snprintf(buf, sizeof buf, "%s_%04d", p.patient_id.c_str(), i);
      p.source_path = buf;
      out.push_back(std::move(p));
    }
  return out;
}

// On-disk variant for pipeline runs: class folders of PNGs whose filenames
// carry the patient id as the prefix before the first '_'. Infected patients
// hold a mix of cell labels (at least one positive), healthy patients only
// negatives, so patient-level aggregation has real structure. Returns the
// number of images written.
inline int write_synth_tree(const std::string& dir, int patients,
                            int cells_per_patient, int size,
                            const SynthTask& task, uint64_t seed) {
  namespace fs = std::filesystem;
  if (patients < 2) throw ParameterError("need >= 2 synthetic patients");
  if (cells_per_patient < 1) throw ParameterError("need cells_per_patient >= 1");
  fs::create_directories(fs::path(dir) / "parasitized");
  fs::create_directories(fs::path(dir) / "uninfected");
  RngStream base(seed, 0x73796e7468ULL);
  int written = 0;
  char name[64];
  for (int pat = 0; pat < patients; ++pat) {
    RngStream ps = base.substream(static_cast<uint64_t>(pat));
    const bool infected = pat % 2 == 0;  // half the cohort, deterministic
    for (int i = 0; i < cells_per_patient; ++i) {
      int label = 0;
      if (infected)
        label = i == 0 ? 1 : (ps.uniform(0.0, 1.0) < 0.4 ? 1 : 0);
      RngStream cs = ps.substream(static_cast<uint64_t>(i) + 1);
      ImagePatch p = make_synth_patch(size, label, task, cs);
      std::snprintf(name, sizeof name, "PT%03d_%03d.png", pat, i);
      const fs::path dest = fs::path(dir) /
                            (label == 1 ? "parasitized" : "uninfected") / name;
      write_png(dest.string(), p);
      ++written;
    }
  }
  return written;
}

}  // namespace rbcnet
