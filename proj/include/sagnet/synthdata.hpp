#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sagnet/tensor.hpp"
#include "sagnet/training.hpp"

namespace sagnet {

// Parametric style-shift benchmark. Content is one of a catalog of binary
// spatial patterns; style is everything channel-statistics level: a per-class
// palette plus a per-domain recipe of channel gains and offsets, a smooth
// low-frequency color field, and pixel noise. Style never touches the
// pattern geometry, so content labels stay recoverable from geometry alone
// across every domain.
struct StyleShiftSpec {
  int num_classes = 7;      // limited to the 7-pattern catalog
  int num_domains = 4;
  int samples_per_class_per_domain = 100;
  int image_size = 32;
  std::uint64_t seed = 0;

  // Style recipe amplitudes (per domain, drawn from the seed).
  double gain_spread = 0.45;    // channel gain in 1 +/- spread
  double offset_spread = 0.22;  // channel offset in +/- spread
  double field_amp_max = 0.12;  // smooth low-frequency field amplitude
  double noise_min = 0.01;      // per-domain pixel noise sigma range
  double noise_max = 0.05;

  // Per-sample content jitter: circular shift in +/- jitter_px.
  int jitter_px = 2;
  double palette_jitter = 0.02;

  double train_frac = 0.7;
  double val_frac = 0.15;

  double stimulus_noise = 0.01;

  void validate() const;
};

// Per-domain channel-statistics recipe.
struct DomainRecipe {
  std::array<double, 3> gain;
  std::array<double, 3> offset;
  double field_amp = 0;
  double field_fx = 0, field_fy = 0;  // spatial frequency of the smooth field
  double noise_sigma = 0;
};

// Per-class rendering palette (foreground/background color); part of the
// style machinery, not of the content catalog.
struct ClassPalette {
  std::array<double, 3> fg;
  std::array<double, 3> bg;
};

struct ImageSet {
  int n = 0, channels = 3, height = 32, width = 32;
  std::vector<float> data;          // n*c*h*w row-major, values in [0,1]
  std::vector<int> content_labels;  // n
  std::vector<int> domain_labels;   // n (-1 for stimuli)
  std::vector<int> style_labels;    // stimuli only, else empty

  std::size_t image_stride() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  const float* image(int i) const { return data.data() + static_cast<std::size_t>(i) * image_stride(); }
  void append(const ImageSet& other);
  Samples<float> to_samples() const;
};

struct DomainSplits {
  ImageSet train, val, test;
};

struct SyntheticDataset {
  StyleShiftSpec spec;
  std::vector<int> domain_ids;
  std::vector<DomainSplits> domains;  // parallel to domain_ids
};

struct SourceTarget {
  ImageSet source_train;      // all non-target domains merged, train splits
  ImageSet source_val;        // all non-target domains merged, val splits
  ImageSet target_eval;       // held-out domain, test split
  ImageSet target_unlabeled;  // held-out domain, train split, labels kept
                              // only for bookkeeping (the consistency
                              // pathway never reads them)
};

// Content catalog: binary pattern of class `cls` at the given size.
std::vector<std::uint8_t> content_pattern(int cls, int size);

// Foreground pixel fraction of a pattern.
double pattern_occupancy(int cls, int size);

std::vector<ClassPalette> class_palettes(const StyleShiftSpec& spec);
std::vector<DomainRecipe> domain_recipes(const StyleShiftSpec& spec);

// Channel statistics of the canonical (neutral-domain, unjittered) rendering
// of a class; closed form from occupancy and palette.
void canonical_class_stats(const StyleShiftSpec& spec, int cls, std::array<double, 3>& mu,
                           std::array<double, 3>& sigma);

// Deterministic per seed; per-sample rng substreams derive from
// (seed, domain, class, index), so any generation order is bit-identical.
SyntheticDataset generate_dataset(const StyleShiftSpec& spec, const std::vector<int>& domains);

// Cue-conflict stimuli: geometry of class i re-normalized per channel to the
// canonical statistics of a donor class j != i. K*(K-1)*n_per_pair stimuli.
ImageSet generate_cue_conflict(const StyleShiftSpec& spec, int n_per_pair);

// Leave-one-domain-out protocol: sources merged without domain labels.
SourceTarget holdout_domain(const StyleShiftSpec& spec, int target_domain);

// Single-source protocol: one training domain, evaluated on another.
SourceTarget single_source(const StyleShiftSpec& spec, int source_domain, int target_domain);

// Binary container (header + row-major float32) with a JSON label sidecar.
// Writes <path>.sgimg and <path>.labels.json.
void save_image_set(const std::string& path_base, const ImageSet& set);
ImageSet load_image_set(const std::string& path_base);

}  // namespace sagnet
