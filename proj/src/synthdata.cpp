#include "sagnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "sagnet/rng.hpp"

namespace sagnet {

namespace {

constexpr int kMaxClasses = 7;
constexpr char kImageMagic[8] = {'S', 'A', 'G', 'I', 'M', 'G', '0', '1'};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

std::uint64_t sample_stream(std::uint64_t seed, int domain, int cls, int index) {
  const std::uint64_t tag = (static_cast<std::uint64_t>(domain + 1) << 42) ^
                            (static_cast<std::uint64_t>(cls + 1) << 21) ^
                            static_cast<std::uint64_t>(index + 1);
  return derive_stream(derive_stream(seed, "sample"), tag);
}

}  // namespace

void StyleShiftSpec::validate() const {
  if (num_classes < 2 || num_classes > kMaxClasses) {
    throw ShapeError("spec: num_classes must lie in [2," + std::to_string(kMaxClasses) + "]");
  }
  if (num_domains < 2) throw ShapeError("spec: num_domains must be at least 2");
  if (samples_per_class_per_domain < 1) throw ShapeError("spec: samples_per_class_per_domain must be positive");
  if (image_size < 16 || image_size % 8 != 0) {
    throw ShapeError("spec: image_size must be a multiple of 8 and at least 16");
  }
  if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac >= 1.0) {
    throw ShapeError("spec: split fractions must satisfy 0 < train, 0 <= val, train+val < 1");
  }
}

// Content catalog. Coarse geometry so that small circular shifts keep each
// class recognizable; any two patterns differ in well over 15% of pixels.
std::vector<std::uint8_t> content_pattern(int cls, int size) {
  if (cls < 0 || cls >= kMaxClasses) throw ShapeError("content_pattern: class out of catalog range");
  std::vector<std::uint8_t> p(static_cast<std::size_t>(size) * size, 0);
  const int band = size / 8;
  const double c = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      bool on = false;
      switch (cls) {
        case 0:  // horizontal bars
          on = (y / band) % 2 == 0;
          break;
        case 1:  // vertical bars
          on = (x / band) % 2 == 0;
          break;
        case 2:  // checkerboard
          on = ((x / band) + (y / band)) % 2 == 0;
          break;
        case 3: {  // plus sign
          const double w = 0.14 * size;
          on = std::abs(y - c) < w || std::abs(x - c) < w;
          break;
        }
        case 4: {  // ring
          const double r = std::hypot(x - c, y - c);
          on = r >= 0.20 * size && r < 0.42 * size;
          break;
        }
        case 5:  // diagonal stripes
          on = ((x + y) / band) % 2 == 0;
          break;
        case 6: {  // X cross
          const double w = 0.11 * size;
          on = std::abs(x - y) < w || std::abs(x + y - (size - 1)) < w;
          break;
        }
        default:
          break;
      }
      if (on) p[static_cast<std::size_t>(y) * size + x] = 1;
    }
  }
  return p;
}

double pattern_occupancy(int cls, int size) {
  const auto p = content_pattern(cls, size);
  std::size_t on = 0;
  for (auto v : p) on += v;
  return static_cast<double>(on) / static_cast<double>(p.size());
}

std::vector<ClassPalette> class_palettes(const StyleShiftSpec& spec) {
  spec.validate();
  Rng rng(derive_stream(spec.seed, "palettes"));
  std::vector<ClassPalette> out;
  for (int k = 0; k < spec.num_classes; ++k) {
    const double hue = static_cast<double>(k) / spec.num_classes + rng.uniform(-0.03, 0.03);
    ClassPalette pal;
    pal.fg = hsv_to_rgb(hue, 0.80, 0.92);
    pal.bg = hsv_to_rgb(hue + 0.45, 0.60, 0.30);
    // Foreground stays brighter than background in every channel, so the
    // pattern binarizes the same way under any positive channel gain.
    for (int ch = 0; ch < 3; ++ch) {
      if (pal.fg[ch] < pal.bg[ch] + 0.15) pal.fg[ch] = pal.bg[ch] + 0.15;
    }
    out.push_back(pal);
  }
  return out;
}

std::vector<DomainRecipe> domain_recipes(const StyleShiftSpec& spec) {
  spec.validate();
  std::vector<DomainRecipe> out;
  for (int d = 0; d < spec.num_domains; ++d) {
    Rng rng(derive_stream(derive_stream(spec.seed, "domain"), static_cast<std::uint64_t>(d)));
    DomainRecipe r;
    for (int ch = 0; ch < 3; ++ch) {
      r.gain[ch] = 1.0 + spec.gain_spread * rng.uniform(-1.0, 1.0);
      r.offset[ch] = spec.offset_spread * rng.uniform(-1.0, 1.0);
    }
    r.field_amp = spec.field_amp_max * rng.uniform();
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double cycles = 1.0 + rng.uniform_int(2);
    r.field_fx = cycles * std::cos(theta);
    r.field_fy = cycles * std::sin(theta);
    r.noise_sigma = spec.noise_min + (spec.noise_max - spec.noise_min) * rng.uniform();
    out.push_back(r);
  }
  return out;
}

void canonical_class_stats(const StyleShiftSpec& spec, int cls, std::array<double, 3>& mu,
                           std::array<double, 3>& sigma) {
  const auto palettes = class_palettes(spec);
  if (cls < 0 || cls >= spec.num_classes) throw ShapeError("canonical_class_stats: class out of range");
  const double occ = pattern_occupancy(cls, spec.image_size);
  const auto& pal = palettes[static_cast<std::size_t>(cls)];
  for (int ch = 0; ch < 3; ++ch) {
    const double d = pal.fg[ch] - pal.bg[ch];
    mu[ch] = pal.bg[ch] + occ * d;
    sigma[ch] = std::sqrt(occ * (1.0 - occ) * d * d);
  }
}

namespace {

// Renders one training sample into dst (3*size*size floats).
void render_sample(const StyleShiftSpec& spec, const std::vector<std::uint8_t>& pattern,
                   const ClassPalette& palette, const DomainRecipe& recipe, Rng& rng, float* dst) {
  const int s = spec.image_size;
  const int j = spec.jitter_px;
  const int dx = j > 0 ? rng.uniform_int(2 * j + 1) - j : 0;
  const int dy = j > 0 ? rng.uniform_int(2 * j + 1) - j : 0;
  ClassPalette pal = palette;
  for (int ch = 0; ch < 3; ++ch) {
    pal.fg[ch] = clamp01(pal.fg[ch] + spec.palette_jitter * rng.uniform(-1.0, 1.0));
    pal.bg[ch] = clamp01(pal.bg[ch] + spec.palette_jitter * rng.uniform(-1.0, 1.0));
  }
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double fscale = 2.0 * std::numbers::pi / s;
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < s; ++y) {
      const int py = ((y - dy) % s + s) % s;
      for (int x = 0; x < s; ++x) {
        const int px = ((x - dx) % s + s) % s;
        const bool on = pattern[static_cast<std::size_t>(py) * s + px] != 0;
        double v = on ? pal.fg[ch] : pal.bg[ch];
        v = recipe.gain[ch] * v + recipe.offset[ch];
        v += recipe.field_amp * std::sin(fscale * (recipe.field_fx * x + recipe.field_fy * y) + phase);
        v += recipe.noise_sigma * rng.normal();
        dst[(static_cast<std::size_t>(ch) * s + y) * s + x] = static_cast<float>(clamp01(v));
      }
    }
  }
}

void init_image_set(ImageSet& set, const StyleShiftSpec& spec, int capacity) {
  set.channels = 3;
  set.height = spec.image_size;
  set.width = spec.image_size;
  set.data.reserve(static_cast<std::size_t>(capacity) * 3 * spec.image_size * spec.image_size);
  set.content_labels.reserve(static_cast<std::size_t>(capacity));
  set.domain_labels.reserve(static_cast<std::size_t>(capacity));
}

void push_image(ImageSet& set, const float* img, int content, int domain, int style = -1) {
  set.data.insert(set.data.end(), img, img + set.image_stride());
  set.content_labels.push_back(content);
  set.domain_labels.push_back(domain);
  if (style >= 0) set.style_labels.push_back(style);
  ++set.n;
}

}  // namespace

void ImageSet::append(const ImageSet& other) {
  if (n == 0) {
    channels = other.channels;
    height = other.height;
    width = other.width;
  } else if (channels != other.channels || height != other.height || width != other.width) {
    throw ShapeError("ImageSet::append: image geometry mismatch");
  }
  data.insert(data.end(), other.data.begin(), other.data.end());
  content_labels.insert(content_labels.end(), other.content_labels.begin(), other.content_labels.end());
  domain_labels.insert(domain_labels.end(), other.domain_labels.begin(), other.domain_labels.end());
  style_labels.insert(style_labels.end(), other.style_labels.begin(), other.style_labels.end());
  n += other.n;
}

Samples<float> ImageSet::to_samples() const {
  Samples<float> s;
  s.n = n;
  s.channels = channels;
  s.height = height;
  s.width = width;
  s.images = data;
  s.labels = content_labels;
  return s;
}

SyntheticDataset generate_dataset(const StyleShiftSpec& spec, const std::vector<int>& domains) {
  spec.validate();
  if (domains.empty()) throw ShapeError("generate_dataset: empty domain set");
  for (int d : domains) {
    if (d < 0 || d >= spec.num_domains) {
      throw ShapeError("generate_dataset: unknown domain " + std::to_string(d));
    }
  }
  const auto palettes = class_palettes(spec);
  const auto recipes = domain_recipes(spec);
  std::vector<std::vector<std::uint8_t>> patterns;
  for (int k = 0; k < spec.num_classes; ++k) patterns.push_back(content_pattern(k, spec.image_size));

  const int per = spec.samples_per_class_per_domain;
  const int n_train = static_cast<int>(std::floor(per * spec.train_frac));
  const int n_val = static_cast<int>(std::floor(per * spec.val_frac));

  SyntheticDataset out;
  out.spec = spec;
  out.domain_ids = domains;
  std::vector<float> img(static_cast<std::size_t>(3) * spec.image_size * spec.image_size);
  for (int d : domains) {
    DomainSplits splits;
    init_image_set(splits.train, spec, n_train * spec.num_classes);
    init_image_set(splits.val, spec, n_val * spec.num_classes);
    init_image_set(splits.test, spec, (per - n_train - n_val) * spec.num_classes);
    for (int k = 0; k < spec.num_classes; ++k) {
      for (int i = 0; i < per; ++i) {
        Rng rng(sample_stream(spec.seed, d, k, i));
        render_sample(spec, patterns[static_cast<std::size_t>(k)], palettes[static_cast<std::size_t>(k)],
                      recipes[static_cast<std::size_t>(d)], rng, img.data());
        ImageSet& target = i < n_train ? splits.train : (i < n_train + n_val ? splits.val : splits.test);
        push_image(target, img.data(), k, d);
      }
    }
    out.domains.push_back(std::move(splits));
  }
  return out;
}

ImageSet generate_cue_conflict(const StyleShiftSpec& spec, int n_per_pair) {
  spec.validate();
  if (n_per_pair < 1) throw ShapeError("generate_cue_conflict: n_per_pair must be >= 1");
  const auto palettes = class_palettes(spec);
  const int s = spec.image_size;

  ImageSet set;
  init_image_set(set, spec, spec.num_classes * (spec.num_classes - 1) * n_per_pair);
  std::vector<float> img(static_cast<std::size_t>(3) * s * s);

  for (int content = 0; content < spec.num_classes; ++content) {
    const auto pattern = content_pattern(content, s);
    std::array<double, 3> mu_src, sig_src;
    canonical_class_stats(spec, content, mu_src, sig_src);
    const auto& pal = palettes[static_cast<std::size_t>(content)];
    for (int style = 0; style < spec.num_classes; ++style) {
      if (style == content) continue;
      std::array<double, 3> mu_tgt, sig_tgt;
      canonical_class_stats(spec, style, mu_tgt, sig_tgt);
      for (int i = 0; i < n_per_pair; ++i) {
        Rng rng(sample_stream(spec.seed, spec.num_domains + 1 + style, content, i));
        for (int ch = 0; ch < 3; ++ch) {
          // Per-channel affine re-normalization of the rendering to the
          // donor class statistics; positive slope, so geometry survives.
          const double a = sig_tgt[ch] / sig_src[ch];
          const double b = mu_tgt[ch] - a * mu_src[ch];
          for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
              const bool on = pattern[static_cast<std::size_t>(y) * s + x] != 0;
              double v = a * (on ? pal.fg[ch] : pal.bg[ch]) + b;
              v += spec.stimulus_noise * rng.normal();
              img[(static_cast<std::size_t>(ch) * s + y) * s + x] = static_cast<float>(clamp01(v));
            }
          }
        }
        push_image(set, img.data(), content, -1, style);
      }
    }
  }
  return set;
}

SourceTarget holdout_domain(const StyleShiftSpec& spec, int target_domain) {
  spec.validate();
  if (target_domain < 0 || target_domain >= spec.num_domains) {
    throw ShapeError("holdout_domain: unknown domain " + std::to_string(target_domain));
  }
  std::vector<int> all;
  for (int d = 0; d < spec.num_domains; ++d) all.push_back(d);
  auto dataset = generate_dataset(spec, all);

  SourceTarget out;
  for (std::size_t i = 0; i < dataset.domains.size(); ++i) {
    if (dataset.domain_ids[i] == target_domain) {
      out.target_eval = dataset.domains[i].test;
      out.target_unlabeled = dataset.domains[i].train;
    } else {
      out.source_train.append(dataset.domains[i].train);
      out.source_val.append(dataset.domains[i].val);
    }
  }
  return out;
}

SourceTarget single_source(const StyleShiftSpec& spec, int source_domain, int target_domain) {
  spec.validate();
  for (int d : {source_domain, target_domain}) {
    if (d < 0 || d >= spec.num_domains) throw ShapeError("single_source: unknown domain " + std::to_string(d));
  }
  if (source_domain == target_domain) throw ShapeError("single_source: source and target must differ");
  auto dataset = generate_dataset(spec, {source_domain, target_domain});
  SourceTarget out;
  out.source_train = dataset.domains[0].train;
  out.source_val = dataset.domains[0].val;
  out.target_eval = dataset.domains[1].test;
  out.target_unlabeled = dataset.domains[1].train;
  return out;
}

void save_image_set(const std::string& path_base, const ImageSet& set) {
  {
    std::ofstream f(path_base + ".sgimg", std::ios::binary);
    if (!f) throw std::runtime_error("save_image_set: cannot open " + path_base + ".sgimg");
    f.write(kImageMagic, sizeof(kImageMagic));
    const std::uint32_t dims[4] = {static_cast<std::uint32_t>(set.n), static_cast<std::uint32_t>(set.channels),
                                   static_cast<std::uint32_t>(set.height), static_cast<std::uint32_t>(set.width)};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    f.write(reinterpret_cast<const char*>(set.data.data()),
            static_cast<std::streamsize>(set.data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("save_image_set: write failed for " + path_base + ".sgimg");
  }
  nlohmann::json labels;
  labels["content"] = set.content_labels;
  labels["domain"] = set.domain_labels;
  if (!set.style_labels.empty()) labels["style"] = set.style_labels;
  std::ofstream lf(path_base + ".labels.json");
  if (!lf) throw std::runtime_error("save_image_set: cannot open " + path_base + ".labels.json");
  lf << labels.dump(2) << "\n";
}

ImageSet load_image_set(const std::string& path_base) {
  ImageSet set;
  std::ifstream f(path_base + ".sgimg", std::ios::binary);
  if (!f) throw std::runtime_error("load_image_set: cannot open " + path_base + ".sgimg");
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kImageMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("load_image_set: bad magic in " + path_base + ".sgimg");
  }
  std::uint32_t dims[4];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  set.n = static_cast<int>(dims[0]);
  set.channels = static_cast<int>(dims[1]);
  set.height = static_cast<int>(dims[2]);
  set.width = static_cast<int>(dims[3]);
  set.data.resize(static_cast<std::size_t>(set.n) * set.image_stride());
  f.read(reinterpret_cast<char*>(set.data.data()),
         static_cast<std::streamsize>(set.data.size() * sizeof(float)));
  if (!f) throw std::runtime_error("load_image_set: truncated " + path_base + ".sgimg");

  std::ifstream lf(path_base + ".labels.json");
  if (!lf) throw std::runtime_error("load_image_set: cannot open " + path_base + ".labels.json");
  nlohmann::json labels = nlohmann::json::parse(lf);
  set.content_labels = labels.at("content").get<std::vector<int>>();
  set.domain_labels = labels.at("domain").get<std::vector<int>>();
  if (labels.contains("style")) set.style_labels = labels.at("style").get<std::vector<int>>();
  return set;
}

}  // namespace sagnet
