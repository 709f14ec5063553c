#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "affnet/dataset.hpp"
#include "affnet/image.hpp"
#include "affnet/rng.hpp"
#include "affnet/tensor.hpp"

namespace affnet::eval {

// Desk-scale stand-in for the restricted micro-expression corpora: each
// subject gets a fixed procedural base texture, and each clip animates a
// localized intensity blob whose motion signature encodes the class:
//   positive  - drifts upward
//   negative  - drifts downward
//   surprise  - expands in place
//   others    - oscillates horizontally
struct SyntheticConfig {
  int subjects = 6;
  int clips_per_subject = 8;
  int frame_count = 8;
  int image_size = 112;
  std::uint64_t seed = 0;
  std::string dataset_name = "synthetic";
};

namespace syndetail {

struct Blob {
  double cy, cx, sigma, amplitude;
};

inline void add_blob(std::vector<double>& image, int size, const Blob& blob) {
  const double two_sigma_sq = 2.0 * blob.sigma * blob.sigma;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = (y - blob.cy), dx = (x - blob.cx);
      const double v = blob.amplitude * std::exp(-(dy * dy + dx * dx) / two_sigma_sq);
      double* px = image.data() + (static_cast<std::size_t>(y) * size + x) * 3;
      px[0] += v;
      px[1] += v * 0.92;
      px[2] += v * 0.85;
    }
}

inline std::vector<double> base_texture(int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> image(static_cast<std::size_t>(size) * size * 3, 0.0);
  const double tint[3] = {0.38 + 0.08 * rng.uniform(),
                          0.36 + 0.08 * rng.uniform(),
                          0.34 + 0.08 * rng.uniform()};
  for (std::size_t i = 0; i < image.size(); i += 3)
    for (int ch = 0; ch < 3; ++ch) image[i + ch] = tint[ch];
  for (int b = 0; b < 6; ++b) {
    Blob blob;
    blob.cy = rng.uniform(0.1, 0.9) * size;
    blob.cx = rng.uniform(0.1, 0.9) * size;
    blob.sigma = rng.uniform(0.10, 0.28) * size;
    blob.amplitude = rng.uniform(-0.13, 0.13);
    add_blob(image, size, blob);
  }
  return image;
}

// Blob center and width at clip time t in [0, 1] for a given class index.
inline Blob class_blob(int class_index, double t, int size, double jy,
                       double jx, double amp, double sigma) {
  Blob blob;
  blob.amplitude = amp;
  blob.sigma = sigma * size;
  double cy = 0.5 + jy, cx = 0.5 + jx;
  switch (class_index) {
    case 0: cy += 0.14 - 0.28 * t; break;              // upward drift
    case 1: cy += -0.14 + 0.28 * t; break;             // downward drift
    case 2: blob.sigma = (sigma + 0.07 * t) * size; break;  // expansion
    default: cx += 0.13 * std::sin(2.0 * 3.14159265358979323846 * t); break;
  }
  blob.cy = cy * size;
  blob.cx = cx * size;
  return blob;
}

}  // namespace syndetail

inline DatasetManifest generate_synthetic(const SyntheticConfig& config,
                                          const std::filesystem::path& out_dir) {
  detail::require(config.subjects >= 2, "synthetic data needs >= 2 subjects");
  detail::require(config.frame_count >= 3, "synthetic clips need >= 3 frames");
  detail::require(config.clips_per_subject >= 1 && config.image_size >= 16,
                  "invalid synthetic config");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw std::runtime_error("cannot create output directory: " +
                             out_dir.string());

  const auto& labels = default_label_set();
  const int size = config.image_size;
  DatasetManifest manifest;
  manifest.dataset_name = config.dataset_name;
  manifest.base_dir = out_dir;
  manifest.label_set = labels;

  for (int s = 0; s < config.subjects; ++s) {
    std::vector<double> base =
        syndetail::base_texture(size, mix_seed(config.seed, 0x5u + s));
    char subject_name[16];
    std::snprintf(subject_name, sizeof(subject_name), "s%02d", s);
    for (int cclip = 0; cclip < config.clips_per_subject; ++cclip) {
      const int class_index = cclip % 4;
      Rng rng(mix_seed(config.seed, (s + 1) * 1000ull + cclip));
      const double jy = rng.uniform(-0.04, 0.04);
      const double jx = rng.uniform(-0.04, 0.04);
      const double amp = 0.35 * rng.uniform(0.85, 1.15);
      const double sigma = 0.085 * rng.uniform(0.9, 1.1);

      char clip_name[16];
      std::snprintf(clip_name, sizeof(clip_name), "c%02d", cclip);
      const std::filesystem::path clip_dir =
          out_dir / subject_name / clip_name;
      std::filesystem::create_directories(clip_dir, ec);
      if (ec)
        throw std::runtime_error("cannot create clip directory: " +
                                 clip_dir.string());

      for (int f = 0; f < config.frame_count; ++f) {
        const double t = config.frame_count > 1
                             ? static_cast<double>(f) / (config.frame_count - 1)
                             : 0.0;
        std::vector<double> frame = base;
        syndetail::add_blob(frame, size,
                            syndetail::class_blob(class_index, t, size, jy, jx,
                                                  amp, sigma));
        img::Image8 png;
        png.height = size;
        png.width = size;
        png.channels = 3;
        png.pixels.resize(frame.size());
        for (std::size_t i = 0; i < frame.size(); ++i) {
          double v = std::floor(std::clamp(frame[i], 0.0, 1.0) * 255.0 + 0.5);
          png.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
        char frame_name[16];
        std::snprintf(frame_name, sizeof(frame_name), "f%03d.png", f);
        img::write_png(clip_dir / frame_name, png);
      }

      ManifestEntry entry;
      entry.clip_path = std::string(subject_name) + "/" + clip_name;
      entry.video_id = std::string(subject_name) + "_" + clip_name;
      entry.subject_id = subject_name;
      entry.label = labels[static_cast<std::size_t>(class_index)];
      manifest.entries.push_back(std::move(entry));
    }
  }
  save_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace affnet::eval
