#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "affnet/image.hpp"
#include "affnet/tensor.hpp"

namespace affnet::ami {

// How a frame's weight is assembled from the per-frame rank coefficients
// (2j - k) / j. kSuffixSum gives frame i the sum of coefficients j = i..k,
// so weight grows toward the final frame; kLiteral sums j = 1..k-i, which
// leaves the final frame at zero.
enum class WeightRule { kSuffixSum, kLiteral };

inline const char* to_string(WeightRule rule) {
  return rule == WeightRule::kSuffixSum ? "suffix_sum" : "literal";
}

inline WeightRule parse_weight_rule(const std::string& name) {
  if (name == "suffix_sum") return WeightRule::kSuffixSum;
  if (name == "literal") return WeightRule::kLiteral;
  throw std::invalid_argument("unknown weight rule: " + name);
}

// Ordered equal-shaped RGB frames of one clip, pixel values in [0, 1].
struct FrameSequence {
  std::vector<Tensor<double>> frames;  // each [H, W, 3]
  std::string video_id;
  std::string subject_id;
  std::string label;

  int frame_count() const { return static_cast<int>(frames.size()); }

  void validate() const {
    detail::require(!frames.empty(), "frame sequence is empty");
    const auto& shape = frames.front().shape();
    detail::require(shape.size() == 3 && shape[2] == 3,
                    "frames must be H x W x 3");
    for (const auto& frame : frames) {
      detail::require(frame.shape() == shape, "frames differ in shape");
      for (std::size_t i = 0; i < frame.size(); ++i) {
        double v = frame[i];
        detail::require(std::isfinite(v) && v >= 0.0 && v <= 1.0,
                        "frame pixels must be finite and in [0, 1]");
      }
    }
  }
};

// One real-valued image summarizing a clip; range is unbounded until export.
struct AffectiveImage {
  Tensor<double> pixels;  // [H, W, 3]
  std::string source_video_id;
  int frames_used = 0;
};

// Weight of each frame, a pure function of the frame count. Inner sums run
// ascending in j so results are bit-identical across calls and platforms.
inline std::vector<double> frame_weights(int frame_count,
                                         WeightRule rule = WeightRule::kSuffixSum) {
  detail::require(frame_count >= 1, "frame count must be >= 1");
  const int k = frame_count;
  auto rank_coeff = [k](int j) {
    return (2.0 * j - k) / static_cast<double>(j);
  };
  std::vector<double> weights(static_cast<std::size_t>(k), 0.0);
  for (int i = 1; i <= k; ++i) {
    double sum = 0.0;
    if (rule == WeightRule::kSuffixSum) {
      for (int j = i; j <= k; ++j) sum += rank_coeff(j);
    } else {
      for (int j = 1; j <= k - i; ++j) sum += rank_coeff(j);
    }
    weights[static_cast<std::size_t>(i - 1)] = sum;
  }
  return weights;
}

// Per-frame scalar scaling: frame i times its weight.
inline std::vector<Tensor<double>> motion_images(
    const FrameSequence& seq, const std::vector<double>& weights) {
  detail::require(weights.size() == seq.frames.size(),
                  "weight count does not match frame count");
  std::vector<Tensor<double>> scaled;
  scaled.reserve(seq.frames.size());
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    Tensor<double> m = seq.frames[i];
    double w = weights[i];
    for (std::size_t p = 0; p < m.size(); ++p) m[p] *= w;
    scaled.push_back(std::move(m));
  }
  return scaled;
}

// Pixelwise sum of the weighted frames. No normalization here; the result
// keeps sign and magnitude.
inline AffectiveImage compose(const FrameSequence& seq,
                              WeightRule rule = WeightRule::kSuffixSum) {
  seq.validate();
  std::vector<double> weights = frame_weights(seq.frame_count(), rule);
  Tensor<double> sum(seq.frames.front().shape());
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Tensor<double>& frame = seq.frames[i];
    const double w = weights[i];
    for (std::size_t p = 0; p < sum.size(); ++p) sum[p] += frame[p] * w;
  }
  ensure_finite(sum, "affective image");
  return AffectiveImage{std::move(sum), seq.video_id, seq.frame_count()};
}

// Global min-max rescale to [0, 255], rounding half up. A constant image
// maps to all zeros.
inline img::Image8 normalize_for_export(const Tensor<double>& pixels) {
  detail::require(pixels.rank() == 3, "image must be H x W x C");
  ensure_finite(pixels, "image to export");
  double lo = pixels[0], hi = pixels[0];
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    lo = std::min(lo, pixels[i]);
    hi = std::max(hi, pixels[i]);
  }
  img::Image8 out;
  out.height = static_cast<int>(pixels.dim(0));
  out.width = static_cast<int>(pixels.dim(1));
  out.channels = static_cast<int>(pixels.dim(2));
  out.pixels.assign(pixels.size(), 0);
  if (hi > lo) {
    const double scale = 255.0 / (hi - lo);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      double v = std::floor((pixels[i] - lo) * scale + 0.5);
      out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

// A clip is a directory of image files, consumed in lexicographic order.
inline FrameSequence load_frame_sequence(const std::filesystem::path& clip_dir,
                                         std::string video_id = "",
                                         std::string subject_id = "",
                                         std::string label = "") {
  if (!std::filesystem::is_directory(clip_dir))
    throw std::runtime_error("clip directory not found: " + clip_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(clip_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
      files.push_back(entry.path());
  }
  detail::require(!files.empty(),
                  "no frames found in clip: " + clip_dir.string());
  std::sort(files.begin(), files.end(),
            [](const std::filesystem::path& a, const std::filesystem::path& b) {
              return a.filename().string() < b.filename().string();
            });

  FrameSequence seq;
  seq.video_id = video_id.empty() ? clip_dir.filename().string()
                                  : std::move(video_id);
  seq.subject_id = std::move(subject_id);
  seq.label = std::move(label);
  seq.frames.reserve(files.size());
  for (const auto& file : files) {
    img::Image8 raw = img::read_image(file);
    Tensor<double> frame({static_cast<std::size_t>(raw.height),
                          static_cast<std::size_t>(raw.width), 3});
    for (std::size_t i = 0; i < frame.size(); ++i)
      frame[i] = raw.pixels[i] / 255.0;
    if (!seq.frames.empty() && !frame.same_shape(seq.frames.front()))
      throw std::invalid_argument("frame shape mismatch in clip " +
                                  clip_dir.string() + " at " + file.string());
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

}  // namespace affnet::ami
