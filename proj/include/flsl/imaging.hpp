#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace flsl {

using FeatureVector = std::vector<double>;

inline constexpr int kChannels = 3;
inline constexpr int kTargetSide = 32;
inline constexpr std::size_t kFeatureLength = kChannels * kTargetSide * kTargetSide;

// H x W x 3 pixel grid, row-major with interleaved channels.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int height, int width, double fill = 0.0);
  ImageBuffer(int height, int width, std::vector<double> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  double& at(int row, int col, int channel) {
    return pixels_[(static_cast<std::size_t>(row) * width_ + col) * kChannels + channel];
  }
  double at(int row, int col, int channel) const {
    return pixels_[(static_cast<std::size_t>(row) * width_ + col) * kChannels + channel];
  }

  std::span<double> pixels() noexcept { return pixels_; }
  std::span<const double> pixels() const noexcept { return pixels_; }

  bool operator==(const ImageBuffer&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

struct GreenStats {
  double mean_green = 0.0;
  double median_green = 0.0;
};

// Per-channel statistics used by normalize(); kept so a caller can undo it.
struct ChannelStats {
  double mean[kChannels] = {0.0, 0.0, 0.0};
  double stddev[kChannels] = {0.0, 0.0, 0.0};
};

inline constexpr double kNormalizeEpsilon = 1e-8;

// Reads a binary P6 file with maxval 255.
ImageBuffer load_ppm(const std::filesystem::path& path);
void save_ppm(const ImageBuffer& img, const std::filesystem::path& path);

// Square side x side window with offsets floor((dim - side) / 2).
ImageBuffer center_crop(const ImageBuffer& img, int side);

// Half-pixel-center bilinear resampling with edge clamping.
ImageBuffer bilinear_resize(const ImageBuffer& img, int out_h, int out_w);

// Per-channel standardization with the population standard deviation,
// flattened channel-major (all of R, then G, then B; each plane row-major).
FeatureVector normalize(const ImageBuffer& img);
FeatureVector normalize(const ImageBuffer& img, ChannelStats& stats);

GreenStats green_metadata(const ImageBuffer& img);

struct PreprocessConfig {
  int crop_side = 0;  // 0 selects min(height, width)
  bool append_green_metadata = false;
};

// crop -> resize to 32x32 -> normalize, optionally followed by the green
// mean and median (scaled to [0, 1]).
FeatureVector preprocess(const ImageBuffer& img, const PreprocessConfig& cfg);

std::size_t feature_length(const PreprocessConfig& cfg) noexcept;

}  // namespace flsl
