#include "flsl/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "flsl/error.hpp"

namespace flsl {

ImageBuffer::ImageBuffer(int height, int width, double fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    throw InvalidArgument("image dimensions must be positive");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

ImageBuffer::ImageBuffer(int height, int width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height <= 0 || width <= 0) {
    throw InvalidArgument("image dimensions must be positive");
  }
  if (pixels_.size() != static_cast<std::size_t>(height) * width * kChannels) {
    throw InvalidArgument("pixel count does not match height*width*3");
  }
  for (double v : pixels_) {
    if (!std::isfinite(v)) throw InvalidArgument("image pixels must be finite");
  }
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string read_header_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

int parse_header_int(const std::string& token, const std::string& what,
                     const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used == token.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw FormatError(path.string() + ": invalid PPM " + what + " '" + token + "'");
}

}  // namespace

ImageBuffer load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open PPM file: " + path.string());

  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2 || magic[0] != 'P' || magic[1] != '6') {
    throw FormatError(path.string() + ": unsupported format (expected binary P6 magic)");
  }
  const int width = parse_header_int(read_header_token(in), "width", path);
  const int height = parse_header_int(read_header_token(in), "height", path);
  const int maxval = parse_header_int(read_header_token(in), "maxval", path);
  if (maxval != 255) {
    throw FormatError(path.string() + ": unsupported maxval " + std::to_string(maxval) +
                      " (only 255)");
  }
  // read_header_token consumed exactly one whitespace byte after maxval.
  const std::size_t expected = static_cast<std::size_t>(width) * height * kChannels;
  std::vector<unsigned char> bytes(expected);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != expected) {
    throw FormatError(path.string() + ": truncated payload, expected " + std::to_string(expected) +
                      " bytes but found " + std::to_string(got));
  }
  std::vector<double> pixels(bytes.begin(), bytes.end());
  return ImageBuffer(height, width, std::move(pixels));
}

void save_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write PPM file: " + path.string());
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::string payload;
  payload.reserve(img.pixels().size());
  for (double v : img.pixels()) {
    payload.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)))));
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing PPM file: " + path.string());
}

ImageBuffer center_crop(const ImageBuffer& img, int side) {
  if (side <= 0 || side > img.height() || side > img.width()) {
    throw InvalidArgument("crop side " + std::to_string(side) + " exceeds image dimensions " +
                          std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  const int row0 = (img.height() - side) / 2;
  const int col0 = (img.width() - side) / 2;
  ImageBuffer out(side, side);
  for (int r = 0; r < side; ++r) {
    const auto src = img.pixels().subspan(
        (static_cast<std::size_t>(row0 + r) * img.width() + col0) * kChannels,
        static_cast<std::size_t>(side) * kChannels);
    std::copy(src.begin(), src.end(),
              out.pixels().begin() + static_cast<std::ptrdiff_t>(r) * side * kChannels);
  }
  return out;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;  // weight of hi
};

Tap source_tap(int out_index, int in_size, int out_size) {
  double src = (out_index + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  const int lo = static_cast<int>(std::floor(src));
  const int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace

ImageBuffer bilinear_resize(const ImageBuffer& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) {
    throw InvalidArgument("resize target dimensions must be positive");
  }
  if (img.empty()) throw InvalidArgument("cannot resize an empty image");
  if (out_h == img.height() && out_w == img.width()) return img;

  std::vector<Tap> cols(out_w);
  for (int j = 0; j < out_w; ++j) cols[j] = source_tap(j, img.width(), out_w);

  ImageBuffer out(out_h, out_w);
  for (int i = 0; i < out_h; ++i) {
    const Tap rt = source_tap(i, img.height(), out_h);
    for (int j = 0; j < out_w; ++j) {
      const Tap& ct = cols[j];
      for (int c = 0; c < kChannels; ++c) {
        const double top = img.at(rt.lo, ct.lo, c) * (1.0 - ct.frac) + img.at(rt.lo, ct.hi, c) * ct.frac;
        const double bottom =
            img.at(rt.hi, ct.lo, c) * (1.0 - ct.frac) + img.at(rt.hi, ct.hi, c) * ct.frac;
        out.at(i, j, c) = top * (1.0 - rt.frac) + bottom * rt.frac;
      }
    }
  }
  return out;
}

FeatureVector normalize(const ImageBuffer& img, ChannelStats& stats) {
  if (img.empty()) throw InvalidArgument("cannot normalize an empty image");
  const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
  const auto px = img.pixels();
  FeatureVector out(plane * kChannels);
  for (int c = 0; c < kChannels; ++c) {
    double sum = 0.0;
    for (std::size_t k = 0; k < plane; ++k) sum += px[k * kChannels + c];
    const double mean = sum / static_cast<double>(plane);
    double sq = 0.0;
    for (std::size_t k = 0; k < plane; ++k) {
      const double d = px[k * kChannels + c] - mean;
      sq += d * d;
    }
    const double sd = std::sqrt(sq / static_cast<double>(plane));
    const double denom = std::max(sd, kNormalizeEpsilon);
    stats.mean[c] = mean;
    stats.stddev[c] = sd;
    double* dst = out.data() + c * plane;
    for (std::size_t k = 0; k < plane; ++k) dst[k] = (px[k * kChannels + c] - mean) / denom;
  }
  return out;
}

FeatureVector normalize(const ImageBuffer& img) {
  ChannelStats stats;
  return normalize(img, stats);
}

GreenStats green_metadata(const ImageBuffer& img) {
  if (img.empty()) throw InvalidArgument("cannot compute green statistics of an empty image");
  const std::size_t n = static_cast<std::size_t>(img.height()) * img.width();
  std::vector<double> green(n);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    green[k] = img.pixels()[k * kChannels + 1];
    sum += green[k];
  }
  const std::size_t mid = n / 2;
  std::nth_element(green.begin(), green.begin() + static_cast<std::ptrdiff_t>(mid), green.end());
  double median = green[mid];
  if (n % 2 == 0) {
    const double lower = *std::max_element(green.begin(), green.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (lower + median);
  }
  return {sum / static_cast<double>(n), median};
}

std::size_t feature_length(const PreprocessConfig& cfg) noexcept {
  return kFeatureLength + (cfg.append_green_metadata ? 2 : 0);
}

FeatureVector preprocess(const ImageBuffer& img, const PreprocessConfig& cfg) {
  const int side = cfg.crop_side > 0 ? cfg.crop_side : std::min(img.height(), img.width());
  const ImageBuffer small = bilinear_resize(center_crop(img, side), kTargetSide, kTargetSide);
  FeatureVector features = normalize(small);
  if (cfg.append_green_metadata) {
    // Statistics come from the raw frame, before any standardization.
    const GreenStats g = green_metadata(img);
    features.push_back(g.mean_green / 255.0);
    features.push_back(g.median_green / 255.0);
  }
  return features;
}

}  // namespace flsl
