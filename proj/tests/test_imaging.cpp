#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "flsl/error.hpp"
#include "flsl/imaging.hpp"
#include "flsl/rng.hpp"
#include "support.hpp"

using namespace flsl;

namespace {

ImageBuffer random_image(Rng& rng, int h, int w) {
  ImageBuffer img(h, w);
  for (double& v : img.pixels()) v = std::floor(rng.uniform(0.0, 256.0));
  return img;
}

// Straightforward per-pixel reference: map each output centre back to the
// source grid, clamp, blend the four neighbours.
double reference_sample(const ImageBuffer& img, int oy, int ox, int oh, int ow, int ch) {
  const double sy = std::clamp((oy + 0.5) * img.height() / oh - 0.5, 0.0, img.height() - 1.0);
  const double sx = std::clamp((ox + 0.5) * img.width() / ow - 0.5, 0.0, img.width() - 1.0);
  const int y0 = static_cast<int>(sy);
  const int x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  const double top = img.at(y0, x0, ch) * (1 - fx) + img.at(y0, x1, ch) * fx;
  const double bottom = img.at(y1, x0, ch) * (1 - fx) + img.at(y1, x1, ch) * fx;
  return top * (1 - fy) + bottom * fy;
}

}  // namespace

TEST_CASE("ppm round trip keeps the bytes") {
  TempDir dir("ppm_roundtrip");
  std::string bytes = "P6\n2 2\n255\n";
  const unsigned char payload[12] = {0, 1, 2, 10, 20, 30, 100, 150, 200, 253, 254, 255};
  bytes.append(reinterpret_cast<const char*>(payload), 12);
  write_bytes(dir / "a.ppm", bytes);

  const ImageBuffer img = load_ppm(dir / "a.ppm");
  CHECK(img.height() == 2);
  CHECK(img.width() == 2);
  for (int i = 0; i < 12; ++i) CHECK(img.pixels()[i] == payload[i]);
  CHECK(img.at(1, 0, 2) == 200);

  save_ppm(img, dir / "b.ppm");
  CHECK(read_bytes(dir / "b.ppm") == bytes);
}

TEST_CASE("ppm header comments and whitespace") {
  TempDir dir("ppm_comments");
  std::string bytes = "P6 # comment\n1\t1 # size\n255\n";
  bytes += "abc";
  write_bytes(dir / "c.ppm", bytes);
  const ImageBuffer img = load_ppm(dir / "c.ppm");
  CHECK(img.at(0, 0, 0) == 'a');
  CHECK(img.at(0, 0, 2) == 'c');
}

TEST_CASE("ppm errors") {
  TempDir dir("ppm_errors");
  SUBCASE("ascii P3 is rejected") {
    write_bytes(dir / "p3.ppm", "P3\n1 1\n255\n1 2 3\n");
    CHECK_THROWS_WITH_AS(load_ppm(dir / "p3.ppm"), doctest::Contains("P6"), FormatError);
  }
  SUBCASE("16-bit maxval") {
    write_bytes(dir / "deep.ppm", "P6\n1 1\n65535\n" + std::string(6, '\0'));
    CHECK_THROWS_AS(load_ppm(dir / "deep.ppm"), FormatError);
  }
  SUBCASE("truncated payload") {
    write_bytes(dir / "short.ppm", "P6\n4 4\n255\n" + std::string(30, '\x7f'));
    CHECK_THROWS_WITH_AS(load_ppm(dir / "short.ppm"), doctest::Contains("truncat"), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_ppm(dir / "nope.ppm"), IoError); }
}

TEST_CASE("center crop offsets") {
  ImageBuffer img(768, 1024);
  for (int r = 0; r < 768; ++r)
    for (int c = 0; c < 1024; ++c) img.at(r, c, 0) = c;
  const ImageBuffer out = center_crop(img, 768);
  CHECK(out.height() == 768);
  CHECK(out.width() == 768);
  CHECK(out.at(0, 0, 0) == 128);
  CHECK(out.at(0, 767, 0) == 895);

  Rng rng(3);
  const ImageBuffer sq = random_image(rng, 7, 7);
  CHECK(center_crop(sq, 7) == sq);
  CHECK(center_crop(ImageBuffer(9, 12, 42.0), 5) == ImageBuffer(5, 5, 42.0));
  CHECK_THROWS_AS(center_crop(sq, 8), InvalidArgument);
  CHECK_THROWS_AS(center_crop(sq, 0), InvalidArgument);
}

TEST_CASE("bilinear 4x4 to 2x2") {
  ImageBuffer img(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      for (int ch = 0; ch < kChannels; ++ch) img.at(r, c, ch) = 4 * r + c;
  const ImageBuffer out = bilinear_resize(img, 2, 2);
  CHECK(out.at(0, 0, 0) == 2.5);
  CHECK(out.at(0, 1, 0) == 4.5);
  CHECK(out.at(1, 0, 0) == 10.5);
  CHECK(out.at(1, 1, 2) == 12.5);
}

TEST_CASE("bilinear matches the per-pixel reference") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 2 + static_cast<int>(rng.below(30));
    const int w = 2 + static_cast<int>(rng.below(30));
    const int oh = 1 + static_cast<int>(rng.below(40));
    const int ow = 1 + static_cast<int>(rng.below(40));
    const ImageBuffer img = random_image(rng, h, w);
    const ImageBuffer out = bilinear_resize(img, oh, ow);
    double lo = 1e9;
    double hi = -1e9;
    for (double v : img.pixels()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int ch = 0; ch < kChannels; ++ch) {
          CHECK(out.at(y, x, ch) == doctest::Approx(reference_sample(img, y, x, oh, ow, ch)).epsilon(1e-12));
          CHECK(out.at(y, x, ch) >= lo);
          CHECK(out.at(y, x, ch) <= hi);
        }
  }
}

TEST_CASE("bilinear identity and constants") {
  Rng rng(5);
  const ImageBuffer img = random_image(rng, 13, 21);
  CHECK(bilinear_resize(img, 13, 21) == img);
  for (int trial = 0; trial < 20; ++trial) {
    const int oh = 1 + static_cast<int>(rng.below(50));
    const int ow = 1 + static_cast<int>(rng.below(50));
    const ImageBuffer out = bilinear_resize(ImageBuffer(9, 14, 77.0), oh, ow);
    for (double v : out.pixels()) CHECK(v == 77.0);
  }
}

TEST_CASE("normalize hand values") {
  ImageBuffer img(1, 3);
  for (int c = 0; c < 3; ++c) {
    img.at(0, c, 0) = c + 1;
    img.at(0, c, 1) = 5.0;
    img.at(0, c, 2) = 10.0 * c;
  }
  ChannelStats stats;
  const FeatureVector f = normalize(img, stats);
  REQUIRE(f.size() == 9);
  // channel-major: R plane, then G, then B
  CHECK(f[0] == doctest::Approx(-1.224744871391589).epsilon(1e-12));
  CHECK(f[1] == doctest::Approx(0.0));
  CHECK(f[2] == doctest::Approx(1.224744871391589).epsilon(1e-12));
  CHECK(f[3] == 0.0);
  CHECK(f[4] == 0.0);
  CHECK(f[5] == 0.0);
  CHECK(stats.mean[0] == doctest::Approx(2.0));
  CHECK(stats.stddev[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(f[8] == doctest::Approx(1.224744871391589).epsilon(1e-12));
}

TEST_CASE("normalize is invertible with its stats") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageBuffer img = random_image(rng, 3 + static_cast<int>(rng.below(10)), 3 + static_cast<int>(rng.below(10)));
    ChannelStats st;
    const FeatureVector f = normalize(img, st);
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    for (int ch = 0; ch < kChannels; ++ch) {
      double sum = 0.0;
      double sq = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = f[ch * plane + i];
        sum += v;
        sq += v * v;
        const int r = static_cast<int>(i) / img.width();
        const int c = static_cast<int>(i) % img.width();
        CHECK(std::abs(v * st.stddev[ch] + st.mean[ch] - img.at(r, c, ch)) < 1e-9);
      }
      CHECK(std::abs(sum / plane) < 1e-9);
      CHECK(sq / plane == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("green metadata") {
  ImageBuffer img(2, 2);
  const double g[4] = {1, 2, 3, 100};
  for (int i = 0; i < 4; ++i) img.at(i / 2, i % 2, 1) = g[i];
  GreenStats s = green_metadata(img);
  CHECK(s.mean_green == 26.5);
  CHECK(s.median_green == 2.5);

  s = green_metadata(ImageBuffer(3, 5, 10.0));
  CHECK(s.mean_green == 10.0);
  CHECK(s.median_green == 10.0);

  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageBuffer r = random_image(rng, 1 + static_cast<int>(rng.below(20)), 1 + static_cast<int>(rng.below(20)));
    std::vector<double> greens;
    for (int y = 0; y < r.height(); ++y)
      for (int x = 0; x < r.width(); ++x) greens.push_back(r.at(y, x, 1));
    const double mean = std::accumulate(greens.begin(), greens.end(), 0.0) / greens.size();
    std::sort(greens.begin(), greens.end());
    const std::size_t n = greens.size();
    const double median = n % 2 ? greens[n / 2] : (greens[n / 2 - 1] + greens[n / 2]) / 2;
    const GreenStats got = green_metadata(r);
    CHECK(std::abs(got.mean_green - mean) < 1e-12);
    CHECK(got.median_green == median);
  }
}

TEST_CASE("pipeline lengths and finiteness") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const ImageBuffer img = random_image(rng, 20 + static_cast<int>(rng.below(40)), 20 + static_cast<int>(rng.below(40)));
    const FeatureVector f = preprocess(img, {});
    CHECK(f.size() == kFeatureLength);
    CHECK(std::all_of(f.begin(), f.end(), [](double v) { return std::isfinite(v); }));

    PreprocessConfig meta;
    meta.append_green_metadata = true;
    const FeatureVector g = preprocess(img, meta);
    REQUIRE(g.size() == kFeatureLength + 2);
    CHECK(std::equal(f.begin(), f.end(), g.begin()));
    const GreenStats s = green_metadata(img);
    CHECK(g[kFeatureLength] == s.mean_green / 255.0);
    CHECK(g[kFeatureLength + 1] == s.median_green / 255.0);
  }
  CHECK(feature_length({}) == 3072);
  CHECK(feature_length({0, true}) == 3074);
  const FeatureVector flat = preprocess(ImageBuffer(36, 48, 90.0), {});
  CHECK(std::all_of(flat.begin(), flat.end(), [](double v) { return v == 0.0; }));
}
