#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "flsl/error.hpp"
#include "flsl/rng.hpp"
#include "flsl/synth.hpp"
#include "support.hpp"

using namespace flsl;

namespace {

NodeProfile profile(NodeId id, NodeType t, int samples = 48) {
  NodeProfile p;
  p.node_id = id;
  p.node_type = t;
  p.samples_per_node = samples;
  p.generator_seed = mix_seed(99, id);
  return p;
}

double mean_luminance(const ImageBuffer& img) {
  double s = 0.0;
  for (double v : img.pixels()) s += v;
  return s / static_cast<double>(img.pixels().size());
}

}  // namespace

TEST_CASE("node-type csv") {
  TempDir dir("csv");
  SUBCASE("three rows") {
    write_bytes(dir / "ok.csv", "node_id,node_type\n0,0\n1,1\r\n2,2\n\n");
    const auto p = load_node_types_csv(dir / "ok.csv");
    REQUIRE(p.size() == 3);
    CHECK(p[0].node_type == NodeType::Type0);
    CHECK(p[1].node_type == NodeType::Type1);
    CHECK(p[2].node_type == NodeType::Type2);
    CHECK(p[0].generator_seed != p[1].generator_seed);

    save_node_types_csv(p, dir / "again.csv");
    CHECK(read_bytes(dir / "again.csv") == "node_id,node_type\n0,0\n1,1\n2,2\n");
  }
  SUBCASE("type out of range names the row") {
    write_bytes(dir / "bad.csv", "node_id,node_type\n0,0\n1,5\n");
    CHECK_THROWS_WITH_AS(load_node_types_csv(dir / "bad.csv"), doctest::Contains("row 3"), FormatError);
  }
  SUBCASE("duplicate id") {
    write_bytes(dir / "dup.csv", "node_id,node_type\n7,0\n7,1\n");
    CHECK_THROWS_WITH_AS(load_node_types_csv(dir / "dup.csv"), doctest::Contains("duplicate node_id 7"),
                         FormatError);
  }
  SUBCASE("malformed rows") {
    write_bytes(dir / "m1.csv", "node_id,node_type\nx,0\n");
    CHECK_THROWS_AS(load_node_types_csv(dir / "m1.csv"), FormatError);
    write_bytes(dir / "m2.csv", "node_id,node_type\n1,0,3\n");
    CHECK_THROWS_AS(load_node_types_csv(dir / "m2.csv"), FormatError);
    write_bytes(dir / "m3.csv", "id,type\n1,0\n");
    CHECK_THROWS_AS(load_node_types_csv(dir / "m3.csv"), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_node_types_csv(dir / "none.csv"), IoError); }
}

TEST_CASE("night window") {
  NodeProfile p = profile(0, NodeType::Type0);
  p.sunrise_minute = 360;
  p.sunset_minute = 1080;
  CHECK(expected_state(17 * 60 + 50, p) == LampState::On);
  CHECK(expected_state(12 * 60, p) == LampState::Off);
  CHECK(expected_state(1080 - 15, p) == LampState::On);
  CHECK(expected_state(1080 - 16, p) == LampState::Off);
  CHECK(expected_state(360 + 15, p) == LampState::On);
  CHECK(expected_state(360 + 16, p) == LampState::Off);
  CHECK_THROWS_AS(expected_state(-1, p), InvalidArgument);
  CHECK_THROWS_AS(expected_state(1440, p), InvalidArgument);
}

TEST_CASE("night window exhaustive over random schedules") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    NodeProfile p = profile(0, NodeType::Type1);
    p.sunrise_minute = static_cast<int>(rng.below(700));
    p.sunset_minute = p.sunrise_minute + 1 + static_cast<int>(rng.below(1439 - p.sunrise_minute));
    for (int t = 0; t < kMinutesPerDay; ++t) {
      const bool night = t >= p.sunset_minute - 15 || t <= p.sunrise_minute + 15;
      CHECK((expected_state(t, p) == LampState::On) == night);
    }
  }
}

TEST_CASE("samples are deterministic and labelled by the schedule") {
  for (NodeType t : {NodeType::Type0, NodeType::Type1, NodeType::Type2}) {
    const NodeProfile p = profile(3, t);
    const Sample a = generate_sample(p, 1200, 4);
    const Sample b = generate_sample(p, 1200, 4);
    CHECK(a.image() == b.image());
    CHECK(a.label == LampState::On);
    CHECK_FALSE(generate_sample(p, 1200, 5).image() == a.image());

    const auto samples = generate_node_samples(p);
    REQUIRE(samples.size() == 48);
    for (const auto& s : samples) {
      CHECK(s.label == expected_state(s.timestamp_minute, p));
      CHECK(s.timestamp_minute == sample_timestamp(p, s.draw_index));
      CHECK(s.image() == generate_sample(p, s.timestamp_minute, s.draw_index).image());
      CHECK(s.image().height() == p.generator.image_height);
    }
  }
}

TEST_CASE("type0 lamp head clears the background by the contrast") {
  for (NodeId id = 0; id < 20; ++id) {
    const NodeProfile p = profile(id, NodeType::Type0, 24);
    const LampGeometry geo = lamp_geometry(p);
    for (const auto& s : generate_node_samples(p)) {
      if (s.label != LampState::On) continue;
      const ImageBuffer& img = s.image();
      double core = 0.0;
      double rest = 0.0;
      int nc = 0;
      int nr = 0;
      for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) {
          const double d = std::hypot(r - geo.row, c - geo.col);
          const double lum = (img.at(r, c, 0) + img.at(r, c, 1) + img.at(r, c, 2)) / 3.0;
          if (d <= 0.9 * geo.sigma) {
            core += lum;
            ++nc;
          } else if (d > 3.0 * geo.sigma) {
            rest += lum;
            ++nr;
          }
        }
      REQUIRE(nc > 0);
      CHECK(core / nc - rest / nr >= p.generator.contrast);
    }
  }
}

TEST_CASE("on/off luminance gap shrinks from type0 to type2") {
  auto gap = [](NodeType t) {
    double total = 0.0;
    for (NodeId id = 0; id < 12; ++id) {
      const auto samples = generate_node_samples(profile(id, t, 72));
      double on = 0.0;
      double off = 0.0;
      int n_on = 0;
      int n_off = 0;
      for (const auto& s : samples) {
        (s.label == LampState::On ? on : off) += mean_luminance(s.image());
        ++(s.label == LampState::On ? n_on : n_off);
      }
      total += std::abs(on / n_on - off / n_off);
    }
    return total / 12;
  };
  const double g0 = gap(NodeType::Type0);
  const double g2 = gap(NodeType::Type2);
  CHECK(g0 > g2);
}

TEST_CASE("dataset generation") {
  FleetConfig fc;
  fc.type0_nodes = 4;
  fc.type1_nodes = 3;
  fc.type2_nodes = 2;
  fc.samples_per_node = 20;
  const auto profiles = make_fleet(fc);
  REQUIRE(profiles.size() == 9);
  std::map<NodeType, int> counts;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    CHECK(profiles[i].node_id == i);
    ++counts[profiles[i].node_type];
    CHECK(profiles[i].sunrise_minute >= fc.sunrise_min);
    CHECK(profiles[i].sunrise_minute <= fc.sunrise_max);
    CHECK(profiles[i].sunset_minute >= fc.sunset_min);
    CHECK(profiles[i].sunset_minute <= fc.sunset_max);
  }
  CHECK(counts[NodeType::Type0] == 4);
  CHECK(counts[NodeType::Type2] == 2);

  const Dataset a = generate_dataset(profiles, 1);
  const Dataset b = generate_dataset(profiles, 4);
  REQUIRE(a.size() == 9);
  for (const auto& [id, samples] : a) {
    CHECK(samples.size() == 20);
    const auto& other = b.at(id);
    for (std::size_t k = 0; k < samples.size(); ++k) CHECK(samples[k].image() == other[k].image());
  }

  std::vector<NodeProfile> dup = {profiles[0], profiles[0]};
  CHECK_THROWS_AS(generate_dataset(dup), InvalidArgument);
  CHECK_THROWS_AS(generate_dataset(std::vector<NodeProfile>{}), InvalidArgument);
}

TEST_CASE("split is a per-node partition") {
  const NodeProfile p = profile(1, NodeType::Type0, 100);
  const auto samples = generate_node_samples(p);
  SplitConfig cfg;
  cfg.split_seed = 5;
  const auto [train, test] = split_train_test(samples, cfg);
  CHECK(train.size() == 80);
  CHECK(test.size() == 20);
  const auto [train2, test2] = split_train_test(samples, cfg);
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(test[i].draw_index == test2[i].draw_index);

  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Sample> mixed;
    const int nodes = 1 + static_cast<int>(rng.below(4));
    for (int n = 0; n < nodes; ++n) {
      for (int k = 0; k < 2 + static_cast<int>(rng.below(40)); ++k) {
        Sample s;
        s.node_id = static_cast<NodeId>(n);
        s.draw_index = k;
        mixed.push_back(s);
      }
    }
    SplitConfig c;
    c.test_fraction = rng.uniform(0.05, 0.95);
    c.split_seed = rng.next_u64();
    const auto [tr, te] = split_train_test(mixed, c);
    CHECK(tr.size() + te.size() == mixed.size());
    std::set<std::pair<NodeId, int>> seen;
    for (const auto& s : tr) seen.insert({s.node_id, s.draw_index});
    for (const auto& s : te) CHECK(seen.insert({s.node_id, s.draw_index}).second);
    for (int n = 0; n < nodes; ++n) {
      const auto id = static_cast<NodeId>(n);
      const auto total = std::count_if(mixed.begin(), mixed.end(), [&](const Sample& s) { return s.node_id == id; });
      const auto in_test = std::count_if(te.begin(), te.end(), [&](const Sample& s) { return s.node_id == id; });
      CHECK(static_cast<std::size_t>(in_test) == test_count_for(static_cast<std::size_t>(total), c.test_fraction));
      CHECK(std::abs(in_test - c.test_fraction * total) <= 1.0);
    }
  }
  CHECK_THROWS_AS(test_count_for(10, 1.0), InvalidArgument);
  CHECK_THROWS_AS(test_count_for(1, 0.5), InvalidArgument);
}
