#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "agvlab/dataset.hpp"
#include "agvlab/simworld.hpp"

using namespace agvlab;

namespace {

struct Master {
  GrayImage image;
  BinaryImage label;
};

const Master& master() {
  static const Master m = [] {
    SceneSpec s = random_scene(31);
    std::mt19937_64 rng(4);
    const int other = (s.drop_zones[0].destination + 2) % 4;
    s.drop_zones.push_back({other, random_drop_zone(rng, other)});
    return Master{render_overhead(s).image, render_overhead_label(s)};
  }();
  return m;
}

AugmentationSpec small_spec(std::uint64_t seed) {
  AugmentationSpec s;
  s.train_count = 24;
  s.test_count = 6;
  s.output_size = 96;
  s.seed = seed;
  return s;
}

std::vector<DatasetPair> collect(const AugmentationSpec& spec) {
  std::vector<DatasetPair> out;
  augment_dataset(master().image, master().label, spec, [&](DatasetPair&& p) { out.push_back(std::move(p)); });
  return out;
}

}  // namespace

TEST(Augment, FullImageIdentityCrop) {
  GrayImage img(64, 64);
  BinaryImage lab(64, 64, 0);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      img.at(x, y) = static_cast<std::uint8_t>(x * 3 + y);
      lab.at(x, y) = (x > 20 && y < 30) ? 1 : 0;
    }
  AugmentationSpec spec;
  spec.train_count = 1;
  spec.test_count = 1;
  spec.crop_min = spec.crop_max = 1.0;
  spec.max_rotation_deg = 0;
  spec.output_size = 64;
  std::vector<DatasetPair> pairs;
  augment_dataset(img, lab, spec, [&](DatasetPair&& p) { pairs.push_back(std::move(p)); });
  ASSERT_EQ(pairs.size(), 2u);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.sample, img);
    EXPECT_EQ(p.label, lab);
  }
  EXPECT_TRUE(pairs[0].train);
  EXPECT_FALSE(pairs[1].train);

  // Half-size output of the same crop is a plain 2x downsample.
  spec.output_size = 32;
  pairs.clear();
  augment_dataset(img, lab, spec, [&](DatasetPair&& p) { pairs.push_back(std::move(p)); });
  EXPECT_EQ(pairs[0].sample.at(5, 7), clamp_u8((img.at(10, 14) + img.at(11, 14) + img.at(10, 15) + img.at(11, 15)) / 4.0));
}

TEST(Augment, CountsSplitsAndDeterminism) {
  const auto a = collect(small_spec(9));
  const auto b = collect(small_spec(9));
  const auto c = collect(small_spec(10));
  ASSERT_EQ(a.size(), 30u);
  EXPECT_EQ(std::count_if(a.begin(), a.end(), [](const auto& p) { return p.train; }), 24);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].index, static_cast<int>(i));
    EXPECT_EQ(a[i].sample, b[i].sample);
    EXPECT_EQ(a[i].label, b[i].label);
  }
  EXPECT_NE(a[0].sample, c[0].sample);
}

TEST(Augment, CropsStayInsideMaster) {
  const auto pairs = collect(small_spec(3));
  const double w = master().image.width(), h = master().image.height();
  for (const auto& p : pairs) {
    const double n = p.transform.output_size;
    for (Point2 corner : {Point2{-0.5, -0.5}, Point2{n - 0.5, -0.5}, Point2{n - 0.5, n - 0.5}, Point2{-0.5, n - 0.5}}) {
      const Point2 m = p.transform.apply(corner);
      EXPECT_GE(m.x, -0.5 - 1e-6);
      EXPECT_GE(m.y, -0.5 - 1e-6);
      EXPECT_LE(m.x, w - 0.5 + 1e-6);
      EXPECT_LE(m.y, h - 0.5 + 1e-6);
    }
    EXPECT_LE(std::abs(p.transform.angle_deg), 45.0);
    EXPECT_GE(p.transform.side, 0.25 * h - 1e-9);
    EXPECT_LE(p.transform.side, 0.9 * h + 1e-9);
  }
}

TEST(Augment, LabelCentroidFollowsRecordedTransform) {
  AugmentationSpec spec = small_spec(12);
  spec.train_count = 60;
  const auto pairs = collect(spec);
  const auto& lab = master().label;
  int checked = 0;
  for (const auto& p : pairs) {
    // Centroid of the output label mapped into the master.
    double su = 0, sv = 0, n = 0;
    for (int v = 0; v < p.label.height(); ++v)
      for (int u = 0; u < p.label.width(); ++u)
        if (p.label.at(u, v)) su += u, sv += v, ++n;
    if (n < 20) continue;
    const Point2 mapped = p.transform.apply({su / n, sv / n});
    // Independent: master label pixels whose centres fall inside the
    // rotated crop square.
    const double a = p.transform.angle_deg * std::numbers::pi / 180.0;
    double sx = 0, sy = 0, m = 0;
    for (int y = 0; y < lab.height(); ++y)
      for (int x = 0; x < lab.width(); ++x) {
        if (!lab.at(x, y)) continue;
        const double dx = x - p.transform.center.x, dy = y - p.transform.center.y;
        const double lx = std::cos(a) * dx + std::sin(a) * dy, ly = -std::sin(a) * dx + std::cos(a) * dy;
        if (std::abs(lx) <= p.transform.side / 2 && std::abs(ly) <= p.transform.side / 2) sx += x, sy += y, ++m;
      }
    ASSERT_GT(m, 0);
    // Tolerance is in output px.
    const double k = p.transform.side / p.transform.output_size;
    EXPECT_LT(distance(mapped, {sx / m, sy / m}) / k, 3.0) << "pair " << p.index;
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(CutPair, ThinStrokeKeepsItsMassWhenDownscaled) {
  // A one pixel diagonal stroke cut at a quarter of the resolution.
  GrayImage img(256, 256, 0);
  BinaryImage lab(256, 256, 0);
  for (int i = 40; i < 200; ++i) lab.at(i, i / 2 + 30) = 1;
  CropTransform t;
  t.center = {127.5, 127.5};
  t.side = 240;
  t.angle_deg = 17;
  t.output_size = 60;
  const DatasetPair p = cut_pair(img, lab, t);
  int on = 0;
  for (auto v : p.label.pixels()) on += v;
  const double k = t.side / t.output_size;
  EXPECT_NEAR(on, 160 / (k * k), 1.0);
}

TEST(Augment, RejectsBadInput) {
  AugmentationSpec spec = small_spec(1);
  auto sink = [](DatasetPair&&) {};
  EXPECT_THROW(augment_dataset(GrayImage(10, 10), BinaryImage(10, 11), spec, sink), DimensionError);
  spec.train_count = 0;
  EXPECT_THROW(augment_dataset(GrayImage(10, 10), BinaryImage(10, 10), spec, sink), DomainError);
  spec = small_spec(1);
  spec.crop_min = spec.crop_max = 1.0;
  spec.max_rotation_deg = 45;  // a full-size square cannot rotate inside
  EXPECT_THROW(augment_dataset(GrayImage(50, 40), BinaryImage(50, 40), spec, sink), GenerationError);
}

TEST(Augment, WritesPngsAndManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "agvlab_dataset_test";
  std::filesystem::remove_all(dir);
  AugmentationSpec spec = small_spec(5);
  spec.train_count = 4;
  spec.test_count = 1;
  const auto manifest = write_dataset(dir, master().image, master().label, spec);
  ASSERT_EQ(manifest.at("pairs").size(), 5u);
  const auto pairs = collect(spec);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& e = manifest.at("pairs")[i];
    EXPECT_EQ(e.at("split"), i < 4 ? "train" : "test");
    EXPECT_EQ(load_png((dir / e.at("sample").get<std::string>()).string()), pairs[i].sample);
    EXPECT_EQ(label_from_gray(load_png((dir / e.at("label").get<std::string>()).string())), pairs[i].label);
    const auto aff = e.at("transform").at("affine");
    const Point2 q = pairs[i].transform.apply({7, 11});
    EXPECT_NEAR(aff[0][0].get<double>() * 7 + aff[0][1].get<double>() * 11 + aff[0][2].get<double>(), q.x, 1e-9);
    EXPECT_NEAR(aff[1][0].get<double>() * 7 + aff[1][1].get<double>() * 11 + aff[1][2].get<double>(), q.y, 1e-9);
  }
  std::ifstream in(dir / "manifest.json");
  EXPECT_EQ(nlohmann::json::parse(in), manifest);
  std::filesystem::remove_all(dir);
}
