#pragma once

// Training pairs for a learned marker/drop-area segmenter: rotated square
// crops cut identically from a master image and its label.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "agvlab/geometry.hpp"
#include "agvlab/image_io.hpp"
#include "json.hpp"

namespace agvlab {

struct AugmentationSpec {
  int train_count = 1024;
  int test_count = 128;
  double crop_min = 0.25;  ///< side as a fraction of the master's shorter edge
  double crop_max = 0.9;
  double max_rotation_deg = 45.0;
  int output_size = 256;
  std::uint64_t seed = 1;
};

/// Output px (u, v) -> master px: master = A * (u, v, 1).
struct CropTransform {
  Point2 center;  ///< master px
  double side = 0.0;
  double angle_deg = 0.0;
  int output_size = 256;

  Point2 apply(Point2 uv) const {
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double k = side / output_size;
    const double lx = (uv.x + 0.5) * k - side / 2, ly = (uv.y + 0.5) * k - side / 2;
    return {center.x + std::cos(a) * lx - std::sin(a) * ly, center.y + std::sin(a) * lx + std::cos(a) * ly};
  }
  std::array<std::array<double, 3>, 2> affine() const {
    const Point2 o = apply({0, 0}), ex = apply({1, 0}), ey = apply({0, 1});
    return {{{ex.x - o.x, ey.x - o.x, o.x}, {ex.y - o.y, ey.y - o.y, o.y}}};
  }
};

struct DatasetPair {
  int index = 0;
  bool train = true;
  GrayImage sample;
  BinaryImage label;
  CropTransform transform;
};

/// Label images are stored as 0/255 PNGs; anything >= 128 is foreground.
inline BinaryImage label_from_gray(const GrayImage& g) {
  BinaryImage b(g.width(), g.height());
  for (std::size_t i = 0; i < g.size(); ++i) b.pixels()[i] = g.pixels()[i] >= 128 ? 1 : 0;
  return b;
}

inline void validate(const AugmentationSpec& s) {
  if (s.train_count <= 0 || s.test_count <= 0) throw DomainError("sample counts must be positive");
  if (!(s.crop_min > 0) || s.crop_min > s.crop_max || s.crop_max > 1.0)
    throw DomainError("crop fractions must satisfy 0 < min <= max <= 1");
  if (s.max_rotation_deg < 0 || s.output_size <= 0) throw DomainError("invalid rotation range or output size");
}

namespace detail {

inline double clamp_coord(double v, int n) { return std::clamp(v, 0.0, n - 1.0); }

}  // namespace detail

/// Cuts one pair. The crop square is expressed in continuous master
/// coordinates, pixel i covering [i - 0.5, i + 0.5].
namespace detail {

/// Rounds each label fragment (4-connected run of nonzero coverage) to its
/// coverage mass by switching fractional pixels, highest coverage first.
/// Returns the number of fragments left with no foreground pixel.
inline int balance_fragments(const std::vector<double>& cov, BinaryImage& out) {
  const int n = out.width();
  std::vector<std::uint8_t> seen(cov.size(), 0);
  std::vector<int> stack, frag;
  int vanished = 0;
  for (int s = 0; s < static_cast<int>(cov.size()); ++s) {
    if (seen[static_cast<std::size_t>(s)] || cov[static_cast<std::size_t>(s)] == 0.0) continue;
    frag.clear();
    stack.assign(1, s);
    seen[static_cast<std::size_t>(s)] = 1;
    double mass = 0;
    int on = 0;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      const int u = i % n, v = i / n;
      mass += cov[static_cast<std::size_t>(i)];
      on += out.at(u, v);
      if (cov[static_cast<std::size_t>(i)] < 1.0) frag.push_back(i);
      for (auto [du, dv] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
        const int x = u + du, y = v + dv;
        if (x < 0 || y < 0 || x >= n || y >= n) continue;
        const auto j = static_cast<std::size_t>(y * n + x);
        if (!seen[j] && cov[j] > 0.0) seen[j] = 1, stack.push_back(static_cast<int>(j));
      }
    }
    const int target = static_cast<int>(std::lround(mass));
    std::sort(frag.begin(), frag.end(), [&](int x, int y) {
      const double cx = cov[static_cast<std::size_t>(x)], cy = cov[static_cast<std::size_t>(y)];
      return cx != cy ? cx > cy : x < y;
    });
    for (std::size_t k = 0; k < frag.size() && on < target; ++k) {
      auto& px = out.at(frag[k] % n, frag[k] / n);
      if (!px) px = 1, ++on;
    }
    for (std::size_t k = frag.size(); k-- > 0 && on > target;) {
      auto& px = out.at(frag[k] % n, frag[k] / n);
      if (px) px = 0, --on;
    }
    vanished += on == 0;
  }
  return vanished;
}

}  // namespace detail

inline DatasetPair cut_pair(const GrayImage& master, const BinaryImage& label, const CropTransform& t,
                            int* vanished = nullptr) {
  DatasetPair p;
  p.transform = t;
  const int n = t.output_size;
  p.sample = GrayImage(n, n);
  p.label = BinaryImage(n, n);
  // Label: coverage of each output pixel's footprint by master foreground,
  // binarised with Floyd-Steinberg error diffusion. Keeps label mass (and
  // so centroids) when thin strokes fall between output pixel centres.
  const int sub = std::max(4, static_cast<int>(std::ceil(t.side / n)) + 1);
  const auto A = t.affine();
  std::vector<double> cov(static_cast<std::size_t>(n) * n, 0.0);
  for (int v = 0; v < n; ++v)
    for (int u = 0; u < n; ++u) {
      const Point2 m = t.apply({static_cast<double>(u), static_cast<double>(v)});
      const double x = detail::clamp_coord(m.x, master.width()), y = detail::clamp_coord(m.y, master.height());
      p.sample.at(u, v) = clamp_u8(bilinear(master, x, y));
      int hits = 0;
      for (int j = 0; j < sub; ++j)
        for (int i = 0; i < sub; ++i) {
          const double du = (i + 0.5) / sub - 0.5, dv = (j + 0.5) / sub - 0.5;
          const double sx = detail::clamp_coord(m.x + A[0][0] * du + A[0][1] * dv, master.width());
          const double sy = detail::clamp_coord(m.y + A[1][0] * du + A[1][1] * dv, master.height());
          hits += label.at(static_cast<int>(std::lround(sx)), static_cast<int>(std::lround(sy)));
        }
      cov[static_cast<std::size_t>(v) * n + u] = static_cast<double>(hits) / (sub * sub);
    }
  auto solid = [&](int u, int v) {
    const double c = cov[static_cast<std::size_t>(v) * n + u];
    return c == 0.0 || c == 1.0;
  };
  std::vector<double> acc = cov;
  for (int v = 0; v < n; ++v)
    for (int u = 0; u < n; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * n + u;
      if (solid(u, v)) {
        p.label.at(u, v) = cov[i] == 1.0 ? 1 : 0;
        continue;
      }
      const std::uint8_t q = acc[i] >= 0.5 ? 1 : 0;
      p.label.at(u, v) = q;
      const double err = acc[i] - q;
      auto push = [&](int du, int dv, double w) {
        const int x = u + du, y = v + dv;
        if (x >= 0 && x < n && y < n && !solid(x, y)) acc[static_cast<std::size_t>(y) * n + x] += err * w;
      };
      push(1, 0, 7.0 / 16);
      push(-1, 1, 3.0 / 16);
      push(0, 1, 5.0 / 16);
      push(1, 1, 1.0 / 16);
    }
  const int lost = detail::balance_fragments(cov, p.label);
  if (vanished) *vanished = lost;
  return p;
}

/// Draws spec.train_count + spec.test_count crops from one RNG stream and
/// hands each pair to `sink` in order (train first).
inline void augment_dataset(const GrayImage& master, const BinaryImage& master_label, const AugmentationSpec& spec,
                            const std::function<void(DatasetPair&&)>& sink) {
  validate(spec);
  if (master.width() != master_label.width() || master.height() != master_label.height())
    throw DimensionError("master and label must have the same dimensions");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> frac(spec.crop_min, spec.crop_max);
  std::uniform_real_distribution<double> rot(-spec.max_rotation_deg, spec.max_rotation_deg);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double shorter = std::min(master.width(), master.height());
  const int total = spec.train_count + spec.test_count;
  for (int i = 0; i < total; ++i) {
    CropTransform t;
    t.output_size = spec.output_size;
    // Crops that would drop a sliver of label foreground entirely are
    // redrawn; under half a pixel of mass cannot be carried by a binary label.
    std::optional<DatasetPair> p;
    for (int attempt = 0; attempt < 100; ++attempt) {
      t.side = frac(rng) * shorter;
      t.angle_deg = spec.max_rotation_deg > 0 ? rot(rng) : 0.0;
      const double a = t.angle_deg * std::numbers::pi / 180.0;
      const double e = t.side / 2 * (std::abs(std::cos(a)) + std::abs(std::sin(a)));
      const double x0 = e - 0.5, x1 = master.width() - 0.5 - e;
      const double y0 = e - 0.5, y1 = master.height() - 0.5 - e;
      if (x0 > x1 + 1e-9 || y0 > y1 + 1e-9) continue;
      t.center = {x0 + (std::max(x1, x0) - x0) * unit(rng), y0 + (std::max(y1, y0) - y0) * unit(rng)};
      int vanished = 0;
      p = cut_pair(master, master_label, t, &vanished);
      if (vanished == 0) break;
    }
    if (!p) throw GenerationError("no crop fits inside the master after 100 attempts");
    p->index = i;
    p->train = i < spec.train_count;
    sink(std::move(*p));
  }
}

inline nlohmann::json transform_to_json(const CropTransform& t) {
  const auto a = t.affine();
  return {{"center", {t.center.x, t.center.y}},
          {"side", t.side},
          {"angle_deg", t.angle_deg},
          {"output_size", t.output_size},
          {"affine", {{a[0][0], a[0][1], a[0][2]}, {a[1][0], a[1][1], a[1][2]}}}};
}

/// Writes <dir>/{train,test}/NNNNN.png and NNNNN_label.png plus
/// manifest.json; returns the manifest.
inline nlohmann::json write_dataset(const std::filesystem::path& dir, const GrayImage& master,
                                    const BinaryImage& label, const AugmentationSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  nlohmann::json pairs = nlohmann::json::array();
  augment_dataset(master, label, spec, [&](DatasetPair&& p) {
    const std::string split = p.train ? "train" : "test";
    char name[32];
    std::snprintf(name, sizeof name, "%05d", p.index);
    const std::string sample = split + "/" + name + ".png";
    const std::string lab = split + "/" + name + "_label.png";
    save_png((dir / sample).string(), p.sample);
    save_png((dir / lab).string(), binary_to_gray(p.label));
    pairs.push_back(
        {{"index", p.index}, {"split", split}, {"sample", sample}, {"label", lab}, {"transform", transform_to_json(p.transform)}});
  });
  nlohmann::json manifest{{"dataset_version", 1},
                          {"seed", spec.seed},
                          {"train_count", spec.train_count},
                          {"test_count", spec.test_count},
                          {"output_size", spec.output_size},
                          {"crop_fraction", {spec.crop_min, spec.crop_max}},
                          {"max_rotation_deg", spec.max_rotation_deg},
                          {"master", {{"width", master.width()}, {"height", master.height()}}},
                          {"pairs", pairs}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("cannot write manifest in " + dir.string());
  return manifest;
}

}  // namespace agvlab
