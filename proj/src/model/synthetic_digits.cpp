/* Copyright 2026 The FATQ Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "fatq/synthetic_digits.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "fatq/rng.hpp"

namespace fatq {

namespace {

struct Point {
  double x, y;
};
using Polyline = std::vector<Point>;

Polyline line(Point a, Point b) { return {a, b}; }

// Arc on an ellipse, angles in degrees, y pointing down.
Polyline arc(Point c, double rx, double ry, double from_deg, double to_deg, int segments = 16) {
  Polyline p;
  for (int i = 0; i <= segments; ++i) {
    const double t = (from_deg + (to_deg - from_deg) * i / segments) * std::numbers::pi / 180.0;
    p.push_back({c.x + rx * std::cos(t), c.y + ry * std::sin(t)});
  }
  return p;
}

std::vector<Polyline> glyph(int digit) {
  switch (digit) {
    case 0: return {arc({0.5, 0.5}, 0.28, 0.44, 0, 360, 24)};
    case 1: return {line({0.52, 0.05}, {0.52, 0.95}), line({0.34, 0.22}, {0.52, 0.05})};
    case 2: return {arc({0.5, 0.3}, 0.27, 0.25, 190, 370), line({0.77, 0.35}, {0.2, 0.95}),
                    line({0.2, 0.95}, {0.82, 0.95})};
    case 3: return {arc({0.5, 0.28}, 0.25, 0.23, -160, 90), arc({0.5, 0.73}, 0.28, 0.23, -90, 160)};
    case 4: return {line({0.66, 0.05}, {0.14, 0.66}), line({0.14, 0.66}, {0.86, 0.66}),
                    line({0.66, 0.05}, {0.66, 0.95})};
    case 5: return {line({0.78, 0.05}, {0.3, 0.05}), line({0.3, 0.05}, {0.26, 0.45}),
                    arc({0.5, 0.68}, 0.28, 0.27, -125, 150)};
    case 6: return {line({0.68, 0.05}, {0.26, 0.62}), arc({0.5, 0.71}, 0.25, 0.24, 0, 360, 20)};
    case 7: return {line({0.15, 0.05}, {0.85, 0.05}), line({0.85, 0.05}, {0.38, 0.95})};
    case 8: return {arc({0.5, 0.27}, 0.21, 0.22, 0, 360, 20), arc({0.5, 0.72}, 0.26, 0.23, 0, 360, 20)};
    default: return {arc({0.5, 0.3}, 0.24, 0.25, 0, 360, 20), line({0.74, 0.32}, {0.6, 0.95})};
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset make_synthetic_digits(std::int64_t count, std::uint64_t seed, const SyntheticDigitsOptions& options) {
  if (count < 0) fail(ErrorCode::kInvalidArgument, "negative sample count");
  const int side = options.side;
  Tensor images({count, 1, side, side});
  std::vector<int> labels(static_cast<std::size_t>(count));
  Rng rng(seed);
  std::vector<double> coverage(static_cast<std::size_t>(side * side));
  for (std::int64_t i = 0; i < count; ++i) {
    const int digit = static_cast<int>(rng.below(10));
    labels[static_cast<std::size_t>(i)] = digit;

    const double rot = rng.uniform(-options.max_rotation_deg, options.max_rotation_deg) * std::numbers::pi / 180.0;
    const double scale = rng.uniform(0.62, 0.78) * side;
    const double aspect = rng.uniform(0.8, 1.15);
    const double shear = rng.uniform(-0.25, 0.25);
    const double cx = side / 2.0 + rng.uniform(-2.5, 2.5);
    const double cy = side / 2.0 + rng.uniform(-2.0, 2.0);
    const double half_width = rng.uniform(0.7, 1.5);
    const double contrast = rng.uniform(0.65, 1.0);
    const double cr = std::cos(rot), sr = std::sin(rot);

    std::fill(coverage.begin(), coverage.end(), 0.0);
    auto strokes = glyph(digit);
    if (rng.uniform() < options.stray_stroke_prob) {
      const Point a{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
      const double len = rng.uniform(0.15, 0.45), ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      strokes.push_back(line(a, {a.x + len * std::cos(ang), a.y + len * std::sin(ang)}));
    }
    for (auto stroke : strokes) {
      for (auto& p : stroke) {
        const double jx = p.x + rng.normal() * options.vertex_jitter - 0.5;
        const double jy = p.y + rng.normal() * options.vertex_jitter - 0.5;
        const double sx = (jx + shear * jy) * scale * aspect;
        const double sy = jy * scale;
        p = {cx + cr * sx - sr * sy, cy + sr * sx + cr * sy};
      }
      for (std::size_t s = 0; s + 1 < stroke.size(); ++s) {
        const Point a = stroke[s], b = stroke[s + 1];
        const double pad = half_width + 1.0;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - pad)));
        const int x1 = std::min(side - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + pad)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - pad)));
        const int y1 = std::min(side - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + pad)));
        for (int y = y0; y <= y1; ++y) {
          for (int x = x0; x <= x1; ++x) {
            const double d = segment_distance({x + 0.5, y + 0.5}, a, b);
            const double v = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
            double& c = coverage[static_cast<std::size_t>(y * side + x)];
            c = std::max(c, v);
          }
        }
      }
    }
    if (rng.uniform() < options.erase_prob) {
      const int ex = static_cast<int>(rng.below(static_cast<std::uint64_t>(side))),
                ey = static_cast<int>(rng.below(static_cast<std::uint64_t>(side)));
      const int er = 2 + static_cast<int>(rng.below(3));
      for (int y = std::max(0, ey - er); y <= std::min(side - 1, ey + er); ++y)
        for (int x = std::max(0, ex - er); x <= std::min(side - 1, ex + er); ++x) coverage[static_cast<std::size_t>(y * side + x)] = 0.0;
    }
    double* out = images.data().data() + i * side * side;
    for (int k = 0; k < side * side; ++k) {
      const double noisy = coverage[static_cast<std::size_t>(k)] * contrast + rng.normal() * options.noise_stddev;
      // Quantize to bytes so in-memory data matches what the IDX files hold.
      out[k] = std::round(std::clamp(noisy, 0.0, 1.0) * 255.0) / 255.0;
    }
  }
  return {std::move(images), std::move(labels)};
}

}  // namespace fatq
