#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pickplace/common/error.hpp"
#include "pickplace/physics/body.hpp"

namespace pickplace::render {

inline constexpr int kImageSize = 64;

using Rgb = std::array<double, 3>;

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Top-down orthographic camera. Row 0 is the largest y, column 0 the smallest x.
/// The default window puts world (0, 0) at the center of pixel (32, 32) with 1 cm pixels.
struct Camera {
  double x_min = -0.325;
  double x_max = 0.315;
  double y_min = -0.315;
  double y_max = 0.325;
  int width = kImageSize;
  int height = kImageSize;

  [[nodiscard]] double pixel_size_x() const { return (x_max - x_min) / width; }
  [[nodiscard]] double pixel_size_y() const { return (y_max - y_min) / height; }
};

inline void validate(const Camera& cam) {
  if (!(cam.x_max > cam.x_min && cam.y_max > cam.y_min) || cam.width < 1 || cam.height < 1)
    throw ConstructionError("camera window must have positive area");
  if (std::abs(cam.pixel_size_x() - cam.pixel_size_y()) > 1e-12 * cam.pixel_size_x())
    throw ConstructionError("camera window does not preserve aspect");
}

/// Continuous image coordinates: u along columns, v along rows; pixel (i, j) covers [j, j+1) x [i, i+1).
inline physics::Vec2 world_to_image(const Camera& cam, double x, double y) {
  return {(x - cam.x_min) / cam.pixel_size_x(), (cam.y_max - y) / cam.pixel_size_y()};
}

inline physics::Vec2 pixel_center_world(const Camera& cam, const Pixel& p) {
  return {cam.x_min + (p.col + 0.5) * cam.pixel_size_x(), cam.y_max - (p.row + 0.5) * cam.pixel_size_y()};
}

/// Pixel containing a world point; may lie outside the image.
inline Pixel world_to_pixel(const Camera& cam, double x, double y) {
  const auto uv = world_to_image(cam, x, y);
  return {static_cast<int>(std::floor(uv.y())), static_cast<int>(std::floor(uv.x()))};
}

struct Mask {
  int height = kImageSize;
  int width = kImageSize;
  std::vector<std::uint8_t> bits = std::vector<std::uint8_t>(kImageSize * kImageSize, 0);

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h * w), 0) {}

  [[nodiscard]] bool at(int r, int c) const { return bits[static_cast<std::size_t>(r * width + c)] != 0; }
  void set(int r, int c, bool v = true) { bits[static_cast<std::size_t>(r * width + c)] = v ? 1 : 0; }
  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Row-major HWC image with intensities in [0, 1].
struct Image {
  int height = kImageSize;
  int width = kImageSize;
  std::vector<float> data = std::vector<float>(kImageSize * kImageSize * 3, 0.0f);

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h * w * 3), 0.0f) {}

  [[nodiscard]] float at(int r, int c, int ch) const { return data[static_cast<std::size_t>((r * width + c) * 3 + ch)]; }
  float& at(int r, int c, int ch) { return data[static_cast<std::size_t>((r * width + c) * 3 + ch)]; }
  friend bool operator==(const Image&, const Image&) = default;
};

struct VisualStyle {
  Rgb object_color{0.1, 0.3, 0.9};
  Rgb table_color{0.2, 0.6, 0.2};
  double light_gain = 1.0;
};

inline constexpr double kRopeRadiusPx = 1.5;

namespace detail {

inline void stamp_segment(Mask& mask, const physics::Vec2& a, const physics::Vec2& b, double radius) {
  const int c0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - radius)));
  const int c1 = std::min(mask.width - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + radius)));
  const int r0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - radius)));
  const int r1 = std::min(mask.height - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + radius)));
  const physics::Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const physics::Vec2 p(c + 0.5, r + 0.5);
      double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      if ((p - (a + t * ab)).squaredNorm() <= radius * radius) mask.set(r, c);
    }
  }
}

inline double edge(const physics::Vec2& a, const physics::Vec2& b, const physics::Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

/// Inclusive point-in-triangle fill at pixel centers, either winding.
inline void fill_triangle(Mask& mask, const physics::Vec2& a, const physics::Vec2& b, const physics::Vec2& c) {
  const double area = edge(a, b, c);
  if (area == 0.0) return;
  const int c0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}))));
  const int c1 = std::min(mask.width - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
  const int r0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}))));
  const int r1 = std::min(mask.height - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
  const double sign = area > 0.0 ? 1.0 : -1.0;
  constexpr double kSlack = 1e-9;
  for (int r = r0; r <= r1; ++r) {
    for (int col = c0; col <= c1; ++col) {
      const physics::Vec2 p(col + 0.5, r + 0.5);
      if (sign * edge(a, b, p) >= -kSlack && sign * edge(b, c, p) >= -kSlack && sign * edge(c, a, p) >= -kSlack)
        mask.set(r, col);
    }
  }
}

}  // namespace detail

/// Pixels the rasterizer paints with the object color.
inline Mask footprint(const physics::DeformableBody& body, const Camera& cam = {}) {
  Mask mask(cam.height, cam.width);
  std::vector<physics::Vec2> uv(body.size());
  for (std::size_t i = 0; i < body.size(); ++i)
    uv[i] = world_to_image(cam, body.particles[i].position.x(), body.particles[i].position.y());
  const double radius = kRopeRadiusPx;
  if (const auto* chain = std::get_if<physics::Chain>(&body.topology)) {
    if (chain->n == 1) detail::stamp_segment(mask, uv[0], uv[0], radius);
    for (std::size_t i = 0; i + 1 < uv.size(); ++i) detail::stamp_segment(mask, uv[i], uv[i + 1], radius);
    return mask;
  }
  const auto& g = std::get<physics::Grid>(body.topology);
  for (std::size_t r = 0; r + 1 < g.rows; ++r) {
    for (std::size_t c = 0; c + 1 < g.cols; ++c) {
      const auto& p00 = uv[r * g.cols + c];
      const auto& p01 = uv[r * g.cols + c + 1];
      const auto& p10 = uv[(r + 1) * g.cols + c];
      const auto& p11 = uv[(r + 1) * g.cols + c + 1];
      detail::fill_triangle(mask, p00, p01, p11);
      detail::fill_triangle(mask, p00, p11, p10);
    }
  }
  return mask;
}

inline Rgb shade(const Rgb& color, double gain) {
  Rgb out{};
  for (int k = 0; k < 3; ++k) out[k] = std::clamp(color[k] * gain, 0.0, 1.0);
  return out;
}

inline Image paint(const Mask& mask, const VisualStyle& style) {
  Image img(mask.height, mask.width);
  const Rgb obj = shade(style.object_color, style.light_gain);
  const Rgb table = shade(style.table_color, style.light_gain);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      for (int k = 0; k < 3; ++k) img.at(r, c, k) = static_cast<float>(mask.at(r, c) ? obj[k] : table[k]);
  return img;
}

inline Image rasterize(const physics::DeformableBody& body, const Camera& cam, const VisualStyle& style) {
  return paint(footprint(body, cam), style);
}

/// Color-channel threshold segmentation: the channel separating object from table the most,
/// cut halfway between the two shaded colors.
inline Mask segment(const Image& img, const VisualStyle& style) {
  const Rgb obj = shade(style.object_color, style.light_gain);
  const Rgb table = shade(style.table_color, style.light_gain);
  int channel = 0;
  for (int k = 1; k < 3; ++k)
    if (std::abs(obj[k] - table[k]) > std::abs(obj[channel] - table[channel])) channel = k;
  if (std::abs(obj[channel] - table[channel]) < 1e-6)
    throw ConstructionError("object and table colors are indistinguishable");
  const double threshold = 0.5 * (obj[channel] + table[channel]);
  const bool brighter = obj[channel] > table[channel];
  Mask mask(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double v = img.at(r, c, channel);
      mask.set(r, c, brighter ? v > threshold : v < threshold);
    }
  }
  return mask;
}

inline std::vector<Pixel> mask_pixels(const Mask& mask) {
  std::vector<Pixel> out;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) out.push_back({r, c});
  return out;
}

/// Centroid in (col, row) pixel-center coordinates; mask must be nonempty.
inline physics::Vec2 mask_centroid(const Mask& mask) {
  physics::Vec2 sum = physics::Vec2::Zero();
  std::size_t n = 0;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        sum += physics::Vec2(c + 0.5, r + 0.5);
        ++n;
      }
  if (n == 0) throw ShapeError("centroid of empty mask");
  return sum / static_cast<double>(n);
}

/// Linear blue-to-red ramp for values in [0, 1]; used for value heatmaps.
inline Rgb heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {t, 0.0, 1.0 - t};
}

}  // namespace pickplace::render
