#include <algorithm>
#include <cmath>
#include <numbers>

#include "forge/error.hpp"
#include "forge/render.hpp"
#include "forge/rng.hpp"

namespace forge::render {
namespace {

using Color = std::array<double, 3>;

struct Canvas {
  Image& img;

  void blend(int x, int y, const Color& c, double alpha) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    for (int k = 0; k < 3; ++k) {
      const double v = (1 - alpha) * img.at(x, y, k) + alpha * c[static_cast<std::size_t>(k)];
      img.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }

  // Even-odd scanline fill sampled at pixel centres.
  void polygon(const std::vector<Point>& poly, const Color& c, double alpha = 1.0) {
    double ylo = 1e300, yhi = -1e300;
    for (const auto& p : poly) {
      ylo = std::min(ylo, p.y());
      yhi = std::max(yhi, p.y());
    }
    const int y0 = std::max(0, static_cast<int>(std::ceil(ylo)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::floor(yhi)));
    std::vector<double> xs;
    for (int y = y0; y <= y1; ++y) {
      xs.clear();
      for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point& a = poly[i];
        const Point& b = poly[(i + 1) % poly.size()];
        if ((a.y() <= y && b.y() > y) || (b.y() <= y && a.y() > y))
          xs.push_back(a.x() + (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y()));
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2)
        for (int x = std::max(0, static_cast<int>(std::ceil(xs[k])));
             x <= std::min(img.width - 1, static_cast<int>(std::floor(xs[k + 1]))); ++x)
          blend(x, y, c, alpha);
    }
  }

  void ellipse(const Point& centre, double rx, double ry, const Color& c, double alpha = 1.0) {
    std::vector<Point> poly;
    for (int k = 0; k < 64; ++k) {
      const double a = 2 * std::numbers::pi * k / 64;
      poly.emplace_back(centre.x() + rx * std::cos(a), centre.y() + ry * std::sin(a));
    }
    polygon(poly, c, alpha);
  }

  void stroke(const std::vector<Point>& line, double width, const Color& c) {
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      const Point d = line[i + 1] - line[i];
      const double len = d.norm();
      if (len <= 0) continue;
      const Point n = Point(-d.y(), d.x()) / len * (0.5 * width);
      polygon({line[i] + n, line[i + 1] + n, line[i + 1] - n, line[i] - n}, c);
    }
    for (const auto& p : line) ellipse(p, 0.5 * width, 0.5 * width, c);
  }
};

Color jitter(Rng& rng, const Color& base, double amount) {
  Color c;
  for (std::size_t k = 0; k < 3; ++k) c[k] = std::clamp(base[k] + rng.uniform(-amount, amount), 0.0, 255.0);
  return c;
}

Color mix(const Color& a, const Color& b, double t) {
  return {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])};
}

std::vector<Point> points(const Landmarks2D& lm, std::initializer_list<int> idx) {
  std::vector<Point> out;
  for (int i : idx) out.emplace_back(lm(i, 0), lm(i, 1));
  return out;
}

}  // namespace

SeedFace generate_test_face(const FaceParams& params, std::uint64_t seed) {
  if (params.width < 128 || params.height < 128) throw ValidationError("face images must be at least 128x128");
  Rng rng(mix64(seed) ^ 0x66616365ULL);

  // Shape: scaled template parts plus small per-point jitter. Paired points
  // (inner-lip columns, eyelid columns) move together.
  anim::LandmarkTemplate shape = anim::LandmarkTemplate::canonical();
  auto& p = shape.points;
  const double face_w = rng.uniform(0.92, 1.06), face_h = rng.uniform(0.92, 1.08);
  const double eye_scale = rng.uniform(0.85, 1.2), mouth_scale = rng.uniform(0.85, 1.15);
  const double eye_sep = rng.uniform(-0.02, 0.02), mouth_drop = rng.uniform(-0.02, 0.02);
  for (int i = anim::kEyes.begin; i < anim::kEyes.end; ++i) {
    const double cx = i < 42 ? -0.2 : 0.2;
    p(i, 0) = cx + (cx < 0 ? -eye_sep : eye_sep) + eye_scale * (p(i, 0) - cx);
    p(i, 1) = -0.2 + eye_scale * (p(i, 1) + 0.2);
  }
  for (int i = anim::kOuterLips.begin; i < anim::kInnerLips.end; ++i) {
    p(i, 0) *= mouth_scale;
    p(i, 1) += mouth_drop;
  }
  for (int i = 0; i < anim::kNumLandmarks; ++i) {
    p(i, 0) *= face_w;
    p(i, 1) *= face_h;
  }
  for (int i = anim::kJaw.begin; i < anim::kNose.end; ++i) {
    p(i, 0) += rng.uniform(-0.01, 0.01);
    p(i, 1) += rng.uniform(-0.01, 0.01);
  }
  Camera cam = params.camera;
  cam.scale *= static_cast<double>(std::min(params.width, params.height)) / 256.0;
  cam.cx = params.camera.cx * params.width / 256.0 + rng.uniform(-5, 5);
  cam.cy = params.camera.cy * params.height / 256.0 + rng.uniform(-5, 5);
  const Landmarks2D lm = project(shape.points, cam);
  const double s = cam.scale;

  // Palette.
  const Color skin = jitter(rng, {rng.uniform(150, 235), rng.uniform(110, 190), rng.uniform(90, 160)}, 10);
  const Color hair = jitter(rng, {rng.uniform(20, 140), rng.uniform(15, 90), rng.uniform(10, 60)}, 10);
  const Color bg_top = jitter(rng, {rng.uniform(60, 200), rng.uniform(60, 200), rng.uniform(60, 220)}, 0);
  const Color bg_bottom = jitter(rng, bg_top, 50);
  const Color iris = jitter(rng, {rng.uniform(40, 120), rng.uniform(40, 110), rng.uniform(30, 140)}, 10);
  const Color lips = mix(skin, {190, 70, 80}, rng.uniform(0.35, 0.6));
  const Color shade = mix(skin, {60, 30, 20}, 0.25);
  const Color brow = mix(hair, {0, 0, 0}, 0.2);

  Image img(params.width, params.height);
  Canvas cv{img};
  for (int y = 0; y < img.height; ++y) {
    const Color row = mix(bg_top, bg_bottom, static_cast<double>(y) / (img.height - 1));
    for (int x = 0; x < img.width; ++x) cv.blend(x, y, row, 1.0);
  }

  const Point centre(cam.cx, cam.cy);
  // Neck and shoulders, hair behind the head.
  cv.polygon({Point(lm(5, 0), lm(5, 1)), Point(lm(11, 0), lm(11, 1)), Point(lm(11, 0) + 0.05 * s, img.height + 1.0),
              Point(lm(5, 0) - 0.05 * s, img.height + 1.0)},
             mix(skin, {0, 0, 0}, 0.12));
  cv.ellipse(centre + Point(0, -0.18 * s), 0.6 * s * face_w, 0.58 * s * face_h, hair);

  // Face: jaw contour closed by a forehead arc.
  std::vector<Point> face;
  for (int i = 0; i <= 16; ++i) face.emplace_back(lm(i, 0), lm(i, 1));
  const Point j0(lm(0, 0), lm(0, 1)), j16(lm(16, 0), lm(16, 1));
  const double top = centre.y() - 0.52 * s * face_h;
  for (int k = 1; k < 24; ++k) {
    const double a = std::numbers::pi * k / 24;
    const double x = j16.x() + (j0.x() - j16.x()) * (1 - std::cos(a)) / 2;
    const double y = j16.y() + (top - j16.y()) * std::sin(a);
    face.emplace_back(x, y);
  }
  cv.polygon(face, skin);
  // Fringe.
  cv.ellipse(Point(centre.x() + rng.uniform(-0.1, 0.1) * s, top + 0.06 * s), 0.42 * s * face_w, 0.12 * s, hair);

  // Cheeks.
  for (double side : {-1.0, 1.0})
    cv.ellipse(centre + Point(side * 0.28 * s * face_w, 0.12 * s), 0.08 * s, 0.05 * s, {220, 120, 120}, 0.18);

  // Brows.
  cv.stroke(points(lm, {17, 18, 19, 20, 21}), 0.03 * s, brow);
  cv.stroke(points(lm, {22, 23, 24, 25, 26}), 0.03 * s, brow);

  // Eyes: white, iris clipped roughly by drawing inside the opening, pupil.
  for (int base : {36, 42}) {
    const auto eye = points(lm, {base, base + 1, base + 2, base + 3, base + 4, base + 5});
    cv.polygon(eye, {245, 245, 240});
    Point c = Point::Zero();
    for (const auto& q : eye) c += q;
    c /= 6.0;
    const double r = 0.4 * (eye[3] - eye[0]).norm() / 2.0 * 1.6;
    const double ry = std::min(r, 0.5 * (eye[5] - eye[1]).norm() + 0.5);
    cv.ellipse(c, r * 0.75, ry, iris);
    cv.ellipse(c, r * 0.35, std::min(r * 0.35, ry), {15, 15, 20});
    cv.stroke({eye[0], eye[1], eye[2], eye[3]}, 0.012 * s, mix(hair, {0, 0, 0}, 0.5));
  }

  // Nose.
  cv.stroke(points(lm, {27, 28, 29, 30}), 0.012 * s, shade);
  cv.stroke(points(lm, {31, 32, 33, 34, 35}), 0.014 * s, shade);
  cv.ellipse(Point(lm(32, 0), lm(32, 1)), 0.012 * s, 0.008 * s, mix(shade, {0, 0, 0}, 0.4));
  cv.ellipse(Point(lm(34, 0), lm(34, 1)), 0.012 * s, 0.008 * s, mix(shade, {0, 0, 0}, 0.4));

  // Lips and mouth line.
  cv.polygon(points(lm, {48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59}), lips);
  cv.polygon(points(lm, {60, 61, 62, 63, 64, 65, 66, 67}), {70, 25, 30});
  cv.stroke(points(lm, {60, 61, 62, 63, 64}), 0.006 * s, mix(lips, {0, 0, 0}, 0.5));

  // Fine skin and background texture so that warps move visible structure.
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double n = rng.uniform(-6.0, 6.0);
      for (int k = 0; k < 3; ++k)
        img.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(std::lround(img.at(x, y, k) + n), 0L, 255L));
    }

  SeedFace out{std::move(img), lm, "face-" + std::to_string(seed)};
  out.validate();
  return out;
}

}  // namespace forge::render
