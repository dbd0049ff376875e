#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "forge/anim.hpp"
#include "forge/error.hpp"
#include "forge/render.hpp"
#include "oracles.hpp"

using namespace forge;
using namespace forge::render;

namespace {

// Andrew's monotone chain hull area.
double hull_area(std::vector<Point> p) {
  std::sort(p.begin(), p.end(), [](const Point& a, const Point& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
  auto cross = [](const Point& o, const Point& a, const Point& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Point> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  double a = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& u = h[i];
    const auto& v = h[(i + 1) % h.size()];
    a += u.x() * v.y() - v.x() * u.y();
  }
  return std::abs(a) / 2;
}

bool strictly_in_circumcircle(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double ax = a.x() - d.x(), ay = a.y() - d.y();
  const double bx = b.x() - d.x(), by = b.y() - d.y();
  const double cx = c.x() - d.x(), cy = c.y() - d.y();
  double det = (ax * ax + ay * ay) * (bx * cy - cx * by) - (bx * bx + by * by) * (ax * cy - cx * ay) +
               (cx * cx + cy * cy) * (ax * by - bx * ay);
  const double orient = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
  if (orient < 0) det = -det;
  return det > 1e-7;
}

void check_delaunay(const std::vector<Point>& pts, const std::vector<Tri>& tris) {
  double sum = 0;
  for (const auto& t : tris) {
    const double a = signed_area(pts[t[0]], pts[t[1]], pts[t[2]]);
    CHECK(a > 1e-9);  // counter-clockwise, non-degenerate
    sum += a;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (static_cast<int>(i) == t[0] || static_cast<int>(i) == t[1] || static_cast<int>(i) == t[2]) continue;
      CHECK_FALSE(strictly_in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[i]));
    }
  }
  CHECK(std::abs(sum - hull_area(pts)) <= 0.5);
}

// Zero-mean normalized correlation of b shifted by dx against a, inside a box.
double shifted_correlation(const std::vector<double>& a, const std::vector<double>& b, int w, int dx, int x0,
                           int x1, int y0, int y1) {
  std::vector<double> u, v;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      u.push_back(a[static_cast<std::size_t>(y * w + x)]);
      v.push_back(b[static_cast<std::size_t>(y * w + x + dx)]);
    }
  return oracle::pearson(u, v);
}

}  // namespace

TEST_CASE("procedural seed faces") {
  const auto f = generate_test_face({}, 3);
  CHECK(f.image.width == 256);
  CHECK(f.image.height == 256);
  CHECK_NOTHROW(f.validate());
  const auto g = generate_test_face({}, 3);
  CHECK(f.image == g.image);
  CHECK(f.landmarks == g.landmarks);
  for (int i = 0; i < anim::kNumLandmarks; ++i) {
    CHECK(f.landmarks(i, 0) > 0);
    CHECK(f.landmarks(i, 0) < 255);
    CHECK(f.landmarks(i, 1) > 0);
    CHECK(f.landmarks(i, 1) < 255);
  }
  std::vector<Image> imgs;
  for (std::uint64_t s = 1; s <= 20; ++s) imgs.push_back(generate_test_face({}, s).image);
  for (std::size_t i = 0; i < imgs.size(); ++i)
    for (std::size_t j = i + 1; j < imgs.size(); ++j) CHECK(imgs[i] != imgs[j]);

  FaceParams small;
  small.width = 100;
  CHECK_THROWS_AS(generate_test_face(small, 1), ValidationError);
  FaceParams wide;
  wide.width = 320;
  wide.height = 200;
  CHECK_NOTHROW(generate_test_face(wide, 5).validate());
}

TEST_CASE("delaunay") {
  SUBCASE("unit square gives two triangles") {
    const std::vector<Point> sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    const auto t = delaunay(sq);
    CHECK(t.size() == 2);
    double area = 0;
    for (const auto& tri : t) area += signed_area(sq[tri[0]], sq[tri[1]], sq[tri[2]]);
    CHECK(area == doctest::Approx(1.0));
  }
  SUBCASE("random point sets satisfy the empty-circle property") {
    Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<Point> pts;
      for (int i = 0; i < 60; ++i) pts.emplace_back(rng.uniform(0, 200), rng.uniform(0, 150));
      check_delaunay(pts, delaunay(pts));
    }
  }
  SUBCASE("regular grid with collinear hull edges") {
    std::vector<Point> grid;
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x) grid.emplace_back(x * 10.0, y * 10.0);
    const auto t = delaunay(grid);
    CHECK(t.size() == 2 * 6 * 5);
    check_delaunay(grid, t);
  }
  SUBCASE("face meshes partition the frame") {
    for (std::uint64_t s : {1u, 7u, 12u}) {
      const auto face = generate_test_face({}, s);
      const auto mesh = triangulate(face);
      CHECK(mesh.vertices.size() == 76);
      check_delaunay(mesh.vertices, mesh.triangles);
      double sum = 0;
      for (const auto& t : mesh.triangles) sum += signed_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
      CHECK(std::abs(sum - 255.0 * 255.0) <= 0.5);
    }
  }
  SUBCASE("border anchors") {
    const auto b = border_anchors(256, 200);
    CHECK(b[0] == Point(0, 0));
    CHECK(b[2] == Point(255, 199));
    for (const auto& p : b) {
      CHECK(p.x() >= 0);
      CHECK(p.x() <= 255);
      CHECK(p.y() >= 0);
      CHECK(p.y() <= 199);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(delaunay({{0, 0}, {1, 1}}), ValidationError);
    CHECK_THROWS_AS(delaunay({{0, 0}, {1, 1}, {2, 2}, {3, 3}}), ValidationError);
    CHECK_THROWS_AS(delaunay({{0, 0}, {1, 0}, {0, 1}, {1, 0}}), ValidationError);
  }
}

TEST_CASE("projection and camera") {
  const auto tmpl = anim::LandmarkTemplate::canonical();
  const auto raw = project(tmpl.points, Camera{1.0, 0.0, 0.0});
  for (int i = 0; i < anim::kNumLandmarks; ++i) {
    CHECK(raw(i, 0) == tmpl.points(i, 0));
    CHECK(raw(i, 1) == tmpl.points(i, 1));
  }
  const auto a = project(tmpl.points, Camera{100, 128, 128});
  const auto b = project(tmpl.points, Camera{200, 128, 128});
  for (int i = 0; i < anim::kNumLandmarks; ++i) {
    CHECK(b(i, 0) - 128 == doctest::Approx(2 * (a(i, 0) - 128)));
    CHECK(b(i, 1) - 128 == doctest::Approx(2 * (a(i, 1) - 128)));
  }
  const auto d = project(tmpl.points);
  CHECK(d.minCoeff() > 0);
  CHECK(d.maxCoeff() < 256);

  SUBCASE("fit_camera recovers a known camera") {
    const Camera cam{123.5, 110.25, 140.75};
    const auto fit = fit_camera(project(tmpl.points, cam));
    CHECK(fit.scale == doctest::Approx(cam.scale).epsilon(1e-12));
    CHECK(fit.cx == doctest::Approx(cam.cx).epsilon(1e-12));
    CHECK(fit.cy == doctest::Approx(cam.cy).epsilon(1e-12));
  }
  SUBCASE("back projection reproduces seed landmarks") {
    const auto face = generate_test_face({}, 9);
    const auto cam = fit_camera(face.landmarks);
    const auto t3 = back_project(face.landmarks, cam);
    CHECK((project(t3.points, cam) - face.landmarks).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((t3.points.col(2) - tmpl.points.col(2)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("warping") {
  const auto face = generate_test_face({}, 4);
  const auto mesh = triangulate(face);
  SUBCASE("identity warp is pixel-exact") {
    const auto r = warp_frame(face, mesh, face.landmarks);
    CHECK(max_channel_diff(r.image, face.image) == 0);
    CHECK(r.degenerate_triangles.empty());
  }
  SUBCASE("5 px translation is recovered by cross-correlation") {
    Landmarks2D moved = face.landmarks;
    moved.col(0).array() += 5.0;
    const auto r = warp_frame(face, mesh, moved);
    const auto src = grayscale(face.image), dst = grayscale(r.image);
    const int x0 = static_cast<int>(face.landmarks.col(0).minCoeff()) + 12;
    const int x1 = static_cast<int>(face.landmarks.col(0).maxCoeff()) - 12;
    const int y0 = static_cast<int>(face.landmarks.col(1).minCoeff()) + 12;
    const int y1 = static_cast<int>(face.landmarks.col(1).maxCoeff()) - 12;
    int best = -99;
    double bv = -2;
    for (int dx = -10; dx <= 10; ++dx) {
      // dst(x + dx) should match src(x) at dx == 5.
      const double c = shifted_correlation(src, dst, 256, dx, x0, x1, y0, y1);
      if (c > bv) bv = c, best = dx;
    }
    CHECK(std::abs(best - 5) <= 1);
  }
  SUBCASE("opening the mouth changes the lips and leaves the border alone") {
    const auto cam = fit_camera(face.landmarks);
    const auto base = back_project(face.landmarks, cam);
    // Lips only: a jaw drop would legitimately stretch the triangles reaching the bottom edge.
    const auto open = project(anim::articulate(base, 0.06, 0.0, 0.0), cam);
    const auto r = warp_frame(face, mesh, open);
    const int xa = static_cast<int>(std::floor(open(60, 0))), xb = static_cast<int>(std::ceil(open(64, 0)));
    const int ya = static_cast<int>(std::floor(std::min({open(61, 1), open(62, 1), open(63, 1)})));
    const int yb = static_cast<int>(std::ceil(std::max({open(65, 1), open(66, 1), open(67, 1)})));
    int changed = 0;
    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x)
        for (int c = 0; c < 3; ++c) changed += r.image.at(x, y, c) != face.image.at(x, y, c);
    CHECK(changed > 0);
    for (int y : {0, 1, 2, 3, 252, 253, 254, 255})
      for (int x = 0; x < 256; ++x)
        for (int c = 0; c < 3; ++c) CHECK(r.image.at(x, y, c) == face.image.at(x, y, c));
  }
  SUBCASE("flipped targets are filled from the fallback and reported") {
    Landmarks2D bad = face.landmarks;
    bad(62, 1) = face.landmarks(57, 1) + 15;  // upper inner lip far below the chin line
    const Image fallback(256, 256, {7, 200, 9});
    const auto r = warp_frame(face, mesh, bad, &fallback);
    REQUIRE_FALSE(r.degenerate_triangles.empty());
    int filled = 0;
    for (int y = 0; y < 256; ++y)
      for (int x = 0; x < 256; ++x)
        filled += r.image.at(x, y, 0) == 7 && r.image.at(x, y, 1) == 200 && r.image.at(x, y, 2) == 9;
    CHECK(filled > 0);
  }
  SUBCASE("wrong target size or non-finite targets") {
    Landmarks2D nan = face.landmarks;
    nan(5, 0) = std::nan("");
    CHECK_THROWS_AS(warp_frame(face, mesh, nan), ValidationError);
  }
}

TEST_CASE("render_clip") {
  const auto face = generate_test_face({}, 2);
  const auto cam = fit_camera(face.landmarks);
  const auto base = back_project(face.landmarks, cam);
  anim::LandmarkSequence still;
  still.duration_s = 3.5;
  still.frames.assign(88, base.points);
  const auto pts = project(still, cam);
  audio::AudioClip a = oracle::sine(200, 3.5);

  const auto clip = render_clip(face, pts, 25, a);
  CHECK(clip.frames.size() == 88);
  CHECK(clip.flagged_frames() == 0);
  CHECK(clip.audio.samples == a.samples);
  for (const auto& f : clip.frames) CHECK(max_channel_diff(f, face.image) == 0);

  CHECK_THROWS_AS(render_clip(face, pts, 25, oracle::sine(200, 2.0)), ValidationError);
  CHECK_NOTHROW(render_clip(face, pts, 25, oracle::sine(200, 3.5 - 0.5 / 25)));

  SUBCASE("frames on disk are deterministic and readable") {
    oracle::TempDir dir;
    std::vector<Landmarks2D> few(pts.begin(), pts.begin() + 3);
    const auto c = render_clip(face, few, 25, oracle::sine(200, 3.0 / 25));
    write_frames(c, dir / "a");
    write_frames(c, dir / "b");
    CHECK(std::filesystem::exists(dir / "a/frames/00001.png"));
    CHECK(std::filesystem::exists(dir / "a/frames/00003.png"));
    CHECK_FALSE(std::filesystem::exists(dir / "a/frames/00004.png"));
    CHECK(oracle::slurp(dir / "a/frames/00002.png") == oracle::slurp(dir / "b/frames/00002.png"));
    CHECK(read_png(dir / "a/frames/00002.png") == c.frames[1]);
  }
}

TEST_CASE("image files") {
  oracle::TempDir dir;
  const auto face = generate_test_face({}, 8);
  write_png(face.image, dir / "f.png");
  CHECK(read_png(dir / "f.png") == face.image);
  write_landmarks2d(face.landmarks, dir / "l.txt");
  CHECK((read_landmarks2d(dir / "l.txt") - face.landmarks).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), FormatError);

  const auto g = grayscale(face.image);
  CHECK(g.size() == 256u * 256u);
  for (double v : g) {
    CHECK(v >= 0);
    CHECK(v <= 255);
  }
}
