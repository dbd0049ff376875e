#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "forge/error.hpp"
#include "forge/render.hpp"

namespace forge::render {

double signed_area(const Point& a, const Point& b, const Point& c) {
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

namespace {

using Real = long double;

// > 0 when d lies strictly inside the circumcircle of the counter-clockwise
// triangle abc.
Real in_circle(const Point& a, const Point& b, const Point& c, const Point& d) {
  const Real adx = a.x() - d.x(), ady = a.y() - d.y();
  const Real bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const Real cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const Real ad = adx * adx + ady * ady, bd = bdx * bdx + bdy * bdy, cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

Real cross(const Point& u, const Point& v) { return static_cast<Real>(u.x()) * v.y() - static_cast<Real>(u.y()) * v.x(); }

// Points plus three super vertices placed symbolically at infinity in fixed
// directions around `mid`. Predicates take the limit, so the super triangle
// never clips hull triangles however thin they are.
class Triangulator {
 public:
  Triangulator(const std::vector<Point>& pts, Point mid) : p_(pts), n_(static_cast<int>(pts.size())), mid_(mid) {}

  int super(int k) const { return n_ + k; }
  bool infinite(int v) const { return v >= n_; }

  // Sign of the orientation of (a, b, c).
  Real orient(int a, int b, int c) const {
    // Rotate cyclically (orientation-preserving) so finite vertices come first.
    for (int r = 0; r < 2 && !finite_first(a, b, c); ++r) {
      const int t = a;
      a = b;
      b = c;
      c = t;
    }
    if (infinite(a)) return cross(dir(b) - dir(a), dir(c) - dir(a));
    if (infinite(b)) return cross(dir(b), dir(c));
    if (infinite(c)) {
      const Real o = cross(pt(b) - pt(a), dir(c));
      return o != 0 ? o : cross(pt(b) - pt(a), mid_ - pt(a));
    }
    return cross(pt(b) - pt(a), pt(c) - pt(a));
  }

  // True when p (finite) lies inside the circumcircle of the counter-clockwise
  // triangle t.
  bool conflicts(const Tri& t, int p) const {
    int a = t[0], b = t[1], c = t[2];
    const int inf = infinite(a) + infinite(b) + infinite(c);
    if (inf == 0) return in_circle(pt(a), pt(b), pt(c), pt(p)) > 0;
    if (inf == 3) return true;
    // Rotate so the infinite vertices come last.
    while (infinite(a) || (inf == 1 && infinite(b))) {
      const int tmp = a;
      a = b;
      b = c;
      c = tmp;
    }
    if (inf == 1) {
      // Circle through a, b and a far point left of a->b: the open half-plane
      // left of the edge plus the open segment itself.
      const Real o = cross(pt(b) - pt(a), pt(p) - pt(a));
      if (o != 0) return o > 0;
      const Point ab = pt(b) - pt(a);
      const double along = (pt(p) - pt(a)).dot(ab);
      return along > 0 && along < ab.squaredNorm();
    }
    // Two infinite vertices: near a the circle is the half-plane through a
    // facing the circumcentre of (0, d_b, d_c).
    const Point u = dir(b), v = dir(c);
    const double d = 2 * (u.x() * v.y() - u.y() * v.x());
    const Point centre((v.y() * u.squaredNorm() - u.y() * v.squaredNorm()) / d,
                       (u.x() * v.squaredNorm() - v.x() * u.squaredNorm()) / d);
    return (pt(p) - pt(a)).dot(centre) > 0;
  }

  Tri ccw(Tri t) const {
    if (orient(t[0], t[1], t[2]) < 0) std::swap(t[1], t[2]);
    return t;
  }

 private:
  const Point& pt(int v) const { return p_[static_cast<std::size_t>(v)]; }
  bool finite_first(int a, int b, int c) const {
    return !(infinite(a) && !infinite(b)) && !(infinite(b) && !infinite(c)) && !(infinite(a) && !infinite(c));
  }
  Point dir(int v) const {
    static const Point dirs[3] = {Point(-1, -1), Point(1, -1), Point(0, 1)};
    return dirs[v - n_];
  }

  const std::vector<Point>& p_;
  int n_;
  Point mid_;
};

}  // namespace

std::vector<Tri> delaunay(const std::vector<Point>& input) {
  const std::size_t n = input.size();
  if (n < 3) throw ValidationError("triangulation needs at least 3 points");
  Point lo = input.front(), hi = input.front();
  for (const auto& p : input) {
    if (!p.allFinite()) throw ValidationError("triangulation point is not finite");
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-12);
  {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::make_pair(input[a].x(), input[a].y()) < std::make_pair(input[b].x(), input[b].y());
    });
    for (std::size_t k = 1; k < n; ++k)
      if ((input[order[k]] - input[order[k - 1]]).norm() <= 1e-9 * extent)
        throw ValidationError("triangulation has duplicate points " + std::to_string(order[k - 1]) + " and " +
                              std::to_string(order[k]));
    bool collinear = true;
    for (std::size_t k = 2; k < n && collinear; ++k)
      if (std::abs(signed_area(input[0], input[1], input[k])) > 1e-9 * extent * extent) collinear = false;
    if (collinear) throw ValidationError("triangulation points are all collinear");
  }

  const Triangulator g(input, 0.5 * (lo + hi));
  std::vector<Tri> tris{g.ccw({g.super(0), g.super(1), g.super(2)})};
  for (int i = 0; i < static_cast<int>(n); ++i) {
    std::vector<Tri> keep, bad;
    for (const Tri& t : tris) (g.conflicts(t, i) ? bad : keep).push_back(t);
    // Cavity boundary: edges of exactly one bad triangle.
    std::map<std::pair<int, int>, int> edges;
    for (const Tri& t : bad)
      for (int e = 0; e < 3; ++e) {
        int a = t[static_cast<std::size_t>(e)], b = t[static_cast<std::size_t>((e + 1) % 3)];
        ++edges[{std::min(a, b), std::max(a, b)}];
      }
    for (const Tri& t : bad)
      for (int e = 0; e < 3; ++e) {
        const int a = t[static_cast<std::size_t>(e)], b = t[static_cast<std::size_t>((e + 1) % 3)];
        if (edges[{std::min(a, b), std::max(a, b)}] == 1) keep.push_back(g.ccw({a, b, i}));
      }
    tris = std::move(keep);
  }
  std::vector<Tri> out;
  for (const Tri& t : tris) {
    if (g.infinite(t[0]) || g.infinite(t[1]) || g.infinite(t[2])) continue;
    if (signed_area(input[static_cast<std::size_t>(t[0])], input[static_cast<std::size_t>(t[1])],
                    input[static_cast<std::size_t>(t[2])]) <= 1e-12 * extent * extent)
      continue;
    out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::array<Point, 8> border_anchors(int width, int height) {
  const double w = width - 1, h = height - 1;
  return {Point(0, 0),     Point(w, 0),     Point(w, h),     Point(0, h),
          Point(w / 2, 0), Point(w, h / 2), Point(w / 2, h), Point(0, h / 2)};
}

std::vector<Point> mesh_vertices(const Landmarks2D& landmarks, int width, int height) {
  std::vector<Point> v;
  v.reserve(anim::kNumLandmarks + 8);
  for (int i = 0; i < anim::kNumLandmarks; ++i) v.emplace_back(landmarks(i, 0), landmarks(i, 1));
  for (const auto& a : border_anchors(width, height)) v.push_back(a);
  return v;
}

TriangleMesh triangulate(const SeedFace& face) {
  face.validate();
  TriangleMesh mesh;
  mesh.vertices = mesh_vertices(face.landmarks, face.image.width, face.image.height);
  mesh.triangles = delaunay(mesh.vertices);
  return mesh;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void sample_bilinear(const Image& img, double x, double y, std::uint8_t* out) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  for (int c = 0; c < 3; ++c) {
    const double top = (1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
    const double bot = (1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
    out[c] = to_byte((1 - fy) * top + fy * bot);
  }
}

}  // namespace

WarpResult warp_frame(const SeedFace& seed, const TriangleMesh& mesh, const Landmarks2D& target,
                      const Image* fallback) {
  if (!target.allFinite()) throw ValidationError("target landmarks are not finite");
  const Image& src = seed.image;
  const int w = src.width, h = src.height;
  if (fallback && (fallback->width != w || fallback->height != h))
    throw ValidationError("fallback frame size differs from the seed image");
  const auto dst = mesh_vertices(target, w, h);
  if (dst.size() != mesh.vertices.size()) throw ValidationError("mesh does not match the landmark layout");

  WarpResult result;
  result.image = src;
  std::vector<int> owner(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), -1);
  std::vector<char> identical(mesh.triangles.size(), 0);

  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Tri& tri = mesh.triangles[t];
    const Point& a = dst[static_cast<std::size_t>(tri[0])];
    const Point& b = dst[static_cast<std::size_t>(tri[1])];
    const Point& c = dst[static_cast<std::size_t>(tri[2])];
    const double area = signed_area(a, b, c);
    if (!(area > 1e-6)) {
      result.degenerate_triangles.push_back(static_cast<int>(t));
      continue;
    }
    bool same = true;
    for (int k = 0; k < 3; ++k)
      same = same && (dst[static_cast<std::size_t>(tri[k])] - mesh.vertices[static_cast<std::size_t>(tri[k])])
                             .cwiseAbs()
                             .maxCoeff() <= 1e-9;
    identical[t] = same;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}))));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}))));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
    const double eps = -1e-9 * area;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Point p(x, y);
        if (signed_area(b, c, p) < eps || signed_area(c, a, p) < eps || signed_area(a, b, p) < eps) continue;
        int& o = owner[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
        if (o < 0) o = static_cast<int>(t);
      }
  }

  // A flipped target triangle takes its whole (unsigned) footprint from the
  // fallback, even where valid neighbours fold over it.
  for (const int t : result.degenerate_triangles) {
    const Tri& tri = mesh.triangles[static_cast<std::size_t>(t)];
    Point a = dst[static_cast<std::size_t>(tri[0])];
    Point b = dst[static_cast<std::size_t>(tri[1])];
    Point c = dst[static_cast<std::size_t>(tri[2])];
    if (signed_area(a, b, c) < 0) std::swap(b, c);
    const double area = signed_area(a, b, c);
    if (!(area > 1e-6)) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}))));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}))));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Point p(x, y);
        if (signed_area(b, c, p) < 0 || signed_area(c, a, p) < 0 || signed_area(a, b, p) < 0) continue;
        owner[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = -1;
      }
  }

  const Image& filler = (fallback && !result.degenerate_triangles.empty()) ? *fallback : src;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int t = owner[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
      std::uint8_t* out = &result.image.at(x, y, 0);
      if (t < 0) {
        for (int c = 0; c < 3; ++c) out[c] = filler.at(x, y, c);
        continue;
      }
      if (identical[static_cast<std::size_t>(t)]) continue;  // already the seed pixel
      const Tri& tri = mesh.triangles[static_cast<std::size_t>(t)];
      const Point& a = dst[static_cast<std::size_t>(tri[0])];
      const Point& b = dst[static_cast<std::size_t>(tri[1])];
      const Point& c = dst[static_cast<std::size_t>(tri[2])];
      const Point p(x, y);
      const double area = signed_area(a, b, c);
      const double wa = signed_area(b, c, p) / area, wb = signed_area(c, a, p) / area;
      const double wc = 1.0 - wa - wb;
      const Point s = wa * mesh.vertices[static_cast<std::size_t>(tri[0])] +
                      wb * mesh.vertices[static_cast<std::size_t>(tri[1])] +
                      wc * mesh.vertices[static_cast<std::size_t>(tri[2])];
      sample_bilinear(src, s.x(), s.y(), out);
    }
  return result;
}

// ---------------------------------------------------------------------------
// Projection and clips

Landmarks2D project(const anim::LandmarkFrame& frame, const Camera& camera) {
  if (!(camera.scale > 0.0)) throw ValidationError("camera scale must be positive");
  Landmarks2D out;
  for (int i = 0; i < anim::kNumLandmarks; ++i) {
    out(i, 0) = camera.scale * frame(i, 0) + camera.cx;
    out(i, 1) = camera.scale * frame(i, 1) + camera.cy;
  }
  return out;
}

std::vector<Landmarks2D> project(const anim::LandmarkSequence& seq, const Camera& camera) {
  std::vector<Landmarks2D> out;
  out.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.push_back(project(f, camera));
  return out;
}

anim::LandmarkTemplate back_project(const Landmarks2D& pts, const Camera& camera,
                                    const anim::LandmarkTemplate& depth) {
  if (!(camera.scale > 0.0)) throw ValidationError("camera scale must be positive");
  anim::LandmarkTemplate t;
  for (int i = 0; i < anim::kNumLandmarks; ++i) {
    t.points(i, 0) = (pts(i, 0) - camera.cx) / camera.scale;
    t.points(i, 1) = (pts(i, 1) - camera.cy) / camera.scale;
    t.points(i, 2) = depth.points(i, 2);
  }
  return t;
}

Camera fit_camera(const Landmarks2D& pts, const anim::LandmarkTemplate& tmpl) {
  if (!pts.allFinite()) throw ValidationError("fit_camera: non-finite landmarks");
  const Eigen::RowVector2d mp = pts.colwise().mean();
  const Eigen::RowVector2d mt = tmpl.points.leftCols<2>().colwise().mean();
  const Eigen::Matrix<double, anim::kNumLandmarks, 2> dp = pts.rowwise() - mp;
  const Eigen::Matrix<double, anim::kNumLandmarks, 2> dt = tmpl.points.leftCols<2>().rowwise() - mt;
  const double s = (dp.array() * dt.array()).sum() / dt.squaredNorm();
  if (!(s > 0.0)) throw ValidationError("fit_camera: landmarks do not match the template orientation");
  return {s, mp(0) - s * mt(0), mp(1) - s * mt(1)};
}

std::size_t ClipFrames::flagged_frames() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const FrameRecord& r) { return !r.degenerate_triangles.empty(); }));
}

ClipFrames render_clip(const SeedFace& seed, const std::vector<Landmarks2D>& landmarks, int fps,
                       const audio::AudioClip& audio) {
  if (fps <= 0) throw ValidationError("fps must be positive");
  audio::validate(audio);
  const double video_s = static_cast<double>(landmarks.size()) / fps;
  if (std::abs(video_s - audio.duration_seconds()) > 1.0 / fps + 1e-9)
    throw ValidationError("audio lasts " + std::to_string(audio.duration_seconds()) + " s but the landmarks cover " +
                          std::to_string(video_s) + " s");
  const TriangleMesh mesh = triangulate(seed);
  ClipFrames clip;
  clip.fps = fps;
  clip.audio = audio;
  clip.landmarks = landmarks;
  clip.frames.reserve(landmarks.size());
  for (const auto& target : landmarks) {
    const Image* prev = clip.frames.empty() ? nullptr : &clip.frames.back();
    WarpResult r = warp_frame(seed, mesh, target, prev);
    clip.records.push_back({std::move(r.degenerate_triangles)});
    clip.frames.push_back(std::move(r.image));
  }
  return clip;
}

void write_frames(const ClipFrames& clip, const std::filesystem::path& dir) {
  const auto frames_dir = dir / "frames";
  std::filesystem::create_directories(frames_dir);
  char name[32];
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    std::snprintf(name, sizeof name, "%05zu.png", i + 1);
    write_png(clip.frames[i], frames_dir / name);
  }
}

}  // namespace forge::render
