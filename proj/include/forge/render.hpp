#pragma once

// Seed-face rendering: RGB images, PNG files, a procedural face generator
// with exact landmarks, Delaunay meshing and piecewise-affine warping.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "forge/anim.hpp"
#include "forge/audio.hpp"

namespace forge::render {

// 8-bit RGB, row-major, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0});

  std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image& o) const { return width == o.width && height == o.height && data == o.data; }
  bool operator!=(const Image& o) const { return !(*this == o); }
};

// Largest absolute channel difference; images must have equal size.
int max_channel_diff(const Image& a, const Image& b);
// BT.601 luma in [0, 255], one value per pixel.
std::vector<double> grayscale(const Image& img);

// 8-bit RGB PNG without timestamps, so equal images give equal files.
void write_png(const Image& img, const std::filesystem::path& path);
// Accepts 8-bit gray, gray+alpha, RGB and RGBA (alpha dropped).
Image read_png(const std::filesystem::path& path);

using Landmarks2D = Eigen::Matrix<double, anim::kNumLandmarks, 2>;

struct SeedFace {
  Image image;
  Landmarks2D landmarks;
  std::string id;

  // 68 finite points strictly inside the image.
  void validate() const;
};

// Two-column text `x y`, 68 lines.
void write_landmarks2d(const Landmarks2D& pts, const std::filesystem::path& path);
Landmarks2D read_landmarks2d(const std::filesystem::path& path);

struct Camera {
  double scale = 140.0;  // pixels per head width
  double cx = 128.0;
  double cy = 128.0;
};

// Orthographic: x_px = s x + cx, y_px = s y + cy.
Landmarks2D project(const anim::LandmarkFrame& frame, const Camera& camera = {});
std::vector<Landmarks2D> project(const anim::LandmarkSequence& seq, const Camera& camera = {});

// Inverse of project() for a seed annotation, with depth taken from the
// template. Animating the result and projecting with the same camera
// reproduces the seed landmarks at zero displacement.
anim::LandmarkTemplate back_project(const Landmarks2D& pts, const Camera& camera = {},
                                    const anim::LandmarkTemplate& depth = anim::LandmarkTemplate::canonical());

// Similarity fit (scale and offset, no rotation) of the template's x-y
// layout to annotated pixel landmarks.
Camera fit_camera(const Landmarks2D& pts,
                  const anim::LandmarkTemplate& tmpl = anim::LandmarkTemplate::canonical());

struct FaceParams {
  int width = 256;
  int height = 256;
  Camera camera{};
};

// Procedural face: filled regions for skin, hair, eyes, brows, nose and lips
// with seeded colours and proportions; landmarks are the exact geometry used
// for drawing. Throws ValidationError below 128x128.
SeedFace generate_test_face(const FaceParams& params, std::uint64_t seed);

using Point = Eigen::Vector2d;
using Tri = std::array<int, 3>;

// Bowyer-Watson. Triangles are counter-clockwise in (x, y) coordinates.
// Throws ValidationError for fewer than 3 points, duplicates or an all
// collinear set.
std::vector<Tri> delaunay(const std::vector<Point>& points);

double signed_area(const Point& a, const Point& b, const Point& c);

struct TriangleMesh {
  std::vector<Point> vertices;  // 68 landmarks then 8 border anchors
  std::vector<Tri> triangles;
};

// Corners and edge midpoints of the image, in that order.
std::array<Point, 8> border_anchors(int width, int height);
std::vector<Point> mesh_vertices(const Landmarks2D& landmarks, int width, int height);
TriangleMesh triangulate(const SeedFace& face);

struct WarpResult {
  Image image;
  std::vector<int> degenerate_triangles;  // indices into mesh.triangles
};

// Inverse piecewise-affine warp with clamped bilinear sampling. Triangles
// whose target is degenerate or flipped are filled from `fallback` (or the
// seed image when null) and reported.
WarpResult warp_frame(const SeedFace& seed, const TriangleMesh& mesh, const Landmarks2D& target,
                      const Image* fallback = nullptr);

struct FrameRecord {
  std::vector<int> degenerate_triangles;
};

struct ClipFrames {
  std::vector<Image> frames;
  int fps = anim::kDefaultFps;
  audio::AudioClip audio;
  std::vector<Landmarks2D> landmarks;
  std::vector<FrameRecord> records;

  std::size_t flagged_frames() const;
};

// One warped frame per landmark frame. Audio duration must match the frame
// count within one frame. The fallback for a degenerate triangle is the
// previous frame.
ClipFrames render_clip(const SeedFace& seed, const std::vector<Landmarks2D>& landmarks, int fps,
                       const audio::AudioClip& audio);

// frames/00001.png, ... under dir.
void write_frames(const ClipFrames& clip, const std::filesystem::path& dir);

}  // namespace forge::render
