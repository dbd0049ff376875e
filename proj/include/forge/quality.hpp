#pragma once

// Clip quality checks against the pipeline's own ground truth, plus the
// agree/disagree opinion survey.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forge/anim.hpp"
#include "forge/audio.hpp"
#include "forge/error.hpp"
#include "forge/render.hpp"

namespace forge::quality {

// Raised when a correlation is requested on a constant series.
class UndefinedCorrelationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

// Landmark bounding box grown by margin_frac of its size on each side. With
// positive frame dimensions the box is clipped to [0, W-1] x [0, H-1].
Box face_box(const render::Landmarks2D& pts, double margin_frac = 0.1, int width = 0, int height = 0);

struct SanityViolation {
  std::size_t frame;
  std::string check;  // "finite", "bounds", "eyes_above_mouth", "interocular"
  std::string detail;
};

struct SanityResult {
  std::size_t frames = 0;
  std::vector<SanityViolation> violations;

  bool pass() const { return violations.empty(); }
  std::vector<std::size_t> flagged_frames() const;
};

// Per frame: finite points inside the frame, eye centroid above the mouth
// centroid (image y grows downward), positive inter-ocular distance.
SanityResult landmark_sanity(const std::vector<render::Landmarks2D>& frames, int width, int height);

// 16x16 grayscale cell means over the face box followed by an 8-bin
// magnitude-weighted gradient orientation histogram. Each part is shifted to
// zero mean and scaled to unit RMS; the concatenation is L2 normalized.
std::vector<double> identity_descriptor(const render::Image& image, const render::Landmarks2D& landmarks);

struct IdentityResult {
  std::vector<double> per_frame;
  double min = 0.0;
  double mean = 0.0;
};

// Cosine similarity of each frame's descriptor to the seed's. The face box
// of frame i comes from landmarks[i] when given, else the seed landmarks.
IdentityResult identity_similarity(const std::vector<render::Image>& frames, const render::SeedFace& seed,
                                   const std::vector<render::Landmarks2D>* landmarks = nullptr);

// Pearson r between mouth opening and the lip-sync envelope at the sequence
// frame rate. Throws UndefinedCorrelationError for a constant series.
double lip_sync_score(const anim::LandmarkSequence& seq, const audio::AudioClip& clip, int fps);

using ChannelHistogram = std::array<std::uint32_t, 256>;
using FrameHistogram = std::array<ChannelHistogram, 3>;

struct HistogramResult {
  std::vector<FrameHistogram> histograms;
  std::vector<std::uint64_t> l1;  // consecutive frames, summed over channels

  // Fraction of transitions with a nonzero distance (0 for fewer than 2 frames).
  double nonzero_fraction() const;
};

// Throws ValidationError when frame sizes differ.
HistogramResult frame_histograms(const std::vector<render::Image>& frames);

struct Thresholds {
  double identity_min = 0.80;
  double lip_sync_min = 0.80;
  double histogram_nonzero_min = 0.90;
};
void to_json(nlohmann::json& j, const Thresholds& t);
void from_json(const nlohmann::json& j, Thresholds& t);

struct MetricEntry {
  std::string name;
  double value = 0.0;
  std::optional<double> threshold;  // lower bound; none for informational entries
  bool pass = true;
};

struct QualityReport {
  std::vector<MetricEntry> metrics;
  std::vector<std::size_t> flagged_frames;
  Thresholds thresholds;
  std::vector<std::string> errors;  // metrics that could not be computed

  bool pass() const;
  const MetricEntry* find(const std::string& name) const;
  nlohmann::json to_json() const;
  static QualityReport from_json(const nlohmann::json& j);
};

struct ClipInputs {
  const render::SeedFace* seed = nullptr;
  const std::vector<render::Image>* frames = nullptr;
  const std::vector<render::Landmarks2D>* landmarks2d = nullptr;
  const anim::LandmarkSequence* landmarks = nullptr;
  const audio::AudioClip* audio = nullptr;
  // Frames the renderer flagged (degenerate triangles).
  std::vector<std::size_t> render_flags;
};

// All metrics for one clip. A metric that throws becomes a failing entry.
QualityReport evaluate(const ClipInputs& in, const Thresholds& thresholds = {});

// ---------------------------------------------------------------------------
// Survey

inline constexpr std::array<const char*, 3> kMosQuestions{
    "Do you agree that the visual quality of the rendered synthetic child video is good?",
    "Do you agree that the audio in the video, including speaker similarity, prosody, and audio quality is good?",
    "Do you agree the overall video is of natural quality and sharp?",
};
// Positive ratio stated with the published survey (14 of 18 answers).
inline constexpr double kPublishedPositiveRatio = 0.75;

struct MosResponse {
  std::string timestamp;  // ISO 8601 UTC
  std::string participant;
  std::vector<std::string> clips;
  std::array<bool, 3> agree{};

  void validate() const;
};

// "agree"/"disagree" (also yes/no, y/n, 1/0); throws ValidationError otherwise.
bool parse_answer(const std::string& s);

// Validates and appends one row to the survey CSV (header written when the
// file is new). Writers are serialized by an exclusive file lock.
MosResponse collect_mos(const std::filesystem::path& survey, const std::vector<std::string>& clips,
                        const std::string& participant, const std::vector<std::string>& answers);
void append_mos(const std::filesystem::path& survey, const MosResponse& response);
std::vector<MosResponse> read_mos(const std::filesystem::path& survey);

struct MosSummary {
  std::size_t participants = 0;
  std::array<std::size_t, 3> agrees{};
  std::array<double, 3> ratios{};
  double overall = 0.0;
};

// Throws ValidationError for an empty list.
MosSummary aggregate_mos(const std::vector<MosResponse>& responses);
// Human-readable summary including the published-figure comparison line.
std::string format_mos(const MosSummary& summary);

}  // namespace forge::quality
