#pragma once

// 68-point facial landmarks: canonical template, audio-driven articulation
// (procedural oracle and a small learned animator), blinks and head pose.
//
// Face space: unit head width, x to the viewer's right, y down, z toward the
// camera. Point numbering follows the usual 68-point layout.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "forge/audio.hpp"
#include "forge/nn.hpp"

namespace forge::anim {

inline constexpr int kNumLandmarks = 68;
inline constexpr int kDefaultFps = 25;

using LandmarkFrame = Eigen::Matrix<double, kNumLandmarks, 3>;

struct IndexRange {
  int begin, end;  // half-open
};
inline constexpr IndexRange kJaw{0, 17};
inline constexpr IndexRange kBrows{17, 27};
inline constexpr IndexRange kNose{27, 36};
inline constexpr IndexRange kEyes{36, 48};
inline constexpr IndexRange kOuterLips{48, 60};
inline constexpr IndexRange kInnerLips{60, 68};

inline constexpr std::array<std::pair<int, int>, 6> kEyeMirrorPairs{
    {{36, 45}, {37, 44}, {38, 43}, {39, 42}, {40, 47}, {41, 46}}};
// (top, bottom) pairs.
inline constexpr std::array<std::pair<int, int>, 3> kInnerLipPairs{{{61, 67}, {62, 66}, {63, 65}}};
inline constexpr std::array<std::pair<int, int>, 4> kEyelidPairs{{{37, 41}, {38, 40}, {43, 47}, {44, 46}}};

struct LandmarkTemplate {
  LandmarkFrame points;

  // Fixed constant layout; depth spans 0.25 head widths.
  static LandmarkTemplate canonical();
  void validate() const;
};

struct LandmarkSequence {
  std::vector<LandmarkFrame> frames;
  int fps = kDefaultFps;
  double duration_s = 0.0;

  // Frame-count law and finiteness.
  void validate() const;
};

// ceil(duration * fps), tolerant to representation error in duration.
std::size_t frame_count(double duration_s, int fps);
// Exact integer form: ceil(num_samples * fps / sample_rate).
std::size_t frame_count(std::size_t num_samples, int sample_rate, int fps);

// Mean 3D distance over the inner-lip pairs.
double mouth_opening(const LandmarkFrame& frame);
// Mean 3D distance over the eyelid pairs.
double eyelid_gap(const LandmarkFrame& frame);
std::vector<double> mouth_openings(const LandmarkSequence& seq);

struct ArticulationConfig {
  double k_open = 0.06;       // head widths at peak loudness
  double k_width = 0.02;      // lip-corner spread at unit spectral centroid
  double smoothing_s = 0.05;  // single-pole time constant
  double jaw_gain = 0.5;
};

// Lip-sync reference envelope: RMS over each video frame's sample interval
// (frame i covers [i*sr/fps, (i+1)*sr/fps)), then a single-pole low-pass with
// time constant smoothing_s run at the frame rate from a zero state.
// hop_seconds == 1/fps; size == frame_count(samples, sr, fps).
audio::Envelope lip_sync_envelope(const audio::AudioClip& clip, int fps,
                                  double smoothing_s = ArticulationConfig{}.smoothing_s);

// Block RMS per video frame without smoothing.
audio::Envelope frame_rms(const audio::AudioClip& clip, int fps);

// Normalized spectral centroid in [0, 1] per feature row from log-mel rows;
// 0 for rows at the log floor.
std::vector<double> mel_centroid(const audio::FeatureSequence& features);

// Feature row nearest to the centre of video frame i.
std::size_t feature_row_for_frame(const audio::FeatureSequence& features, std::size_t frame, int fps);

// The envelope must be lip_sync_envelope() output (hop 1/fps); its length
// fixes the frame count. Opening above rest = k_open * env / max(env);
// upper lip rises 0.2 of it and the lower lip drops 0.8, jaw points drop
// jaw_gain * opening weighted by sin(pi i / 16).
LandmarkSequence procedural_articulate(const audio::FeatureSequence& features,
                                       const audio::Envelope& envelope,
                                       const LandmarkTemplate& tmpl, int fps, double duration_s,
                                       const ArticulationConfig& config = {});
LandmarkSequence procedural_articulate(const audio::AudioClip& clip, const LandmarkTemplate& tmpl,
                                       int fps = kDefaultFps, const ArticulationConfig& config = {});

// Articulated pose for one frame given an opening (head widths above rest)
// and a corner spread.
LandmarkFrame articulate(const LandmarkTemplate& tmpl, double opening, double spread,
                         double jaw_gain = ArticulationConfig{}.jaw_gain);

// ---------------------------------------------------------------------------
// Blinks

struct BlinkConfig {
  double min_gap_s = 2.0;
  double max_gap_s = 6.0;
  double duration_s = 0.3;
  double closure = 0.95;  // fraction of the open gap removed at the trough

  void validate() const;
};

struct Blink {
  double onset_s;
  std::size_t center_frame;  // trough, quantized to the frame grid
};

// First onset uniform in [0, max_gap], later inter-onset gaps uniform in
// [min_gap, max_gap]; a blink is kept only if it ends inside the sequence.
std::vector<Blink> plan_blinks(std::size_t frames, int fps, std::uint64_t seed,
                               const BlinkConfig& config = {});

// Raised-cosine closure centred on each blink's trough frame. Only eyelid
// points move. Sequences shorter than a blink pass through unchanged.
LandmarkSequence inject_blinks(const LandmarkSequence& seq, std::uint64_t seed,
                               const BlinkConfig& config = {});

// ---------------------------------------------------------------------------
// Head pose

struct Pose {
  double yaw = 0.0;    // about y (vertical)
  double pitch = 0.0;  // about x
  double roll = 0.0;   // about z
};
struct PoseTrack {
  std::vector<Pose> poses;
  void validate() const;
};

// R = Rz(roll) * Ry(yaw) * Rx(pitch).
Eigen::Matrix3d rotation(const Pose& pose);

// Rotation centre roughly at the neck, behind the face plane.
Eigen::Vector3d default_pivot();

LandmarkSequence apply_head_pose(const LandmarkSequence& seq, const PoseTrack& pose,
                                 const Eigen::Vector3d& pivot = default_pivot());

// Smooth seeded sway: sum of two sinusoids per angle with amplitude bounded
// by amplitude_rad.
PoseTrack make_pose_track(std::size_t frames, int fps, double amplitude_rad, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files

// Header `frame,idx,x,y,z`, frames numbered from 0.
void write_landmarks_csv(const LandmarkSequence& seq, const std::filesystem::path& path);
LandmarkSequence read_landmarks_csv(const std::filesystem::path& path, int fps);
// Header `frame,yaw,pitch,roll`.
void write_pose_csv(const PoseTrack& track, const std::filesystem::path& path);
PoseTrack read_pose_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Learned animator

struct AnimatorConfig {
  int hidden = 48;
  int epochs = 150;
  double learning_rate = 3e-3;
  double output_scale = 20.0;  // network predicts displacement * output_scale
  double clip_norm = 5.0;
};

// One training clip: per-frame content features and a speaker embedding, with
// the target sequence (same frame count as the audio).
struct AnimatorSample {
  audio::FeatureSequence features;
  nn::Vector speaker;
  LandmarkSequence target;
};

class AnimatorModel {
 public:
  AnimatorModel() = default;
  AnimatorModel(int feature_dim, int speaker_dim, const AnimatorConfig& config, std::uint64_t seed);

  int feature_dim() const { return feature_dim_; }
  int speaker_dim() const { return speaker_dim_; }
  const AnimatorConfig& config() const { return config_; }
  const LandmarkTemplate& landmark_template() const { return template_; }

  void set_normalization(nn::Vector mean, nn::Vector stddev);
  void set_template(const LandmarkTemplate& tmpl) { template_ = tmpl; }

  // frames x (feature_dim + speaker_dim) network input.
  nn::Matrix inputs(const audio::FeatureSequence& features, const nn::Vector& speaker,
                    std::size_t frames, int fps) const;
  // frames x 204 scaled displacements (row-major x,y,z per point).
  nn::Matrix predict(const nn::Matrix& x) const;

  LandmarkSequence animate(const audio::FeatureSequence& features, const nn::Vector& speaker,
                           const LandmarkTemplate& tmpl, int fps, double duration_s) const;
  LandmarkSequence animate(const audio::AudioClip& clip, const nn::Vector& speaker,
                           const LandmarkTemplate& tmpl, int fps = kDefaultFps) const;

  struct Gradient {
    nn::ElmanLayer layer;
    nn::Dense readout;
  };
  Gradient zero_gradient() const;
  // Mean squared error over frames x 204 of scaled displacements.
  double loss(const nn::Matrix& x, const nn::Matrix& target) const;
  // Returns the loss and accumulates its gradient.
  double loss_and_gradient(const nn::Matrix& x, const nn::Matrix& target, Gradient& grad) const;

  std::vector<nn::Matrix*> parameter_blocks();
  static std::vector<nn::Matrix*> gradient_blocks(Gradient& grad);

  // Scaled displacement targets for a sequence.
  nn::Matrix targets(const LandmarkSequence& seq) const;

  void save(const std::filesystem::path& path) const;
  static AnimatorModel load(const std::filesystem::path& path);

 private:
  int feature_dim_ = 0, speaker_dim_ = 0;
  nn::ElmanLayer layer_;
  nn::Dense readout_;
  nn::Vector mean_, stddev_;
  AnimatorConfig config_;
  std::uint64_t seed_ = 0;
  LandmarkTemplate template_ = LandmarkTemplate::canonical();
};

struct AnimatorTrainResult {
  AnimatorModel model;
  double initial_mse = 0.0;  // before any update, over the training set
  double final_mse = 0.0;
  std::vector<double> history;
};

// Throws ValidationError below 8 clips or 2 distinct speaker embeddings.
AnimatorTrainResult train_animator(const std::vector<AnimatorSample>& corpus,
                                   const AnimatorConfig& config, std::uint64_t seed);
double evaluate_mse(const AnimatorModel& model, const std::vector<AnimatorSample>& samples);

// Toy animator corpus: TTS clips padded with 0.3 s of silence on both sides,
// alternating between the given speakers. Targets are the procedural oracle
// plus a per-speaker vertical offset on all lip points (+style for speaker
// 0, -style for speaker 1, alternating beyond).
struct ToyAnimatorCorpus {
  std::vector<AnimatorSample> samples;
  std::vector<audio::AudioClip> audio;
  std::vector<nn::Vector> speakers;
  std::vector<double> style_offsets;  // per speaker
};
ToyAnimatorCorpus make_toy_animator_corpus(int clips, int speakers, std::uint64_t seed,
                                           int fps = kDefaultFps, double style_offset = 0.02,
                                           int sample_rate = audio::kDefaultSampleRate);

}  // namespace forge::anim
