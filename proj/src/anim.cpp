#include "forge/anim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "forge/error.hpp"
#include "forge/rng.hpp"

namespace forge::anim {
namespace {

constexpr double kPi = std::numbers::pi;

void set(LandmarkFrame& f, int i, double x, double y, double z) { f.row(i) << x, y, z; }

double pair_distance(const LandmarkFrame& f, int a, int b) { return (f.row(a) - f.row(b)).norm(); }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path, int lineno) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() && s.find_first_not_of(" \r", used) != std::string::npos) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Template

LandmarkTemplate LandmarkTemplate::canonical() {
  LandmarkTemplate t;
  LandmarkFrame& p = t.points;
  // Jaw on a half ellipse from ear to ear through the chin.
  for (int i = 0; i < 17; ++i) {
    const double a = kPi * i / 16.0;
    set(p, i, -0.5 * std::cos(a), -0.1 + 0.65 * std::sin(a), -0.15 + 0.17 * std::sin(a));
  }
  // Brows.
  for (int k = 0; k < 5; ++k) {
    const double x = -0.38 + 0.075 * k;
    const double lift = std::sin(kPi * k / 4.0);
    set(p, 17 + k, x, -0.33 - 0.05 * lift, 0.0 + 0.03 * lift);
    set(p, 26 - k, -x, -0.33 - 0.05 * lift, 0.0 + 0.03 * lift);
  }
  // Nose bridge and base.
  const double bridge_y[4] = {-0.22, -0.14, -0.06, 0.02};
  const double bridge_z[4] = {0.03, 0.05, 0.075, 0.1};
  for (int k = 0; k < 4; ++k) set(p, 27 + k, 0.0, bridge_y[k], bridge_z[k]);
  const double base_x[5] = {-0.08, -0.04, 0.0, 0.04, 0.08};
  const double base_y[5] = {0.07, 0.085, 0.09, 0.085, 0.07};
  const double base_z[5] = {0.04, 0.06, 0.07, 0.06, 0.04};
  for (int k = 0; k < 5; ++k) set(p, 31 + k, base_x[k], base_y[k], base_z[k]);
  // Eyes: 36-41 on the viewer's left, 42-47 mirrored on the right.
  const double ex = -0.2, ey = -0.2, hw = 0.08, hh = 0.03, q = 0.027;
  set(p, 36, ex - hw, ey, -0.02);
  set(p, 37, ex - q, ey - hh, 0.0);
  set(p, 38, ex + q, ey - hh, 0.0);
  set(p, 39, ex + hw, ey, -0.01);
  set(p, 40, ex + q, ey + hh, 0.0);
  set(p, 41, ex - q, ey + hh, 0.0);
  for (const auto& [l, r] : kEyeMirrorPairs) set(p, r, -p(l, 0), p(l, 1), p(l, 2));
  // Outer lips: 48 left corner, 49-53 upper, 54 right corner, 55-59 lower.
  set(p, 48, -0.18, 0.30, 0.02);
  set(p, 49, -0.12, 0.265, 0.045);
  set(p, 50, -0.05, 0.25, 0.06);
  set(p, 51, 0.0, 0.255, 0.065);
  set(p, 52, 0.05, 0.25, 0.06);
  set(p, 53, 0.12, 0.265, 0.045);
  set(p, 54, 0.18, 0.30, 0.02);
  set(p, 55, 0.12, 0.34, 0.045);
  set(p, 56, 0.05, 0.355, 0.055);
  set(p, 57, 0.0, 0.36, 0.06);
  set(p, 58, -0.05, 0.355, 0.055);
  set(p, 59, -0.12, 0.34, 0.045);
  // Inner lips with a 0.01 rest gap.
  set(p, 60, -0.13, 0.30, 0.03);
  set(p, 61, -0.05, 0.295, 0.045);
  set(p, 62, 0.0, 0.295, 0.05);
  set(p, 63, 0.05, 0.295, 0.045);
  set(p, 64, 0.13, 0.30, 0.03);
  set(p, 65, 0.05, 0.305, 0.045);
  set(p, 66, 0.0, 0.305, 0.05);
  set(p, 67, -0.05, 0.305, 0.045);
  return t;
}

void LandmarkTemplate::validate() const {
  if (!points.allFinite()) throw ValidationError("template has non-finite coordinates");
}

void LandmarkSequence::validate() const {
  if (fps <= 0) throw ValidationError("fps must be positive");
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s)) throw ValidationError("invalid duration");
  if (frames.size() != frame_count(duration_s, fps))
    throw ValidationError("sequence has " + std::to_string(frames.size()) + " frames, expected " +
                          std::to_string(frame_count(duration_s, fps)));
  for (const auto& f : frames)
    if (!f.allFinite()) throw ValidationError("landmark sequence has non-finite coordinates");
}

std::size_t frame_count(double duration_s, int fps) {
  if (fps <= 0) throw ValidationError("fps must be positive");
  if (!(duration_s >= 0.0)) throw ValidationError("duration must be non-negative");
  return static_cast<std::size_t>(std::ceil(duration_s * fps - 1e-9));
}

std::size_t frame_count(std::size_t num_samples, int sample_rate, int fps) {
  if (fps <= 0 || sample_rate <= 0) throw ValidationError("fps and sample rate must be positive");
  const auto n = static_cast<std::uint64_t>(num_samples) * static_cast<std::uint64_t>(fps);
  const auto sr = static_cast<std::uint64_t>(sample_rate);
  return static_cast<std::size_t>((n + sr - 1) / sr);
}

double mouth_opening(const LandmarkFrame& f) {
  double s = 0.0;
  for (const auto& [a, b] : kInnerLipPairs) s += pair_distance(f, a, b);
  return s / kInnerLipPairs.size();
}

double eyelid_gap(const LandmarkFrame& f) {
  double s = 0.0;
  for (const auto& [a, b] : kEyelidPairs) s += pair_distance(f, a, b);
  return s / kEyelidPairs.size();
}

std::vector<double> mouth_openings(const LandmarkSequence& seq) {
  std::vector<double> out;
  out.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.push_back(mouth_opening(f));
  return out;
}

// ---------------------------------------------------------------------------
// Envelopes and articulation

audio::Envelope frame_rms(const audio::AudioClip& clip, int fps) {
  audio::validate(clip);
  const std::size_t n = frame_count(clip.size(), clip.sample_rate, fps);
  audio::Envelope env;
  env.hop_seconds = 1.0 / fps;
  env.values.resize(n);
  const auto sr = static_cast<std::uint64_t>(clip.sample_rate);
  for (std::size_t i = 0; i < n; ++i) {
    const auto begin = static_cast<std::size_t>(i * sr / static_cast<std::uint64_t>(fps));
    const auto end = std::min(clip.size(), static_cast<std::size_t>((i + 1) * sr / static_cast<std::uint64_t>(fps)));
    double acc = 0.0;
    for (std::size_t k = begin; k < end; ++k) acc += clip.samples[k] * clip.samples[k];
    env.values[i] = end > begin ? std::sqrt(acc / static_cast<double>(end - begin)) : 0.0;
  }
  return env;
}

audio::Envelope lip_sync_envelope(const audio::AudioClip& clip, int fps, double smoothing_s) {
  audio::Envelope env = frame_rms(clip, fps);
  if (smoothing_s > 0.0) {
    const double a = 1.0 - std::exp(-1.0 / (smoothing_s * fps));
    double y = 0.0;
    for (double& v : env.values) {
      y += a * (v - y);
      v = y;
    }
  }
  return env;
}

std::vector<double> mel_centroid(const audio::FeatureSequence& features) {
  std::vector<double> out;
  out.reserve(features.size());
  for (const auto& row : features.rows) {
    const std::size_t bands = row.size();
    double total = 0.0, moment = 0.0;
    for (std::size_t b = 0; b < bands; ++b) {
      const double e = std::exp(row[b]);
      total += e;
      moment += static_cast<double>(b) * e;
    }
    if (bands < 2 || total <= static_cast<double>(bands) * 1e-8) out.push_back(0.0);
    else out.push_back(moment / total / static_cast<double>(bands - 1));
  }
  return out;
}

std::size_t feature_row_for_frame(const audio::FeatureSequence& features, std::size_t frame, int fps) {
  if (features.size() == 0) throw ValidationError("empty feature sequence");
  if (!(features.hop_seconds > 0.0)) throw ValidationError("feature sequence has no hop");
  const double t = (static_cast<double>(frame) + 0.5) / fps;
  const double r = std::round((t - 0.5 * features.frame_seconds) / features.hop_seconds);
  return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(features.size() - 1)));
}

LandmarkFrame articulate(const LandmarkTemplate& tmpl, double opening, double spread, double jaw_gain) {
  LandmarkFrame f = tmpl.points;
  for (int i : {49, 50, 51, 52, 53, 61, 62, 63}) f(i, 1) -= 0.2 * opening;
  for (int i : {55, 56, 57, 58, 59, 65, 66, 67}) f(i, 1) += 0.8 * opening;
  for (int i : {48, 54, 60, 64}) f(i, 1) += 0.3 * opening;
  for (int i : {48, 60}) f(i, 0) -= spread;
  for (int i : {54, 64}) f(i, 0) += spread;
  for (int i = kJaw.begin; i < kJaw.end; ++i) f(i, 1) += jaw_gain * opening * std::sin(kPi * i / 16.0);
  return f;
}

LandmarkSequence procedural_articulate(const audio::FeatureSequence& features,
                                       const audio::Envelope& envelope, const LandmarkTemplate& tmpl,
                                       int fps, double duration_s, const ArticulationConfig& config) {
  tmpl.validate();
  if (features.size() == 0 || envelope.values.empty()) throw ValidationError("empty audio");
  const std::size_t n = frame_count(duration_s, fps);
  if (envelope.values.size() != n || std::abs(envelope.hop_seconds - 1.0 / fps) > 1e-9)
    throw ValidationError("envelope does not match the video frame grid");
  const double peak = *std::max_element(envelope.values.begin(), envelope.values.end());
  const auto centroid = mel_centroid(features);
  const double a = config.smoothing_s > 0.0 ? 1.0 - std::exp(-1.0 / (config.smoothing_s * fps)) : 1.0;

  LandmarkSequence seq;
  seq.fps = fps;
  seq.duration_s = duration_s;
  seq.frames.reserve(n);
  double width = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double level = peak > 0.0 ? envelope.values[i] / peak : 0.0;
    width += a * (centroid[feature_row_for_frame(features, i, fps)] - width);
    seq.frames.push_back(articulate(tmpl, config.k_open * level, config.k_width * width, config.jaw_gain));
  }
  return seq;
}

LandmarkSequence procedural_articulate(const audio::AudioClip& clip, const LandmarkTemplate& tmpl,
                                       int fps, const ArticulationConfig& config) {
  audio::validate(clip);
  if (clip.size() == 0) throw ValidationError("empty audio");
  return procedural_articulate(audio::features(clip), lip_sync_envelope(clip, fps, config.smoothing_s),
                               tmpl, fps, clip.duration_seconds(), config);
}

// ---------------------------------------------------------------------------
// Blinks

void BlinkConfig::validate() const {
  if (!(duration_s > 0.0) || !(duration_s < min_gap_s) || !(min_gap_s <= max_gap_s))
    throw ValidationError("blink config needs 0 < duration < min_gap <= max_gap");
  if (!(closure > 0.0 && closure <= 1.0)) throw ValidationError("blink closure must be in (0, 1]");
}

std::vector<Blink> plan_blinks(std::size_t frames, int fps, std::uint64_t seed, const BlinkConfig& config) {
  config.validate();
  if (fps <= 0) throw ValidationError("fps must be positive");
  const double total = static_cast<double>(frames) / fps;
  Rng rng(mix64(seed) ^ 0x626c696e6bULL);
  std::vector<Blink> out;
  double t = rng.uniform(0.0, config.max_gap_s);
  while (t + config.duration_s <= total) {
    const auto center = static_cast<std::size_t>(std::llround((t + 0.5 * config.duration_s) * fps));
    if (center < frames) out.push_back({t, center});
    t += rng.uniform(config.min_gap_s, config.max_gap_s);
  }
  return out;
}

LandmarkSequence inject_blinks(const LandmarkSequence& seq, std::uint64_t seed, const BlinkConfig& config) {
  seq.validate();
  LandmarkSequence out = seq;
  for (const Blink& b : plan_blinks(seq.frames.size(), seq.fps, seed, config)) {
    const double tc = static_cast<double>(b.center_frame) / seq.fps;
    for (std::size_t i = 0; i < out.frames.size(); ++i) {
      const double dt = static_cast<double>(i) / seq.fps - tc;
      if (std::abs(dt) >= 0.5 * config.duration_s) continue;
      const double c = 0.5 * (1.0 + std::cos(2.0 * kPi * dt / config.duration_s));
      const double keep = 1.0 - config.closure * c;
      LandmarkFrame& f = out.frames[i];
      for (const auto& [u, l] : kEyelidPairs) {
        const Eigen::RowVector3d mid = 0.5 * (f.row(u) + f.row(l));
        f.row(u) = mid + keep * (f.row(u) - mid);
        f.row(l) = mid + keep * (f.row(l) - mid);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pose

void PoseTrack::validate() const {
  for (const auto& p : poses)
    if (!std::isfinite(p.yaw) || !std::isfinite(p.pitch) || !std::isfinite(p.roll))
      throw ValidationError("pose track has non-finite angles");
}

Eigen::Matrix3d rotation(const Pose& pose) {
  using Eigen::AngleAxisd;
  using Eigen::Vector3d;
  return (AngleAxisd(pose.roll, Vector3d::UnitZ()) * AngleAxisd(pose.yaw, Vector3d::UnitY()) *
          AngleAxisd(pose.pitch, Vector3d::UnitX()))
      .toRotationMatrix();
}

Eigen::Vector3d default_pivot() { return {0.0, 0.35, -0.4}; }

LandmarkSequence apply_head_pose(const LandmarkSequence& seq, const PoseTrack& pose,
                                 const Eigen::Vector3d& pivot) {
  pose.validate();
  if (pose.poses.size() != seq.frames.size())
    throw ValidationError("pose track has " + std::to_string(pose.poses.size()) + " entries for " +
                          std::to_string(seq.frames.size()) + " frames");
  LandmarkSequence out = seq;
  for (std::size_t i = 0; i < out.frames.size(); ++i) {
    const Eigen::Matrix3d r = rotation(pose.poses[i]);
    LandmarkFrame& f = out.frames[i];
    f = ((f.rowwise() - pivot.transpose()) * r.transpose()).rowwise() + pivot.transpose();
  }
  return out;
}

PoseTrack make_pose_track(std::size_t frames, int fps, double amplitude_rad, std::uint64_t seed) {
  if (fps <= 0) throw ValidationError("fps must be positive");
  if (!(amplitude_rad >= 0.0) || !std::isfinite(amplitude_rad))
    throw ValidationError("pose amplitude must be non-negative");
  Rng rng(mix64(seed) ^ 0x706f7365ULL);
  struct Wave {
    double f1, f2, p1, p2;
  };
  Wave w[3];
  for (auto& x : w)
    x = {rng.uniform(0.15, 0.35), rng.uniform(0.4, 0.8), rng.uniform(0.0, 2 * kPi), rng.uniform(0.0, 2 * kPi)};
  const double amp[3] = {amplitude_rad, 0.6 * amplitude_rad, 0.5 * amplitude_rad};
  PoseTrack track;
  track.poses.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) / fps;
    double v[3];
    for (int k = 0; k < 3; ++k)
      v[k] = amp[k] * (0.6 * std::sin(2 * kPi * w[k].f1 * t + w[k].p1) +
                       0.4 * std::sin(2 * kPi * w[k].f2 * t + w[k].p2));
    track.poses[i] = {v[0], v[1], v[2]};
  }
  return track;
}

// ---------------------------------------------------------------------------
// Files

void write_landmarks_csv(const LandmarkSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "frame,idx,x,y,z\n";
  for (std::size_t i = 0; i < seq.frames.size(); ++i)
    for (int p = 0; p < kNumLandmarks; ++p)
      out << i << ',' << p << ',' << format_double(seq.frames[i](p, 0)) << ','
          << format_double(seq.frames[i](p, 1)) << ',' << format_double(seq.frames[i](p, 2)) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

LandmarkSequence read_landmarks_csv(const std::filesystem::path& path, int fps) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 15) != "frame,idx,x,y,z")
    throw FormatError(path.string() + ": missing header frame,idx,x,y,z");
  LandmarkSequence seq;
  seq.fps = fps;
  int lineno = 1;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    const double frame = parse_double(cells[0], path, lineno);
    const double idx = parse_double(cells[1], path, lineno);
    const std::size_t want_frame = expected / kNumLandmarks;
    const int want_idx = static_cast<int>(expected % kNumLandmarks);
    if (frame != static_cast<double>(want_frame) || idx != want_idx)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": rows must be ordered by frame then idx");
    if (want_idx == 0) seq.frames.emplace_back();
    for (int c = 0; c < 3; ++c) seq.frames.back()(want_idx, c) = parse_double(cells[2 + c], path, lineno);
    ++expected;
  }
  if (expected % kNumLandmarks != 0) throw FormatError(path.string() + ": last frame is incomplete");
  seq.duration_s = static_cast<double>(seq.frames.size()) / fps;
  seq.validate();
  return seq;
}

void write_pose_csv(const PoseTrack& track, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "frame,yaw,pitch,roll\n";
  for (std::size_t i = 0; i < track.poses.size(); ++i)
    out << i << ',' << format_double(track.poses[i].yaw) << ',' << format_double(track.poses[i].pitch) << ','
        << format_double(track.poses[i].roll) << '\n';
}

PoseTrack read_pose_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 20) != "frame,yaw,pitch,roll")
    throw FormatError(path.string() + ": missing header frame,yaw,pitch,roll");
  PoseTrack track;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    if (parse_double(cells[0], path, lineno) != static_cast<double>(track.poses.size()))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": frames must be consecutive from 0");
    track.poses.push_back({parse_double(cells[1], path, lineno), parse_double(cells[2], path, lineno),
                           parse_double(cells[3], path, lineno)});
  }
  track.validate();
  return track;
}

}  // namespace forge::anim
