#pragma once

// Manifest-driven dataset generation: parse and validate a manifest, plan
// (subject, sentence) jobs, run them on a worker pool and summarize the tree.
//
// Layout: <output>/<subject>/sentence_NNN/{audio.wav, frames/, landmarks.csv,
// pose.csv, meta.json, quality.json, seed.png, seed_landmarks.csv}.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "forge/anim.hpp"
#include "forge/error.hpp"
#include "forge/quality.hpp"
#include "forge/render.hpp"
#include "forge/tts.hpp"
#include "forge/voice.hpp"

namespace forge::pipeline {

inline constexpr const char* kOutputRootEnv = "FORGE_OUTPUT_ROOT";
inline constexpr const char* kDefaultSentence = "It's raining so we will plan some other day";

// $FORGE_OUTPUT_ROOT when set and non-empty, else "out".
std::filesystem::path default_output_root();

struct FaceSource {
  std::optional<std::uint64_t> generated_seed;
  int width = 256, height = 256;
  std::filesystem::path image, landmarks;  // used when not generated
};

struct VoiceSpec {
  tts::VoiceProfile profile;
  std::string profile_kind = "adult";  // child, adult, custom, file
  std::uint64_t profile_seed = 0;
  std::optional<std::filesystem::path> audio;  // pre-recorded speech instead of TTS
  std::optional<voice::ChildifyParams> childify;
};

struct SubjectSpec {
  std::string id;
  FaceSource face;
  VoiceSpec voice;
};

struct AnimationSpec {
  anim::ArticulationConfig articulation;
  bool blinks = true;
  anim::BlinkConfig blink;
  double pose_amplitude_deg = 0.0;
  // Learned animator checkpoint; procedural articulation when absent.
  std::optional<std::filesystem::path> animator;
  // Speaker encoder for the animator's speaker input.
  std::optional<std::filesystem::path> speaker_encoder;
};

struct GenerationManifest {
  std::vector<SubjectSpec> subjects;
  std::vector<std::string> sentences;
  int fps = anim::kDefaultFps;
  int sample_rate = audio::kDefaultSampleRate;
  std::uint64_t global_seed = 0;
  std::filesystem::path output_dir;
  int workers = 1;
  AnimationSpec animation;
  quality::Thresholds thresholds;

  // Manifest with every default filled in; paths as resolved.
  nlohmann::json echo() const;
};

// Field-path prefixed messages, e.g. "subjects[2].id: duplicate subject id 'a'".
class ManifestError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Relative paths resolve against base_dir. An absent output_dir falls back
// to default_output_root() (relative to the working directory).
GenerationManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir);
GenerationManifest validate_manifest(const std::filesystem::path& file);

struct Job {
  std::string subject;
  std::size_t sentence_index = 0;
  std::uint64_t seed = 0;

  std::string clip_name() const;  // sentence_001, ...
};

// Stable in (global_seed, subject id, sentence index) only.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view subject, std::size_t sentence_index);

// subjects x sentences, ordered by subject id then sentence index.
std::vector<Job> plan(const GenerationManifest& manifest);

enum class JobStatus { kPassed, kQualityFailed, kFailed };
const char* to_string(JobStatus s);

struct JobResult {
  Job job;
  JobStatus status = JobStatus::kFailed;
  std::filesystem::path dir;
  std::string error;
  std::optional<quality::QualityReport> quality;
  double seconds = 0.0;
};

struct RunOptions {
  int workers = 0;  // 0: manifest value
  std::function<void(const JobResult&)> on_done;  // called under a lock
};

struct RunSummary {
  std::vector<JobResult> results;  // plan order
  double seconds = 0.0;

  std::size_t count(JobStatus s) const;
  // 0 when every job passed, 1 otherwise.
  int exit_code() const;
  nlohmann::json to_json() const;
};

// Throws IoError when the output directory cannot be created or written
// before any job starts.
void check_output_dir(const std::filesystem::path& dir);

// Runs one job and writes its clip directory; exceptions become kFailed.
JobResult run_job(const GenerationManifest& manifest, const Job& job);
RunSummary run(const GenerationManifest& manifest, const RunOptions& options = {});

// Recomputes the quality report of a clip directory from its files.
quality::QualityReport evaluate_clip_dir(const std::filesystem::path& dir);

struct DatasetRow {
  std::string subject, clip;
  bool pass = false;
  std::optional<double> identity_min, lip_sync_r, histogram_nonzero;
};

struct MetricStats {
  std::size_t n = 0;
  double min = 0, mean = 0, max = 0;
};

struct DatasetSummary {
  std::vector<DatasetRow> rows;
  std::vector<std::string> missing;   // clip dirs without a readable quality.json
  std::vector<std::string> warnings;
  MetricStats identity, lip_sync;

  std::size_t failures() const;
  nlohmann::json to_json() const;
  std::string format() const;
};

// Scans <root>/<subject>/<clip>/ directories; never throws for missing or
// unreadable quality files.
DatasetSummary summarize(const std::filesystem::path& root);

// 20 generated subjects, the demo sentence, childified adult voices, mild pose.
nlohmann::json default_manifest_json();

}  // namespace forge::pipeline
