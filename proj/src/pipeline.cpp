#include "forge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "forge/rng.hpp"
#include "forge/speaker.hpp"

namespace forge::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  if (env && *env) return fs::path(env);
  return fs::path("out");
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ManifestError((path.empty() ? std::string("manifest") : path) + ": " + msg);
}

std::string sub(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string idx(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void check_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      fail(sub(path, k), "unknown field");
  }
}

double number(const json& j, const std::string& key, const std::string& path, double def, double lo, double hi) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number()) fail(sub(path, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x) || x < lo || x > hi) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "value %g out of range [%g, %g]", x, lo, hi);
    fail(sub(path, key), buf);
  }
  return x;
}

int integer(const json& j, const std::string& key, const std::string& path, int def, int lo, int hi) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) fail(sub(path, key), "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < lo || x > hi)
    fail(sub(path, key), "value " + std::to_string(x) + " out of range [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + "]");
  return static_cast<int>(x);
}

std::uint64_t seed_value(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  fail(path, "expected a non-negative integer");
}

bool boolean(const json& j, const std::string& key, const std::string& path, bool def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_boolean()) fail(sub(path, key), "expected true or false");
  return j.at(key).get<bool>();
}

std::string text(const json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) fail(sub(path, key), "required field missing");
  if (!j.at(key).is_string() || j.at(key).get<std::string>().empty()) fail(sub(path, key), "expected a non-empty string");
  return j.at(key).get<std::string>();
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

voice::BreakpointFunction bpf(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a list of [time, factor] pairs");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& p = v[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      fail(idx(path, i), "expected [time, factor]");
    pts.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  try {
    return voice::BreakpointFunction(std::move(pts));
  } catch (const ValidationError& e) {
    fail(path, e.what());
  }
}

json bpf_json(const voice::BreakpointFunction& f) {
  json a = json::array();
  for (const auto& [t, v] : f.points()) a.push_back({t, v});
  return a;
}

FaceSource parse_face(const json& j, const std::string& path, const fs::path& base, std::uint64_t fallback_seed) {
  FaceSource f;
  if (j.is_null()) {
    f.generated_seed = fallback_seed;
    return f;
  }
  check_object(j, path, {"generated", "width", "height", "image", "landmarks"});
  const bool gen = j.contains("generated"), file = j.contains("image") || j.contains("landmarks");
  if (gen == file) fail(path, "give either 'generated' or 'image' with 'landmarks'");
  if (gen) {
    f.generated_seed = seed_value(j.at("generated"), sub(path, "generated"));
    f.width = integer(j, "width", path, 256, 128, 4096);
    f.height = integer(j, "height", path, 256, 128, 4096);
  } else {
    f.image = resolve(base, text(j, "image", path));
    f.landmarks = resolve(base, text(j, "landmarks", path));
  }
  return f;
}

VoiceSpec parse_voice(const json& j, const std::string& path, const fs::path& base, std::uint64_t fallback_seed) {
  VoiceSpec v;
  v.profile_seed = fallback_seed;
  if (j.is_null()) {
    v.profile = tts::adult_profile(v.profile_seed);
    return v;
  }
  check_object(j, path, {"profile", "profile_seed", "audio", "childify"});
  if (j.contains("profile_seed")) v.profile_seed = seed_value(j.at("profile_seed"), sub(path, "profile_seed"));
  const json prof = j.value("profile", json("adult"));
  const std::string ppath = sub(path, "profile");
  try {
    if (prof.is_string()) {
      const auto s = prof.get<std::string>();
      if (s == "adult") {
        v.profile_kind = "adult";
        v.profile = tts::adult_profile(v.profile_seed);
      } else if (s == "child") {
        v.profile_kind = "child";
        v.profile = tts::child_profile(v.profile_seed);
      } else {
        v.profile_kind = "file";
        v.profile = tts::read_profile(resolve(base, s));
      }
    } else if (prof.is_object()) {
      check_object(prof, ppath, {"name", "f0_base", "f0_jitter", "formant_scale", "speaking_rate"});
      v.profile_kind = "custom";
      v.profile.name = prof.value("name", std::string("custom"));
      v.profile.f0_base = number(prof, "f0_base", ppath, v.profile.f0_base, 1e-3, 4000);
      v.profile.f0_jitter = number(prof, "f0_jitter", ppath, v.profile.f0_jitter, 0, 0.499);
      v.profile.formant_scale = number(prof, "formant_scale", ppath, v.profile.formant_scale, 1e-3, 10);
      v.profile.speaking_rate = number(prof, "speaking_rate", ppath, v.profile.speaking_rate, 1e-3, 100);
      v.profile.validate();
    } else {
      fail(ppath, "expected \"adult\", \"child\", a profile file or an object");
    }
  } catch (const ManifestError&) {
    throw;
  } catch (const Error& e) {
    fail(ppath, e.what());
  }
  if (j.contains("audio")) v.audio = resolve(base, text(j, "audio", path));
  if (j.contains("childify") && !(j.at("childify").is_boolean() && !j.at("childify").get<bool>())) {
    const auto& c = j.at("childify");
    const std::string cpath = sub(path, "childify");
    voice::ChildifyParams p;
    if (!(c.is_boolean() && c.get<bool>())) {
      check_object(c, cpath, {"pitch_up_semitones", "rate_factor", "pitch_bpf", "rate_bpf"});
      p.pitch_up_semitones = number(c, "pitch_up_semitones", cpath, p.pitch_up_semitones, 0, 24);
      p.rate_factor = number(c, "rate_factor", cpath, p.rate_factor, 0.25, 1);
      if (c.contains("pitch_bpf")) p.pitch_bpf = bpf(c.at("pitch_bpf"), sub(cpath, "pitch_bpf"));
      if (c.contains("rate_bpf")) p.rate_bpf = bpf(c.at("rate_bpf"), sub(cpath, "rate_bpf"));
    }
    try {
      p.validate();
    } catch (const ValidationError& e) {
      fail(cpath, e.what());
    }
    v.childify = std::move(p);
  }
  return v;
}

AnimationSpec parse_animation(const json& j, const std::string& path, const fs::path& base) {
  AnimationSpec a;
  if (j.is_null()) return a;
  check_object(j, path,
               {"k_open", "k_width", "smoothing_s", "jaw_gain", "blinks", "blink_min_gap_s", "blink_max_gap_s",
                "blink_duration_s", "pose_amplitude_deg", "animator", "speaker_encoder"});
  a.articulation.k_open = number(j, "k_open", path, a.articulation.k_open, 0, 0.2);
  a.articulation.k_width = number(j, "k_width", path, a.articulation.k_width, 0, 0.1);
  a.articulation.smoothing_s = number(j, "smoothing_s", path, a.articulation.smoothing_s, 0, 1);
  a.articulation.jaw_gain = number(j, "jaw_gain", path, a.articulation.jaw_gain, 0, 2);
  a.blinks = boolean(j, "blinks", path, a.blinks);
  a.blink.min_gap_s = number(j, "blink_min_gap_s", path, a.blink.min_gap_s, 0.1, 60);
  a.blink.max_gap_s = number(j, "blink_max_gap_s", path, a.blink.max_gap_s, 0.1, 60);
  a.blink.duration_s = number(j, "blink_duration_s", path, a.blink.duration_s, 0.04, 2);
  try {
    a.blink.validate();
  } catch (const ValidationError& e) {
    fail(path, e.what());
  }
  a.pose_amplitude_deg = number(j, "pose_amplitude_deg", path, a.pose_amplitude_deg, 0, 20);
  if (j.contains("animator")) a.animator = resolve(base, text(j, "animator", path));
  if (j.contains("speaker_encoder")) a.speaker_encoder = resolve(base, text(j, "speaker_encoder", path));
  if (a.speaker_encoder && !a.animator) fail(sub(path, "speaker_encoder"), "only used together with 'animator'");
  return a;
}

}  // namespace

GenerationManifest parse_manifest(const json& j, const fs::path& base_dir) {
  check_object(j, "",
               {"subjects", "sentences", "fps", "sample_rate", "global_seed", "output_dir", "workers", "animation",
                "quality"});
  GenerationManifest m;
  m.fps = integer(j, "fps", "", m.fps, 1, 120);
  m.sample_rate = integer(j, "sample_rate", "", m.sample_rate, 1, 192000);
  if (m.sample_rate < 8000) fail("sample_rate", "value " + std::to_string(m.sample_rate) + " below 8000");
  if (j.contains("global_seed")) m.global_seed = seed_value(j.at("global_seed"), "global_seed");
  m.workers = integer(j, "workers", "", m.workers, 1, 256);
  m.output_dir = j.contains("output_dir") ? resolve(base_dir, text(j, "output_dir", "")) : default_output_root();

  if (!j.contains("sentences")) fail("sentences", "required field missing");
  const auto& sentences = j.at("sentences");
  if (!sentences.is_array() || sentences.empty()) fail("sentences", "expected a non-empty list");
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& s = sentences[i];
    if (!s.is_string() || s.get<std::string>().find_first_not_of(" \t\r\n") == std::string::npos)
      fail(idx("sentences", i), "expected a non-empty string");
    m.sentences.push_back(s.get<std::string>());
  }

  if (!j.contains("subjects")) fail("subjects", "required field missing");
  const auto& subjects = j.at("subjects");
  if (!subjects.is_array() || subjects.empty()) fail("subjects", "expected a non-empty list");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const std::string path = idx("subjects", i);
    const auto& s = subjects[i];
    check_object(s, path, {"id", "face", "voice"});
    SubjectSpec spec;
    spec.id = text(s, "id", path);
    if (spec.id == "." || spec.id == ".." || spec.id.find_first_of("/\\:*?\"<>|,;\n\r\t ") != std::string::npos)
      fail(sub(path, "id"), "subject id '" + spec.id + "' is not a plain directory name");
    if (!ids.insert(spec.id).second) fail(sub(path, "id"), "duplicate subject id '" + spec.id + "'");
    const std::uint64_t subject_seed = mix64(m.global_seed ^ fnv1a(spec.id));
    spec.face = parse_face(s.value("face", json()), sub(path, "face"), base_dir, subject_seed);
    spec.voice = parse_voice(s.value("voice", json()), sub(path, "voice"), base_dir, mix64(subject_seed));
    m.subjects.push_back(std::move(spec));
  }

  m.animation = parse_animation(j.value("animation", json()), "animation", base_dir);
  if (j.contains("quality")) {
    const auto& q = j.at("quality");
    check_object(q, "quality", {"identity_min", "lip_sync_min", "histogram_nonzero_min"});
    m.thresholds.identity_min = number(q, "identity_min", "quality", m.thresholds.identity_min, -1, 1);
    m.thresholds.lip_sync_min = number(q, "lip_sync_min", "quality", m.thresholds.lip_sync_min, -1, 1);
    m.thresholds.histogram_nonzero_min =
        number(q, "histogram_nonzero_min", "quality", m.thresholds.histogram_nonzero_min, 0, 1);
  }
  return m;
}

GenerationManifest validate_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return parse_manifest(j, fs::absolute(file).parent_path());
}

json GenerationManifest::echo() const {
  json j;
  j["fps"] = fps;
  j["sample_rate"] = sample_rate;
  j["global_seed"] = global_seed;
  j["output_dir"] = output_dir.string();
  j["workers"] = workers;
  j["sentences"] = sentences;
  auto& subs = j["subjects"] = json::array();
  for (const auto& s : subjects) {
    json face;
    if (s.face.generated_seed) face = {{"generated", *s.face.generated_seed}, {"width", s.face.width}, {"height", s.face.height}};
    else face = {{"image", s.face.image.string()}, {"landmarks", s.face.landmarks.string()}};
    json voice{{"profile_seed", s.voice.profile_seed}};
    if (s.voice.profile_kind == "adult" || s.voice.profile_kind == "child")
      voice["profile"] = s.voice.profile_kind;
    else
      voice["profile"] = {{"name", s.voice.profile.name},
                          {"f0_base", s.voice.profile.f0_base},
                          {"f0_jitter", s.voice.profile.f0_jitter},
                          {"formant_scale", s.voice.profile.formant_scale},
                          {"speaking_rate", s.voice.profile.speaking_rate}};
    if (s.voice.audio) voice["audio"] = s.voice.audio->string();
    if (s.voice.childify) {
      const auto& c = *s.voice.childify;
      json cj{{"pitch_up_semitones", c.pitch_up_semitones}, {"rate_factor", c.rate_factor}};
      if (c.pitch_bpf) cj["pitch_bpf"] = bpf_json(*c.pitch_bpf);
      if (c.rate_bpf) cj["rate_bpf"] = bpf_json(*c.rate_bpf);
      voice["childify"] = cj;
    } else {
      voice["childify"] = false;
    }
    subs.push_back({{"id", s.id}, {"face", face}, {"voice", voice}});
  }
  const auto& a = animation;
  j["animation"] = {{"k_open", a.articulation.k_open},
                    {"k_width", a.articulation.k_width},
                    {"smoothing_s", a.articulation.smoothing_s},
                    {"jaw_gain", a.articulation.jaw_gain},
                    {"blinks", a.blinks},
                    {"blink_min_gap_s", a.blink.min_gap_s},
                    {"blink_max_gap_s", a.blink.max_gap_s},
                    {"blink_duration_s", a.blink.duration_s},
                    {"pose_amplitude_deg", a.pose_amplitude_deg}};
  if (a.animator) j["animation"]["animator"] = a.animator->string();
  if (a.speaker_encoder) j["animation"]["speaker_encoder"] = a.speaker_encoder->string();
  j["quality"] = thresholds;
  return j;
}

// ---------------------------------------------------------------------------
// Planning

std::string Job::clip_name() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sentence_%03zu", sentence_index + 1);
  return buf;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view subject, std::size_t sentence_index) {
  std::uint64_t h = fnv1a(subject, mix64(global_seed) ^ 0xcbf29ce484222325ULL);
  return mix64(h ^ mix64(static_cast<std::uint64_t>(sentence_index) + 0x5eed));
}

std::vector<Job> plan(const GenerationManifest& m) {
  std::vector<Job> jobs;
  jobs.reserve(m.subjects.size() * m.sentences.size());
  for (const auto& s : m.subjects)
    for (std::size_t k = 0; k < m.sentences.size(); ++k) jobs.push_back({s.id, k, derive_seed(m.global_seed, s.id, k)});
  std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
    return a.subject != b.subject ? a.subject < b.subject : a.sentence_index < b.sentence_index;
  });
  std::set<std::uint64_t> seeds;
  for (const auto& j : jobs)
    if (!seeds.insert(j.seed).second) throw Error("seed collision for " + j.subject + "/" + j.clip_name());
  return jobs;
}

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::kPassed: return "passed";
    case JobStatus::kQualityFailed: return "quality_failed";
    case JobStatus::kFailed: return "failed";
  }
  return "failed";
}

// ---------------------------------------------------------------------------
// Execution

namespace {

constexpr std::uint64_t kTtsStream = 0x747473ULL;
constexpr std::uint64_t kBlinkStream = 0x626c696e6bULL;
constexpr std::uint64_t kPoseStream = 0x706f7365ULL;

render::SeedFace load_face(const FaceSource& f) {
  if (f.generated_seed) return render::generate_test_face({f.width, f.height, {}}, *f.generated_seed);
  render::SeedFace face{render::read_png(f.image), render::read_landmarks2d(f.landmarks), f.image.stem().string()};
  face.validate();
  return face;
}

json camera_json(const render::Camera& c) { return {{"scale", c.scale}, {"cx", c.cx}, {"cy", c.cy}}; }

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

void check_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".forge-write-test";
  {
    std::ofstream out(probe);
    if (!out || !(out << "ok")) throw IoError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

JobResult run_job(const GenerationManifest& m, const Job& job) {
  const auto t0 = std::chrono::steady_clock::now();
  JobResult r;
  r.job = job;
  r.dir = m.output_dir / job.subject / job.clip_name();
  try {
    const auto it = std::find_if(m.subjects.begin(), m.subjects.end(), [&](const SubjectSpec& s) { return s.id == job.subject; });
    if (it == m.subjects.end()) throw ValidationError("unknown subject " + job.subject);
    const SubjectSpec& subject = *it;
    const std::string& sentence = m.sentences.at(job.sentence_index);

    fs::create_directories(r.dir);
    fs::remove_all(r.dir / "frames");

    // Audio: synthesize (or load), optionally childify, store as PCM16 and
    // continue from the stored samples so every later stage sees the file.
    audio::AudioClip speech;
    if (subject.voice.audio) {
      tts::PrerenderedAudio src(audio::read_wav(*subject.voice.audio));
      speech = src.synthesize(sentence, subject.voice.profile, m.sample_rate, 0);
    } else {
      speech = tts::FormantSynthesizer{}.synthesize(sentence, subject.voice.profile, m.sample_rate,
                                                    mix64(job.seed ^ kTtsStream));
    }
    if (subject.voice.childify) speech = voice::childify(speech, *subject.voice.childify);
    if (speech.sample_rate != m.sample_rate) speech = audio::resample(speech, m.sample_rate);
    const double peak = audio::peak_abs(speech.samples);
    if (peak > 0.99)
      for (double& v : speech.samples) v *= 0.95 / peak;
    audio::write_wav(speech, r.dir / "audio.wav");
    const audio::AudioClip clip = audio::read_wav(r.dir / "audio.wav");

    const render::SeedFace face = load_face(subject.face);
    const render::Camera camera = render::fit_camera(face.landmarks);
    const anim::LandmarkTemplate tmpl = render::back_project(face.landmarks, camera);

    anim::LandmarkSequence seq;
    std::string mode = "procedural";
    if (m.animation.animator) {
      mode = "learned";
      const auto model = anim::AnimatorModel::load(*m.animation.animator);
      nn::Vector spk;
      if (m.animation.speaker_encoder) {
        spk = speaker::EncoderModel::load(*m.animation.speaker_encoder).embed_utterance(clip).vector();
        if (spk.size() != model.speaker_dim())
          throw ValidationError("speaker encoder dimension does not match the animator");
      } else {
        spk = nn::Vector::Zero(model.speaker_dim());
      }
      seq = model.animate(clip, spk, tmpl, m.fps);
    } else {
      seq = anim::procedural_articulate(clip, tmpl, m.fps, m.animation.articulation);
    }

    json blinks = json::array();
    if (m.animation.blinks) {
      const std::uint64_t bseed = mix64(job.seed ^ kBlinkStream);
      for (const auto& b : anim::plan_blinks(seq.frames.size(), m.fps, bseed, m.animation.blink))
        blinks.push_back({{"onset_s", b.onset_s}, {"center_frame", b.center_frame}});
      seq = anim::inject_blinks(seq, bseed, m.animation.blink);
    }
    const bool posed = m.animation.pose_amplitude_deg > 0;
    if (posed) {
      const auto track = anim::make_pose_track(seq.frames.size(), m.fps,
                                               m.animation.pose_amplitude_deg * std::numbers::pi / 180.0,
                                               mix64(job.seed ^ kPoseStream));
      seq = anim::apply_head_pose(seq, track);
      anim::write_pose_csv(track, r.dir / "pose.csv");
    } else {
      fs::remove(r.dir / "pose.csv");
    }
    anim::write_landmarks_csv(seq, r.dir / "landmarks.csv");

    const auto lm2d = render::project(seq, camera);
    const auto frames = render::render_clip(face, lm2d, m.fps, clip);
    render::write_frames(frames, r.dir);
    render::write_png(face.image, r.dir / "seed.png");
    render::write_landmarks2d(face.landmarks, r.dir / "seed_landmarks.csv");

    std::vector<std::size_t> render_flags;
    for (std::size_t i = 0; i < frames.records.size(); ++i)
      if (!frames.records[i].degenerate_triangles.empty()) render_flags.push_back(i);

    quality::ClipInputs in{&face, &frames.frames, &lm2d, &seq, &clip, render_flags};
    r.quality = quality::evaluate(in, m.thresholds);

    json meta;
    meta["subject"] = job.subject;
    meta["clip"] = job.clip_name();
    meta["sentence_index"] = job.sentence_index;
    meta["text"] = sentence;
    meta["seed"] = job.seed;
    meta["global_seed"] = m.global_seed;
    meta["fps"] = m.fps;
    meta["sample_rate"] = clip.sample_rate;
    meta["num_samples"] = clip.size();
    meta["duration_s"] = clip.duration_seconds();
    meta["frames"] = frames.frames.size();
    meta["width"] = face.image.width;
    meta["height"] = face.image.height;
    meta["camera"] = camera_json(camera);
    meta["face"] = face.id;
    meta["animation"] = mode;
    meta["blinks"] = blinks;
    meta["pose_amplitude_deg"] = m.animation.pose_amplitude_deg;
    meta["render_flagged_frames"] = render_flags;
    meta["thresholds"] = m.thresholds;
    const json echo = m.echo();
    for (const auto& s : echo.at("subjects"))
      if (s.at("id") == job.subject) meta["voice"] = s.at("voice");
    write_json(meta, r.dir / "meta.json");
    write_json(r.quality->to_json(), r.dir / "quality.json");
    r.status = r.quality->pass() ? JobStatus::kPassed : JobStatus::kQualityFailed;
  } catch (const std::exception& e) {
    r.status = JobStatus::kFailed;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::size_t RunSummary::count(JobStatus s) const {
  return static_cast<std::size_t>(std::count_if(results.begin(), results.end(), [s](const JobResult& r) { return r.status == s; }));
}

int RunSummary::exit_code() const { return count(JobStatus::kPassed) == results.size() ? 0 : 1; }

json RunSummary::to_json() const {
  json j;
  j["jobs"] = results.size();
  j["passed"] = count(JobStatus::kPassed);
  j["quality_failed"] = count(JobStatus::kQualityFailed);
  j["failed"] = count(JobStatus::kFailed);
  j["seconds"] = seconds;
  auto& rows = j["results"] = json::array();
  for (const auto& r : results) {
    json row{{"subject", r.job.subject},
             {"clip", r.job.clip_name()},
             {"seed", r.job.seed},
             {"status", to_string(r.status)},
             {"dir", r.dir.string()},
             {"seconds", r.seconds}};
    if (!r.error.empty()) row["error"] = r.error;
    if (r.quality) row["quality_pass"] = r.quality->pass();
    rows.push_back(std::move(row));
  }
  return j;
}

RunSummary run(const GenerationManifest& m, const RunOptions& options) {
  check_output_dir(m.output_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const auto jobs = plan(m);
  RunSummary summary;
  summary.results.resize(jobs.size());
  const int workers = std::max(1, std::min<int>(options.workers > 0 ? options.workers : m.workers,
                                                static_cast<int>(jobs.size())));
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      auto r = run_job(m, jobs[i]);
      std::lock_guard lock(mu);
      summary.results[i] = std::move(r);
      if (options.on_done) options.on_done(summary.results[i]);
    }
  };
  std::vector<std::thread> pool;
  for (int k = 1; k < workers; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(summary.to_json(), m.output_dir / "summary.json");
  return summary;
}

quality::QualityReport evaluate_clip_dir(const fs::path& dir) {
  const json meta = read_json(dir / "meta.json");
  try {
    const int fps = meta.at("fps").get<int>();
    const auto& c = meta.at("camera");
    const render::Camera camera{c.at("scale").get<double>(), c.at("cx").get<double>(), c.at("cy").get<double>()};
    const quality::Thresholds thresholds = meta.value("thresholds", quality::Thresholds{});
    const auto flags = meta.value("render_flagged_frames", std::vector<std::size_t>{});

    const audio::AudioClip clip = audio::read_wav(dir / "audio.wav");
    const anim::LandmarkSequence seq = anim::read_landmarks_csv(dir / "landmarks.csv", fps);
    render::SeedFace face{render::read_png(dir / "seed.png"), render::read_landmarks2d(dir / "seed_landmarks.csv"),
                          meta.value("face", std::string())};
    face.validate();
    std::vector<fs::path> files;
    if (fs::is_directory(dir / "frames"))
      for (const auto& e : fs::directory_iterator(dir / "frames"))
        if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValidationError(dir.string() + ": no frames");
    std::vector<render::Image> frames;
    for (const auto& f : files) frames.push_back(render::read_png(f));
    const auto lm2d = render::project(seq, camera);
    if (lm2d.size() != frames.size())
      throw ValidationError(dir.string() + ": " + std::to_string(frames.size()) + " frames but " +
                            std::to_string(lm2d.size()) + " landmark frames");
    quality::ClipInputs in{&face, &frames, &lm2d, &seq, &clip, flags};
    return quality::evaluate(in, thresholds);
  } catch (const json::exception& e) {
    throw FormatError((dir / "meta.json").string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Summaries

std::size_t DatasetSummary::failures() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const DatasetRow& r) { return !r.pass; }));
}

namespace {

MetricStats stats(const std::vector<double>& v) {
  MetricStats s;
  s.n = v.size();
  if (v.empty()) return s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  return s;
}

json stats_json(const MetricStats& s) { return {{"n", s.n}, {"min", s.min}, {"mean", s.mean}, {"max", s.max}}; }

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

bool is_clip_dir(const fs::path& p) {
  return fs::exists(p / "meta.json") || fs::exists(p / "quality.json") || fs::exists(p / "audio.wav") ||
         fs::is_directory(p / "frames");
}

std::vector<fs::path> sorted_dirs(const fs::path& p) {
  std::vector<fs::path> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(p, ec))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetSummary summarize(const fs::path& root) {
  DatasetSummary s;
  if (!fs::is_directory(root)) {
    s.warnings.push_back("dataset root " + root.string() + " does not exist");
    return s;
  }
  std::vector<double> ids, lips;
  for (const auto& subject : sorted_dirs(root))
    for (const auto& clip : sorted_dirs(subject)) {
      if (!is_clip_dir(clip)) continue;
      const std::string name = subject.filename().string() + "/" + clip.filename().string();
      if (!fs::exists(clip / "quality.json")) {
        s.missing.push_back(name);
        continue;
      }
      try {
        const auto rep = quality::QualityReport::from_json(read_json(clip / "quality.json"));
        DatasetRow row{subject.filename().string(), clip.filename().string(), rep.pass(), {}, {}, {}};
        const auto get = [&](const char* metric) -> std::optional<double> {
          const auto* m = rep.find(metric);
          if (!m || !std::isfinite(m->value)) return std::nullopt;
          return m->value;
        };
        row.identity_min = get("identity_similarity_min");
        row.lip_sync_r = get("lip_sync_r");
        row.histogram_nonzero = get("histogram_nonzero_fraction");
        if (row.identity_min) ids.push_back(*row.identity_min);
        if (row.lip_sync_r) lips.push_back(*row.lip_sync_r);
        s.rows.push_back(std::move(row));
      } catch (const Error& e) {
        s.missing.push_back(name);
        s.warnings.push_back(name + ": " + e.what());
      }
    }
  if (s.rows.empty() && s.missing.empty()) s.warnings.push_back("no clips found under " + root.string());
  s.identity = stats(ids);
  s.lip_sync = stats(lips);
  return s;
}

json DatasetSummary::to_json() const {
  json j;
  j["clips"] = rows.size();
  j["failures"] = failures();
  j["identity_similarity_min"] = stats_json(identity);
  j["lip_sync_r"] = stats_json(lip_sync);
  auto& rs = j["rows"] = json::array();
  for (const auto& r : rows)
    rs.push_back({{"subject", r.subject},
                  {"clip", r.clip},
                  {"pass", r.pass},
                  {"identity_min", opt(r.identity_min)},
                  {"lip_sync_r", opt(r.lip_sync_r)},
                  {"histogram_nonzero", opt(r.histogram_nonzero)}});
  j["missing_quality"] = missing;
  j["warnings"] = warnings;
  return j;
}

std::string DatasetSummary::format() const {
  std::ostringstream out;
  char buf[256];
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  std::snprintf(buf, sizeof buf, "%-24s %-14s %-5s %9s %9s %9s\n", "subject", "clip", "pass", "identity", "lipsync",
                "hist>0");
  out << buf;
  const auto f = [](const std::optional<double>& v) {
    char b[32];
    if (v) std::snprintf(b, sizeof b, "%.4f", *v);
    else std::snprintf(b, sizeof b, "-");
    return std::string(b);
  };
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %-14s %-5s %9s %9s %9s\n", r.subject.c_str(), r.clip.c_str(),
                  r.pass ? "yes" : "NO", f(r.identity_min).c_str(), f(r.lip_sync_r).c_str(),
                  f(r.histogram_nonzero).c_str());
    out << buf;
  }
  for (const auto& m : missing) out << "missing quality.json: " << m << "\n";
  std::snprintf(buf, sizeof buf, "clips %zu  failures %zu  missing %zu\n", rows.size(), failures(), missing.size());
  out << buf;
  if (identity.n) {
    std::snprintf(buf, sizeof buf, "identity min/mean/max %.4f %.4f %.4f\n", identity.min, identity.mean, identity.max);
    out << buf;
  }
  if (lip_sync.n) {
    std::snprintf(buf, sizeof buf, "lip-sync r min/mean/max %.4f %.4f %.4f\n", lip_sync.min, lip_sync.mean, lip_sync.max);
    out << buf;
  }
  return out.str();
}

json default_manifest_json() {
  json subjects = json::array();
  for (int i = 1; i <= 20; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "subject_%02d", i);
    subjects.push_back({{"id", id},
                        {"face", {{"generated", i}}},
                        {"voice", {{"profile", "adult"}, {"profile_seed", i}, {"childify", json::object()}}}});
  }
  return {{"global_seed", 2024},
          {"fps", anim::kDefaultFps},
          {"sample_rate", audio::kDefaultSampleRate},
          {"workers", 1},
          {"sentences", json::array({kDefaultSentence})},
          {"subjects", subjects},
          {"animation", {{"blinks", true}, {"pose_amplitude_deg", 3.0}}},
          {"quality", quality::Thresholds{}}};
}

}  // namespace forge::pipeline
