#include "forge/quality.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace forge::quality {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("pearson: series lengths differ");
  if (a.size() < 2) throw UndefinedCorrelationError("pearson: need at least two samples");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const auto flat = [n](double ss, double m) { return ss <= n * 1e-24 * std::max(1.0, m * m); };
  if (flat(saa, ma)) throw UndefinedCorrelationError("correlation undefined: first series is constant");
  if (flat(sbb, mb)) throw UndefinedCorrelationError("correlation undefined: second series is constant");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Box face_box(const render::Landmarks2D& pts, double margin_frac, int width, int height) {
  Box b{pts.col(0).minCoeff(), pts.col(1).minCoeff(), pts.col(0).maxCoeff(), pts.col(1).maxCoeff()};
  const double mx = margin_frac * b.width(), my = margin_frac * b.height();
  b.x0 -= mx;
  b.x1 += mx;
  b.y0 -= my;
  b.y1 += my;
  if (width > 0 && height > 0) {
    b.x0 = std::clamp(b.x0, 0.0, width - 1.0);
    b.x1 = std::clamp(b.x1, 0.0, width - 1.0);
    b.y0 = std::clamp(b.y0, 0.0, height - 1.0);
    b.y1 = std::clamp(b.y1, 0.0, height - 1.0);
  }
  return b;
}

std::vector<std::size_t> SanityResult::flagged_frames() const {
  std::set<std::size_t> s;
  for (const auto& v : violations) s.insert(v.frame);
  return {s.begin(), s.end()};
}

namespace {

Eigen::Vector2d centroid(const render::Landmarks2D& p, int begin, int end) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (int i = begin; i < end; ++i) c += p.row(i).transpose();
  return c / (end - begin);
}

}  // namespace

SanityResult landmark_sanity(const std::vector<render::Landmarks2D>& frames, int width, int height) {
  SanityResult r;
  r.frames = frames.size();
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& p = frames[f];
    if (!p.allFinite()) {
      r.violations.push_back({f, "finite", "non-finite landmark"});
      continue;
    }
    for (int i = 0; i < anim::kNumLandmarks; ++i) {
      const double x = p(i, 0), y = p(i, 1);
      if (x < 0 || y < 0 || x > width - 1 || y > height - 1) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "landmark %d at (%.2f, %.2f)", i, x, y);
        r.violations.push_back({f, "bounds", buf});
      }
    }
    const Eigen::Vector2d eyes = centroid(p, anim::kEyes.begin, anim::kEyes.end);
    const Eigen::Vector2d mouth = centroid(p, anim::kOuterLips.begin, anim::kInnerLips.end);
    if (!(eyes.y() < mouth.y())) r.violations.push_back({f, "eyes_above_mouth", "eye centroid not above mouth"});
    const double iod = (centroid(p, 36, 42) - centroid(p, 42, 48)).norm();
    if (!(iod > 0)) r.violations.push_back({f, "interocular", "zero inter-ocular distance"});
  }
  return r;
}

namespace {

constexpr int kGrid = 16;
constexpr int kOrientBins = 8;

double sample(const std::vector<double>& g, int w, int h, double x, double y) {
  x = std::clamp(x, 0.0, w - 1.0);
  y = std::clamp(y, 0.0, h - 1.0);
  const int x0 = std::min(static_cast<int>(x), w - 2 < 0 ? 0 : w - 2);
  const int y0 = std::min(static_cast<int>(y), h - 2 < 0 ? 0 : h - 2);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  const auto at = [&](int xx, int yy) { return g[static_cast<std::size_t>(yy) * w + xx]; };
  return (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1 - fx) * at(x0, y1) + fx * at(x1, y1));
}

void standardize(std::vector<double>::iterator begin, std::vector<double>::iterator end) {
  const double n = static_cast<double>(end - begin);
  const double mean = std::accumulate(begin, end, 0.0) / n;
  double ss = 0;
  for (auto it = begin; it != end; ++it) {
    *it -= mean;
    ss += *it * *it;
  }
  const double rms = std::sqrt(ss / n);
  if (rms > 1e-12)
    for (auto it = begin; it != end; ++it) *it /= rms;
  else
    std::fill(begin, end, 0.0);
}

}  // namespace

std::vector<double> identity_descriptor(const render::Image& image, const render::Landmarks2D& landmarks) {
  if (image.width < 2 || image.height < 2) throw ValidationError("identity descriptor needs at least a 2x2 image");
  const auto g = render::grayscale(image);
  const int w = image.width, h = image.height;
  const Box b = face_box(landmarks, 0.1, w, h);
  std::vector<double> d(kGrid * kGrid + kOrientBins, 0.0);

  // Cell means from 4x4 bilinear taps per cell.
  constexpr int kTaps = 4;
  const double cw = b.width() / kGrid, ch = b.height() / kGrid;
  for (int r = 0; r < kGrid; ++r)
    for (int c = 0; c < kGrid; ++c) {
      double s = 0;
      for (int ty = 0; ty < kTaps; ++ty)
        for (int tx = 0; tx < kTaps; ++tx)
          s += sample(g, w, h, b.x0 + (c + (tx + 0.5) / kTaps) * cw, b.y0 + (r + (ty + 0.5) / kTaps) * ch);
      d[static_cast<std::size_t>(r * kGrid + c)] = s / (kTaps * kTaps);
    }

  const int xa = std::max(1, static_cast<int>(std::ceil(b.x0))), xb = std::min(w - 2, static_cast<int>(b.x1));
  const int ya = std::max(1, static_cast<int>(std::ceil(b.y0))), yb = std::min(h - 2, static_cast<int>(b.y1));
  for (int y = ya; y <= yb; ++y)
    for (int x = xa; x <= xb; ++x) {
      const auto at = [&](int xx, int yy) { return g[static_cast<std::size_t>(yy) * w + xx]; };
      const double gx = at(x + 1, y) - at(x - 1, y), gy = at(x, y + 1) - at(x, y - 1);
      const double mag = std::hypot(gx, gy);
      if (mag == 0) continue;
      const double a = std::atan2(gy, gx) + std::numbers::pi;
      const int bin = std::min(kOrientBins - 1, static_cast<int>(a / (2 * std::numbers::pi) * kOrientBins));
      d[static_cast<std::size_t>(kGrid * kGrid + bin)] += mag;
    }

  standardize(d.begin(), d.begin() + kGrid * kGrid);
  standardize(d.begin() + kGrid * kGrid, d.end());
  const double norm = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
  if (norm > 0)
    for (double& v : d) v /= norm;
  return d;
}

IdentityResult identity_similarity(const std::vector<render::Image>& frames, const render::SeedFace& seed,
                                   const std::vector<render::Landmarks2D>* landmarks) {
  if (frames.empty()) throw ValidationError("identity similarity needs at least one frame");
  if (landmarks && landmarks->size() != frames.size())
    throw ValidationError("identity similarity: landmark and frame counts differ");
  const auto ref = identity_descriptor(seed.image, seed.landmarks);
  IdentityResult r;
  r.per_frame.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto d = identity_descriptor(frames[i], landmarks ? (*landmarks)[i] : seed.landmarks);
    r.per_frame.push_back(std::clamp(std::inner_product(d.begin(), d.end(), ref.begin(), 0.0), -1.0, 1.0));
  }
  r.min = *std::min_element(r.per_frame.begin(), r.per_frame.end());
  r.mean = std::accumulate(r.per_frame.begin(), r.per_frame.end(), 0.0) / static_cast<double>(r.per_frame.size());
  return r;
}

double lip_sync_score(const anim::LandmarkSequence& seq, const audio::AudioClip& clip, int fps) {
  const auto open = anim::mouth_openings(seq);
  const auto env = anim::lip_sync_envelope(clip, fps);
  if (open.size() != env.values.size())
    throw ValidationError("lip sync: " + std::to_string(open.size()) + " frames but " +
                          std::to_string(env.values.size()) + " envelope values");
  return pearson(open, env.values);
}

double HistogramResult::nonzero_fraction() const {
  if (l1.empty()) return 0.0;
  const auto n = std::count_if(l1.begin(), l1.end(), [](std::uint64_t v) { return v > 0; });
  return static_cast<double>(n) / static_cast<double>(l1.size());
}

HistogramResult frame_histograms(const std::vector<render::Image>& frames) {
  HistogramResult r;
  r.histograms.reserve(frames.size());
  for (const auto& f : frames) {
    if (f.width != frames.front().width || f.height != frames.front().height)
      throw ValidationError("frame histograms: frame sizes differ");
    FrameHistogram h{};
    for (std::size_t i = 0; i < f.data.size(); i += 3)
      for (std::size_t c = 0; c < 3; ++c) ++h[c][f.data[i + c]];
    r.histograms.push_back(h);
  }
  for (std::size_t i = 1; i < r.histograms.size(); ++i) {
    std::uint64_t d = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < 256; ++k) {
        const auto a = r.histograms[i - 1][c][k], b = r.histograms[i][c][k];
        d += a > b ? a - b : b - a;
      }
    r.l1.push_back(d);
  }
  return r;
}

void to_json(nlohmann::json& j, const Thresholds& t) {
  j = {{"identity_min", t.identity_min},
       {"lip_sync_min", t.lip_sync_min},
       {"histogram_nonzero_min", t.histogram_nonzero_min}};
}

void from_json(const nlohmann::json& j, Thresholds& t) {
  t.identity_min = j.value("identity_min", t.identity_min);
  t.lip_sync_min = j.value("lip_sync_min", t.lip_sync_min);
  t.histogram_nonzero_min = j.value("histogram_nonzero_min", t.histogram_nonzero_min);
}

bool QualityReport::pass() const {
  return std::all_of(metrics.begin(), metrics.end(), [](const MetricEntry& m) { return m.pass; });
}

const MetricEntry* QualityReport::find(const std::string& name) const {
  for (const auto& m : metrics)
    if (m.name == name) return &m;
  return nullptr;
}

nlohmann::json QualityReport::to_json() const {
  nlohmann::json j;
  j["pass"] = pass();
  j["thresholds"] = thresholds;
  auto& ms = j["metrics"] = nlohmann::json::array();
  for (const auto& m : metrics) {
    nlohmann::json e{{"name", m.name}, {"pass", m.pass}};
    e["value"] = std::isfinite(m.value) ? nlohmann::json(m.value) : nlohmann::json(nullptr);
    e["threshold"] = m.threshold ? nlohmann::json(*m.threshold) : nlohmann::json(nullptr);
    ms.push_back(std::move(e));
  }
  j["flagged_frames"] = flagged_frames;
  j["errors"] = errors;
  return j;
}

QualityReport QualityReport::from_json(const nlohmann::json& j) {
  try {
    QualityReport r;
    r.thresholds = j.at("thresholds").get<Thresholds>();
    for (const auto& e : j.at("metrics")) {
      MetricEntry m;
      m.name = e.at("name").get<std::string>();
      m.pass = e.at("pass").get<bool>();
      m.value = e.at("value").is_null() ? std::nan("") : e.at("value").get<double>();
      if (!e.at("threshold").is_null()) m.threshold = e.at("threshold").get<double>();
      r.metrics.push_back(std::move(m));
    }
    r.flagged_frames = j.at("flagged_frames").get<std::vector<std::size_t>>();
    r.errors = j.value("errors", std::vector<std::string>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("quality report: ") + e.what());
  }
}

QualityReport evaluate(const ClipInputs& in, const Thresholds& thresholds) {
  if (!in.seed || !in.frames || !in.landmarks2d || !in.landmarks || !in.audio)
    throw ValidationError("evaluate: missing clip inputs");
  QualityReport r;
  r.thresholds = thresholds;
  std::set<std::size_t> flagged(in.render_flags.begin(), in.render_flags.end());
  const int w = in.seed->image.width, h = in.seed->image.height;

  const auto guarded = [&](const std::string& name, std::optional<double> threshold, auto&& fn) {
    try {
      const double v = fn();
      r.metrics.push_back({name, v, threshold, !threshold || v >= *threshold});
    } catch (const Error& e) {
      r.metrics.push_back({name, std::nan(""), threshold, !threshold});
      r.errors.push_back(name + ": " + e.what());
    }
  };

  guarded("landmark_sanity", 1.0, [&] {
    const auto s = landmark_sanity(*in.landmarks2d, w, h);
    const auto bad = s.flagged_frames();
    flagged.insert(bad.begin(), bad.end());
    return s.frames ? 1.0 - static_cast<double>(bad.size()) / static_cast<double>(s.frames) : 0.0;
  });
  guarded("face_box_coverage", 1.0, [&] {
    std::size_t ok = 0;
    for (const auto& p : *in.landmarks2d) {
      const Box b = face_box(p, 0.1, w, h);
      bool all = true;
      for (int i = 0; i < anim::kNumLandmarks; ++i) all = all && b.contains(p(i, 0), p(i, 1));
      ok += all;
    }
    return in.landmarks2d->empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(in.landmarks2d->size());
  });
  IdentityResult id;
  guarded("identity_similarity_min", thresholds.identity_min, [&] {
    id = identity_similarity(*in.frames, *in.seed, in.landmarks2d);
    for (std::size_t i = 0; i < id.per_frame.size(); ++i)
      if (id.per_frame[i] < thresholds.identity_min) flagged.insert(i);
    return id.min;
  });
  if (!id.per_frame.empty()) r.metrics.push_back({"identity_similarity_mean", id.mean, std::nullopt, true});
  guarded("lip_sync_r", thresholds.lip_sync_min, [&] { return lip_sync_score(*in.landmarks, *in.audio, in.landmarks->fps); });
  HistogramResult hist;
  guarded("histogram_nonzero_fraction", thresholds.histogram_nonzero_min, [&] {
    hist = frame_histograms(*in.frames);
    return hist.nonzero_fraction();
  });
  if (!hist.l1.empty()) {
    const double mean = std::accumulate(hist.l1.begin(), hist.l1.end(), 0.0) / static_cast<double>(hist.l1.size());
    r.metrics.push_back({"histogram_l1_mean", mean, std::nullopt, true});
  }
  r.metrics.push_back({"render_flagged_frames", static_cast<double>(in.render_flags.size()), std::nullopt, true});
  r.flagged_frames.assign(flagged.begin(), flagged.end());
  return r;
}

// ---------------------------------------------------------------------------
// Survey

namespace {

bool bad_field(const std::string& s) { return s.find_first_of(",;\r\n\"") != std::string::npos; }

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

constexpr const char* kSurveyHeader = "timestamp,participant,clip,q1,q2,q3";

}  // namespace

void MosResponse::validate() const {
  if (participant.empty()) throw ValidationError("survey response needs a participant id");
  if (bad_field(participant)) throw ValidationError("participant id may not contain , ; quotes or newlines");
  if (bad_field(timestamp)) throw ValidationError("malformed timestamp");
  for (const auto& c : clips)
    if (c.empty() || bad_field(c)) throw ValidationError("clip reference '" + c + "' is empty or has , ; quotes or newlines");
}

bool parse_answer(const std::string& s) {
  std::string t;
  for (char c : s) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "agree" || t == "yes" || t == "y" || t == "1") return true;
  if (t == "disagree" || t == "no" || t == "n" || t == "0") return false;
  throw ValidationError("answer '" + s + "' is not agree or disagree");
}

MosResponse collect_mos(const std::filesystem::path& survey, const std::vector<std::string>& clips,
                        const std::string& participant, const std::vector<std::string>& answers) {
  if (answers.size() != kMosQuestions.size())
    throw ValidationError("expected 3 answers, got " + std::to_string(answers.size()));
  MosResponse r;
  r.timestamp = now_utc();
  r.participant = participant;
  r.clips = clips;
  for (std::size_t i = 0; i < 3; ++i) r.agree[i] = parse_answer(answers[i]);
  append_mos(survey, r);
  return r;
}

void append_mos(const std::filesystem::path& survey, const MosResponse& response) {
  response.validate();
  std::string row = response.timestamp + "," + response.participant + ",";
  for (std::size_t i = 0; i < response.clips.size(); ++i) row += (i ? ";" : "") + response.clips[i];
  for (bool a : response.agree) row += a ? ",agree" : ",disagree";
  row += "\n";

  const int fd = ::open(survey.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open survey file " + survey.string());
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw IoError("cannot lock survey file " + survey.string());
  }
  struct stat st{};
  std::string out;
  if (::fstat(fd, &st) == 0 && st.st_size == 0) out = std::string(kSurveyHeader) + "\n";
  out += row;
  bool ok = true;
  for (std::size_t off = 0; off < out.size();) {
    const auto n = ::write(fd, out.data() + off, out.size() - off);
    if (n <= 0) {
      ok = false;
      break;
    }
    off += static_cast<std::size_t>(n);
  }
  ::flock(fd, LOCK_UN);
  ::close(fd);
  if (!ok) throw IoError("write failed for " + survey.string());
}

std::vector<MosResponse> read_mos(const std::filesystem::path& survey) {
  std::ifstream in(survey);
  if (!in) throw IoError("cannot open survey file " + survey.string());
  std::vector<MosResponse> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line == kSurveyHeader) continue;
    const auto f = split(line, ',');
    if (f.size() != 6)
      throw FormatError(survey.string() + ":" + std::to_string(lineno) + ": expected 6 fields, found " +
                        std::to_string(f.size()));
    MosResponse r;
    r.timestamp = f[0];
    r.participant = f[1];
    if (!f[2].empty()) r.clips = split(f[2], ';');
    try {
      for (std::size_t i = 0; i < 3; ++i) r.agree[i] = parse_answer(f[3 + i]);
      r.validate();
    } catch (const ValidationError& e) {
      throw FormatError(survey.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

MosSummary aggregate_mos(const std::vector<MosResponse>& responses) {
  if (responses.empty()) throw ValidationError("no survey responses to aggregate");
  MosSummary s;
  s.participants = responses.size();
  for (const auto& r : responses)
    for (std::size_t q = 0; q < 3; ++q) s.agrees[q] += r.agree[q];
  const double n = static_cast<double>(s.participants);
  for (std::size_t q = 0; q < 3; ++q) s.ratios[q] = static_cast<double>(s.agrees[q]) / n;
  s.overall = static_cast<double>(s.agrees[0] + s.agrees[1] + s.agrees[2]) / (3.0 * n);
  return s;
}

std::string format_mos(const MosSummary& s) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "participants: %zu\n", s.participants);
  out << buf;
  for (std::size_t q = 0; q < 3; ++q) {
    std::snprintf(buf, sizeof buf, "Q%zu  %zu/%zu agree  ratio %.3f  %s\n", q + 1, s.agrees[q], s.participants,
                  s.ratios[q], kMosQuestions[q]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "overall positive ratio %.3f (%.1f%%)\n", s.overall, 100 * s.overall);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "published figure %.1f%% (stated for counts 5/4/5 of 6, which give 14/18 = 77.8%%); "
                "this survey %.1f%%, difference %+.1f points\n",
                100 * kPublishedPositiveRatio, 100 * s.overall, 100 * (s.overall - kPublishedPositiveRatio));
  out << buf;
  return out.str();
}

}  // namespace forge::quality
