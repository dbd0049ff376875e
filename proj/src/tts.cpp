#include "forge/tts.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "forge/error.hpp"
#include "forge/rng.hpp"

namespace forge::tts {
namespace {

constexpr double kPi = std::numbers::pi;

struct PhoneTarget {
  double f1, f2;    // Hz, before formant scaling
  double bw1, bw2;  // Hz
  double gain;
};

// (F1, F2) per class. Textbook adult-male averages; only their relative
// layout matters here.
PhoneTarget target_for(PhoneClass c) {
  switch (c) {
    case PhoneClass::kVowelA: return {730, 1090, 90, 110, 1.0};
    case PhoneClass::kVowelE: return {530, 1840, 80, 120, 0.9};
    case PhoneClass::kVowelI: return {300, 2290, 70, 130, 0.8};
    case PhoneClass::kVowelO: return {570, 840, 80, 100, 0.95};
    case PhoneClass::kVowelU: return {300, 870, 70, 100, 0.8};
    case PhoneClass::kVoicedConsonant: return {250, 1200, 100, 200, 0.35};
    case PhoneClass::kUnvoicedConsonant: return {3500, 5000, 1200, 1500, 0.5};
    case PhoneClass::kPause: return {500, 1500, 100, 150, 0.0};
  }
  return {500, 1500, 100, 150, 0.0};
}

PhoneClass classify(char raw) {
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
  switch (c) {
    case 'a': return PhoneClass::kVowelA;
    case 'e': return PhoneClass::kVowelE;
    case 'i':
    case 'y': return PhoneClass::kVowelI;
    case 'o': return PhoneClass::kVowelO;
    case 'u': return PhoneClass::kVowelU;
    case 'b': case 'd': case 'g': case 'j': case 'l': case 'm':
    case 'n': case 'r': case 'v': case 'w': case 'z':
      return PhoneClass::kVoicedConsonant;
    case 'c': case 'f': case 'h': case 'k': case 'p': case 'q':
    case 's': case 't': case 'x':
      return PhoneClass::kUnvoicedConsonant;
    default: return PhoneClass::kPause;
  }
}

// Two-pole resonator with unity gain at DC.
class Resonator {
 public:
  double step(double x, double freq, double bw, double rate) {
    const double r = std::exp(-kPi * bw / rate);
    const double b = 2.0 * r * std::cos(2.0 * kPi * freq / rate);
    const double c = -r * r;
    const double a = 1.0 - b - c;
    const double y = a * x + b * y1_ + c * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double y1_ = 0.0, y2_ = 0.0;
};

// Rosenberg glottal flow over one period, phase in [0, 1).
double glottal_flow(double phase) {
  constexpr double kOpen = 0.4, kClose = 0.16;
  if (phase < kOpen) return 0.5 * (1.0 - std::cos(kPi * phase / kOpen));
  if (phase < kOpen + kClose) return std::cos(0.5 * kPi * (phase - kOpen) / kClose);
  return 0.0;
}

}  // namespace

void VoiceProfile::validate() const {
  if (!(f0_base > 0.0) || !std::isfinite(f0_base)) throw ValidationError("f0_base must be positive");
  if (!(f0_jitter >= 0.0 && f0_jitter < 0.5)) throw ValidationError("f0_jitter must be in [0, 0.5)");
  if (!(formant_scale > 0.0) || !std::isfinite(formant_scale))
    throw ValidationError("formant_scale must be positive");
  if (!(speaking_rate > 0.0) || !std::isfinite(speaking_rate))
    throw ValidationError("speaking_rate must be positive");
}

bool is_vowel(PhoneClass c) {
  return c == PhoneClass::kVowelA || c == PhoneClass::kVowelE || c == PhoneClass::kVowelI ||
         c == PhoneClass::kVowelO || c == PhoneClass::kVowelU;
}

bool is_voiced(PhoneClass c) { return is_vowel(c) || c == PhoneClass::kVoicedConsonant; }

double PhoneSequence::total_duration() const {
  double t = 0.0;
  for (const auto& p : phones) t += p.duration_s;
  return t;
}

PhoneSequence text_to_phones(std::string_view text, double speaking_rate) {
  if (!(speaking_rate > 0.0)) throw ValidationError("speaking rate must be positive");
  PhoneSequence seq;
  seq.phones.reserve(text.size());
  for (char c : text) seq.phones.push_back({classify(c), 1.0 / speaking_rate});
  return seq;
}

audio::AudioClip FormantSynthesizer::synthesize(std::string_view text, const VoiceProfile& profile,
                                                int sample_rate, std::uint64_t seed) const {
  profile.validate();
  if (sample_rate < 8000) throw ValidationError("sample rate must be >= 8000");
  const auto seq = text_to_phones(text, profile.speaking_rate);
  audio::AudioClip clip;
  clip.sample_rate = sample_rate;
  if (seq.phones.empty()) return clip;

  const double rate = sample_rate;
  // Phone boundaries on the sample grid from cumulative time.
  std::vector<std::size_t> bounds{0};
  double t = 0.0;
  for (const auto& p : seq.phones) {
    t += p.duration_s;
    bounds.push_back(static_cast<std::size_t>(std::llround(t * rate)));
  }
  clip.samples.assign(bounds.back(), 0.0);

  Rng rng(mix64(seed) ^ fnv1a(profile.name));
  const double nyq_guard = 0.45 * rate;
  const double smooth_formant = 1.0 - std::exp(-1.0 / (0.012 * rate));
  const double smooth_gain = 1.0 - std::exp(-1.0 / (0.006 * rate));
  Resonator r1, r2;
  double phase = 0.0;
  double period_f0 = profile.f0_base;
  double prev_flow = 0.0;
  auto first = target_for(seq.phones.front().cls);
  double f1 = first.f1, f2 = first.f2, gain = 0.0;

  for (std::size_t p = 0; p < seq.phones.size(); ++p) {
    const PhoneClass cls = seq.phones[p].cls;
    const PhoneTarget tgt = target_for(cls);
    const double scale = cls == PhoneClass::kUnvoicedConsonant ? 1.0 : profile.formant_scale;
    const double tf1 = std::min(tgt.f1 * scale, nyq_guard);
    const double tf2 = std::min(tgt.f2 * scale, nyq_guard);
    for (std::size_t n = bounds[p]; n < bounds[p + 1]; ++n) {
      phase += period_f0 / rate;
      if (phase >= 1.0) {
        phase -= 1.0;
        period_f0 = profile.f0_base * (1.0 + profile.f0_jitter * rng.uniform(-1.0, 1.0));
      }
      const double flow = glottal_flow(phase);
      // Lip radiation: first difference of the flow.
      const double voiced = (flow - prev_flow) * 8.0;
      prev_flow = flow;
      const double noise = rng.uniform(-1.0, 1.0);

      f1 += smooth_formant * (tf1 - f1);
      f2 += smooth_formant * (tf2 - f2);
      gain += smooth_gain * (tgt.gain - gain);

      double source = 0.0;
      if (is_voiced(cls)) source = voiced;
      else if (cls == PhoneClass::kUnvoicedConsonant) source = noise;
      const double y = r2.step(r1.step(source * gain, f1, tgt.bw1, rate), f2, tgt.bw2, rate);
      clip.samples[n] = y;
    }
  }

  const double peak = audio::peak_abs(clip.samples);
  if (peak > 0.0)
    for (double& x : clip.samples) x *= kPeakLevel / peak;
  return clip;
}

audio::AudioClip PrerenderedAudio::synthesize(std::string_view, const VoiceProfile&,
                                              int sample_rate, std::uint64_t) const {
  return audio::resample(clip_, sample_rate);
}

audio::AudioClip synthesize(std::string_view text, const VoiceProfile& profile, int sample_rate,
                            std::uint64_t seed) {
  return FormantSynthesizer{}.synthesize(text, profile, sample_rate, seed);
}

namespace {

VoiceProfile draw_profile(const ProfileRanges& r, std::uint64_t stream, std::string name) {
  Rng rng(mix64(stream));
  VoiceProfile p;
  p.name = std::move(name);
  p.f0_base = rng.uniform(r.f0_lo, r.f0_hi);
  p.formant_scale = rng.uniform(r.formant_lo, r.formant_hi);
  p.speaking_rate = rng.uniform(r.rate_lo, r.rate_hi);
  p.f0_jitter = rng.uniform(0.005, 0.015);
  return p;
}

}  // namespace

VoiceProfile child_profile(std::uint64_t seed) {
  return draw_profile(kChildRanges, seed ^ 0x6368696c64ULL, "child-" + std::to_string(seed));
}

VoiceProfile adult_profile(std::uint64_t seed) {
  return draw_profile(kAdultRanges, seed ^ 0x6164756c74ULL, "adult-" + std::to_string(seed));
}

VoiceProfile read_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  VoiceProfile p;
  p.name = path.stem().string();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "name") p.name = value;
      else if (key == "f0_base") p.f0_base = std::stod(value);
      else if (key == "f0_jitter") p.f0_jitter = std::stod(value);
      else if (key == "formant_scale") p.formant_scale = std::stod(value);
      else if (key == "speaking_rate") p.speaking_rate = std::stod(value);
      else throw FormatError(path.string() + ": unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number for " + key);
    }
  }
  p.validate();
  return p;
}

void write_profile(const VoiceProfile& profile, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "name=" << profile.name << "\nf0_base=" << profile.f0_base
      << "\nf0_jitter=" << profile.f0_jitter << "\nformant_scale=" << profile.formant_scale
      << "\nspeaking_rate=" << profile.speaking_rate << '\n';
}

}  // namespace forge::tts
