#include "forge/voice.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "fft.hpp"
#include "forge/error.hpp"

namespace forge::voice {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double princarg(double phase) { return phase - kTwoPi * std::round(phase / kTwoPi); }

void check_config(const VocoderConfig& config) {
  if (config.frame_len < 16 || (config.frame_len & (config.frame_len - 1)) != 0)
    throw ValidationError("vocoder frame length must be a power of two");
  if (config.analysis_hop == 0 || config.analysis_hop > config.frame_len / 2)
    throw ValidationError("vocoder analysis hop must be in [1, frame_len/2]");
}

// Peaks are bins larger than their two neighbours on each side.
std::vector<std::size_t> find_peaks(const std::vector<double>& mag) {
  std::vector<std::size_t> peaks;
  const std::size_t n = mag.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double m = mag[k];
    if (m <= 0.0) continue;
    bool peak = true;
    for (std::size_t d = 1; d <= 2 && peak; ++d) {
      if (k >= d && mag[k - d] >= m) peak = false;
      if (k + d < n && mag[k + d] > m) peak = false;
    }
    if (peak) peaks.push_back(k);
  }
  return peaks;
}

}  // namespace

// ---------------------------------------------------------------------------
// BreakpointFunction

BreakpointFunction::BreakpointFunction(std::vector<std::pair<double, double>> points)
    : points_(std::move(points)) {
  if (points_.empty()) throw ValidationError("breakpoint function needs at least one point");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto [t, v] = points_[i];
    if (!std::isfinite(t) || !std::isfinite(v))
      throw ValidationError("breakpoint values must be finite");
    if (!(v > 0.0)) throw ValidationError("breakpoint factors must be positive");
    if (i > 0 && !(t > points_[i - 1].first))
      throw ValidationError("breakpoint times must strictly increase");
  }
}

double BreakpointFunction::operator()(double t) const {
  if (t <= points_.front().first) return points_.front().second;
  if (t >= points_.back().first) return points_.back().second;
  const auto it = std::upper_bound(points_.begin(), points_.end(), t,
                                   [](double x, const auto& p) { return x < p.first; });
  const auto& [t1, v1] = *it;
  const auto& [t0, v0] = *(it - 1);
  return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
}

double BreakpointFunction::integral(double duration) const {
  // Integrate the piecewise-linear curve segment by segment; every kink lies
  // on a breakpoint, so the trapezoid rule between kinks is exact.
  std::vector<double> knots{0.0};
  for (const auto& [t, v] : points_)
    if (t > 0.0 && t < duration) knots.push_back(t);
  knots.push_back(duration);
  double acc = 0.0;
  for (std::size_t i = 1; i < knots.size(); ++i)
    acc += 0.5 * ((*this)(knots[i - 1]) + (*this)(knots[i])) * (knots[i] - knots[i - 1]);
  return acc;
}

bool BreakpointFunction::is_constant() const {
  return std::all_of(points_.begin(), points_.end(),
                     [&](const auto& p) { return p.second == points_.front().second; });
}

void BreakpointFunction::check_within(double duration) const {
  constexpr double kSlack = 1e-9;
  for (const auto& [t, v] : points_)
    if (t < -kSlack || t > duration + kSlack)
      throw ValidationError("breakpoint time " + std::to_string(t) + " s outside clip of " +
                            std::to_string(duration) + " s");
}

BreakpointFunction read_bpf(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::pair<double, double>> points;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    double t, v;
    if (!(ss >> t)) continue;
    if (!(ss >> v))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'time factor'");
    points.emplace_back(t, v);
  }
  return BreakpointFunction(std::move(points));
}

// ---------------------------------------------------------------------------
// Phase vocoder

audio::AudioClip time_stretch(const audio::AudioClip& clip, double factor,
                              const VocoderConfig& config) {
  if (!(factor > 0.0) || !std::isfinite(factor))
    throw ValidationError("stretch factor must be positive, got " + std::to_string(factor));
  return time_stretch(clip, BreakpointFunction::constant(factor), config);
}

audio::AudioClip time_stretch(const audio::AudioClip& clip, const BreakpointFunction& factor,
                              const VocoderConfig& config) {
  audio::validate(clip);
  check_config(config);
  if (factor.is_constant() && factor.points().front().second == 1.0) return clip;
  const double duration = clip.duration_seconds();
  if (factor.points().size() > 1) factor.check_within(duration);

  const double rate = clip.sample_rate;
  const std::size_t n = config.frame_len;
  const std::size_t half = n / 2;
  const std::size_t ha = config.analysis_hop;
  const std::size_t len = clip.size();
  const auto out_len = static_cast<std::size_t>(std::llround(factor.integral(duration) * rate));

  audio::AudioClip out;
  out.sample_rate = clip.sample_rate;
  if (len == 0 || out_len == 0) return out;

  // Analysis frames are centred on m*ha, m = 0..frames-1, zero-padded at the
  // ends; synthesis centres accumulate ha * factor by the trapezoid rule.
  const std::size_t frames = (len + ha - 1) / ha + 1;
  std::vector<double> alpha(frames);
  for (std::size_t m = 0; m < frames; ++m) alpha[m] = factor(static_cast<double>(m * ha) / rate);
  std::vector<long long> centers(frames);
  double s = 0.0;
  for (std::size_t m = 0; m < frames; ++m) {
    if (m > 0) s += static_cast<double>(ha) * 0.5 * (alpha[m - 1] + alpha[m]);
    centers[m] = std::llround(s);
  }

  const auto window = audio::make_window(audio::Window::kHann, n);
  const std::size_t bins = n / 2 + 1;
  const std::size_t buf_len = static_cast<std::size_t>(std::max<long long>(centers.back(), static_cast<long long>(out_len))) + n + 1;
  std::vector<double> acc(buf_len, 0.0), wsum(buf_len, 0.0);
  std::vector<double> frame(n), mag(bins), phase(bins), prev_phase(bins, 0.0), synth_phase(bins, 0.0);
  std::vector<std::complex<double>> spec(bins);
  std::vector<double> omega(bins);
  detail::RealFft fft(n);

  for (std::size_t m = 0; m < frames; ++m) {
    const auto start = static_cast<long long>(m * ha) - static_cast<long long>(half);
    for (std::size_t i = 0; i < n; ++i) {
      const long long idx = start + static_cast<long long>(i);
      frame[i] = (idx >= 0 && idx < static_cast<long long>(len)) ? clip.samples[static_cast<std::size_t>(idx)] * window[i] : 0.0;
    }
    fft.forward(frame, spec);
    for (std::size_t k = 0; k < bins; ++k) {
      mag[k] = std::abs(spec[k]);
      phase[k] = std::arg(spec[k]);
    }

    if (m == 0) {
      synth_phase = phase;
    } else {
      const double hs = static_cast<double>(centers[m] - centers[m - 1]);
      for (std::size_t k = 0; k < bins; ++k) {
        const double expected = kTwoPi * static_cast<double>(k * ha) / static_cast<double>(n);
        omega[k] = kTwoPi * static_cast<double>(k) / static_cast<double>(n) +
                   princarg(phase[k] - prev_phase[k] - expected) / static_cast<double>(ha);
      }
      const auto peaks = find_peaks(mag);
      if (peaks.empty()) {
        for (std::size_t k = 0; k < bins; ++k) synth_phase[k] = princarg(synth_phase[k] + omega[k] * hs);
      } else {
        // Identity phase locking: peak bins advance by their own frequency,
        // the bins they dominate keep their analysis phase offset.
        std::vector<double> locked(bins);
        for (std::size_t p : peaks) locked[p] = princarg(synth_phase[p] + omega[p] * hs);
        std::size_t region_start = 0;
        for (std::size_t pi = 0; pi < peaks.size(); ++pi) {
          const std::size_t p = peaks[pi];
          std::size_t region_end = bins;
          if (pi + 1 < peaks.size()) {
            const std::size_t q = peaks[pi + 1];
            region_end = p + 1;
            for (std::size_t k = p + 1; k < q; ++k)
              if (mag[k] < mag[region_end]) region_end = k;
          }
          for (std::size_t k = region_start; k < region_end; ++k)
            if (k != p) locked[k] = princarg(locked[p] + phase[k] - phase[p]);
          region_start = region_end;
        }
        synth_phase = std::move(locked);
      }
    }
    prev_phase = phase;

    for (std::size_t k = 0; k < bins; ++k) spec[k] = std::polar(mag[k], synth_phase[k]);
    fft.inverse(spec, frame);
    // Buffer index 0 corresponds to output sample -half.
    const auto base = static_cast<std::size_t>(centers[m]);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = base + i;
      if (j >= buf_len) break;
      acc[j] += frame[i] * window[i];
      wsum[j] += window[i] * window[i];
    }
  }

  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t j = i + half;
    out.samples[i] = wsum[j] > 1e-6 ? acc[j] / wsum[j] : 0.0;
  }
  return out;
}

audio::AudioClip pitch_shift(const audio::AudioClip& clip, double semitones,
                             const VocoderConfig& config) {
  if (!std::isfinite(semitones)) throw ValidationError("semitones must be finite");
  audio::validate(clip);
  if (semitones == 0.0) return clip;
  return pitch_shift(clip, BreakpointFunction::constant(std::exp2(semitones / 12.0)), config);
}

audio::AudioClip pitch_shift(const audio::AudioClip& clip, const BreakpointFunction& ratio,
                             const VocoderConfig& config) {
  audio::validate(clip);
  if (ratio.is_constant() && ratio.points().front().second == 1.0) return clip;
  const auto stretched = time_stretch(clip, ratio, config);
  // Read the stretched signal back at the original sample clock: output
  // sample n sits at the stretched time of input sample n.
  const double rate = clip.sample_rate;
  const std::size_t len = clip.size();
  std::vector<double> positions(len), steps(len);
  double p = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    positions[i] = p;
    steps[i] = ratio(static_cast<double>(i) / rate);
    p += ratio((static_cast<double>(i) + 0.5) / rate);
  }
  return audio::AudioClip{audio::resample_at(stretched.samples, positions, steps), clip.sample_rate};
}

// ---------------------------------------------------------------------------
// Childify

void ChildifyParams::validate() const {
  if (!std::isfinite(pitch_up_semitones) || pitch_up_semitones < 0.0)
    throw ValidationError("pitch_up_semitones must be >= 0");
  if (!(rate_factor > 0.0 && rate_factor <= 1.0))
    throw ValidationError("rate_factor must be in (0, 1]");
  if (rate_bpf)
    for (const auto& [t, f] : rate_bpf->points())
      if (f > 1.0) throw ValidationError("rate curve factors must be in (0, 1]");
}

audio::AudioClip childify(const audio::AudioClip& adult, const ChildifyParams& params,
                          const VocoderConfig& config) {
  params.validate();
  audio::validate(adult);
  const auto raised = params.pitch_bpf ? pitch_shift(adult, *params.pitch_bpf, config)
                                       : pitch_shift(adult, params.pitch_up_semitones, config);
  if (params.rate_bpf) {
    // Rate factors convert pointwise to stretch factors.
    std::vector<std::pair<double, double>> stretch;
    for (const auto& [t, f] : params.rate_bpf->points()) stretch.emplace_back(t, 1.0 / f);
    return time_stretch(raised, BreakpointFunction(std::move(stretch)), config);
  }
  return time_stretch(raised, 1.0 / params.rate_factor, config);
}

}  // namespace forge::voice
