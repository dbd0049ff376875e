#include "forge/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <string>

#include "fft.hpp"
#include "forge/error.hpp"

namespace forge::audio {
namespace {

constexpr double kPi = std::numbers::pi;

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

// Kaiser-windowed sinc, tabulated over [0, kZeroCrossings] at kTableDensity
// points per zero crossing and linearly interpolated.
class SincTable {
 public:
  static constexpr int kZeroCrossings = 32;
  static constexpr int kTableDensity = 512;
  static constexpr double kBeta = 9.0;
  static constexpr double kRolloff = 0.95;

  SincTable() : table_(kZeroCrossings * kTableDensity + 2) {
    const double denom = bessel_i0(kBeta);
    for (std::size_t j = 0; j < table_.size(); ++j) {
      const double t = static_cast<double>(j) / kTableDensity;
      const double r = t / kZeroCrossings;
      const double win = r >= 1.0 ? 0.0 : bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / denom;
      const double sinc = t == 0.0 ? 1.0 : std::sin(kPi * t) / (kPi * t);
      table_[j] = sinc * win;
    }
  }

  double operator()(double t) const {
    const double x = std::abs(t) * kTableDensity;
    const auto i = static_cast<std::size_t>(x);
    if (i + 1 >= table_.size()) return 0.0;
    const double frac = x - static_cast<double>(i);
    return table_[i] + frac * (table_[i + 1] - table_[i]);
  }

 private:
  static double bessel_i0(double x) {
    double sum = 1.0, term = 1.0;
    const double q = x * x / 4.0;
    for (int k = 1; k < 64; ++k) {
      term *= q / (static_cast<double>(k) * k);
      sum += term;
      if (term < 1e-17 * sum) break;
    }
    return sum;
  }

  std::vector<double> table_;
};

const SincTable& sinc_table() {
  static const SincTable table;
  return table;
}

void check_frame_params(std::size_t frame_len, std::size_t hop) {
  if (frame_len < 2 || !std::has_single_bit(frame_len))
    throw ValidationError("frame length must be a power of two, got " +
                          std::to_string(frame_len));
  if (hop == 0 || hop > frame_len)
    throw ValidationError("hop must be in [1, frame_len], got " + std::to_string(hop));
}

}  // namespace

void validate(const AudioClip& clip) {
  if (clip.sample_rate <= 0)
    throw ValidationError("sample rate must be positive, got " + std::to_string(clip.sample_rate));
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    if (!std::isfinite(clip.samples[i]))
      throw ValidationError("non-finite sample at index " + std::to_string(i));
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double peak_abs(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

// ---------------------------------------------------------------------------
// WAV

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  if (bytes.size() < 12) throw fail("truncated RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  int sample_rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + 16 > bytes.size()) throw fail("truncated fmt chunk");
      const std::uint16_t format = read_u16(bytes.data() + body);
      const std::uint16_t channels = read_u16(bytes.data() + body + 2);
      sample_rate = static_cast<int>(read_u32(bytes.data() + body + 4));
      const std::uint16_t bits = read_u16(bytes.data() + body + 14);
      if (format != 1) throw UnsupportedFormatError(path.string() + ": not PCM (format tag " +
                                                    std::to_string(format) + ")");
      if (channels != 1)
        throw UnsupportedFormatError(path.string() + ": " + std::to_string(channels) +
                                     " channels, expected mono");
      if (bits != 16)
        throw UnsupportedFormatError(path.string() + ": " + std::to_string(bits) +
                                     "-bit samples, expected 16");
      if (sample_rate <= 0) throw fail("zero sample rate");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (body + len > bytes.size()) throw fail("truncated data chunk");
      data = bytes.data() + body;
      data_len = len;
      break;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (data_len % 2 != 0) throw fail("odd data length for 16-bit samples");

  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    const auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
    clip.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return clip;
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  validate(clip);
  const auto rate = static_cast<std::uint32_t>(clip.sample_rate);
  const auto data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);         // PCM
  put_u16(out, 1);         // mono
  put_u32(out, rate);
  put_u32(out, rate * 2);  // byte rate
  put_u16(out, 2);         // block align
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_len);
  for (double x : clip.samples) {
    const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Resampling

std::vector<double> resample_at(std::span<const double> input,
                                std::span<const double> positions,
                                std::span<const double> steps) {
  const SincTable& h = sinc_table();
  std::vector<double> out(positions.size(), 0.0);
  const auto n_in = static_cast<std::ptrdiff_t>(input.size());
  for (std::size_t n = 0; n < positions.size(); ++n) {
    const double p = positions[n];
    const double step = steps[n];
    const double scale = std::min(1.0, 1.0 / step) * SincTable::kRolloff;
    const double reach = SincTable::kZeroCrossings / scale;
    const auto k0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(p - reach)));
    const auto k1 = std::min<std::ptrdiff_t>(n_in - 1,
                                             static_cast<std::ptrdiff_t>(std::floor(p + reach)));
    double acc = 0.0;
    for (std::ptrdiff_t k = k0; k <= k1; ++k)
      acc += input[static_cast<std::size_t>(k)] * h(scale * (p - static_cast<double>(k)));
    out[n] = acc * scale;
  }
  return out;
}

std::vector<double> resample_ratio(std::span<const double> input, double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio))
    throw ValidationError("resample ratio must be positive and finite");
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(input.size()) * ratio));
  std::vector<double> positions(out_len), steps(out_len, 1.0 / ratio);
  for (std::size_t n = 0; n < out_len; ++n) positions[n] = static_cast<double>(n) / ratio;
  return resample_at(input, positions, steps);
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0)
    throw ValidationError("target rate must be positive, got " + std::to_string(target_rate));
  validate(clip);
  if (target_rate == clip.sample_rate) return clip;
  const auto src = static_cast<std::uint64_t>(clip.sample_rate);
  const auto dst = static_cast<std::uint64_t>(target_rate);
  const std::uint64_t out_len = (clip.samples.size() * dst + src / 2) / src;
  std::vector<double> positions(out_len), steps(out_len);
  const double step = static_cast<double>(src) / static_cast<double>(dst);
  for (std::uint64_t n = 0; n < out_len; ++n) {
    positions[n] = static_cast<double>(n * src) / static_cast<double>(dst);
    steps[n] = step;
  }
  return AudioClip{resample_at(clip.samples, positions, steps), target_rate};
}

// ---------------------------------------------------------------------------
// STFT

std::vector<double> make_window(Window window, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (window == Window::kHann)
    for (std::size_t n = 0; n < length; ++n)
      w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(n) / static_cast<double>(length));
  return w;
}

std::size_t frame_count(std::size_t num_samples, std::size_t frame_len, std::size_t hop) {
  if (num_samples < frame_len) return 0;
  return 1 + (num_samples - frame_len) / hop;
}

Spectrogram stft(const AudioClip& clip, std::size_t frame_len, std::size_t hop, Window window) {
  check_frame_params(frame_len, hop);
  validate(clip);
  Spectrogram spec;
  spec.frame_len = frame_len;
  spec.hop = hop;
  spec.window = window;
  spec.sample_rate = clip.sample_rate;
  const std::size_t count = frame_count(clip.size(), frame_len, hop);
  const auto w = make_window(window, frame_len);
  detail::RealFft fft(frame_len);
  std::vector<double> buf(frame_len);
  spec.frames.assign(count, std::vector<std::complex<double>>(fft.bins()));
  for (std::size_t f = 0; f < count; ++f) {
    const double* x = clip.samples.data() + f * hop;
    for (std::size_t n = 0; n < frame_len; ++n) buf[n] = x[n] * w[n];
    fft.forward(buf, spec.frames[f]);
  }
  return spec;
}

AudioClip istft(const Spectrogram& spec) {
  check_frame_params(spec.frame_len, spec.hop);
  AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  if (spec.frames.empty()) return clip;
  const std::size_t n = spec.frame_len;
  const std::size_t len = (spec.frames.size() - 1) * spec.hop + n;
  const auto w = make_window(spec.window, n);
  std::vector<double> acc(len, 0.0), wsum(len, 0.0), buf(n);
  detail::RealFft fft(n);
  for (std::size_t f = 0; f < spec.frames.size(); ++f) {
    if (spec.frames[f].size() != fft.bins()) throw ValidationError("spectrogram frame has wrong bin count");
    fft.inverse(spec.frames[f], buf);
    const std::size_t off = f * spec.hop;
    for (std::size_t i = 0; i < n; ++i) {
      acc[off + i] += buf[i] * w[i];
      wsum[off + i] += w[i] * w[i];
    }
  }
  clip.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i) clip.samples[i] = wsum[i] > 1e-10 ? acc[i] / wsum[i] : 0.0;
  return clip;
}

// ---------------------------------------------------------------------------
// Features

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(std::size_t num_mels, std::size_t frame_len, int sample_rate,
                             double fmin_hz, double fmax_hz) {
  if (num_mels == 0) throw ValidationError("need at least one mel band");
  if (fmax_hz <= 0.0) fmax_hz = sample_rate / 2.0;
  if (!(fmin_hz >= 0.0 && fmin_hz < fmax_hz)) throw ValidationError("invalid mel frequency range");
  MelFilterbank fb;
  const double lo = hz_to_mel(fmin_hz), hi = hz_to_mel(fmax_hz);
  std::vector<double> edges(num_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(num_mels + 1));
  const std::size_t bins = frame_len / 2 + 1;
  fb.weights.assign(num_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < num_mels; ++m) {
    const double a = edges[m], c = edges[m + 1], b = edges[m + 2];
    fb.lower_hz.push_back(a);
    fb.center_hz.push_back(c);
    fb.upper_hz.push_back(b);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(frame_len);
      fb.weights[m][k] = std::max(0.0, std::min((f - a) / (c - a), (b - f) / (b - c)));
    }
  }
  return fb;
}

FeatureSequence features(const AudioClip& clip, const FeatureConfig& config) {
  check_frame_params(config.frame_len, config.hop);
  validate(clip);
  if (clip.size() < config.frame_len)
    throw TooShortError("clip of " + std::to_string(clip.size()) +
                        " samples is shorter than one analysis frame (" +
                        std::to_string(config.frame_len) + ")");
  const auto spec = stft(clip, config.frame_len, config.hop, Window::kHann);
  const auto fb = mel_filterbank(config.num_mels, config.frame_len, clip.sample_rate,
                                 config.fmin_hz, config.fmax_hz);
  FeatureSequence out;
  out.hop_seconds = static_cast<double>(config.hop) / clip.sample_rate;
  out.frame_seconds = static_cast<double>(config.frame_len) / clip.sample_rate;
  out.rows.reserve(spec.num_frames());
  std::vector<double> power(spec.num_bins());
  for (const auto& frame : spec.frames) {
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(frame[k]);
    std::vector<double> row(config.num_mels);
    for (std::size_t m = 0; m < config.num_mels; ++m) {
      const double e = std::inner_product(fb.weights[m].begin(), fb.weights[m].end(),
                                          power.begin(), 0.0);
      row[m] = std::log(std::max(e, config.log_floor));
    }
    if (config.num_cepstra > 0) {
      const std::size_t nm = config.num_mels;
      std::vector<double> cep(config.num_cepstra);
      for (std::size_t q = 0; q < config.num_cepstra; ++q) {
        double acc = 0.0;
        for (std::size_t m = 0; m < nm; ++m)
          acc += row[m] * std::cos(kPi * static_cast<double>(q) * (static_cast<double>(m) + 0.5) /
                                   static_cast<double>(nm));
        cep[q] = acc * std::sqrt((q == 0 ? 1.0 : 2.0) / static_cast<double>(nm));
      }
      row = std::move(cep);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

Envelope rms_envelope(const AudioClip& clip, std::size_t frame_len, std::size_t hop) {
  if (frame_len == 0 || hop == 0) throw ValidationError("frame length and hop must be positive");
  validate(clip);
  if (clip.size() < frame_len)
    throw TooShortError("clip shorter than one envelope frame");
  Envelope env;
  env.hop_seconds = static_cast<double>(hop) / clip.sample_rate;
  const std::size_t count = frame_count(clip.size(), frame_len, hop);
  env.values.resize(count);
  for (std::size_t f = 0; f < count; ++f)
    env.values[f] = rms(std::span<const double>(clip.samples).subspan(f * hop, frame_len));
  return env;
}

std::vector<double> spectral_centroid(const AudioClip& clip, std::size_t frame_len,
                                      std::size_t hop, double energy_floor) {
  const auto spec = stft(clip, frame_len, hop, Window::kHann);
  std::vector<double> out(spec.num_frames(), 0.0);
  const double nyquist = clip.sample_rate / 2.0;
  for (std::size_t f = 0; f < spec.num_frames(); ++f) {
    const auto frame = std::span<const double>(clip.samples).subspan(f * hop, frame_len);
    const double r = rms(frame);
    if (r * r < energy_floor) continue;
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < spec.num_bins(); ++k) {
      const double mag = std::abs(spec.frames[f][k]);
      num += mag * static_cast<double>(k) * clip.sample_rate / static_cast<double>(frame_len);
      den += mag;
    }
    if (den > 0.0) out[f] = num / den / nyquist;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plot decimation

std::vector<PlotPoint> plot_decimate(const AudioClip& clip, std::size_t max_points) {
  max_points = std::max<std::size_t>(max_points, 2);
  const double rate = clip.sample_rate;
  const std::size_t n = clip.size();
  std::vector<PlotPoint> out;
  if (n <= max_points) {
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({static_cast<double>(i) / rate, clip.samples[i]});
    return out;
  }
  const std::size_t buckets = max_points / 2;
  out.reserve(2 * buckets);
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = b * n / buckets, hi = (b + 1) * n / buckets;
    std::size_t imin = lo, imax = lo;
    for (std::size_t i = lo; i < hi; ++i) {
      if (clip.samples[i] < clip.samples[imin]) imin = i;
      if (clip.samples[i] > clip.samples[imax]) imax = i;
    }
    if (imin == imax) imax = hi - 1;
    const auto [first, second] = std::minmax(imin, imax);
    out.push_back({static_cast<double>(first) / rate, clip.samples[first]});
    out.push_back({static_cast<double>(second) / rate, clip.samples[second]});
  }
  return out;
}

void write_plot(std::span<const PlotPoint> points, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f.precision(9);
  for (const auto& p : points) f << p.time_s << ' ' << p.amplitude << '\n';
}

}  // namespace forge::audio
