#pragma once

// Audio I/O, resampling, spectral analysis and feature extraction.

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace forge::audio {

inline constexpr int kDefaultSampleRate = 16000;
inline constexpr std::size_t kDefaultFrameLen = 1024;
inline constexpr std::size_t kDefaultHop = 256;

// Mono sample buffer. Values are nominally in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Throws ValidationError on a non-positive rate or non-finite sample.
void validate(const AudioClip& clip);

enum class Window { kHann, kRectangular };

// Periodic window of the given length.
std::vector<double> make_window(Window window, std::size_t length);

struct Spectrogram {
  // frames[f][k], k in [0, frame_len/2].
  std::vector<std::vector<std::complex<double>>> frames;
  std::size_t frame_len = kDefaultFrameLen;
  std::size_t hop = kDefaultHop;
  Window window = Window::kHann;
  int sample_rate = kDefaultSampleRate;

  std::size_t num_frames() const { return frames.size(); }
  std::size_t num_bins() const { return frame_len / 2 + 1; }
};

struct FeatureSequence {
  std::vector<std::vector<double>> rows;
  double hop_seconds = 0.0;
  double frame_seconds = 0.0;  // analysis window length

  std::size_t size() const { return rows.size(); }
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }
};

struct Envelope {
  std::vector<double> values;
  double hop_seconds = 0.0;
};

struct FeatureConfig {
  std::size_t frame_len = kDefaultFrameLen;
  std::size_t hop = kDefaultHop;
  std::size_t num_mels = 26;
  // 0 disables the cepstral rows; otherwise rows hold DCT-II coefficients
  // of the log-mel energies instead of the energies themselves.
  std::size_t num_cepstra = 0;
  double log_floor = 1e-10;
  double fmin_hz = 0.0;
  // <= 0 means Nyquist.
  double fmax_hz = 0.0;
};

struct PlotPoint {
  double time_s;
  double amplitude;
};

// PCM16 mono RIFF/WAVE.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

// Band-limited resampling to a new rate. Output length is
// round(len * target / source).
AudioClip resample(const AudioClip& clip, int target_rate);

// Band-limited resampling by an arbitrary positive ratio (output samples per
// input sample); used for pitch shifting where the ratio is irrational.
std::vector<double> resample_ratio(std::span<const double> input, double ratio);

// Reads the input at the given fractional positions. steps[n] is the local
// input advance per output sample, which sets the anti-aliasing cutoff.
std::vector<double> resample_at(std::span<const double> input,
                                std::span<const double> positions,
                                std::span<const double> steps);

Spectrogram stft(const AudioClip& clip, std::size_t frame_len = kDefaultFrameLen,
                 std::size_t hop = kDefaultHop, Window window = Window::kHann);
AudioClip istft(const Spectrogram& spec);

// Number of full frames that fit in n samples (0 when n < frame_len).
std::size_t frame_count(std::size_t num_samples, std::size_t frame_len, std::size_t hop);

// Triangular mel filterbank (HTK mel scale); weights[m][k] over rfft bins.
struct MelFilterbank {
  std::vector<std::vector<double>> weights;
  // Lower edge, center and upper edge of each band in Hz.
  std::vector<double> lower_hz, center_hz, upper_hz;
};
MelFilterbank mel_filterbank(std::size_t num_mels, std::size_t frame_len, int sample_rate,
                             double fmin_hz, double fmax_hz);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

FeatureSequence features(const AudioClip& clip, const FeatureConfig& config = {});

Envelope rms_envelope(const AudioClip& clip, std::size_t frame_len, std::size_t hop);

// Per-frame spectral centroid divided by Nyquist, 0 for frames whose energy
// falls below the floor.
std::vector<double> spectral_centroid(const AudioClip& clip, std::size_t frame_len,
                                      std::size_t hop, double energy_floor = 1e-8);

std::vector<PlotPoint> plot_decimate(const AudioClip& clip, std::size_t max_points = 2000);
void write_plot(std::span<const PlotPoint> points, const std::filesystem::path& path);

// In-place helpers over raw buffers.
double rms(std::span<const double> x);
double peak_abs(std::span<const double> x);

}  // namespace forge::audio
