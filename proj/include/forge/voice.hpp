#pragma once

// Time-stretch, pitch-shift and the composite "childify" transform applied
// to adult voices.

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "forge/audio.hpp"

namespace forge::voice {

// Piecewise-linear control curve over input time. Values before the first
// point and after the last hold the end values.
class BreakpointFunction {
 public:
  // Throws ValidationError unless times strictly increase and factors > 0.
  explicit BreakpointFunction(std::vector<std::pair<double, double>> points);
  static BreakpointFunction constant(double factor) { return BreakpointFunction({{0.0, factor}}); }

  double operator()(double time_s) const;
  // Exact integral of the curve over [0, duration_s].
  double integral(double duration_s) const;
  bool is_constant() const;
  // Throws unless every breakpoint time lies in [0, duration_s].
  void check_within(double duration_s) const;

  const std::vector<std::pair<double, double>>& points() const { return points_; }

 private:
  std::vector<std::pair<double, double>> points_;
};

// Two-column text: "time_s factor" per line; '#' starts a comment.
BreakpointFunction read_bpf(const std::filesystem::path& path);

struct VocoderConfig {
  std::size_t frame_len = audio::kDefaultFrameLen;
  std::size_t analysis_hop = audio::kDefaultHop;
};

// Phase vocoder with identity phase locking. Output duration is the input
// duration scaled by the factor (or its integral for a curve).
audio::AudioClip time_stretch(const audio::AudioClip& clip, double factor,
                              const VocoderConfig& config = {});
audio::AudioClip time_stretch(const audio::AudioClip& clip, const BreakpointFunction& factor,
                              const VocoderConfig& config = {});

// Scales every frequency by 2^(semitones/12) keeping the duration. Done as a
// time stretch by the frequency ratio followed by resampling by its inverse.
audio::AudioClip pitch_shift(const audio::AudioClip& clip, double semitones,
                             const VocoderConfig& config = {});
// Time-varying variant; curve values are frequency ratios (2^(s/12)).
audio::AudioClip pitch_shift(const audio::AudioClip& clip, const BreakpointFunction& ratio,
                             const VocoderConfig& config = {});

struct ChildifyParams {
  double pitch_up_semitones = 4.0;
  // Speaking-rate factor in (0, 1]; output duration = input / rate_factor.
  double rate_factor = 0.92;
  // Curve overrides: pitch as frequency ratio, rate as rate factor.
  std::optional<BreakpointFunction> pitch_bpf;
  std::optional<BreakpointFunction> rate_bpf;

  void validate() const;
};

// Pitch shift followed by time stretch.
audio::AudioClip childify(const audio::AudioClip& adult, const ChildifyParams& params,
                          const VocoderConfig& config = {});

}  // namespace forge::voice
