#pragma once

// Text-to-speech interface and a deterministic formant synthesizer behind it.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "forge/audio.hpp"

namespace forge::tts {

struct VoiceProfile {
  std::string name;
  double f0_base = 120.0;     // Hz
  double f0_jitter = 0.01;    // fraction of f0, per glottal period
  double formant_scale = 1.0;
  double speaking_rate = 12.0;  // phones per second

  void validate() const;
};

enum class PhoneClass {
  kVowelA,
  kVowelE,
  kVowelI,
  kVowelO,
  kVowelU,
  kVoicedConsonant,
  kUnvoicedConsonant,
  kPause,
};

bool is_vowel(PhoneClass c);
bool is_voiced(PhoneClass c);

struct Phone {
  PhoneClass cls;
  double duration_s;
};

struct PhoneSequence {
  std::vector<Phone> phones;
  double total_duration() const;
};

// Letters map to phone classes, everything else to a pause; one phone per
// character at the given rate.
PhoneSequence text_to_phones(std::string_view text, double speaking_rate);

// Anything that can turn text into audio for a voice. The pipeline only
// talks to this interface.
class Synthesizer {
 public:
  virtual ~Synthesizer() = default;
  virtual audio::AudioClip synthesize(std::string_view text, const VoiceProfile& profile,
                                      int sample_rate, std::uint64_t seed) const = 0;
};

// Glottal pulse train through two cascaded resonators per phone.
class FormantSynthesizer final : public Synthesizer {
 public:
  static constexpr double kPeakLevel = 0.8;

  audio::AudioClip synthesize(std::string_view text, const VoiceProfile& profile,
                              int sample_rate, std::uint64_t seed) const override;
};

// Serves pre-rendered audio regardless of the text; resampled to the
// requested rate.
class PrerenderedAudio final : public Synthesizer {
 public:
  explicit PrerenderedAudio(audio::AudioClip clip) : clip_(std::move(clip)) {}
  audio::AudioClip synthesize(std::string_view text, const VoiceProfile& profile,
                              int sample_rate, std::uint64_t seed) const override;

 private:
  audio::AudioClip clip_;
};

audio::AudioClip synthesize(std::string_view text, const VoiceProfile& profile,
                            int sample_rate, std::uint64_t seed);

// Seeded draws from disjoint child/adult parameter ranges.
VoiceProfile child_profile(std::uint64_t seed);
VoiceProfile adult_profile(std::uint64_t seed);

struct ProfileRanges {
  double f0_lo, f0_hi;
  double formant_lo, formant_hi;
  double rate_lo, rate_hi;
};
inline constexpr ProfileRanges kChildRanges{250.0, 360.0, 1.18, 1.35, 9.0, 11.0};
inline constexpr ProfileRanges kAdultRanges{95.0, 210.0, 0.88, 1.05, 11.5, 14.0};

// key=value text (name, f0_base, f0_jitter, formant_scale, speaking_rate).
VoiceProfile read_profile(const std::filesystem::path& path);
void write_profile(const VoiceProfile& profile, const std::filesystem::path& path);

}  // namespace forge::tts
