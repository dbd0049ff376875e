#pragma once

// Toy speaker encoder (d-vectors) trained with the generalized end-to-end
// loss, plus centroid and similarity ranking helpers.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "forge/audio.hpp"
#include "forge/nn.hpp"
#include "forge/tts.hpp"

namespace forge::speaker {

inline constexpr double kPartialWindowS = 1.6;
inline constexpr double kPartialHopS = 0.8;

// Unit-norm embedding vector.
class SpeakerEmbedding {
 public:
  SpeakerEmbedding() = default;
  // Divides by the L2 norm; throws ValidationError on a zero or non-finite vector.
  static SpeakerEmbedding normalized(const nn::Vector& v);
  // Checks the norm is 1 within 1e-6.
  static SpeakerEmbedding from_unit(const nn::Vector& v);

  const nn::Vector& vector() const { return v_; }
  Eigen::Index dim() const { return v_.size(); }

 private:
  explicit SpeakerEmbedding(nn::Vector v) : v_(std::move(v)) {}
  nn::Vector v_;
};

// Cosine similarity of two nonzero vectors of equal dimension.
double cosine_similarity(const nn::Vector& a, const nn::Vector& b);
inline double cosine_similarity(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
  return cosine_similarity(a.vector(), b.vector());
}

// embeddings[j][i]: utterance i of speaker j.
struct EmbeddingBatch {
  std::vector<std::vector<nn::Vector>> embeddings;

  std::size_t speakers() const { return embeddings.size(); }
  std::size_t utterances() const { return embeddings.empty() ? 0 : embeddings.front().size(); }
  // N >= 2, M >= 2, rectangular, unit-norm entries.
  void validate() const;
};

struct GE2EParams {
  double w = 10.0;
  double b = -5.0;
};

// Similarity S(j,i,k) = w cos(e_ji, c_k) + b, with speaker j's own centroid
// computed without e_ji. Loss sums -S(j,i,j) + log sum_k exp S(j,i,k).
double ge2e_loss(const EmbeddingBatch& batch, const GE2EParams& params);

struct GE2EGradient {
  double loss = 0.0;
  std::vector<std::vector<nn::Vector>> d_embeddings;
  double d_w = 0.0;
  double d_b = 0.0;
};
// Gradient with respect to the (unconstrained) embedding vectors and w, b.
GE2EGradient ge2e_loss_and_gradient(const EmbeddingBatch& batch, const GE2EParams& params);

// Feature config used for encoder input.
audio::FeatureConfig encoder_features();

struct PartialWindow {
  std::size_t start;   // sample offset
  std::size_t length;  // samples
};
// floor((dur - window) / hop) + 1 windows; throws TooShortError when the
// clip is shorter than one window.
std::vector<PartialWindow> partial_windows(std::size_t num_samples, int sample_rate,
                                           double window_s = kPartialWindowS,
                                           double hop_s = kPartialHopS);
std::vector<audio::FeatureSequence> segment_partials(
    const audio::AudioClip& clip, double window_s = kPartialWindowS,
    double hop_s = kPartialHopS, const audio::FeatureConfig& config = encoder_features());

struct EncoderConfig {
  int hidden = 32;
  int dim = 16;
  int epochs = 200;
  double learning_rate = 0.1;
  double clip_norm = 3.0;
  double w_floor = 1e-2;
  GE2EParams init{};
};

class EncoderModel {
 public:
  EncoderModel() = default;
  EncoderModel(int input_dim, const EncoderConfig& config, std::uint64_t seed);

  SpeakerEmbedding embed(const audio::FeatureSequence& features) const;
  // Renormalized mean over the clip's partial embeddings.
  SpeakerEmbedding embed_utterance(const audio::AudioClip& clip) const;

  int input_dim() const { return static_cast<int>(layer_.inputs()); }
  int dim() const { return static_cast<int>(readout_.weight.rows()); }
  const GE2EParams& ge2e() const { return ge2e_; }
  std::uint64_t seed() const { return seed_; }
  const EncoderConfig& config() const { return config_; }

  void set_normalization(nn::Vector mean, nn::Vector stddev);

  // Forward pass state kept for backpropagation.
  struct Trace {
    nn::Matrix x, h;
    nn::Vector pooled, z;
  };
  nn::Matrix normalize(const audio::FeatureSequence& features) const;
  nn::Vector forward(const nn::Matrix& x, Trace& trace) const;

  struct Gradient {
    nn::ElmanLayer layer;
    nn::Dense readout;
    double d_w = 0.0, d_b = 0.0;
  };
  Gradient zero_gradient() const;
  // d_embedding is dL/de for e = z/|z|.
  void backward(const Trace& trace, const nn::Vector& d_embedding, Gradient& grad) const;
  // In-place update: params -= lr * grad, then floors w.
  void apply(Gradient& grad, double learning_rate);

  // Flat parameter vector (layer, readout, w, b) for checks and equality.
  std::vector<double> parameters() const;

  void save(const std::filesystem::path& path) const;
  static EncoderModel load(const std::filesystem::path& path);

 private:
  nn::ElmanLayer layer_;
  nn::Dense readout_;
  nn::Vector mean_, stddev_;
  GE2EParams ge2e_;
  EncoderConfig config_;
  std::uint64_t seed_ = 0;
  audio::FeatureConfig features_ = encoder_features();
};

// Synthetic multi-speaker corpus built with the formant synthesizer.
struct ToySpeaker {
  tts::VoiceProfile profile;
  bool child = false;
  std::vector<audio::AudioClip> utterances;
  std::vector<std::string> texts;
};
struct ToyCorpus {
  std::vector<ToySpeaker> speakers;
};

// Random word sequence long enough for at least two partial windows at any
// default speaking rate.
std::string toy_sentence(Rng& rng);

// Child speakers first, then adults. Seeds derive from corpus_seed.
ToyCorpus make_toy_corpus(int num_child, int num_adult, int utterances_per_speaker,
                          std::uint64_t corpus_seed, int sample_rate = audio::kDefaultSampleRate);

// Fresh utterances (new texts and synthesis seeds) for the same voices.
ToyCorpus held_out_corpus(const ToyCorpus& corpus, int utterances_per_speaker, std::uint64_t seed,
                          int sample_rate = audio::kDefaultSampleRate);

struct TrainResult {
  EncoderModel model;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> history;  // training-batch loss per epoch
};

// Throws ValidationError for fewer than 4 speakers or 4 utterances each and
// TrainingError when the loss becomes non-finite.
TrainResult train_encoder(const ToyCorpus& corpus, const EncoderConfig& config, std::uint64_t seed);

struct Separation {
  double same_speaker = 0.0;
  double cross_speaker = 0.0;
  double margin() const { return same_speaker - cross_speaker; }
};
// Mean pairwise cosine over every partial of every utterance in the corpus.
Separation evaluate_separation(const EncoderModel& model, const ToyCorpus& corpus);

// Renormalized arithmetic mean; throws on an empty set or zero mean.
SpeakerEmbedding centroid(const std::vector<SpeakerEmbedding>& embeddings);

// Descending cosine to the centroid, ties broken by name.
std::vector<std::pair<std::string, double>> rank_adults(
    const std::map<std::string, SpeakerEmbedding>& adults, const SpeakerEmbedding& child_centroid);

}  // namespace forge::speaker
