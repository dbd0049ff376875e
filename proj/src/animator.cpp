#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "forge/anim.hpp"
#include "forge/error.hpp"
#include "forge/rng.hpp"
#include "forge/speaker.hpp"
#include "forge/tts.hpp"

namespace forge::anim {

using nn::Matrix;
using nn::Vector;

namespace {
constexpr int kOutputs = kNumLandmarks * 3;
}

AnimatorModel::AnimatorModel(int feature_dim, int speaker_dim, const AnimatorConfig& config,
                             std::uint64_t seed)
    : feature_dim_(feature_dim), speaker_dim_(speaker_dim), config_(config), seed_(seed) {
  if (feature_dim <= 0 || speaker_dim < 0 || config.hidden <= 0)
    throw ValidationError("animator dimensions must be positive");
  Rng rng(mix64(seed) ^ 0x616e696dULL);
  layer_ = nn::ElmanLayer::init(feature_dim + speaker_dim, config.hidden, rng);
  readout_ = nn::Dense::init(config.hidden, kOutputs, rng);
  mean_ = Vector::Zero(feature_dim);
  stddev_ = Vector::Ones(feature_dim);
}

void AnimatorModel::set_normalization(Vector mean, Vector stddev) {
  if (mean.size() != feature_dim_ || stddev.size() != feature_dim_)
    throw ValidationError("normalization size does not match animator input");
  mean_ = std::move(mean);
  stddev_ = stddev.cwiseMax(1e-6);
}

Matrix AnimatorModel::inputs(const audio::FeatureSequence& features, const Vector& speaker,
                             std::size_t frames, int fps) const {
  if (static_cast<int>(features.dim()) != feature_dim_)
    throw ValidationError("feature dimension " + std::to_string(features.dim()) + " does not match animator input " +
                          std::to_string(feature_dim_));
  if (speaker.size() != speaker_dim_)
    throw ValidationError("speaker embedding dimension " + std::to_string(speaker.size()) +
                          " does not match animator input " + std::to_string(speaker_dim_));
  Matrix x(static_cast<Eigen::Index>(frames), feature_dim_ + speaker_dim_);
  for (std::size_t i = 0; i < frames; ++i) {
    const auto& row = features.rows[feature_row_for_frame(features, i, fps)];
    const auto t = static_cast<Eigen::Index>(i);
    for (int c = 0; c < feature_dim_; ++c) x(t, c) = (row[static_cast<std::size_t>(c)] - mean_(c)) / stddev_(c);
    x.row(t).tail(speaker_dim_) = speaker.transpose();
  }
  return x;
}

Matrix AnimatorModel::predict(const Matrix& x) const { return readout_.forward(layer_.forward(x)); }

LandmarkSequence AnimatorModel::animate(const audio::FeatureSequence& features, const Vector& speaker,
                                        const LandmarkTemplate& tmpl, int fps, double duration_s) const {
  const std::size_t n = frame_count(duration_s, fps);
  LandmarkSequence seq;
  seq.fps = fps;
  seq.duration_s = duration_s;
  if (n == 0) return seq;
  const Matrix y = predict(inputs(features, speaker, n, fps));
  seq.frames.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    LandmarkFrame& f = seq.frames[i];
    for (int p = 0; p < kNumLandmarks; ++p)
      for (int c = 0; c < 3; ++c)
        f(p, c) = tmpl.points(p, c) + y(static_cast<Eigen::Index>(i), 3 * p + c) / config_.output_scale;
  }
  if (!y.allFinite()) throw TrainingError("animator produced non-finite displacements");
  return seq;
}

LandmarkSequence AnimatorModel::animate(const audio::AudioClip& clip, const Vector& speaker,
                                        const LandmarkTemplate& tmpl, int fps) const {
  audio::validate(clip);
  return animate(audio::features(clip), speaker, tmpl, fps, clip.duration_seconds());
}

AnimatorModel::Gradient AnimatorModel::zero_gradient() const {
  return {nn::ElmanLayer::zeros_like(layer_), nn::Dense::zeros_like(readout_)};
}

double AnimatorModel::loss(const Matrix& x, const Matrix& target) const {
  return (predict(x) - target).squaredNorm() / static_cast<double>(target.size());
}

double AnimatorModel::loss_and_gradient(const Matrix& x, const Matrix& target, Gradient& grad) const {
  if (x.rows() != target.rows() || target.cols() != kOutputs)
    throw ValidationError("animator targets do not match inputs");
  const Matrix h = layer_.forward(x);
  const Matrix diff = readout_.forward(h) - target;
  const double n = static_cast<double>(target.size());
  const Matrix d_out = (2.0 / n) * diff;
  const Matrix d_h = readout_.backward(h, d_out, grad.readout);
  layer_.backward(x, h, d_h, grad.layer);
  return diff.squaredNorm() / n;
}

std::vector<Matrix*> AnimatorModel::parameter_blocks() {
  return {&layer_.w_in, &layer_.w_rec, &layer_.bias, &readout_.weight, &readout_.bias};
}

std::vector<Matrix*> AnimatorModel::gradient_blocks(Gradient& g) {
  return {&g.layer.w_in, &g.layer.w_rec, &g.layer.bias, &g.readout.weight, &g.readout.bias};
}

Matrix AnimatorModel::targets(const LandmarkSequence& seq) const {
  Matrix t(static_cast<Eigen::Index>(seq.frames.size()), kOutputs);
  for (std::size_t i = 0; i < seq.frames.size(); ++i)
    for (int p = 0; p < kNumLandmarks; ++p)
      for (int c = 0; c < 3; ++c)
        t(static_cast<Eigen::Index>(i), 3 * p + c) =
            (seq.frames[i](p, c) - template_.points(p, c)) * config_.output_scale;
  return t;
}

void AnimatorModel::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "forge-animator";
  j["version"] = 1;
  j["feature_dim"] = feature_dim_;
  j["speaker_dim"] = speaker_dim_;
  j["seed"] = seed_;
  j["config"] = {{"hidden", config_.hidden},
                 {"epochs", config_.epochs},
                 {"learning_rate", config_.learning_rate},
                 {"output_scale", config_.output_scale},
                 {"clip_norm", config_.clip_norm}};
  j["normalization"] = {{"mean", nn::to_json(mean_)}, {"stddev", nn::to_json(stddev_)}};
  j["template"] = nn::to_json(template_.points);
  j["layer"] = {{"w_in", nn::to_json(layer_.w_in)},
                {"w_rec", nn::to_json(layer_.w_rec)},
                {"bias", nn::to_json(layer_.bias)}};
  j["readout"] = {{"weight", nn::to_json(readout_.weight)}, {"bias", nn::to_json(readout_.bias)}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

AnimatorModel AnimatorModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "forge-animator") throw FormatError("not an animator checkpoint");
    AnimatorModel m;
    m.feature_dim_ = j.at("feature_dim");
    m.speaker_dim_ = j.at("speaker_dim");
    m.seed_ = j.at("seed").get<std::uint64_t>();
    const auto& c = j.at("config");
    m.config_.hidden = c.at("hidden");
    m.config_.epochs = c.at("epochs");
    m.config_.learning_rate = c.at("learning_rate");
    m.config_.output_scale = c.at("output_scale");
    m.config_.clip_norm = c.at("clip_norm");
    m.mean_ = nn::matrix_from_json(j.at("normalization").at("mean"));
    m.stddev_ = nn::matrix_from_json(j.at("normalization").at("stddev"));
    const Matrix tp = nn::matrix_from_json(j.at("template"));
    if (tp.rows() != kNumLandmarks || tp.cols() != 3) throw FormatError("template must be 68x3");
    m.template_.points = tp;
    m.layer_ = {nn::matrix_from_json(j.at("layer").at("w_in")), nn::matrix_from_json(j.at("layer").at("w_rec")),
                nn::matrix_from_json(j.at("layer").at("bias"))};
    m.readout_ = {nn::matrix_from_json(j.at("readout").at("weight")),
                  nn::matrix_from_json(j.at("readout").at("bias"))};
    const auto h = m.layer_.hidden();
    if (m.layer_.inputs() != m.feature_dim_ + m.speaker_dim_ || m.layer_.w_rec.rows() != h ||
        m.layer_.w_rec.cols() != h || m.layer_.bias.rows() != h || m.readout_.weight.cols() != h ||
        m.readout_.weight.rows() != kOutputs || m.readout_.bias.rows() != kOutputs ||
        m.mean_.size() != m.feature_dim_ || m.stddev_.size() != m.feature_dim_)
      throw FormatError("inconsistent checkpoint dimensions");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Prepared {
  Matrix x, y;
};

std::vector<Prepared> prepare(const AnimatorModel& model, const std::vector<AnimatorSample>& samples) {
  std::vector<Prepared> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    s.target.validate();
    const std::size_t n = s.target.frames.size();
    out.push_back({model.inputs(s.features, s.speaker, n, s.target.fps), model.targets(s.target)});
  }
  return out;
}

double mean_loss(const AnimatorModel& model, const std::vector<Prepared>& data) {
  double total = 0.0, count = 0.0;
  for (const auto& d : data) {
    total += model.loss(d.x, d.y) * static_cast<double>(d.y.size());
    count += static_cast<double>(d.y.size());
  }
  return total / count;
}

}  // namespace

double evaluate_mse(const AnimatorModel& model, const std::vector<AnimatorSample>& samples) {
  if (samples.empty()) throw ValidationError("no samples to evaluate");
  return mean_loss(model, prepare(model, samples));
}

AnimatorTrainResult train_animator(const std::vector<AnimatorSample>& corpus, const AnimatorConfig& config,
                                   std::uint64_t seed) {
  if (corpus.size() < 8) throw ValidationError("animator training needs at least 8 clips");
  std::vector<Vector> distinct;
  for (const auto& s : corpus)
    if (std::none_of(distinct.begin(), distinct.end(), [&](const Vector& v) { return v == s.speaker; }))
      distinct.push_back(s.speaker);
  if (distinct.size() < 2) throw ValidationError("animator training needs at least 2 speaker embeddings");
  if (config.epochs < 0 || !(config.learning_rate > 0.0)) throw ValidationError("invalid animator config");

  const auto feature_dim = static_cast<int>(corpus.front().features.dim());
  const auto speaker_dim = static_cast<int>(corpus.front().speaker.size());
  Vector sum = Vector::Zero(feature_dim), sq = sum;
  double rows = 0.0;
  for (const auto& s : corpus)
    for (const auto& r : s.features.rows) {
      if (static_cast<int>(r.size()) != feature_dim) throw ValidationError("mixed feature dimensions in corpus");
      const Eigen::Map<const Vector> v(r.data(), feature_dim);
      sum += v;
      sq += v.cwiseProduct(v);
      rows += 1.0;
    }
  const Vector mean = sum / rows;
  const Vector var = (sq / rows - mean.cwiseProduct(mean)).cwiseMax(0.0);

  AnimatorTrainResult result;
  AnimatorModel& model = result.model;
  model = AnimatorModel(feature_dim, speaker_dim, config, seed);
  model.set_normalization(mean, var.cwiseSqrt());
  const auto data = prepare(model, corpus);
  result.initial_mse = mean_loss(model, data);

  nn::Adam adam(model.parameter_blocks(), config.learning_rate);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix64(seed) ^ 0x7368756666ULL);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    double epoch_loss = 0.0;
    for (std::size_t k : order) {
      auto grad = model.zero_gradient();
      const double l = model.loss_and_gradient(data[k].x, data[k].y, grad);
      if (!std::isfinite(l)) throw TrainingError("animator loss became non-finite at epoch " + std::to_string(epoch));
      epoch_loss += l;
      auto blocks = AnimatorModel::gradient_blocks(grad);
      nn::clip_norm(blocks, config.clip_norm);
      adam.step(blocks);
    }
    result.history.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  result.final_mse = mean_loss(model, data);
  if (!std::isfinite(result.final_mse)) throw TrainingError("final animator loss is non-finite");
  return result;
}

// ---------------------------------------------------------------------------
// Toy corpus

ToyAnimatorCorpus make_toy_animator_corpus(int clips, int speakers, std::uint64_t seed, int fps,
                                           double style_offset, int sample_rate) {
  if (clips <= 0 || speakers <= 0) throw ValidationError("toy animator corpus needs clips and speakers");
  ToyAnimatorCorpus corpus;
  Rng rng(mix64(seed) ^ 0x746f79616eULL);
  std::vector<tts::VoiceProfile> voices;
  for (int s = 0; s < speakers; ++s) {
    Vector v(16);
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = rng.normal();
    corpus.speakers.push_back(v.normalized());
    corpus.style_offsets.push_back(s % 2 == 0 ? style_offset : -style_offset);
    const auto voice_seed = rng.next() % 1000000;
    voices.push_back(s % 2 == 0 ? tts::child_profile(voice_seed) : tts::adult_profile(voice_seed));
  }
  const auto tmpl = LandmarkTemplate::canonical();
  const auto pad = static_cast<std::size_t>(std::llround(0.3 * sample_rate));
  for (int c = 0; c < clips; ++c) {
    const int s = c % speakers;
    const auto speech = tts::synthesize(speaker::toy_sentence(rng), voices[static_cast<std::size_t>(s)],
                                        sample_rate, rng.next());
    audio::AudioClip clip;
    clip.sample_rate = sample_rate;
    clip.samples.assign(pad, 0.0);
    clip.samples.insert(clip.samples.end(), speech.samples.begin(), speech.samples.end());
    clip.samples.insert(clip.samples.end(), pad, 0.0);

    AnimatorSample sample;
    sample.features = audio::features(clip);
    sample.speaker = corpus.speakers[static_cast<std::size_t>(s)];
    sample.target = procedural_articulate(clip, tmpl, fps);
    for (auto& f : sample.target.frames)
      for (int p = kOuterLips.begin; p < kInnerLips.end; ++p) f(p, 1) += corpus.style_offsets[static_cast<std::size_t>(s)];
    corpus.samples.push_back(std::move(sample));
    corpus.audio.push_back(std::move(clip));
  }
  return corpus;
}

}  // namespace forge::anim
