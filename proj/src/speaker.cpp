#include "forge/speaker.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "forge/error.hpp"

namespace forge::speaker {

using nn::Matrix;
using nn::Vector;

// ---------------------------------------------------------------------------
// Embeddings and similarity

SpeakerEmbedding SpeakerEmbedding::normalized(const Vector& v) {
  const double n = v.norm();
  if (!std::isfinite(n) || n <= 0.0) throw ValidationError("cannot normalize a zero or non-finite vector");
  return SpeakerEmbedding(v / n);
}

SpeakerEmbedding SpeakerEmbedding::from_unit(const Vector& v) {
  if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-6)
    throw ValidationError("embedding is not unit-norm");
  return SpeakerEmbedding(v);
}

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ValidationError("cosine of vectors with different dimensions");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

void EmbeddingBatch::validate() const {
  if (speakers() < 2) throw ValidationError("GE2E batch needs at least 2 speakers");
  const std::size_t m = utterances();
  if (m < 2) throw ValidationError("GE2E batch needs at least 2 utterances per speaker");
  const Eigen::Index d = embeddings.front().front().size();
  for (const auto& spk : embeddings) {
    if (spk.size() != m) throw ValidationError("GE2E batch must have equal utterances per speaker");
    for (const auto& e : spk) {
      if (e.size() != d) throw ValidationError("GE2E batch has mixed embedding dimensions");
      if (!e.allFinite() || std::abs(e.norm() - 1.0) > 1e-6)
        throw ValidationError("GE2E batch entries must be unit-norm");
    }
  }
}

// ---------------------------------------------------------------------------
// GE2E

namespace {

GE2EGradient ge2e_impl(const std::vector<std::vector<Vector>>& e, const GE2EParams& params,
                       bool want_grad) {
  const std::size_t n = e.size(), m = e.front().size();
  const Eigen::Index d = e.front().front().size();
  std::vector<Vector> sums(n, Vector::Zero(d));
  for (std::size_t j = 0; j < n; ++j)
    for (const auto& v : e[j]) sums[j] += v;

  GE2EGradient out;
  if (want_grad) {
    out.d_embeddings.assign(n, std::vector<Vector>(m, Vector::Zero(d)));
  }
  // Gradient flowing into each full centroid, and into each speaker's sum
  // through the exclusive centroids.
  std::vector<Vector> d_centroid(n, Vector::Zero(d)), d_sum(n, Vector::Zero(d));
  std::vector<double> s(n), cosv(n);
  std::vector<Vector> refs(n);

  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      const Vector& a = e[j][i];
      for (std::size_t k = 0; k < n; ++k)
        refs[k] = k == j ? Vector((sums[j] - a) / static_cast<double>(m - 1))
                         : Vector(sums[k] / static_cast<double>(m));
      double mx = -1e300;
      for (std::size_t k = 0; k < n; ++k) {
        cosv[k] = a.dot(refs[k]) / (a.norm() * refs[k].norm());
        s[k] = params.w * cosv[k] + params.b;
        mx = std::max(mx, s[k]);
      }
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) z += std::exp(s[k] - mx);
      out.loss += -s[j] + mx + std::log(z);
      if (!want_grad) continue;

      const double na = a.norm();
      for (std::size_t k = 0; k < n; ++k) {
        const double ds = std::exp(s[k] - mx) / z - (k == j ? 1.0 : 0.0);
        out.d_w += ds * cosv[k];
        out.d_b += ds;
        const double dc = params.w * ds;
        const double nr = refs[k].norm();
        out.d_embeddings[j][i] += dc * (refs[k] / (na * nr) - cosv[k] * a / (na * na));
        const Vector d_ref = dc * (a / (na * nr) - cosv[k] * refs[k] / (nr * nr));
        if (k == j) {
          const Vector g = d_ref / static_cast<double>(m - 1);
          d_sum[j] += g;
          out.d_embeddings[j][i] -= g;
        } else {
          d_centroid[k] += d_ref / static_cast<double>(m);
        }
      }
    }
  }
  if (want_grad)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) out.d_embeddings[j][i] += d_sum[j] + d_centroid[j];
  return out;
}

}  // namespace

double ge2e_loss(const EmbeddingBatch& batch, const GE2EParams& params) {
  batch.validate();
  return ge2e_impl(batch.embeddings, params, false).loss;
}

GE2EGradient ge2e_loss_and_gradient(const EmbeddingBatch& batch, const GE2EParams& params) {
  batch.validate();
  return ge2e_impl(batch.embeddings, params, true);
}

// ---------------------------------------------------------------------------
// Partials

audio::FeatureConfig encoder_features() { return audio::FeatureConfig{}; }

std::vector<PartialWindow> partial_windows(std::size_t num_samples, int sample_rate,
                                           double window_s, double hop_s) {
  if (!(window_s > 0.0) || !(hop_s > 0.0)) throw ValidationError("partial window and hop must be positive");
  const auto win = static_cast<std::size_t>(std::llround(window_s * sample_rate));
  const auto hop = static_cast<std::size_t>(std::llround(hop_s * sample_rate));
  if (num_samples < win)
    throw TooShortError("clip of " + std::to_string(static_cast<double>(num_samples) / sample_rate) +
                        " s is shorter than the " + std::to_string(window_s) + " s partial window");
  std::vector<PartialWindow> out;
  const std::size_t count = (num_samples - win) / hop + 1;
  for (std::size_t p = 0; p < count; ++p) out.push_back({p * hop, win});
  return out;
}

std::vector<audio::FeatureSequence> segment_partials(const audio::AudioClip& clip, double window_s,
                                                     double hop_s, const audio::FeatureConfig& config) {
  std::vector<audio::FeatureSequence> out;
  for (const auto& w : partial_windows(clip.size(), clip.sample_rate, window_s, hop_s)) {
    audio::AudioClip part;
    part.sample_rate = clip.sample_rate;
    part.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(w.start),
                        clip.samples.begin() + static_cast<std::ptrdiff_t>(w.start + w.length));
    out.push_back(audio::features(part, config));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder model

EncoderModel::EncoderModel(int input_dim, const EncoderConfig& config, std::uint64_t seed)
    : ge2e_(config.init), config_(config), seed_(seed) {
  if (input_dim <= 0 || config.hidden <= 0 || config.dim <= 0)
    throw ValidationError("encoder dimensions must be positive");
  Rng rng(mix64(seed));
  layer_ = nn::ElmanLayer::init(input_dim, config.hidden, rng);
  readout_ = nn::Dense::init(config.hidden, config.dim, rng);
  mean_ = Vector::Zero(input_dim);
  stddev_ = Vector::Ones(input_dim);
}

void EncoderModel::set_normalization(Vector mean, Vector stddev) {
  if (mean.size() != input_dim() || stddev.size() != input_dim())
    throw ValidationError("normalization size does not match encoder input");
  mean_ = std::move(mean);
  stddev_ = stddev.cwiseMax(1e-6);
}

Matrix EncoderModel::normalize(const audio::FeatureSequence& features) const {
  if (features.size() == 0) throw ValidationError("empty feature sequence");
  if (static_cast<int>(features.dim()) != input_dim())
    throw ValidationError("feature dimension " + std::to_string(features.dim()) +
                          " does not match encoder input " + std::to_string(input_dim()));
  Matrix x(static_cast<Eigen::Index>(features.size()), input_dim());
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      x(t, c) = (features.rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)] - mean_(c)) / stddev_(c);
  return x;
}

Vector EncoderModel::forward(const Matrix& x, Trace& trace) const {
  trace.x = x;
  trace.h = layer_.forward(x);
  trace.pooled = trace.h.colwise().mean().transpose();
  trace.z = readout_.weight * trace.pooled + readout_.bias.col(0);
  const double n = trace.z.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw TrainingError("encoder produced a degenerate embedding");
  return trace.z / n;
}

SpeakerEmbedding EncoderModel::embed(const audio::FeatureSequence& features) const {
  Trace trace;
  return SpeakerEmbedding::normalized(forward(normalize(features), trace));
}

SpeakerEmbedding EncoderModel::embed_utterance(const audio::AudioClip& clip) const {
  Vector acc = Vector::Zero(dim());
  for (const auto& part : segment_partials(clip, kPartialWindowS, kPartialHopS, features_))
    acc += embed(part).vector();
  return SpeakerEmbedding::normalized(acc);
}

EncoderModel::Gradient EncoderModel::zero_gradient() const {
  return {nn::ElmanLayer::zeros_like(layer_), nn::Dense::zeros_like(readout_), 0.0, 0.0};
}

void EncoderModel::backward(const Trace& trace, const Vector& d_embedding, Gradient& grad) const {
  const double n = trace.z.norm();
  const Vector e = trace.z / n;
  const Vector dz = (d_embedding - e * e.dot(d_embedding)) / n;
  grad.readout.weight.noalias() += dz * trace.pooled.transpose();
  grad.readout.bias.col(0) += dz;
  const Vector d_pooled = readout_.weight.transpose() * dz;
  const auto steps = trace.h.rows();
  Matrix d_hidden = (d_pooled / static_cast<double>(steps)).transpose().replicate(steps, 1);
  layer_.backward(trace.x, trace.h, d_hidden, grad.layer);
}

void EncoderModel::apply(Gradient& grad, double learning_rate) {
  nn::visit(layer_, grad.layer, [&](Matrix& p, Matrix& g) { p -= learning_rate * g; });
  nn::visit(readout_, grad.readout, [&](Matrix& p, Matrix& g) { p -= learning_rate * g; });
  ge2e_.w = std::max(config_.w_floor, ge2e_.w - learning_rate * grad.d_w);
  ge2e_.b -= learning_rate * grad.d_b;
}

std::vector<double> EncoderModel::parameters() const {
  std::vector<double> out;
  auto add = [&](const Matrix& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  add(layer_.w_in);
  add(layer_.w_rec);
  add(layer_.bias);
  add(readout_.weight);
  add(readout_.bias);
  out.push_back(ge2e_.w);
  out.push_back(ge2e_.b);
  return out;
}

void EncoderModel::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "forge-speaker-encoder";
  j["version"] = 1;
  j["input_dim"] = input_dim();
  j["hidden"] = static_cast<int>(layer_.hidden());
  j["dim"] = dim();
  j["seed"] = seed_;
  j["config"] = {{"hidden", config_.hidden},       {"dim", config_.dim},
                 {"epochs", config_.epochs},       {"learning_rate", config_.learning_rate},
                 {"clip_norm", config_.clip_norm}, {"w_floor", config_.w_floor},
                 {"init_w", config_.init.w},       {"init_b", config_.init.b}};
  j["features"] = {{"frame_len", features_.frame_len}, {"hop", features_.hop},
                   {"num_mels", features_.num_mels},   {"log_floor", features_.log_floor}};
  j["ge2e"] = {{"w", ge2e_.w}, {"b", ge2e_.b}};
  j["normalization"] = {{"mean", nn::to_json(mean_)}, {"stddev", nn::to_json(stddev_)}};
  j["layer"] = {{"w_in", nn::to_json(layer_.w_in)},
                {"w_rec", nn::to_json(layer_.w_rec)},
                {"bias", nn::to_json(layer_.bias)}};
  j["readout"] = {{"weight", nn::to_json(readout_.weight)}, {"bias", nn::to_json(readout_.bias)}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "forge-speaker-encoder") throw FormatError("not a speaker encoder checkpoint");
    EncoderModel m;
    m.seed_ = j.at("seed").get<std::uint64_t>();
    const auto& c = j.at("config");
    m.config_.hidden = c.at("hidden");
    m.config_.dim = c.at("dim");
    m.config_.epochs = c.at("epochs");
    m.config_.learning_rate = c.at("learning_rate");
    m.config_.clip_norm = c.at("clip_norm");
    m.config_.w_floor = c.at("w_floor");
    m.config_.init = {c.at("init_w").get<double>(), c.at("init_b").get<double>()};
    const auto& f = j.at("features");
    m.features_.frame_len = f.at("frame_len");
    m.features_.hop = f.at("hop");
    m.features_.num_mels = f.at("num_mels");
    m.features_.log_floor = f.at("log_floor");
    m.ge2e_ = {j.at("ge2e").at("w").get<double>(), j.at("ge2e").at("b").get<double>()};
    m.mean_ = nn::matrix_from_json(j.at("normalization").at("mean"));
    m.stddev_ = nn::matrix_from_json(j.at("normalization").at("stddev"));
    m.layer_ = {nn::matrix_from_json(j.at("layer").at("w_in")),
                nn::matrix_from_json(j.at("layer").at("w_rec")),
                nn::matrix_from_json(j.at("layer").at("bias"))};
    m.readout_ = {nn::matrix_from_json(j.at("readout").at("weight")),
                  nn::matrix_from_json(j.at("readout").at("bias"))};
    const auto h = m.layer_.hidden();
    if (m.layer_.w_rec.rows() != h || m.layer_.w_rec.cols() != h || m.layer_.bias.rows() != h ||
        m.readout_.weight.cols() != h || m.readout_.bias.rows() != m.readout_.weight.rows() ||
        m.mean_.size() != m.layer_.inputs() || m.stddev_.size() != m.layer_.inputs())
      throw FormatError("inconsistent checkpoint dimensions");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Toy corpus

std::string toy_sentence(Rng& rng) {
  static constexpr std::array<const char*, 40> kWords = {
      "the",   "ball",  "is",    "red",    "we",     "play",  "outside", "today", "my",
      "dog",   "likes", "to",    "run",    "in",     "park",  "please",  "open",  "window",
      "sun",   "warm",  "water", "bright", "little", "bird",  "sings",   "song",  "morning",
      "green", "tree",  "tall",  "toy",    "robot",  "moves", "slowly",  "happy", "friends",
      "jump",  "over",  "rain",  "cloud"};
  std::string s;
  while (s.size() < 34) {
    if (!s.empty()) s += ' ';
    s += kWords[static_cast<std::size_t>(rng.uniform_int(0, kWords.size() - 1))];
  }
  return s;
}

ToyCorpus make_toy_corpus(int num_child, int num_adult, int utterances_per_speaker,
                          std::uint64_t corpus_seed, int sample_rate) {
  ToyCorpus corpus;
  Rng rng(mix64(corpus_seed));
  const auto add = [&](tts::VoiceProfile profile, bool child) {
    ToySpeaker spk;
    spk.profile = std::move(profile);
    spk.child = child;
    for (int u = 0; u < utterances_per_speaker; ++u) {
      spk.texts.push_back(toy_sentence(rng));
      spk.utterances.push_back(tts::synthesize(spk.texts.back(), spk.profile, sample_rate, rng.next()));
    }
    corpus.speakers.push_back(std::move(spk));
  };
  for (int c = 0; c < num_child; ++c) add(tts::child_profile(rng.next() % 1000000), true);
  for (int a = 0; a < num_adult; ++a) add(tts::adult_profile(rng.next() % 1000000), false);
  return corpus;
}

ToyCorpus held_out_corpus(const ToyCorpus& corpus, int utterances_per_speaker, std::uint64_t seed,
                          int sample_rate) {
  ToyCorpus out;
  Rng rng(mix64(seed) ^ 0x686f6c64ULL);
  for (const auto& spk : corpus.speakers) {
    ToySpeaker copy;
    copy.profile = spk.profile;
    copy.child = spk.child;
    for (int u = 0; u < utterances_per_speaker; ++u) {
      copy.texts.push_back(toy_sentence(rng));
      copy.utterances.push_back(tts::synthesize(copy.texts.back(), copy.profile, sample_rate, rng.next()));
    }
    out.speakers.push_back(std::move(copy));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct PreparedCorpus {
  // partials[j][i][p]: normalized input matrices.
  std::vector<std::vector<std::vector<Matrix>>> partials;
};

}  // namespace

TrainResult train_encoder(const ToyCorpus& corpus, const EncoderConfig& config, std::uint64_t seed) {
  if (corpus.speakers.size() < 4) throw ValidationError("encoder training needs at least 4 speakers");
  std::size_t m = corpus.speakers.front().utterances.size();
  for (const auto& s : corpus.speakers) m = std::min(m, s.utterances.size());
  if (m < 4) throw ValidationError("encoder training needs at least 4 utterances per speaker");
  if (config.epochs < 0 || !(config.learning_rate > 0.0))
    throw ValidationError("invalid encoder training config");

  const auto fc = encoder_features();
  std::vector<std::vector<std::vector<audio::FeatureSequence>>> feats(corpus.speakers.size());
  const auto in_dim = static_cast<Eigen::Index>(fc.num_cepstra > 0 ? fc.num_cepstra : fc.num_mels);
  Vector sum = Vector::Zero(in_dim);
  Vector sq = sum;
  double frames = 0;
  for (std::size_t j = 0; j < corpus.speakers.size(); ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      feats[j].push_back(segment_partials(corpus.speakers[j].utterances[i]));
      for (const auto& part : feats[j].back())
        for (const auto& row : part.rows) {
          const Eigen::Map<const Vector> r(row.data(), static_cast<Eigen::Index>(row.size()));
          sum += r;
          sq += r.cwiseProduct(r);
          frames += 1;
        }
    }
  }
  const Vector mean = sum / frames;
  const Vector var = (sq / frames - mean.cwiseProduct(mean)).cwiseMax(0.0);

  TrainResult result;
  EncoderModel& model = result.model;
  model = EncoderModel(static_cast<int>(in_dim), config, seed);
  model.set_normalization(mean, var.cwiseSqrt());

  PreparedCorpus prep;
  prep.partials.resize(feats.size());
  for (std::size_t j = 0; j < feats.size(); ++j) {
    prep.partials[j].resize(m);
    for (std::size_t i = 0; i < m; ++i)
      for (const auto& part : feats[j][i]) prep.partials[j][i].push_back(model.normalize(part));
  }

  const auto batch_loss = [&](const std::vector<std::vector<std::size_t>>& pick) {
    EmbeddingBatch batch;
    batch.embeddings.resize(prep.partials.size());
    EncoderModel::Trace trace;
    for (std::size_t j = 0; j < prep.partials.size(); ++j)
      for (std::size_t i = 0; i < m; ++i)
        batch.embeddings[j].push_back(model.forward(prep.partials[j][i][pick[j][i]], trace));
    return ge2e_loss(batch, model.ge2e());
  };
  const std::vector<std::vector<std::size_t>> first(prep.partials.size(), std::vector<std::size_t>(m, 0));
  result.initial_loss = batch_loss(first);

  Rng rng(mix64(seed) ^ 0x7472616eULL);
  std::vector<std::vector<EncoderModel::Trace>> traces(prep.partials.size(), std::vector<EncoderModel::Trace>(m));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EmbeddingBatch batch;
    batch.embeddings.resize(prep.partials.size());
    for (std::size_t j = 0; j < prep.partials.size(); ++j)
      for (std::size_t i = 0; i < m; ++i) {
        const auto& parts = prep.partials[j][i];
        const auto p = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(parts.size()) - 1));
        batch.embeddings[j].push_back(model.forward(parts[p], traces[j][i]));
      }
    const GE2EGradient g = ge2e_loss_and_gradient(batch, model.ge2e());
    if (!std::isfinite(g.loss)) throw TrainingError("GE2E loss became non-finite at epoch " + std::to_string(epoch));
    result.history.push_back(g.loss);
    auto grad = model.zero_gradient();
    grad.d_w = g.d_w;
    grad.d_b = g.d_b;
    for (std::size_t j = 0; j < prep.partials.size(); ++j)
      for (std::size_t i = 0; i < m; ++i) model.backward(traces[j][i], g.d_embeddings[j][i], grad);
    Matrix dwb(2, 1);
    dwb << grad.d_w, grad.d_b;
    nn::clip_norm({&grad.layer.w_in, &grad.layer.w_rec, &grad.layer.bias, &grad.readout.weight,
                   &grad.readout.bias, &dwb},
                  config.clip_norm);
    grad.d_w = dwb(0, 0);
    grad.d_b = dwb(1, 0);
    model.apply(grad, config.learning_rate);
  }
  result.final_loss = batch_loss(first);
  if (!std::isfinite(result.final_loss)) throw TrainingError("final GE2E loss is non-finite");
  return result;
}

Separation evaluate_separation(const EncoderModel& model, const ToyCorpus& corpus) {
  std::vector<std::pair<std::size_t, Vector>> all;
  for (std::size_t j = 0; j < corpus.speakers.size(); ++j)
    for (const auto& clip : corpus.speakers[j].utterances)
      for (const auto& part : segment_partials(clip)) all.emplace_back(j, model.embed(part).vector());
  double same = 0, cross = 0;
  std::size_t ns = 0, nc = 0;
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      const double c = all[a].second.dot(all[b].second);
      if (all[a].first == all[b].first) {
        same += c;
        ++ns;
      } else {
        cross += c;
        ++nc;
      }
    }
  if (ns == 0 || nc == 0) throw ValidationError("separation needs several speakers with several partials");
  return {same / static_cast<double>(ns), cross / static_cast<double>(nc)};
}

// ---------------------------------------------------------------------------
// Centroid and ranking

SpeakerEmbedding centroid(const std::vector<SpeakerEmbedding>& embeddings) {
  if (embeddings.empty()) throw ValidationError("centroid of an empty set");
  Vector acc = Vector::Zero(embeddings.front().dim());
  for (const auto& e : embeddings) {
    if (e.dim() != acc.size()) throw ValidationError("centroid of mixed dimensions");
    acc += e.vector();
  }
  acc /= static_cast<double>(embeddings.size());
  if (acc.norm() < 1e-12) throw ValidationError("embeddings average to the zero vector");
  return SpeakerEmbedding::normalized(acc);
}

std::vector<std::pair<std::string, double>> rank_adults(
    const std::map<std::string, SpeakerEmbedding>& adults, const SpeakerEmbedding& child_centroid) {
  if (adults.empty()) throw ValidationError("no adult embeddings to rank");
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [name, e] : adults) out.emplace_back(name, cosine_similarity(e, child_centroid));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

}  // namespace forge::speaker
