#include <doctest.h>

#include <cmath>

#include "forge/error.hpp"
#include "forge/speaker.hpp"
#include "oracles.hpp"

using namespace forge;
using namespace forge::speaker;
using nn::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Vector random_unit(Rng& rng, int d) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v.normalized();
}

// The loss written out term by term with plain loops.
double brute_ge2e(const std::vector<std::vector<Vector>>& e, double w, double b) {
  const std::size_t n = e.size(), m = e[0].size();
  auto cos = [](const Vector& a, const Vector& c) {
    double d = 0, na = 0, nc = 0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      d += a(k) * c(k);
      na += a(k) * a(k);
      nc += c(k) * c(k);
    }
    return d / std::sqrt(na * nc);
  };
  double loss = 0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) {
      double denom = 0, own = 0;
      for (std::size_t k = 0; k < n; ++k) {
        Vector c = Vector::Zero(e[0][0].size());
        std::size_t cnt = 0;
        for (std::size_t u = 0; u < m; ++u)
          if (!(k == j && u == i)) c += e[k][u], ++cnt;
        c /= static_cast<double>(cnt);
        const double s = w * cos(e[j][i], c) + b;
        denom += std::exp(s);
        if (k == j) own = s;
      }
      loss += -own + std::log(denom);
    }
  return loss;
}

EmbeddingBatch orthogonal_batch() {
  EmbeddingBatch b;
  b.embeddings = {{vec({1, 0}), vec({1, 0})}, {vec({0, 1}), vec({0, 1})}};
  return b;
}

}  // namespace

TEST_CASE("cosine similarity") {
  const Vector v = vec({0.3, -1.2, 2.0});
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
  CHECK(cosine_similarity(v, Vector(-v)) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(vec({1, 0}), vec({0, 1})) == doctest::Approx(0.0));
  CHECK(cosine_similarity(vec({1, 0}), Vector(vec({1, 1}) / std::sqrt(2.0))) == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK_THROWS_AS(cosine_similarity(vec({0, 0}), vec({1, 0})), ValidationError);
  CHECK_THROWS_AS(cosine_similarity(vec({1, 0, 0}), vec({1, 0})), ValidationError);
}

TEST_CASE("embedding normalization contract") {
  const auto e = SpeakerEmbedding::normalized(vec({3, 4}));
  CHECK(e.vector().norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.vector()(0) == doctest::Approx(0.6));
  CHECK_THROWS_AS(SpeakerEmbedding::normalized(vec({0, 0})), ValidationError);
  CHECK_THROWS_AS(SpeakerEmbedding::normalized(vec({std::nan(""), 1})), ValidationError);
  CHECK_THROWS_AS(SpeakerEmbedding::from_unit(vec({1, 1})), ValidationError);
}

TEST_CASE("GE2E loss values") {
  SUBCASE("orthogonal 2x2 batch") {
    const double want = 4 * (-1 + std::log(1 + std::exp(1.0)));
    CHECK(want / 4 == doctest::Approx(0.3133).epsilon(1e-4));
    CHECK(brute_ge2e(orthogonal_batch().embeddings, 1, 0) == doctest::Approx(want).epsilon(1e-12));
    CHECK(std::abs(ge2e_loss(orthogonal_batch(), {1.0, 0.0}) - want) < 1e-6);
  }
  SUBCASE("identical embeddings give N M ln N") {
    for (std::size_t n : {2u, 3u, 5u})
      for (std::size_t m : {2u, 4u}) {
        EmbeddingBatch b;
        b.embeddings.assign(n, std::vector<Vector>(m, vec({0.6, 0.8})));
        CHECK(std::abs(ge2e_loss(b, {3.0, -1.0}) - n * m * std::log(static_cast<double>(n))) < 1e-6);
      }
  }
  SUBCASE("larger w lowers the loss for separated speakers") {
    CHECK(ge2e_loss(orthogonal_batch(), {5.0, 0.0}) < ge2e_loss(orthogonal_batch(), {1.0, 0.0}));
  }
  SUBCASE("random batches match the brute-force oracle") {
    Rng rng(21);
    for (int t = 0; t < 5; ++t) {
      EmbeddingBatch b;
      b.embeddings.resize(3);
      for (auto& s : b.embeddings)
        for (int i = 0; i < 4; ++i) s.push_back(random_unit(rng, 5));
      CHECK(ge2e_loss(b, {7.0, -2.0}) == doctest::Approx(brute_ge2e(b.embeddings, 7.0, -2.0)).epsilon(1e-10));
    }
  }
  SUBCASE("invariant under a global rotation") {
    Rng rng(5);
    EmbeddingBatch b;
    b.embeddings.resize(3);
    for (auto& s : b.embeddings)
      for (int i = 0; i < 3; ++i) s.push_back(random_unit(rng, 4));
    nn::Matrix a(4, 4);
    for (int i = 0; i < 16; ++i) a.data()[i] = rng.normal();
    const nn::Matrix q = Eigen::HouseholderQR<nn::Matrix>(a).householderQ();
    EmbeddingBatch r = b;
    for (auto& s : r.embeddings)
      for (auto& e : s) e = q * e;
    CHECK(ge2e_loss(r, {10, -5}) == doctest::Approx(ge2e_loss(b, {10, -5})).epsilon(1e-10));
  }
  SUBCASE("invalid batches") {
    EmbeddingBatch one;
    one.embeddings = {{vec({1, 0})}, {vec({0, 1})}};
    CHECK_THROWS_AS(ge2e_loss(one, {}), ValidationError);
    EmbeddingBatch single;
    single.embeddings = {{vec({1, 0}), vec({1, 0})}};
    CHECK_THROWS_AS(ge2e_loss(single, {}), ValidationError);
    EmbeddingBatch ragged;
    ragged.embeddings = {{vec({1, 0}), vec({1, 0})}, {vec({0, 1})}};
    CHECK_THROWS_AS(ge2e_loss(ragged, {}), ValidationError);
  }
}

TEST_CASE("GE2E gradient matches central differences") {
  Rng rng(8);
  EmbeddingBatch b;
  b.embeddings.resize(3);
  for (auto& s : b.embeddings)
    for (int i = 0; i < 3; ++i) s.push_back(random_unit(rng, 4));
  const GE2EParams p{4.0, -1.5};
  const auto g = ge2e_loss_and_gradient(b, p);
  CHECK(g.loss == doctest::Approx(ge2e_loss(b, p)).epsilon(1e-12));
  const double h = 1e-6;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n)); };
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 3; ++i)
      for (Eigen::Index k = 0; k < 4; ++k) {
        // The loss is defined on raw vectors, so perturb without renormalizing.
        EmbeddingBatch up = b, dn = b;
        up.embeddings[j][i](k) += h;
        dn.embeddings[j][i](k) -= h;
        auto loss_raw = [&](const EmbeddingBatch& x) { return brute_ge2e(x.embeddings, p.w, p.b); };
        const double num = (loss_raw(up) - loss_raw(dn)) / (2 * h);
        CHECK(rel(g.d_embeddings[j][i](k), num) <= 1e-4);
      }
  const double nw = (ge2e_loss(b, {p.w + h, p.b}) - ge2e_loss(b, {p.w - h, p.b})) / (2 * h);
  const double nb = (ge2e_loss(b, {p.w, p.b + h}) - ge2e_loss(b, {p.w, p.b - h})) / (2 * h);
  CHECK(rel(g.d_w, nw) <= 1e-4);
  CHECK(rel(g.d_b, nb) <= 1e-4);
}

TEST_CASE("encoder parameter gradient matches central differences") {
  EncoderConfig cfg;
  cfg.hidden = 5;
  cfg.dim = 3;
  EncoderModel model(4, cfg, 99);
  Rng rng(12);
  std::vector<std::vector<nn::Matrix>> xs(2, std::vector<nn::Matrix>(2));
  for (auto& s : xs)
    for (auto& x : s) {
      x.resize(3, 4);
      for (int i = 0; i < 12; ++i) x.data()[i] = rng.normal();
    }
  auto loss_of = [&](const EncoderModel& m) {
    EmbeddingBatch b;
    b.embeddings.resize(2);
    EncoderModel::Trace t;
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t i = 0; i < 2; ++i) b.embeddings[j].push_back(m.forward(xs[j][i], t));
    return ge2e_loss(b, m.ge2e());
  };

  EmbeddingBatch b;
  b.embeddings.resize(2);
  std::vector<std::vector<EncoderModel::Trace>> traces(2, std::vector<EncoderModel::Trace>(2));
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 2; ++i) b.embeddings[j].push_back(model.forward(xs[j][i], traces[j][i]));
  const auto g = ge2e_loss_and_gradient(b, model.ge2e());
  auto grad = model.zero_gradient();
  grad.d_w = g.d_w;
  grad.d_b = g.d_b;
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 2; ++i) model.backward(traces[j][i], g.d_embeddings[j][i], grad);

  // Analytic gradient flattened in parameters() order.
  std::vector<double> analytic;
  auto add = [&](const nn::Matrix& m) { analytic.insert(analytic.end(), m.data(), m.data() + m.size()); };
  add(grad.layer.w_in);
  add(grad.layer.w_rec);
  add(grad.layer.bias);
  add(grad.readout.weight);
  add(grad.readout.bias);
  analytic.push_back(grad.d_w);
  analytic.push_back(grad.d_b);
  REQUIRE(analytic.size() == model.parameters().size());

  // Nudge one parameter by applying a one-hot gradient with a negative step.
  const double h = 1e-5;
  auto nudged = [&](std::size_t idx, double delta) {
    EncoderModel m = model;
    auto e = m.zero_gradient();
    std::size_t pos = 0;
    auto mark = [&](nn::Matrix& p, nn::Matrix&) {
      if (idx >= pos && idx < pos + static_cast<std::size_t>(p.size())) p.data()[idx - pos] = 1.0;
      pos += static_cast<std::size_t>(p.size());
    };
    nn::visit(e.layer, e.layer, mark);
    nn::visit(e.readout, e.readout, mark);
    if (idx == pos) e.d_w = 1.0;
    if (idx == pos + 1) e.d_b = 1.0;
    m.apply(e, -delta);
    return m;
  };
  double worst = 0;
  for (std::size_t idx = 0; idx < analytic.size(); ++idx) {
    const auto up = nudged(idx, h), dn = nudged(idx, -h);
    const double moved = up.parameters()[idx] - model.parameters()[idx];
    REQUIRE(moved == doctest::Approx(h).epsilon(1e-6));
    const double num = (loss_of(up) - loss_of(dn)) / (2 * h);
    const double a = analytic[idx];
    worst = std::max(worst, std::abs(a - num) / std::max(1e-7, std::abs(a) + std::abs(num)));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("partial windows") {
  const auto w35 = partial_windows(56000, 16000);
  REQUIRE(w35.size() == 3);
  CHECK(w35[0].start == 0);
  CHECK(w35[1].start == 12800);
  CHECK(w35[2].start == 25600);
  for (const auto& w : w35) CHECK(w.length == 25600);
  CHECK(partial_windows(25600, 16000).size() == 1);
  CHECK_THROWS_AS(partial_windows(16000, 16000), TooShortError);
  for (std::size_t n = 25600; n < 120000; n += 3331)
    CHECK(partial_windows(n, 16000).size() ==
          static_cast<std::size_t>(std::floor((n / 16000.0 - 1.6) / 0.8 + 1e-9)) + 1);
  const auto parts = segment_partials(oracle::sine(200, 3.5));
  REQUIRE(parts.size() == 3);
  CHECK(parts[0].size() == parts[2].size());
  CHECK(parts[0].dim() == encoder_features().num_mels);
}

TEST_CASE("centroid and ranking") {
  const auto a = SpeakerEmbedding::normalized(vec({1, 0}));
  const auto b = SpeakerEmbedding::normalized(vec({0, 1}));
  CHECK(centroid({a}).vector() == a.vector());
  const auto c = centroid({a, b});
  CHECK(c.vector()(0) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(c.vector()(1) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK_THROWS_AS(centroid({}), ValidationError);
  CHECK_THROWS_AS(centroid({a, SpeakerEmbedding::normalized(vec({-1, 0}))}), ValidationError);

  const auto ref = SpeakerEmbedding::normalized(vec({1, 0}));
  std::map<std::string, SpeakerEmbedding> adults{
      {"low", SpeakerEmbedding::normalized(vec({0.1, std::sqrt(1 - 0.01)}))},
      {"high", SpeakerEmbedding::normalized(vec({0.9, std::sqrt(1 - 0.81)}))},
      {"same", ref},
  };
  const auto r = rank_adults(adults, ref);
  REQUIRE(r.size() == 3);
  CHECK(r[0].first == "same");
  CHECK(r[0].second == doctest::Approx(1.0));
  CHECK(r[1].first == "high");
  CHECK(r[1].second == doctest::Approx(0.9));
  CHECK(r[2].first == "low");
  CHECK(r[2].second == doctest::Approx(0.1));

  std::map<std::string, SpeakerEmbedding> tied{{"b", a}, {"a", a}, {"c", b}};
  const auto t = rank_adults(tied, ref);
  CHECK(t[0].first == "a");
  CHECK(t[1].first == "b");
  CHECK_THROWS_AS(rank_adults({}, ref), ValidationError);
}

TEST_CASE("ranking depends only on the order of similarities") {
  Rng rng(30);
  std::map<std::string, SpeakerEmbedding> adults;
  for (int i = 0; i < 12; ++i) adults.emplace("s" + std::to_string(i), SpeakerEmbedding::normalized(random_unit(rng, 6)));
  const auto ref = SpeakerEmbedding::normalized(random_unit(rng, 6));
  const auto r = rank_adults(adults, ref);
  std::vector<std::pair<double, std::string>> oracle_order;
  for (const auto& [n, e] : adults) oracle_order.emplace_back(-std::exp(3 * cosine_similarity(e, ref)), n);
  std::sort(oracle_order.begin(), oracle_order.end());
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i].first == oracle_order[i].second);
}

TEST_CASE("encoder embedding and small training") {
  const auto corpus = make_toy_corpus(2, 2, 4, 3);
  REQUIRE(corpus.speakers.size() == 4);
  CHECK(corpus.speakers[0].child);
  CHECK_FALSE(corpus.speakers[3].child);
  CHECK(corpus.speakers[0].profile.f0_base > corpus.speakers[3].profile.f0_base);

  EncoderConfig cfg;
  cfg.epochs = 15;
  cfg.hidden = 12;
  cfg.dim = 8;
  const auto r1 = train_encoder(corpus, cfg, 4);
  const auto r2 = train_encoder(corpus, cfg, 4);
  CHECK(r1.model.parameters() == r2.model.parameters());
  CHECK(r1.history.size() == 15);
  CHECK(std::isfinite(r1.final_loss));
  CHECK(r1.model.ge2e().w >= cfg.w_floor);

  const auto& clip = corpus.speakers[1].utterances[0];
  const auto e1 = r1.model.embed_utterance(clip);
  CHECK(e1.dim() == 8);
  CHECK(std::abs(e1.vector().norm() - 1.0) <= 1e-6);
  CHECK(r1.model.embed_utterance(clip).vector() == e1.vector());
  for (const auto& part : segment_partials(clip)) CHECK(std::abs(r1.model.embed(part).vector().norm() - 1.0) <= 1e-6);

  audio::FeatureSequence wrong;
  wrong.rows.assign(10, std::vector<double>(5, 0.0));
  CHECK_THROWS_AS(r1.model.embed(wrong), ValidationError);

  oracle::TempDir dir;
  r1.model.save(dir / "enc.json");
  const auto loaded = EncoderModel::load(dir / "enc.json");
  CHECK(loaded.parameters() == r1.model.parameters());
  CHECK(loaded.embed_utterance(clip).vector() == e1.vector());
  CHECK_THROWS_AS(EncoderModel::load(dir / "missing.json"), IoError);

  SUBCASE("too-small corpora are rejected") {
    ToyCorpus one = corpus;
    one.speakers.resize(1);
    CHECK_THROWS_AS(train_encoder(one, cfg, 1), ValidationError);
    ToyCorpus few = corpus;
    for (auto& s : few.speakers) s.utterances.resize(3);
    CHECK_THROWS_AS(train_encoder(few, cfg, 1), ValidationError);
  }
}
