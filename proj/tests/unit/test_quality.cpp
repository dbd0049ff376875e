#include <doctest.h>

#include <cmath>
#include <fstream>
#include <thread>

#include "forge/anim.hpp"
#include "forge/error.hpp"
#include "forge/quality.hpp"
#include "forge/render.hpp"
#include "forge/tts.hpp"
#include "oracles.hpp"

using namespace forge;
using namespace forge::quality;
using render::Image;
using render::Landmarks2D;

namespace {

const auto kTmpl = anim::LandmarkTemplate::canonical();

audio::AudioClip speech(std::uint64_t seed, const std::string& text = "It's raining so we will plan some other day") {
  return tts::synthesize(text, tts::adult_profile(seed), 16000, seed);
}

struct Clip {
  render::SeedFace seed;
  render::Camera cam;
  anim::LandmarkSequence seq;
  std::vector<Landmarks2D> pts;
  render::ClipFrames frames;
  audio::AudioClip audio;
};

Clip make_clip(std::uint64_t s) {
  Clip c;
  c.seed = render::generate_test_face({}, s);
  c.cam = render::fit_camera(c.seed.landmarks);
  c.audio = speech(s);
  c.seq = anim::procedural_articulate(c.audio, render::back_project(c.seed.landmarks, c.cam));
  c.seq = anim::inject_blinks(c.seq, s);
  c.pts = render::project(c.seq, c.cam);
  c.frames = render::render_clip(c.seed, c.pts, 25, c.audio);
  return c;
}

std::vector<MosResponse> counts(int n, std::array<int, 3> yes) {
  std::vector<MosResponse> out;
  for (int p = 0; p < n; ++p) {
    MosResponse r;
    r.timestamp = "2024-01-01T00:00:00Z";
    r.participant = "p" + std::to_string(p);
    r.clips = {"a"};
    for (int q = 0; q < 3; ++q) r.agree[static_cast<std::size_t>(q)] = p < yes[static_cast<std::size_t>(q)];
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("pearson") {
  CHECK(pearson({1, 2, 3, 4}, {2, 4, 6, 8}) == doctest::Approx(1.0));
  CHECK(pearson({1, 2, 3, 4}, {8, 6, 4, 2}) == doctest::Approx(-1.0));
  Rng rng(1);
  std::vector<double> a, b;
  for (int i = 0; i < 50; ++i) a.push_back(rng.normal()), b.push_back(rng.normal() + 0.5 * a.back());
  CHECK(pearson(a, b) == doctest::Approx(oracle::pearson(a, b)).epsilon(1e-12));
  CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), UndefinedCorrelationError);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), ValidationError);
}

TEST_CASE("landmark sanity") {
  const auto frontal = render::project(kTmpl.points);
  SUBCASE("template sequence passes") {
    const auto r = landmark_sanity(std::vector<Landmarks2D>(10, frontal), 256, 256);
    CHECK(r.pass());
    CHECK(r.frames == 10);
  }
  SUBCASE("a point outside the frame is flagged on its frame") {
    std::vector<Landmarks2D> f(5, frontal);
    f[3](10, 0) = -5;
    f[3](10, 1) = 10;
    const auto r = landmark_sanity(f, 256, 256);
    CHECK_FALSE(r.pass());
    REQUIRE(r.flagged_frames() == std::vector<std::size_t>{3});
    CHECK(r.violations[0].check == "bounds");
  }
  SUBCASE("vertical flip puts the eyes below the mouth") {
    Landmarks2D flipped = frontal;
    flipped.col(1) = (255.0 - frontal.col(1).array()).matrix();
    const auto r = landmark_sanity({frontal, flipped}, 256, 256);
    REQUIRE(r.flagged_frames() == std::vector<std::size_t>{1});
    CHECK(r.violations[0].check == "eyes_above_mouth");
  }
  SUBCASE("collapsed eyes and NaN") {
    Landmarks2D eyes = frontal;
    for (int i = anim::kEyes.begin; i < anim::kEyes.end; ++i) eyes.row(i) = frontal.row(27);
    Landmarks2D nan = frontal;
    nan(0, 0) = std::nan("");
    const auto r = landmark_sanity({eyes, nan}, 256, 256);
    bool inter = false, finite = false;
    for (const auto& v : r.violations) {
      inter = inter || (v.frame == 0 && v.check == "interocular");
      finite = finite || (v.frame == 1 && v.check == "finite");
    }
    CHECK(inter);
    CHECK(finite);
  }
}

TEST_CASE("face box") {
  Landmarks2D unit = Landmarks2D::Zero();
  for (int i = 0; i < 68; ++i) unit.row(i) << (i % 2), ((i / 2) % 2);
  const auto b = face_box(unit, 0.1);
  CHECK(b.x0 == doctest::Approx(-0.1));
  CHECK(b.y0 == doctest::Approx(-0.1));
  CHECK(b.x1 == doctest::Approx(1.1));
  CHECK(b.y1 == doctest::Approx(1.1));
  const auto c = face_box(unit, 0.1, 100, 100);
  CHECK(c.x0 == 0.0);
  CHECK(c.y0 == 0.0);
  CHECK(c.x1 == doctest::Approx(1.1));

  Landmarks2D edge = unit * 250.0;
  const auto d = face_box(edge, 0.1, 256, 256);
  CHECK(d.x1 == 255.0);
  CHECK(d.y1 == 255.0);

  const auto clip = make_clip(3);
  for (const auto& f : clip.pts) {
    const auto box = face_box(f, 0.1, 256, 256);
    for (int i = 0; i < 68; ++i) CHECK(box.contains(f(i, 0), f(i, 1)));
  }
}

TEST_CASE("identity similarity") {
  const auto face = render::generate_test_face({}, 5);
  SUBCASE("seed against itself") {
    const auto r = identity_similarity({face.image, face.image}, face);
    CHECK(r.min == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.mean == doctest::Approx(1.0).epsilon(1e-12));
    const auto d = identity_descriptor(face.image, face.landmarks);
    double n = 0;
    for (double v : d) n += v * v;
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.size() == 16 * 16 + 8);
  }
  SUBCASE("uniform noise is unrelated") {
    Rng rng(99);
    double total = 0;
    for (int t = 0; t < 20; ++t) {
      Image noise(256, 256);
      for (auto& v : noise.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
      total += std::abs(identity_similarity({noise}, face).min);
    }
    CHECK(total / 20 < 0.2);
  }
  SUBCASE("another face scores lower than a rendered clip of this one") {
    const auto clip = make_clip(5);
    const auto own = identity_similarity(clip.frames.frames, clip.seed, &clip.pts);
    CHECK(own.min >= 0.8);
    const auto other = render::generate_test_face({}, 6);
    CHECK(identity_similarity({other.image}, clip.seed).min < own.min);
  }
  SUBCASE("empty input") { CHECK_THROWS_AS(identity_similarity({}, face), ValidationError); }
}

TEST_CASE("lip-sync score") {
  const auto clip = speech(2, "It's raining so we will plan some other day. We will plan some other day");
  const auto seq = anim::procedural_articulate(clip, kTmpl);
  const double r = lip_sync_score(seq, clip, 25);
  CHECK(r >= 0.99);

  SUBCASE("seeded permutation destroys the correlation") {
    auto shuffled = seq;
    Rng rng(4);
    for (std::size_t i = shuffled.frames.size(); i > 1; --i)
      std::swap(shuffled.frames[i - 1], shuffled.frames[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    CHECK(std::abs(lip_sync_score(shuffled, clip, 25)) < 0.3);
  }
  SUBCASE("positive affine rescaling leaves r unchanged") {
    auto scaled = seq;
    for (auto& f : scaled.frames) f = (2.5 * f).rowwise() + Eigen::RowVector3d(1, -2, 3);
    auto louder = clip;
    for (auto& v : louder.samples) v *= 0.5;
    CHECK(lip_sync_score(scaled, louder, 25) == doctest::Approx(r).epsilon(1e-9));
  }
  SUBCASE("silence has no defined correlation") {
    audio::AudioClip quiet;
    quiet.samples.assign(32000, 0.0);
    CHECK_THROWS_AS(lip_sync_score(anim::procedural_articulate(quiet, kTmpl), quiet, 25), UndefinedCorrelationError);
  }
  SUBCASE("length mismatch") {
    auto shorter = seq;
    shorter.frames.pop_back();
    CHECK_THROWS_AS(lip_sync_score(shorter, clip, 25), ValidationError);
  }
}

TEST_CASE("frame histograms") {
  Image a(40, 30, {10, 20, 30});
  Image b = a;
  b.at(3, 4, 1) = 200;
  const auto h = frame_histograms({a, a, b});
  REQUIRE(h.l1.size() == 2);
  CHECK(h.l1[0] == 0);
  CHECK(h.l1[1] == 2);
  CHECK(h.nonzero_fraction() == doctest::Approx(0.5));
  for (const auto& fh : h.histograms)
    for (const auto& ch : fh) {
      std::uint64_t sum = 0;
      for (auto v : ch) sum += v;
      CHECK(sum == 40u * 30u);
    }
  CHECK(frame_histograms({a}).nonzero_fraction() == 0.0);
  CHECK_THROWS_AS(frame_histograms({a, Image(30, 40)}), ValidationError);

  SUBCASE("counting ignores pixel order") {
    const auto face = render::generate_test_face({}, 2);
    Image flipped = face.image;
    for (int y = 0; y < 256; ++y)
      for (int x = 0; x < 256; ++x)
        for (int c = 0; c < 3; ++c) flipped.at(x, y, c) = face.image.at(255 - x, 255 - y, c);
    const auto hh = frame_histograms({face.image, flipped});
    CHECK(hh.histograms[0] == hh.histograms[1]);
    CHECK(hh.l1[0] == 0);
  }
  SUBCASE("speaking clip changes almost every transition") {
    const auto clip = make_clip(7);
    CHECK(frame_histograms(clip.frames.frames).nonzero_fraction() > 0.9);
  }
}

TEST_CASE("quality report") {
  const auto clip = make_clip(9);
  ClipInputs in;
  in.seed = &clip.seed;
  in.frames = &clip.frames.frames;
  in.landmarks2d = &clip.pts;
  in.landmarks = &clip.seq;
  in.audio = &clip.audio;
  const auto rep = evaluate(in);
  CHECK(rep.pass());
  CHECK(rep.errors.empty());
  for (const char* name : {"landmark_sanity", "face_box_coverage", "identity_similarity_min", "lip_sync_r",
                           "histogram_nonzero_fraction"}) {
    const auto* m = rep.find(name);
    REQUIRE(m != nullptr);
    CHECK(m->threshold.has_value());
  }
  CHECK(rep.find("identity_similarity_mean")->threshold == std::nullopt);

  SUBCASE("overall pass is the conjunction of thresholded metrics") {
    Thresholds strict;
    strict.identity_min = 1.01;
    const auto r2 = evaluate(in, strict);
    CHECK_FALSE(r2.pass());
    CHECK_FALSE(r2.find("identity_similarity_min")->pass);
    CHECK(r2.find("lip_sync_r")->pass);
    for (const auto& rr : {rep, r2}) {
      bool all = true;
      for (const auto& m : rr.metrics) all = all && (!m.threshold || m.value >= *m.threshold);
      CHECK(rr.pass() == all);
    }
  }
  SUBCASE("a metric that cannot be computed fails instead of throwing") {
    audio::AudioClip quiet = clip.audio;
    std::fill(quiet.samples.begin(), quiet.samples.end(), 0.0);
    ClipInputs bad = in;
    bad.audio = &quiet;
    const auto r3 = evaluate(bad);
    CHECK_FALSE(r3.pass());
    CHECK_FALSE(r3.errors.empty());
    CHECK(std::isnan(r3.find("lip_sync_r")->value));
    const auto j = r3.to_json();
    CHECK(j.dump().find("null") != std::string::npos);
    CHECK_FALSE(QualityReport::from_json(j).pass());
  }
  SUBCASE("JSON roundtrip") {
    const auto back = QualityReport::from_json(nlohmann::json::parse(rep.to_json().dump()));
    REQUIRE(back.metrics.size() == rep.metrics.size());
    for (std::size_t i = 0; i < rep.metrics.size(); ++i) {
      CHECK(back.metrics[i].name == rep.metrics[i].name);
      CHECK(back.metrics[i].value == rep.metrics[i].value);
      CHECK(back.metrics[i].threshold == rep.metrics[i].threshold);
      CHECK(back.metrics[i].pass == rep.metrics[i].pass);
    }
    CHECK(back.pass() == rep.pass());
    CHECK(back.thresholds.lip_sync_min == rep.thresholds.lip_sync_min);
  }
}

TEST_CASE("survey aggregation") {
  SUBCASE("published counts") {
    const auto s = aggregate_mos(counts(6, {5, 4, 5}));
    CHECK(s.participants == 6);
    CHECK(s.ratios[0] == doctest::Approx(5.0 / 6).epsilon(1e-12));
    CHECK(s.ratios[1] == doctest::Approx(4.0 / 6).epsilon(1e-12));
    CHECK(s.ratios[2] == doctest::Approx(5.0 / 6).epsilon(1e-12));
    CHECK(std::abs(s.overall - 0.778) < 1e-3);
    CHECK(s.overall == doctest::Approx((s.ratios[0] + s.ratios[1] + s.ratios[2]) / 3));
    const auto text = format_mos(s);
    CHECK(text.find("75.0%") != std::string::npos);
    CHECK(text.find("77.8%") != std::string::npos);
  }
  SUBCASE("all agree and single participant") {
    CHECK(aggregate_mos(counts(4, {4, 4, 4})).overall == 1.0);
    auto one = counts(1, {1, 0, 1});
    CHECK(aggregate_mos(one).overall == doctest::Approx(2.0 / 3));
  }
  SUBCASE("overall stays in [0, 1]") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      const int n = static_cast<int>(rng.uniform_int(1, 9));
      const auto s = aggregate_mos(counts(n, {static_cast<int>(rng.uniform_int(0, n)), static_cast<int>(rng.uniform_int(0, n)),
                                              static_cast<int>(rng.uniform_int(0, n))}));
      CHECK(s.overall >= 0);
      CHECK(s.overall <= 1);
    }
  }
  CHECK_THROWS_AS(aggregate_mos({}), ValidationError);
  CHECK(parse_answer("Agree"));
  CHECK_FALSE(parse_answer("disagree"));
  CHECK(parse_answer("y"));
  CHECK_FALSE(parse_answer("0"));
  CHECK_THROWS_AS(parse_answer("maybe"), ValidationError);
  CHECK(std::string(kMosQuestions[0]).rfind("Do you agree that the visual quality", 0) == 0);
}

TEST_CASE("survey file") {
  oracle::TempDir dir;
  const auto file = dir / "survey.csv";
  collect_mos(file, {"out/a/sentence_001"}, "p1", {"agree", "disagree", "agree"});
  CHECK(read_mos(file).size() == 1);
  CHECK(aggregate_mos(read_mos(file)).overall == doctest::Approx(2.0 / 3));
  collect_mos(file, {"out/a/sentence_001", "out/b/sentence_001"}, "p2", {"agree", "agree", "agree"});
  const auto rows = read_mos(file);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].clips.size() == 2);
  CHECK(aggregate_mos(rows).overall == doctest::Approx(5.0 / 6));
  CHECK_THROWS_AS(collect_mos(file, {"c"}, "p3", {"agree", "agree"}), ValidationError);
  CHECK(read_mos(file).size() == 2);

  SUBCASE("concurrent writers never interleave rows") {
    std::vector<std::thread> ts;
    for (int t = 0; t < 4; ++t)
      ts.emplace_back([&, t] {
        for (int i = 0; i < 25; ++i)
          collect_mos(file, {"clip"}, "w" + std::to_string(t) + "_" + std::to_string(i), {"y", "n", "y"});
      });
    for (auto& t : ts) t.join();
    CHECK(read_mos(file).size() == 102);
  }
  SUBCASE("malformed rows") {
    std::ofstream(dir / "bad.csv") << "timestamp,participant,clip,q1,q2,q3\n2024,p,c,1,0\n";
    CHECK_THROWS_AS(read_mos(dir / "bad.csv"), FormatError);
  }
}
