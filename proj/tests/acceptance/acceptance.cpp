// Acceptance criteria 1-10, one pass/fail line each. Exit status is the
// number of failed criteria (capped at 1).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "forge/anim.hpp"
#include "forge/audio.hpp"
#include "forge/pipeline.hpp"
#include "forge/quality.hpp"
#include "forge/render.hpp"
#include "forge/speaker.hpp"
#include "forge/voice.hpp"
#include "oracles.hpp"

using namespace forge;

namespace {

// Collects failed checks for the criterion being run.
struct Check {
  std::vector<std::string> failures;
  void operator()(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::uint32_t u32_at(const std::string& b, std::size_t off) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}

// Shared between criteria 5 and 6.
struct EncoderFixture {
  speaker::ToyCorpus corpus;
  speaker::TrainResult trained;
};
const EncoderFixture& encoder_fixture() {
  static const EncoderFixture f = [] {
    EncoderFixture e;
    e.corpus = speaker::make_toy_corpus(4, 4, 10, 7);
    e.trained = speaker::train_encoder(e.corpus, speaker::EncoderConfig{}, 11);
    return e;
  }();
  return f;
}

void audio_format(Check& check) {
  oracle::TempDir dir;
  const auto clip = oracle::sine(440, 3.5);
  check(clip.size() == 56000, "3.5 s clip has " + std::to_string(clip.size()) + " samples");
  audio::write_wav(clip, dir / "a.wav");
  const auto bytes = oracle::slurp(dir / "a.wav");
  check(bytes.size() == 44 + 112000, "file size " + std::to_string(bytes.size()));
  check(u32_at(bytes, 24) == 16000, "sample rate field");
  check(u32_at(bytes, 28) == 32000, "byte rate " + std::to_string(u32_at(bytes, 28)));
  check(bytes.substr(20, 4) == std::string("\x01\x00\x01\x00", 4), "PCM mono format fields");
  check(bytes.substr(34, 2) == std::string("\x10\x00", 2), "16 bits per sample");
  const auto back = audio::read_wav(dir / "a.wav");
  check(back.size() == 56000 && back.sample_rate == 16000, "read back 56000 samples at 16 kHz");
}

void pitch_law(Check& check) {
  const auto up = voice::pitch_shift(oracle::sine(220, 2.0), 12.0);
  const double a = oracle::peak_hz(up.samples, 16000, 100, 1000);
  check(std::abs(a - 440.0) <= 2.0, fmt("220 Hz +12 st peak %.2f Hz", a));
  const auto half = voice::pitch_shift(oracle::sine(300, 2.0), 6.0);
  const double b = oracle::peak_hz(half.samples, 16000, 100, 1000);
  const double want = 300.0 * std::pow(2.0, 0.5);
  check(std::abs(b - want) <= 2.0, fmt("300 Hz +6 st peak %.2f Hz, want %.2f", b, want));
  check(up.size() == 32000 && half.size() == 32000, "duration preserved");
}

void stretch_law(Check& check) {
  const double hop = static_cast<double>(voice::VocoderConfig{}.analysis_hop);
  const auto tone = oracle::sine(440, 2.0);
  const auto s = voice::time_stretch(tone, 1.5);
  check(std::abs(static_cast<double>(s.size()) - 48000.0) <= hop, fmt("factor 1.5 length %.0f samples", s.size()));
  const double p = oracle::peak_hz(s.samples, 16000, 100, 1000);
  check(std::abs(p - 440.0) <= 2.0, fmt("stretched peak %.2f Hz", p));
  const auto b = voice::time_stretch(tone, voice::BreakpointFunction({{0.0, 1.0}, {2.0, 2.0}}));
  check(std::abs(static_cast<double>(b.size()) - 48000.0) <= hop, fmt("BPF length %.0f samples", b.size()));
}

void ge2e(Check& check) {
  const speaker::GE2EParams params{1.0, 0.0};
  speaker::EmbeddingBatch ortho;
  nn::Vector e0 = nn::Vector::Zero(2), e1 = nn::Vector::Zero(2);
  e0(0) = 1;
  e1(1) = 1;
  ortho.embeddings = {{e0, e0}, {e1, e1}};
  const double l = speaker::ge2e_loss(ortho, params);
  const double want = 4 * (-1 + std::log(1 + std::exp(1.0)));
  check(std::abs(l - want) <= 1e-6, fmt("orthogonal loss %.8f, want %.8f", l, want));

  for (int n : {2, 3, 5})
    for (int m : {2, 4}) {
      nn::Vector u = nn::Vector::Ones(3) / std::sqrt(3.0);
      speaker::EmbeddingBatch same;
      same.embeddings.assign(n, std::vector<nn::Vector>(m, u));
      for (double w : {1.0, 10.0}) {
        const double got = speaker::ge2e_loss(same, {w, -5.0});
        check(std::abs(got - n * m * std::log(n)) <= 1e-6, fmt("identical batch N=%.0f M=%.0f loss %.8f", n, m, got));
      }
    }
}

void encoder_training(Check& check) {
  const auto& f = encoder_fixture();
  const auto& t = f.trained;
  check(t.final_loss < 0.2 * t.initial_loss, fmt("loss %.4f -> %.4f", t.initial_loss, t.final_loss));
  const auto held = speaker::held_out_corpus(f.corpus, 4, 101);
  const auto sep = speaker::evaluate_separation(t.model, held);
  std::printf("      held-out same %.3f cross %.3f margin %.3f\n", sep.same_speaker, sep.cross_speaker, sep.margin());
  check(sep.margin() >= 0.3, fmt("held-out margin %.3f", sep.margin()));
}

void childify_direction(Check& check) {
  const auto& f = encoder_fixture();
  const auto& model = f.trained.model;
  std::vector<speaker::SpeakerEmbedding> kids;
  for (const auto& s : f.corpus.speakers)
    if (s.child)
      for (const auto& u : s.utterances) kids.push_back(model.embed_utterance(u));
  const auto child_centroid = speaker::centroid(kids);
  int adults = 0, closer = 0;
  for (const auto& s : f.corpus.speakers) {
    if (s.child) continue;
    std::vector<speaker::SpeakerEmbedding> before, after;
    for (const auto& u : s.utterances) {
      before.push_back(model.embed_utterance(u));
      after.push_back(model.embed_utterance(voice::childify(u, voice::ChildifyParams{})));
    }
    const double b = speaker::cosine_similarity(speaker::centroid(before), child_centroid);
    const double a = speaker::cosine_similarity(speaker::centroid(after), child_centroid);
    std::printf("      %-12s cos to child centroid %.3f -> %.3f\n", s.profile.name.c_str(), b, a);
    ++adults;
    closer += a > b;
  }
  check(closer >= 0.8 * adults, fmt("%.0f of %.0f adults moved closer", closer, adults));
}

void animator(Check& check) {
  {
    anim::AnimatorConfig cfg;
    cfg.hidden = 6;
    anim::AnimatorModel model(5, 3, cfg, 31);
    Rng rng(3);
    nn::Matrix x(3, 8), y(3, 204);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
    auto grad = model.zero_gradient();
    model.loss_and_gradient(x, y, grad);
    const auto params = model.parameter_blocks();
    const auto grads = anim::AnimatorModel::gradient_blocks(grad);
    const double h = 1e-6;
    double worst = 0;
    for (std::size_t b = 0; b < params.size(); ++b)
      for (Eigen::Index i = 0; i < params[b]->size(); ++i) {
        double& p = params[b]->data()[i];
        const double keep = p;
        p = keep + h;
        const double up = model.loss(x, y);
        p = keep - h;
        const double dn = model.loss(x, y);
        p = keep;
        const double num = (up - dn) / (2 * h), an = grads[b]->data()[i];
        worst = std::max(worst, std::abs(an - num) / std::max(1e-7, std::abs(an) + std::abs(num)));
      }
    check(worst <= 1e-4, fmt("gradient relative error %.2e", worst));
  }

  const auto corpus = anim::make_toy_animator_corpus(20, 2, 5);
  const std::vector<anim::AnimatorSample> train(corpus.samples.begin(), corpus.samples.begin() + 16);
  const auto r = anim::train_animator(train, anim::AnimatorConfig{}, 8);
  const auto tmpl = anim::LandmarkTemplate::canonical();
  double worst_learned = 2, worst_proc = 2;
  for (std::size_t i = 16; i < 20; ++i) {
    const auto& clip = corpus.audio[i];
    const auto learned = r.model.animate(clip, corpus.samples[i].speaker, tmpl);
    worst_learned = std::min(worst_learned, quality::lip_sync_score(learned, clip, anim::kDefaultFps));
    const auto proc = anim::procedural_articulate(clip, tmpl);
    worst_proc = std::min(worst_proc, quality::lip_sync_score(proc, clip, anim::kDefaultFps));
  }
  check(worst_learned >= 0.8, fmt("held-out learned r min %.3f", worst_learned));
  check(worst_proc >= 0.99, fmt("procedural r min %.4f", worst_proc));
}

void renderer(Check& check) {
  const auto face = render::generate_test_face({}, 4);
  const auto mesh = render::triangulate(face);
  check(render::max_channel_diff(render::warp_frame(face, mesh, face.landmarks).image, face.image) == 0,
        "identity warp differs");

  render::Landmarks2D moved = face.landmarks;
  moved.col(0).array() += 5.0;
  const auto src = render::grayscale(face.image), dst = render::grayscale(render::warp_frame(face, mesh, moved).image);
  const int x0 = static_cast<int>(face.landmarks.col(0).minCoeff()) + 12;
  const int x1 = static_cast<int>(face.landmarks.col(0).maxCoeff()) - 12;
  const int y0 = static_cast<int>(face.landmarks.col(1).minCoeff()) + 12;
  const int y1 = static_cast<int>(face.landmarks.col(1).maxCoeff()) - 12;
  int best = 0;
  double bv = -2;
  for (int dx = -10; dx <= 10; ++dx) {
    std::vector<double> u, v;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        u.push_back(src[static_cast<std::size_t>(y * 256 + x)]);
        v.push_back(dst[static_cast<std::size_t>(y * 256 + x + dx)]);
      }
    const double c = oracle::pearson(u, v);
    if (c > bv) bv = c, best = dx;
  }
  check(std::abs(best - 5) <= 1, fmt("translation recovered at %.0f px", best));

  const auto audio = oracle::sine(200, 2.0);
  const std::vector<render::Landmarks2D> still(anim::frame_count(audio.size(), 16000, 25), face.landmarks);
  const auto clip = render::render_clip(face, still, 25, audio);
  int differing = 0;
  for (const auto& fr : clip.frames) differing += render::max_channel_diff(fr, face.image) != 0;
  check(differing == 0, fmt("%.0f of %.0f still frames differ from the seed", differing, clip.frames.size()));
}

void end_to_end(Check& check) {
  oracle::TempDir dir;
  auto j = pipeline::default_manifest_json();
  std::map<std::string, std::string> first;
  for (const char* run_name : {"one", "two"}) {
    j["output_dir"] = (dir / run_name).string();
    const auto m = pipeline::parse_manifest(j, dir.path());
    const auto r = pipeline::run(m);
    check(r.results.size() == 20, "clip count " + std::to_string(r.results.size()));
    for (const auto& res : r.results) {
      const std::string name = res.job.subject + "/" + res.job.clip_name();
      if (res.status != pipeline::JobStatus::kPassed) {
        check(false, name + " " + pipeline::to_string(res.status) + " " + res.error);
        continue;
      }
      const auto& q = *res.quality;
      const auto value = [&](const char* metric) {
        const auto* m = q.find(metric);
        return m ? m->value : std::nan("");
      };
      const double sane = value("landmark_sanity"), id = value("identity_similarity_min"),
                   lip = value("lip_sync_r"), hist = value("histogram_nonzero_fraction");
      check(sane == 1.0, name + fmt(" landmark sanity %.3f", sane));
      check(id >= 0.8, name + fmt(" identity %.3f", id));
      check(lip >= 0.8, name + fmt(" lip sync %.3f", lip));
      check(hist > 0.9, name + fmt(" histogram nonzero %.3f", hist));
      for (const char* file : {"audio.wav", "landmarks.csv"}) {
        const auto bytes = oracle::slurp(res.dir / file);
        const std::string key = name + "/" + file;
        if (std::string(run_name) == "one") first[key] = bytes;
        else check(first.count(key) && first[key] == bytes, key + " differs between runs");
      }
    }
    if (std::string(run_name) == "one") {
      const auto s = pipeline::summarize(dir / run_name);
      std::printf("      identity min %.3f..%.3f  lip sync r %.3f..%.3f\n", s.identity.min, s.identity.max,
                  s.lip_sync.min, s.lip_sync.max);
    }
  }
}

void mos(Check& check) {
  std::vector<quality::MosResponse> rs;
  const std::array<int, 3> counts{5, 4, 5};
  for (int p = 0; p < 6; ++p) {
    quality::MosResponse r;
    r.timestamp = "2026-01-01T00:00:00Z";
    r.participant = "p" + std::to_string(p);
    r.clips = {"clip"};
    for (int q = 0; q < 3; ++q) r.agree[static_cast<std::size_t>(q)] = p < counts[static_cast<std::size_t>(q)];
    rs.push_back(r);
  }
  const auto s = quality::aggregate_mos(rs);
  const std::array<double, 3> want{5.0 / 6, 4.0 / 6, 5.0 / 6};
  for (std::size_t q = 0; q < 3; ++q)
    check(std::abs(s.ratios[q] - want[q]) <= 1e-3, fmt("question %.0f ratio %.4f", q + 1, s.ratios[q]));
  check(std::abs(s.overall - 14.0 / 18) <= 1e-3, fmt("overall %.4f", s.overall));
  const auto text = quality::format_mos(s);
  check(text.find("75.0%") != std::string::npos, "report lacks the published 75.0% line");
  check(text.find("77.8%") != std::string::npos, "report lacks the computed 77.8%");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Check&)>>> criteria{
      {"audio format: 16 kHz PCM16 mono, 32000 B/s, 3.5 s = 56000 samples", audio_format},
      {"pitch law: 220 Hz +12 st -> 440 Hz, 300 Hz +6 st -> 424.3 Hz (+-2 Hz)", pitch_law},
      {"stretch law: x1.5 and BPF [(0,1),(2,2)] give 3.0 s +-1 hop, peak +-2 Hz", stretch_law},
      {"GE2E: orthogonal 2x2 and identical batches within 1e-6", ge2e},
      {"speaker encoder: final < 20% of initial loss, held-out margin >= 0.3", encoder_training},
      {"childify moves >= 80% of adults toward the child centroid", childify_direction},
      {"animator: gradient check <= 1e-4, held-out r >= 0.8, procedural r >= 0.99", animator},
      {"renderer: identity exact, 5 px translation, still clip equals seed", renderer},
      {"end to end: default manifest, 20 clips pass, reproducible audio and landmarks", end_to_end},
      {"MOS arithmetic: (5,4,5)/6 -> 0.833 0.667 0.833, overall 0.778, 75% line", mos},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(check);
    } catch (const std::exception& e) {
      check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = check.failures.empty();
    failed += !ok;
    std::printf("[%s] %2zu %s (%.1f s)\n", ok ? "PASS" : "FAIL", i + 1, criteria[i].first, secs);
    for (const auto& f : check.failures) std::printf("       %s\n", f.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
