// forge: command-line entry point for the generation pipeline and its parts.
//
// Exit codes: 0 success (all clips pass), 1 a job or quality check failed,
// 2 invalid input.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forge/anim.hpp"
#include "forge/audio.hpp"
#include "forge/pipeline.hpp"
#include "forge/quality.hpp"
#include "forge/speaker.hpp"
#include "forge/tts.hpp"
#include "forge/voice.hpp"

namespace fs = std::filesystem;
using namespace forge;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitInvalid = 2;

tts::VoiceProfile profile_arg(const std::string& spec, std::uint64_t seed) {
  if (spec == "child") return tts::child_profile(seed);
  if (spec == "adult") return tts::adult_profile(seed);
  return tts::read_profile(spec);
}

std::vector<fs::path> wav_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// <dir>/<speaker>/*.wav; speakers whose name starts with "child" are children.
speaker::ToyCorpus corpus_from_dir(const fs::path& dir) {
  speaker::ToyCorpus corpus;
  std::vector<fs::path> speakers;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) speakers.push_back(e.path());
  std::sort(speakers.begin(), speakers.end());
  std::size_t per = SIZE_MAX;
  for (const auto& s : speakers) {
    speaker::ToySpeaker sp;
    sp.profile.name = s.filename().string();
    sp.child = sp.profile.name.rfind("child", 0) == 0;
    for (const auto& w : wav_files(s)) {
      sp.utterances.push_back(audio::read_wav(w));
      sp.texts.push_back(w.filename().string());
    }
    per = std::min(per, sp.utterances.size());
    corpus.speakers.push_back(std::move(sp));
  }
  for (auto& sp : corpus.speakers) {
    sp.utterances.resize(per);
    sp.texts.resize(per);
  }
  return corpus;
}

void print_report(const quality::QualityReport& r) {
  for (const auto& m : r.metrics) {
    if (m.threshold)
      std::printf("%-28s %10.4f  >= %-7.3f %s\n", m.name.c_str(), m.value, *m.threshold, m.pass ? "pass" : "FAIL");
    else
      std::printf("%-28s %10.4f\n", m.name.c_str(), m.value);
  }
  for (const auto& e : r.errors) std::printf("error: %s\n", e.c_str());
  if (!r.flagged_frames.empty()) {
    std::printf("flagged frames:");
    for (auto f : r.flagged_frames) std::printf(" %zu", f);
    std::printf("\n");
  }
  std::printf("overall: %s\n", r.pass() ? "pass" : "FAIL");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: synthetic talking-face dataset generator"};
  app.require_subcommand(1);
  int code = 0;

  // gen
  auto* gen = app.add_subcommand("gen", "Run a generation manifest");
  std::string manifest_path, output_override;
  int workers = 0;
  bool quiet = false;
  gen->add_option("-m,--manifest", manifest_path, "Manifest JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--workers", workers, "Concurrent jobs (default: manifest value)")->check(CLI::Range(1, 256));
  gen->add_option("-o,--output", output_override, "Output root (overrides the manifest)");
  gen->add_flag("-q,--quiet", quiet, "Only print the final summary");
  gen->callback([&] {
    auto m = pipeline::validate_manifest(manifest_path);
    if (!output_override.empty()) m.output_dir = output_override;
    pipeline::RunOptions opts;
    opts.workers = workers;
    const std::size_t total = m.subjects.size() * m.sentences.size();
    std::size_t done = 0;
    opts.on_done = [&](const pipeline::JobResult& r) {
      ++done;
      if (quiet) return;
      std::printf("[%zu/%zu] %s/%s %s (%.1fs)%s%s\n", done, total, r.job.subject.c_str(), r.job.clip_name().c_str(),
                  pipeline::to_string(r.status), r.seconds, r.error.empty() ? "" : ": ", r.error.c_str());
      std::fflush(stdout);
    };
    const auto s = pipeline::run(m, opts);
    std::printf("%zu jobs: %zu passed, %zu quality failures, %zu errors (%.1fs) -> %s\n", s.results.size(),
                s.count(pipeline::JobStatus::kPassed), s.count(pipeline::JobStatus::kQualityFailed),
                s.count(pipeline::JobStatus::kFailed), s.seconds, m.output_dir.string().c_str());
    code = s.exit_code();
  });

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "Validate a manifest and print its job plan");
  std::string plan_manifest;
  bool plan_echo = false;
  plan_cmd->add_option("-m,--manifest", plan_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  plan_cmd->add_flag("--echo", plan_echo, "Print the manifest with defaults filled in");
  plan_cmd->callback([&] {
    const auto m = pipeline::validate_manifest(plan_manifest);
    if (plan_echo) std::printf("%s\n", m.echo().dump(2).c_str());
    for (const auto& j : pipeline::plan(m))
      std::printf("%s/%s seed=%llu\n", j.subject.c_str(), j.clip_name().c_str(), static_cast<unsigned long long>(j.seed));
  });

  // init
  auto* init = app.add_subcommand("init", "Write the default 20-subject manifest");
  std::string init_out = "manifest.json";
  init->add_option("output", init_out, "Destination file");
  init->callback([&] {
    std::ofstream out(init_out);
    if (!out) throw IoError("cannot write " + init_out);
    out << pipeline::default_manifest_json().dump(2) << "\n";
  });

  // tts
  auto* tts_cmd = app.add_subcommand("tts", "Synthesize text with the formant synthesizer");
  std::string tts_text, tts_out, tts_profile = "adult";
  std::uint64_t tts_seed = 0;
  int tts_rate = audio::kDefaultSampleRate;
  tts_cmd->add_option("text", tts_text, "Text to speak")->required();
  tts_cmd->add_option("output", tts_out, "Output WAV")->required();
  tts_cmd->add_option("--profile", tts_profile, "child, adult or a profile file");
  tts_cmd->add_option("--seed", tts_seed, "Synthesis and profile seed");
  tts_cmd->add_option("--rate", tts_rate, "Sample rate")->check(CLI::Range(8000, 192000));
  tts_cmd->callback([&] {
    const auto clip = tts::synthesize(tts_text, profile_arg(tts_profile, tts_seed), tts_rate, tts_seed);
    audio::write_wav(clip, tts_out);
    std::printf("%s: %zu samples, %.3f s\n", tts_out.c_str(), clip.size(), clip.duration_seconds());
  });

  // childify
  auto* child = app.add_subcommand("childify", "Raise pitch and slow the speaking rate");
  std::string ch_in, ch_out, ch_pitch_bpf, ch_rate_bpf;
  voice::ChildifyParams ch_params;
  child->add_option("input", ch_in, "Input WAV")->required()->check(CLI::ExistingFile);
  child->add_option("output", ch_out, "Output WAV")->required();
  child->add_option("--semitones", ch_params.pitch_up_semitones, "Pitch shift");
  child->add_option("--rate", ch_params.rate_factor, "Speaking-rate factor in (0, 1]");
  child->add_option("--pitch-bpf", ch_pitch_bpf, "Pitch curve file (time ratio)")->check(CLI::ExistingFile);
  child->add_option("--rate-bpf", ch_rate_bpf, "Rate curve file (time factor)")->check(CLI::ExistingFile);
  child->callback([&] {
    if (!ch_pitch_bpf.empty()) ch_params.pitch_bpf = voice::read_bpf(ch_pitch_bpf);
    if (!ch_rate_bpf.empty()) ch_params.rate_bpf = voice::read_bpf(ch_rate_bpf);
    const auto in = audio::read_wav(ch_in);
    const auto out = voice::childify(in, ch_params);
    audio::write_wav(out, ch_out);
    std::printf("%s: %.3f s -> %.3f s\n", ch_out.c_str(), in.duration_seconds(), out.duration_seconds());
  });

  // plot
  auto* plot = app.add_subcommand("plot", "Decimated waveform as CSV (time_s,amplitude)");
  std::string plot_in, plot_out;
  std::size_t plot_points = 2000;
  plot->add_option("input", plot_in, "Input WAV")->required()->check(CLI::ExistingFile);
  plot->add_option("output", plot_out, "Output CSV")->required();
  plot->add_option("--points", plot_points, "Maximum points");
  plot->callback([&] { audio::write_plot(audio::plot_decimate(audio::read_wav(plot_in), plot_points), plot_out); });

  // eval
  auto* eval = app.add_subcommand("eval", "Recompute quality metrics for a clip directory");
  std::string eval_dir;
  bool eval_json = false, eval_write = false;
  eval->add_option("clip-dir", eval_dir, "Clip directory")->required()->check(CLI::ExistingDirectory);
  eval->add_flag("--json", eval_json, "Print JSON");
  eval->add_flag("--write", eval_write, "Overwrite quality.json");
  eval->callback([&] {
    const auto r = pipeline::evaluate_clip_dir(eval_dir);
    if (eval_json) std::printf("%s\n", r.to_json().dump(2).c_str());
    else print_report(r);
    if (eval_write) {
      std::ofstream out(fs::path(eval_dir) / "quality.json");
      out << r.to_json().dump(2) << "\n";
    }
    code = r.pass() ? 0 : kExitFailed;
  });

  // summarize
  auto* summ = app.add_subcommand("summarize", "Aggregate quality reports of a dataset");
  std::string summ_root;
  bool summ_json = false;
  summ->add_option("root", summ_root, "Dataset root (default: $FORGE_OUTPUT_ROOT or out)");
  summ->add_flag("--json", summ_json, "Print JSON");
  summ->callback([&] {
    const auto s = pipeline::summarize(summ_root.empty() ? pipeline::default_output_root() : fs::path(summ_root));
    if (summ_json) std::printf("%s\n", s.to_json().dump(2).c_str());
    else std::printf("%s", s.format().c_str());
    code = s.failures() == 0 && s.missing.empty() ? 0 : kExitFailed;
  });

  // mos
  auto* mos = app.add_subcommand("mos", "Opinion survey");
  mos->require_subcommand(1);
  std::string survey = "survey.csv", participant;
  std::vector<std::string> clips, answers;
  auto* mos_add = mos->add_subcommand("add", "Append one participant's answers");
  mos_add->add_option("--survey", survey, "Survey CSV");
  mos_add->add_option("--participant", participant, "Participant id")->required();
  mos_add->add_option("--clip", clips, "Clip reference (repeatable)")->allow_extra_args(false);
  mos_add->add_option("answers", answers, "Three answers: agree or disagree")->required();
  mos_add->callback([&] {
    const auto r = quality::collect_mos(survey, clips, participant, answers);
    std::printf("recorded %s at %s\n", r.participant.c_str(), r.timestamp.c_str());
  });
  auto* mos_report = mos->add_subcommand("report", "Aggregate the survey");
  bool mos_json = false;
  mos_report->add_option("--survey", survey, "Survey CSV");
  mos_report->add_flag("--json", mos_json, "Print JSON");
  mos_report->callback([&] {
    const auto s = quality::aggregate_mos(quality::read_mos(survey));
    if (mos_json) {
      nlohmann::json j{{"participants", s.participants},
                       {"agrees", s.agrees},
                       {"ratios", s.ratios},
                       {"overall", s.overall},
                       {"published_overall", quality::kPublishedPositiveRatio}};
      std::printf("%s\n", j.dump(2).c_str());
    } else {
      std::printf("%s", quality::format_mos(s).c_str());
    }
  });

  // speaker
  auto* spk = app.add_subcommand("speaker", "Speaker encoder");
  spk->require_subcommand(1);
  auto* spk_train = spk->add_subcommand("train", "Train on the toy corpus or a directory of speakers");
  std::string spk_model, spk_data;
  int spk_children = 4, spk_adults = 4, spk_utts = 10, spk_epochs = speaker::EncoderConfig{}.epochs;
  std::uint64_t spk_corpus_seed = 7, spk_seed = 11;
  spk_train->add_option("-o,--output", spk_model, "Checkpoint JSON")->required();
  spk_train->add_option("--data", spk_data, "<dir>/<speaker>/*.wav instead of the toy corpus")->check(CLI::ExistingDirectory);
  spk_train->add_option("--children", spk_children, "Toy child speakers");
  spk_train->add_option("--adults", spk_adults, "Toy adult speakers");
  spk_train->add_option("--utterances", spk_utts, "Toy utterances per speaker");
  spk_train->add_option("--corpus-seed", spk_corpus_seed, "Toy corpus seed");
  spk_train->add_option("--seed", spk_seed, "Training seed");
  spk_train->add_option("--epochs", spk_epochs, "Epochs");
  spk_train->callback([&] {
    const auto corpus = spk_data.empty()
                            ? speaker::make_toy_corpus(spk_children, spk_adults, spk_utts, spk_corpus_seed)
                            : corpus_from_dir(spk_data);
    speaker::EncoderConfig cfg;
    cfg.epochs = spk_epochs;
    const auto r = speaker::train_encoder(corpus, cfg, spk_seed);
    r.model.save(spk_model);
    std::printf("loss %.4f -> %.4f; saved %s\n", r.initial_loss, r.final_loss, spk_model.c_str());
  });
  auto* spk_embed = spk->add_subcommand("embed", "Print utterance embeddings");
  std::vector<std::string> spk_wavs;
  spk_embed->add_option("model", spk_model, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  spk_embed->add_option("wavs", spk_wavs, "WAV files")->required()->check(CLI::ExistingFile);
  spk_embed->callback([&] {
    const auto model = speaker::EncoderModel::load(spk_model);
    for (const auto& w : spk_wavs) {
      const auto e = model.embed_utterance(audio::read_wav(w));
      std::printf("%s", w.c_str());
      for (Eigen::Index i = 0; i < e.dim(); ++i) std::printf(" %.6f", e.vector()(i));
      std::printf("\n");
    }
  });
  auto* spk_rank = spk->add_subcommand("rank", "Rank adult recordings by similarity to the child centroid");
  std::vector<std::string> rank_children, rank_adults;
  spk_rank->add_option("model", spk_model, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  spk_rank->add_option("--child", rank_children, "Child WAVs")->required()->check(CLI::ExistingFile);
  spk_rank->add_option("--adult", rank_adults, "Adult WAVs")->required()->check(CLI::ExistingFile);
  spk_rank->callback([&] {
    const auto model = speaker::EncoderModel::load(spk_model);
    std::vector<speaker::SpeakerEmbedding> kids;
    for (const auto& w : rank_children) kids.push_back(model.embed_utterance(audio::read_wav(w)));
    std::map<std::string, speaker::SpeakerEmbedding> adults;
    for (const auto& w : rank_adults) adults.emplace(w, model.embed_utterance(audio::read_wav(w)));
    for (const auto& [name, sim] : speaker::rank_adults(adults, speaker::centroid(kids)))
      std::printf("%.4f %s\n", sim, name.c_str());
  });

  // animator
  auto* an = app.add_subcommand("animator", "Learned landmark animator");
  an->require_subcommand(1);
  auto* an_train = an->add_subcommand("train", "Train on the toy animator corpus");
  std::string an_out;
  int an_clips = 20, an_speakers = 2, an_epochs = anim::AnimatorConfig{}.epochs;
  std::uint64_t an_seed = 5;
  an_train->add_option("-o,--output", an_out, "Checkpoint JSON")->required();
  an_train->add_option("--clips", an_clips, "Toy clips");
  an_train->add_option("--speakers", an_speakers, "Toy speakers");
  an_train->add_option("--epochs", an_epochs, "Epochs");
  an_train->add_option("--seed", an_seed, "Corpus and training seed");
  an_train->callback([&] {
    const auto corpus = anim::make_toy_animator_corpus(an_clips, an_speakers, an_seed);
    anim::AnimatorConfig cfg;
    cfg.epochs = an_epochs;
    const auto r = anim::train_animator(corpus.samples, cfg, an_seed);
    r.model.save(an_out);
    std::printf("mse %.5f -> %.5f; saved %s\n", r.initial_mse, r.final_mse, an_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailed;
  }
  return code;
}
