#pragma once

// Operator commands. Each takes a validated RunConfig and writes its
// artifacts under the configured output directory (or an explicit one).
//
// train     -> config.ini, stageN.ckpt, model.ckpt, train_log.csv, metrics.json
// generate  -> trial_NNN.jsonl (+ .emails.jsonl and .mbox), manifest.json
// evaluate  -> report.json, report.csv, qq.svg, hour_of_day.svg, day_of_week.svg
// serve     -> live email lines on a sink; resume file on shutdown

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmn/checkpoint.hpp"
#include "dmn/config.hpp"
#include "dmn/corpus.hpp"
#include "dmn/evaluation.hpp"
#include "dmn/fixtures.hpp"
#include "dmn/realtime.hpp"
#include "dmn/sampling.hpp"
#include "dmn/text_provider.hpp"
#include "dmn/thread_engine.hpp"
#include "dmn/training.hpp"

#ifndef DMN_DEFAULT_RESOURCE_DIR
#define DMN_DEFAULT_RESOURCE_DIR "resources"
#endif

namespace dmn {

namespace fs = std::filesystem;

inline std::string resource_dir(const RunConfig& cfg) {
  if (!cfg.threads.resources.empty()) return cfg.threads.resources;
  if (const char* env = std::getenv("DMN_RESOURCES"); env && *env) return env;
  return DMN_DEFAULT_RESOURCE_DIR;
}

namespace detail {

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

/// Write to a sibling temp file, then rename over the target.
inline void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_file(tmp, text);
  fs::rename(tmp, path);
}

inline std::string trial_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trial_%03zu", i);
  return buf;
}

// Seed streams derived from the run seed: sampler of trial i, and its thread engine.
inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t i) { return Rng::split(seed, i).bits(); }
inline std::uint64_t engine_seed(std::uint64_t trial) { return Rng::split(trial, 1).bits(); }

}  // namespace detail

/// Checkpoint checked against the run's model settings and dataset vocabulary.
inline ModelBundle load_model(const RunConfig& cfg, const Dataset& ds, const std::string& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("checkpoint not found: " + path);
  ModelBundle b = load_checkpoint(path);
  const ModelConfig& m = b.net.config();
  if (m.K != cfg.model.K || m.d_embed != cfg.model.d_embed || m.d_hidden != cfg.model.d_hidden ||
      m.recipient_mode != cfg.model.recipient_mode)
    throw ConfigError("checkpoint " + path + " was trained with different [model] settings");
  const std::string want = vocab_hash(ds.nodes, ds.sets);
  if (b.vocab_hash() != want)
    throw ConfigError("checkpoint " + path + " vocabulary hash " + b.vocab_hash() + " does not match dataset (" +
                      want + ")");
  return b;
}

inline std::string default_checkpoint(const RunConfig& cfg) { return (fs::path(cfg.output) / "model.ckpt").string(); }

/// Text generation pieces shared by the email-producing commands.
struct TextKit {
  std::vector<CorpusEmail> corpus;
  std::vector<SenderProfile> profiles;
  CannedText canned;
  std::unique_ptr<TextProvider> provider;
};

inline TextKit make_textkit(const RunConfig& cfg, const NodeVocabulary& nodes) {
  if (cfg.dataset.corpus.empty()) throw ConfigError("email generation needs a dataset 'corpus' file");
  TextKit k;
  k.corpus = read_corpus(cfg.dataset.corpus);
  if (k.corpus.empty()) throw DataError("email corpus " + cfg.dataset.corpus + " is empty");
  k.profiles = build_profiles(nodes, k.corpus, cfg.threads.keywords, cfg.threads.keyword_mode);
  k.canned = CannedText::load(resource_dir(cfg));
  if (cfg.provider.kind == ProviderKind::Remote)
    k.provider = std::make_unique<RemoteProvider>(
        cfg.provider.endpoint, std::chrono::milliseconds(static_cast<long>(cfg.provider.timeout_s * 1000.0)));
  else
    k.provider = std::make_unique<BuiltinProvider>(k.corpus);
  k.provider->health_check();
  return k;
}

inline ThreadEngine make_engine(const RunConfig& cfg, const ModelBundle& b, TextKit& kit, std::uint64_t seed) {
  return ThreadEngine(b.nodes, kit.profiles, kit.canned, *kit.provider, cfg.threads.engine, seed);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainSummary {
  std::string checkpoint;
  ValidationMetrics dev, test;
  std::size_t records = 0;
  double seconds = 0.0;
};

inline nlohmann::json dataset_summary(const Dataset& ds) {
  return {{"events", ds.filtered.size()},
          {"participants", ds.nodes.size()},
          {"recipient_sets", ds.sets.size()},
          {"duplicates_dropped", ds.duplicates_dropped},
          {"self_sends_dropped", ds.self_sends_dropped},
          {"low_activity_windows_dropped", ds.low_activity_windows_dropped},
          {"sequences", {{"train", ds.splits.train.size()}, {"dev", ds.splits.dev.size()}, {"test", ds.splits.test.size()}}},
          {"split_events",
           {{"train", ds.event_count(ds.splits.train)},
            {"dev", ds.event_count(ds.splits.dev)},
            {"test", ds.event_count(ds.splits.test)}}}};
}

inline TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out(cfg.output);
  fs::create_directories(out);
  {
    std::ostringstream c;
    write_effective_config(c, cfg);
    detail::write_file(out / "config.ini", c.str());
  }
  const Dataset ds = load_dataset(cfg.dataset);
  log << "dataset: " << ds.filtered.size() << " events, " << ds.nodes.size() << " participants, " << ds.sets.size()
      << " recipient sets; sequences " << ds.splits.train.size() << "/" << ds.splits.dev.size() << "/"
      << ds.splits.test.size() << "\n";
  ModelBundle b = make_bundle(ds, cfg.model, cfg.seed);
  const TrainLog tl = staged_train(
      b.net, ds.splits, ds.norm, cfg.train,
      [&](int stage, const LogNormMixNet&) {
        const auto path = out / ("stage" + std::to_string(stage) + ".ckpt");
        save_checkpoint(b, path.string());
        log << "stage " << stage << " best weights saved to " << path.string() << "\n";
      },
      [&](const EpochRecord& r) {
        log << "stage " << r.stage << " epoch " << r.epoch << " criterion " << r.criterion << "\n";
      });
  TrainSummary s;
  s.checkpoint = (out / "model.ckpt").string();
  save_checkpoint(b, s.checkpoint);
  {
    std::ostringstream csv;
    tl.write_csv(csv);
    detail::write_file(out / "train_log.csv", csv.str());
  }
  s.dev = evaluate_validation(b.net, ds.splits.dev, ds.norm, cfg.train.point);
  if (!ds.splits.test.empty()) s.test = evaluate_validation(b.net, ds.splits.test, ds.norm, cfg.train.point);
  s.records = tl.records.size();
  const nlohmann::json metrics{{"dataset", dataset_summary(ds)},
                               {"recipient_mode", std::string(recipient_mode_name(cfg.model.recipient_mode))},
                               {"vocab_hash", b.vocab_hash()},
                               {"dev", to_json(s.dev)},
                               {"test", to_json(s.test)}};
  detail::write_file(out / "metrics.json", metrics.dump(2) + "\n");
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log << "dev: rmse " << s.dev.rmse_h << " h, recipient top-1 " << s.dev.recipient_top1 << "; wrote " << s.checkpoint
      << "\n";
  return s;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::optional<std::size_t> trials;
  std::optional<std::size_t> events;
  std::optional<std::int64_t> end_time;  // alternative horizon
  std::optional<bool> emails;
  bool realtime = false;
  std::optional<double> time_scale;
  std::string checkpoint;  // default <output>/model.ckpt
  std::string out_dir;     // default <output>/generated
};

struct GenerateSummary {
  std::vector<std::string> files;
  std::size_t events = 0;
  LatenessStats lateness;
};

inline GenConfig gen_config(const RunConfig& cfg, const GenerateOptions& o) {
  GenConfig g;
  g.seed = cfg.seed;
  g.start_time = cfg.generate.start_time;
  if (o.end_time) g.end_time = *o.end_time;
  else g.max_events = o.events.value_or(cfg.generate.events);
  g.time_scale = o.time_scale.value_or(cfg.generate.time_scale);
  g.mode = o.realtime ? GenMode::Realtime : GenMode::Batch;
  g.validate();
  return g;
}

inline GenerateSummary cmd_generate(const RunConfig& cfg, const GenerateOptions& o, std::ostream& log,
                                    std::ostream& live, const std::atomic<bool>& stop) {
  const Dataset ds = load_dataset(cfg.dataset);
  const ModelBundle b = load_model(cfg, ds, o.checkpoint.empty() ? default_checkpoint(cfg) : o.checkpoint);
  const GenConfig g = gen_config(cfg, o);
  const bool emails = o.emails.value_or(cfg.generate.emails);
  std::optional<TextKit> kit;
  if (emails) kit.emplace(make_textkit(cfg, b.nodes));
  GenerateSummary s;

  if (o.realtime) {
    const std::uint64_t seed = detail::trial_seed(g.seed, 0);
    StreamSampler sampler(b, seed, g.start_time);
    std::optional<ThreadEngine> engine;
    if (kit) engine.emplace(make_engine(cfg, b, *kit, detail::engine_seed(seed)));
    std::size_t produced = 0;
    s.lateness = run_paced<std::string>(
        [&]() -> std::optional<Timed<std::string>> {
          if (g.max_events && produced >= *g.max_events) return std::nullopt;
          SampledEvent ev = sampler.next();
          if (g.end_time && ev.timestamp >= *g.end_time) return std::nullopt;
          ++produced;
          const double t = ev.time;
          if (engine) return Timed<std::string>{t, email_json(b.nodes, engine->process(ev)).dump()};
          return Timed<std::string>{t, event_json(b, ev).dump()};
        },
        [&](std::string& line) {
          live << line << '\n' << std::flush;
          ++s.events;
        },
        static_cast<double>(g.start_time), g.time_scale, stop);
    log << "realtime: emitted " << s.events << " events, lateness mean " << s.lateness.mean_ms() << " ms, max "
        << s.lateness.max_ms << " ms\n";
    return s;
  }

  const fs::path dir = o.out_dir.empty() ? fs::path(cfg.output) / "generated" : fs::path(o.out_dir);
  fs::create_directories(dir);
  const std::size_t trials = o.trials.value_or(cfg.generate.trials);
  if (trials < 1) throw ConfigError("--trials must be >= 1");
  const auto results = generate_trials(b, g, trials, cfg.generate.threads);
  nlohmann::json manifest{{"vocab_hash", b.vocab_hash()},
                          {"seed", g.seed},
                          {"start_time", g.start_time},
                          {"recipient_mode", std::string(recipient_mode_name(b.net.config().recipient_mode))},
                          {"trials", nlohmann::json::array()}};
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const std::string name = detail::trial_name(i);
    std::ostringstream events;
    write_events_jsonl(events, b, r.events);
    detail::write_file(dir / (name + ".jsonl"), events.str());
    s.files.push_back((dir / (name + ".jsonl")).string());
    s.events += r.events.size();
    nlohmann::json entry{{"file", name + ".jsonl"},
                         {"seed", detail::trial_seed(g.seed, i)},
                         {"events", r.events.size()},
                         {"forced_fallbacks", r.forced_fallbacks},
                         {"out_of_vocab_sets", r.out_of_vocab}};
    if (kit) {
      ThreadEngine engine = make_engine(cfg, b, *kit, detail::engine_seed(detail::trial_seed(g.seed, i)));
      std::ostringstream jl, mbox;
      for (const auto& ev : r.events) {
        const GeneratedEmail e = engine.process(ev);
        jl << email_json(b.nodes, e).dump() << '\n';
        write_mbox_entry(mbox, b.nodes, e);
      }
      detail::write_file(dir / (name + ".emails.jsonl"), jl.str());
      detail::write_file(dir / (name + ".mbox"), mbox.str());
      entry["emails"] = name + ".emails.jsonl";
      entry["mbox"] = name + ".mbox";
    }
    manifest["trials"].push_back(std::move(entry));
  }
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  log << "generated " << trials << " trial(s), " << s.events << " events in " << dir.string() << "\n";
  return s;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string generated;           // directory of trial streams
  std::string reference = "all";  // all | train | dev | test | path to an event log
  std::string checkpoint;
  std::string out_dir;  // default <output>/eval
  std::string model_name;
  bool figures = true;
};

/// Stream files of a generation directory, sorted by name.
inline std::vector<fs::path> stream_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("generated directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (e.is_regular_file() && n.ends_with(".jsonl") && !n.ends_with(".emails.jsonl")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Raw log events mapped through a model's vocabularies; inter-arrival
/// times are consecutive gaps over the whole log.
inline StreamView view_of(const std::vector<RawEvent>& raw, const ModelBundle& b) {
  StreamView v;
  v.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    const auto sender = b.nodes.find(r.sender);
    if (!sender) throw DataError("vocabulary mismatch: unknown sender '" + r.sender + "'");
    for (const auto& l : r.recipients)
      if (!b.nodes.find(l)) throw DataError("vocabulary mismatch: unknown recipient '" + l + "'");
    if (i > 0) v.taus.push_back(std::max(static_cast<double>(r.timestamp - raw[i - 1].timestamp) / 3600.0, kMinTauHours));
    v.timestamps.push_back(r.timestamp);
    v.senders.push_back(*sender);
    v.sets.push_back(b.sets.find(r.recipients).value_or(kNoSet));
    v.sizes.push_back(r.recipients.size());
  }
  return v;
}

inline StreamView reference_view(const std::string& which, const Dataset& ds, const ModelBundle& b) {
  if (which == "train") return view_of(ds.splits.train, b);
  if (which == "dev") return view_of(ds.splits.dev, b);
  if (which == "test") return view_of(ds.splits.test, b);
  if (which == "all") {
    std::vector<Sequence> all = ds.splits.train;
    all.insert(all.end(), ds.splits.dev.begin(), ds.splits.dev.end());
    all.insert(all.end(), ds.splits.test.begin(), ds.splits.test.end());
    return view_of(all, b);
  }
  if (!fs::is_regular_file(which)) throw ConfigError("reference not found: " + which);
  const LogFormat f = which.ends_with(".jsonl") ? LogFormat::Jsonl : LogFormat::Csv;
  return view_of(parse_event_log(which, f).events, b);
}

inline std::vector<GeneratedEmail> read_emails_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<GeneratedEmail> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GeneratedEmail e;
      e.email_id = j.at("email_id").get<std::int64_t>();
      e.thread_id = j.at("thread_id").get<std::int64_t>();
      e.subject = j.at("subject").get<std::string>();
      e.body = j.at("body").get<std::string>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(path.string() + ": " + ex.what());
    }
  }
  return out;
}

inline EvalReport cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& o, std::ostream& log) {
  const Dataset ds = load_dataset(cfg.dataset);
  const ModelBundle b = load_model(cfg, ds, o.checkpoint.empty() ? default_checkpoint(cfg) : o.checkpoint);
  const fs::path gen_dir = o.generated.empty() ? fs::path(cfg.output) / "generated" : fs::path(o.generated);
  const auto files = stream_files(gen_dir);
  if (files.empty()) throw DataError("no generated streams in " + gen_dir.string());

  std::vector<StreamView> views;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      views.push_back(view_of(read_stream_jsonl(in, b)));
    } catch (const DataError& e) {
      throw DataError(f.string() + ": " + e.what());
    }
  }
  const StreamView ref = reference_view(o.reference, ds, b);
  EvalReport r = evaluate_streams(views, ref, b.tz_offset_minutes, b.nodes.size(), b.sets.size(), cfg.generate.threads);
  r.model = o.model_name.empty() ? fs::path(cfg.output).filename().string() : o.model_name;
  r.recipient_mode = std::string(recipient_mode_name(b.net.config().recipient_mode));
  if (!ds.splits.test.empty()) r.prediction = evaluate_validation(b.net, ds.splits.test, b.norm, cfg.train.point);

  std::vector<std::vector<std::string>> threads;
  for (const auto& f : files) {
    const fs::path ej = f.parent_path() / (f.stem().string() + ".emails.jsonl");
    if (fs::is_regular_file(ej))
      for (auto& t : thread_texts(read_emails_jsonl(ej))) threads.push_back(std::move(t));
  }
  if (!threads.empty()) r.coherence = coherence_report(threads);

  std::vector<double> pooled;
  for (const auto& v : views) pooled.insert(pooled.end(), v.taus.begin(), v.taus.end());
  if (!pooled.empty() && !ref.taus.empty()) {
    const auto a = capped(pooled), c = capped(ref.taus);
    r.qq = qq_points(std::vector<double>(a.begin(), a.end()), std::vector<double>(c.begin(), c.end()), 99);
  }

  const fs::path out = o.out_dir.empty() ? fs::path(cfg.output) / "eval" : fs::path(o.out_dir);
  fs::create_directories(out);
  detail::write_file(out / "report.json", to_json(r).dump(2) + "\n");
  std::ostringstream csv;
  write_report_csv(csv, {r});
  detail::write_file(out / "report.csv", csv.str());
  if (o.figures) {
    std::vector<std::int64_t> ts;
    for (const auto& v : views) ts.insert(ts.end(), v.timestamps.begin(), v.timestamps.end());
    if (!r.qq.empty()) detail::write_file(out / "qq.svg", svg_qq(r.qq));
    detail::write_file(out / "hour_of_day.svg",
                       svg_histograms(hour_histogram(ts, b.tz_offset_minutes),
                                      hour_histogram(ref.timestamps, b.tz_offset_minutes), "Hour of day"));
    detail::write_file(out / "day_of_week.svg",
                       svg_histograms(weekday_histogram(ts, b.tz_offset_minutes),
                                      weekday_histogram(ref.timestamps, b.tz_offset_minutes), "Day of week"));
  }
  log << "evaluated " << views.size() << " stream(s) against '" << o.reference << "'; report in " << out.string()
      << "\n";
  return r;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

inline constexpr int kResumeVersion = 1;

struct ServeOptions {
  std::string checkpoint;
  std::string resume;  // default <output>/serve.resume.json
  bool fresh = false;  // ignore an existing resume file
  std::optional<double> time_scale;
  std::optional<std::size_t> max_events;
};

struct ServeSummary {
  std::size_t emitted = 0;
  std::int64_t next_email_id = 0;
  bool resumed = false;
  std::string resume_file;
  LatenessStats lateness;
  std::size_t rss_start = 0, rss_end = 0;
};

/// Emits generated emails as JSON lines until stop is raised or max_events
/// are out, then writes the resume file. An email generated but not yet due
/// at shutdown is stored in the resume file and released first on restart.
inline ServeSummary cmd_serve(const RunConfig& cfg, const ServeOptions& o, LineSink& sink,
                              const std::atomic<bool>& stop, std::ostream& log) {
  const Dataset ds = load_dataset(cfg.dataset);
  const ModelBundle b = load_model(cfg, ds, o.checkpoint.empty() ? default_checkpoint(cfg) : o.checkpoint);
  TextKit kit = make_textkit(cfg, b.nodes);
  const double scale = o.time_scale.value_or(cfg.generate.time_scale);
  if (!(scale > 0.0)) throw ConfigError("time_scale must be > 0");

  const std::uint64_t seed = detail::trial_seed(cfg.seed, 0);
  StreamSampler sampler(b, seed, cfg.generate.start_time);
  ThreadEngine engine = make_engine(cfg, b, kit, detail::engine_seed(seed));
  std::optional<Timed<std::string>> pending;

  ServeSummary s;
  s.resume_file = o.resume.empty() ? (fs::path(cfg.output) / "serve.resume.json").string() : o.resume;
  if (!o.fresh && fs::is_regular_file(s.resume_file)) {
    std::ifstream in(s.resume_file);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      if (j.at("format") != "dmn-resume" || j.at("version") != kResumeVersion)
        throw DataError("unsupported resume file format");
      if (j.at("vocab_hash").get<std::string>() != b.vocab_hash())
        throw DataError("resume file was written for a different model vocabulary");
      sampler.restore(SamplerState::from_json(j.at("sampler")));
      engine.restore(j.at("engine"));
      if (!j.at("pending").is_null())
        pending = Timed<std::string>{j["pending"].at("time").get<double>(), j["pending"].at("line").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
      throw DataError("resume file " + s.resume_file + ": " + e.what());
    }
    s.resumed = true;
    log << "resuming from " << s.resume_file << " at email_id " << engine.next_email_id() << "\n";
  }

  s.rss_start = resident_bytes();
  const double origin = pending ? pending->sim_time : sampler.time();
  std::optional<Timed<std::string>> last;
  std::size_t produced = 0;
  s.lateness = run_paced<std::string>(
      [&]() -> std::optional<Timed<std::string>> {
        if (o.max_events && produced >= *o.max_events) return std::nullopt;
        ++produced;
        if (pending) {
          last = std::exchange(pending, std::nullopt);
        } else {
          const SampledEvent ev = sampler.next();
          last = Timed<std::string>{ev.time, email_json(b.nodes, engine.process(ev)).dump()};
        }
        return last;
      },
      [&](std::string& line) {
        sink.write(line);
        ++s.emitted;
      },
      origin, scale, stop);
  s.rss_end = resident_bytes();
  if (produced > s.emitted && last) pending = last;

  nlohmann::json state{{"format", "dmn-resume"},
                       {"version", kResumeVersion},
                       {"vocab_hash", b.vocab_hash()},
                       {"sampler", sampler.snapshot().to_json()},
                       {"engine", engine.to_json()},
                       {"pending", pending ? nlohmann::json{{"time", pending->sim_time}, {"line", pending->item}}
                                           : nlohmann::json(nullptr)}};
  fs::create_directories(fs::path(s.resume_file).parent_path().empty() ? fs::path(".")
                                                                       : fs::path(s.resume_file).parent_path());
  detail::write_file_atomic(s.resume_file, state.dump() + "\n");
  s.next_email_id = engine.next_email_id();
  log << "serve: emitted " << s.emitted << " emails, lateness max " << s.lateness.max_ms << " ms; resume state in "
      << s.resume_file << "\n";
  return s;
}

// ---------------------------------------------------------------------------
// fixture
// ---------------------------------------------------------------------------

struct FixtureOptions {
  std::string out_dir;
  int weeks = 20;
  std::uint64_t seed = 7;
  bool predictable_recipients = false;
};

/// Writes the E Corp event log, email corpus, a dataset file and run files
/// for the multiclass and per-node binary recipient heads.
inline std::vector<std::string> cmd_fixture(const FixtureOptions& o) {
  if (o.weeks < 1) throw ConfigError("--weeks must be >= 1");
  const fs::path dir(o.out_dir);
  fs::create_directories(dir / "data");
  const auto fx = fixtures::ecorp_fixture(
      {.seed = o.seed, .weeks = o.weeks, .predictable_recipients = o.predictable_recipients});
  std::ostringstream log, corpus;
  write_event_log(log, fx.events, LogFormat::Csv);
  write_corpus(corpus, fx.corpus);
  detail::write_file(dir / "data" / "ecorp.csv", log.str());
  detail::write_file(dir / "data" / "ecorp_corpus.jsonl", corpus.str());
  detail::write_file(dir / "ecorp.dataset",
                     "# E Corp synthetic company\n"
                     "path = data/ecorp.csv\n"
                     "format = csv\n"
                     "corpus = data/ecorp_corpus.jsonl\n"
                     "tz_offset_minutes = 0\n"
                     "min_count = 1\n"
                     "seq_len_days = 7\n"
                     "split_seed = 0\n"
                     "split_mode = random\n");
  auto run_file = [&](const std::string& mode, const std::string& out) {
    return "[run]\ndataset = ecorp.dataset\noutput = ../runs/" + out +
           "\nseed = 1\n\n"
           "[model]\nK = 4\nd_embed = 8\nd_hidden = 16\nrecipient_mode = " +
           mode +
           "\n\n"
           "[train]\nlr = 0.01\nbatch = 4\nmax_epochs = 200\npatience = 5\nmin_improvement = 0.001\n\n"
           "[generate]\nstart = 2023-06-05T00:00:00Z\nevents = 1000\ntrials = 100\ntime_scale = 3600\n\n"
           "[provider]\nkind = builtin\n";
  };
  detail::write_file(dir / "ecorp.ini", run_file("multiclass", "ecorp"));
  detail::write_file(dir / "ecorp_bc.ini", run_file("binary", "ecorp_bc"));
  return {(dir / "data" / "ecorp.csv").string(), (dir / "data" / "ecorp_corpus.jsonl").string(),
          (dir / "ecorp.dataset").string(), (dir / "ecorp.ini").string(), (dir / "ecorp_bc.ini").string()};
}

}  // namespace dmn
