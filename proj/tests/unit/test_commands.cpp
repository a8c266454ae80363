#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include "dmn/commands.hpp"

using namespace dmn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

GenerateOptions gen_to(const fs::path& dir, std::optional<std::size_t> trials = std::nullopt,
                       std::optional<std::size_t> events = std::nullopt, bool emails = false) {
  GenerateOptions o;
  o.out_dir = dir.string();
  o.trials = trials;
  o.events = events;
  o.emails = emails;
  return o;
}

ServeOptions serve_opts(const std::string& resume, bool fresh, double scale, std::optional<std::size_t> max_events) {
  ServeOptions o;
  o.resume = resume;
  o.fresh = fresh;
  o.time_scale = scale;
  o.max_events = max_events;
  return o;
}

struct CollectSink : LineSink {
  std::vector<std::string> lines;
  void write(const std::string& line) override { lines.push_back(line); }
};

class Commands : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / ("dmn_cmd_" + std::to_string(::getpid())));
    fs::remove_all(*root_);
    FixtureOptions fo;
    fo.out_dir = (*root_ / "configs").string();
    fo.weeks = 6;
    cmd_fixture(fo);
    cfg_ = new RunConfig(load_run_config((*root_ / "configs" / "ecorp.ini").string()));
    cfg_->train.max_epochs = 6;
    cfg_->generate.trials = 3;
    cfg_->generate.events = 120;
    cfg_->generate.threads = 2;
    std::ostringstream log;
    cmd_train(*cfg_, log);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete cfg_;
    delete root_;
  }

  static RunConfig with_output(const std::string& name) {
    RunConfig c = *cfg_;
    c.output = (*root_ / name).string();
    return c;
  }
  GenerateSummary generate(const GenerateOptions& o) {
    std::ostringstream log, live;
    return cmd_generate(*cfg_, o, log, live, stop_);
  }
  ServeSummary serve(const ServeOptions& o, CollectSink& sink) {
    std::ostringstream log;
    return cmd_serve(*cfg_, o, sink, stop_, log);
  }

  static fs::path* root_;
  static RunConfig* cfg_;
  std::atomic<bool> stop_{false};
};

fs::path* Commands::root_ = nullptr;
RunConfig* Commands::cfg_ = nullptr;

}  // namespace

TEST_F(Commands, TrainWritesArtefactsAndIsDeterministic) {
  const fs::path out(cfg_->output);
  for (const char* f : {"config.ini", "stage1.ckpt", "stage2.ckpt", "model.ckpt", "train_log.csv", "metrics.json"})
    EXPECT_TRUE(fs::is_regular_file(out / f)) << f;
  const auto metrics = nlohmann::json::parse(slurp(out / "metrics.json"));
  EXPECT_EQ(metrics.at("recipient_mode"), "multiclass");
  EXPECT_GT(metrics.at("dataset").at("events").get<std::size_t>(), 0u);

  const RunConfig again = with_output("again");
  std::ostringstream log;
  cmd_train(again, log);
  EXPECT_EQ(slurp(out / "model.ckpt"), slurp(fs::path(again.output) / "model.ckpt"));
  EXPECT_EQ(slurp(out / "train_log.csv"), slurp(fs::path(again.output) / "train_log.csv"));
}

TEST_F(Commands, MissingDatasetNamesThePath) {
  const fs::path dir = *root_ / "missing";
  fs::create_directories(dir);
  std::ofstream(dir / "x.dataset") << "path = nowhere/log.csv\n";
  std::ofstream(dir / "x.ini") << "[run]\ndataset = x.dataset\n";
  try {
    load_run_config((dir / "x.ini").string());
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("nowhere/log.csv"), std::string::npos) << e.what();
  }
}

TEST_F(Commands, GenerateIsByteIdenticalAcrossRuns) {
  const fs::path a = *root_ / "gen_a", b = *root_ / "gen_b";
  generate(gen_to(a, std::nullopt, std::nullopt, true));
  generate(gen_to(b, std::nullopt, std::nullopt, true));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_EQ(files, 3u * 3u + 1u);  // events, emails, mbox per trial plus the manifest
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  ASSERT_EQ(manifest.at("trials").size(), 3u);
  EXPECT_NE(manifest["trials"][0].at("seed"), manifest["trials"][1].at("seed"));
  EXPECT_EQ(lines_of(slurp(a / "trial_002.jsonl")).size(), 120u);
  EXPECT_EQ(lines_of(slurp(a / "trial_002.emails.jsonl")).size(), 120u);
}

TEST_F(Commands, ZeroEventsWritesAnEmptyStream) {
  const fs::path dir = *root_ / "gen_zero";
  const auto s = generate(gen_to(dir, 1, 0));
  EXPECT_EQ(s.events, 0u);
  ASSERT_TRUE(fs::is_regular_file(dir / "trial_000.jsonl"));
  EXPECT_EQ(fs::file_size(dir / "trial_000.jsonl"), 0u);
}

TEST_F(Commands, UntilBoundsTimestamps) {
  const fs::path dir = *root_ / "gen_until";
  const std::int64_t end = cfg_->generate.start_time + 2 * 86400;
  GenerateOptions o = gen_to(dir, 1);
  o.end_time = end;
  generate(o);
  const auto lines = lines_of(slurp(dir / "trial_000.jsonl"));
  ASSERT_FALSE(lines.empty());
  for (const auto& l : lines) EXPECT_LT(nlohmann::json::parse(l).at("ts").get<std::int64_t>(), end);
}

TEST_F(Commands, EvaluateAgainstItsOwnStreamIsNearZero) {
  const fs::path dir = *root_ / "gen_self";
  generate(gen_to(dir, 1));
  std::vector<RawEvent> raw;
  {
    std::ifstream in(dir / "trial_000.jsonl");
    raw = read_events_jsonl(in);
  }
  std::ostringstream log_text;
  write_event_log(log_text, raw, LogFormat::Jsonl);
  detail::write_file(*root_ / "self.jsonl", log_text.str());
  std::ostringstream log;
  EvaluateOptions eo;
  eo.generated = dir.string();
  eo.reference = (*root_ / "self.jsonl").string();
  eo.out_dir = (*root_ / "eval_self").string();
  const EvalReport r = cmd_evaluate(*cfg_, eo, log);
  ASSERT_EQ(r.trials.size(), 1u);
  const auto emd = as_array(r.trials[0].emd);
  EXPECT_LT(emd[0], 0.1);  // the first gap is measured from the start time, not a previous event
  for (std::size_t k = 1; k < emd.size(); ++k) EXPECT_EQ(emd[k], 0.0) << k;
  EXPECT_EQ(r.trials[0].invalid_set_rate, 0.0);
  EXPECT_TRUE(fs::is_regular_file(*root_ / "eval_self" / "report.json"));
  EXPECT_TRUE(fs::is_regular_file(*root_ / "eval_self" / "hour_of_day.svg"));
}

TEST_F(Commands, EvaluateRejectsForeignLabels) {
  const fs::path dir = *root_ / "gen_foreign";
  generate(gen_to(dir, 1));
  detail::write_file(*root_ / "foreign.csv", "timestamp,sender,recipients\n1686000000,mallory,ceo\n");
  std::ostringstream log;
  EvaluateOptions eo;
  eo.generated = dir.string();
  eo.reference = (*root_ / "foreign.csv").string();
  EXPECT_THROW(cmd_evaluate(*cfg_, eo, log), DataError);
}

TEST_F(Commands, CheckpointFromAnotherVocabularyIsRejected) {
  const fs::path dir = *root_ / "other";
  fs::create_directories(dir);
  std::ofstream log_file(dir / "log.csv");
  log_file << "timestamp,sender,recipients\n";
  for (int i = 0; i < 40; ++i) log_file << 1686000000 + 86400 * i << (i % 2 ? ",ann,bob\n" : ",bob,ann\n");
  log_file.close();
  std::ofstream(dir / "other.dataset") << "path = log.csv\n";
  std::ofstream(dir / "other.ini") << "[run]\ndataset = other.dataset\n[model]\nK = 4\nd_embed = 8\nd_hidden = 16\n";
  const RunConfig other = load_run_config((dir / "other.ini").string());
  std::ostringstream log, live;
  GenerateOptions o;
  o.checkpoint = default_checkpoint(*cfg_);
  try {
    cmd_generate(other, o, log, live, stop_);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("vocabulary hash"), std::string::npos) << e.what();
  }
}

TEST_F(Commands, ServeResumesWhereItStopped) {
  const std::string resume = (*root_ / "serve.json").string();
  CollectSink whole, first, second;
  serve(serve_opts(resume, true, 1e9, 10), whole);
  const auto s1 = serve(serve_opts(resume, true, 1e9, 4), first);
  EXPECT_EQ(s1.next_email_id, 5);  // ids start at 1
  const auto s2 = serve(serve_opts(resume, false, 1e9, 6), second);
  EXPECT_TRUE(s2.resumed);
  EXPECT_EQ(s2.next_email_id, 11);
  std::vector<std::string> joined = first.lines;
  joined.insert(joined.end(), second.lines.begin(), second.lines.end());
  EXPECT_EQ(joined, whole.lines);
  // The serve stream is trial 0 of generate.
  const fs::path dir = *root_ / "gen_serve";
  generate(gen_to(dir, 1, 10, true));
  EXPECT_EQ(lines_of(slurp(dir / "trial_000.emails.jsonl")), whole.lines);
}

TEST_F(Commands, EmailNotYetDueIsKeptForTheNextRun) {
  const std::string resume = (*root_ / "serve_pending.json").string();
  CollectSink whole, first, idle, last;
  serve(serve_opts(resume, true, 1e9, 4), whole);
  serve(serve_opts(resume, true, 1e9, 2), first);
  // At a crawl the third email is days of wall time away when stop arrives.
  auto stopper = std::async(std::launch::async, [&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    stop_ = true;
  });
  serve(serve_opts(resume, false, 1e-3, std::nullopt), idle);
  stopper.get();
  EXPECT_TRUE(idle.lines.empty());
  const auto state = nlohmann::json::parse(slurp(resume));
  ASSERT_FALSE(state.at("pending").is_null());
  EXPECT_EQ(state["pending"].at("line"), whole.lines.at(2));
  stop_ = false;
  serve(serve_opts(resume, false, 1e9, 2), last);
  std::vector<std::string> joined = first.lines;
  joined.insert(joined.end(), last.lines.begin(), last.lines.end());
  EXPECT_EQ(joined, whole.lines);
}

TEST_F(Commands, UnreachableProviderIsAProviderError) {
  RunConfig c = *cfg_;
  c.provider.kind = ProviderKind::Remote;
  c.provider.endpoint = "http://127.0.0.1:9";
  c.provider.timeout_s = 1;
  std::ostringstream log, live;
  EXPECT_THROW(cmd_generate(c, gen_to(*root_ / "gen_down", 1, std::nullopt, true), log, live, stop_), ProviderError);
}

#ifdef DMN_CLI_PATH
namespace {
int run_cli(const std::string& args) {
  const std::string cmd = std::string(DMN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}
}  // namespace

TEST_F(Commands, CliExitCodes) {
  const fs::path bad = *root_ / "bad";
  fs::create_directories(bad);
  std::ofstream(bad / "log.csv") << "timestamp,sender,recipients\nnot-a-time,ceo,chair\n";
  std::ofstream(bad / "bad.dataset") << "path = log.csv\n";
  std::ofstream(bad / "bad.ini") << "[run]\ndataset = bad.dataset\noutput = " << (bad / "out").string() << "\n";
  std::ofstream(bad / "typo.ini") << "[run]\ndataset = bad.dataset\nseeed = 3\n";

  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("train --no-such-flag"), 2);
  EXPECT_EQ(run_cli("train -c " + (bad / "absent.ini").string()), 2);
  EXPECT_EQ(run_cli("train -c " + (bad / "typo.ini").string()), 2);
  EXPECT_EQ(run_cli("train -c " + (bad / "bad.ini").string()), 3);
  EXPECT_EQ(run_cli("generate -c " + (*root_ / "configs" / "ecorp.ini").string() + " --events 5 --until 2024-01-01"), 2);
}
#endif
