// dmn: train, generate, evaluate and serve email traffic models.

#include <csignal>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "dmn/commands.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

int exit_code_for(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const dmn::ConfigError& ex) {
    std::cerr << "dmn: config error: " << ex.what() << "\n";
    return 2;
  } catch (const dmn::DataError& ex) {
    std::cerr << "dmn: data error: " << ex.what() << "\n";
    return 3;
  } catch (const dmn::ProviderError& ex) {
    std::cerr << "dmn: provider error: " << ex.what() << "\n";
    return 4;
  } catch (const std::exception& ex) {
    std::cerr << "dmn: error: " << ex.what() << "\n";
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  static_assert(std::atomic<bool>::is_always_lock_free);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  CLI::App app{"Email traffic generation with lognormal mixture point processes"};
  app.require_subcommand(1);
  std::string config;

  auto* train = app.add_subcommand("train", "Train a model from the configured dataset");
  train->add_option("-c,--config", config, "Run configuration file")->required();

  auto* gen = app.add_subcommand("generate", "Sample event streams (and emails) from a trained model");
  gen->add_option("-c,--config", config, "Run configuration file")->required();
  dmn::GenerateOptions go;
  std::size_t trials = 0, events = 0;
  std::string until;
  double gen_scale = 0.0;
  auto* o_trials = gen->add_option("--trials", trials, "Number of independent trials");
  auto* o_events = gen->add_option("--events", events, "Events per trial");
  auto* o_until = gen->add_option("--until", until, "End time instead of an event count (epoch or ISO-8601 UTC)");
  o_events->excludes(o_until);
  gen->add_flag("--realtime", go.realtime, "Stream one trial live on stdout at wall-clock pace");
  auto* o_gscale = gen->add_option("--time-scale", gen_scale, "Simulated seconds per wall second (realtime)");
  bool gen_emails = false;
  auto* o_emails = gen->add_flag("--emails", gen_emails, "Run the thread engine and write emails");
  gen->add_option("--checkpoint", go.checkpoint, "Checkpoint (default <output>/model.ckpt)");
  gen->add_option("-o,--out", go.out_dir, "Output directory (default <output>/generated)");

  auto* eval = app.add_subcommand("evaluate", "Compare generated streams against a reference dataset");
  eval->add_option("-c,--config", config, "Run configuration file")->required();
  dmn::EvaluateOptions eo;
  bool no_figures = false;
  eval->add_option("--generated", eo.generated, "Directory of generated streams (default <output>/generated)");
  eval->add_option("--reference", eo.reference, "all, train, dev, test or an event log path")
      ->capture_default_str();
  eval->add_option("--checkpoint", eo.checkpoint, "Checkpoint (default <output>/model.ckpt)");
  eval->add_option("-o,--out", eo.out_dir, "Report directory (default <output>/eval)");
  eval->add_option("--model-name", eo.model_name, "Label for the report");
  eval->add_flag("--no-figures", no_figures, "Skip SVG figures");

  auto* serve = app.add_subcommand("serve", "Emit generated emails live until interrupted");
  serve->add_option("-c,--config", config, "Run configuration file")->required();
  dmn::ServeOptions so;
  std::string endpoint = "-";
  double serve_scale = 0.0;
  std::size_t max_events = 0;
  serve->add_option("--endpoint", endpoint, "'-' for stdout or unix:<path> for a local socket")->capture_default_str();
  serve->add_option("--resume", so.resume, "Resume file (default <output>/serve.resume.json)");
  serve->add_flag("--fresh", so.fresh, "Ignore an existing resume file");
  auto* o_sscale = serve->add_option("--time-scale", serve_scale, "Simulated seconds per wall second");
  auto* o_max = serve->add_option("--max-events", max_events, "Stop after this many emails");
  serve->add_option("--checkpoint", so.checkpoint, "Checkpoint (default <output>/model.ckpt)");

  auto* fixture = app.add_subcommand("fixture", "Write the E Corp synthetic dataset and sample run files");
  dmn::FixtureOptions fo;
  fixture->add_option("-o,--out", fo.out_dir, "Output directory")->required();
  fixture->add_option("--weeks", fo.weeks, "Weeks of traffic")->capture_default_str();
  fixture->add_option("--seed", fo.seed, "Fixture seed")->capture_default_str();
  fixture->add_flag("--predictable-recipients", fo.predictable_recipients,
                    "Choose recipient groups from the previous sender instead of at random");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (fixture->parsed()) {
      for (const auto& f : dmn::cmd_fixture(fo)) std::cerr << "wrote " << f << "\n";
      return 0;
    }
    const dmn::RunConfig cfg = dmn::load_run_config(config);
    if (train->parsed()) {
      dmn::cmd_train(cfg, std::cerr);
    } else if (gen->parsed()) {
      if (*o_trials) go.trials = trials;
      if (*o_events) go.events = events;
      if (*o_until) go.end_time = dmn::parse_utc_time(until);
      if (*o_gscale) go.time_scale = gen_scale;
      if (*o_emails) go.emails = gen_emails;
      dmn::cmd_generate(cfg, go, std::cerr, std::cout, g_stop);
    } else if (eval->parsed()) {
      eo.figures = !no_figures;
      dmn::cmd_evaluate(cfg, eo, std::cerr);
    } else if (serve->parsed()) {
      if (*o_sscale) so.time_scale = serve_scale;
      if (*o_max) so.max_events = max_events;
      std::unique_ptr<dmn::LineSink> sink;
      if (endpoint == "-") sink = std::make_unique<dmn::StreamSink>(std::cout);
      else if (endpoint.starts_with("unix:")) sink = std::make_unique<dmn::UnixSocketSink>(endpoint.substr(5));
      else throw dmn::ConfigError("--endpoint must be '-' or unix:<path>, got '" + endpoint + "'");
      dmn::cmd_serve(cfg, so, *sink, g_stop, std::cerr);
    }
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
  return 0;
}
