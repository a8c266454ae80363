#pragma once

// Run configuration. Two files drive a run:
//
//   dataset file: flat key=value lines (path, format, corpus, tz_offset_minutes,
//                 min_count, seq_len_days, split_seed, split_mode,
//                 drop_low_activity, low_activity_threshold)
//   run file:     INI sections [run] [model] [train] [generate] [provider] [threads]
//
// Relative paths are resolved against the directory of the file that names
// them. Unknown sections or keys are errors, as are malformed values.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dmn/errors.hpp"
#include "dmn/event_data.hpp"
#include "dmn/model.hpp"
#include "dmn/text_provider.hpp"
#include "dmn/thread_engine.hpp"
#include "dmn/training.hpp"

namespace dmn {

enum class ProviderKind { Builtin, Remote };

struct ProviderSettings {
  ProviderKind kind = ProviderKind::Builtin;
  std::string endpoint;  // remote only
  double timeout_s = 30.0;
};

struct GenerateSettings {
  std::int64_t start_time = 0;  // UTC epoch seconds
  std::size_t events = 1000;
  std::size_t trials = 1;
  std::size_t threads = 0;  // 0 = hardware concurrency
  double time_scale = 1.0;
  bool emails = false;
};

struct ThreadSettings {
  ThreadEngineConfig engine;
  std::size_t keywords = 10;
  KeywordMode keyword_mode = KeywordMode::TfIdf;
  std::string resources;  // empty = built-in resource directory
};

struct RunConfig {
  std::string source;          // path of the run file, if loaded from one
  std::string dataset_config;  // resolved dataset file path
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  GenerateSettings generate;
  ProviderSettings provider;
  ThreadSettings threads;
  std::string output = "out";
  std::uint64_t seed = 0;

  void validate() const;
};

namespace detail {

using Ptree = boost::property_tree::ptree;

inline std::uint64_t to_u64(const std::string& v, const std::string& key) {
  if (v.empty() || v.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    std::size_t used = 0;
    const auto x = std::stoull(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

inline long long to_i64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const auto x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

inline double to_f64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size() && std::isfinite(x)) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

inline bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

inline Ptree read_ini(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path);
  Ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string(what) + " " + path + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return tree;
}

inline void check_keys(const Ptree& t, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : t) {
    if (!allowed.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    if (!v.empty()) throw ConfigError(where + ": '" + k + "' must be a plain value");
  }
}

}  // namespace detail

/// Accepts epoch seconds or "YYYY-MM-DDTHH:MM:SSZ" (also with a space separator
/// or without the time part).
inline std::int64_t parse_utc_time(const std::string& s) {
  if (!s.empty() && s.find_first_not_of("0123456789", s.front() == '-' ? 1 : 0) == std::string::npos)
    return detail::to_i64(s, "time");
  static const std::regex re(R"((\d{4})-(\d{2})-(\d{2})(?:[T ](\d{2}):(\d{2}):(\d{2})Z?)?)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw ConfigError("malformed time '" + s + "'");
  const int y = std::stoi(m[1]), mo = std::stoi(m[2]), d = std::stoi(m[3]);
  const int h = m[4].matched ? std::stoi(m[4]) : 0, mi = m[5].matched ? std::stoi(m[5]) : 0,
            sec = m[6].matched ? std::stoi(m[6]) : 0;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month(static_cast<unsigned>(mo)),
                                        std::chrono::day(static_cast<unsigned>(d))};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) throw ConfigError("invalid time '" + s + "'");
  const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
  return static_cast<std::int64_t>(days) * kSecondsPerDay + h * 3600 + mi * 60 + sec;
}

/// Reads a dataset file; relative paths are taken from the file's directory.
inline DatasetConfig load_dataset_config(const std::string& path) {
  using namespace detail;
  const Ptree t = read_ini(path, "dataset config");
  check_keys(t, path,
             {"path", "format", "corpus", "tz_offset_minutes", "min_count", "seq_len_days", "split_seed", "split_mode",
              "drop_low_activity", "low_activity_threshold"});
  const auto base = std::filesystem::path(path).parent_path();
  DatasetConfig c;
  for (const auto& [k, node] : t) {
    const std::string v = node.data();
    if (k == "path") c.path = resolve(base, v);
    else if (k == "format") c.format = parse_log_format(v);
    else if (k == "corpus") c.corpus = resolve(base, v);
    else if (k == "tz_offset_minutes") c.tz_offset_minutes = static_cast<int>(to_i64(v, k));
    else if (k == "min_count") c.min_count = to_u64(v, k);
    else if (k == "seq_len_days") c.seq_len_days = static_cast<int>(to_i64(v, k));
    else if (k == "split_seed") c.split_seed = to_u64(v, k);
    else if (k == "split_mode") c.split_mode = parse_split_mode(v);
    else if (k == "drop_low_activity") c.drop_low_activity = to_bool(v, k);
    else if (k == "low_activity_threshold") c.low_activity_threshold = to_u64(v, k);
  }
  if (c.path.empty()) throw ConfigError(path + ": 'path' is required");
  if (c.tz_offset_minutes < -14 * 60 || c.tz_offset_minutes > 14 * 60)
    throw ConfigError(path + ": tz_offset_minutes out of range");
  if (c.min_count < 1) throw ConfigError(path + ": min_count must be >= 1");
  if (c.seq_len_days < 1) throw ConfigError(path + ": seq_len_days must be >= 1");
  return c;
}

inline RunConfig parse_run_config(const boost::property_tree::ptree& tree, const std::filesystem::path& base) {
  using namespace detail;
  static const std::map<std::string, std::set<std::string>> sections = {
      {"run", {"dataset", "output", "seed"}},
      {"model", {"K", "d_embed", "d_hidden", "recipient_mode"}},
      {"train", {"lr", "batch", "max_epochs", "patience", "min_improvement", "stage3", "point"}},
      {"generate", {"start", "events", "trials", "threads", "time_scale", "emails"}},
      {"provider", {"kind", "endpoint", "timeout_s"}},
      {"threads",
       {"window_days", "active_days", "cap", "subject_tokens", "body_tokens", "context_emails", "keywords",
        "keyword_mode", "resources"}},
  };
  RunConfig c;
  std::string dataset;
  for (const auto& [name, sec] : tree) {
    const auto it = sections.find(name);
    if (it == sections.end()) {
      if (sec.empty()) throw ConfigError("run config: key '" + name + "' outside of any section");
      throw ConfigError("run config: unknown section [" + name + "]");
    }
    check_keys(sec, "[" + name + "]", it->second);
    for (const auto& [k, node] : sec) {
      const std::string v = node.data();
      const std::string key = name + "." + k;
      if (name == "run") {
        if (k == "dataset") dataset = resolve(base, v);
        else if (k == "output") c.output = resolve(base, v);
        else if (k == "seed") c.seed = to_u64(v, key);
      } else if (name == "model") {
        if (k == "K") c.model.K = to_u64(v, key);
        else if (k == "d_embed") c.model.d_embed = to_u64(v, key);
        else if (k == "d_hidden") c.model.d_hidden = to_u64(v, key);
        else if (k == "recipient_mode") c.model.recipient_mode = parse_recipient_mode(v);
      } else if (name == "train") {
        if (k == "lr") c.train.lr = to_f64(v, key);
        else if (k == "batch") c.train.batch = to_u64(v, key);
        else if (k == "max_epochs") c.train.max_epochs = to_u64(v, key);
        else if (k == "patience") c.train.patience = to_u64(v, key);
        else if (k == "min_improvement") c.train.min_improvement = to_f64(v, key);
        else if (k == "stage3") c.train.stage3_enabled = to_bool(v, key);
        else if (k == "point") c.train.point = parse_point_estimate(v);
      } else if (name == "generate") {
        if (k == "start") c.generate.start_time = parse_utc_time(v);
        else if (k == "events") c.generate.events = to_u64(v, key);
        else if (k == "trials") c.generate.trials = to_u64(v, key);
        else if (k == "threads") c.generate.threads = to_u64(v, key);
        else if (k == "time_scale") c.generate.time_scale = to_f64(v, key);
        else if (k == "emails") c.generate.emails = to_bool(v, key);
      } else if (name == "provider") {
        if (k == "kind") {
          if (v == "builtin") c.provider.kind = ProviderKind::Builtin;
          else if (v == "remote") c.provider.kind = ProviderKind::Remote;
          else throw ConfigError(key + ": expected builtin or remote, got '" + v + "'");
        } else if (k == "endpoint") c.provider.endpoint = v;
        else if (k == "timeout_s") c.provider.timeout_s = to_f64(v, key);
      } else if (name == "threads") {
        auto& e = c.threads.engine;
        if (k == "window_days") e.window_days = to_f64(v, key);
        else if (k == "active_days") e.active_days = to_f64(v, key);
        else if (k == "cap") e.cap = to_f64(v, key);
        else if (k == "subject_tokens") e.subject_tokens = static_cast<int>(to_i64(v, key));
        else if (k == "body_tokens") e.body_tokens = static_cast<int>(to_i64(v, key));
        else if (k == "context_emails") e.context_emails = to_u64(v, key);
        else if (k == "keywords") c.threads.keywords = to_u64(v, key);
        else if (k == "keyword_mode") c.threads.keyword_mode = parse_keyword_mode(v);
        else if (k == "resources") c.threads.resources = resolve(base, v);
      }
    }
  }
  if (dataset.empty()) throw ConfigError("[run]: 'dataset' is required");
  c.dataset_config = dataset;
  c.dataset = load_dataset_config(dataset);
  c.train.seed = c.seed;
  return c;
}

/// Applies DMN_SEED, if set, over the configured seed.
inline void apply_env_overrides(RunConfig& c) {
  if (const char* s = std::getenv("DMN_SEED"); s != nullptr && *s != '\0') {
    c.seed = detail::to_u64(s, "DMN_SEED");
    c.train.seed = c.seed;
  }
}

inline void RunConfig::validate() const {
  ModelConfig m = model;
  m.validate();
  train.validate();
  threads.engine.validate();
  if (threads.keywords < 1) throw ConfigError("[threads] keywords must be >= 1");
  if (!(generate.time_scale > 0.0)) throw ConfigError("[generate] time_scale must be > 0");
  if (generate.trials < 1) throw ConfigError("[generate] trials must be >= 1");
  if (provider.kind == ProviderKind::Remote) {
    if (provider.endpoint.empty()) throw ConfigError("[provider] endpoint is required for a remote provider");
    if (!provider.endpoint.starts_with("http://")) throw ConfigError("[provider] endpoint must be an http:// URL");
  }
  if (!(provider.timeout_s > 0.0)) throw ConfigError("[provider] timeout_s must be > 0");
  if (!std::filesystem::is_regular_file(dataset.path)) throw ConfigError("dataset not found: " + dataset.path);
  if (!dataset.corpus.empty() && !std::filesystem::is_regular_file(dataset.corpus))
    throw ConfigError("email corpus not found: " + dataset.corpus);
}

/// Loads, overrides from the environment and validates a run file.
inline RunConfig load_run_config(const std::string& path) {
  const auto tree = detail::read_ini(path, "run config");
  RunConfig c = parse_run_config(tree, std::filesystem::path(path).parent_path());
  c.source = path;
  apply_env_overrides(c);
  c.validate();
  return c;
}

/// Writes the effective configuration (paths resolved, overrides applied) as a
/// run file plus its inlined dataset section, for the record.
inline void write_effective_config(std::ostream& out, const RunConfig& c) {
  const auto& d = c.dataset;
  const auto& e = c.threads.engine;
  std::ostringstream num;
  num.precision(17);
  auto f = [&](double x) {
    num.str("");
    num << x;
    return num.str();
  };
  out << "# effective configuration\n"
      << "# dataset file " << c.dataset_config << ": path=" << d.path
      << " format=" << (d.format == LogFormat::Csv ? "csv" : "jsonl") << " corpus=" << d.corpus
      << " tz_offset_minutes=" << d.tz_offset_minutes << " min_count=" << d.min_count
      << " seq_len_days=" << d.seq_len_days << " split_seed=" << d.split_seed
      << " split_mode=" << (d.split_mode == SplitMode::Random ? "random" : "chronological")
      << " drop_low_activity=" << (d.drop_low_activity ? "true" : "false")
      << " low_activity_threshold=" << d.low_activity_threshold << "\n\n"
      << "[run]\ndataset = " << c.dataset_config << "\noutput = " << c.output << "\nseed = " << c.seed << "\n\n"
      << "[model]\nK = " << c.model.K << "\nd_embed = " << c.model.d_embed << "\nd_hidden = " << c.model.d_hidden
      << "\nrecipient_mode = " << recipient_mode_name(c.model.recipient_mode) << "\n\n"
      << "[train]\nlr = " << f(c.train.lr) << "\nbatch = " << c.train.batch << "\nmax_epochs = " << c.train.max_epochs
      << "\npatience = " << c.train.patience << "\nmin_improvement = " << f(c.train.min_improvement)
      << "\nstage3 = " << (c.train.stage3_enabled ? "true" : "false")
      << "\npoint = " << (c.train.point == PointEstimate::Median ? "median" : "mean") << "\n\n"
      << "[generate]\nstart = " << c.generate.start_time << "\nevents = " << c.generate.events
      << "\ntrials = " << c.generate.trials << "\nthreads = " << c.generate.threads
      << "\ntime_scale = " << f(c.generate.time_scale) << "\nemails = " << (c.generate.emails ? "true" : "false")
      << "\n\n"
      << "[provider]\nkind = " << (c.provider.kind == ProviderKind::Builtin ? "builtin" : "remote")
      << (c.provider.endpoint.empty() ? "" : "\nendpoint = " + c.provider.endpoint)
      << "\ntimeout_s = " << f(c.provider.timeout_s) << "\n\n"
      << "[threads]\nwindow_days = " << f(e.window_days) << "\nactive_days = " << f(e.active_days)
      << "\ncap = " << f(e.cap) << "\nsubject_tokens = " << e.subject_tokens << "\nbody_tokens = " << e.body_tokens
      << "\ncontext_emails = " << e.context_emails << "\nkeywords = " << c.threads.keywords
      << "\nkeyword_mode = " << (c.threads.keyword_mode == KeywordMode::TfIdf ? "tfidf" : "frequency")
      << (c.threads.resources.empty() ? "" : "\nresources = " + c.threads.resources) << "\n";
}

}  // namespace dmn
