#pragma once

// Event-log ingestion: parsing, time-of-week metadata, recipient-set
// vocabulary, inter-event times, weekly windows and train/dev/test splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmn/errors.hpp"
#include "dmn/rng.hpp"

namespace dmn {

enum class MetadataClass : std::uint8_t { OfficeHours = 0, Shoulder = 1, NonWorking = 2 };
inline constexpr std::size_t kMetadataClasses = 3;

inline std::string_view metadata_name(MetadataClass m) {
  switch (m) {
    case MetadataClass::OfficeHours:
      return "office";
    case MetadataClass::Shoulder:
      return "shoulder";
    case MetadataClass::NonWorking:
      return "nonwork";
  }
  return "nonwork";
}

inline MetadataClass parse_metadata_name(std::string_view s) {
  if (s == "office") return MetadataClass::OfficeHours;
  if (s == "shoulder") return MetadataClass::Shoulder;
  if (s == "nonwork") return MetadataClass::NonWorking;
  throw DataError("unknown metadata class '" + std::string(s) + "'");
}

/// One parsed log row. `recipients` is sorted, unique and excludes the sender.
struct RawEvent {
  std::int64_t timestamp = 0;
  std::string sender;
  std::vector<std::string> recipients;

  auto operator<=>(const RawEvent&) const = default;
};

/// One modeled event. tau is in hours; the first event of a sequence measures
/// tau from the sequence start.
struct Event {
  double tau = 0.0;
  std::size_t sender = 0;
  std::size_t recipient_set = 0;
  MetadataClass meta = MetadataClass::OfficeHours;
  std::int64_t timestamp = 0;

  bool operator==(const Event&) const = default;
};

using Sequence = std::vector<Event>;

enum class LogFormat { Csv, Jsonl };

inline LogFormat parse_log_format(std::string_view s) {
  if (s == "csv") return LogFormat::Csv;
  if (s == "jsonl") return LogFormat::Jsonl;
  throw ConfigError("unknown log format '" + std::string(s) + "' (expected csv or jsonl)");
}

struct ParsedLog {
  std::vector<RawEvent> events;
  std::size_t duplicates_dropped = 0;
  std::size_t self_sends_dropped = 0;
};

// ---------------------------------------------------------------------------
// Time helpers (UTC epoch seconds + fixed offset)
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kSecondsPerDay = 86400;

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

/// 0 = Monday ... 6 = Sunday, in local time.
inline int local_day_of_week(std::int64_t ts, int tz_offset_minutes) {
  const std::int64_t days = floor_div(ts + std::int64_t{tz_offset_minutes} * 60, kSecondsPerDay);
  // 1970-01-01 was a Thursday.
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

inline int local_hour(std::int64_t ts, int tz_offset_minutes) {
  const std::int64_t local = ts + std::int64_t{tz_offset_minutes} * 60;
  const std::int64_t sec_of_day = local - floor_div(local, kSecondsPerDay) * kSecondsPerDay;
  return static_cast<int>(sec_of_day / 3600);
}

/// Weekday 09:00-16:59 office hours; weekday 06:00-08:59 and 17:00-21:59
/// shoulder; everything else (nights, weekends) non-working.
inline MetadataClass derive_metadata_class(std::int64_t ts, int tz_offset_minutes) {
  const int dow = local_day_of_week(ts, tz_offset_minutes);
  if (dow >= 5) return MetadataClass::NonWorking;
  const int hour = local_hour(ts, tz_offset_minutes);
  if (hour >= 9 && hour <= 16) return MetadataClass::OfficeHours;
  if ((hour >= 6 && hour <= 8) || (hour >= 17 && hour <= 21)) return MetadataClass::Shoulder;
  return MetadataClass::NonWorking;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::int64_t parse_timestamp(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line) + ": malformed timestamp '" + s + "'");
  }
}

// Drops self-addressed recipients; returns false if nothing is left.
inline bool normalize(RawEvent& ev) {
  std::sort(ev.recipients.begin(), ev.recipients.end());
  ev.recipients.erase(std::unique(ev.recipients.begin(), ev.recipients.end()), ev.recipients.end());
  std::erase(ev.recipients, ev.sender);
  std::erase(ev.recipients, std::string{});
  return !ev.recipients.empty();
}

}  // namespace detail

/// Parses a log from a stream. Rows are sorted by timestamp (stable) and
/// exact duplicates of (timestamp, sender, recipients) are dropped.
inline ParsedLog parse_event_log(std::istream& in, LogFormat format) {
  ParsedLog out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  bool any_row = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    RawEvent ev;
    if (format == LogFormat::Csv) {
      if (!header_seen) {
        header_seen = true;
        const auto cols = detail::split(line, ',');
        if (cols.size() == 3 && cols[0] == "timestamp") continue;  // header row
      }
      const auto cols = detail::split(line, ',');
      if (cols.size() != 3 || cols[1].empty() || cols[2].empty())
        throw DataError("line " + std::to_string(line_no) + ": expected 'timestamp,sender,recipients'");
      ev.timestamp = detail::parse_timestamp(cols[0], line_no);
      ev.sender = cols[1];
      ev.recipients = detail::split(cols[2], ';');
    } else {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        if (j.at("timestamp").is_number_integer())
          ev.timestamp = j.at("timestamp").get<std::int64_t>();
        else
          ev.timestamp = detail::parse_timestamp(j.at("timestamp").get<std::string>(), line_no);
        ev.sender = j.at("sender").get<std::string>();
        const auto& r = j.at("recipients");
        if (r.is_array())
          ev.recipients = r.get<std::vector<std::string>>();
        else
          ev.recipients = detail::split(r.get<std::string>(), ';');
      } catch (const DataError&) {
        throw;
      } catch (const std::exception& e) {
        throw DataError("line " + std::to_string(line_no) + ": malformed JSON row (" + e.what() + ")");
      }
      if (ev.sender.empty()) throw DataError("line " + std::to_string(line_no) + ": empty sender");
    }
    any_row = true;
    if (!detail::normalize(ev)) {
      ++out.self_sends_dropped;
      continue;
    }
    out.events.push_back(std::move(ev));
  }
  if (!any_row) throw DataError("event log is empty");
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
  std::set<std::tuple<std::int64_t, std::string, std::vector<std::string>>> seen;
  std::vector<RawEvent> unique;
  unique.reserve(out.events.size());
  for (auto& ev : out.events) {
    if (!seen.emplace(ev.timestamp, ev.sender, ev.recipients).second) {
      ++out.duplicates_dropped;
      continue;
    }
    unique.push_back(std::move(ev));
  }
  out.events = std::move(unique);
  return out;
}

inline ParsedLog parse_event_log(const std::string& path, LogFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event log '" + path + "'");
  return parse_event_log(in, format);
}

inline void write_event_log(std::ostream& out, const std::vector<RawEvent>& events, LogFormat format) {
  if (format == LogFormat::Csv) {
    out << "timestamp,sender,recipients\n";
    for (const auto& ev : events) {
      out << ev.timestamp << ',' << ev.sender << ',';
      for (std::size_t i = 0; i < ev.recipients.size(); ++i) out << (i ? ";" : "") << ev.recipients[i];
      out << '\n';
    }
  } else {
    for (const auto& ev : events) {
      nlohmann::json j{{"timestamp", ev.timestamp}, {"sender", ev.sender}, {"recipients", ev.recipients}};
      out << j.dump() << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Vocabularies
// ---------------------------------------------------------------------------

using LabelSet = std::vector<std::string>;

/// Distinct recipient sets, ids ordered by descending frequency (ties lexicographic).
struct RecipientVocabulary {
  std::vector<LabelSet> sets;
  std::map<LabelSet, std::size_t> index;
  std::vector<std::size_t> counts;
  std::size_t min_count = 1;
  std::size_t dropped_event_count = 0;

  std::size_t size() const { return sets.size(); }
  std::optional<std::size_t> find(const LabelSet& s) const {
    auto it = index.find(s);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

/// Participants (senders and recipients), ids ordered by descending send count
/// then label.
struct NodeVocabulary {
  std::vector<std::string> labels;
  std::map<std::string, std::size_t> index;

  std::size_t size() const { return labels.size(); }
  std::size_t id(const std::string& label) const {
    auto it = index.find(label);
    if (it == index.end()) throw DataError("unknown participant '" + label + "'");
    return it->second;
  }
  std::optional<std::size_t> find(const std::string& label) const {
    auto it = index.find(label);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

struct VocabResult {
  RecipientVocabulary vocab;
  std::vector<RawEvent> events;
};

inline VocabResult build_recipient_vocab(const std::vector<RawEvent>& events, std::size_t min_count) {
  if (events.empty()) throw DataError("build_recipient_vocab: no events");
  std::map<LabelSet, std::size_t> freq;
  for (const auto& ev : events) ++freq[ev.recipients];
  std::vector<std::pair<LabelSet, std::size_t>> kept;
  for (const auto& [set, n] : freq)
    if (n >= min_count) kept.emplace_back(set, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  VocabResult out;
  out.vocab.min_count = min_count;
  for (auto& [set, n] : kept) {
    out.vocab.index.emplace(set, out.vocab.sets.size());
    out.vocab.sets.push_back(set);
    out.vocab.counts.push_back(n);
  }
  for (const auto& ev : events) {
    if (out.vocab.index.count(ev.recipients))
      out.events.push_back(ev);
    else
      ++out.vocab.dropped_event_count;
  }
  if (out.vocab.sets.empty()) throw DataError("vocabulary empty");
  return out;
}

inline NodeVocabulary build_node_vocab(const std::vector<RawEvent>& events) {
  std::map<std::string, std::size_t> sends;
  for (const auto& ev : events) {
    ++sends[ev.sender];
    for (const auto& r : ev.recipients) sends.try_emplace(r, 0);
  }
  std::vector<std::pair<std::string, std::size_t>> order(sends.begin(), sends.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  NodeVocabulary v;
  for (auto& [label, n] : order) {
    v.index.emplace(label, v.labels.size());
    v.labels.push_back(label);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Inter-event times and normalization
// ---------------------------------------------------------------------------

inline constexpr double kMinTauHours = 1.0 / 3600.0;

/// tau_i = (t_i - t_{i-1}) / 3600 with t_{-1} = origin. Zero gaps clamp to one second.
inline std::vector<double> compute_inter_event_times(std::span<const std::int64_t> timestamps, std::int64_t origin) {
  std::vector<double> taus;
  taus.reserve(timestamps.size());
  std::int64_t prev = origin;
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    if (timestamps[i] < prev)
      throw DataError("timestamps decrease at index " + std::to_string(i) + " (" + std::to_string(timestamps[i]) +
                      " < " + std::to_string(prev) + ")");
    taus.push_back(std::max(static_cast<double>(timestamps[i] - prev) / 3600.0, kMinTauHours));
    prev = timestamps[i];
  }
  return taus;
}

/// Mean and standard deviation of log tau over the training split.
struct NormStats {
  double mean_log_tau = 0.0;
  double std_log_tau = 1.0;

  double normalize(double tau_hours) const { return (std::log(tau_hours) - mean_log_tau) / std_log_tau; }
  double denormalize(double y) const { return std::exp(std_log_tau * y + mean_log_tau); }
  bool operator==(const NormStats&) const = default;
};

inline NormStats compute_norm_stats(const std::vector<Sequence>& train) {
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (const auto& seq : train)
    for (const auto& ev : seq) {
      const double l = std::log(ev.tau);
      s += l;
      s2 += l * l;
      ++n;
    }
  if (n == 0) throw DataError("cannot compute normalization statistics: empty training split");
  NormStats out;
  out.mean_log_tau = s / static_cast<double>(n);
  const double var = std::max(0.0, s2 / static_cast<double>(n) - out.mean_log_tau * out.mean_log_tau);
  out.std_log_tau = var > 1e-24 ? std::sqrt(var) : 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Windows and splits
// ---------------------------------------------------------------------------

enum class SplitMode { Random, Chronological };

inline SplitMode parse_split_mode(std::string_view s) {
  if (s == "random") return SplitMode::Random;
  if (s == "chronological") return SplitMode::Chronological;
  throw ConfigError("unknown split mode '" + std::string(s) + "'");
}

struct Fractions {
  double train = 0.6, dev = 0.2, test = 0.2;
};

struct Splits {
  std::vector<Sequence> train, dev, test;
};

/// Local Monday 00:00 at or before `ts`, returned as a UTC epoch second.
inline std::int64_t week_anchor(std::int64_t ts, int tz_offset_minutes) {
  const std::int64_t off = std::int64_t{tz_offset_minutes} * 60;
  const std::int64_t day = floor_div(ts + off, kSecondsPerDay);
  const std::int64_t monday = day - local_day_of_week(ts, tz_offset_minutes);
  return monday * kSecondsPerDay - off;
}

struct IndexedRawEvent {
  std::int64_t timestamp;
  std::size_t sender;
  std::size_t recipient_set;
};

/// Cuts an id-mapped event stream into contiguous windows of `seq_len_days`,
/// anchored at the local Monday before the first event. Empty windows are
/// skipped. Each window's first tau is measured from the window start.

inline std::vector<Sequence> segment_windows(const std::vector<IndexedRawEvent>& events, int seq_len_days,
                                             int tz_offset_minutes) {
  if (seq_len_days < 1) throw ConfigError("seq_len_days must be >= 1");
  std::vector<Sequence> out;
  if (events.empty()) return out;
  const std::int64_t anchor = week_anchor(events.front().timestamp, tz_offset_minutes);
  const std::int64_t len = std::int64_t{seq_len_days} * kSecondsPerDay;
  std::size_t i = 0;
  while (i < events.size()) {
    const std::int64_t w = floor_div(events[i].timestamp - anchor, len);
    const std::int64_t start = anchor + w * len;
    std::vector<std::int64_t> ts;
    std::size_t j = i;
    while (j < events.size() && events[j].timestamp < start + len) ts.push_back(events[j++].timestamp);
    const auto taus = compute_inter_event_times(ts, start);
    Sequence seq;
    for (std::size_t k = i; k < j; ++k)
      seq.push_back(Event{taus[k - i], events[k].sender, events[k].recipient_set,
                          derive_metadata_class(events[k].timestamp, tz_offset_minutes), events[k].timestamp});
    out.push_back(std::move(seq));
    i = j;
  }
  return out;
}

/// Assigns whole sequences to train/dev/test. Counts are round(f*n) for train
/// and dev; test takes the remainder. Each split stays in chronological order.
inline Splits split_sequences(std::vector<Sequence> sequences, Fractions f, std::uint64_t seed,
                              SplitMode mode = SplitMode::Random) {
  if (f.train < 0 || f.dev < 0 || f.test < 0 || std::abs(f.train + f.dev + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be non-negative and sum to 1");
  const std::size_t n = sequences.size();
  if (n < 5) throw DataError("need at least 5 sequences to split, got " + std::to_string(n));
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_dev = std::min(n - n_train, static_cast<std::size_t>(std::llround(f.dev * static_cast<double>(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (mode == SplitMode::Random) {
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  auto take = [&](std::size_t from, std::size_t count) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(from),
                                 order.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(idx.begin(), idx.end());
    std::vector<Sequence> out;
    for (auto k : idx) out.push_back(sequences[k]);
    return out;
  };
  Splits s;
  s.train = take(0, n_train);
  s.dev = take(n_train, n_dev);
  s.test = take(n_train + n_dev, n - n_train - n_dev);
  return s;
}

/// Convenience form: window an id-mapped stream, then split.
inline Splits split_sequences(const std::vector<IndexedRawEvent>& events, int seq_len_days, Fractions f,
                              std::uint64_t seed, int tz_offset_minutes = 0, SplitMode mode = SplitMode::Random) {
  return split_sequences(segment_windows(events, seq_len_days, tz_offset_minutes), f, seed, mode);
}

// ---------------------------------------------------------------------------
// Full ingestion pipeline
// ---------------------------------------------------------------------------

struct DatasetConfig {
  std::string path;
  LogFormat format = LogFormat::Csv;
  int tz_offset_minutes = 0;
  std::size_t min_count = 1;
  int seq_len_days = 7;
  std::uint64_t split_seed = 0;
  SplitMode split_mode = SplitMode::Random;
  bool drop_low_activity = false;
  std::size_t low_activity_threshold = 80;
  std::string corpus;  // optional email corpus (JSONL) for text modeling
};

struct Dataset {
  DatasetConfig config;
  NodeVocabulary nodes;
  RecipientVocabulary sets;
  Splits splits;
  NormStats norm;  // train split only; shared by dev/test
  std::vector<RawEvent> filtered;
  std::size_t duplicates_dropped = 0;
  std::size_t self_sends_dropped = 0;
  std::size_t low_activity_windows_dropped = 0;

  std::size_t event_count(const std::vector<Sequence>& split) const {
    std::size_t n = 0;
    for (const auto& s : split) n += s.size();
    return n;
  }
};

inline std::vector<IndexedRawEvent> index_events(const std::vector<RawEvent>& events, const NodeVocabulary& nodes,
                                                 const RecipientVocabulary& sets) {
  std::vector<IndexedRawEvent> out;
  out.reserve(events.size());
  for (const auto& ev : events) {
    auto set_id = sets.find(ev.recipients);
    if (!set_id) throw DataError("recipient set not in vocabulary");
    out.push_back({ev.timestamp, nodes.id(ev.sender), *set_id});
  }
  return out;
}

inline Dataset build_dataset(const std::vector<RawEvent>& raw, const DatasetConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  auto vr = build_recipient_vocab(raw, cfg.min_count);
  ds.sets = std::move(vr.vocab);
  ds.filtered = std::move(vr.events);
  ds.nodes = build_node_vocab(ds.filtered);
  auto windows = segment_windows(index_events(ds.filtered, ds.nodes, ds.sets), cfg.seq_len_days, cfg.tz_offset_minutes);
  if (cfg.drop_low_activity) {
    const auto before = windows.size();
    std::erase_if(windows, [&](const Sequence& s) { return s.size() < cfg.low_activity_threshold; });
    ds.low_activity_windows_dropped = before - windows.size();
  }
  ds.splits = split_sequences(std::move(windows), Fractions{}, cfg.split_seed, cfg.split_mode);
  ds.norm = compute_norm_stats(ds.splits.train);
  return ds;
}

inline Dataset load_dataset(const DatasetConfig& cfg) {
  auto parsed = parse_event_log(cfg.path, cfg.format);
  Dataset ds = build_dataset(parsed.events, cfg);
  ds.duplicates_dropped = parsed.duplicates_dropped;
  ds.self_sends_dropped = parsed.self_sends_dropped;
  return ds;
}

}  // namespace dmn
