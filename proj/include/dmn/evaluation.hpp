#pragma once

// Realism harness: compares generated streams with reference traffic over six
// 1-D distributions, counts invalid multi-cast sets, scores thread coherence,
// and aggregates trials into JSON / CSV reports and SVG figures.
//
// Ground metric for categorical axes: node and recipient-set ids are ordered
// by descending frequency, bins are one unit apart, and proportions are in
// percentage points. The recipient-set axis has a trailing bin for sets
// outside the vocabulary.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmn/checkpoint.hpp"
#include "dmn/event_data.hpp"
#include "dmn/metrics.hpp"
#include "dmn/parallel.hpp"
#include "dmn/sampling.hpp"
#include "dmn/text_provider.hpp"
#include "dmn/thread_engine.hpp"
#include "dmn/training.hpp"

namespace dmn {

inline constexpr std::size_t kMaxTauSamples = 100000;

/// Columns of one stream needed for the distribution report.
struct StreamView {
  std::vector<double> taus;  // hours
  std::vector<std::int64_t> timestamps;
  std::vector<std::size_t> senders;
  std::vector<std::size_t> sets;  // kNoSet when outside the vocabulary
  std::vector<std::size_t> sizes;

  std::size_t size() const { return timestamps.size(); }
  void reserve(std::size_t n) {
    taus.reserve(n);
    timestamps.reserve(n);
    senders.reserve(n);
    sets.reserve(n);
    sizes.reserve(n);
  }
};

inline StreamView view_of(const std::vector<SampledEvent>& events) {
  StreamView v;
  v.reserve(events.size());
  for (const auto& e : events) {
    v.taus.push_back(e.tau);
    v.timestamps.push_back(e.timestamp);
    v.senders.push_back(e.sender);
    v.sets.push_back(e.recipient_set);
    v.sizes.push_back(e.recipients.size());
  }
  return v;
}

inline StreamView view_of(const std::vector<Sequence>& split, const ModelBundle& b) {
  StreamView v;
  for (const auto& seq : split)
    for (const auto& e : seq) {
      v.taus.push_back(e.tau);
      v.timestamps.push_back(e.timestamp);
      v.senders.push_back(e.sender);
      v.sets.push_back(e.recipient_set);
      v.sizes.push_back(b.members(e.recipient_set).size());
    }
  return v;
}

/// Reads a generated JSONL stream against a model's vocabularies. Unknown
/// participants mean the stream came from another model.
inline std::vector<SampledEvent> read_stream_jsonl(std::istream& in, const ModelBundle& b) {
  std::vector<SampledEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SampledEvent ev;
      ev.timestamp = j.at("ts").get<std::int64_t>();
      ev.time = static_cast<double>(ev.timestamp);
      ev.tau = j.at("tau_h").get<double>();
      ev.meta = parse_metadata_name(j.at("meta").get<std::string>());
      const auto sender = b.nodes.find(j.at("sender").get<std::string>());
      if (!sender) throw DataError("vocabulary mismatch: unknown sender '" + j["sender"].get<std::string>() + "'");
      ev.sender = *sender;
      auto labels = j.at("recipients").get<std::vector<std::string>>();
      std::sort(labels.begin(), labels.end());
      for (const auto& l : labels) {
        const auto id = b.nodes.find(l);
        if (!id) throw DataError("vocabulary mismatch: unknown recipient '" + l + "'");
        ev.recipients.push_back(*id);
      }
      std::sort(ev.recipients.begin(), ev.recipients.end());
      ev.recipient_set = b.sets.find(labels).value_or(kNoSet);
      out.push_back(std::move(ev));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("generated stream line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("generated stream line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

struct DistributionEmd {
  double time_delta_h = 0.0;
  double hour_of_day = 0.0;
  double day_of_week = 0.0;
  double sender_outdegree = 0.0;
  double recipient_indegree = 0.0;
  double hyperedge_size = 0.0;
};

inline constexpr std::array<const char*, 6> kEmdKeys{"emd_time_delta_h",      "emd_hour_of_day",
                                                     "emd_day_of_week",       "emd_sender_outdegree",
                                                     "emd_recipient_indegree", "emd_hyperedge_size"};

inline std::array<double, 6> as_array(const DistributionEmd& d) {
  return {d.time_delta_h, d.hour_of_day, d.day_of_week, d.sender_outdegree, d.recipient_indegree, d.hyperedge_size};
}

inline std::vector<double> histogram(const std::vector<std::size_t>& ids, std::size_t bins) {
  std::vector<double> h(bins, 0.0);
  for (std::size_t id : ids) ++h.at(std::min(id, bins - 1));
  return h;
}

inline std::vector<double> hour_histogram(const std::vector<std::int64_t>& ts, int tz) {
  std::vector<double> h(24, 0.0);
  for (auto t : ts) ++h[static_cast<std::size_t>(local_hour(t, tz))];
  return h;
}

inline std::vector<double> weekday_histogram(const std::vector<std::int64_t>& ts, int tz) {
  std::vector<double> h(7, 0.0);
  for (auto t : ts) ++h[static_cast<std::size_t>(local_day_of_week(t, tz))];
  return h;
}

inline std::span<const double> capped(const std::vector<double>& v) {
  return {v.data(), std::min(v.size(), kMaxTauSamples)};
}

/// The six EMDs between a generated and a reference stream.
inline DistributionEmd distribution_report(const StreamView& gen, const StreamView& ref, int tz_offset_minutes,
                                           std::size_t n_nodes, std::size_t n_sets) {
  if (gen.size() == 0 || ref.size() == 0) throw DataError("distribution report needs non-empty streams");
  auto pct = [](const std::vector<double>& a, const std::vector<double>& b) { return 100.0 * emd_histogram(a, b); };
  DistributionEmd d;
  d.time_delta_h = emd_1d(capped(gen.taus), capped(ref.taus));
  d.hour_of_day = pct(hour_histogram(gen.timestamps, tz_offset_minutes), hour_histogram(ref.timestamps, tz_offset_minutes));
  d.day_of_week =
      pct(weekday_histogram(gen.timestamps, tz_offset_minutes), weekday_histogram(ref.timestamps, tz_offset_minutes));
  d.sender_outdegree = pct(histogram(gen.senders, n_nodes), histogram(ref.senders, n_nodes));
  d.recipient_indegree = pct(histogram(gen.sets, n_sets + 1), histogram(ref.sets, n_sets + 1));
  std::vector<double> gs(gen.sizes.begin(), gen.sizes.end()), rs(ref.sizes.begin(), ref.sizes.end());
  d.hyperedge_size = emd_1d(gs, rs);
  return d;
}

/// Share of multi-cast emails whose recipient set is outside the vocabulary.
inline double invalid_set_rate(const StreamView& v) {
  std::size_t multi = 0, invalid = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v.sizes[i] < 2) continue;
    ++multi;
    invalid += v.sets[i] == kNoSet;
  }
  return multi == 0 ? 0.0 : static_cast<double>(invalid) / static_cast<double>(multi);
}

// ---------------------------------------------------------------------------
// Coherence
// ---------------------------------------------------------------------------

struct CoherenceStats {
  std::size_t pairs = 0;
  double mean = 0.0;
  double min = 0.0;
};

/// Similarity of each email with its successor, over threads of two or more.
inline CoherenceStats coherence_report(const std::vector<std::vector<std::string>>& threads) {
  CoherenceStats s;
  double total = 0.0;
  s.min = 1.0;
  for (const auto& t : threads)
    for (std::size_t i = 1; i < t.size(); ++i) {
      const double c = coherence_similarity(t[i - 1], t[i]);
      total += c;
      s.min = std::min(s.min, c);
      ++s.pairs;
    }
  if (s.pairs == 0) return {};
  s.mean = total / static_cast<double>(s.pairs);
  return s;
}

/// Groups emails by thread, each as "subject body" text in email-id order.
inline std::vector<std::vector<std::string>> thread_texts(const std::vector<GeneratedEmail>& emails) {
  std::map<std::int64_t, std::vector<std::pair<std::int64_t, std::string>>> by_thread;
  for (const auto& e : emails) by_thread[e.thread_id].emplace_back(e.email_id, e.subject + " " + e.body);
  std::vector<std::vector<std::string>> out;
  for (auto& [_, v] : by_thread) {
    std::sort(v.begin(), v.end());
    std::vector<std::string> texts;
    for (auto& [__, t] : v) texts.push_back(std::move(t));
    out.push_back(std::move(texts));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct TrialMetrics {
  std::size_t events = 0;
  DistributionEmd emd;
  double invalid_set_rate = 0.0;
};

struct EvalReport {
  std::string model = "model";
  std::string recipient_mode;
  std::vector<TrialMetrics> trials;
  std::optional<ValidationMetrics> prediction;
  std::optional<CoherenceStats> coherence;
  std::vector<QQPoint> qq;

  MeanStd summary(std::size_t key) const {
    std::vector<double> v;
    for (const auto& t : trials) v.push_back(key < 6 ? as_array(t.emd)[key] : t.invalid_set_rate);
    return mean_std(v);
  }
};

inline EvalReport evaluate_streams(const std::vector<StreamView>& generated, const StreamView& reference,
                                   int tz_offset_minutes, std::size_t n_nodes, std::size_t n_sets,
                                   std::size_t threads = 0) {
  EvalReport r;
  r.trials.resize(generated.size());
  parallel_for(generated.size(), threads, [&](std::size_t i) {
    r.trials[i] = {generated[i].size(),
                   distribution_report(generated[i], reference, tz_offset_minutes, n_nodes, n_sets),
                   invalid_set_rate(generated[i])};
  });
  return r;
}

inline nlohmann::json to_json(const ValidationMetrics& m) {
  return {{"events", m.events},           {"nll_tau", m.nll_tau},           {"nll_sender", m.nll_sender},
          {"nll_recipient", m.nll_recipient}, {"rmse_h", m.rmse_h},         {"mae_h", m.mae_h},
          {"sender_top1", m.sender_top1}, {"sender_top3", m.sender_top3}, {"recipient_top1", m.recipient_top1},
          {"recipient_top3", m.recipient_top3}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["model"] = r.model;
  j["recipient_mode"] = r.recipient_mode;
  j["trials"] = r.trials.size();
  j["units"] = {{"emd_time_delta_h", "hours"},
                {"emd_hour_of_day", "percentage points x hour bins"},
                {"emd_day_of_week", "percentage points x day bins"},
                {"emd_sender_outdegree", "percentage points x sender rank"},
                {"emd_recipient_indegree", "percentage points x recipient-set rank"},
                {"emd_hyperedge_size", "recipients"},
                {"invalid_set_rate", "fraction of multi-cast emails"}};
  j["ground_metric"] =
      "categorical ids ordered by descending training frequency, unit bin spacing, linear hour axis; the "
      "recipient-set axis ends with one out-of-vocabulary bin";
  nlohmann::json summary = nlohmann::json::object();
  for (std::size_t k = 0; k <= kEmdKeys.size(); ++k) {
    const auto s = r.summary(k);
    const std::string key = k < kEmdKeys.size() ? kEmdKeys[k] : "invalid_set_rate";
    summary[key] = {{"mean", s.mean}, {"std", s.n >= 2 ? nlohmann::json(s.std) : nlohmann::json(nullptr)}};
  }
  j["summary"] = summary;
  nlohmann::json per_trial = nlohmann::json::array();
  for (const auto& t : r.trials) {
    nlohmann::json row{{"events", t.events}, {"invalid_set_rate", t.invalid_set_rate}};
    const auto v = as_array(t.emd);
    for (std::size_t k = 0; k < kEmdKeys.size(); ++k) row[kEmdKeys[k]] = v[k];
    per_trial.push_back(std::move(row));
  }
  j["per_trial"] = per_trial;
  if (r.prediction) j["prediction"] = to_json(*r.prediction);
  if (r.coherence) j["coherence"] = {{"pairs", r.coherence->pairs}, {"mean", r.coherence->mean}, {"min", r.coherence->min}};
  if (!r.qq.empty()) {
    nlohmann::json qq = nlohmann::json::array();
    for (const auto& p : r.qq) qq.push_back({p.reference, p.generated});
    j["qq"] = qq;
  }
  return j;
}

/// One row per model, one column per metric, cells "mean (std)".
inline void write_report_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "model,trials";
  for (const char* k : kEmdKeys) out << ',' << k;
  out << ",invalid_set_rate\n";
  for (const auto& r : reports) {
    out << r.model << ',' << r.trials.size();
    for (std::size_t k = 0; k <= kEmdKeys.size(); ++k) {
      const auto s = r.summary(k);
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4) << s.mean;
      if (s.n >= 2) cell << " (" << s.std << ')';
      out << ',' << cell.str();
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

namespace detail {

inline std::string svg_header(int w, int h, const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << title << "</text>\n";
  return s.str();
}

}  // namespace detail

/// Q-Q scatter in log-log axes with the diagonal for reference.
inline std::string svg_qq(const std::vector<QQPoint>& pts, const std::string& title = "Inter-arrival Q-Q (hours)") {
  const int w = 420, h = 420, m = 50;
  std::ostringstream s;
  s << detail::svg_header(w, h, title);
  if (pts.empty()) return s.str() + "</svg>\n";
  double lo = 1e300, hi = -1e300;
  for (const auto& p : pts)
    for (double v : {p.reference, p.generated}) {
      lo = std::min(lo, std::log10(std::max(v, 1e-6)));
      hi = std::max(hi, std::log10(std::max(v, 1e-6)));
    }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  auto px = [&](double v) { return m + (std::log10(std::max(v, 1e-6)) - lo) / (hi - lo) * (w - 2 * m); };
  auto py = [&](double v) { return h - m - (std::log10(std::max(v, 1e-6)) - lo) / (hi - lo) * (h - 2 * m); };
  s << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << m
    << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  for (const auto& p : pts)
    s << "<circle cx=\"" << px(p.reference) << "\" cy=\"" << py(p.generated) << "\" r=\"2.5\" fill=\"#1f77b4\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">reference quantile</text>\n"
    << "<text x=\"14\" y=\"" << h / 2 << "\" transform=\"rotate(-90 14 " << h / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">generated quantile</text>\n</svg>\n";
  return s.str();
}

/// Side-by-side proportion bars for two histograms over the same bins.
inline std::string svg_histograms(const std::vector<double>& generated, const std::vector<double>& reference,
                                  const std::string& title) {
  const int w = 640, h = 320, m = 40;
  auto norm = [](std::vector<double> v) {
    double t = 0.0;
    for (double x : v) t += x;
    if (t > 0.0)
      for (double& x : v) x /= t;
    return v;
  };
  const auto g = norm(generated), r = norm(reference);
  double top = 1e-12;
  for (double x : g) top = std::max(top, x);
  for (double x : r) top = std::max(top, x);
  const std::size_t n = std::max<std::size_t>(std::max(g.size(), r.size()), 1);
  const double bw = (w - 2.0 * m) / static_cast<double>(n);
  std::ostringstream s;
  s << detail::svg_header(w, h, title);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = m + bw * static_cast<double>(i);
    const double hr = i < r.size() ? r[i] / top * (h - 2 * m) : 0.0;
    const double hg = i < g.size() ? g[i] / top * (h - 2 * m) : 0.0;
    s << "<rect x=\"" << x << "\" y=\"" << h - m - hr << "\" width=\"" << bw * 0.45 << "\" height=\"" << hr
      << "\" fill=\"#aaaaaa\"/>\n";
    s << "<rect x=\"" << x + bw * 0.45 << "\" y=\"" << h - m - hg << "\" width=\"" << bw * 0.45 << "\" height=\""
      << hg << "\" fill=\"#1f77b4\"/>\n";
  }
  s << "<text x=\"" << m << "\" y=\"" << h - 12
    << "\" font-family=\"sans-serif\" font-size=\"12\">grey: reference, blue: generated</text>\n</svg>\n";
  return s.str();
}

}  // namespace dmn
