#pragma once

// Autoregressive generation from a trained bundle. Each step draws tau from
// the temporal head, then a sender, then a recipient set conditioned on the
// sampled sender, and feeds the new event back through the encoder.
//
// The temporal head needs the metadata class of an arrival time that is not
// known yet. We resolve this with one fixed-point step: the class of the
// previous timestamp gives a provisional mixture, its median gives a tentative
// arrival time, and the class of that tentative time conditions the real draw.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmn/checkpoint.hpp"
#include "dmn/errors.hpp"
#include "dmn/model.hpp"
#include "dmn/parallel.hpp"
#include "dmn/rng.hpp"

namespace dmn {

enum class GenMode { Batch, Realtime };

struct GenConfig {
  std::uint64_t seed = 0;
  std::int64_t start_time = 0;                 // UTC epoch seconds
  std::optional<std::size_t> max_events;       // horizon: event count
  std::optional<std::int64_t> end_time;        // horizon: end time (exclusive)
  GenMode mode = GenMode::Batch;
  double time_scale = 1.0;                     // realtime: simulated seconds per wall second
  Sequence prefix;                             // optional history fed to the encoder first

  void validate() const {
    if (max_events.has_value() == end_time.has_value())
      throw ConfigError("generation horizon: set exactly one of max_events or end_time");
    if (end_time && *end_time < start_time) throw ConfigError("generation end_time is before start_time");
    if (!(time_scale > 0.0)) throw ConfigError("generation time_scale must be > 0");
  }
};

inline constexpr std::size_t kNoSet = std::numeric_limits<std::size_t>::max();

struct SampledEvent {
  std::int64_t timestamp = 0;  // floor of the exact time
  double time = 0.0;           // exact simulated time, epoch seconds
  double tau = 0.0;            // hours
  std::size_t sender = 0;
  std::size_t recipient_set = kNoSet;    // kNoSet when a per-node draw is outside the vocabulary
  std::vector<std::size_t> recipients;   // sorted participant ids
  MetadataClass meta = MetadataClass::OfficeHours;
  bool forced_fallback = false;
};

// ---- primitive draws ----

inline double sample_tau(const MixtureParams& p, const NormStats& norm, Rng& rng) {
  const std::size_t z = rng.categorical(p.omega);
  const double eps = rng.normal();
  return norm.denormalize(p.sigma[z] * eps + p.mu[z]);
}

inline std::vector<double> softmax_probs(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& v : p) s += (v = std::exp(v - mx));
  for (double& v : p) v /= s;
  return p;
}

inline std::size_t sample_sender(std::span<const double> logits, Rng& rng) {
  return rng.categorical(softmax_probs(logits));
}

struct RecipientDraw {
  std::size_t set_id = kNoSet;
  std::vector<std::size_t> members;
  bool forced_fallback = false;
};

inline constexpr int kEmptySetRetries = 10;

/// MultiClass: one categorical draw over vocabulary sets. BinaryPerNode: an
/// independent Bernoulli per node (never the sender); an empty draw is retried
/// up to 10 times, then replaced by the sender's most frequent training set.
inline RecipientDraw sample_recipient_set(const ModelBundle& b, std::span<const double> logits, std::size_t sender,
                                          Rng& rng) {
  RecipientDraw d;
  if (b.net.config().recipient_mode == RecipientMode::MultiClass) {
    // Sets that include the sender are masked out: a sender never writes to itself.
    std::vector<double> p = softmax_probs(logits);
    double mass = 0.0;
    for (std::size_t id = 0; id < p.size(); ++id) {
      const auto& m = b.members(id);
      if (std::binary_search(m.begin(), m.end(), sender)) p[id] = 0.0;
      mass += p[id];
    }
    if (mass > 0.0) {
      d.set_id = rng.categorical(p);
    } else {
      d.set_id = b.sender_top_set.at(sender);
      d.forced_fallback = true;
    }
    d.members = b.members(d.set_id);
    return d;
  }
  for (int attempt = 0; attempt <= kEmptySetRetries && d.members.empty(); ++attempt) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const bool on = rng.uniform() < ad::detail::stable_sigmoid(logits[i]);
      if (on && i != sender) d.members.push_back(i);
    }
  }
  if (d.members.empty()) {
    d.set_id = b.sender_top_set.at(sender);
    d.members = b.members(d.set_id);
    d.forced_fallback = true;
    return d;
  }
  auto it = b.set_by_members.find(d.members);
  if (it != b.set_by_members.end()) d.set_id = it->second;
  return d;
}

/// Vocabulary set with the highest Jaccard similarity to `members` (lowest id
/// on ties). Used to feed out-of-vocabulary per-node draws to the encoder.
inline std::size_t nearest_set(const ModelBundle& b, const std::vector<std::size_t>& members) {
  std::size_t best = 0;
  double best_j = -1.0;
  for (std::size_t id = 0; id < b.sets.size(); ++id) {
    const auto& m = b.members(id);
    std::size_t inter = 0;
    for (std::size_t i = 0, j = 0; i < m.size() && j < members.size();) {
      if (m[i] == members[j]) ++inter, ++i, ++j;
      else if (m[i] < members[j]) ++i;
      else ++j;
    }
    const double jac = static_cast<double>(inter) / static_cast<double>(m.size() + members.size() - inter);
    if (jac > best_j) best = id, best_j = jac;
  }
  return best;
}

// ---- streaming sampler ----

/// Resumable generator state.
struct SamplerState {
  std::vector<double> h;
  double time = 0.0;
  std::string rng;
  std::size_t emitted = 0;
  std::size_t forced_fallbacks = 0;
  std::size_t out_of_vocab = 0;

  nlohmann::json to_json() const {
    return {{"h", h}, {"time", time}, {"rng", rng}, {"emitted", emitted}, {"forced_fallbacks", forced_fallbacks},
            {"out_of_vocab", out_of_vocab}};
  }
  static SamplerState from_json(const nlohmann::json& j) {
    SamplerState s;
    s.h = j.at("h").get<std::vector<double>>();
    s.time = j.at("time").get<double>();
    s.rng = j.at("rng").get<std::string>();
    s.emitted = j.at("emitted").get<std::size_t>();
    s.forced_fallbacks = j.at("forced_fallbacks").get<std::size_t>();
    s.out_of_vocab = j.at("out_of_vocab").get<std::size_t>();
    return s;
  }
};

class StreamSampler {
 public:
  StreamSampler(const ModelBundle& bundle, std::uint64_t seed, std::int64_t start_time, const Sequence& prefix = {})
      : b_(&bundle), rng_(seed), state_(bundle.net.initial_state()), time_(static_cast<double>(start_time)) {
    for (const Event& ev : prefix) state_ = b_->net.encode_step(state_, ev, b_->norm);
  }

  /// Draws the next event and advances the state.
  SampledEvent next() {
    const auto& net = b_->net;
    const int tz = b_->tz_offset_minutes;
    const auto prev_ts = static_cast<std::int64_t>(std::floor(time_));
    const MetadataClass meta0 = derive_metadata_class(prev_ts, tz);
    MixtureParams mix = net.temporal_head(state_, meta0);
    const double tentative = time_ + 3600.0 * mixture_median(mix, b_->norm);
    const MetadataClass meta1 = derive_metadata_class(static_cast<std::int64_t>(std::floor(tentative)), tz);
    if (meta1 != meta0) mix = net.temporal_head(state_, meta1);

    SampledEvent ev;
    ev.tau = std::max(sample_tau(mix, b_->norm, rng_), kMinTauHours);
    time_ += 3600.0 * ev.tau;
    ev.time = time_;
    ev.timestamp = static_cast<std::int64_t>(std::floor(time_));
    ev.meta = derive_metadata_class(ev.timestamp, tz);
    ev.sender = sample_sender(net.sender_logits(state_), rng_);
    RecipientDraw d = sample_recipient_set(*b_, net.recipient_logits(state_, ev.sender), ev.sender, rng_);
    ev.recipient_set = d.set_id;
    ev.recipients = std::move(d.members);
    ev.forced_fallback = d.forced_fallback;
    if (ev.forced_fallback) ++fallbacks_;
    if (ev.recipient_set == kNoSet) ++oov_;

    const std::size_t feed_set = ev.recipient_set == kNoSet ? nearest_set(*b_, ev.recipients) : ev.recipient_set;
    state_ = net.encode_step(state_, Event{ev.tau, ev.sender, feed_set, ev.meta, ev.timestamp}, b_->norm);
    ++emitted_;
    return ev;
  }

  double time() const { return time_; }
  std::size_t emitted() const { return emitted_; }
  std::size_t forced_fallbacks() const { return fallbacks_; }
  std::size_t out_of_vocab() const { return oov_; }

  SamplerState snapshot() const { return {state_.h, time_, rng_.save(), emitted_, fallbacks_, oov_}; }

  void restore(const SamplerState& s) {
    if (s.h.size() != state_.h.size()) throw DataError("sampler state width does not match the model");
    state_.h = s.h;
    time_ = s.time;
    rng_.load(s.rng);
    emitted_ = s.emitted;
    fallbacks_ = s.forced_fallbacks;
    oov_ = s.out_of_vocab;
  }

 private:
  const ModelBundle* b_;
  Rng rng_;
  HistoryState state_;
  double time_;
  std::size_t emitted_ = 0, fallbacks_ = 0, oov_ = 0;
};

struct StreamResult {
  std::vector<SampledEvent> events;
  std::size_t forced_fallbacks = 0;
  std::size_t out_of_vocab = 0;
};

/// Batch generation up to the configured horizon.
inline StreamResult generate_stream(const ModelBundle& b, const GenConfig& cfg) {
  cfg.validate();
  StreamSampler s(b, cfg.seed, cfg.start_time, cfg.prefix);
  StreamResult out;
  if (cfg.max_events) {
    out.events.reserve(*cfg.max_events);
    while (out.events.size() < *cfg.max_events) out.events.push_back(s.next());
  } else {
    for (;;) {
      SampledEvent ev = s.next();
      if (ev.timestamp >= *cfg.end_time) break;
      out.events.push_back(std::move(ev));
    }
  }
  out.forced_fallbacks = s.forced_fallbacks();
  out.out_of_vocab = s.out_of_vocab();
  return out;
}

/// Independent trials in parallel. Trial i uses the stream split(seed, i), so
/// every trial is reproducible on its own regardless of thread count.
inline std::vector<StreamResult> generate_trials(const ModelBundle& b, const GenConfig& cfg, std::size_t trials,
                                                 std::size_t threads = 0) {
  cfg.validate();
  std::vector<StreamResult> out(trials);
  parallel_for(trials, threads, [&](std::size_t i) {
    GenConfig c = cfg;
    c.seed = Rng::split(cfg.seed, i).bits();
    out[i] = generate_stream(b, c);
  });
  return out;
}

inline nlohmann::json event_json(const ModelBundle& b, const SampledEvent& ev) {
  std::vector<std::string> recips;
  for (std::size_t id : ev.recipients) recips.push_back(b.nodes.labels.at(id));
  return {{"ts", ev.timestamp},
          {"tau_h", ev.tau},
          {"sender", b.nodes.labels.at(ev.sender)},
          {"recipients", recips},
          {"meta", std::string(metadata_name(ev.meta))}};
}

inline void write_events_jsonl(std::ostream& out, const ModelBundle& b, const std::vector<SampledEvent>& events) {
  for (const auto& ev : events) out << event_json(b, ev).dump() << '\n';
}

/// Reads a generated JSONL stream back as raw events (labels only).
inline std::vector<RawEvent> read_events_jsonl(std::istream& in) {
  std::vector<RawEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RawEvent ev;
      ev.timestamp = j.at("ts").get<std::int64_t>();
      ev.sender = j.at("sender").get<std::string>();
      ev.recipients = j.at("recipients").get<std::vector<std::string>>();
      std::sort(ev.recipients.begin(), ev.recipients.end());
      out.push_back(std::move(ev));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("generated stream line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dmn
