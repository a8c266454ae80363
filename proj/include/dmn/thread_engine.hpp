#pragma once

// Turns sampled events into email threads. Each event becomes a new thread,
// a reply to an active thread with exactly the same participants, or a
// forward of an active thread whose participants it extends. Per-sender
// rolling proportions keep reply and forward rates near the training mix.

#include <algorithm>
#include <array>
#include <cstdint>
#include <ctime>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmn/corpus.hpp"
#include "dmn/errors.hpp"
#include "dmn/event_data.hpp"
#include "dmn/rng.hpp"
#include "dmn/sampling.hpp"
#include "dmn/text_provider.hpp"

namespace dmn {

struct ThreadEngineConfig {
  double window_days = 60.0;  // rolling proportion window
  double active_days = 7.0;   // how recent a thread must be to answer or forward
  double cap = 1.1;           // rolling fraction must stay below cap * training fraction
  int subject_tokens = 8;
  int body_tokens = 60;
  std::size_t context_emails = 3;  // prior thread texts passed to body generation

  void validate() const {
    if (!(window_days > 0.0)) throw ConfigError("thread window_days must be positive");
    if (!(active_days > 0.0)) throw ConfigError("thread active_days must be positive");
    if (!(cap > 0.0)) throw ConfigError("thread cap must be positive");
    if (subject_tokens < 1 || body_tokens < 1) throw ConfigError("token budgets must be positive");
  }
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open resource file '" + path + "'");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    out.push_back(line.substr(b, line.find_last_not_of(" \t\r") - b + 1));
  }
  if (out.empty()) throw ConfigError("resource file '" + path + "' is empty");
  return out;
}

struct CannedText {
  std::vector<std::string> greetings, salutations, forwards;

  static CannedText load(const std::string& dir) {
    return {read_lines(dir + "/greetings.txt"), read_lines(dir + "/salutations.txt"),
            read_lines(dir + "/forwards.txt")};
  }
};

/// Emitted (timestamp, type) pairs of one sender within the window.
class RollingWindow {
 public:
  void push(std::int64_t ts, CommType t) {
    entries_.emplace_back(ts, t);
    ++counts_[static_cast<std::size_t>(t)];
  }
  void prune(std::int64_t now, std::int64_t span_seconds) {
    while (!entries_.empty() && entries_.front().first < now - span_seconds) {
      --counts_[static_cast<std::size_t>(entries_.front().second)];
      entries_.pop_front();
    }
  }
  double fraction(CommType t) const {
    return entries_.empty() ? 0.0 : static_cast<double>(counts_[static_cast<std::size_t>(t)]) / entries_.size();
  }
  /// Fraction as it will be once entries older than `now - span` are pruned.
  double fraction_at(CommType t, std::int64_t now, std::int64_t span_seconds) const {
    std::size_t stale = 0, stale_t = 0;
    for (const auto& [ts, type] : entries_) {
      if (ts >= now - span_seconds) break;
      ++stale;
      stale_t += type == t;
    }
    const std::size_t n = entries_.size() - stale;
    return n == 0 ? 0.0 : static_cast<double>(counts_[static_cast<std::size_t>(t)] - stale_t) / n;
  }
  std::size_t size() const { return entries_.size(); }
  const std::deque<std::pair<std::int64_t, CommType>>& entries() const { return entries_; }

 private:
  std::deque<std::pair<std::int64_t, CommType>> entries_;
  std::array<std::size_t, 3> counts_{};
};

struct SenderProfile {
  std::array<double, 3> train{1.0, 0.0, 0.0};  // new, reply, fwd
  std::vector<std::pair<std::string, double>> keywords;
  RollingWindow window;
};

/// Training type mix and keywords for every node. Nodes without corpus text
/// get an all-new mix and no keywords.
inline std::vector<SenderProfile> build_profiles(const NodeVocabulary& nodes, const std::vector<CorpusEmail>& corpus,
                                                 std::size_t k = 10, KeywordMode mode = KeywordMode::TfIdf) {
  std::vector<SenderProfile> out(nodes.size());
  std::vector<std::array<double, 3>> counts(nodes.size(), {0.0, 0.0, 0.0});
  for (const auto& e : corpus)
    if (auto id = nodes.find(e.sender)) counts[*id][static_cast<std::size_t>(e.type)] += 1.0;
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    const double total = counts[s][0] + counts[s][1] + counts[s][2];
    if (total > 0.0)
      for (int t = 0; t < 3; ++t) out[s].train[t] = counts[s][t] / total;
  }
  if (!corpus.empty())
    for (auto& [sender, kp] : extract_keywords(corpus, k, mode))
      if (auto id = nodes.find(sender)) out[*id].keywords = std::move(kp.words);
  return out;
}

struct Thread {
  std::int64_t id = 0;
  std::string subject;                    // without RE:/FW: prefixes
  std::vector<std::size_t> participants;  // sorted node ids, senders and recipients
  std::vector<std::int64_t> emails;
  std::int64_t last_active = 0;
  std::vector<std::string> recent_text;  // newest last, bounded
  bool dormant = false;                  // text dropped after the rolling window
};

struct GeneratedEmail {
  std::int64_t email_id = 0;
  std::int64_t thread_id = 0;
  CommType type = CommType::NewThread;
  SampledEvent event;
  std::string subject, greeting, body, salutation;
  std::vector<std::int64_t> references;  // earlier emails of the thread, oldest first
};

inline std::vector<std::size_t> participants_of(const SampledEvent& ev) {
  std::vector<std::size_t> p = ev.recipients;
  p.push_back(ev.sender);
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  return p;
}

class ThreadEngine {
 public:
  ThreadEngine(const NodeVocabulary& nodes, std::vector<SenderProfile> profiles, CannedText canned,
               TextProvider& provider, ThreadEngineConfig cfg, std::uint64_t seed)
      : nodes_(&nodes), profiles_(std::move(profiles)), canned_(std::move(canned)), provider_(&provider),
        cfg_(cfg), rng_(seed) {
    cfg_.validate();
    if (profiles_.size() != nodes.size()) throw ConfigError("one sender profile per node is required");
    if (canned_.greetings.empty() || canned_.salutations.empty() || canned_.forwards.empty())
      throw ConfigError("canned greetings, salutations and forwards must be non-empty");
    for (const auto& p : profiles_)
      for (const auto& kw : p.keywords) fallback_keywords_.push_back(kw);
  }

  /// Active threads compatible with `participants` for the given type.
  std::vector<std::int64_t> compatible_threads(const std::vector<std::size_t>& participants, std::size_t sender,
                                               CommType type, std::int64_t now) const {
    std::vector<std::int64_t> out;
    const auto horizon = now - static_cast<std::int64_t>(cfg_.active_days * kSecondsPerDay);
    for (std::int64_t id : active_) {
      const Thread& t = threads_.at(id);
      if (t.last_active < horizon) continue;
      if (type == CommType::Reply && t.participants == participants) out.push_back(id);
      if (type == CommType::Fwd && t.participants.size() < participants.size() &&
          std::includes(participants.begin(), participants.end(), t.participants.begin(), t.participants.end()) &&
          std::binary_search(t.participants.begin(), t.participants.end(), sender))
        out.push_back(id);
    }
    return out;
  }

  /// The reply / forward / new cascade under the rolling caps.
  CommType select_comm_type(const SampledEvent& ev) const {
    const auto p = participants_of(ev);
    const SenderProfile& prof = profiles_.at(ev.sender);
    auto allowed = [&](CommType t) {
      const auto i = static_cast<std::size_t>(t);
      return prof.window.fraction_at(t, ev.timestamp, window_seconds()) < cfg_.cap * prof.train[i];
    };
    if (allowed(CommType::Reply) && !compatible_threads(p, ev.sender, CommType::Reply, ev.timestamp).empty())
      return CommType::Reply;
    if (allowed(CommType::Fwd) && !compatible_threads(p, ev.sender, CommType::Fwd, ev.timestamp).empty())
      return CommType::Fwd;
    return CommType::NewThread;
  }

  /// Uniform choice among compatible threads; nullopt means start a new one.
  std::optional<std::int64_t> select_target_thread(const SampledEvent& ev, CommType type) {
    if (type == CommType::NewThread) return std::nullopt;
    const auto c = compatible_threads(participants_of(ev), ev.sender, type, ev.timestamp);
    if (c.empty()) return std::nullopt;
    return c[rng_.below(c.size())];
  }

  GeneratedEmail process(const SampledEvent& ev) {
    if (ev.sender >= profiles_.size()) throw DataError("event sender outside the node vocabulary");
    if (ev.timestamp < last_ts_) throw DataError("events must arrive in timestamp order");
    last_ts_ = ev.timestamp;
    SenderProfile& prof = profiles_[ev.sender];
    prof.window.prune(ev.timestamp, window_seconds());
    retire(ev.timestamp);

    CommType type = select_comm_type(ev);
    const auto target = select_target_thread(ev, type);
    if (!target) type = CommType::NewThread;

    GeneratedEmail out;
    out.email_id = next_email_id_++;
    out.type = type;
    out.event = ev;
    const auto recips = label_list(ev.recipients);
    out.greeting = pick(canned_.greetings) + " " + recips + ",";
    out.salutation = pick(canned_.salutations) + "\n" + nodes_->labels.at(ev.sender);

    Thread* t = nullptr;
    if (type == CommType::NewThread) {
      Thread fresh;
      fresh.id = next_thread_id_++;
      fresh.subject = provider_->generate({GenKind::Subject, pick_keyword(prof), {}, cfg_.subject_tokens, rng_.bits()});
      t = &threads_.emplace(fresh.id, std::move(fresh)).first->second;
      out.subject = t->subject;
    } else {
      t = &threads_.at(*target);
      out.subject = (type == CommType::Reply ? "RE: " : "FW: ") + t->subject;
      out.references = t->emails;
    }
    out.thread_id = t->id;
    out.body = type == CommType::Fwd
                   ? pick(canned_.forwards)
                   : provider_->generate({GenKind::Body, t->subject, t->recent_text, cfg_.body_tokens, rng_.bits()});

    t->participants = participants_of(ev);
    t->emails.push_back(out.email_id);
    t->last_active = ev.timestamp;
    t->recent_text.push_back(out.body);
    if (t->recent_text.size() > cfg_.context_emails) t->recent_text.erase(t->recent_text.begin());
    t->dormant = false;
    if (std::find(active_.begin(), active_.end(), t->id) == active_.end()) active_.push_back(t->id);
    touched_.insert(t->id);
    prof.window.push(ev.timestamp, type);
    return out;
  }

  const std::map<std::int64_t, Thread>& threads() const { return threads_; }
  const SenderProfile& profile(std::size_t sender) const { return profiles_.at(sender); }
  const ThreadEngineConfig& config() const { return cfg_; }
  std::int64_t next_email_id() const { return next_email_id_; }

  /// Resume state: counters, RNG, thread store and rolling windows.
  nlohmann::json to_json() const {
    nlohmann::json threads = nlohmann::json::array();
    for (const auto& [id, t] : threads_)
      threads.push_back({{"id", t.id},
                         {"subject", t.subject},
                         {"participants", t.participants},
                         {"emails", t.emails},
                         {"last_active", t.last_active},
                         {"recent_text", t.recent_text},
                         {"dormant", t.dormant}});
    nlohmann::json windows = nlohmann::json::array();
    for (const auto& p : profiles_) {
      nlohmann::json w = nlohmann::json::array();
      for (const auto& [ts, type] : p.window.entries()) w.push_back({ts, static_cast<int>(type)});
      windows.push_back(std::move(w));
    }
    return {{"next_email_id", next_email_id_}, {"next_thread_id", next_thread_id_}, {"last_ts", last_ts_},
            {"rng", rng_.save()},              {"threads", threads},                {"windows", windows}};
  }

  void restore(const nlohmann::json& j) {
    try {
      const auto& windows = j.at("windows");
      if (windows.size() != profiles_.size()) throw DataError("resume state was written for a different vocabulary");
      next_email_id_ = j.at("next_email_id").get<std::int64_t>();
      next_thread_id_ = j.at("next_thread_id").get<std::int64_t>();
      last_ts_ = j.at("last_ts").get<std::int64_t>();
      rng_.load(j.at("rng").get<std::string>());
      threads_.clear();
      active_.clear();
      touched_.clear();
      for (const auto& tj : j.at("threads")) {
        Thread t;
        t.id = tj.at("id").get<std::int64_t>();
        t.subject = tj.at("subject").get<std::string>();
        t.participants = tj.at("participants").get<std::vector<std::size_t>>();
        t.emails = tj.at("emails").get<std::vector<std::int64_t>>();
        t.last_active = tj.at("last_active").get<std::int64_t>();
        t.recent_text = tj.at("recent_text").get<std::vector<std::string>>();
        t.dormant = tj.at("dormant").get<bool>();
        if (!t.dormant) active_.push_back(t.id);
        threads_.emplace(t.id, std::move(t));
      }
      for (std::size_t s = 0; s < profiles_.size(); ++s) {
        profiles_[s].window = RollingWindow{};
        for (const auto& e : windows[s])
          profiles_[s].window.push(e.at(0).get<std::int64_t>(), static_cast<CommType>(e.at(1).get<int>()));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed resume state: ") + e.what());
    }
  }

 private:
  std::int64_t window_seconds() const { return static_cast<std::int64_t>(cfg_.window_days * kSecondsPerDay); }

  const std::string& pick(const std::vector<std::string>& v) { return v[rng_.below(v.size())]; }

  std::string pick_keyword(const SenderProfile& p) {
    const auto& kws = p.keywords.empty() ? fallback_keywords_ : p.keywords;
    if (kws.empty()) throw DataError("no topic keywords available for subject generation");
    std::vector<double> w;
    for (const auto& [_, score] : kws) w.push_back(std::max(score, 1e-12));
    return kws[rng_.categorical(w)].first;
  }

  std::string label_list(const std::vector<std::size_t>& ids) const {
    std::string s;
    for (std::size_t id : ids) {
      if (!s.empty()) s += ", ";
      s += nodes_->labels.at(id);
    }
    return s;
  }

  // Threads idle beyond the active horizon leave the candidate list; beyond
  // the rolling window they drop their cached text. Threads from a resumed
  // run that this run never touched are forgotten entirely.
  void retire(std::int64_t now) {
    const auto active_horizon = now - static_cast<std::int64_t>(cfg_.active_days * kSecondsPerDay);
    std::erase_if(active_, [&](std::int64_t id) { return threads_.at(id).last_active < active_horizon; });
    if (++since_sweep_ < 256) return;
    since_sweep_ = 0;
    const auto window_horizon = now - static_cast<std::int64_t>(cfg_.window_days * kSecondsPerDay);
    for (auto it = threads_.begin(); it != threads_.end();) {
      Thread& t = it->second;
      if (t.last_active >= window_horizon) {
        ++it;
        continue;
      }
      if (!touched_.contains(t.id)) {
        it = threads_.erase(it);
        continue;
      }
      t.dormant = true;
      t.recent_text.clear();
      t.recent_text.shrink_to_fit();
      ++it;
    }
  }

  const NodeVocabulary* nodes_;
  std::vector<SenderProfile> profiles_;
  CannedText canned_;
  TextProvider* provider_;
  ThreadEngineConfig cfg_;
  Rng rng_;
  std::vector<std::pair<std::string, double>> fallback_keywords_;
  std::map<std::int64_t, Thread> threads_;
  std::vector<std::int64_t> active_;
  std::set<std::int64_t> touched_;
  std::int64_t next_email_id_ = 1, next_thread_id_ = 1;
  std::int64_t last_ts_ = std::numeric_limits<std::int64_t>::min();
  int since_sweep_ = 0;
};

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline nlohmann::json email_json(const NodeVocabulary& nodes, const GeneratedEmail& e) {
  std::vector<std::string> recips;
  for (std::size_t id : e.event.recipients) recips.push_back(nodes.labels.at(id));
  nlohmann::json j{{"email_id", e.email_id},
                   {"thread_id", e.thread_id},
                   {"type", std::string(comm_type_name(e.type))},
                   {"ts", e.event.timestamp},
                   {"tau_h", e.event.tau},
                   {"sender", nodes.labels.at(e.event.sender)},
                   {"recipients", recips},
                   {"meta", std::string(metadata_name(e.event.meta))},
                   {"subject", e.subject},
                   {"greeting", e.greeting},
                   {"body", e.body},
                   {"salutation", e.salutation},
                   {"references", e.references}};
  j["in_reply_to"] = e.references.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.references.back());
  return j;
}

inline std::string rfc822_date(std::int64_t ts) {
  const auto t = static_cast<std::time_t>(ts);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, "%a, %d %b %Y %H:%M:%S +0000", &tm);
  return buf;
}

inline std::string message_id(std::int64_t email_id, const std::string& domain) {
  return "<" + std::to_string(email_id) + "@" + domain + ">";
}

/// mbox flat file with RFC-822 style headers; thread links become
/// In-Reply-To and References.
inline void write_mbox_entry(std::ostream& out, const NodeVocabulary& nodes, const GeneratedEmail& e,
                             const std::string& domain = "dmn.example") {
  const auto addr = [&](std::size_t id) { return nodes.labels.at(id) + "@" + domain; };
  const auto t = static_cast<std::time_t>(e.event.timestamp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char ctime_buf[64];
  std::strftime(ctime_buf, sizeof ctime_buf, "%a %b %e %H:%M:%S %Y", &tm);
  out << "From " << addr(e.event.sender) << ' ' << ctime_buf << '\n';
  out << "Message-ID: " << message_id(e.email_id, domain) << '\n';
  if (!e.references.empty()) {
    out << "In-Reply-To: " << message_id(e.references.back(), domain) << '\n';
    out << "References:";
    for (auto r : e.references) out << ' ' << message_id(r, domain);
    out << '\n';
  }
  out << "Date: " << rfc822_date(e.event.timestamp) << '\n';
  out << "From: " << addr(e.event.sender) << '\n';
  out << "To: ";
  for (std::size_t i = 0; i < e.event.recipients.size(); ++i) out << (i ? ", " : "") << addr(e.event.recipients[i]);
  out << '\n';
  out << "Subject: " << e.subject << '\n';
  out << "X-Thread-ID: " << e.thread_id << '\n';
  out << '\n';
  std::istringstream text(e.greeting + "\n\n" + e.body + "\n\n" + e.salutation);
  for (std::string line; std::getline(text, line);) out << (line.starts_with("From ") ? ">" : "") << line << '\n';
  out << '\n';
}

}  // namespace dmn
