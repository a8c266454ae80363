#pragma once

// Deterministic synthetic datasets.
//
// E Corp: a small company where the CEO writes either to the chair alone or
// to the COO, CFO and CMO together, half the time each, and never to any
// other group. Every other employee has three fixed recipient groups with
// long-run shares 0.4/0.3/0.3. By default the group is drawn at random and the
// CEO sends a fifth of all email. With `predictable_recipients` the group is
// instead a function of who sent the previous email, which keeps the same
// group shares but makes the set learnable from history; that mode needs the
// CEO at 0.3 and everyone else at 0.1 for the splits to come out exact.
// Arrival rates depend on the time of week, and each sender has a topical
// vocabulary used to build an email corpus.
//
// Ground truth: inter-arrival times drawn from a known lognormal mixture,
// senders following a Markov chain, recipient sets drawn per sender.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dmn/corpus.hpp"
#include "dmn/event_data.hpp"
#include "dmn/model.hpp"
#include "dmn/rng.hpp"

namespace dmn::fixtures {

inline constexpr std::int64_t kMonday2023 = 1672617600;  // 2023-01-02 00:00 UTC

struct SenderSpec {
  std::string name;
  double share;  // of all email, random mode
  std::vector<LabelSet> groups;
  std::array<double, 3> comm_mix;  // new, reply, fwd
  std::vector<std::string> theme;
};

inline const std::vector<SenderSpec>& ecorp_senders() {
  static const std::vector<SenderSpec> specs{
      {"ceo", 0.20, {{"chair"}, {"cfo", "cmo", "coo"}}, {0.5, 0.4, 0.1},
       {"strategy", "board", "priorities", "vision", "growth"}},
      {"chair", 0.8 / 7, {{"ceo"}, {"cfo"}, {"cmo", "coo"}}, {0.5, 0.4, 0.1},
       {"governance", "agenda", "minutes", "board", "committee"}},
      {"coo", 0.8 / 7, {{"eng"}, {"ops", "sales"}, {"ceo"}}, {0.45, 0.35, 0.2},
       {"pipeline", "capacity", "update", "schedule", "operations"}},
      {"cfo", 0.8 / 7, {{"ceo"}, {"cmo", "sales"}, {"ops"}}, {0.5, 0.35, 0.15},
       {"budget", "forecast", "variance", "audit", "quarterly"}},
      {"cmo", 0.8 / 7, {{"sales"}, {"ceo", "eng"}, {"cfo"}}, {0.55, 0.3, 0.15},
       {"campaign", "brand", "launch", "audience", "metrics"}},
      {"eng", 0.8 / 7, {{"ops"}, {"coo", "sales"}, {"cmo"}}, {0.4, 0.45, 0.15},
       {"release", "build", "deployment", "testing", "backlog"}},
      {"ops", 0.8 / 7, {{"eng"}, {"cfo", "coo"}, {"sales"}}, {0.45, 0.4, 0.15},
       {"maintenance", "outage", "vendor", "inventory", "shipping"}},
      {"sales", 0.8 / 7, {{"cmo"}, {"eng", "ops"}, {"cfo"}}, {0.5, 0.35, 0.15},
       {"accounts", "quota", "renewal", "pricing", "prospects"}},
  };
  return specs;
}

/// Sender shares for the predictable mode.
inline const std::vector<double> kPredictableShares{0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};

/// Predictable mode: group index chosen by `sender` when `prev` sent the previous email (both
/// indices into ecorp_senders(); 0 is the CEO). Senders are drawn i.i.d. from
/// kPredictableShares, so the CEO's split is 0.3 + 0.1 + 0.1 = 0.5 and the others get
/// 0.4 / 0.3 / 0.3.
inline std::size_t ecorp_group(std::size_t sender, std::size_t prev) {
  if (sender == 0) return prev == 0 || prev == 1 || prev == 3 ? 0 : 1;  // ceo, chair, cfo -> chair
  if (prev == 0) return 0;
  const std::size_t r = (prev + 7 - sender) % 7;  // rotation over the seven others
  return r == 0 ? 0 : r <= 3 ? 1 : 2;
}

struct EcorpOptions {
  std::uint64_t seed = 7;
  int weeks = 20;
  std::int64_t start = kMonday2023;
  int tz_offset_minutes = 0;
  bool predictable_recipients = false;
};

struct Fixture {
  std::vector<RawEvent> events;
  std::vector<CorpusEmail> corpus;
};

namespace detail {

inline std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

inline std::string pick(Rng& rng, const std::vector<std::string>& v) { return v[rng.below(v.size())]; }

inline std::string fill(std::string tmpl, const std::string& a, const std::string& b) {
  const std::pair<std::string, std::string> subs[] = {{"{A}", capitalize(a)}, {"{a}", a}, {"{b}", b}};
  for (const auto& [key, val] : subs) {
    for (std::size_t pos; (pos = tmpl.find(key)) != std::string::npos;) tmpl.replace(pos, key.size(), val);
  }
  return tmpl;
}

inline std::string themed_subject(Rng& rng, const std::vector<std::string>& theme) {
  static const std::vector<std::string> t{"{A} {b} update", "Weekly {a} review", "{A} and {b} meeting",
                                          "{A} {b} report", "Notes on {a} {b}", "{A} plan for next week"};
  const std::string a = pick(rng, theme), b = pick(rng, theme);
  return fill(pick(rng, t), a, b);
}

inline std::string themed_body(Rng& rng, const std::vector<std::string>& theme, bool reply) {
  static const std::vector<std::string> opening{
      "Please review the {a} {b} numbers before the meeting.", "The {a} {b} looks on track for this week.",
      "Can we discuss the {a} plan and the {b} status tomorrow?", "I attached the latest {a} notes for the {b} team.",
      "Here is a short summary of the {a} {b} work."};
  static const std::vector<std::string> answer{
      "Thanks, the {a} {b} looks good to me.", "Agreed on the {a} plan, I will follow up on the {b}.",
      "I have a few questions about the {a} {b} numbers.", "Good progress on the {a}, the {b} still needs work."};
  static const std::vector<std::string> closing{
      "Let me know if the {a} {b} needs more work.", "We should align the {a} with the {b} timeline.",
      "The {b} team will send the {a} details on Friday.", "I will share the updated {a} {b} summary soon."};
  std::string out = fill(pick(rng, reply ? answer : opening), pick(rng, theme), pick(rng, theme));
  out += ' ';
  out += fill(pick(rng, closing), pick(rng, theme), pick(rng, theme));
  return out;
}

// Time-of-week dependent inter-arrival draw, hours.
inline double ecorp_tau(Rng& rng, MetadataClass m) {
  switch (m) {
    case MetadataClass::OfficeHours:
      return std::exp(std::log(0.25) + 0.7 * rng.normal());
    case MetadataClass::Shoulder:
      return std::exp(std::log(1.0) + 0.8 * rng.normal());
    case MetadataClass::NonWorking:
      break;
  }
  return std::exp(std::log(4.0) + 0.9 * rng.normal());
}

}  // namespace detail

inline const std::vector<std::string> kForwardLines{"FYI, see below.", "Forwarding for your awareness.",
                                                    "Please take a look at the thread below."};

inline Fixture ecorp_fixture(const EcorpOptions& opt = {}) {
  const auto& specs = ecorp_senders();
  Rng rng(opt.seed);
  std::vector<double> shares = kPredictableShares;
  if (!opt.predictable_recipients)
    std::ranges::transform(specs, shares.begin(), [](const SenderSpec& s) { return s.share; });

  struct OpenThread {
    std::int64_t id;
    std::set<std::string> participants;
    std::string subject;
    std::int64_t last;
  };
  std::vector<OpenThread> threads;
  std::int64_t next_thread = 0;

  Fixture fx;
  const std::int64_t end = opt.start + std::int64_t{opt.weeks} * 7 * kSecondsPerDay;
  double t = static_cast<double>(opt.start);
  std::int64_t last_ts = opt.start - 1;
  std::size_t prev_sender = 0;
  for (;;) {
    const auto meta = derive_metadata_class(static_cast<std::int64_t>(t), opt.tz_offset_minutes);
    t += 3600.0 * detail::ecorp_tau(rng, meta);
    auto ts = static_cast<std::int64_t>(t);
    if (ts >= end) break;
    ts = std::max(ts, last_ts + 1);  // distinct timestamps keep every row after de-duplication
    last_ts = ts;
    const std::size_t who = rng.categorical(shares);
    const auto& s = specs[who];
    static const std::vector<double> ceo_shares{0.5, 0.5}, other_shares{0.4, 0.3, 0.3};
    const std::size_t group = opt.predictable_recipients ? ecorp_group(who, prev_sender)
                                                         : rng.categorical(who == 0 ? ceo_shares : other_shares);
    const LabelSet& recips = s.groups[group];
    prev_sender = who;
    fx.events.push_back(RawEvent{ts, s.name, recips});

    std::set<std::string> parts(recips.begin(), recips.end());
    parts.insert(s.name);
    const auto want = static_cast<CommType>(rng.categorical(s.comm_mix));
    CorpusEmail e{ts, s.name, recips, 0, CommType::NewThread, {}, {}};
    OpenThread* target = nullptr;
    for (auto& th : threads) {
      if (ts - th.last > 7 * kSecondsPerDay) continue;
      const bool sub = th.participants.contains(s.name) && th.participants.size() < parts.size() &&
                       std::includes(parts.begin(), parts.end(), th.participants.begin(), th.participants.end());
      if ((want == CommType::Reply && th.participants == parts) || (want == CommType::Fwd && sub)) target = &th;
    }
    if (target && want == CommType::Reply) {
      e.type = CommType::Reply;
      e.thread_id = target->id;
      e.subject = "RE: " + target->subject;
      e.body = detail::themed_body(rng, s.theme, true);
    } else if (target && want == CommType::Fwd) {
      e.type = CommType::Fwd;
      e.thread_id = target->id;
      e.subject = "FW: " + target->subject;
      e.body = detail::pick(rng, kForwardLines);
      target->participants = parts;
    } else {
      e.thread_id = next_thread++;
      e.subject = detail::themed_subject(rng, s.theme);
      e.body = detail::themed_body(rng, s.theme, false);
      threads.push_back({e.thread_id, parts, e.subject, ts});
      target = &threads.back();
    }
    target->last = ts;
    fx.corpus.push_back(std::move(e));
  }
  return fx;
}

// ---------------------------------------------------------------------------
// Ground-truth mixture data
// ---------------------------------------------------------------------------

struct SyntheticTruth {
  // Mixture over log(tau in hours).
  std::vector<double> omega{0.6, 0.4};
  std::vector<double> mu{std::log(0.5), std::log(2.0)};
  std::vector<double> sigma{0.4, 0.5};
  std::vector<std::vector<double>> sender_transition{{0.1, 0.6, 0.3}, {0.5, 0.2, 0.3}, {0.4, 0.4, 0.2}};
  std::vector<std::vector<double>> set_given_sender{
      {0.7, 0.1, 0.1, 0.1}, {0.1, 0.6, 0.2, 0.1}, {0.1, 0.1, 0.2, 0.6}};

  MixtureParams mixture() const { return {omega, mu, sigma}; }
  double nll(double tau) const { return lognormal_mixture_nll(mixture(), tau, NormStats{}); }
  double mean() const { return mixture_mean(mixture(), NormStats{}); }
};

inline const std::vector<std::string> kSyntheticNodes{"s0", "s1", "s2", "x", "y", "z"};
inline const std::vector<LabelSet> kSyntheticSets{{"x"}, {"y"}, {"x", "y"}, {"x", "y", "z"}};

/// Sequences whose every tau, including the first of each sequence, is drawn
/// from the truth mixture. Sequences start two weeks apart.
inline Dataset synthetic_dataset(const SyntheticTruth& truth, std::uint64_t seed, std::size_t n_sequences = 60,
                                 std::size_t events_per_sequence = 150) {
  Rng rng(seed);
  Dataset ds;
  ds.config.split_seed = seed;
  for (const auto& l : kSyntheticNodes) {
    ds.nodes.index.emplace(l, ds.nodes.labels.size());
    ds.nodes.labels.push_back(l);
  }
  for (const auto& s : kSyntheticSets) {
    ds.sets.index.emplace(s, ds.sets.sets.size());
    ds.sets.sets.push_back(s);
  }
  ds.sets.counts.assign(kSyntheticSets.size(), 0);
  std::vector<Sequence> seqs;
  for (std::size_t q = 0; q < n_sequences; ++q) {
    double t = static_cast<double>(kMonday2023 + static_cast<std::int64_t>(q) * 14 * kSecondsPerDay);
    std::size_t sender = rng.below(3);
    Sequence seq;
    for (std::size_t i = 0; i < events_per_sequence; ++i) {
      const std::size_t z = rng.categorical(truth.omega);
      const double tau = std::exp(truth.mu[z] + truth.sigma[z] * rng.normal());
      t += 3600.0 * tau;
      if (i > 0) sender = rng.categorical(truth.sender_transition[sender]);
      const std::size_t set = rng.categorical(truth.set_given_sender[sender]);
      const auto ts = static_cast<std::int64_t>(std::floor(t));
      seq.push_back(Event{tau, sender, set, derive_metadata_class(ts, 0), ts});
      ds.filtered.push_back(RawEvent{ts, kSyntheticNodes[sender], kSyntheticSets[set]});
      ++ds.sets.counts[set];
    }
    seqs.push_back(std::move(seq));
  }
  ds.splits = split_sequences(std::move(seqs), Fractions{}, seed);
  ds.norm = compute_norm_stats(ds.splits.train);
  return ds;
}

}  // namespace dmn::fixtures
