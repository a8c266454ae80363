#pragma once

// Staged training. Stage 1 trains every group and stops on dev time RMSE.
// Stage 2 freezes the temporal and encoder groups and stops on the dev
// sender + recipient NLL. Stage 3 (optional) also freezes the sender head and
// stops on the dev recipient NLL. Each stage ends on its best dev epoch.

#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "dmn/autodiff.hpp"
#include "dmn/errors.hpp"
#include "dmn/metrics.hpp"
#include "dmn/model.hpp"
#include "dmn/rng.hpp"

namespace dmn {

enum class PointEstimate { Median, Mean };

inline PointEstimate parse_point_estimate(std::string_view s) {
  if (s == "median") return PointEstimate::Median;
  if (s == "mean") return PointEstimate::Mean;
  throw ConfigError("unknown point estimate '" + std::string(s) + "'");
}

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 4;  // sequences per optimizer step
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  double min_improvement = 1e-3;
  bool stage3_enabled = false;
  std::uint64_t seed = 0;
  PointEstimate point = PointEstimate::Median;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
  }
};

/// Per-event averages over one split.
struct ValidationMetrics {
  double nll_tau = 0.0, nll_sender = 0.0, nll_recipient = 0.0;
  double rmse_h = 0.0, mae_h = 0.0;
  double sender_top1 = 0.0, sender_top3 = 0.0;
  double recipient_top1 = 0.0, recipient_top3 = 0.0;
  std::size_t events = 0;

  double nll_total() const { return nll_tau + nll_sender + nll_recipient; }
};

/// Up to `k` most probable recipient node sets under independent per-node
/// Bernoullis, most probable first. The sender is never its own recipient.
/// The best set thresholds every node at 0.5; each further set flips one of
/// the least confident nodes, which is exact for k <= 3.
inline std::vector<std::vector<std::size_t>> bc_top_sets(std::span<const double> logits, std::size_t sender,
                                                         std::size_t k) {
  std::vector<std::size_t> nodes;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != sender) nodes.push_back(i);
  std::vector<double> conf;
  for (std::size_t i : nodes) conf.push_back(-std::abs(logits[i]));
  const auto order = rank_descending(conf);  // least confident first
  auto make = [&](std::ptrdiff_t flip) {
    std::vector<std::size_t> s;
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      bool on = logits[nodes[j]] > 0.0;
      if (flip >= 0 && static_cast<std::size_t>(flip) == j) on = !on;
      if (on) s.push_back(nodes[j]);
    }
    return s;
  };
  std::vector<std::vector<std::size_t>> out{make(-1)};
  for (std::size_t f = 0; f + 1 < k && f < order.size(); ++f) out.push_back(make(static_cast<std::ptrdiff_t>(order[f])));
  return out;
}

inline ValidationMetrics evaluate_validation(const LogNormMixNet& net, const std::vector<Sequence>& split,
                                             const NormStats& norm, PointEstimate point = PointEstimate::Median) {
  ValidationMetrics m;
  double se = 0.0, ae = 0.0;
  std::size_t s1 = 0, s3 = 0, r1 = 0, r3 = 0;
  const bool bc = net.config().recipient_mode == RecipientMode::BinaryPerNode;
  for (const auto& seq : split) {
    if (seq.empty()) continue;
    std::vector<EventPrediction> preds;
    preds.reserve(seq.size());
    const NllValues v = net.batch_nll(seq, norm, &preds);
    m.nll_tau += v.tau;
    m.nll_sender += v.sender;
    m.nll_recipient += v.recipient;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& p = preds[i];
      const double est = point == PointEstimate::Median ? mixture_median(p.mixture, norm) : mixture_mean(p.mixture, norm);
      se += (est - seq[i].tau) * (est - seq[i].tau);
      ae += std::abs(est - seq[i].tau);
      const auto sr = rank_descending(p.sender_logits);
      if (sr[0] == seq[i].sender) ++s1;
      if (std::find(sr.begin(), sr.begin() + std::min<std::ptrdiff_t>(3, std::ssize(sr)), seq[i].sender) !=
          sr.begin() + std::min<std::ptrdiff_t>(3, std::ssize(sr)))
        ++s3;
      if (bc) {
        const auto top = bc_top_sets(p.recipient_logits, seq[i].sender, 3);
        const auto& truth = net.recipient_members().at(seq[i].recipient_set);
        if (top[0] == truth) ++r1;
        if (std::find(top.begin(), top.end(), truth) != top.end()) ++r3;
      } else {
        const auto rr = rank_descending(p.recipient_logits);
        const auto end = rr.begin() + std::min<std::ptrdiff_t>(3, std::ssize(rr));
        if (rr[0] == seq[i].recipient_set) ++r1;
        if (std::find(rr.begin(), end, seq[i].recipient_set) != end) ++r3;
      }
    }
    m.events += seq.size();
  }
  if (m.events == 0) return m;
  const double n = static_cast<double>(m.events);
  m.nll_tau /= n;
  m.nll_sender /= n;
  m.nll_recipient /= n;
  m.rmse_h = std::sqrt(se / n);
  m.mae_h = ae / n;
  m.sender_top1 = static_cast<double>(s1) / n;
  m.sender_top3 = static_cast<double>(s3) / n;
  m.recipient_top1 = static_cast<double>(r1) / n;
  m.recipient_top3 = static_cast<double>(r3) / n;
  return m;
}

struct EpochRecord {
  int stage = 1;
  std::size_t epoch = 0;  // 0 = before the first update of the stage
  double train_nll_tau = 0.0, train_nll_sender = 0.0, train_nll_recipient = 0.0;
  ValidationMetrics dev;
  double criterion = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> records;

  void write_csv(std::ostream& out) const {
    out << "stage,epoch,train_nll_tau,train_nll_sender,train_nll_recipient,dev_nll_tau,dev_nll_sender,"
           "dev_nll_recipient,dev_rmse_h,dev_mae_h,dev_sender_top1,dev_sender_top3,dev_recipient_top1,"
           "dev_recipient_top3,criterion\n";
    const auto old = out.precision(10);
    for (const auto& r : records) {
      out << r.stage << ',' << r.epoch << ',' << r.train_nll_tau << ',' << r.train_nll_sender << ','
          << r.train_nll_recipient << ',' << r.dev.nll_tau << ',' << r.dev.nll_sender << ',' << r.dev.nll_recipient
          << ',' << r.dev.rmse_h << ',' << r.dev.mae_h << ',' << r.dev.sender_top1 << ',' << r.dev.sender_top3 << ','
          << r.dev.recipient_top1 << ',' << r.dev.recipient_top3 << ',' << r.criterion << '\n';
    }
    out.precision(old);
  }

  /// Smallest criterion logged for a stage.
  double best(int stage) const {
    double b = std::numeric_limits<double>::infinity();
    for (const auto& r : records)
      if (r.stage == stage) b = std::min(b, r.criterion);
    return b;
  }
};

/// Called after each stage with the restored best weights.
using StageCallback = std::function<void(int stage, const LogNormMixNet&)>;
/// Called after every epoch record is appended.
using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline std::vector<std::vector<double>> snapshot(const LogNormMixNet& net) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : net.params().named()) out.push_back(t->data);
  return out;
}

inline void restore(LogNormMixNet& net, const std::vector<std::vector<double>>& snap) {
  std::size_t i = 0;
  for (auto& [name, t] : net.params().named()) t->data = snap[i++];
}

inline double stage_criterion(int stage, const ValidationMetrics& m) {
  switch (stage) {
    case 1:
      return m.rmse_h;
    case 2:
      return m.nll_sender + m.nll_recipient;
    default:
      return m.nll_recipient;
  }
}

}  // namespace detail

/// Runs one stage in place. Returns the best criterion value.
inline double train_stage(LogNormMixNet& net, int stage, const Splits& splits, const NormStats& norm,
                          const TrainConfig& cfg, TrainLog& log, const EpochCallback& on_epoch = {}) {
  net.unfreeze_all();
  if (stage >= 2) {
    net.set_frozen(GroupId::Temporal, true);
    net.set_frozen(GroupId::Encoder, true);
  }
  if (stage >= 3) net.set_frozen(GroupId::Sender, true);

  auto groups = net.groups();
  std::vector<ad::ParamGroup*> gptr;
  for (auto& g : groups) gptr.push_back(&g);
  ad::Adam adam(ad::AdamConfig{.lr = cfg.lr});

  auto record = [&](std::size_t epoch, double tt, double ts, double tr) {
    EpochRecord r;
    r.stage = stage;
    r.epoch = epoch;
    r.train_nll_tau = tt;
    r.train_nll_sender = ts;
    r.train_nll_recipient = tr;
    r.dev = evaluate_validation(net, splits.dev, norm, cfg.point);
    r.criterion = detail::stage_criterion(stage, r.dev);
    if (!std::isfinite(r.criterion)) r.criterion = std::numeric_limits<double>::infinity();
    log.records.push_back(r);
    if (on_epoch) on_epoch(r);
    return r.criterion;
  };

  double best = record(0, NAN, NAN, NAN);
  double reference = best;  // level of the last significant improvement
  auto best_weights = detail::snapshot(net);
  std::size_t stale = 0;

  std::vector<std::size_t> order(splits.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::split(cfg.seed, static_cast<std::uint64_t>(stage));

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double sum_t = 0.0, sum_s = 0.0, sum_r = 0.0;
    std::size_t n_events = 0;
    try {
      for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
        const std::size_t e = std::min(order.size(), b + cfg.batch);
        net.zero_grad();
        std::size_t batch_events = 0;
        for (std::size_t k = b; k < e; ++k) batch_events += splits.train[order[k]].size();
        if (batch_events == 0) continue;
        const double inv = 1.0 / static_cast<double>(batch_events);
        for (std::size_t k = b; k < e; ++k) {
          const Sequence& seq = splits.train[order[k]];
          if (seq.empty()) continue;
          ad::Tape tape;
          const NllTerms t = net.batch_nll(tape, seq, norm);
          const double lt = t.tau.item(), ls = t.sender.item(), lr = t.recipient.item();
          if (!std::isfinite(lt) || !std::isfinite(ls) || !std::isfinite(lr))
            throw DivergenceError("non-finite training loss in stage " + std::to_string(stage));
          sum_t += lt;
          sum_s += ls;
          sum_r += lr;
          ad::Var objective = stage == 1   ? t.total
                              : stage == 2 ? ad::add(t.sender, t.recipient)
                                           : t.recipient;
          tape.backward(ad::scale(objective, inv));
        }
        n_events += batch_events;
        adam.step(gptr);
      }
    } catch (const DivergenceError& e) {
      detail::restore(net, best_weights);
      net.unfreeze_all();
      throw DivergenceError(std::string(e.what()) + " (weights restored to the best dev epoch of stage " +
                            std::to_string(stage) + ")");
    }
    const double n = static_cast<double>(std::max<std::size_t>(n_events, 1));
    const double c = record(epoch, sum_t / n, sum_s / n, sum_r / n);
    if (c < best) {
      best = c;
      best_weights = detail::snapshot(net);
    }
    if (c < reference - cfg.min_improvement) {
      reference = c;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  detail::restore(net, best_weights);
  net.unfreeze_all();
  return best;
}

inline TrainLog staged_train(LogNormMixNet& net, const Splits& splits, const NormStats& norm, const TrainConfig& cfg,
                             const StageCallback& on_stage = {}, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (splits.train.empty() || splits.dev.empty()) throw DataError("training needs non-empty train and dev splits");
  TrainLog log;
  const int stages = cfg.stage3_enabled ? 3 : 2;
  for (int s = 1; s <= stages; ++s) {
    train_stage(net, s, splits, norm, cfg, log, on_epoch);
    if (on_stage) on_stage(s, net);
  }
  return log;
}

}  // namespace dmn
