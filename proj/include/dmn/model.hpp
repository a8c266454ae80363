#pragma once

// LogNormMix-Net: a GRU history encoder feeding three heads.
//
//   temporal head   concat(h, metadata embedding) -> lognormal mixture (w, mu, sigma)
//   sender head     h -> tanh layer -> sender logits
//   recipient head  concat(h, sender embedding) -> recipient-set logits (MultiClass)
//                                               or per-node logits (BinaryPerNode)
//
// Mixture parameters live in normalized log-time: y = (log tau - mean) / std.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "dmn/autodiff.hpp"
#include "dmn/event_data.hpp"
#include "dmn/rng.hpp"

namespace dmn {

enum class RecipientMode { MultiClass, BinaryPerNode };

inline std::string_view recipient_mode_name(RecipientMode m) {
  return m == RecipientMode::MultiClass ? "multiclass" : "binary";
}

inline RecipientMode parse_recipient_mode(std::string_view s) {
  if (s == "multiclass") return RecipientMode::MultiClass;
  if (s == "binary" || s == "bc") return RecipientMode::BinaryPerNode;
  throw ConfigError("unknown recipient mode '" + std::string(s) + "'");
}

struct ModelConfig {
  std::size_t n_senders = 1;         // participants (sender head width, per-node BC width)
  std::size_t n_recipient_sets = 1;  // vocabulary size R
  std::size_t K = 16;
  std::size_t d_embed = 32;
  std::size_t d_hidden = 64;
  RecipientMode recipient_mode = RecipientMode::MultiClass;

  void validate() const {
    if (K < 1 || d_embed < 1 || d_hidden < 1 || n_senders < 1 || n_recipient_sets < 1)
      throw ConfigError("model config: K, widths and vocabulary sizes must be >= 1");
  }
  std::size_t input_width() const { return 1 + 3 * d_embed; }
  std::size_t recipient_outputs() const {
    return recipient_mode == RecipientMode::MultiClass ? n_recipient_sets : n_senders;
  }
  bool operator==(const ModelConfig&) const = default;
};

struct HistoryState {
  std::vector<double> h;
};

/// Per-step lognormal mixture in normalized log-time units.
struct MixtureParams {
  std::vector<double> omega;
  std::vector<double> mu;
  std::vector<double> sigma;

  std::size_t K() const { return omega.size(); }
};

inline constexpr double kSigmaFloor = 1e-6;
inline const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

/// -log p(tau) for tau in hours. The mixture is evaluated in normalized
/// log-space with log-sum-exp; log(tau) and log(std) are the change-of-variables terms.
inline double lognormal_mixture_nll(const MixtureParams& p, double tau, const NormStats& norm) {
  if (!(tau > 0.0)) throw std::invalid_argument("lognormal_mixture_nll: tau must be > 0");
  const double y = norm.normalize(tau);
  std::vector<double> comp(p.K());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < p.K(); ++k) {
    const double z = (y - p.mu[k]) / p.sigma[k];
    comp[k] = std::log(p.omega[k]) - std::log(p.sigma[k]) - kHalfLog2Pi - 0.5 * z * z;
    mx = std::max(mx, comp[k]);
  }
  double s = 0.0;
  for (double c : comp) s += std::exp(c - mx);
  return -(mx + std::log(s)) + std::log(tau) + std::log(norm.std_log_tau);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Median of tau in hours, by bisection on the mixture CDF.
inline double mixture_median(const MixtureParams& p, const NormStats& norm) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < p.K(); ++k) {
    lo = std::min(lo, p.mu[k] - 12.0 * p.sigma[k]);
    hi = std::max(hi, p.mu[k] + 12.0 * p.sigma[k]);
  }
  auto cdf = [&](double y) {
    double c = 0.0;
    for (std::size_t k = 0; k < p.K(); ++k) c += p.omega[k] * normal_cdf((y - p.mu[k]) / p.sigma[k]);
    return c;
  };
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < 0.5 ? lo : hi) = mid;
  }
  return norm.denormalize(0.5 * (lo + hi));
}

/// Mean of tau in hours: sum_k w_k exp(mu'_k + sigma'_k^2 / 2) in hour-log units.
inline double mixture_mean(const MixtureParams& p, const NormStats& norm) {
  double m = 0.0;
  for (std::size_t k = 0; k < p.K(); ++k) {
    const double mu_h = norm.std_log_tau * p.mu[k] + norm.mean_log_tau;
    const double s_h = norm.std_log_tau * p.sigma[k];
    m += p.omega[k] * std::exp(mu_h + 0.5 * s_h * s_h);
  }
  return m;
}

enum class GroupId : std::size_t { Temporal = 0, Encoder = 1, Sender = 2, Recipient = 3 };
inline constexpr std::array<const char*, 4> kGroupNames{"temporal", "encoder", "sender", "recipient"};

/// All trainable weights. Tensors are values, so copying a model snapshots it.
struct ModelParams {
  // encoder group
  ad::Tensor sender_embedding, recipient_set_embedding;
  ad::Tensor gru_wx, gru_uh, gru_bx, gru_bh;
  // temporal group
  ad::Tensor metadata_embedding, temporal_w, temporal_b;
  // sender group
  ad::Tensor sender_w1, sender_b1, sender_w2, sender_b2;
  // recipient group
  ad::Tensor recipient_w, recipient_b;

  std::vector<std::pair<std::string, ad::Tensor*>> named() {
    return {{"sender_embedding", &sender_embedding},
            {"recipient_set_embedding", &recipient_set_embedding},
            {"gru_wx", &gru_wx},
            {"gru_uh", &gru_uh},
            {"gru_bx", &gru_bx},
            {"gru_bh", &gru_bh},
            {"metadata_embedding", &metadata_embedding},
            {"temporal_w", &temporal_w},
            {"temporal_b", &temporal_b},
            {"sender_w1", &sender_w1},
            {"sender_b1", &sender_b1},
            {"sender_w2", &sender_w2},
            {"sender_b2", &sender_b2},
            {"recipient_w", &recipient_w},
            {"recipient_b", &recipient_b}};
  }

  std::vector<std::pair<std::string, const ad::Tensor*>> named() const {
    std::vector<std::pair<std::string, const ad::Tensor*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
    return out;
  }

  std::vector<ad::Tensor*> group(GroupId g) {
    switch (g) {
      case GroupId::Temporal:
        return {&metadata_embedding, &temporal_w, &temporal_b};
      case GroupId::Encoder:
        return {&sender_embedding, &recipient_set_embedding, &gru_wx, &gru_uh, &gru_bx, &gru_bh};
      case GroupId::Sender:
        return {&sender_w1, &sender_b1, &sender_w2, &sender_b2};
      case GroupId::Recipient:
        return {&recipient_w, &recipient_b};
    }
    return {};
  }
};

struct NllTerms {
  ad::Var tau, sender, recipient, total;
};

struct NllValues {
  double tau = 0.0, sender = 0.0, recipient = 0.0, total = 0.0;
  std::size_t events = 0;
};

/// Model outputs for one event under teacher forcing.
struct EventPrediction {
  MixtureParams mixture;
  std::vector<double> sender_logits;
  std::vector<double> recipient_logits;  // conditioned on the true sender
};

class LogNormMixNet {
 public:
  LogNormMixNet() = default;

  /// `recipient_members[r]` lists the participant ids in recipient set r
  /// (needed by the per-node head for its multi-hot targets).
  LogNormMixNet(ModelConfig cfg, std::uint64_t seed, std::vector<std::vector<std::size_t>> recipient_members = {})
      : cfg_(cfg), members_(std::move(recipient_members)) {
    cfg_.validate();
    if (!members_.empty() && members_.size() != cfg_.n_recipient_sets)
      throw ConfigError("recipient member table size does not match n_recipient_sets");
    allocate();
    Rng rng(seed);
    initialize(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return p_; }
  const ModelParams& params() const { return p_; }
  const std::vector<std::vector<std::size_t>>& recipient_members() const { return members_; }

  /// Parameter groups with their current frozen flags. Pointers refer into
  /// this model and are invalidated by moving it.
  std::vector<ad::ParamGroup> groups() {
    std::vector<ad::ParamGroup> out;
    for (std::size_t g = 0; g < 4; ++g) {
      ad::ParamGroup pg{kGroupNames[g], p_.group(static_cast<GroupId>(g)), frozen_[g]};
      out.push_back(std::move(pg));
    }
    return out;
  }

  void set_frozen(GroupId g, bool f) {
    frozen_[static_cast<std::size_t>(g)] = f;
    for (ad::Tensor* t : p_.group(g)) t->requires_grad = !f;
  }
  bool frozen(GroupId g) const { return frozen_[static_cast<std::size_t>(g)]; }
  void unfreeze_all() {
    for (std::size_t g = 0; g < 4; ++g) set_frozen(static_cast<GroupId>(g), false);
  }

  void zero_grad() {
    for (auto& [name, t] : p_.named()) t->zero_grad();
  }

  /// Zero-initialized weights. Used by tests for closed-form checks.
  void zero_weights() {
    for (auto& [name, t] : p_.named()) std::fill(t->data.begin(), t->data.end(), 0.0);
  }

  // ---- differentiable building blocks ----

  ad::Var initial_state(ad::Tape& tape) const { return tape.zeros(1, cfg_.d_hidden); }

  /// One GRU update with the just-observed event as input.
  ad::Var encode_step(ad::Tape& tape, const ad::Var& h, const Event& ev, const NormStats& norm) const {
    check_ids(ev.sender, ev.recipient_set);
    using namespace ad;
    const std::size_t H = cfg_.d_hidden;
    Var x = concat({tape.scalar(norm.normalize(ev.tau)), tape.row(p_.sender_embedding, ev.sender),
                    tape.row(p_.recipient_set_embedding, ev.recipient_set),
                    tape.row(p_.metadata_embedding, static_cast<std::size_t>(ev.meta))});
    Var gx = linear(x, tape.param(p_.gru_wx), tape.param(p_.gru_bx));
    Var gh = linear(h, tape.param(p_.gru_uh), tape.param(p_.gru_bh));
    Var z = sigmoid(add(slice_cols(gx, 0, H), slice_cols(gh, 0, H)));
    Var r = sigmoid(add(slice_cols(gx, H, 2 * H), slice_cols(gh, H, 2 * H)));
    Var n = ad::tanh(add(slice_cols(gx, 2 * H, 3 * H), mul(r, slice_cols(gh, 2 * H, 3 * H))));
    // h' = (1 - z) * n + z * h
    return add(n, mul(z, sub(h, n)));
  }

  /// Raw 3K temporal outputs: [weight logits | mu | pre-softplus sigma].
  ad::Var temporal_raw(ad::Tape& tape, const ad::Var& h, MetadataClass meta) const {
    using namespace ad;
    Var in = concat({h, tape.row(p_.metadata_embedding, static_cast<std::size_t>(meta))});
    return linear(in, tape.param(p_.temporal_w), tape.param(p_.temporal_b));
  }

  ad::Var sender_logits(ad::Tape& tape, const ad::Var& h) const {
    using namespace ad;
    Var hidden = ad::tanh(linear(h, tape.param(p_.sender_w1), tape.param(p_.sender_b1)));
    return linear(hidden, tape.param(p_.sender_w2), tape.param(p_.sender_b2));
  }

  ad::Var recipient_logits(ad::Tape& tape, const ad::Var& h, std::size_t sender) const {
    if (sender >= cfg_.n_senders) throw std::out_of_range("sender id " + std::to_string(sender) + " out of range");
    using namespace ad;
    Var in = concat({h, tape.row(p_.sender_embedding, sender)});
    return linear(in, tape.param(p_.recipient_w), tape.param(p_.recipient_b));
  }

  /// -log p(tau) from raw temporal outputs.
  ad::Var tau_nll(ad::Tape& tape, const ad::Var& raw, double tau, const NormStats& norm) const {
    using namespace ad;
    const std::size_t K = cfg_.K;
    Var logw = log_softmax(slice_cols(raw, 0, K));
    Var mu = slice_cols(raw, K, 2 * K);
    Var sigma = affine(softplus(slice_cols(raw, 2 * K, 3 * K)), 1.0, kSigmaFloor);
    Var y = tape.constant(1, K, std::vector<double>(K, norm.normalize(tau)));
    Var z = div(sub(y, mu), sigma);
    Var comp = affine(sub(sub(logw, ad::log(sigma)), scale(square(z), 0.5)), 1.0, -kHalfLog2Pi);
    return affine(logsumexp(comp), -1.0, std::log(tau) + std::log(norm.std_log_tau));
  }

  ad::Var sender_nll(const ad::Var& logits, std::size_t sender) const {
    return ad::sub(ad::logsumexp(logits), ad::pick(logits, sender));
  }

  ad::Var recipient_nll(ad::Tape& tape, const ad::Var& logits, std::size_t set_id) const {
    using namespace ad;
    if (cfg_.recipient_mode == RecipientMode::MultiClass) return sub(logsumexp(logits), pick(logits, set_id));
    // Independent Bernoulli per node: sum softplus(l) - t * l.
    const std::size_t n = cfg_.n_senders;
    std::vector<double> target(n, 0.0);
    for (std::size_t node : members_.at(set_id)) target[node] = 1.0;
    return sub(sum(softplus(logits)), sum(mul(logits, tape.constant(1, n, std::move(target)))));
  }

  /// Teacher-forced loss over one sequence: the state encodes events < i when
  /// scoring event i; the recipient term conditions on the true sender.
  NllTerms batch_nll(ad::Tape& tape, const Sequence& seq, const NormStats& norm,
                     std::vector<EventPrediction>* predictions = nullptr) const {
    using namespace ad;
    if (seq.empty()) throw std::invalid_argument("batch_nll: empty sequence");
    std::vector<Var> lt, ls, lr;
    lt.reserve(seq.size());
    ls.reserve(seq.size());
    lr.reserve(seq.size());
    Var h = initial_state(tape);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const Event& ev = seq[i];
      check_ids(ev.sender, ev.recipient_set);
      Var raw = temporal_raw(tape, h, ev.meta);
      lt.push_back(tau_nll(tape, raw, ev.tau, norm));
      Var slog = sender_logits(tape, h);
      ls.push_back(sender_nll(slog, ev.sender));
      Var rlog = recipient_logits(tape, h, ev.sender);
      lr.push_back(recipient_nll(tape, rlog, ev.recipient_set));
      if (predictions) {
        predictions->push_back(EventPrediction{mixture_from_raw(raw.value()),
                                               {slog.value().begin(), slog.value().end()},
                                               {rlog.value().begin(), rlog.value().end()}});
      }
      if (i + 1 < seq.size()) h = encode_step(tape, h, ev, norm);
    }
    NllTerms out{add_n(lt), add_n(ls), add_n(lr), {}};
    out.total = add_n({out.tau, out.sender, out.recipient});
    return out;
  }

  NllValues batch_nll(const Sequence& seq, const NormStats& norm,
                      std::vector<EventPrediction>* predictions = nullptr) const {
    ad::Tape tape(false);
    NllTerms t = batch_nll(tape, seq, norm, predictions);
    return {t.tau.item(), t.sender.item(), t.recipient.item(), t.total.item(), seq.size()};
  }

  // ---- inference on plain vectors ----

  HistoryState initial_state() const { return {std::vector<double>(cfg_.d_hidden, 0.0)}; }

  HistoryState encode_step(const HistoryState& s, const Event& ev, const NormStats& norm) const {
    ad::Tape tape(false);
    ad::Var h = encode_step(tape, tape.constant(s.h), ev, norm);
    return {{h.value().begin(), h.value().end()}};
  }

  MixtureParams temporal_head(const HistoryState& s, MetadataClass meta) const {
    ad::Tape tape(false);
    return mixture_from_raw(temporal_raw(tape, tape.constant(s.h), meta).value());
  }

  std::vector<double> sender_logits(const HistoryState& s) const {
    ad::Tape tape(false);
    auto v = sender_logits(tape, tape.constant(s.h)).value();
    return {v.begin(), v.end()};
  }

  std::vector<double> recipient_logits(const HistoryState& s, std::size_t sender) const {
    ad::Tape tape(false);
    auto v = recipient_logits(tape, tape.constant(s.h), sender).value();
    return {v.begin(), v.end()};
  }

  MixtureParams mixture_from_raw(std::span<const double> raw) const {
    const std::size_t K = cfg_.K;
    MixtureParams m;
    m.omega.resize(K);
    m.mu.assign(raw.begin() + static_cast<std::ptrdiff_t>(K), raw.begin() + static_cast<std::ptrdiff_t>(2 * K));
    m.sigma.resize(K);
    const double mx = *std::max_element(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(K));
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (m.omega[k] = std::exp(raw[k] - mx));
    for (std::size_t k = 0; k < K; ++k) {
      m.omega[k] /= s;
      m.sigma[k] = ad::detail::stable_softplus(raw[2 * K + k]) + kSigmaFloor;
    }
    return m;
  }

 private:
  void check_ids(std::size_t sender, std::size_t set_id) const {
    if (sender >= cfg_.n_senders) throw std::out_of_range("sender id " + std::to_string(sender) + " out of range");
    if (set_id >= cfg_.n_recipient_sets)
      throw std::out_of_range("recipient set id " + std::to_string(set_id) + " out of range");
  }

  void allocate() {
    const std::size_t d = cfg_.d_embed, H = cfg_.d_hidden, in = cfg_.input_width();
    p_.sender_embedding = ad::Tensor(cfg_.n_senders, d);
    p_.recipient_set_embedding = ad::Tensor(cfg_.n_recipient_sets, d);
    p_.metadata_embedding = ad::Tensor(kMetadataClasses, d);
    p_.gru_wx = ad::Tensor(in, 3 * H);
    p_.gru_uh = ad::Tensor(H, 3 * H);
    p_.gru_bx = ad::Tensor(1, 3 * H);
    p_.gru_bh = ad::Tensor(1, 3 * H);
    p_.temporal_w = ad::Tensor(H + d, 3 * cfg_.K);
    p_.temporal_b = ad::Tensor(1, 3 * cfg_.K);
    p_.sender_w1 = ad::Tensor(H, H);
    p_.sender_b1 = ad::Tensor(1, H);
    p_.sender_w2 = ad::Tensor(H, cfg_.n_senders);
    p_.sender_b2 = ad::Tensor(1, cfg_.n_senders);
    p_.recipient_w = ad::Tensor(H + d, cfg_.recipient_outputs());
    p_.recipient_b = ad::Tensor(1, cfg_.recipient_outputs());
  }

  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); embeddings use their width as fan-in.
  void initialize(Rng& rng) {
    auto fill = [&rng](ad::Tensor& t, std::size_t fan_in) {
      const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * b;
    };
    const std::size_t d = cfg_.d_embed, H = cfg_.d_hidden, in = cfg_.input_width();
    fill(p_.sender_embedding, d);
    fill(p_.recipient_set_embedding, d);
    fill(p_.metadata_embedding, d);
    fill(p_.gru_wx, in);
    fill(p_.gru_uh, H);
    fill(p_.gru_bx, H);
    fill(p_.gru_bh, H);
    fill(p_.temporal_w, H + d);
    fill(p_.temporal_b, H + d);
    fill(p_.sender_w1, H);
    fill(p_.sender_b1, H);
    fill(p_.sender_w2, H);
    fill(p_.sender_b2, H);
    fill(p_.recipient_w, H + d);
    fill(p_.recipient_b, H + d);
  }

  ModelConfig cfg_;
  ModelParams p_;
  std::array<bool, 4> frozen_{false, false, false, false};
  std::vector<std::vector<std::size_t>> members_;
};

}  // namespace dmn
