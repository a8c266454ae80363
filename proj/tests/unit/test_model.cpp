#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dmn/model.hpp"
#include "support/oracles.hpp"

using namespace dmn;

namespace {

ModelConfig tiny(RecipientMode mode = RecipientMode::MultiClass) {
  ModelConfig c;
  c.n_senders = 4;
  c.n_recipient_sets = 3;
  c.K = 3;
  c.d_embed = 8;
  c.d_hidden = 8;
  c.recipient_mode = mode;
  return c;
}

std::vector<std::vector<std::size_t>> members4() { return {{1}, {0, 2}, {1, 2, 3}}; }

Sequence toy_sequence(Rng& rng, std::size_t len, const ModelConfig& c) {
  Sequence s;
  for (std::size_t i = 0; i < len; ++i)
    s.push_back(Event{0.05 + 5.0 * rng.uniform(), rng.below(c.n_senders), rng.below(c.n_recipient_sets),
                      static_cast<MetadataClass>(rng.below(3)), 0});
  return s;
}

}  // namespace

TEST(Mixture, StandardLognormalAtOne) {
  MixtureParams p{{1.0}, {0.0}, {1.0}};
  EXPECT_NEAR(lognormal_mixture_nll(p, 1.0, NormStats{}), 0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
}

TEST(Mixture, IdenticalComponentsCollapse) {
  MixtureParams one{{1.0}, {0.3}, {0.7}};
  MixtureParams two{{0.5, 0.5}, {0.3, 0.3}, {0.7, 0.7}};
  NormStats n{0.2, 1.3};
  for (double tau : {0.01, 0.5, 3.0, 40.0})
    EXPECT_NEAR(lognormal_mixture_nll(one, tau, n), lognormal_mixture_nll(two, tau, n), 1e-12);
}

TEST(Mixture, MatchesDirectFormula) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t K = 1 + rng.below(5);
    MixtureParams p;
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p.omega.push_back(0.05 + rng.uniform());
      total += p.omega.back();
      p.mu.push_back(4.0 * rng.uniform() - 2.0);
      p.sigma.push_back(0.2 + 1.5 * rng.uniform());
    }
    for (double& w : p.omega) w /= total;
    NormStats n{2.0 * rng.uniform() - 1.0, 0.5 + rng.uniform()};
    const double tau = std::exp(6.0 * rng.uniform() - 3.0);
    EXPECT_NEAR(lognormal_mixture_nll(p, tau, n), oracle::direct_mixture_nll(p, tau, n), 1e-10);
  }
}

TEST(Mixture, NonPositiveTauThrows) {
  MixtureParams p{{1.0}, {0.0}, {1.0}};
  EXPECT_THROW(lognormal_mixture_nll(p, 0.0, NormStats{}), std::invalid_argument);
}

TEST(Mixture, MedianClosedFormForSingleComponent) {
  MixtureParams p{{1.0}, {0.4}, {0.9}};
  EXPECT_NEAR(mixture_median(p, NormStats{}), std::exp(0.4), 1e-9);
  NormStats n{1.0, 2.0};
  EXPECT_NEAR(mixture_median(p, n), std::exp(2.0 * 0.4 + 1.0), 1e-8);
  EXPECT_NEAR(mixture_mean(p, NormStats{}), std::exp(0.4 + 0.5 * 0.81), 1e-12);
}

TEST(Model, ZeroWeightsGruFixedPoint) {
  LogNormMixNet net(tiny(), 1, members4());
  net.zero_weights();
  auto s = net.initial_state();
  s = net.encode_step(s, Event{2.0, 1, 2, MetadataClass::Shoulder, 0}, NormStats{});
  for (double v : s.h) EXPECT_EQ(v, 0.0);
}

TEST(Model, ZeroWeightsHeads) {
  LogNormMixNet net(tiny(), 1, members4());
  net.zero_weights();
  const auto s = net.initial_state();
  const auto m = net.temporal_head(s, MetadataClass::OfficeHours);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(m.omega[k], 1.0 / 3.0, 1e-15);
    EXPECT_EQ(m.mu[k], 0.0);
    EXPECT_NEAR(m.sigma[k], std::log(2.0), 1e-5);
  }
  for (double l : net.sender_logits(s)) EXPECT_EQ(l, 0.0);
  EXPECT_EQ(net.recipient_logits(s, 0).size(), 3u);

  LogNormMixNet bc(tiny(RecipientMode::BinaryPerNode), 1, members4());
  bc.zero_weights();
  const auto rl = bc.recipient_logits(bc.initial_state(), 2);
  ASSERT_EQ(rl.size(), 4u);
  for (double l : rl) EXPECT_EQ(ad::detail::stable_sigmoid(l), 0.5);
}

TEST(Model, DeterministicState) {
  LogNormMixNet a(tiny(), 9, members4()), b(tiny(), 9, members4());
  Event ev{1.5, 2, 1, MetadataClass::NonWorking, 0};
  const auto sa = a.encode_step(a.initial_state(), ev, NormStats{});
  const auto sb = b.encode_step(b.initial_state(), ev, NormStats{});
  EXPECT_EQ(sa.h, sb.h);
}

TEST(Model, StateStaysFiniteOverLongStream) {
  LogNormMixNet net(tiny(), 3, members4());
  Rng rng(4);
  auto s = net.initial_state();
  for (int i = 0; i < 10000; ++i) {
    s = net.encode_step(s, Event{std::exp(8.0 * rng.uniform() - 4.0), rng.below(4), rng.below(3),
                                 static_cast<MetadataClass>(rng.below(3)), 0},
                        NormStats{});
  }
  double norm = 0.0;
  for (double v : s.h) norm += v * v;
  EXPECT_TRUE(std::isfinite(norm));
}

TEST(Model, HeadsFiniteForLargeStates) {
  LogNormMixNet net(tiny(RecipientMode::BinaryPerNode), 3, members4());
  HistoryState s{std::vector<double>(8, 1e3)};
  s.h[3] = -1e3;
  const auto m = net.temporal_head(s, MetadataClass::OfficeHours);
  double total = 0.0;
  for (std::size_t k = 0; k < m.K(); ++k) {
    EXPECT_TRUE(std::isfinite(m.omega[k]) && std::isfinite(m.mu[k]) && std::isfinite(m.sigma[k]));
    EXPECT_GT(m.sigma[k], 0.0);
    total += m.omega[k];
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  for (double v : net.sender_logits(s)) EXPECT_TRUE(std::isfinite(v));
  for (double v : net.recipient_logits(s, 1)) EXPECT_TRUE(std::isfinite(v));
  Sequence seq{Event{0.3, 0, 0, MetadataClass::OfficeHours, 0}};
  EXPECT_TRUE(std::isfinite(net.batch_nll(seq, NormStats{}).total));
}

TEST(Model, InvalidIdsThrow) {
  LogNormMixNet net(tiny(), 1, members4());
  EXPECT_THROW(net.recipient_logits(net.initial_state(), 4), std::out_of_range);
  EXPECT_THROW(net.encode_step(net.initial_state(), Event{1.0, 9, 0}, NormStats{}), std::out_of_range);
  EXPECT_THROW(net.encode_step(net.initial_state(), Event{1.0, 0, 3}, NormStats{}), std::out_of_range);
}

TEST(BatchNll, SingleEventUniformHeads) {
  ModelConfig c;
  c.n_senders = 2;
  c.n_recipient_sets = 2;
  c.K = 1;
  c.d_embed = 3;
  c.d_hidden = 4;
  LogNormMixNet net(c, 1, {{1}, {0}});
  net.zero_weights();
  Sequence seq{Event{1.0, 0, 1, MetadataClass::OfficeHours, 0}};
  const auto v = net.batch_nll(seq, NormStats{});
  EXPECT_NEAR(v.sender, std::log(2.0), 1e-15);
  EXPECT_NEAR(v.recipient, std::log(2.0), 1e-15);
  EXPECT_EQ(v.total, v.tau + v.sender + v.recipient);
}

TEST(BatchNll, BinaryHeadUniform) {
  LogNormMixNet net(tiny(RecipientMode::BinaryPerNode), 1, members4());
  net.zero_weights();
  Sequence seq{Event{1.0, 0, 2, MetadataClass::OfficeHours, 0}};
  EXPECT_NEAR(net.batch_nll(seq, NormStats{}).recipient, 4.0 * std::log(2.0), 1e-12);
}

TEST(BatchNll, TotalIsSumOfTerms) {
  LogNormMixNet net(tiny(), 2, members4());
  Rng rng(8);
  const auto seq = toy_sequence(rng, 12, tiny());
  const auto v = net.batch_nll(seq, NormStats{0.3, 1.2});
  EXPECT_EQ(v.total, v.tau + v.sender + v.recipient);
}

TEST(BatchNll, TemporalHeadIgnoresCurrentMarks) {
  LogNormMixNet net(tiny(), 2, members4());
  Rng rng(8);
  auto seq = toy_sequence(rng, 6, tiny());
  std::vector<EventPrediction> before, after;
  net.batch_nll(seq, NormStats{}, &before);
  seq[3].sender = (seq[3].sender + 1) % 4;
  seq[3].recipient_set = (seq[3].recipient_set + 1) % 3;
  net.batch_nll(seq, NormStats{}, &after);
  for (std::size_t i = 0; i <= 3; ++i) {
    EXPECT_EQ(before[i].mixture.omega, after[i].mixture.omega);
    EXPECT_EQ(before[i].mixture.mu, after[i].mixture.mu);
    EXPECT_EQ(before[i].mixture.sigma, after[i].mixture.sigma);
  }
  EXPECT_NE(before[4].mixture.mu, after[4].mixture.mu);
}

TEST(BatchNll, TapeAndPlainAgree) {
  LogNormMixNet net(tiny(RecipientMode::BinaryPerNode), 2, members4());
  Rng rng(10);
  const auto seq = toy_sequence(rng, 7, tiny());
  ad::Tape tape;
  const auto t = net.batch_nll(tape, seq, NormStats{});
  EXPECT_EQ(t.total.item(), net.batch_nll(seq, NormStats{}).total);
}

class ModelFd : public ::testing::TestWithParam<RecipientMode> {};

TEST_P(ModelFd, FiveEventGradientCheck) {
  const ModelConfig c = tiny(GetParam());
  LogNormMixNet net(c, 21, members4());
  Rng rng(22);
  const auto seq = toy_sequence(rng, 5, c);
  const NormStats norm{0.1, 0.9};
  std::vector<ad::Tensor*> all;
  for (auto& [name, t] : net.params().named()) all.push_back(t);
  ad::ParamGroup g{"all", all};
  // Larger step than the primitive checks: whole-model gradients reach 1e-7,
  // where h = 1e-5 is dominated by round-off in the summed loss.
  const double err =
      ad::finite_diff_check([&](ad::Tape& t) { return net.batch_nll(t, seq, norm).total; }, g, 3e-4);
  EXPECT_LT(err, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(BothHeads, ModelFd,
                         ::testing::Values(RecipientMode::MultiClass, RecipientMode::BinaryPerNode));

TEST(Groups, EveryWeightInExactlyOneGroup) {
  LogNormMixNet net(tiny(), 1, members4());
  std::map<const ad::Tensor*, int> seen;
  for (auto& g : net.groups())
    for (auto* p : g.params) ++seen[p];
  for (auto& [name, t] : net.params().named()) EXPECT_EQ(seen[t], 1) << name;
  EXPECT_EQ(seen.size(), net.params().named().size());
}
