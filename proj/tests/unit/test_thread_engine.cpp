#include <gtest/gtest.h>

#include <sstream>

#include "dmn/fixtures.hpp"
#include "dmn/thread_engine.hpp"

using namespace dmn;

namespace {

constexpr std::int64_t kDay = 86400;

NodeVocabulary abc() {
  NodeVocabulary v;
  for (const char* s : {"a", "b", "c", "d"}) {
    v.index[s] = v.labels.size();
    v.labels.push_back(s);
  }
  return v;
}

SampledEvent event(std::int64_t ts, std::size_t sender, std::vector<std::size_t> recipients) {
  SampledEvent ev;
  ev.timestamp = ts;
  ev.time = static_cast<double>(ts);
  ev.sender = sender;
  ev.recipients = std::move(recipients);
  return ev;
}

std::vector<SenderProfile> profiles(std::array<double, 3> train) {
  std::vector<SenderProfile> p(4);
  for (auto& s : p) {
    s.train = train;
    s.keywords = {{"update", 1.0}};
  }
  return p;
}

CannedText canned() { return CannedText::load(DMN_DEFAULT_RESOURCE_DIR); }

class RecordingProvider : public TextProvider {
 public:
  std::string generate(const GenRequest& r) override {
    requests.push_back(r);
    return (r.kind == GenKind::Subject ? "Subject " : "Body ") + std::to_string(requests.size());
  }
  std::string name() const override { return "recording"; }
  std::vector<GenRequest> requests;
};

class FailingProvider : public TextProvider {
 public:
  std::string generate(const GenRequest&) override { throw ProviderError("provider http://down: connection refused"); }
  std::string name() const override { return "failing"; }
};

}  // namespace

TEST(ThreadEngine, EmptyStoreStartsThread) {
  const auto nodes = abc();
  RecordingProvider text;
  ThreadEngine eng(nodes, profiles({0.3, 0.4, 0.3}), canned(), text, {}, 1);
  const auto e = eng.process(event(1000, 0, {1}));
  EXPECT_EQ(e.type, CommType::NewThread);
  EXPECT_EQ(e.email_id, 1);
  EXPECT_EQ(e.thread_id, 1);
  EXPECT_TRUE(e.references.empty());
}

TEST(ThreadEngine, MatchingActiveThreadGetsReply) {
  const auto nodes = abc();
  RecordingProvider text;
  ThreadEngine eng(nodes, profiles({0.6, 0.4, 0.0}), canned(), text, {}, 1);
  const auto first = eng.process(event(1000, 0, {1}));
  const auto reply = eng.process(event(2000, 1, {0}));
  EXPECT_EQ(reply.type, CommType::Reply);
  EXPECT_EQ(reply.thread_id, first.thread_id);
  EXPECT_EQ(reply.subject, "RE: " + first.subject);
  EXPECT_EQ(reply.references, std::vector<std::int64_t>{first.email_id});
  // Body generation sees the subject and earlier thread text.
  EXPECT_EQ(text.requests.back().kind, GenKind::Body);
  EXPECT_EQ(text.requests.back().prompt, first.subject);
  EXPECT_EQ(text.requests.back().context, std::vector<std::string>{first.body});
}

TEST(ThreadEngine, ReplyCapFallsThrough) {
  const auto nodes = abc();
  RecordingProvider text;
  auto p = profiles({0.6, 0.4, 0.0});
  p[1].window.push(100, CommType::NewThread);
  p[1].window.push(200, CommType::Reply);  // rolling reply fraction 0.5 > 1.1 * 0.4
  ThreadEngine eng(nodes, std::move(p), canned(), text, {}, 1);
  eng.process(event(1000, 0, {1}));
  EXPECT_EQ(eng.select_comm_type(event(2000, 1, {0})), CommType::NewThread);
}

TEST(ThreadEngine, ForwardExtendsParticipants) {
  const auto nodes = abc();
  RecordingProvider text;
  const auto c = canned();
  ThreadEngine eng(nodes, profiles({0.5, 0.0, 0.5}), c, text, {}, 1);
  const auto first = eng.process(event(1000, 0, {1}));
  const auto fwd = eng.process(event(2000, 0, {1, 2}));
  EXPECT_EQ(fwd.type, CommType::Fwd);
  EXPECT_EQ(fwd.subject, "FW: " + first.subject);
  EXPECT_NE(std::find(c.forwards.begin(), c.forwards.end(), fwd.body), c.forwards.end());
  EXPECT_EQ(eng.threads().at(first.thread_id).participants, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(ThreadEngine, ForwardRequiresSenderInThread) {
  const auto nodes = abc();
  RecordingProvider text;
  ThreadEngine eng(nodes, profiles({0.5, 0.0, 0.5}), canned(), text, {}, 1);
  eng.process(event(1000, 0, {1}));
  EXPECT_EQ(eng.select_comm_type(event(2000, 2, {0, 1})), CommType::NewThread);
}

TEST(ThreadEngine, StaleThreadIsNotEligible) {
  const auto nodes = abc();
  RecordingProvider text;
  ThreadEngine eng(nodes, profiles({0.5, 0.5, 0.0}), canned(), text, {}, 1);
  eng.process(event(1000, 0, {1}));
  EXPECT_EQ(eng.select_comm_type(event(1000 + 30 * kDay, 1, {0})), CommType::NewThread);
  EXPECT_EQ(eng.select_comm_type(event(1000 + 6 * kDay, 1, {0})), CommType::Reply);
}

TEST(ThreadEngine, TargetThreadIsUniform) {
  const auto nodes = abc();
  RecordingProvider text;
  auto p = profiles({1.0, 0.0, 0.0});
  ThreadEngine eng(nodes, std::move(p), canned(), text, {}, 1);
  for (int i = 0; i < 3; ++i) eng.process(event(1000 + i, 0, {1}));
  ASSERT_EQ(eng.threads().size(), 3u);
  std::map<std::int64_t, int> hits;
  for (int i = 0; i < 3000; ++i) ++hits[*eng.select_target_thread(event(2000, 1, {0}), CommType::Reply)];
  ASSERT_EQ(hits.size(), 3u);
  for (const auto& [_, n] : hits) EXPECT_NEAR(n / 3000.0, 1.0 / 3.0, 0.05);
}

TEST(ThreadEngine, NewThreadSubjectSeededByKeyword) {
  const auto nodes = abc();
  RecordingProvider text;
  ThreadEngineConfig cfg;
  cfg.subject_tokens = 6;
  ThreadEngine eng(nodes, profiles({1.0, 0.0, 0.0}), canned(), text, cfg, 1);
  eng.process(event(1000, 0, {1, 2}));
  ASSERT_FALSE(text.requests.empty());
  EXPECT_EQ(text.requests.front().kind, GenKind::Subject);
  EXPECT_EQ(text.requests.front().prompt, "update");
  EXPECT_EQ(text.requests.front().max_tokens, 6);
}

TEST(ThreadEngine, GreetingAndSalutationNamePeople) {
  const auto nodes = abc();
  RecordingProvider text;
  const auto c = canned();
  ThreadEngine eng(nodes, profiles({1.0, 0.0, 0.0}), c, text, {}, 1);
  const auto e = eng.process(event(1000, 3, {1, 2}));
  EXPECT_TRUE(e.greeting.ends_with(" b, c,"));
  EXPECT_TRUE(e.salutation.ends_with("\nd"));
}

TEST(ThreadEngine, ProviderFailurePropagates) {
  const auto nodes = abc();
  FailingProvider text;
  ThreadEngine eng(nodes, profiles({1.0, 0.0, 0.0}), canned(), text, {}, 1);
  EXPECT_THROW(eng.process(event(1000, 0, {1})), ProviderError);
}

TEST(ThreadEngine, OutOfOrderEventsRejected) {
  const auto nodes = abc();
  RecordingProvider text;
  ThreadEngine eng(nodes, profiles({1.0, 0.0, 0.0}), canned(), text, {}, 1);
  eng.process(event(1000, 0, {1}));
  EXPECT_THROW(eng.process(event(999, 0, {1})), DataError);
}

TEST(ThreadEngine, MissingResourcesRejected) {
  EXPECT_THROW(CannedText::load("/nonexistent"), ConfigError);
}

// Replays the fixture's own traffic through the engine and checks the
// per-email invariants.
class FixtureReplay : public ::testing::Test {
 protected:
  void SetUp() override {
    fx_ = fixtures::ecorp_fixture({.weeks = 12});
    nodes_ = build_node_vocab(fx_.events);
    provider_ = std::make_unique<BuiltinProvider>(fx_.corpus);
  }
  std::vector<SampledEvent> events() const {
    std::vector<SampledEvent> out;
    for (const auto& r : fx_.events) {
      std::vector<std::size_t> ids;
      for (const auto& l : r.recipients) ids.push_back(nodes_.id(l));
      std::sort(ids.begin(), ids.end());
      out.push_back(event(r.timestamp, nodes_.id(r.sender), ids));
    }
    return out;
  }
  fixtures::Fixture fx_;
  NodeVocabulary nodes_;
  std::unique_ptr<BuiltinProvider> provider_;
};

TEST_F(FixtureReplay, InvariantsHoldOnEveryEmail) {
  ThreadEngine eng(nodes_, build_profiles(nodes_, fx_.corpus), canned(), *provider_, {}, 3);
  std::int64_t last_id = 0;
  std::map<std::int64_t, std::int64_t> last_ts_in_thread;
  std::array<std::size_t, 3> by_type{};
  for (const auto& ev : events()) {
    const CommType planned = eng.select_comm_type(ev);
    const auto e = eng.process(ev);
    ++by_type[static_cast<std::size_t>(e.type)];
    EXPECT_GT(e.email_id, last_id);
    last_id = e.email_id;
    if (auto it = last_ts_in_thread.find(e.thread_id); it != last_ts_in_thread.end()) {
      EXPECT_GE(ev.timestamp, it->second);
    }
    last_ts_in_thread[e.thread_id] = ev.timestamp;
    if (e.type == CommType::Reply) {
      EXPECT_EQ(eng.threads().at(e.thread_id).participants, participants_of(ev));
      EXPECT_TRUE(e.subject.starts_with("RE: "));
    }
    if (e.type != CommType::NewThread) {
      EXPECT_EQ(e.type, planned);
    }
    const auto& prof = eng.profile(ev.sender);
    const double slack = 2.0 / static_cast<double>(prof.window.size());
    EXPECT_LE(prof.window.fraction(CommType::Reply), 1.1 * prof.train[1] + slack);
    EXPECT_LE(prof.window.fraction(CommType::Fwd), 1.1 * prof.train[2] + slack);
  }
  EXPECT_GT(by_type[1], 0u);
  EXPECT_GT(by_type[2], 0u);
}

TEST_F(FixtureReplay, ResumeContinuesIdentically) {
  const auto evs = events();
  const std::size_t cut = 400, end = 900;
  ThreadEngine whole(nodes_, build_profiles(nodes_, fx_.corpus), canned(), *provider_, {}, 3);
  std::vector<GeneratedEmail> expected;
  for (std::size_t i = 0; i < end; ++i) expected.push_back(whole.process(evs[i]));

  ThreadEngine first(nodes_, build_profiles(nodes_, fx_.corpus), canned(), *provider_, {}, 3);
  for (std::size_t i = 0; i < cut; ++i) first.process(evs[i]);
  const std::string saved = first.to_json().dump();
  ThreadEngine second(nodes_, build_profiles(nodes_, fx_.corpus), canned(), *provider_, {}, 99);
  second.restore(nlohmann::json::parse(saved));
  EXPECT_EQ(second.next_email_id(), expected[cut].email_id);
  for (std::size_t i = cut; i < end; ++i) {
    const auto e = second.process(evs[i]);
    EXPECT_EQ(e.email_id, expected[i].email_id);
    EXPECT_EQ(e.thread_id, expected[i].thread_id);
    EXPECT_EQ(e.subject, expected[i].subject);
    EXPECT_EQ(e.body, expected[i].body);
  }
}

TEST_F(FixtureReplay, OldThreadsGoDormantButStayReachable) {
  ThreadEngineConfig cfg;
  cfg.window_days = 14;
  ThreadEngine eng(nodes_, build_profiles(nodes_, fx_.corpus), canned(), *provider_, cfg, 3);
  std::set<std::int64_t> emitted_threads;
  for (const auto& ev : events()) emitted_threads.insert(eng.process(ev).thread_id);
  std::size_t dormant = 0;
  for (std::int64_t id : emitted_threads) {
    ASSERT_TRUE(eng.threads().contains(id));
    dormant += eng.threads().at(id).dormant;
  }
  EXPECT_GT(dormant, 0u);
}

TEST_F(FixtureReplay, MboxHeadersFollowThreads) {
  ThreadEngine eng(nodes_, build_profiles(nodes_, fx_.corpus), canned(), *provider_, {}, 3);
  std::ostringstream out;
  GeneratedEmail reply;
  for (const auto& ev : events()) {
    auto e = eng.process(ev);
    write_mbox_entry(out, nodes_, e);
    if (e.type == CommType::Reply && reply.email_id == 0) reply = e;
    if (reply.email_id && e.email_id > 200) break;
  }
  const std::string mbox = out.str();
  ASSERT_NE(reply.email_id, 0);
  EXPECT_TRUE(mbox.starts_with("From "));
  EXPECT_NE(mbox.find("Message-ID: <" + std::to_string(reply.email_id) + "@dmn.example>\nIn-Reply-To: <" +
                      std::to_string(reply.references.back()) + "@dmn.example>"),
            std::string::npos);
  EXPECT_NE(mbox.find("Date: Mon, 02 Jan 2023"), std::string::npos);
  const auto j = email_json(nodes_, reply);
  EXPECT_EQ(j["type"], "reply");
  EXPECT_EQ(j["in_reply_to"], reply.references.back());
}

TEST(Mbox, EscapesFromLines) {
  const auto nodes = abc();
  GeneratedEmail e;
  e.email_id = 7;
  e.event = event(fixtures::kMonday2023, 0, {1});
  e.subject = "s";
  e.greeting = "Hi b,";
  e.body = "From here on we ship.";
  e.salutation = "Thanks,\na";
  std::ostringstream out;
  write_mbox_entry(out, nodes, e);
  EXPECT_NE(out.str().find("\n>From here on we ship.\n"), std::string::npos);
  EXPECT_EQ(out.str().find("In-Reply-To"), std::string::npos);
}
