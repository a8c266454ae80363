#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "dmn/event_data.hpp"

using namespace dmn;

namespace {

ParsedLog parse_csv(const std::string& text) {
  std::istringstream in(text);
  return parse_event_log(in, LogFormat::Csv);
}

// 2023-10-03 is a Tuesday.
constexpr std::int64_t kTuesday = 1696291200;  // 2023-10-03 00:00 UTC
constexpr std::int64_t kHour = 3600;

}  // namespace

TEST(ParseEventLog, SingleRow) {
  const auto log = parse_csv("timestamp,sender,recipients\n1696233600,alice,bob;carol\n");
  ASSERT_EQ(log.events.size(), 1u);
  EXPECT_EQ(log.events[0].timestamp, 1696233600);
  EXPECT_EQ(log.events[0].sender, "alice");
  EXPECT_EQ(log.events[0].recipients, (std::vector<std::string>{"bob", "carol"}));
}

TEST(ParseEventLog, SelfSendDropped) {
  const auto log = parse_csv("timestamp,sender,recipients\n5,alice,alice\n6,alice,bob\n");
  ASSERT_EQ(log.events.size(), 1u);
  EXPECT_EQ(log.self_sends_dropped, 1u);
}

TEST(ParseEventLog, SelfAddressRemovedFromMulticast) {
  const auto log = parse_csv("timestamp,sender,recipients\n5,alice,alice;bob\n");
  ASSERT_EQ(log.events.size(), 1u);
  EXPECT_EQ(log.events[0].recipients, std::vector<std::string>{"bob"});
}

TEST(ParseEventLog, DuplicatesDroppedAndCounted) {
  const auto log = parse_csv("timestamp,sender,recipients\n5,a,b\n5,a,b\n");
  EXPECT_EQ(log.events.size(), 1u);
  EXPECT_EQ(log.duplicates_dropped, 1u);
}

TEST(ParseEventLog, SortsByTimestamp) {
  const auto log = parse_csv("timestamp,sender,recipients\n9,a,b\n3,c,d\n");
  ASSERT_EQ(log.events.size(), 2u);
  EXPECT_EQ(log.events[0].timestamp, 3);
}

TEST(ParseEventLog, MalformedRowReportsLine) {
  try {
    parse_csv("timestamp,sender,recipients\n5,a,b\nxx,a,b\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(parse_csv("timestamp,sender,recipients\n5,a\n"), DataError);
}

TEST(ParseEventLog, EmptyFileIsError) {
  EXPECT_THROW(parse_csv(""), DataError);
  EXPECT_THROW(parse_csv("timestamp,sender,recipients\n"), DataError);
}

TEST(ParseEventLog, Jsonl) {
  std::istringstream in(R"({"timestamp":10,"sender":"a","recipients":["c","b"]}
{"timestamp":"11","sender":"b","recipients":"a;c"}
)");
  const auto log = parse_event_log(in, LogFormat::Jsonl);
  ASSERT_EQ(log.events.size(), 2u);
  EXPECT_EQ(log.events[0].recipients, (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(log.events[1].timestamp, 11);
  std::istringstream bad("{\"timestamp\":1}\n");
  EXPECT_THROW(parse_event_log(bad, LogFormat::Jsonl), DataError);
}

TEST(ParseEventLog, RoundTripBothFormats) {
  const auto log = parse_csv("timestamp,sender,recipients\n1,a,b;c\n2,b,a\n2,c,a;b\n40,a,c\n");
  for (auto fmt : {LogFormat::Csv, LogFormat::Jsonl}) {
    std::stringstream io;
    write_event_log(io, log.events, fmt);
    const auto again = parse_event_log(io, fmt);
    EXPECT_EQ(again.events, log.events);
  }
}

TEST(Metadata, Classes) {
  EXPECT_EQ(derive_metadata_class(kTuesday + 10 * kHour, 0), MetadataClass::OfficeHours);
  EXPECT_EQ(derive_metadata_class(kTuesday + 4 * 86400 + 14 * kHour, 0), MetadataClass::NonWorking);  // Saturday
  EXPECT_EQ(derive_metadata_class(kTuesday - 86400 + 7 * kHour + 1800, 0), MetadataClass::Shoulder);  // Monday 07:30
  EXPECT_EQ(derive_metadata_class(kTuesday + 16 * kHour + 3599, 0), MetadataClass::OfficeHours);
  EXPECT_EQ(derive_metadata_class(kTuesday + 17 * kHour, 0), MetadataClass::Shoulder);
  EXPECT_EQ(derive_metadata_class(kTuesday + 22 * kHour, 0), MetadataClass::NonWorking);
  EXPECT_EQ(derive_metadata_class(kTuesday + 5 * kHour + 3599, 0), MetadataClass::NonWorking);
}

TEST(Metadata, TimeZoneOffsetShiftsLocalHour) {
  // 08:00 UTC is 10:00 at UTC+2 and 03:00 at UTC-5.
  EXPECT_EQ(derive_metadata_class(kTuesday + 8 * kHour, 120), MetadataClass::OfficeHours);
  EXPECT_EQ(derive_metadata_class(kTuesday + 8 * kHour, -300), MetadataClass::NonWorking);
  EXPECT_EQ(local_day_of_week(0, 0), 3);  // 1970-01-01 was a Thursday
  EXPECT_EQ(local_day_of_week(-1, 0), 2);
}

TEST(Metadata, PartitionsEveryHourOfTheWeek) {
  std::set<MetadataClass> seen;
  for (std::int64_t h = 0; h < 7 * 24; ++h) {
    const auto m = derive_metadata_class(kTuesday - 86400 + h * kHour, 0);
    const int dow = static_cast<int>(h / 24), hour = static_cast<int>(h % 24);
    // Independent restatement of the rule.
    MetadataClass expect = MetadataClass::NonWorking;
    if (dow < 5 && hour >= 9 && hour < 17) expect = MetadataClass::OfficeHours;
    else if (dow < 5 && ((hour >= 6 && hour < 9) || (hour >= 17 && hour < 22))) expect = MetadataClass::Shoulder;
    EXPECT_EQ(m, expect) << "dow " << dow << " hour " << hour;
    seen.insert(m);
  }
  EXPECT_EQ(seen.size(), 3u);
}

TEST(RecipientVocab, ThresholdRule) {
  std::vector<RawEvent> evs{{1, "x", {"a"}}, {2, "x", {"a"}}, {3, "x", {"b", "c"}}};
  const auto r = build_recipient_vocab(evs, 2);
  ASSERT_EQ(r.vocab.size(), 1u);
  EXPECT_EQ(r.vocab.sets[0], LabelSet{"a"});
  EXPECT_EQ(r.vocab.dropped_event_count, 1u);
  EXPECT_EQ(r.events.size(), 2u);
}

TEST(RecipientVocab, MinCountOneKeepsEverything) {
  std::vector<RawEvent> evs{{1, "x", {"a"}}, {2, "y", {"b"}}, {3, "x", {"b", "c"}}, {4, "x", {"b"}}};
  const auto r = build_recipient_vocab(evs, 1);
  EXPECT_EQ(r.vocab.dropped_event_count, 0u);
  EXPECT_EQ(r.vocab.size(), 3u);
  // descending frequency, ties lexicographic
  EXPECT_EQ(r.vocab.sets[0], LabelSet{"b"});
  EXPECT_EQ(r.vocab.sets[1], LabelSet{"a"});
  EXPECT_EQ(r.vocab.sets[2], (LabelSet{"b", "c"}));
  for (std::size_t i = 0; i < r.vocab.size(); ++i) EXPECT_EQ(*r.vocab.find(r.vocab.sets[i]), i);
}

TEST(RecipientVocab, AllFilteredIsError) {
  std::vector<RawEvent> evs{{1, "x", {"a"}}};
  try {
    build_recipient_vocab(evs, 2);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("vocabulary empty"), std::string::npos);
  }
}

TEST(InterEventTimes, Arithmetic) {
  std::vector<std::int64_t> ts{0, 3600, 10800};
  const auto taus = compute_inter_event_times(ts, 0);
  EXPECT_DOUBLE_EQ(taus[1], 1.0);
  EXPECT_DOUBLE_EQ(taus[2], 2.0);
}

TEST(InterEventTimes, ZeroGapClamped) {
  std::vector<std::int64_t> ts{100, 100};
  const auto taus = compute_inter_event_times(ts, 0);
  EXPECT_DOUBLE_EQ(taus[1], 1.0 / 3600.0);
}

TEST(InterEventTimes, DecreasingIsError) {
  std::vector<std::int64_t> ts{100, 50};
  EXPECT_THROW(compute_inter_event_times(ts, 0), DataError);
}

TEST(NormStats, PopulationMomentsOfLogTau) {
  std::vector<Sequence> train{{Event{1.0, 0, 0}, Event{std::exp(2.0), 0, 0}}, {Event{std::exp(4.0), 0, 0}}};
  const auto n = compute_norm_stats(train);
  EXPECT_NEAR(n.mean_log_tau, 2.0, 1e-12);
  EXPECT_NEAR(n.std_log_tau, std::sqrt(8.0 / 3.0), 1e-12);
  EXPECT_NEAR(n.denormalize(n.normalize(3.7)), 3.7, 1e-12);
}

TEST(NormStats, ConstantTauFallsBackToUnitStd) {
  std::vector<Sequence> train{{Event{2.0, 0, 0}, Event{2.0, 0, 0}}};
  EXPECT_EQ(compute_norm_stats(train).std_log_tau, 1.0);
}

TEST(Split, TenWindowsSixTwoTwo) {
  std::vector<Sequence> seqs;
  for (int i = 0; i < 10; ++i) seqs.push_back({Event{1.0, 0, 0, MetadataClass::OfficeHours, i}});
  const auto a = split_sequences(seqs, {}, 42);
  const auto b = split_sequences(seqs, {}, 42);
  EXPECT_EQ(a.train.size(), 6u);
  EXPECT_EQ(a.dev.size(), 2u);
  EXPECT_EQ(a.test.size(), 2u);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.dev, b.dev);
  std::set<std::int64_t> all;
  for (const auto* part : {&a.train, &a.dev, &a.test})
    for (const auto& s : *part) all.insert(s[0].timestamp);
  EXPECT_EQ(all.size(), 10u);
}

TEST(Split, SixtyNineWindows) {
  std::vector<Sequence> seqs(69, Sequence{Event{1.0, 0, 0}});
  const auto s = split_sequences(seqs, {}, 1);
  EXPECT_EQ(s.train.size(), 41u);
  EXPECT_EQ(s.dev.size(), 14u);
  EXPECT_EQ(s.test.size(), 14u);
}

TEST(Split, FractionsMustSumToOne) {
  std::vector<Sequence> seqs(10, Sequence{Event{1.0, 0, 0}});
  EXPECT_THROW(split_sequences(seqs, Fractions{0.5, 0.2, 0.2}, 1), ConfigError);
}

TEST(Split, TooFewSequences) {
  std::vector<Sequence> seqs(4, Sequence{Event{1.0, 0, 0}});
  EXPECT_THROW(split_sequences(seqs, {}, 1), DataError);
}

TEST(Split, ChronologicalKeepsOrder) {
  std::vector<Sequence> seqs;
  for (int i = 0; i < 10; ++i) seqs.push_back({Event{1.0, 0, 0, MetadataClass::OfficeHours, i}});
  const auto s = split_sequences(seqs, {}, 9, SplitMode::Chronological);
  EXPECT_EQ(s.train.front()[0].timestamp, 0);
  EXPECT_EQ(s.dev.front()[0].timestamp, 6);
  EXPECT_EQ(s.test.back()[0].timestamp, 9);
}

TEST(Windows, WeeklyAnchorAndFirstTau) {
  // Tuesday 10:00 and the following Monday 09:00 fall in two different weeks.
  std::vector<IndexedRawEvent> evs{{kTuesday + 10 * kHour, 0, 0}, {kTuesday + 11 * kHour, 1, 0},
                                   {kTuesday + 6 * 86400 + 9 * kHour, 0, 0}};
  const auto w = segment_windows(evs, 7, 0);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].size(), 2u);
  EXPECT_DOUBLE_EQ(w[0][0].tau, 24.0 + 10.0);  // measured from Monday 00:00
  EXPECT_DOUBLE_EQ(w[0][1].tau, 1.0);
  EXPECT_DOUBLE_EQ(w[1][0].tau, 9.0);
  EXPECT_EQ(w[0][0].meta, MetadataClass::OfficeHours);
}

TEST(Dataset, PipelineInvariants) {
  std::vector<RawEvent> raw;
  for (int i = 0; i < 400; ++i) {
    const std::string s = i % 3 == 0 ? "a" : (i % 3 == 1 ? "b" : "c");
    raw.push_back({kTuesday + i * 5 * kHour, s, i % 2 ? LabelSet{"d"} : LabelSet{"d", "e"}});
  }
  DatasetConfig cfg;
  const Dataset ds = build_dataset(raw, cfg);
  EXPECT_EQ(ds.nodes.size(), 5u);
  EXPECT_EQ(ds.sets.size(), 2u);
  const std::size_t total = ds.event_count(ds.splits.train) + ds.event_count(ds.splits.dev) +
                            ds.event_count(ds.splits.test);
  EXPECT_EQ(total, raw.size());
  for (const auto* part : {&ds.splits.train, &ds.splits.dev, &ds.splits.test})
    for (const auto& seq : *part)
      for (const auto& ev : seq) {
        EXPECT_LT(ev.sender, ds.nodes.size());
        EXPECT_LT(ev.recipient_set, ds.sets.size());
        EXPECT_GT(ev.tau, 0.0);
      }
  EXPECT_EQ(ds.norm, compute_norm_stats(ds.splits.train));
}
