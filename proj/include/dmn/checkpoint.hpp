#pragma once

// A trained model together with everything generation needs: participant and
// recipient-set vocabularies, normalization statistics and the dataset's
// time-zone offset. Checkpoints are JSON documents:
//
//   {
//     "format": "dmn-checkpoint", "version": 1,
//     "config": {"n_senders", "n_recipient_sets", "K", "d_embed", "d_hidden", "recipient_mode"},
//     "seed": int,
//     "nodes": [label...],                       // participant id -> label
//     "recipient_sets": [[label...]...],         // set id -> sorted labels
//     "recipient_counts": [int...], "min_count": int, "dropped_event_count": int,
//     "norm": {"mean_log_tau", "std_log_tau"},
//     "tz_offset_minutes": int,
//     "sender_top_set": [set id...],             // per-sender most frequent set in training
//     "vocab_hash": "16 hex digits",
//     "weights": {name: {"shape": [rows, cols], "data": [...]}}
//   }
//
// Doubles are written in shortest round-trip form, so save -> load is bit-exact.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmn/errors.hpp"
#include "dmn/event_data.hpp"
#include "dmn/model.hpp"

namespace dmn {

inline constexpr int kCheckpointVersion = 1;

/// FNV-1a over participant labels and recipient sets; identifies a vocabulary.
inline std::string vocab_hash(const NodeVocabulary& nodes, const RecipientVocabulary& sets) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const auto& l : nodes.labels) feed(l);
  feed("|");
  for (const auto& s : sets.sets) {
    for (const auto& l : s) feed(l);
    feed(";");
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct ModelBundle {
  LogNormMixNet net;
  NodeVocabulary nodes;
  RecipientVocabulary sets;
  NormStats norm;
  int tz_offset_minutes = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> sender_top_set;
  std::map<std::vector<std::size_t>, std::size_t> set_by_members;  // derived

  /// Sorted participant ids of a recipient set.
  const std::vector<std::size_t>& members(std::size_t set_id) const { return net.recipient_members().at(set_id); }

  std::string vocab_hash() const;

  void rebuild_index() {
    set_by_members.clear();
    for (std::size_t i = 0; i < sets.size(); ++i) set_by_members.emplace(members(i), i);
  }
};

inline std::string ModelBundle::vocab_hash() const { return dmn::vocab_hash(nodes, sets); }

inline std::vector<std::vector<std::size_t>> member_table(const NodeVocabulary& nodes,
                                                          const RecipientVocabulary& sets) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(sets.size());
  for (const auto& s : sets.sets) {
    std::vector<std::size_t> ids;
    for (const auto& l : s) ids.push_back(nodes.id(l));
    std::sort(ids.begin(), ids.end());
    out.push_back(std::move(ids));
  }
  return out;
}

/// Fresh (untrained) bundle for a dataset. n_senders and n_recipient_sets are
/// taken from the dataset vocabularies.
inline ModelBundle make_bundle(const Dataset& ds, ModelConfig cfg, std::uint64_t seed) {
  cfg.n_senders = ds.nodes.size();
  cfg.n_recipient_sets = ds.sets.size();
  ModelBundle b;
  b.net = LogNormMixNet(cfg, seed, member_table(ds.nodes, ds.sets));
  b.nodes = ds.nodes;
  b.sets = ds.sets;
  b.norm = ds.norm;
  b.tz_offset_minutes = ds.config.tz_offset_minutes;
  b.seed = seed;
  std::vector<std::map<std::size_t, std::size_t>> counts(ds.nodes.size());
  for (const auto& seq : ds.splits.train)
    for (const auto& ev : seq) ++counts[ev.sender][ev.recipient_set];
  b.sender_top_set.assign(ds.nodes.size(), 0);
  for (std::size_t s = 0; s < counts.size(); ++s) {
    std::size_t best = 0, best_n = 0;
    for (const auto& [id, n] : counts[s])
      if (n > best_n) best = id, best_n = n;
    b.sender_top_set[s] = best;
  }
  b.rebuild_index();
  return b;
}

inline nlohmann::json to_json(const ModelBundle& b) {
  using nlohmann::json;
  const ModelConfig& c = b.net.config();
  json j;
  j["format"] = "dmn-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = {{"n_senders", c.n_senders}, {"n_recipient_sets", c.n_recipient_sets},
                 {"K", c.K},           {"d_embed", c.d_embed},
                 {"d_hidden", c.d_hidden}, {"recipient_mode", std::string(recipient_mode_name(c.recipient_mode))}};
  j["seed"] = b.seed;
  j["nodes"] = b.nodes.labels;
  j["recipient_sets"] = b.sets.sets;
  j["recipient_counts"] = b.sets.counts;
  j["min_count"] = b.sets.min_count;
  j["dropped_event_count"] = b.sets.dropped_event_count;
  j["norm"] = {{"mean_log_tau", b.norm.mean_log_tau}, {"std_log_tau", b.norm.std_log_tau}};
  j["tz_offset_minutes"] = b.tz_offset_minutes;
  j["sender_top_set"] = b.sender_top_set;
  j["vocab_hash"] = b.vocab_hash();
  json w = json::object();
  for (const auto& [name, t] : b.net.params().named()) w[name] = {{"shape", {t->rows, t->cols}}, {"data", t->data}};
  j["weights"] = std::move(w);
  return j;
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "dmn-checkpoint") throw DataError("not a dmn checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw DataError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    ModelBundle b;
    const auto& jc = j.at("config");
    ModelConfig c;
    c.n_senders = jc.at("n_senders").get<std::size_t>();
    c.n_recipient_sets = jc.at("n_recipient_sets").get<std::size_t>();
    c.K = jc.at("K").get<std::size_t>();
    c.d_embed = jc.at("d_embed").get<std::size_t>();
    c.d_hidden = jc.at("d_hidden").get<std::size_t>();
    c.recipient_mode = parse_recipient_mode(jc.at("recipient_mode").get<std::string>());
    b.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& l : j.at("nodes")) {
      b.nodes.index.emplace(l.get<std::string>(), b.nodes.labels.size());
      b.nodes.labels.push_back(l.get<std::string>());
    }
    for (const auto& s : j.at("recipient_sets")) {
      b.sets.index.emplace(s.get<LabelSet>(), b.sets.sets.size());
      b.sets.sets.push_back(s.get<LabelSet>());
    }
    b.sets.counts = j.at("recipient_counts").get<std::vector<std::size_t>>();
    b.sets.min_count = j.at("min_count").get<std::size_t>();
    b.sets.dropped_event_count = j.at("dropped_event_count").get<std::size_t>();
    b.norm.mean_log_tau = j.at("norm").at("mean_log_tau").get<double>();
    b.norm.std_log_tau = j.at("norm").at("std_log_tau").get<double>();
    b.tz_offset_minutes = j.at("tz_offset_minutes").get<int>();
    b.sender_top_set = j.at("sender_top_set").get<std::vector<std::size_t>>();
    b.net = LogNormMixNet(c, b.seed, member_table(b.nodes, b.sets));
    const auto& w = j.at("weights");
    for (const auto& [name, t] : b.net.params().named()) {
      const auto& jt = w.at(name);
      const auto shape = jt.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != t->rows || shape[1] != t->cols)
        throw DataError("checkpoint weight '" + name + "' has the wrong shape");
      t->data = jt.at("data").get<std::vector<double>>();
      if (t->data.size() != t->rows * t->cols) throw DataError("checkpoint weight '" + name + "' is truncated");
    }
    if (j.contains("vocab_hash") && j.at("vocab_hash").get<std::string>() != b.vocab_hash())
      throw DataError("checkpoint vocabulary hash mismatch");
    b.rebuild_index();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const ModelBundle& b, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out << to_json(b).dump() << '\n';
}

inline ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint '" + path + "': " + e.what());
  }
  return bundle_from_json(j);
}

}  // namespace dmn
