#pragma once

// Text generation behind one interface: a builtin order-3 n-gram generator
// trained on an email corpus, and an HTTP client for external providers.
// Also hosts keyword extraction and the TF-IDF cosine used for coherence.
//
// Provider wire protocol (HTTP, JSON):
//   POST /v1/generate
//     {"kind":"subject"|"body","prompt":str,"context":[str],"max_tokens":int,"seed":int}
//   200 -> {"text":str}
//   non-2xx -> {"error":str}

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dmn/corpus.hpp"
#include "dmn/errors.hpp"
#include "dmn/rng.hpp"

namespace dmn {

enum class GenKind { Subject, Body };

inline std::string_view gen_kind_name(GenKind k) { return k == GenKind::Subject ? "subject" : "body"; }

inline GenKind parse_gen_kind(std::string_view s) {
  if (s == "subject") return GenKind::Subject;
  if (s == "body") return GenKind::Body;
  throw ProviderError("unknown generation kind '" + std::string(s) + "'");
}

struct GenRequest {
  GenKind kind = GenKind::Subject;
  std::string prompt;                // keyword for subjects, subject for bodies
  std::vector<std::string> context;  // prior thread text, oldest first
  int max_tokens = 12;
  std::uint64_t seed = 0;

  void validate() const {
    if (kind == GenKind::Subject && prompt.empty()) throw ProviderError("subject request needs a prompt");
    if (max_tokens < 1) throw ProviderError("max_tokens must be positive");
  }
};

inline nlohmann::json to_json(const GenRequest& r) {
  return {{"kind", std::string(gen_kind_name(r.kind))},
          {"prompt", r.prompt},
          {"context", r.context},
          {"max_tokens", r.max_tokens},
          {"seed", r.seed}};
}

/// Strict parse of a wire request; throws ProviderError on any schema violation.
inline GenRequest request_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ProviderError("request must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "kind" && key != "prompt" && key != "context" && key != "max_tokens" && key != "seed")
      throw ProviderError("unknown request field '" + key + "'");
  try {
    GenRequest r;
    r.kind = parse_gen_kind(j.at("kind").get<std::string>());
    r.prompt = j.at("prompt").get<std::string>();
    r.context = j.at("context").get<std::vector<std::string>>();
    r.max_tokens = j.at("max_tokens").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("malformed request: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tokens and stopwords
// ---------------------------------------------------------------------------

/// Lowercase words made of letters, digits and inner apostrophes.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && cur.back() == '\'') cur.pop_back();
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '\'' && !cur.empty()) {
      cur.push_back('\'');
    } else {
      flush();
    }
  }
  flush();
  return out;
}

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words{
      "a",      "about", "above", "after", "again", "all",   "also",  "am",    "an",    "and",   "any",   "are",
      "as",     "at",    "be",    "been",  "before", "being", "below", "both",  "but",   "by",    "can",   "could",
      "did",    "do",    "does",  "doing", "down",  "during", "each", "few",   "for",   "from",  "further", "had",
      "has",    "have",  "having", "he",   "her",   "here",  "hers",  "him",   "his",   "how",   "i",     "if",
      "in",     "into",  "is",    "it",    "its",   "itself", "just", "let",   "me",    "more",  "most",  "my",
      "no",     "nor",   "not",   "now",   "of",    "off",   "on",    "once",  "only",  "or",    "other", "our",
      "ours",   "out",   "over",  "own",   "re",    "fw",    "fwd",   "same",  "she",   "should", "so",   "some",
      "such",   "than",  "that",  "the",   "their", "them",  "then",  "there", "these", "they",  "this",  "those",
      "through", "to",   "too",   "under", "until", "up",    "us",    "very",  "was",   "we",    "were",  "what",
      "when",   "where", "which", "while", "who",   "whom",  "why",   "will",  "with",  "would", "you",   "your",
      "yours",  "i'm",   "it's",  "we're", "you're", "don't", "let's", "please", "thanks", "hi",  "hello", "dear"};
  return words;
}

inline std::vector<std::string> content_tokens(std::string_view text) {
  auto toks = tokenize(text);
  std::erase_if(toks, [](const std::string& t) { return stopwords().contains(t); });
  return toks;
}

// ---------------------------------------------------------------------------
// Keywords
// ---------------------------------------------------------------------------

enum class KeywordMode { TfIdf, Frequency };

inline KeywordMode parse_keyword_mode(std::string_view s) {
  if (s == "tfidf") return KeywordMode::TfIdf;
  if (s == "frequency") return KeywordMode::Frequency;
  throw ConfigError("keyword mode must be 'tfidf' or 'frequency', got '" + std::string(s) + "'");
}

struct KeywordProfile {
  std::string sender;
  std::vector<std::pair<std::string, double>> words;  // descending score, ties alphabetical
};

/// Ranks each sender's unigrams. A sender's document is the concatenation of
/// their subjects and bodies; idf is the smoothed ln((1+N)/(1+df)) + 1 over
/// the N sender documents.
inline std::map<std::string, KeywordProfile> extract_keywords(const std::vector<CorpusEmail>& corpus,
                                                              std::size_t k = 10,
                                                              KeywordMode mode = KeywordMode::TfIdf) {
  if (corpus.empty()) throw DataError("keyword extraction needs a non-empty corpus");
  std::map<std::string, std::map<std::string, double>> tf;
  for (const auto& e : corpus) {
    auto& counts = tf[e.sender];
    for (const auto& w : content_tokens(e.subject + " " + e.body)) counts[w] += 1.0;
  }
  std::map<std::string, double> df;
  for (const auto& [_, counts] : tf)
    for (const auto& [w, __] : counts) df[w] += 1.0;
  const double n_docs = static_cast<double>(tf.size());

  std::map<std::string, KeywordProfile> out;
  for (const auto& [sender, counts] : tf) {
    double total = 0.0;
    for (const auto& [_, c] : counts) total += c;
    KeywordProfile p{sender, {}};
    for (const auto& [w, c] : counts) {
      const double score =
          mode == KeywordMode::Frequency ? c : (c / total) * (std::log((1.0 + n_docs) / (1.0 + df[w])) + 1.0);
      p.words.emplace_back(w, score);
    }
    std::sort(p.words.begin(), p.words.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (p.words.size() > k) p.words.resize(k);
    out.emplace(sender, std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Coherence
// ---------------------------------------------------------------------------

/// Cosine of stopword-filtered TF-IDF vectors, idf smoothed over the pair.
inline double coherence_similarity(std::string_view a, std::string_view b) {
  std::map<std::string, std::array<double, 2>> tf;
  for (const auto& w : content_tokens(a)) tf[w][0] += 1.0;
  for (const auto& w : content_tokens(b)) tf[w][1] += 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [_, c] : tf) {
    const double df = (c[0] > 0.0) + (c[1] > 0.0);
    const double idf = std::log(3.0 / (1.0 + df)) + 1.0;
    const double x = c[0] * idf, y = c[1] * idf;
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Builtin n-gram generator
// ---------------------------------------------------------------------------

/// Word-level order-3 model with backoff. A continuation is drawn with weight
/// count + alpha among the continuations observed for the longest matching
/// context; unseen words never receive mass.
class NgramModel {
 public:
  static constexpr double kAlpha = 0.1;
  static inline const std::string kBos = "<s>";
  static inline const std::string kEos = "</s>";

  void add(std::string_view text) {
    auto toks = tokenize(text);
    if (toks.empty()) return;
    std::string p2 = kBos, p1 = kBos;
    toks.push_back(kEos);
    for (const auto& w : toks) {
      ++tri_[p2 + ' ' + p1][w];
      ++bi_[p1][w];
      if (w != kEos) ++uni_[w];
      p2 = std::move(p1);
      p1 = w;
    }
  }

  bool empty() const { return uni_.empty(); }
  bool known(const std::string& w) const { return uni_.contains(w); }

  /// Seeded generation. `prefix` words are emitted first and condition the
  /// continuation; an empty prefix starts from a unigram draw.
  std::vector<std::string> generate(const std::vector<std::string>& prefix, int max_tokens, Rng& rng) const {
    std::vector<std::string> out;
    if (empty() || max_tokens <= 0) return out;
    for (const auto& w : prefix) {
      if (static_cast<int>(out.size()) == max_tokens) return out;
      out.push_back(w);
    }
    if (out.empty()) out.push_back(draw(uni_, rng));
    while (static_cast<int>(out.size()) < max_tokens) {
      const std::string& p1 = out.back();
      const std::string& p2 = out.size() >= 2 ? out[out.size() - 2] : kBos;
      const std::map<std::string, std::size_t>* table = nullptr;
      if (auto it = tri_.find(p2 + ' ' + p1); it != tri_.end()) {
        table = &it->second;
      } else if (auto jt = bi_.find(p1); jt != bi_.end()) {
        table = &jt->second;
      } else {
        table = &uni_;
      }
      std::string w = draw(*table, rng);
      if (w == kEos) break;
      out.push_back(std::move(w));
    }
    return out;
  }

 private:
  static std::string draw(const std::map<std::string, std::size_t>& table, Rng& rng) {
    std::vector<double> w;
    w.reserve(table.size());
    for (const auto& [_, c] : table) w.push_back(static_cast<double>(c) + kAlpha);
    auto it = table.begin();
    std::advance(it, static_cast<std::ptrdiff_t>(rng.categorical(w)));
    return it->first;
  }

  std::map<std::string, std::map<std::string, std::size_t>> tri_, bi_;
  std::map<std::string, std::size_t> uni_;
};

inline std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

inline std::string strip_reply_prefixes(std::string s) {
  for (bool again = true; again;) {
    again = false;
    for (std::string_view p : {"RE: ", "Re: ", "FW: ", "Fw: ", "FWD: ", "Fwd: "}) {
      if (s.starts_with(p)) {
        s.erase(0, p.size());
        again = true;
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

class TextProvider {
 public:
  virtual ~TextProvider() = default;
  virtual std::string generate(const GenRequest& req) = 0;
  virtual std::string name() const = 0;
  /// Throws ProviderError when the provider cannot serve requests.
  virtual void health_check() {}
};

/// Separate subject and body tables, trained on a corpus.
class BuiltinProvider : public TextProvider {
 public:
  BuiltinProvider() = default;
  explicit BuiltinProvider(const std::vector<CorpusEmail>& corpus) {
    for (const auto& e : corpus) {
      subject_.add(strip_reply_prefixes(e.subject));
      body_.add(e.body);
    }
  }

  NgramModel& subject_model() { return subject_; }
  NgramModel& body_model() { return body_; }

  std::string generate(const GenRequest& req) override {
    req.validate();
    Rng rng(req.seed);
    std::vector<std::string> words;
    if (req.kind == GenKind::Subject) {
      words = subject_.generate(tokenize(req.prompt), req.max_tokens, rng);
    } else {
      // Bodies open on a content word of the subject so replies stay on topic.
      std::vector<std::string> seeds;
      for (const auto& w : content_tokens(req.prompt))
        if (body_.known(w)) seeds.push_back(w);
      std::vector<std::string> prefix;
      if (!seeds.empty()) prefix.push_back(seeds[rng.below(seeds.size())]);
      words = body_.generate(prefix, req.max_tokens, rng);
    }
    if (words.empty()) words = tokenize(req.prompt);
    if (static_cast<int>(words.size()) > req.max_tokens) words.resize(static_cast<std::size_t>(req.max_tokens));
    std::string text = join_words(words);
    if (!text.empty()) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    if (req.kind == GenKind::Body && !text.empty()) text += '.';
    return text;
  }

  std::string name() const override { return "builtin"; }

  void health_check() override {
    if (subject_.empty() || body_.empty()) throw ProviderError("builtin provider has no training text");
  }

 private:
  NgramModel subject_, body_;
};

/// Client for the provider wire protocol. `endpoint` is a base URL such as
/// http://127.0.0.1:8080 or http://host:8080/prefix.
class RemoteProvider : public TextProvider {
 public:
  explicit RemoteProvider(std::string endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : endpoint_(std::move(endpoint)), timeout_(timeout) {
    const auto scheme = endpoint_.find("://");
    if (scheme == std::string::npos || endpoint_.substr(0, scheme) != "http")
      throw ConfigError("provider endpoint must be an http:// URL, got '" + endpoint_ + "'");
    const auto path = endpoint_.find('/', scheme + 3);
    host_ = endpoint_.substr(0, path);
    base_path_ = path == std::string::npos ? "" : endpoint_.substr(path);
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  }

  std::string generate(const GenRequest& req) override {
    req.validate();
    httplib::Client cli(host_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    auto res = cli.Post(base_path_ + "/v1/generate", to_json(req).dump(), "application/json");
    if (!res) throw ProviderError(fail("request failed: " + httplib::to_string(res.error())));
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw ProviderError(fail("HTTP " + std::to_string(res->status) + " with a non-JSON reply"));
    }
    if (res->status < 200 || res->status >= 300) {
      const std::string msg = body.is_object() && body.contains("error") && body["error"].is_string()
                                  ? body["error"].get<std::string>()
                                  : std::string("no error message");
      throw ProviderError(fail("HTTP " + std::to_string(res->status) + ": " + msg));
    }
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string())
      throw ProviderError(fail("reply lacks a string 'text' field"));
    std::string text = body["text"].get<std::string>();
    if (text.empty()) throw ProviderError(fail("empty text"));
    return text;
  }

  std::string name() const override { return endpoint_; }

  void health_check() override { generate(GenRequest{GenKind::Subject, "status", {}, 1, 0}); }

 private:
  std::string fail(const std::string& what) const { return "provider " + endpoint_ + ": " + what; }

  std::string endpoint_, host_, base_path_;
  std::chrono::milliseconds timeout_;
};

}  // namespace dmn
