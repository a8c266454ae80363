#pragma once

// Email corpus records: the text side of a dataset. One JSON object per line:
//   {"timestamp":int,"sender":str,"recipients":[str],"thread_id":int,
//    "type":"new|reply|fwd","subject":str,"body":str}

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmn/errors.hpp"

namespace dmn {

enum class CommType : std::uint8_t { NewThread = 0, Reply = 1, Fwd = 2 };

inline std::string_view comm_type_name(CommType t) {
  switch (t) {
    case CommType::NewThread:
      return "new";
    case CommType::Reply:
      return "reply";
    case CommType::Fwd:
      return "fwd";
  }
  return "new";
}

inline CommType parse_comm_type(std::string_view s) {
  if (s == "new") return CommType::NewThread;
  if (s == "reply") return CommType::Reply;
  if (s == "fwd") return CommType::Fwd;
  throw DataError("unknown communication type '" + std::string(s) + "'");
}

struct CorpusEmail {
  std::int64_t timestamp = 0;
  std::string sender;
  std::vector<std::string> recipients;
  std::int64_t thread_id = 0;
  CommType type = CommType::NewThread;
  std::string subject;
  std::string body;
};

inline nlohmann::json to_json(const CorpusEmail& e) {
  return {{"timestamp", e.timestamp}, {"sender", e.sender},   {"recipients", e.recipients},
          {"thread_id", e.thread_id}, {"type", std::string(comm_type_name(e.type))},
          {"subject", e.subject},     {"body", e.body}};
}

inline void write_corpus(std::ostream& out, const std::vector<CorpusEmail>& emails) {
  for (const auto& e : emails) out << to_json(e).dump() << '\n';
}

inline std::vector<CorpusEmail> read_corpus(std::istream& in) {
  std::vector<CorpusEmail> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusEmail e;
      e.timestamp = j.at("timestamp").get<std::int64_t>();
      e.sender = j.at("sender").get<std::string>();
      e.recipients = j.at("recipients").get<std::vector<std::string>>();
      e.thread_id = j.value("thread_id", std::int64_t{-1});
      e.type = parse_comm_type(j.value("type", std::string("new")));
      e.subject = j.value("subject", std::string());
      e.body = j.value("body", std::string());
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("corpus line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

inline std::vector<CorpusEmail> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path + "'");
  return read_corpus(in);
}

}  // namespace dmn
