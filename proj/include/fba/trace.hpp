#ifndef FBA_TRACE_HPP
#define FBA_TRACE_HPP

// Offline checks over an emitted trace.
//
// Line format: time_ns,node,event,r_q,lock_digest,lockite,decided
// Events: tick | send:<tok>[>to] | recv:<tok> | drop:<tok> | decide:<digest>/<iter>
//         | corrupt:<strategy>
// where <tok> = kind/sender/iteration/value_digest.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fba/core.hpp"

namespace fba {

struct TraceHeader {
  std::string protocol;
  std::size_t n = 0;
  std::size_t t_max = 0;
  std::size_t quorum = 0;
  std::int64_t lambda_ns = 0;
  std::uint64_t seed = 0;
};

struct TraceLine {
  std::int64_t time_ns = 0;
  NodeIndex node = 0;
  std::string event;
  std::string detail;
  std::optional<NodeIndex> to;
  std::string round;
  std::string lock_digest;
  std::int64_t lockite = -1;
  std::string decided;
};

struct MessageToken {
  std::string kind;
  NodeIndex sender = 0;
  std::string iteration;
  std::string digest;

  static std::optional<MessageToken> parse(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
      if (c == '/') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    parts.push_back(cur);
    if (parts.size() != 4) return std::nullopt;
    try {
      return MessageToken{parts[0], static_cast<NodeIndex>(std::stoul(parts[1])), parts[2], parts[3]};
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
};

struct VerifyReport {
  std::size_t lines = 0;
  std::size_t events = 0;
  std::vector<std::string> errors;
  bool ok() const { return errors.empty(); }
};

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

inline std::optional<TraceHeader> parse_header(const std::vector<std::string>& lines) {
  for (const auto& l : lines) {
    if (l.rfind("# protocol=", 0) != 0) continue;
    TraceHeader h;
    std::istringstream in(l.substr(2));
    for (std::string kv; in >> kv;) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      auto k = kv.substr(0, eq), v = kv.substr(eq + 1);
      try {
        if (k == "protocol") h.protocol = v;
        else if (k == "n") h.n = std::stoul(v);
        else if (k == "t_max") h.t_max = std::stoul(v);
        else if (k == "quorum") h.quorum = std::stoul(v);
        else if (k == "lambda_ns") h.lambda_ns = std::stoll(v);
        else if (k == "seed") h.seed = std::stoull(v);
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
    return h;
  }
  return std::nullopt;
}

inline std::optional<TraceLine> parse_trace_line(const std::string& l) {
  std::vector<std::string> f;
  std::string cur;
  for (char c : l) {
    if (c == ',') {
      f.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  f.push_back(cur);
  if (f.size() != 7) return std::nullopt;
  TraceLine t;
  try {
    t.time_ns = std::stoll(f[0]);
    t.node = static_cast<NodeIndex>(std::stoul(f[1]));
    t.lockite = f[5] == "-" ? -1 : std::stoll(f[5]);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  auto colon = f[2].find(':');
  t.event = f[2].substr(0, colon);
  if (colon != std::string::npos) t.detail = f[2].substr(colon + 1);
  if (t.event == "send") {
    auto gt = t.detail.find('>');
    if (gt != std::string::npos) {
      try {
        t.to = static_cast<NodeIndex>(std::stoul(t.detail.substr(gt + 1)));
      } catch (const std::exception&) {
        return std::nullopt;
      }
      t.detail = t.detail.substr(0, gt);
    }
  }
  t.round = f[3];
  t.lock_digest = f[4];
  t.decided = f[6];
  return t;
}

/// Protocol sends per message kind, counted the same way as RunMetrics:
/// a broadcast is n sends, a unicast one.
inline std::array<std::uint64_t, 5> trace_message_counts(const std::vector<std::string>& lines) {
  std::array<std::uint64_t, 5> out{};
  auto header = parse_header(lines);
  const std::size_t n = header ? header->n : 0;
  for (const auto& l : lines) {
    if (l.empty() || l[0] == '#') continue;
    auto t = parse_trace_line(l);
    if (!t || t->event != "send") continue;
    auto tok = MessageToken::parse(t->detail);
    if (!tok) continue;
    for (std::size_t k = 1; k < out.size(); ++k)
      if (tok->kind == kind_name(static_cast<MessageKind>(k))) out[k] += t->to ? 1 : n;
  }
  return out;
}

/// Replays the run's safety invariants from the trace alone.
inline VerifyReport verify_trace(const std::vector<std::string>& lines) {
  VerifyReport rep;
  rep.lines = lines.size();
  auto fail = [&](std::size_t ln, const std::string& what) {
    if (rep.errors.size() < 100) rep.errors.push_back("line " + std::to_string(ln + 1) + ": " + what);
  };
  auto header = parse_header(lines);
  if (!header) {
    rep.errors.push_back("missing header");
    return rep;
  }
  const auto t_max = header->t_max;

  std::int64_t last_time = 0;
  std::set<NodeIndex> corrupted;
  std::set<std::string> sent;
  std::map<NodeIndex, std::string> decisions;
  std::optional<std::string> decided_value;
  std::set<std::tuple<NodeIndex, std::string, std::string>> votes;
  std::map<std::int64_t, std::map<std::string, std::set<NodeIndex>>> honest_commits;
  std::map<NodeIndex, std::pair<std::string, std::int64_t>> locks;

  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto& l = lines[ln];
    if (l.empty() || l[0] == '#') continue;
    auto t = parse_trace_line(l);
    if (!t) {
      fail(ln, "malformed line");
      continue;
    }
    ++rep.events;
    if (t->node >= header->n) fail(ln, "unknown node");
    if (t->time_ns < last_time) fail(ln, "time goes backwards");
    last_time = t->time_ns;
    const bool honest = !corrupted.contains(t->node);

    if (t->event == "corrupt") {
      corrupted.insert(t->node);
    } else if (t->event == "send") {
      auto tok = MessageToken::parse(t->detail);
      if (!tok) {
        fail(ln, "bad message token");
        continue;
      }
      sent.insert(t->detail);
      if (honest && tok->sender != t->node) fail(ln, "honest node sent under another identity");
      if (honest && (tok->kind == "precommit" || tok->kind == "commit")) {
        if (!votes.insert({t->node, tok->kind, tok->iteration}).second)
          fail(ln, "node " + std::to_string(t->node) + " voted twice in " + tok->kind + " " + tok->iteration);
        if (tok->kind == "commit" && tok->digest != "SKIP") {
          const std::int64_t r = tok->iteration == "fast" ? 0 : std::stoll(tok->iteration);
          honest_commits[r][tok->digest].insert(t->node);
        }
      }
    } else if (t->event == "recv" || t->event == "drop") {
      if (!sent.contains(t->detail)) fail(ln, "delivery of a message never sent: " + t->detail);
    } else if (t->event == "decide") {
      auto slash = t->detail.rfind('/');
      const auto digest = t->detail.substr(0, slash);
      if (decisions.contains(t->node)) fail(ln, "node decided twice");
      decisions[t->node] = digest;
      if (t->decided != digest) fail(ln, "decided column disagrees with decide event");
      if (honest) {
        if (!decided_value)
          decided_value = digest;
        else if (*decided_value != digest)
          fail(ln, "agreement violated: " + digest + " vs " + *decided_value);
      }
    } else if (t->event != "tick") {
      fail(ln, "unknown event " + t->event);
    }

    if (honest && t->decided != "-" && !decisions.contains(t->node)) fail(ln, "decided column set before decide event");

    if (honest && t->lock_digest != "-") {
      std::pair<std::string, std::int64_t> now{t->lock_digest, t->lockite};
      auto prev = locks.find(t->node);
      if (prev != locks.end() && prev->second != now && now.second >= 0) {
        for (const auto& [r, by_value] : honest_commits) {
          if (r >= now.second) break;
          for (const auto& [v, who] : by_value)
            if (who.size() >= t_max + 1 && v != now.first)
              fail(ln, "lock moved to " + now.first + " after t_max+1 honest commits of " + v);
        }
      }
      locks[t->node] = now;
    }
  }
  return rep;
}

inline std::vector<std::string> read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return split_lines(ss.str());
}

inline void write_trace_file(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file: " + path);
  out << join_lines(lines);
}

}  // namespace fba

#endif  // FBA_TRACE_HPP
