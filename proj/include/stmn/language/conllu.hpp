#pragma once

#include <cctype>
#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stmn/errors.hpp"

// CoNLL-U ingestion. Only ID, FORM, HEAD and DEPREL are interpreted; every
// line is kept verbatim so a parsed document serializes back byte for byte.
namespace stmn::language {

struct ConlluToken {
  int id = 0;
  std::string form;
  int head = 0;
  std::string deprel;
  std::size_t line = 0;
};

struct ConlluSentence {
  std::vector<std::string> lines;  // comments, tokens and skipped rows, in file order
  std::vector<ConlluToken> tokens;
  std::size_t first_line = 0;

  std::size_t root_index() const {
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i].head == 0) return i;
    return tokens.size();
  }
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_int(const std::string& s, int& out) {
  if (s.empty() || s.size() > 9) return false;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  out = std::stoi(s);
  return true;
}

inline void check_sentence(const ConlluSentence& s) {
  const int n = static_cast<int>(s.tokens.size());
  int roots = 0;
  for (int i = 0; i < n; ++i) {
    const auto& t = s.tokens[static_cast<std::size_t>(i)];
    if (t.id != i + 1) throw ParseError("token ids must run 1..n, found " + std::to_string(t.id), t.line);
    if (t.head < 0 || t.head > n) {
      throw ParseError("HEAD " + std::to_string(t.head) + " does not name a token", t.line);
    }
    if (t.head == t.id) throw ParseError("token is its own head", t.line);
    if (t.head == 0 && ++roots > 1) throw ParseError("more than one token has HEAD=0", t.line);
  }
  if (roots == 0) throw ParseError("sentence has no token with HEAD=0", s.first_line);
  for (int i = 0; i < n; ++i) {
    int cur = i + 1;
    for (int steps = 0; cur != 0; ++steps) {
      if (steps > n) {
        throw ParseError("HEAD cycle through token " + std::to_string(i + 1),
                         s.tokens[static_cast<std::size_t>(i)].line);
      }
      cur = s.tokens[static_cast<std::size_t>(cur - 1)].head;
    }
  }
}

}  // namespace detail

inline std::vector<ConlluSentence> parse_conllu(std::string_view text) {
  std::vector<ConlluSentence> out;
  ConlluSentence current;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (current.lines.empty()) return;
    if (current.tokens.empty()) throw ParseError("sentence without tokens", current.first_line);
    detail::check_sentence(current);
    out.push_back(std::move(current));
    current = ConlluSentence{};
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    std::string line(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    pos = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') throw ParseError("CR line endings are not supported", line_no);
    if (line.empty()) {
      flush();
      continue;
    }
    if (current.lines.empty()) current.first_line = line_no;
    current.lines.push_back(line);
    if (line[0] == '#') continue;
    auto cols = detail::split_tabs(line);
    if (cols.size() != 10) {
      throw ParseError("expected 10 tab-separated columns, found " + std::to_string(cols.size()), line_no);
    }
    if (cols[0].find('-') != std::string::npos || cols[0].find('.') != std::string::npos) continue;
    ConlluToken tok;
    tok.line = line_no;
    if (!detail::parse_int(cols[0], tok.id)) throw ParseError("malformed ID '" + cols[0] + "'", line_no);
    if (!detail::parse_int(cols[6], tok.head)) throw ParseError("malformed HEAD '" + cols[6] + "'", line_no);
    tok.form = cols[1];
    tok.deprel = cols[7];
    if (tok.form.empty() || tok.deprel.empty()) throw ParseError("empty FORM or DEPREL", line_no);
    current.tokens.push_back(std::move(tok));
  }
  flush();
  return out;
}

inline std::string serialize_conllu(const std::vector<ConlluSentence>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    for (const auto& l : s.lines) {
      out += l;
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

// Builds a minimal sentence (other columns "_") from forms, heads and relations.
inline ConlluSentence make_sentence(const std::vector<std::string>& forms, const std::vector<int>& heads,
                                    const std::vector<std::string>& deprels) {
  ConlluSentence s;
  for (std::size_t i = 0; i < forms.size(); ++i) {
    std::ostringstream line;
    line << (i + 1) << '\t' << forms[i] << "\t_\t_\t_\t_\t" << heads[i] << '\t' << deprels[i] << "\t_\t_";
    s.lines.push_back(line.str());
    s.tokens.push_back({static_cast<int>(i + 1), forms[i], heads[i], deprels[i], i + 1});
  }
  detail::check_sentence(s);
  return s;
}

}  // namespace stmn::language
