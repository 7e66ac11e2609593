#pragma once

#include <algorithm>
#include <cctype>
#include <sstream>
#include <string>
#include <vector>

#include "pgvi/common.hpp"

namespace pgvi {

// One random-effect term "(c1 + c2 | group)". covariates holds the inner
// design columns in order; the group intercept is spelled "1".
struct ReTerm {
  std::vector<std::string> covariates;
  std::string group;
  bool operator==(const ReTerm&) const = default;
};

// Parsed model description, e.g. "y/n ~ 1 + inc + (1 + inc | state)".
// trials is empty for a Bernoulli response. The intercept is carried inside
// fixed_terms as the term "1".
struct ModelFormula {
  std::string response;
  std::string trials;
  std::vector<std::string> fixed_terms;
  std::vector<ReTerm> re_terms;
  bool operator==(const ModelFormula&) const = default;
};

namespace detail {

struct Token {
  enum Kind { Ident, Zero, One, Tilde, Plus, Slash, LParen, RParen, Bar, End } kind;
  std::string text;
  std::size_t pos;  // byte offset into the formula string
};

class FormulaLexer {
 public:
  explicit FormulaLexer(const std::string& s) : s_(s) {}

  Token next() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    const std::size_t start = i_;
    if (i_ >= s_.size()) return {Token::End, "", start};
    const char c = s_[i_];
    switch (c) {
      case '~': ++i_; return {Token::Tilde, "~", start};
      case '+': ++i_; return {Token::Plus, "+", start};
      case '/': ++i_; return {Token::Slash, "/", start};
      case '(': ++i_; return {Token::LParen, "(", start};
      case ')': ++i_; return {Token::RParen, ")", start};
      case '|': ++i_; return {Token::Bar, "|", start};
      default: break;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i_;
      while (j < s_.size() &&
             (std::isalnum(static_cast<unsigned char>(s_[j])) || s_[j] == '_' || s_[j] == '.'))
        ++j;
      Token t{Token::Ident, s_.substr(i_, j - i_), start};
      i_ = j;
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i_;
      while (j < s_.size() && std::isalnum(static_cast<unsigned char>(s_[j]))) ++j;
      const std::string text = s_.substr(i_, j - i_);
      if (text == "0") { i_ = j; return {Token::Zero, text, start}; }
      if (text == "1") { i_ = j; return {Token::One, text, start}; }
      fail(start, "numeric literal '" + text + "' is not a valid term (only 0 and 1 are allowed)");
    }
    fail(start, std::string("unexpected character '") + c + "'");
    return {};  // unreachable
  }

  [[noreturn]] static void fail(std::size_t pos, const std::string& what) {
    std::ostringstream os;
    os << "formula parse error at byte " << pos << ": " << what;
    throw FormulaError(os.str());
  }

 private:
  const std::string& s_;
  std::size_t i_ = 0;
};

}  // namespace detail

// Parses the model grammar
//   model    := response "~" rhs
//   response := ident | ident "/" ident
//   rhs      := term ("+" term)*
//   term     := "0" | "1" | ident | "(" reinner "|" ident ")"
//   reinner  := ("0" | "1" | ident) ("+" ident)*
// A fixed (or inner) intercept is implicit unless suppressed with a leading
// "0" term. Throws FormulaError with a byte offset on malformed input.
inline ModelFormula parse_formula(const std::string& text) {
  using detail::Token;
  detail::FormulaLexer lex(text);
  Token t = lex.next();

  auto expect = [&](Token::Kind k, const char* what) {
    if (t.kind != k) detail::FormulaLexer::fail(t.pos, std::string("expected ") + what);
    Token got = t;
    t = lex.next();
    return got;
  };

  ModelFormula f;
  f.response = expect(Token::Ident, "response identifier").text;
  if (t.kind == Token::Slash) {
    t = lex.next();
    f.trials = expect(Token::Ident, "trials identifier after '/'").text;
  }
  expect(Token::Tilde, "'~'");

  bool suppress_intercept = false;
  bool explicit_intercept = false;
  for (;;) {
    if (t.kind == Token::Zero) {
      if (suppress_intercept)
        detail::FormulaLexer::fail(t.pos, "duplicate '0' term");
      suppress_intercept = true;
      t = lex.next();
    } else if (t.kind == Token::One) {
      if (explicit_intercept)
        detail::FormulaLexer::fail(t.pos, "duplicate '1' term");
      explicit_intercept = true;
      f.fixed_terms.push_back("1");
      t = lex.next();
    } else if (t.kind == Token::Ident) {
      if (std::find(f.fixed_terms.begin(), f.fixed_terms.end(), t.text) != f.fixed_terms.end())
        detail::FormulaLexer::fail(t.pos, "duplicate fixed term '" + t.text + "'");
      f.fixed_terms.push_back(t.text);
      t = lex.next();
    } else if (t.kind == Token::LParen) {
      const std::size_t open_pos = t.pos;
      t = lex.next();
      ReTerm re;
      if (t.kind == Token::Zero) {
        t = lex.next();  // "0 + ..." suppresses the inner intercept
      } else if (t.kind == Token::One) {
        re.covariates.push_back("1");
        t = lex.next();
      } else if (t.kind == Token::Ident) {
        re.covariates.push_back("1");  // implicit inner intercept
        re.covariates.push_back(t.text);
        t = lex.next();
      } else {
        detail::FormulaLexer::fail(t.pos, "expected random-effect covariate");
      }
      while (t.kind == Token::Plus) {
        t = lex.next();
        Token c = expect(Token::Ident, "random-effect covariate after '+'");
        if (std::find(re.covariates.begin(), re.covariates.end(), c.text) != re.covariates.end())
          detail::FormulaLexer::fail(c.pos, "duplicate random-effect covariate '" + c.text + "'");
        re.covariates.push_back(c.text);
      }
      expect(Token::Bar, "'|' in random-effect term");
      re.group = expect(Token::Ident, "grouping identifier").text;
      if (t.kind != Token::RParen)
        detail::FormulaLexer::fail(t.pos, "expected ')' closing random-effect term opened at byte " +
                                              std::to_string(open_pos));
      t = lex.next();
      if (re.covariates.empty())
        detail::FormulaLexer::fail(open_pos, "random-effect term has no covariates");
      f.re_terms.push_back(std::move(re));
    } else {
      detail::FormulaLexer::fail(t.pos, "expected model term");
    }
    if (t.kind != Token::Plus) break;
    t = lex.next();
  }
  if (t.kind != Token::End)
    detail::FormulaLexer::fail(t.pos, "unexpected trailing input");

  if (suppress_intercept && explicit_intercept)
    throw FormulaError("formula mixes '0' and '1' intercept terms");
  if (!suppress_intercept && !explicit_intercept)
    f.fixed_terms.insert(f.fixed_terms.begin(), "1");

  // Each random-effect covariate (including "1") must be mapped onto a fixed
  // column of the same name; collect every unmatched one.
  std::vector<std::string> missing;
  for (const auto& re : f.re_terms)
    for (const auto& c : re.covariates)
      if (std::find(f.fixed_terms.begin(), f.fixed_terms.end(), c) == f.fixed_terms.end() &&
          std::find(missing.begin(), missing.end(), c) == missing.end())
        missing.push_back(c);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw FormulaError("random-effect covariates not among fixed terms: " + list);
  }

  if (f.fixed_terms.empty())
    throw FormulaError("model has no fixed-effect terms");
  if (!f.trials.empty() && f.trials == f.response)
    throw FormulaError("response and trials must be distinct columns");
  return f;
}

// Canonical rendering; parse(to_string(f)) == f.
inline std::string to_string(const ModelFormula& f) {
  std::ostringstream os;
  os << f.response;
  if (!f.trials.empty()) os << " / " << f.trials;
  os << " ~ ";
  bool first = true;
  auto emit = [&](const std::string& s) {
    if (!first) os << " + ";
    os << s;
    first = false;
  };
  const bool has_intercept =
      std::find(f.fixed_terms.begin(), f.fixed_terms.end(), "1") != f.fixed_terms.end();
  if (!has_intercept) emit("0");
  for (const auto& term : f.fixed_terms) emit(term);
  for (const auto& re : f.re_terms) {
    std::string inner;
    const bool inner_intercept = !re.covariates.empty() && re.covariates.front() == "1";
    if (!inner_intercept) inner = "0";
    for (const auto& c : re.covariates) inner += (inner.empty() ? "" : " + ") + c;
    emit("(" + inner + " | " + re.group + ")");
  }
  return os.str();
}

// Checks that every column the formula names exists in a data header.
inline void validate_against_header(const ModelFormula& f,
                                    const std::vector<std::string>& header) {
  auto present = [&](const std::string& name) {
    return std::find(header.begin(), header.end(), name) != header.end();
  };
  std::vector<std::string> missing;
  auto need = [&](const std::string& name) {
    if (name.empty() || name == "1" || name == "0") return;
    if (!present(name) && std::find(missing.begin(), missing.end(), name) == missing.end())
      missing.push_back(name);
  };
  need(f.response);
  need(f.trials);
  for (const auto& term : f.fixed_terms) need(term);
  for (const auto& re : f.re_terms) {
    for (const auto& c : re.covariates) need(c);
    need(re.group);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("columns named in formula are missing from data: " + list);
  }
}

}  // namespace pgvi
