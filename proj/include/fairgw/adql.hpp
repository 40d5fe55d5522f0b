#pragma once

// ADQL subset for ObsCore discovery:
//
//   SELECT [TOP n] (* | col, ...) FROM table
//     [WHERE expr] [ORDER BY col [ASC|DESC]]
//
// expr supports AND / OR / NOT, comparisons, BETWEEN, LIKE, IS [NOT] NULL and
// CONTAINS(POINT(...), CIRCLE(...)) = 0|1. Precedence: NOT, comparison, AND, OR.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "fairgw/error.hpp"
#include "fairgw/obscore.hpp"

namespace fairgw::adql {

enum class Errc {
  UnterminatedString,
  IllegalCharacter,
  SyntaxError,
  UnsupportedFeature,
  UnknownTable,
  UnknownColumn,
  TypeMismatch,
  DomainError,
};

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::UnterminatedString: return "UnterminatedString";
    case Errc::IllegalCharacter: return "IllegalCharacter";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::UnsupportedFeature: return "UnsupportedFeature";
    case Errc::UnknownTable: return "UnknownTable";
    case Errc::UnknownColumn: return "UnknownColumn";
    case Errc::TypeMismatch: return "TypeMismatch";
    case Errc::DomainError: return "DomainError";
  }
  return "Unknown";
}

/// Error with an optional byte offset into the query text.
class AdqlError : public Error<Errc> {
 public:
  AdqlError(Errc kind, const std::string& message, std::optional<std::size_t> offset = std::nullopt)
      : Error<Errc>(kind, offset ? message + " at offset " + std::to_string(*offset) : message), offset_(offset) {}

  [[nodiscard]] std::optional<std::size_t> offset() const noexcept { return offset_; }

  /// Lexing and parsing errors, as opposed to evaluation errors.
  [[nodiscard]] bool is_parse_error() const noexcept {
    return kind() == Errc::UnterminatedString || kind() == Errc::IllegalCharacter || kind() == Errc::SyntaxError ||
           kind() == Errc::UnsupportedFeature;
  }

 private:
  std::optional<std::size_t> offset_;
};

// ---------------------------------------------------------------------------
// Geometry

/// Great-circle distance in degrees (haversine form). Symmetric by
/// construction: the argument pairs are put in a fixed order first.
inline double angular_separation(double ra1, double dec1, double ra2, double dec2) {
  if (!(dec1 >= -90 && dec1 <= 90) || !(dec2 >= -90 && dec2 <= 90))
    throw AdqlError(Errc::DomainError, "declination outside [-90, 90]");
  if (std::pair(ra2, dec2) < std::pair(ra1, dec1)) {
    std::swap(ra1, ra2);
    std::swap(dec1, dec2);
  }
  constexpr double rad = std::numbers::pi / 180.0;
  const double sd = std::sin((dec2 - dec1) * rad / 2);
  const double sa = std::sin((ra2 - ra1) * rad / 2);
  const double h = sd * sd + std::cos(dec1 * rad) * std::cos(dec2 * rad) * sa * sa;
  if (h >= 1.0) return 180.0;
  return 2.0 * std::asin(std::sqrt(std::max(h, 0.0))) / rad;
}

// ---------------------------------------------------------------------------
// Tokens

enum class TokenKind { Keyword, Identifier, Number, String, Star, Comma, LParen, RParen, Operator, Plus, Minus, Slash, End };

struct Token {
  TokenKind kind;
  std::string text;  // keyword upper-cased; string literal unescaped
  double number = 0;
  std::size_t offset = 0;

  bool operator==(const Token&) const = default;
};

namespace detail {

inline std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::toupper(static_cast<unsigned char>(x)) == std::toupper(static_cast<unsigned char>(y));
         });
}

inline constexpr std::array<std::string_view, 41> kKeywords = {
    "SELECT", "TOP",     "FROM",     "WHERE",  "ORDER",   "BY",      "ASC",    "DESC",    "AND",
    "OR",     "NOT",     "BETWEEN",  "LIKE",   "IS",      "NULL",    "CONTAINS", "POINT",  "CIRCLE",
    "JOIN",   "INNER",   "LEFT",     "RIGHT",  "FULL",    "OUTER",   "NATURAL", "CROSS",  "ON",
    "USING",  "GROUP",   "HAVING",   "UNION",  "EXCEPT",  "INTERSECT", "DISTINCT", "ALL", "AS",
    "IN",     "EXISTS",  "OFFSET",   "ILIKE",  "LIMIT"};

inline bool is_keyword(std::string_view upper_word) {
  return std::find(kKeywords.begin(), kKeywords.end(), upper_word) != kKeywords.end();
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

}  // namespace detail

inline std::vector<Token> tokenize(std::string_view text) {
  using detail::is_digit;
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto starts_number = [&](std::size_t p) {
    return p < n && (is_digit(text[p]) || (text[p] == '.' && p + 1 < n && is_digit(text[p + 1])));
  };
  while (i < n) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (detail::is_ident_start(c)) {
      while (i < n && detail::is_ident_char(text[i])) ++i;
      const std::string_view word = text.substr(start, i - start);
      const std::string up = detail::upper(word);
      if (detail::is_keyword(up))
        out.push_back({TokenKind::Keyword, up, 0, start});
      else
        out.push_back({TokenKind::Identifier, std::string(word), 0, start});
      continue;
    }
    if (starts_number(i) || ((c == '+' || c == '-') && starts_number(i + 1))) {
      if (c == '+' || c == '-') ++i;
      while (i < n && is_digit(text[i])) ++i;
      if (i < n && text[i] == '.') {
        ++i;
        while (i < n && is_digit(text[i])) ++i;
      }
      if (i < n && (text[i] == 'e' || text[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < n && (text[j] == '+' || text[j] == '-')) ++j;
        if (j < n && is_digit(text[j])) {
          i = j;
          while (i < n && is_digit(text[i])) ++i;
        }
      }
      std::string lit(text.substr(start, i - start));
      const char* first = lit.data() + (lit[0] == '+' ? 1 : 0);
      double v = 0;
      auto [p, ec] = std::from_chars(first, lit.data() + lit.size(), v);
      if (ec != std::errc{} || p != lit.data() + lit.size())
        throw AdqlError(Errc::IllegalCharacter, "malformed number '" + lit + "'", start);
      out.push_back({TokenKind::Number, std::move(lit), v, start});
      continue;
    }
    if (c == '\'') {
      std::string s;
      ++i;
      bool closed = false;
      while (i < n) {
        if (text[i] == '\'') {
          if (i + 1 < n && text[i + 1] == '\'') {
            s += '\'';
            i += 2;
            continue;
          }
          ++i;
          closed = true;
          break;
        }
        s += text[i++];
      }
      if (!closed) throw AdqlError(Errc::UnterminatedString, "unterminated string literal", start);
      out.push_back({TokenKind::String, std::move(s), 0, start});
      continue;
    }
    auto single = [&](TokenKind k) {
      out.push_back({k, std::string(1, c), 0, start});
      ++i;
    };
    switch (c) {
      case '*': single(TokenKind::Star); continue;
      case ',': single(TokenKind::Comma); continue;
      case '(': single(TokenKind::LParen); continue;
      case ')': single(TokenKind::RParen); continue;
      case '+': single(TokenKind::Plus); continue;
      case '-': single(TokenKind::Minus); continue;
      case '/': single(TokenKind::Slash); continue;
      case '=': single(TokenKind::Operator); continue;
      case '<':
      case '>':
      case '!': {
        std::string op(1, c);
        if (i + 1 < n && (text[i + 1] == '=' || (c == '<' && text[i + 1] == '>'))) op += text[i + 1];
        if (op == "!") throw AdqlError(Errc::IllegalCharacter, "illegal character '!'", start);
        i += op.size();
        out.push_back({TokenKind::Operator, op, 0, start});
        continue;
      }
      default:
        throw AdqlError(Errc::IllegalCharacter, std::string("illegal character '") + c + "'", start);
    }
  }
  out.push_back({TokenKind::End, "", 0, n});
  return out;
}

// ---------------------------------------------------------------------------
// AST

/// Owning pointer with value semantics, for recursive variants.
template <class T>
class Box {
 public:
  Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}
  Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
  Box(Box&&) noexcept = default;
  Box& operator=(const Box& other) {
    if (this != &other) ptr_ = std::make_unique<T>(*other.ptr_);
    return *this;
  }
  Box& operator=(Box&&) noexcept = default;
  ~Box() = default;

  const T& operator*() const { return *ptr_; }
  const T* operator->() const { return ptr_.get(); }

  friend bool operator==(const Box& a, const Box& b) { return *a.ptr_ == *b.ptr_; }

 private:
  std::unique_ptr<T> ptr_;
};

struct ColumnRef {
  std::string name;
  bool operator==(const ColumnRef&) const = default;
};
struct NumberLit {
  double value = 0;
  bool operator==(const NumberLit&) const = default;
};
struct StringLit {
  std::string value;
  bool operator==(const StringLit&) const = default;
};
using Operand = std::variant<ColumnRef, NumberLit, StringLit>;

enum class CompOp { Eq, Ne, Lt, Le, Gt, Ge };

struct Expr;

struct And {
  Box<Expr> lhs, rhs;
  bool operator==(const And&) const = default;
};
struct Or {
  Box<Expr> lhs, rhs;
  bool operator==(const Or&) const = default;
};
struct Not {
  Box<Expr> operand;
  bool operator==(const Not&) const = default;
};
struct Comparison {
  Operand lhs;
  CompOp op;
  Operand rhs;
  bool operator==(const Comparison&) const = default;
};
/// Inclusive on both ends.
struct Between {
  Operand value, lo, hi;
  bool operator==(const Between&) const = default;
};
/// Anchored match; '%' any sequence, '_' any single character.
struct Like {
  ColumnRef column;
  std::string pattern;
  bool operator==(const Like&) const = default;
};
struct IsNull {
  ColumnRef column;
  bool negated = false;  // IS NOT NULL
  bool operator==(const IsNull&) const = default;
};
/// CONTAINS(POINT('ICRS', ra, dec), CIRCLE('ICRS', c_ra, c_dec, radius)) = 1 (inside) or = 0.
struct Contains {
  Operand ra, dec;
  Operand center_ra, center_dec, radius;
  bool inside = true;
  bool operator==(const Contains&) const = default;
};

struct Expr {
  std::variant<And, Or, Not, Comparison, Between, Like, IsNull, Contains> node;
  bool operator==(const Expr&) const = default;
};

struct OrderBy {
  std::string column;
  bool ascending = true;
  bool operator==(const OrderBy&) const = default;
};

struct Query {
  std::optional<std::int64_t> top;
  bool all_columns = false;
  std::vector<std::string> columns;
  std::string table;
  std::optional<Expr> where;
  std::optional<OrderBy> order_by;

  bool operator==(const Query&) const = default;
};

// ---------------------------------------------------------------------------
// Parser

namespace detail {

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  Query query() {
    Query q;
    expect_keyword("SELECT");
    if (at_keyword("DISTINCT") || at_keyword("ALL")) unsupported(peek().text == "ALL" ? "ALL" : "DISTINCT");
    if (accept_keyword("TOP")) {
      const Token& t = expect(TokenKind::Number, "integer after TOP");
      if (t.number < 0 || t.number != std::floor(t.number) || t.text.find_first_of(".eE") != std::string::npos)
        throw AdqlError(Errc::SyntaxError, "TOP requires a non-negative integer", t.offset);
      q.top = static_cast<std::int64_t>(t.number);
    }
    select_list(q);
    expect_keyword("FROM");
    if (peek().kind == TokenKind::LParen) unsupported("subquery");
    q.table = expect(TokenKind::Identifier, "table name").text;
    if (peek().kind == TokenKind::Comma) unsupported("JOIN");
    for (auto kw : {"JOIN", "INNER", "LEFT", "RIGHT", "FULL", "NATURAL", "CROSS"})
      if (at_keyword(kw)) unsupported("JOIN");
    if (at_keyword("AS") || peek().kind == TokenKind::Identifier) unsupported("table alias");
    if (accept_keyword("WHERE")) q.where = or_expr();
    if (at_keyword("GROUP")) unsupported("GROUP BY");
    if (at_keyword("HAVING")) unsupported("HAVING");
    if (accept_keyword("ORDER")) {
      expect_keyword("BY");
      OrderBy ob;
      ob.column = expect(TokenKind::Identifier, "column name").text;
      if (accept_keyword("DESC"))
        ob.ascending = false;
      else
        accept_keyword("ASC");
      if (peek().kind == TokenKind::Comma) unsupported("multiple ORDER BY columns");
      q.order_by = std::move(ob);
    }
    for (auto kw : {"UNION", "EXCEPT", "INTERSECT"})
      if (at_keyword(kw)) unsupported(kw);
    if (at_keyword("OFFSET") || at_keyword("LIMIT")) unsupported(peek().text);
    if (peek().kind != TokenKind::End) syntax("end of query");
    return q;
  }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;

  const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case TokenKind::End: return "end of query";
      case TokenKind::String: return "string '" + t.text + "'";
      default: return "'" + t.text + "'";
    }
  }

  [[noreturn]] void syntax(std::string_view expected) const {
    throw AdqlError(Errc::SyntaxError, "expected " + std::string(expected) + ", found " + describe(peek()),
                    peek().offset);
  }
  [[noreturn]] void unsupported(std::string_view feature) const {
    throw AdqlError(Errc::UnsupportedFeature, std::string(feature), peek().offset);
  }

  bool at_keyword(std::string_view kw) const { return peek().kind == TokenKind::Keyword && peek().text == kw; }
  bool accept_keyword(std::string_view kw) {
    if (!at_keyword(kw)) return false;
    next();
    return true;
  }
  void expect_keyword(std::string_view kw) {
    if (!accept_keyword(kw)) syntax(kw);
  }
  const Token& expect(TokenKind k, std::string_view what) {
    if (peek().kind != k) syntax(what);
    return next();
  }

  void reject_arithmetic() const {
    const auto k = peek().kind;
    if (k == TokenKind::Plus || k == TokenKind::Minus || k == TokenKind::Slash || k == TokenKind::Star)
      unsupported("arithmetic");
    if (k == TokenKind::Number && (peek().text[0] == '-' || peek().text[0] == '+')) unsupported("arithmetic");
  }

  void select_list(Query& q) {
    if (peek().kind == TokenKind::Star) {
      next();
      q.all_columns = true;
      return;
    }
    for (;;) {
      if (peek().kind == TokenKind::Number || peek().kind == TokenKind::String) unsupported("literal in select list");
      if (peek().kind == TokenKind::Keyword && peek(1).kind == TokenKind::LParen) unsupported("function call");
      const Token& t = expect(TokenKind::Identifier, "column name or '*'");
      if (peek().kind == TokenKind::LParen) unsupported("function call");
      reject_arithmetic();
      if (at_keyword("AS")) unsupported("column alias");
      q.columns.push_back(t.text);
      if (peek().kind != TokenKind::Comma) break;
      next();
    }
  }

  Expr or_expr() {
    Expr lhs = and_expr();
    while (accept_keyword("OR")) lhs = Expr{Or{std::move(lhs), and_expr()}};
    return lhs;
  }

  Expr and_expr() {
    Expr lhs = not_expr();
    while (accept_keyword("AND")) lhs = Expr{And{std::move(lhs), not_expr()}};
    return lhs;
  }

  Expr not_expr() {
    if (accept_keyword("NOT")) return Expr{Not{not_expr()}};
    return predicate();
  }

  Operand operand() {
    const Token& t = peek();
    switch (t.kind) {
      case TokenKind::Identifier: {
        next();
        if (peek().kind == TokenKind::LParen) unsupported("function call");
        reject_arithmetic();
        return ColumnRef{t.text};
      }
      case TokenKind::Number: {
        next();
        reject_arithmetic();
        return NumberLit{t.number};
      }
      case TokenKind::String: next(); return StringLit{t.text};
      case TokenKind::LParen:
        if (peek(1).kind == TokenKind::Keyword && peek(1).text == "SELECT") unsupported("subquery");
        syntax("column, number or string");
      case TokenKind::Keyword:
        if (t.text == "SELECT") unsupported("subquery");
        if (peek(1).kind == TokenKind::LParen && t.text != "CONTAINS") unsupported("function call");
        syntax("column, number or string");
      default: syntax("column, number or string");
    }
  }

  ColumnRef column_of(const Operand& o, std::size_t offset, std::string_view ctx) const {
    if (const auto* c = std::get_if<ColumnRef>(&o)) return *c;
    throw AdqlError(Errc::SyntaxError, std::string(ctx) + " requires a column on its left-hand side", offset);
  }

  void coordsys() {
    if (peek().kind != TokenKind::String) return;
    const Token& t = next();
    if (!iequals(t.text, "ICRS"))
      throw AdqlError(Errc::UnsupportedFeature, "coordinate system '" + t.text + "' (only ICRS)", t.offset);
    expect(TokenKind::Comma, "','");
  }

  Contains contains_call() {
    expect_keyword("CONTAINS");
    expect(TokenKind::LParen, "'('");
    Contains c;
    expect_keyword("POINT");
    expect(TokenKind::LParen, "'('");
    coordsys();
    c.ra = operand();
    expect(TokenKind::Comma, "','");
    c.dec = operand();
    expect(TokenKind::RParen, "')'");
    expect(TokenKind::Comma, "','");
    expect_keyword("CIRCLE");
    expect(TokenKind::LParen, "'('");
    coordsys();
    c.center_ra = operand();
    expect(TokenKind::Comma, "','");
    c.center_dec = operand();
    expect(TokenKind::Comma, "','");
    c.radius = operand();
    expect(TokenKind::RParen, "')'");
    expect(TokenKind::RParen, "')'");
    return c;
  }

  bool contains_flag() {
    const Token& t = expect(TokenKind::Number, "0 or 1");
    if (t.text != "0" && t.text != "1")
      throw AdqlError(Errc::SyntaxError, "CONTAINS must be compared with 0 or 1", t.offset);
    return t.text == "1";
  }

  void expect_equals() {
    if (peek().kind != TokenKind::Operator || peek().text != "=") syntax("'=' (CONTAINS is compared with = 0 or = 1)");
    next();
  }

  Expr predicate() {
    if (peek().kind == TokenKind::LParen) {
      if (peek(1).kind == TokenKind::Keyword && peek(1).text == "SELECT") {
        next();
        unsupported("subquery");
      }
      next();
      Expr e = or_expr();
      expect(TokenKind::RParen, "')'");
      return e;
    }
    if (at_keyword("EXISTS")) unsupported("subquery");
    if (at_keyword("CONTAINS")) {
      Contains c = contains_call();
      expect_equals();
      c.inside = contains_flag();
      return Expr{std::move(c)};
    }
    if (peek().kind == TokenKind::Number && peek(1).kind == TokenKind::Operator && peek(1).text == "=" &&
        peek(2).kind == TokenKind::Keyword && peek(2).text == "CONTAINS") {
      const bool inside = contains_flag();
      next();  // '='
      Contains c = contains_call();
      c.inside = inside;
      return Expr{std::move(c)};
    }

    const std::size_t lhs_offset = peek().offset;
    Operand lhs = operand();
    if (accept_keyword("IS")) {
      const bool neg = accept_keyword("NOT");
      expect_keyword("NULL");
      return Expr{IsNull{column_of(lhs, lhs_offset, "IS NULL"), neg}};
    }
    bool negated = false;
    if (at_keyword("NOT") && peek(1).kind == TokenKind::Keyword &&
        (peek(1).text == "BETWEEN" || peek(1).text == "LIKE" || peek(1).text == "IN")) {
      next();
      negated = true;
    }
    auto wrap = [&](Expr e) { return negated ? Expr{Not{std::move(e)}} : e; };
    if (accept_keyword("BETWEEN")) {
      Operand lo = operand();
      expect_keyword("AND");
      Operand hi = operand();
      return wrap(Expr{Between{std::move(lhs), std::move(lo), std::move(hi)}});
    }
    if (accept_keyword("LIKE")) {
      const Token& p = expect(TokenKind::String, "pattern string");
      return wrap(Expr{Like{column_of(lhs, lhs_offset, "LIKE"), p.text}});
    }
    if (at_keyword("IN")) unsupported("IN");
    if (peek().kind != TokenKind::Operator) syntax("comparison operator");
    const std::string op = next().text;
    CompOp cop = CompOp::Eq;
    if (op == "=")
      cop = CompOp::Eq;
    else if (op == "!=" || op == "<>")
      cop = CompOp::Ne;
    else if (op == "<")
      cop = CompOp::Lt;
    else if (op == "<=")
      cop = CompOp::Le;
    else if (op == ">")
      cop = CompOp::Gt;
    else
      cop = CompOp::Ge;
    Operand rhs = operand();
    return Expr{Comparison{std::move(lhs), cop, std::move(rhs)}};
  }
};

}  // namespace detail

inline Query parse(std::vector<Token> tokens) {
  if (tokens.empty() || tokens.back().kind != TokenKind::End) tokens.push_back({TokenKind::End, "", 0, 0});
  return detail::Parser(std::move(tokens)).query();
}

inline Query parse(std::string_view text) { return parse(tokenize(text)); }

// ---------------------------------------------------------------------------
// Canonical printer: parse(print(q)) == q.

namespace detail {

inline std::string format_number(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline std::string quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    out += c;
    if (c == '\'') out += '\'';
  }
  return out + "'";
}

inline std::string print(const Operand& o) {
  struct V {
    std::string operator()(const ColumnRef& c) const { return c.name; }
    std::string operator()(const NumberLit& n) const { return format_number(n.value); }
    std::string operator()(const StringLit& s) const { return quote(s.value); }
  };
  return std::visit(V{}, o);
}

inline std::string_view print(CompOp op) {
  switch (op) {
    case CompOp::Eq: return "=";
    case CompOp::Ne: return "<>";
    case CompOp::Lt: return "<";
    case CompOp::Le: return "<=";
    case CompOp::Gt: return ">";
    case CompOp::Ge: return ">=";
  }
  return "=";
}

inline std::string print(const Expr& e) {
  struct V {
    std::string operator()(const And& a) const { return "(" + print(*a.lhs) + " AND " + print(*a.rhs) + ")"; }
    std::string operator()(const Or& o) const { return "(" + print(*o.lhs) + " OR " + print(*o.rhs) + ")"; }
    std::string operator()(const Not& n) const { return "NOT " + print(*n.operand); }
    std::string operator()(const Comparison& c) const {
      return print(c.lhs) + " " + std::string(print(c.op)) + " " + print(c.rhs);
    }
    std::string operator()(const Between& b) const {
      return print(b.value) + " BETWEEN " + print(b.lo) + " AND " + print(b.hi);
    }
    std::string operator()(const Like& l) const { return l.column.name + " LIKE " + quote(l.pattern); }
    std::string operator()(const IsNull& n) const {
      return n.column.name + (n.negated ? " IS NOT NULL" : " IS NULL");
    }
    std::string operator()(const Contains& c) const {
      return "CONTAINS(POINT('ICRS', " + print(c.ra) + ", " + print(c.dec) + "), CIRCLE('ICRS', " +
             print(c.center_ra) + ", " + print(c.center_dec) + ", " + print(c.radius) + ")) = " +
             (c.inside ? "1" : "0");
    }
  };
  return std::visit(V{}, e.node);
}

}  // namespace detail

inline std::string to_adql(const Expr& e) { return detail::print(e); }

inline std::string to_adql(const Query& q) {
  std::string s = "SELECT ";
  if (q.top) s += "TOP " + std::to_string(*q.top) + " ";
  if (q.all_columns) {
    s += "*";
  } else {
    for (std::size_t i = 0; i < q.columns.size(); ++i) s += (i ? ", " : "") + q.columns[i];
  }
  s += " FROM " + q.table;
  if (q.where) s += " WHERE " + detail::print(*q.where);
  if (q.order_by) s += " ORDER BY " + q.order_by->column + (q.order_by->ascending ? " ASC" : " DESC");
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Anchored LIKE matching with '%' and '_' wildcards; case-sensitive.
inline bool like_match(std::string_view text, std::string_view pattern) {
  std::size_t t = 0, p = 0;
  std::optional<std::size_t> star_p, star_t;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '_' || (pattern[p] != '%' && pattern[p] == text[t]))) {
      ++t;
      ++p;
    } else if (p < pattern.size() && pattern[p] == '%') {
      star_p = p++;
      star_t = t;
    } else if (star_p) {
      p = *star_p + 1;
      t = ++*star_t;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '%') ++p;
  return p == pattern.size();
}

struct ResultSet {
  std::vector<std::size_t> columns;  // indices into obscore::kSchema
  std::vector<std::vector<obscore::Value>> rows;
  bool overflow = false;

  [[nodiscard]] std::vector<std::string> column_names() const {
    std::vector<std::string> out;
    for (auto c : columns) out.emplace_back(obscore::kSchema[c].name);
    return out;
  }
};

/// Row source over a catalog.
struct CatalogSource {
  const obscore::Catalog& catalog;

  [[nodiscard]] std::size_t size() const { return catalog.size(); }
  [[nodiscard]] obscore::FieldRef field(std::size_t row, std::size_t col) const {
    return obscore::field(catalog.records()[row], col);
  }
};

template <class S>
concept RowSource = requires(const S& s, std::size_t i) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s.field(i, i) } -> std::convertible_to<obscore::FieldRef>;
};

namespace detail {

enum class Kind { Numeric, Text };

inline Kind kind_of(obscore::Datatype t) { return t == obscore::Datatype::Char ? Kind::Text : Kind::Numeric; }

inline std::size_t resolve(std::string_view name) {
  // Qualified references (ivoa.obscore.s_ra) resolve by their last component.
  std::string_view bare = name;
  if (auto dot = bare.rfind('.'); dot != std::string_view::npos) {
    if (!iequals(bare.substr(0, dot), obscore::kTableName))
      throw AdqlError(Errc::UnknownColumn, std::string(name));
    bare = bare.substr(dot + 1);
  }
  if (auto i = obscore::column_index(bare)) return *i;
  throw AdqlError(Errc::UnknownColumn, std::string(name));
}

// Operands bound to schema columns.
struct BoundOperand {
  enum class Tag { Column, Number, Text } tag;
  std::size_t column = 0;
  double number = 0;
  std::string text;
  Kind kind = Kind::Numeric;
};

inline BoundOperand bind_operand(const Operand& o) {
  struct V {
    BoundOperand operator()(const ColumnRef& c) const {
      const std::size_t i = resolve(c.name);
      return {BoundOperand::Tag::Column, i, 0, {}, kind_of(obscore::kSchema[i].type)};
    }
    BoundOperand operator()(const NumberLit& n) const {
      return {BoundOperand::Tag::Number, 0, n.value, {}, Kind::Numeric};
    }
    BoundOperand operator()(const StringLit& s) const { return {BoundOperand::Tag::Text, 0, 0, s.value, Kind::Text}; }
  };
  return std::visit(V{}, o);
}

struct BoundExpr;
using BoundPtr = std::unique_ptr<BoundExpr>;

struct BoundExpr {
  enum class Tag { And, Or, Not, Compare, Between, Like, IsNull, Contains } tag;
  BoundPtr a, b;
  std::vector<BoundOperand> ops;
  CompOp op = CompOp::Eq;
  std::string pattern;
  bool flag = false;  // IS NOT NULL / CONTAINS = 1
};

inline BoundPtr bind_expr(const Expr& e) {
  auto node = std::make_unique<BoundExpr>();
  auto require_same = [](const BoundOperand& x, const BoundOperand& y) {
    if (x.kind != y.kind) throw AdqlError(Errc::TypeMismatch, "cannot compare a string with a number");
  };
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, And>) {
          node->tag = BoundExpr::Tag::And;
          node->a = bind_expr(*n.lhs);
          node->b = bind_expr(*n.rhs);
        } else if constexpr (std::is_same_v<T, Or>) {
          node->tag = BoundExpr::Tag::Or;
          node->a = bind_expr(*n.lhs);
          node->b = bind_expr(*n.rhs);
        } else if constexpr (std::is_same_v<T, Not>) {
          node->tag = BoundExpr::Tag::Not;
          node->a = bind_expr(*n.operand);
        } else if constexpr (std::is_same_v<T, Comparison>) {
          node->tag = BoundExpr::Tag::Compare;
          node->ops = {bind_operand(n.lhs), bind_operand(n.rhs)};
          node->op = n.op;
          require_same(node->ops[0], node->ops[1]);
        } else if constexpr (std::is_same_v<T, Between>) {
          node->tag = BoundExpr::Tag::Between;
          node->ops = {bind_operand(n.value), bind_operand(n.lo), bind_operand(n.hi)};
          require_same(node->ops[0], node->ops[1]);
          require_same(node->ops[0], node->ops[2]);
        } else if constexpr (std::is_same_v<T, Like>) {
          node->tag = BoundExpr::Tag::Like;
          node->ops = {bind_operand(Operand{n.column})};
          if (node->ops[0].kind != Kind::Text)
            throw AdqlError(Errc::TypeMismatch, "LIKE requires a string column, '" + n.column.name + "' is numeric");
          node->pattern = n.pattern;
        } else if constexpr (std::is_same_v<T, IsNull>) {
          node->tag = BoundExpr::Tag::IsNull;
          node->ops = {bind_operand(Operand{n.column})};
          node->flag = n.negated;
        } else {
          node->tag = BoundExpr::Tag::Contains;
          node->ops = {bind_operand(n.ra), bind_operand(n.dec), bind_operand(n.center_ra), bind_operand(n.center_dec), bind_operand(n.radius)};
          for (const auto& o : node->ops)
            if (o.kind != Kind::Numeric) throw AdqlError(Errc::TypeMismatch, "POINT/CIRCLE arguments must be numeric");
          for (std::size_t k : {std::size_t{1}, std::size_t{3}}) {
            const auto& o = node->ops[k];
            if (o.tag == BoundOperand::Tag::Number && !(o.number >= -90 && o.number <= 90))
              throw AdqlError(Errc::DomainError, "declination " + format_number(o.number) + " outside [-90, 90]");
          }
          node->flag = n.inside;
        }
      },
      e.node);
  return node;
}

/// Resolved cell: null, number, or text.
struct Cell {
  enum class Tag { Null, Number, Text } tag = Tag::Null;
  double number = 0;
  std::string_view text;
};

template <RowSource S>
Cell cell(const S& src, std::size_t row, const BoundOperand& o) {
  switch (o.tag) {
    case BoundOperand::Tag::Number: return {Cell::Tag::Number, o.number, {}};
    case BoundOperand::Tag::Text: return {Cell::Tag::Text, 0, o.text};
    case BoundOperand::Tag::Column: break;
  }
  const obscore::FieldRef f = src.field(row, o.column);
  if (const auto* i = std::get_if<std::int64_t>(&f)) return {Cell::Tag::Number, static_cast<double>(*i), {}};
  if (const auto* d = std::get_if<double>(&f)) return {Cell::Tag::Number, *d, {}};
  if (const auto* s = std::get_if<std::string_view>(&f)) return {Cell::Tag::Text, 0, *s};
  return {};
}

template <class T>
bool compare(const T& x, CompOp op, const T& y) {
  switch (op) {
    case CompOp::Eq: return x == y;
    case CompOp::Ne: return x < y || y < x;
    case CompOp::Lt: return x < y;
    case CompOp::Le: return x < y || x == y;
    case CompOp::Gt: return y < x;
    case CompOp::Ge: return y < x || x == y;
  }
  return false;
}

inline bool compare_cells(const Cell& x, CompOp op, const Cell& y) {
  if (x.tag == Cell::Tag::Null || y.tag == Cell::Tag::Null) return false;
  if (x.tag == Cell::Tag::Number) return compare(x.number, op, y.number);
  return compare(x.text, op, y.text);
}

template <RowSource S>
bool test(const BoundExpr& e, const S& src, std::size_t row) {
  using Tag = BoundExpr::Tag;
  switch (e.tag) {
    case Tag::And: return test(*e.a, src, row) && test(*e.b, src, row);
    case Tag::Or: return test(*e.a, src, row) || test(*e.b, src, row);
    case Tag::Not: return !test(*e.a, src, row);
    case Tag::Compare: return compare_cells(cell(src, row, e.ops[0]), e.op, cell(src, row, e.ops[1]));
    case Tag::Between: {
      const Cell v = cell(src, row, e.ops[0]);
      return compare_cells(v, CompOp::Ge, cell(src, row, e.ops[1])) &&
             compare_cells(v, CompOp::Le, cell(src, row, e.ops[2]));
    }
    case Tag::Like: {
      const Cell v = cell(src, row, e.ops[0]);
      return v.tag == Cell::Tag::Text && like_match(v.text, e.pattern);
    }
    case Tag::IsNull: {
      const bool null = cell(src, row, e.ops[0]).tag == Cell::Tag::Null;
      return e.flag ? !null : null;
    }
    case Tag::Contains: {
      std::array<double, 5> v{};
      for (std::size_t k = 0; k < 5; ++k) {
        const Cell c = cell(src, row, e.ops[k]);
        if (c.tag != Cell::Tag::Number) return false;
        v[k] = c.number;
      }
      const bool inside = angular_separation(v[0], v[1], v[2], v[3]) <= v[4];
      return inside == e.flag;
    }
  }
  return false;
}

}  // namespace detail

/// Filter, then ORDER BY (stable, nulls last), then TOP, then MAXREC.
/// Comparisons involving null are false; NOT inverts that result.
template <RowSource S>
ResultSet evaluate(const Query& q, const S& src, std::optional<std::size_t> maxrec = std::nullopt) {
  if (!detail::iequals(q.table, obscore::kTableName)) throw AdqlError(Errc::UnknownTable, q.table);
  ResultSet rs;
  if (q.all_columns) {
    for (std::size_t i = 0; i < obscore::kSchema.size(); ++i) rs.columns.push_back(i);
  } else {
    for (const auto& c : q.columns) rs.columns.push_back(detail::resolve(c));
  }
  const detail::BoundPtr where = q.where ? detail::bind_expr(*q.where) : nullptr;
  std::optional<std::size_t> order_col;
  if (q.order_by) order_col = detail::resolve(q.order_by->column);

  std::vector<std::size_t> selected;
  for (std::size_t r = 0; r < src.size(); ++r)
    if (!where || detail::test(*where, src, r)) selected.push_back(r);

  if (order_col) {
    const bool asc = q.order_by->ascending;
    const detail::BoundOperand key{detail::BoundOperand::Tag::Column, *order_col, 0, {},
                                   detail::kind_of(obscore::kSchema[*order_col].type)};
    std::stable_sort(selected.begin(), selected.end(), [&](std::size_t a, std::size_t b) {
      const detail::Cell x = detail::cell(src, a, key), y = detail::cell(src, b, key);
      const bool xn = x.tag == detail::Cell::Tag::Null, yn = y.tag == detail::Cell::Tag::Null;
      if (xn || yn) return !xn && yn;
      if (x.tag == detail::Cell::Tag::Number)
        return asc ? x.number < y.number : y.number < x.number;
      return asc ? x.text < y.text : y.text < x.text;
    });
  }
  if (q.top && selected.size() > static_cast<std::size_t>(*q.top)) selected.resize(static_cast<std::size_t>(*q.top));
  if (maxrec && selected.size() > *maxrec) {
    selected.resize(*maxrec);
    rs.overflow = true;
  }
  rs.rows.reserve(selected.size());
  for (std::size_t r : selected) {
    std::vector<obscore::Value> row;
    row.reserve(rs.columns.size());
    for (std::size_t c : rs.columns) row.push_back(obscore::to_value(src.field(r, c)));
    rs.rows.push_back(std::move(row));
  }
  return rs;
}

inline ResultSet evaluate(const Query& q, const obscore::Catalog& catalog,
                          std::optional<std::size_t> maxrec = std::nullopt) {
  return evaluate(q, CatalogSource{catalog}, maxrec);
}

}  // namespace fairgw::adql
