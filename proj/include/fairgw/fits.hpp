#pragma once

// Minimal FITS reader/writer: primary HDU plus binary-table extensions with
// J/K/E/D/nA columns. Other extensions pass through as header + opaque data.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <variant>
#include <vector>

#include "fairgw/error.hpp"

namespace fairgw::fits {

enum class Errc {
  TruncatedFile,
  BadCard,
  UnsupportedForm,
  MissingKeyword,
  InvalidHeader,
  WidthOverflow,
};

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::BadCard: return "BadCard";
    case Errc::UnsupportedForm: return "UnsupportedForm";
    case Errc::MissingKeyword: return "MissingKeyword";
    case Errc::InvalidHeader: return "InvalidHeader";
    case Errc::WidthOverflow: return "WidthOverflow";
  }
  return "Unknown";
}

using FitsError = Error<Errc>;

inline constexpr std::size_t kBlockSize = 2880;
inline constexpr std::size_t kCardSize = 80;
inline constexpr std::size_t kCardsPerBlock = kBlockSize / kCardSize;

using Bytes = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Header cards

/// A keyword card whose value field is blank.
struct Undefined {
  bool operator==(const Undefined&) const = default;
};

/// COMMENT / HISTORY / blank-keyword cards, or any card without "= " in
/// bytes 9-10. The text is bytes 9-80 with trailing spaces removed.
struct Commentary {
  std::string text;
  bool operator==(const Commentary&) const = default;
};

using Value = std::variant<Undefined, bool, std::int64_t, double, std::string, Commentary>;

struct Card {
  std::string keyword;
  Value value;
  std::optional<std::string> comment;

  bool operator==(const Card&) const = default;

  [[nodiscard]] bool is_commentary() const { return std::holds_alternative<Commentary>(value); }
};

inline Card make_card(std::string keyword, Value value, std::optional<std::string> comment = std::nullopt) {
  return Card{std::move(keyword), std::move(value), std::move(comment)};
}

inline bool is_valid_keyword(std::string_view kw) {
  if (kw.empty() || kw.size() > 8) return false;
  return std::all_of(kw.begin(), kw.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

struct Header {
  std::vector<Card> cards;

  bool operator==(const Header&) const = default;

  [[nodiscard]] const Card* find(std::string_view keyword) const {
    for (const auto& c : cards)
      if (c.keyword == keyword && !c.is_commentary()) return &c;
    return nullptr;
  }

  [[nodiscard]] bool contains(std::string_view keyword) const { return find(keyword) != nullptr; }

  [[nodiscard]] std::optional<std::int64_t> integer(std::string_view keyword) const {
    if (const Card* c = find(keyword))
      if (const auto* v = std::get_if<std::int64_t>(&c->value)) return *v;
    return std::nullopt;
  }

  /// Real-valued lookup; integer cards are widened.
  [[nodiscard]] std::optional<double> real(std::string_view keyword) const {
    if (const Card* c = find(keyword)) {
      if (const auto* d = std::get_if<double>(&c->value)) return *d;
      if (const auto* i = std::get_if<std::int64_t>(&c->value)) return static_cast<double>(*i);
    }
    return std::nullopt;
  }

  [[nodiscard]] std::optional<std::string> string(std::string_view keyword) const {
    if (const Card* c = find(keyword))
      if (const auto* s = std::get_if<std::string>(&c->value)) return *s;
    return std::nullopt;
  }

  [[nodiscard]] std::optional<bool> logical(std::string_view keyword) const {
    if (const Card* c = find(keyword))
      if (const auto* b = std::get_if<bool>(&c->value)) return *b;
    return std::nullopt;
  }

  /// Replaces the value of an existing keyword card, or appends a new card.
  void set(std::string keyword, Value value, std::optional<std::string> comment = std::nullopt) {
    for (auto& c : cards) {
      if (c.keyword == keyword && !c.is_commentary()) {
        c.value = std::move(value);
        if (comment) c.comment = std::move(comment);
        return;
      }
    }
    cards.push_back(Card{std::move(keyword), std::move(value), std::move(comment)});
  }

  void erase(std::string_view keyword) {
    std::erase_if(cards, [&](const Card& c) { return c.keyword == keyword && !c.is_commentary(); });
  }
};

// ---------------------------------------------------------------------------
// Binary tables

enum class FormCode : char { Int32 = 'J', Int64 = 'K', Float32 = 'E', Float64 = 'D', Ascii = 'A' };

struct ColumnForm {
  FormCode code = FormCode::Float64;
  std::size_t width = 1;  // character count for Ascii, 1 otherwise

  bool operator==(const ColumnForm&) const = default;

  [[nodiscard]] std::size_t byte_width() const {
    switch (code) {
      case FormCode::Int32:
      case FormCode::Float32: return 4;
      case FormCode::Int64:
      case FormCode::Float64: return 8;
      case FormCode::Ascii: return width;
    }
    return 0;
  }

  [[nodiscard]] std::string to_string() const {
    if (code == FormCode::Ascii) return std::to_string(width) + "A";
    return std::string(1, static_cast<char>(code));
  }

  static ColumnForm ascii(std::size_t width) { return ColumnForm{FormCode::Ascii, width}; }
};

inline ColumnForm parse_form(std::string_view tform) {
  while (!tform.empty() && tform.back() == ' ') tform.remove_suffix(1);
  while (!tform.empty() && tform.front() == ' ') tform.remove_prefix(1);
  std::size_t pos = 0;
  while (pos < tform.size() && tform[pos] >= '0' && tform[pos] <= '9') ++pos;
  std::optional<std::size_t> repeat;
  if (pos > 0) {
    std::size_t r = 0;
    auto [p, ec] = std::from_chars(tform.data(), tform.data() + pos, r);
    if (ec != std::errc{}) throw FitsError(Errc::UnsupportedForm, std::string(tform));
    repeat = r;
  }
  if (pos + 1 != tform.size()) throw FitsError(Errc::UnsupportedForm, "TFORM '" + std::string(tform) + "'");
  const char code = tform[pos];
  switch (code) {
    case 'J':
    case 'K':
    case 'E':
    case 'D':
      if (repeat && *repeat != 1)
        throw FitsError(Errc::UnsupportedForm, "TFORM '" + std::string(tform) + "': vector columns not supported");
      return ColumnForm{static_cast<FormCode>(code), 1};
    case 'A':
      if (repeat && *repeat == 0) throw FitsError(Errc::UnsupportedForm, "zero-width A column");
      return ColumnForm::ascii(repeat.value_or(1));
    default:
      throw FitsError(Errc::UnsupportedForm, "TFORM '" + std::string(tform) + "'");
  }
}

struct Column {
  std::string name;
  ColumnForm form;
  std::optional<std::string> unit;

  bool operator==(const Column&) const = default;
};

using Cell = std::variant<std::int32_t, std::int64_t, float, double, std::string>;

struct BinTable {
  std::string name;
  std::vector<Column> columns;
  std::vector<std::vector<Cell>> rows;

  bool operator==(const BinTable&) const = default;

  [[nodiscard]] std::size_t row_count() const { return rows.size(); }

  [[nodiscard]] std::size_t row_width() const {
    std::size_t w = 0;
    for (const auto& c : columns) w += c.form.byte_width();
    return w;
  }

  /// Index of the named column (case-insensitive), if present.
  [[nodiscard]] std::optional<std::size_t> column_index(std::string_view name) const {
    auto upper = [](std::string_view s) {
      std::string out(s);
      for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      return out;
    };
    const std::string want = upper(name);
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (upper(columns[i].name) == want) return i;
    return std::nullopt;
  }
};

struct Hdu {
  Header header;
  std::optional<BinTable> table;
  Bytes data;  // raw data area (unpadded) for HDUs that are not binary tables

  bool operator==(const Hdu&) const = default;
};

// ---------------------------------------------------------------------------
// Big-endian payload helpers

template <class T>
  requires std::is_arithmetic_v<T>
void put_be(Bytes& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  static_assert(sizeof(T) == sizeof(U));
  const U bits = std::bit_cast<U>(value);
  for (int shift = static_cast<int>(sizeof(U) * 8) - 8; shift >= 0; shift -= 8)
    out.push_back(static_cast<std::uint8_t>((bits >> shift) & 0xFFu));
}

template <class T>
  requires std::is_arithmetic_v<T>
T get_be(std::span<const std::uint8_t> in) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits = static_cast<U>((bits << 8) | in[i]);
  return std::bit_cast<T>(bits);
}

namespace detail {

inline bool is_printable(char c) { return c >= 0x20 && c <= 0x7E; }

inline std::string_view rstrip(std::string_view s) {
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  return s;
}

/// Shortest text that parses back to the same double, always containing '.'
/// or 'E' so it reads as a real rather than an integer.
inline std::string format_real(double v) {
  if (!std::isfinite(v)) throw FitsError(Errc::InvalidHeader, "non-finite real value");
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  std::string s(buf.data(), end);
  for (auto& c : s)
    if (c == 'e') c = 'E';
  if (s.find_first_of(".E") == std::string::npos) s += ".0";
  return s;
}

inline std::string format_value(const Value& v) {
  struct Visitor {
    std::string operator()(const Undefined&) const { return {}; }
    std::string operator()(bool b) const { return b ? "T" : "F"; }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const { return format_real(d); }
    std::string operator()(const std::string& s) const {
      std::string out = "'";
      for (char c : s) {
        out += c;
        if (c == '\'') out += '\'';
      }
      while (out.size() < 9) out += ' ';  // strings are padded to at least 8 characters
      out += '\'';
      return out;
    }
    std::string operator()(const Commentary& c) const { return c.text; }
  };
  return std::visit(Visitor{}, v);
}

inline bool is_commentary_keyword(std::string_view kw) {
  return kw.empty() || kw == "COMMENT" || kw == "HISTORY";
}

inline std::string card_image(const Card& card) {
  const bool commentary = card.is_commentary();
  if (commentary ? !(card.keyword.empty() || is_valid_keyword(card.keyword)) : !is_valid_keyword(card.keyword))
    throw FitsError(Errc::InvalidHeader, "invalid keyword '" + card.keyword + "'");
  if (card.keyword == "END") throw FitsError(Errc::InvalidHeader, "END is implicit and may not appear as a card");
  std::string image = card.keyword;
  image.resize(8, ' ');
  if (commentary) {
    const auto& text = std::get<Commentary>(card.value).text;
    if (!is_commentary_keyword(card.keyword) && text.starts_with("= "))
      throw FitsError(Errc::InvalidHeader, "commentary card '" + card.keyword + "' would read as a value card");
    if (card.comment) throw FitsError(Errc::InvalidHeader, "commentary card cannot carry a comment field");
    image += text;
  } else {
    if (is_commentary_keyword(card.keyword))
      throw FitsError(Errc::InvalidHeader, card.keyword + " cards cannot hold a value");
    image += "= ";
    image += format_value(card.value);
    if (card.comment) {
      image += " / ";
      image += *card.comment;
    }
  }
  if (image.size() > kCardSize)
    throw FitsError(Errc::InvalidHeader, "card '" + card.keyword + "' exceeds 80 characters");
  if (!std::all_of(image.begin(), image.end(), is_printable))
    throw FitsError(Errc::InvalidHeader, "card '" + card.keyword + "' contains non-ASCII characters");
  image.resize(kCardSize, ' ');
  return image;
}

inline std::optional<std::string> parse_comment(std::string_view rest, std::string_view keyword) {
  std::size_t i = 0;
  while (i < rest.size() && rest[i] == ' ') ++i;
  if (i == rest.size()) return std::nullopt;
  if (rest[i] != '/') throw FitsError(Errc::BadCard, "unexpected text after value of '" + std::string(keyword) + "'");
  ++i;
  if (i < rest.size() && rest[i] == ' ') ++i;
  return std::string(rstrip(rest.substr(i)));
}

inline Card parse_card(std::string_view image) {
  if (!std::all_of(image.begin(), image.end(), is_printable))
    throw FitsError(Errc::BadCard, "non-ASCII byte in card '" + std::string(rstrip(image.substr(0, 8))) + "'");
  const std::string_view kw = rstrip(image.substr(0, 8));
  if (kw.find(' ') != std::string_view::npos || (!kw.empty() && !is_valid_keyword(kw)))
    throw FitsError(Errc::BadCard, "malformed keyword '" + std::string(image.substr(0, 8)) + "'");

  Card card;
  card.keyword = std::string(kw);
  if (is_commentary_keyword(kw) || image.substr(8, 2) != "= ") {
    card.value = Commentary{std::string(rstrip(image.substr(8)))};
    return card;
  }

  std::string_view field = image.substr(10);
  std::size_t i = 0;
  while (i < field.size() && field[i] == ' ') ++i;
  if (i == field.size()) {
    card.value = Undefined{};
    return card;
  }
  if (field[i] == '/') {
    card.value = Undefined{};
    card.comment = parse_comment(field.substr(i), kw);
    return card;
  }
  if (field[i] == '\'') {
    std::string text;
    std::size_t j = i + 1;
    bool closed = false;
    while (j < field.size()) {
      if (field[j] == '\'') {
        if (j + 1 < field.size() && field[j + 1] == '\'') {
          text += '\'';
          j += 2;
          continue;
        }
        closed = true;
        ++j;
        break;
      }
      text += field[j++];
    }
    if (!closed) throw FitsError(Errc::BadCard, "unterminated string in '" + card.keyword + "'");
    card.value = std::string(rstrip(text));
    card.comment = parse_comment(field.substr(j), kw);
    return card;
  }

  std::size_t j = i;
  while (j < field.size() && field[j] != ' ' && field[j] != '/') ++j;
  std::string token(field.substr(i, j - i));
  if (token == "T" || token == "F") {
    card.value = token == "T";
  } else if (token.find_first_of(".EeDd") != std::string::npos) {
    for (auto& c : token)
      if (c == 'D' || c == 'd') c = 'E';
    const char* first = token.data();
    const char* last = token.data() + token.size();
    if (first != last && *first == '+') ++first;
    double d = 0;
    auto [p, ec] = std::from_chars(first, last, d);
    if (ec != std::errc{} || p != last) throw FitsError(Errc::BadCard, "bad real value in '" + card.keyword + "'");
    card.value = d;
  } else {
    const char* first = token.data();
    const char* last = token.data() + token.size();
    if (first != last && *first == '+') ++first;
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || p != last) throw FitsError(Errc::BadCard, "bad value '" + token + "' in '" + card.keyword + "'");
    card.value = v;
  }
  card.comment = parse_comment(field.substr(j), kw);
  return card;
}

inline void pad_block(Bytes& out, std::uint8_t fill) {
  const std::size_t rem = out.size() % kBlockSize;
  if (rem != 0) out.insert(out.end(), kBlockSize - rem, fill);
}

inline std::int64_t require_int(const Header& h, std::string_view kw) {
  auto v = h.integer(kw);
  if (!v) throw FitsError(Errc::MissingKeyword, std::string(kw));
  return *v;
}

/// Size in bytes of the data area a header declares (excluding padding).
inline std::size_t declared_data_size(const Header& h) {
  const std::int64_t bitpix = require_int(h, "BITPIX");
  const std::int64_t naxis = require_int(h, "NAXIS");
  if (naxis < 0 || naxis > 999) throw FitsError(Errc::InvalidHeader, "NAXIS out of range");
  if (naxis == 0) return 0;
  std::int64_t elements = 1;
  for (std::int64_t k = 1; k <= naxis; ++k) {
    const std::int64_t n = require_int(h, "NAXIS" + std::to_string(k));
    if (n < 0) throw FitsError(Errc::InvalidHeader, "negative NAXIS" + std::to_string(k));
    elements *= n;
  }
  const std::int64_t pcount = h.integer("PCOUNT").value_or(0);
  const std::int64_t gcount = h.integer("GCOUNT").value_or(1);
  const std::int64_t bytes = (bitpix < 0 ? -bitpix : bitpix) / 8 * gcount * (pcount + elements);
  if (bytes < 0) throw FitsError(Errc::InvalidHeader, "negative data size");
  return static_cast<std::size_t>(bytes);
}

inline bool is_bintable(const Header& h) {
  const auto x = h.string("XTENSION");
  return x && rstrip(*x) == "BINTABLE";
}

inline std::vector<Column> table_columns(const Header& h) {
  const std::int64_t tfields = require_int(h, "TFIELDS");
  if (tfields < 0 || tfields > 999) throw FitsError(Errc::InvalidHeader, "TFIELDS out of range");
  std::vector<Column> cols;
  for (std::int64_t i = 1; i <= tfields; ++i) {
    const std::string n = std::to_string(i);
    auto tform = h.string("TFORM" + n);
    if (!tform) throw FitsError(Errc::MissingKeyword, "TFORM" + n);
    Column c;
    c.form = parse_form(*tform);
    c.name = h.string("TTYPE" + n).value_or("");
    c.unit = h.string("TUNIT" + n);
    cols.push_back(std::move(c));
  }
  return cols;
}

inline BinTable decode_table(const Header& h, std::span<const std::uint8_t> data) {
  BinTable t;
  t.name = h.string("EXTNAME").value_or("");
  const std::int64_t naxis1 = require_int(h, "NAXIS1");
  const std::int64_t naxis2 = require_int(h, "NAXIS2");
  t.columns = table_columns(h);
  if (static_cast<std::size_t>(naxis1) != t.row_width())
    throw FitsError(Errc::InvalidHeader, "NAXIS1 does not equal the sum of column widths");
  t.rows.reserve(static_cast<std::size_t>(naxis2));
  std::size_t off = 0;
  for (std::int64_t r = 0; r < naxis2; ++r) {
    std::vector<Cell> row;
    row.reserve(t.columns.size());
    for (const auto& col : t.columns) {
      const auto bytes = data.subspan(off, col.form.byte_width());
      switch (col.form.code) {
        case FormCode::Int32: row.emplace_back(get_be<std::int32_t>(bytes)); break;
        case FormCode::Int64: row.emplace_back(get_be<std::int64_t>(bytes)); break;
        case FormCode::Float32: row.emplace_back(get_be<float>(bytes)); break;
        case FormCode::Float64: row.emplace_back(get_be<double>(bytes)); break;
        case FormCode::Ascii: {
          std::string s(bytes.begin(), bytes.end());
          if (auto nul = s.find('\0'); nul != std::string::npos) s.resize(nul);
          row.emplace_back(std::string(rstrip(s)));
          break;
        }
      }
      off += col.form.byte_width();
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline void expect_int(const Header& h, std::string_view kw, std::int64_t want) {
  auto v = h.integer(kw);
  if (!v) throw FitsError(Errc::InvalidHeader, "missing " + std::string(kw));
  if (*v != want)
    throw FitsError(Errc::InvalidHeader,
                    std::string(kw) + " is " + std::to_string(*v) + ", table requires " + std::to_string(want));
}

inline void check_table_header(const Header& h, const BinTable& t) {
  if (!is_bintable(h)) throw FitsError(Errc::InvalidHeader, "table HDU must have XTENSION='BINTABLE'");
  expect_int(h, "BITPIX", 8);
  expect_int(h, "NAXIS", 2);
  expect_int(h, "NAXIS1", static_cast<std::int64_t>(t.row_width()));
  expect_int(h, "NAXIS2", static_cast<std::int64_t>(t.rows.size()));
  expect_int(h, "TFIELDS", static_cast<std::int64_t>(t.columns.size()));
  if (h.integer("PCOUNT").value_or(0) != 0) throw FitsError(Errc::InvalidHeader, "heap data not supported");
  const std::vector<Column> declared = table_columns(h);
  for (std::size_t i = 0; i < declared.size(); ++i)
    if (declared[i] != t.columns[i])
      throw FitsError(Errc::InvalidHeader, "column " + std::to_string(i + 1) + " header does not match table");
  if (h.string("EXTNAME").value_or("") != t.name)
    throw FitsError(Errc::InvalidHeader, "EXTNAME does not match table name");
}

inline void encode_table(Bytes& out, const BinTable& t) {
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size()) throw FitsError(Errc::InvalidHeader, "row width does not match TFIELDS");
    for (std::size_t i = 0; i < row.size(); ++i) {
      const auto& col = t.columns[i];
      const Cell& cell = row[i];
      auto mismatch = [&] {
        return FitsError(Errc::InvalidHeader, "cell type does not match TFORM of column '" + col.name + "'");
      };
      switch (col.form.code) {
        case FormCode::Int32:
          if (!std::holds_alternative<std::int32_t>(cell)) throw mismatch();
          put_be(out, std::get<std::int32_t>(cell));
          break;
        case FormCode::Int64:
          if (!std::holds_alternative<std::int64_t>(cell)) throw mismatch();
          put_be(out, std::get<std::int64_t>(cell));
          break;
        case FormCode::Float32:
          if (!std::holds_alternative<float>(cell)) throw mismatch();
          put_be(out, std::get<float>(cell));
          break;
        case FormCode::Float64:
          if (!std::holds_alternative<double>(cell)) throw mismatch();
          put_be(out, std::get<double>(cell));
          break;
        case FormCode::Ascii: {
          if (!std::holds_alternative<std::string>(cell)) throw mismatch();
          const auto& s = std::get<std::string>(cell);
          if (s.size() > col.form.width)
            throw FitsError(Errc::WidthOverflow, "value of length " + std::to_string(s.size()) + " in column '" +
                                                     col.name + "' of width " + std::to_string(col.form.width));
          out.insert(out.end(), s.begin(), s.end());
          out.insert(out.end(), col.form.width - s.size(), ' ');
          break;
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// HDU builders

inline Hdu make_primary_hdu(std::vector<Card> extra = {}, bool extend = true) {
  Hdu hdu;
  hdu.header.cards = {make_card("SIMPLE", true, "conforms to FITS standard"),
                      make_card("BITPIX", std::int64_t{8}), make_card("NAXIS", std::int64_t{0})};
  if (extend) hdu.header.cards.push_back(make_card("EXTEND", true));
  for (auto& c : extra) hdu.header.cards.push_back(std::move(c));
  return hdu;
}

/// Builds a BINTABLE HDU whose structural cards match `table`; `extra` cards
/// follow the structural block in order.
inline Hdu make_bintable_hdu(BinTable table, std::vector<Card> extra = {}) {
  Hdu hdu;
  auto& c = hdu.header.cards;
  c.push_back(make_card("XTENSION", std::string("BINTABLE"), "binary table extension"));
  c.push_back(make_card("BITPIX", std::int64_t{8}));
  c.push_back(make_card("NAXIS", std::int64_t{2}));
  c.push_back(make_card("NAXIS1", static_cast<std::int64_t>(table.row_width())));
  c.push_back(make_card("NAXIS2", static_cast<std::int64_t>(table.rows.size())));
  c.push_back(make_card("PCOUNT", std::int64_t{0}));
  c.push_back(make_card("GCOUNT", std::int64_t{1}));
  c.push_back(make_card("TFIELDS", static_cast<std::int64_t>(table.columns.size())));
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    const auto& col = table.columns[i];
    const std::string n = std::to_string(i + 1);
    if (!col.name.empty()) c.push_back(make_card("TTYPE" + n, col.name));
    c.push_back(make_card("TFORM" + n, col.form.to_string()));
    if (col.unit) c.push_back(make_card("TUNIT" + n, *col.unit));
  }
  if (!table.name.empty()) c.push_back(make_card("EXTNAME", table.name));
  for (auto& e : extra) c.push_back(std::move(e));
  hdu.table = std::move(table);
  return hdu;
}

// ---------------------------------------------------------------------------
// Reader / writer

inline std::vector<Hdu> read_fits(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kBlockSize != 0)
    throw FitsError(Errc::TruncatedFile,
                    "length " + std::to_string(bytes.size()) + " is not a positive multiple of 2880");
  std::vector<Hdu> hdus;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    Hdu hdu;
    bool ended = false;
    while (!ended) {
      if (pos + kCardSize > bytes.size()) throw FitsError(Errc::TruncatedFile, "header without END card");
      const std::string_view image(reinterpret_cast<const char*>(bytes.data() + pos), kCardSize);
      pos += kCardSize;
      if (detail::rstrip(image.substr(0, 8)) == "END") {
        ended = true;
        break;
      }
      hdu.header.cards.push_back(detail::parse_card(image));
    }
    pos = (pos + kBlockSize - 1) / kBlockSize * kBlockSize;

    if (hdus.empty()) {
      if (hdu.header.cards.empty() || hdu.header.cards.front().keyword != "SIMPLE")
        throw FitsError(Errc::BadCard, "primary header must start with SIMPLE");
    } else if (hdu.header.cards.empty() || hdu.header.cards.front().keyword != "XTENSION") {
      throw FitsError(Errc::BadCard, "extension header must start with XTENSION");
    }

    const bool bintable = !hdus.empty() && detail::is_bintable(hdu.header);
    if (bintable) {
      if (!hdu.header.contains("NAXIS1")) throw FitsError(Errc::MissingKeyword, "NAXIS1");
      if (!hdu.header.contains("NAXIS2")) throw FitsError(Errc::MissingKeyword, "NAXIS2");
      if (!hdu.header.contains("TFIELDS")) throw FitsError(Errc::MissingKeyword, "TFIELDS");
    }
    const std::size_t size = detail::declared_data_size(hdu.header);
    if (pos + size > bytes.size())
      throw FitsError(Errc::TruncatedFile, "data area shorter than declared (" + std::to_string(size) + " bytes)");
    const auto data = bytes.subspan(pos, size);
    if (bintable)
      hdu.table = detail::decode_table(hdu.header, data);
    else
      hdu.data.assign(data.begin(), data.end());
    pos += (size + kBlockSize - 1) / kBlockSize * kBlockSize;
    hdus.push_back(std::move(hdu));
  }
  return hdus;
}

inline Bytes write_fits(std::span<const Hdu> hdus) {
  if (hdus.empty()) throw FitsError(Errc::InvalidHeader, "a FITS file needs a primary HDU");
  Bytes out;
  for (std::size_t k = 0; k < hdus.size(); ++k) {
    const Hdu& hdu = hdus[k];
    const auto& cards = hdu.header.cards;
    if (k == 0) {
      if (cards.empty() || cards.front().keyword != "SIMPLE" || cards.front().value != Value{true})
        throw FitsError(Errc::InvalidHeader, "primary header must start with SIMPLE = T");
      if (hdu.table) throw FitsError(Errc::InvalidHeader, "primary HDU cannot hold a binary table");
    } else if (cards.empty() || cards.front().keyword != "XTENSION") {
      throw FitsError(Errc::InvalidHeader, "extension header must start with XTENSION");
    }
    for (const auto& card : cards) {
      const std::string image = detail::card_image(card);
      out.insert(out.end(), image.begin(), image.end());
    }
    std::string end = "END";
    end.resize(kCardSize, ' ');
    out.insert(out.end(), end.begin(), end.end());
    detail::pad_block(out, ' ');

    const std::size_t start = out.size();
    if (hdu.table) {
      detail::check_table_header(hdu.header, *hdu.table);
      detail::encode_table(out, *hdu.table);
    } else {
      if (detail::declared_data_size(hdu.header) != hdu.data.size())
        throw FitsError(Errc::InvalidHeader, "data size does not match header");
      out.insert(out.end(), hdu.data.begin(), hdu.data.end());
    }
    if (out.size() > start) detail::pad_block(out, 0);
  }
  return out;
}

inline Bytes write_fits(const std::vector<Hdu>& hdus) { return write_fits(std::span<const Hdu>(hdus)); }

}  // namespace fairgw::fits
