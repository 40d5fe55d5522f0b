#include <gtest/gtest.h>

#include <random>

#include "fairgw/fits.hpp"
#include "test_support.hpp"

using namespace fairgw::fits;
using fairgw::fixtures::card80;
using fairgw::fixtures::pad_to_block;

namespace {

Bytes minimal_primary() {
  std::string h = card80("SIMPLE  = T") + card80("BITPIX  = 8") + card80("NAXIS   = 0") + card80("END");
  Bytes b(h.begin(), h.end());
  pad_to_block(b, ' ');
  return b;
}

}  // namespace

TEST(FitsRead, MinimalPrimaryHdu) {
  const Bytes f = minimal_primary();
  ASSERT_EQ(f.size(), 2880u);
  const auto hdus = read_fits(f);
  ASSERT_EQ(hdus.size(), 1u);
  EXPECT_FALSE(hdus[0].table);
  ASSERT_EQ(hdus[0].header.cards.size(), 3u);
  EXPECT_EQ(hdus[0].header.logical("SIMPLE"), true);
  EXPECT_EQ(hdus[0].header.integer("BITPIX"), 8);
  EXPECT_EQ(write_fits(hdus), f);
}

TEST(FitsRead, HandAssembledDoubleColumn) {
  // Primary HDU, then a BINTABLE with one D column holding 1.0, 2.0, 3.0.
  Bytes f = minimal_primary();
  std::string h = card80("XTENSION= 'BINTABLE'") + card80("BITPIX  = 8") + card80("NAXIS   = 2") +
                  card80("NAXIS1  = 8") + card80("NAXIS2  = 3") + card80("PCOUNT  = 0") + card80("GCOUNT  = 1") +
                  card80("TFIELDS = 1") + card80("TTYPE1  = 'VALUE'") + card80("TFORM1  = '1D'") +
                  card80("EXTNAME = 'DATA'") + card80("END");
  f.insert(f.end(), h.begin(), h.end());
  pad_to_block(f, ' ');
  // IEEE-754 big-endian: 1.0 = 3FF0..., 2.0 = 4000..., 3.0 = 4008...
  const std::uint8_t payload[] = {0x3F, 0xF0, 0, 0, 0, 0, 0, 0, 0x40, 0x00, 0, 0, 0, 0, 0, 0,
                                  0x40, 0x08, 0, 0, 0, 0, 0, 0};
  f.insert(f.end(), std::begin(payload), std::end(payload));
  pad_to_block(f, 0);
  ASSERT_EQ(f.size(), 3u * 2880u);

  const auto hdus = read_fits(f);
  ASSERT_EQ(hdus.size(), 2u);
  ASSERT_TRUE(hdus[1].table);
  const BinTable& t = *hdus[1].table;
  EXPECT_EQ(t.name, "DATA");
  ASSERT_EQ(t.columns.size(), 1u);
  EXPECT_EQ(t.columns[0].name, "VALUE");
  EXPECT_EQ(t.columns[0].form.code, FormCode::Float64);
  ASSERT_EQ(t.row_count(), 3u);
  EXPECT_EQ(std::get<double>(t.rows[0][0]), 1.0);
  EXPECT_EQ(std::get<double>(t.rows[1][0]), 2.0);
  EXPECT_EQ(std::get<double>(t.rows[2][0]), 3.0);
}

TEST(FitsRead, LengthNotMultipleOfBlock) {
  Bytes f = minimal_primary();
  f.push_back(' ');
  ASSERT_EQ(f.size(), 2881u);
  try {
    read_fits(f);
    FAIL();
  } catch (const FitsError& e) {
    EXPECT_EQ(e.kind(), Errc::TruncatedFile);
  }
  EXPECT_THROW(read_fits(Bytes{}), FitsError);
}

TEST(FitsRead, DataShorterThanDeclared) {
  BinTable t{"T", {{"X", {FormCode::Float64, 1}, std::nullopt}}, {}};
  for (int i = 0; i < 400; ++i) t.rows.push_back({double(i)});
  Bytes f = write_fits(std::vector<Hdu>{make_primary_hdu(), make_bintable_hdu(t)});
  f.resize(f.size() - 2880);
  EXPECT_THROW(
      {
        try {
          read_fits(f);
        } catch (const FitsError& e) {
          EXPECT_EQ(e.kind(), Errc::TruncatedFile);
          throw;
        }
      },
      FitsError);
}

TEST(FitsRead, NonAsciiCardIsBadCard) {
  Bytes f = minimal_primary();
  f[85] = 0xC3;
  try {
    read_fits(f);
    FAIL();
  } catch (const FitsError& e) {
    EXPECT_EQ(e.kind(), Errc::BadCard);
  }
}

TEST(FitsRead, MalformedValueIsBadCard) {
  std::string h = card80("SIMPLE  = T") + card80("BITPIX  = 8") + card80("NAXIS   = 0") +
                  card80("BROKEN  = 'no closing quote") + card80("END");
  Bytes f(h.begin(), h.end());
  pad_to_block(f, ' ');
  try {
    read_fits(f);
    FAIL();
  } catch (const FitsError& e) {
    EXPECT_EQ(e.kind(), Errc::BadCard);
  }
}

TEST(FitsRead, UnsupportedFormAndMissingKeyword) {
  BinTable t{"T", {{"X", {FormCode::Int32, 1}, std::nullopt}}, {{std::int32_t{1}}}};
  Hdu tab = make_bintable_hdu(t);
  const Bytes good = write_fits(std::vector<Hdu>{make_primary_hdu(), tab});

  Hdu vec = tab;
  vec.header.set("TFORM1", std::string("1PE(3)"));
  auto patched = [&](const Hdu& h) {
    // Re-serialize the header bytes only; data area stays identical.
    Bytes out(good.begin(), good.begin() + 2880);
    for (const auto& c : h.header.cards) {
      std::string img = fairgw::fixtures::raw_card(c);
      out.insert(out.end(), img.begin(), img.end());
    }
    std::string end = card80("END");
    out.insert(out.end(), end.begin(), end.end());
    pad_to_block(out, ' ');
    out.insert(out.end(), good.end() - 2880, good.end());
    return out;
  };
  try {
    read_fits(patched(vec));
    FAIL();
  } catch (const FitsError& e) {
    EXPECT_EQ(e.kind(), Errc::UnsupportedForm);
  }

  Hdu missing = tab;
  missing.header.erase("TFIELDS");
  try {
    read_fits(patched(missing));
    FAIL();
  } catch (const FitsError& e) {
    EXPECT_EQ(e.kind(), Errc::MissingKeyword);
  }
}

TEST(FitsRead, UnknownExtensionKeptHeaderOnly) {
  Hdu image;
  image.header.cards = {make_card("XTENSION", std::string("IMAGE")), make_card("BITPIX", std::int64_t{16}),
                        make_card("NAXIS", std::int64_t{1}), make_card("NAXIS1", std::int64_t{3}),
                        make_card("PCOUNT", std::int64_t{0}), make_card("GCOUNT", std::int64_t{1})};
  image.data = {0, 1, 0, 2, 0, 3};
  BinTable t{"AFTER", {{"N", {FormCode::Int64, 1}, std::nullopt}}, {{std::int64_t{7}}}};
  const std::vector<Hdu> hdus{make_primary_hdu(), image, make_bintable_hdu(t)};
  const Bytes f = write_fits(hdus);
  const auto back = read_fits(f);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_FALSE(back[1].table);
  EXPECT_EQ(back[1].data, image.data);
  ASSERT_TRUE(back[2].table);
  EXPECT_EQ(*back[2].table, t);
  EXPECT_EQ(write_fits(back), f);
}

TEST(FitsWrite, BigEndianInt32) {
  BinTable t{"T", {{"N", {FormCode::Int32, 1}, std::nullopt}}, {{std::int32_t{258}}}};
  const Bytes f = write_fits(std::vector<Hdu>{make_primary_hdu(), make_bintable_hdu(t)});
  // primary header block + table header block, then the data area
  const std::size_t data = 2 * 2880;
  ASSERT_GE(f.size(), data + 4);
  EXPECT_EQ(f[data + 0], 0x00);
  EXPECT_EQ(f[data + 1], 0x00);
  EXPECT_EQ(f[data + 2], 0x01);
  EXPECT_EQ(f[data + 3], 0x02);
  EXPECT_EQ(f.size() % 2880, 0u);
}

TEST(FitsWrite, KeywordTooLong) {
  Hdu p = make_primary_hdu();
  p.header.cards.push_back(make_card("TOOLONGKEY", std::int64_t{1}));
  try {
    write_fits(std::vector<Hdu>{p});
    FAIL();
  } catch (const FitsError& e) {
    EXPECT_EQ(e.kind(), Errc::InvalidHeader);
  }
}

TEST(FitsWrite, HeaderInvariants) {
  Hdu p = make_primary_hdu();
  p.header.cards.erase(p.header.cards.begin());
  EXPECT_THROW(write_fits(std::vector<Hdu>{p}), FitsError);

  Hdu q = make_primary_hdu();
  q.header.cards.push_back(make_card("END", Undefined{}));
  EXPECT_THROW(write_fits(std::vector<Hdu>{q}), FitsError);

  Hdu lower = make_primary_hdu();
  lower.header.cards.push_back(make_card("lower", std::int64_t{1}));
  EXPECT_THROW(write_fits(std::vector<Hdu>{lower}), FitsError);

  BinTable t{"T", {{"N", {FormCode::Int32, 1}, std::nullopt}}, {{std::int32_t{1}}}};
  Hdu tab = make_bintable_hdu(t);
  tab.table->rows.push_back({std::int32_t{2}});  // NAXIS2 now stale
  EXPECT_THROW(write_fits(std::vector<Hdu>{make_primary_hdu(), tab}), FitsError);
}

TEST(FitsWrite, StringWiderThanColumn) {
  BinTable t{"T", {{"S", ColumnForm::ascii(4), std::nullopt}}, {{std::string("abcde")}}};
  try {
    write_fits(std::vector<Hdu>{make_primary_hdu(), make_bintable_hdu(t)});
    FAIL();
  } catch (const FitsError& e) {
    EXPECT_EQ(e.kind(), Errc::WidthOverflow);
  }
}

TEST(FitsCards, CanonicalLayoutAndValues) {
  Hdu p = make_primary_hdu({make_card("OBJECT", std::string("Crab's"), "target"),
                            make_card("RA_PNT", 83.63333), make_card("NEG", std::int64_t{-42}),
                            make_card("BIG", 1.5e300), make_card("EMPTY", Undefined{}, "no value"),
                            make_card("COMMENT", Commentary{"free text here"}), make_card("ONE", 1.0)});
  const Bytes f = write_fits(std::vector<Hdu>{p});
  const std::string text(f.begin(), f.end());
  EXPECT_EQ(text.substr(0, 80), card80("SIMPLE  = T / conforms to FITS standard"));
  EXPECT_NE(text.find(card80("OBJECT  = 'Crab''s ' / target")), std::string::npos);
  EXPECT_NE(text.find(card80("ONE     = 1.0")), std::string::npos);
  EXPECT_NE(text.find(card80("BIG     = 1.5E+300")), std::string::npos);
  EXPECT_NE(text.find(card80("EMPTY   =  / no value")), std::string::npos);

  const auto back = read_fits(f);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].header, p.header);
  EXPECT_EQ(back[0].header.string("OBJECT"), "Crab's");
  EXPECT_EQ(write_fits(back), f);
}

TEST(FitsCards, ChecksumCardsPreservedOpaquely) {
  Hdu p = make_primary_hdu({make_card("CHECKSUM", std::string("9TZAAS9R9SZAAS9R"), "HDU checksum"),
                            make_card("DATASUM", std::string("0"))});
  const Bytes f = write_fits(std::vector<Hdu>{p});
  EXPECT_EQ(read_fits(f)[0].header, p.header);
}

TEST(FitsCards, FreeFormatValuesAreAccepted) {
  std::string h = card80("SIMPLE  =                    T") + card80("BITPIX  =                    8") +
                  card80("NAXIS   =                    0") + card80("DVAL    =               1.25D2 / exp") +
                  card80("PLUS    = +7") + card80("END");
  Bytes f(h.begin(), h.end());
  pad_to_block(f, ' ');
  const auto hdus = read_fits(f);
  EXPECT_EQ(hdus[0].header.real("DVAL"), 125.0);
  EXPECT_EQ(hdus[0].header.find("DVAL")->comment, "exp");
  EXPECT_EQ(hdus[0].header.integer("PLUS"), 7);
}

TEST(FitsProperty, EndiannessIdentity) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    const std::uint64_t bits = rng();
    Bytes b;
    put_be(b, std::bit_cast<double>(bits));
    EXPECT_EQ(std::bit_cast<std::uint64_t>(get_be<double>(b)), bits);
    Bytes c;
    put_be(c, std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
    EXPECT_EQ(std::bit_cast<std::uint32_t>(get_be<float>(c)), static_cast<std::uint32_t>(bits));
  }
}

TEST(FitsProperty, RandomTablesRoundTrip) {
  std::mt19937_64 rng(20240601);
  for (int i = 0; i < 60; ++i) {
    const BinTable t = fairgw::fixtures::random_table(rng, 200);
    const std::vector<Hdu> hdus{make_primary_hdu(), make_bintable_hdu(t)};
    const Bytes f = write_fits(hdus);
    ASSERT_EQ(f.size() % 2880, 0u);
    const auto back = read_fits(f);
    ASSERT_EQ(back.size(), 2u);
    ASSERT_EQ(back, hdus) << "table " << i;
    ASSERT_EQ(write_fits(back), f);
  }
}
