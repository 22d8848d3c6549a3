#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "stsf/core/csv.hpp"
#include "stsf/core/mime.hpp"
#include "stsf/core/parallel.hpp"
#include "stsf/core/time.hpp"

using namespace stsf;

namespace {
long long epoch(Timestamp t) { return t.time_since_epoch().count(); }
}  // namespace

// Expected epochs computed with Python's email.utils.parsedate_to_datetime.
TEST(Time, ParsesRfc5322Dates) {
    EXPECT_EQ(epoch(*parse_rfc5322_date("Mon, 5 Jan 2009 12:00:00 +0100")), 1231153200);
    EXPECT_EQ(epoch(*parse_rfc5322_date("Tue, 31 Dec 2013 23:59:59 -0800 (PST)")), 1388563199);
    EXPECT_EQ(epoch(*parse_rfc5322_date("5 Jan 2009 12:00 GMT")), 1231156800);
    EXPECT_EQ(epoch(*parse_rfc5322_date("Sat, 29 Feb 2020 01:02:03 +0530")), 1582918323);
}

TEST(Time, RejectsMalformedDates) {
    EXPECT_FALSE(parse_rfc5322_date(""));
    EXPECT_FALSE(parse_rfc5322_date("yesterday"));
    EXPECT_FALSE(parse_rfc5322_date("Mon, 31 Feb 2009 12:00:00 +0000"));
    EXPECT_FALSE(parse_rfc5322_date("Mon, 5 Foo 2009 12:00:00 +0000"));
    EXPECT_FALSE(parse_rfc3339("2009-13-01"));
    EXPECT_FALSE(parse_rfc3339("2009-01-05T12:00"));
}

TEST(Time, Rfc3339RoundTrip) {
    auto t = *parse_rfc3339("2011-07-15T08:09:10+02:00");
    EXPECT_EQ(format_rfc3339(t), "2011-07-15T06:09:10Z");
    EXPECT_EQ(*parse_rfc3339(format_rfc3339(t)), t);
    EXPECT_EQ(format_rfc3339(*parse_rfc3339("2011-07-15")), "2011-07-15T00:00:00Z");
}

TEST(Time, Rfc5322FormatRoundTrip) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<long long> d(0, 2'000'000'000);
    for (int i = 0; i < 200; ++i) {
        Timestamp t{std::chrono::seconds{d(rng)}};
        EXPECT_EQ(*parse_rfc5322_date(format_rfc5322(t)), t);
    }
    EXPECT_EQ(format_rfc5322(*parse_rfc3339("2009-01-05T12:00:00Z")), "Mon, 05 Jan 2009 12:00:00 +0000");
}

TEST(Time, MonthArithmetic) {
    auto t = *parse_rfc3339("2010-11-20T10:00:00Z");
    EXPECT_EQ(format_rfc3339(month_floor(t)), "2010-11-01T00:00:00Z");
    EXPECT_EQ(format_rfc3339(add_months(t, 2)), "2011-01-01T00:00:00Z");
    EXPECT_EQ(format_rfc3339(add_months(t, -11)), "2009-12-01T00:00:00Z");
    EXPECT_EQ(calendar_month_index(t, *parse_rfc3339("2011-02-01")), 3);
    EXPECT_EQ(calendar_month_index(t, *parse_rfc3339("2010-11-30T23:59:59Z")), 0);
}

TEST(Csv, RoundTripsQuotedFields) {
    std::ostringstream out;
    write_csv_row(out, {"plain", "with,comma", "with \"quote\"", "multi\nline", ""});
    std::istringstream in(out.str());
    std::vector<std::string> row;
    ASSERT_TRUE(read_csv_row(in, row));
    EXPECT_EQ(row, (std::vector<std::string>{"plain", "with,comma", "with \"quote\"", "multi\nline", ""}));
    EXPECT_FALSE(read_csv_row(in, row));
}

TEST(Csv, ReaderMapsColumnsAndReportsMissing) {
    std::istringstream in("b,a\r\n2,1\r\n");
    CsvReader r(in);
    EXPECT_EQ(r.require_column("a"), 1u);
    EXPECT_FALSE(r.find_column("c"));
    EXPECT_THROW(r.require_column("c"), CsvError);
    std::vector<std::string> row;
    ASSERT_TRUE(r.next(row));
    EXPECT_EQ(row[1], "1");
}

TEST(Csv, DoubleFormattingRoundTrips) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        double v = d(rng);
        EXPECT_EQ(*parse_double(format_double(v)), v);
    }
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_FALSE(parse_double("1.5x"));
    EXPECT_FALSE(parse_double(""));
}

// Expected strings computed with Python's email.header.decode_header/make_header.
TEST(Mime, DecodesEncodedWords) {
    EXPECT_EQ(mime::decode_header("=?ISO-8859-1?Q?Andr=E9?= Pirard"), "Andr\xC3\xA9 Pirard");
    EXPECT_EQ(mime::decode_header("=?UTF-8?B?Sm9zw6kgR2FyY8OtYQ==?="), "Jos\xC3\xA9 Garc\xC3\xAD" "a");
    EXPECT_EQ(mime::decode_header("=?iso-8859-1?q?this=20is=20some=20text?="), "this is some text");
    EXPECT_EQ(mime::decode_header("=?UTF-8?Q?a?= =?UTF-8?Q?b?="), "ab");
    EXPECT_EQ(mime::decode_header("=?windows-1252?Q?Caf=E9_=80?="), "Caf\xC3\xA9 \xE2\x82\xAC");
    EXPECT_EQ(mime::decode_header("plain text"), "plain text");
    EXPECT_EQ(mime::decode_header("=?bogus"), "=?bogus");
}

TEST(Mime, Base64AndQuotedPrintable) {
    std::mt19937 rng(11);
    for (int n = 0; n < 64; ++n) {
        std::string s;
        for (int i = 0; i < n; ++i) s.push_back(static_cast<char>(rng() & 0xFF));
        EXPECT_EQ(*mime::base64_decode(mime::base64_encode(s)), s);
    }
    EXPECT_FALSE(mime::base64_decode("@@@@"));
    EXPECT_EQ(mime::quoted_printable_decode("caf=C3=A9 =\nsoft break"), "caf\xC3\xA9 soft break");
}

TEST(Parallel, VisitsEveryIndexAndPropagatesErrors) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                     if (i == 7) throw std::runtime_error("boom");
                 }),
                 std::runtime_error);
}
