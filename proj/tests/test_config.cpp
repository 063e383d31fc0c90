#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "msf/config.hpp"
#include "msf/errors.hpp"

namespace msf {
namespace {

TEST(KeyValues, ParsesCommentsWhitespaceAndValues) {
  const KeyValues kv = KeyValues::parse("# comment\n  alpha = 1.5 \n\nname=driving\ncount = 12\n");
  EXPECT_DOUBLE_EQ(kv.get_double("alpha", 0.0), 1.5);
  EXPECT_EQ(kv.get_string("name", ""), "driving");
  EXPECT_EQ(kv.get_int("count", 0), 12);
  EXPECT_EQ(kv.get_uint("count", 0), 12u);
  EXPECT_EQ(kv.get_int("missing", -3), -3);
}

TEST(KeyValues, BadNumberNamesTheKey) {
  const KeyValues kv = KeyValues::parse("outlier_ratio = lots\n");
  try {
    kv.get_double("outlier_ratio", 0.0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("outlier_ratio"), std::string::npos);
  }
  EXPECT_THROW(KeyValues::parse("n = -1\n").get_uint("n", 0), ConfigError);
  EXPECT_THROW(KeyValues::parse("n = 1.5\n").get_int("n", 0), ConfigError);
}

TEST(KeyValues, MalformedLineIsRejected) {
  EXPECT_THROW(KeyValues::parse("just words\n"), ConfigError);
}

TEST(KeyValues, UnknownKeysAreRejected) {
  const KeyValues kv = KeyValues::parse("alpha = 1\nbeta = 2\n");
  EXPECT_NO_THROW(kv.require_known({"alpha", "beta"}));
  try {
    kv.require_known({"alpha"});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos);
  }
}

TEST(KeyValues, MissingFileIsAConfigError) {
  EXPECT_THROW(KeyValues::load("/nonexistent/config.cfg"), ConfigError);
}

TEST(FormatDouble, RoundTripsExactly) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(2.0), "2");
}

}  // namespace
}  // namespace msf
