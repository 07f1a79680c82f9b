#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "xspdc/config.hpp"
#include "xspdc/error.hpp"

using namespace xspdc;

TEST_CASE("sections prefix keys and comments are ignored") {
  const auto c = KeyValueConfig::parse("top = 1\n# comment\n[synth]\nrate = 2.5  # trailing\n\n[recon]\nflag = yes\n");
  CHECK(c.get_int("top", 0) == 1);
  CHECK(c.get_double("synth.rate", 0.0) == 2.5);
  CHECK(c.get_bool("recon.flag", false));
  CHECK(c.get_double("synth.missing", 7.0) == 7.0);
  c.reject_unconsumed();
}

TEST_CASE("lists split on commas and spaces") {
  const auto c = KeyValueConfig::parse("a = 1, 2 3\nb = 4.5 -1e3\n");
  CHECK(c.get_ints("a", {}) == std::vector<std::int64_t>{1, 2, 3});
  CHECK(c.get_doubles("b", {}) == std::vector<double>{4.5, -1000.0});
  CHECK(split_list(" x,, y  z ") == std::vector<std::string>{"x", "y", "z"});
}

TEST_CASE("overrides win over file values") {
  auto c = KeyValueConfig::parse("[synth]\nseed = 1\n");
  c.apply_override("synth.seed=9");
  c.apply_override("synth.frames = 10");
  CHECK(c.get_int("synth.seed", 0) == 9);
  CHECK(c.get_int("synth.frames", 0) == 10);
  CHECK_THROWS_AS(c.apply_override("no_equals_sign"), ConfigError);
}

TEST_CASE("malformed input is a configuration error") {
  CHECK_THROWS_AS(KeyValueConfig::parse("[open\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("just words\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  const auto c = KeyValueConfig::parse("n = ten\nb = maybe\n");
  CHECK_THROWS_AS(c.get_int("n", 0), ConfigError);
  CHECK_THROWS_AS(c.get_double("n", 0.0), ConfigError);
  CHECK_THROWS_AS(c.get_bool("b", false), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::load("/nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("unread keys are rejected") {
  const auto c = KeyValueConfig::parse("[geometry]\npump_energy_kev = 21\ntypo_key = 3\n[synth]\nx = 1\n");
  (void)c.get_double("geometry.pump_energy_kev", 0.0);
  CHECK_THROWS_AS(c.reject_unconsumed("geometry."), ConfigError);
  (void)c.get_double("geometry.typo_key", 0.0);
  c.reject_unconsumed("geometry.");
  CHECK_THROWS_AS(c.reject_unconsumed(), ConfigError);
}

TEST_CASE("canonical form and hash ignore layout") {
  const auto a = KeyValueConfig::parse("[s]\nb = 2\na = 1\n");
  const auto b = KeyValueConfig::parse("s.a=1\n\n# x\ns.b = 2\n");
  CHECK(a.canonical() == b.canonical());
  CHECK(fnv1a64(a.canonical()) == fnv1a64(b.canonical()));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}
