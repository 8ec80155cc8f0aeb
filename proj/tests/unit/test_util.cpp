#include <doctest.h>

#include <limits>

#include "alcn/tensor.hpp"
#include "alcn/util.hpp"
#include "fixtures.hpp"

using namespace alcn;

TEST_SUITE("util") {
  TEST_CASE("sha256 matches the published test vectors") {
    CHECK(sha256_hex(std::string_view("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string_view("")) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("key values format sorted and parse back") {
    const KeyValues kv{{"b", "2"}, {"a.x", "hello world"}, {"c", ""}};
    const std::string text = format_key_values(kv, "header");
    CHECK(text == "# header\na.x = hello world\nb = 2\nc = \n");
    CHECK(parse_key_values(text) == kv);
    CHECK_THROWS(parse_key_values("novalue\n"));
    CHECK_THROWS(parse_key_values(" = 3\n"));
  }

  TEST_CASE("format_double round-trips") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0, std::numeric_limits<double>::max()})
      CHECK(parse_double(format_double(v), "v") == v);
  }

  TEST_CASE("numeric parsers reject junk") {
    CHECK_THROWS_AS(parse_double("1.5x", "v"), std::invalid_argument);
    CHECK_THROWS_AS(parse_int("", "v"), std::invalid_argument);
    CHECK_THROWS_AS(parse_uint("-1", "v"), std::invalid_argument);
    CHECK_THROWS_AS(parse_bool("maybe", "v"), std::invalid_argument);
    CHECK(parse_bool("true", "v"));
    CHECK_FALSE(parse_bool("false", "v"));
    CHECK(parse_int("-42", "v") == -42);
  }

  TEST_CASE("split, join and trim") {
    CHECK(split("a,b,,c", ',') == std::vector<std::string>{"a", "b", "", "c"});
    CHECK(join({"x", "y"}, ';') == "x;y");
    CHECK(trim("  a b \t") == "a b");
  }

  TEST_CASE("atomic write leaves no temp file") {
    const auto dir = fixture::temp_dir("util-atomic");
    write_file_atomic(dir / "f.txt", "one");
    write_file_atomic(dir / "f.txt", "two");
    CHECK(read_file(dir / "f.txt") == "two");
    CHECK_FALSE(std::filesystem::exists(dir / "f.txt.tmp"));
    CHECK_THROWS(write_file_atomic(dir / "missing" / "f.txt", "x"));
  }

  TEST_CASE("warnings can be captured") {
    std::string seen;
    set_warning_sink([&](std::string_view m) { seen = m; });
    warn("careful");
    set_warning_sink({});
    CHECK(seen == "careful");
  }

  TEST_CASE("tensor reshape and cast") {
    Tensor<float> t({2, 3}, 1.5f);
    CHECK(t.size() == 6);
    CHECK(to_string(t.shape()) == "(2, 3)");
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
    CHECK(t.cast<double>()[5] == 1.5);
    CHECK(sample_size(t) == 3);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), std::invalid_argument);
  }
}
