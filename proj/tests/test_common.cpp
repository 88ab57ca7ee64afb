#include <cstdlib>
#include <set>

#include "doctest.h"
#include "sdlstm/common.hpp"

using namespace sdlstm;

TEST_CASE("mix64 matches the reference splitmix64 finalizer") {
  // Frozen outputs of the published finalizer, computed independently.
  CHECK(mix64(0) == 0xe220a8397b1dcdafull);
  CHECK(mix64(1) == 0x910a2dec89025cc1ull);
  CHECK(mix64(42) == 0xbdd732262feb6e95ull);
}

TEST_CASE("derive_seed is stable and separates streams") {
  CHECK(derive_seed(1, 0x696e6974) == 0x7d7c55ad873a528bull);
  CHECK(derive_seed(7, 0x6d61736b) == 0xf4ffaed999e8164aull);
  CHECK(derive_seed(7, 0x6d61736b, 3) == 0x5095cd9cb932c940ull);

  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  CHECK(derive_seed(5, 9, 0) != derive_seed(5, 9, 1));
  CHECK(derive_seed(5, 9, 0) != derive_seed(5, 9));
}

TEST_CASE("Rng reproduces by seed and respects bounds") {
  Rng a(123);
  Rng b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.next_unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) CHECK(r.next_below(7) < 7);
  CHECK(r.next_below(1) == 0);

  for (int i = 0; i < 50; ++i) CHECK(r.next_keep(0.0));
  for (int i = 0; i < 50; ++i) CHECK(!r.next_keep(1.0));
}

TEST_CASE("next_below covers its range") {
  Rng r(4);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 400; ++i) seen.insert(r.next_below(5));
  CHECK(seen == std::set<std::uint64_t>{0, 1, 2, 3, 4});
}

TEST_CASE("format_double is shortest and round-trips") {
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(-2.25) == "-2.25");

  for (const double v : {2.9825026738016227, 0.6400000000000001, 1e-300, 3.14159}) {
    const std::string s = format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
}

TEST_CASE("check helpers throw typed errors") {
  CHECK_THROWS_AS(check_shape(false, "x"), ShapeError);
  CHECK_THROWS_AS(check_value(false, "x"), ValueError);
  CHECK_NOTHROW(check_shape(true, "x"));
  CHECK_NOTHROW(check_value(true, "x"));
}
