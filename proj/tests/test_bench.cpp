#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sdlstm/bench.hpp"

using namespace sdlstm;

namespace {

// One layer, two GEMMs per step, each 2*B*H*4H multiply-adds when dense.
std::int64_t dense_phase_flops(index h, index b, index t) { return t * 2 * (2 * b * h * 4 * h); }

}  // namespace

TEST_CASE("phase records carry exact flop counts per mode") {
  const index h = 16;
  const index b = 4;
  const index t = 3;
  const index kept = 8;  // round(0.5 * 16) dropped

  SUBCASE("structured masks on both directions halve every phase") {
    for (const BenchPhase phase : {BenchPhase::fp, BenchPhase::bp, BenchPhase::wg}) {
      const BenchRecord r =
          bench_phase<double>(phase, h, b, t, 0.5, DropoutMode::nr_rh_st, 3, 1, 7);
      CHECK(r.flops_dense == dense_phase_flops(h, b, t));
      CHECK(r.flops_sparse == t * 2 * (2 * b * kept * 4 * h));
      CHECK(2 * r.flops_sparse == r.flops_dense);
      CHECK(r.wall_ns_dense > 0);
      CHECK(r.wall_ns_sparse > 0);
      CHECK(r.speedup > 0.0);
    }
  }

  SUBCASE("non-recurrent-only mode keeps one dense direction") {
    const BenchRecord r = bench_phase<double>(BenchPhase::bp, h, b, t, 0.5, DropoutMode::nr_st,
                                              3, 1, 7);
    CHECK(r.flops_sparse == t * (2 * b * kept * 4 * h + 2 * b * h * 4 * h));
    CHECK(r.flops_sparse > dense_phase_flops(h, b, t) / 2);
  }

  SUBCASE("elementwise random masks admit no skipping") {
    const BenchRecord r = bench_phase<double>(BenchPhase::fp, h, b, t, 0.5,
                                              DropoutMode::baseline_nr_random, 3, 1, 7);
    CHECK(r.flops_sparse == r.flops_dense);
  }
}

TEST_CASE("the built-in correctness gate accepts both precisions") {
  CHECK_NOTHROW(bench_phase<double>(BenchPhase::wg, 24, 5, 2, 0.25, DropoutMode::nr_rh_st, 3, 1,
                                    11));
  CHECK_NOTHROW(bench_phase<float>(BenchPhase::fp, 24, 5, 2, 0.25, DropoutMode::nr_st, 3, 1, 11));
}

TEST_CASE("bench config json parses and validates") {
  const std::string text = R"({
    "h_values": [64, 128], "b_values": [20], "t_values": [5], "p_values": [0.5],
    "modes": ["nr-st", "nr-rh-st"], "repetitions": 3, "warmup": 1,
    "threads": 1, "precision": "f32", "seed": 9, "out_csv": "x.csv"
  })";
  const BenchConfig c = parse_bench_config(text);
  CHECK(c.h_values == std::vector<index>{64, 128});
  CHECK(c.b_values == std::vector<index>{20});
  CHECK(c.p_values == std::vector<double>{0.5});
  REQUIRE(c.modes.size() == 2);
  CHECK(c.modes[0] == DropoutMode::nr_st);
  CHECK(c.repetitions == 3);
  CHECK(c.precision == Precision::f32);
  CHECK(c.out_csv == "x.csv");
  CHECK_NOTHROW(c.validate());

  CHECK_THROWS_AS(parse_bench_config("{\"bogus\": 1}"), ConfigError);
  CHECK_THROWS_AS(parse_bench_config("{\"modes\": [\"st\"]}"), ConfigError);

  BenchConfig bad = c;
  bad.repetitions = 1;  // medians need at least 3
  CHECK_THROWS_AS(bad.validate(), ValueError);
}

TEST_CASE("the suite walks the grid and writes one row per phase plus overall") {
  const auto csv_path = std::filesystem::temp_directory_path() / "sdlstm_bench_test.csv";
  BenchConfig config;
  config.h_values = {16, 24};
  config.b_values = {4};
  config.t_values = {2};
  config.p_values = {0.5};
  config.modes = {DropoutMode::nr_rh_st};
  config.repetitions = 3;
  config.warmup = 1;
  config.precision = Precision::f64;
  config.seed = 3;
  config.out_csv = csv_path.string();

  const std::vector<BenchRecord> records = bench_suite(config);
  CHECK(records.size() == 8);  // 2 shapes x (3 phases + overall)

  std::size_t overall_count = 0;
  for (const BenchRecord& r : records) {
    if (r.phase == BenchPhase::overall) {
      overall_count += 1;
      std::int64_t wall_d = 0;
      std::int64_t wall_s = 0;
      for (const BenchRecord& q : records) {
        if (q.phase != BenchPhase::overall && q.h == r.h) {
          wall_d += q.wall_ns_dense;
          wall_s += q.wall_ns_sparse;
        }
      }
      CHECK(r.wall_ns_dense == wall_d);
      CHECK(r.wall_ns_sparse == wall_s);
    }
  }
  CHECK(overall_count == 2);

  std::ifstream in(csv_path);
  std::string line;
  std::getline(in, line);
  CHECK(line ==
        "phase,mode,H,B,T,p,wall_ns_dense,wall_ns_sparse,speedup,flops_dense,flops_sparse,"
        "threads");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) rows += 1;
  }
  CHECK(rows == records.size());
  std::filesystem::remove(csv_path);
}
