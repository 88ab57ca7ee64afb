#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdlstm/lm_model.hpp"

namespace sdlstm {

// The three GEMM-bound regions of one training iteration, plus their sum.
enum class BenchPhase { fp, bp, wg, overall };

const char* bench_phase_name(BenchPhase phase);

struct BenchRecord {
  BenchPhase phase{BenchPhase::fp};
  DropoutMode mode{DropoutMode::nr_st};
  index h{0};
  index b{0};
  index t{0};
  double p{0.0};
  std::int64_t wall_ns_dense{0};
  std::int64_t wall_ns_sparse{0};
  double speedup{0.0};  // dense / sparse
  std::int64_t flops_dense{0};
  std::int64_t flops_sparse{0};
  int threads{1};
};

struct BenchConfig {
  std::vector<index> h_values;
  std::vector<index> b_values;
  std::vector<index> t_values;
  std::vector<index> v_values;  // accepted for grid symmetry; cell GEMMs have no V
  std::vector<double> p_values;
  std::vector<DropoutMode> modes;
  int repetitions{5};
  int warmup{1};
  int threads{1};
  Precision precision{Precision::f64};
  std::uint64_t seed{1};
  std::string out_csv{"bench.csv"};

  void validate() const;
};

BenchConfig parse_bench_config(const std::string& json_text);
BenchConfig load_bench_config(const std::string& path);

// Times one phase's GEMM workload over a T-step single-layer window, dense vs
// compacted-sparse, on identical seeded operands. Dense operands carry the
// masks pre-applied (computed outside timing); gather/scatter costs land in
// the sparse measurement. Sparse results are checked against the dense path
// before any timing; wall numbers are medians over reps after warmup.
// Elementwise gate math and bias adds are excluded: this times the GEMMs.
template <typename T>
BenchRecord bench_phase(BenchPhase phase, index h, index b, index t, double p, DropoutMode mode,
                        int reps, int warmup, std::uint64_t seed);

// Full grid x modes x {FP, BP, WG}, plus one overall record per combination
// built from the summed phase times. Writes the CSV and returns the records.
std::vector<BenchRecord> bench_suite(const BenchConfig& config);

// Header: phase,mode,H,B,T,p,wall_ns_dense,wall_ns_sparse,speedup,
// flops_dense,flops_sparse,threads
void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records);

}  // namespace sdlstm
