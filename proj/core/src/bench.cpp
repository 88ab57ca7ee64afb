#include "sdlstm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sdlstm/threading.hpp"

namespace sdlstm {

namespace {

using nlohmann::json;

constexpr std::uint64_t kBenchMaskStream = 0x626d736b;
constexpr std::uint64_t kBenchDataStream = 0x62646174;

template <typename T>
struct BenchData {
  MaskSchedule schedule;
  std::vector<Matrix<T>> xd;       // per step, B x H, NR mask applied
  std::vector<Matrix<T>> hd;       // per step, B x H, RH mask applied (raw in NR-only modes)
  std::vector<Matrix<T>> xdt;      // H x B
  std::vector<Matrix<T>> hdt;      // H x B
  std::vector<Matrix<T>> d_gates;  // per step, B x 4H
  Matrix<T> w, u;                  // H x 4H
  Matrix<T> wt, ut;                // 4H x H
};

template <typename T>
BenchData<T> make_bench_data(index h, index b, index t, double p, DropoutMode mode,
                             std::uint64_t seed) {
  BenchData<T> d;
  MaskSchedule::Params sp;
  sp.mode = mask_case_for(mode);
  sp.steps = t;
  sp.batch = b;
  sp.nr_widths = {h};
  sp.p_nr = p;
  if (mode == DropoutMode::nr_rh_st) {
    sp.p_rh = p;
    sp.rh_slots = 1;
    sp.rh_width = h;
  }
  sp.seed = derive_seed(seed, kBenchMaskStream);
  d.schedule = MaskSchedule::build(sp);

  Rng rng(derive_seed(seed, kBenchDataStream));
  const auto fill = [&](Matrix<T>& m, index rows, index cols) {
    m.resize(rows, cols);
    for (T& v : m.data()) v = static_cast<T>(rng.next_uniform(-1.0, 1.0));
  };
  fill(d.w, h, 4 * h);
  fill(d.u, h, 4 * h);
  transpose_into(d.wt, d.w);
  transpose_into(d.ut, d.u);

  const auto tu = static_cast<std::size_t>(t);
  d.xd.resize(tu);
  d.hd.resize(tu);
  d.xdt.resize(tu);
  d.hdt.resize(tu);
  d.d_gates.resize(tu);
  Matrix<T> raw;
  for (index step = 0; step < t; ++step) {
    const auto su = static_cast<std::size_t>(step);
    fill(raw, b, h);
    d.schedule.nr_mask(0, step).apply_into(d.xd[su], raw);
    fill(raw, b, h);
    d.schedule.rh_mask(0, step).apply_into(d.hd[su], raw);
    transpose_into(d.xdt[su], d.xd[su]);
    transpose_into(d.hdt[su], d.hd[su]);
    fill(d.d_gates[su], b, 4 * h);
  }
  return d;
}

index kept_of(MaskRef mask, index width) {
  return mask.is_structured() ? mask.structured().kept_count() : width;
}

// One full T-step pass per phase. The dense variants run plain GEMMs on the
// pre-masked operands (plus the mask application the dense implementation
// owes in BP); sparse variants route structured masks through the compacted
// kernels. Outputs land in caller buffers reused across repetitions.

template <typename T>
void run_fp_dense(const BenchData<T>& d, Matrix<T>& preact) {
  const index steps = static_cast<index>(d.xd.size());
  for (index t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    matmul_into(preact, d.xd[tu], d.w);
    matmul_into(preact, d.hd[tu], d.u, true);
  }
}

template <typename T>
void run_fp_sparse(const BenchData<T>& d, Matrix<T>& preact, KernelScratch<T>& ks) {
  const index steps = static_cast<index>(d.xd.size());
  for (index t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const MaskRef nr = d.schedule.nr_mask(0, t);
    if (nr.is_structured()) {
      gemm_lhs_colsparse_into(preact, d.xd[tu], nr.structured(), d.w, ks);
    } else {
      matmul_into(preact, d.xd[tu], d.w);
    }
    const MaskRef rh = d.schedule.rh_mask(0, t);
    if (rh.is_structured()) {
      gemm_lhs_colsparse_into(preact, d.hd[tu], rh.structured(), d.u, ks, /*accumulate=*/true);
    } else {
      matmul_into(preact, d.hd[tu], d.u, /*accumulate=*/true);
    }
  }
}

template <typename T>
void run_bp_dense(const BenchData<T>& d, Matrix<T>& d_x, Matrix<T>& d_h_prev, Matrix<T>& tmp) {
  const index steps = static_cast<index>(d.d_gates.size());
  for (index t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const MaskRef nr = d.schedule.nr_mask(0, t);
    matmul_into(tmp, d.d_gates[tu], d.wt);
    nr.apply_into(d_x, tmp);
    const MaskRef rh = d.schedule.rh_mask(0, t);
    if (rh.active()) {
      matmul_into(tmp, d.d_gates[tu], d.ut);
      rh.apply_into(d_h_prev, tmp);
    } else {
      matmul_into(d_h_prev, d.d_gates[tu], d.ut);
    }
  }
}

template <typename T>
void run_bp_sparse(const BenchData<T>& d, Matrix<T>& d_x, Matrix<T>& d_h_prev, Matrix<T>& tmp,
                   KernelScratch<T>& ks) {
  const index steps = static_cast<index>(d.d_gates.size());
  for (index t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const MaskRef nr = d.schedule.nr_mask(0, t);
    if (nr.is_structured()) {
      gemm_output_colsparse_into(d_x, d.d_gates[tu], d.wt, nr.structured(), ks);
    } else {
      matmul_into(tmp, d.d_gates[tu], d.wt);
      nr.apply_into(d_x, tmp);
    }
    const MaskRef rh = d.schedule.rh_mask(0, t);
    if (rh.is_structured()) {
      gemm_output_colsparse_into(d_h_prev, d.d_gates[tu], d.ut, rh.structured(), ks);
    } else if (rh.active()) {
      matmul_into(tmp, d.d_gates[tu], d.ut);
      rh.apply_into(d_h_prev, tmp);
    } else {
      matmul_into(d_h_prev, d.d_gates[tu], d.ut);
    }
  }
}

template <typename T>
void run_wg_dense(const BenchData<T>& d, Matrix<T>& dw, Matrix<T>& du) {
  const index steps = static_cast<index>(d.d_gates.size());
  for (index t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    matmul_into(dw, d.xdt[tu], d.d_gates[tu], /*accumulate=*/true);
    matmul_into(du, d.hdt[tu], d.d_gates[tu], /*accumulate=*/true);
  }
}

template <typename T>
void run_wg_sparse(const BenchData<T>& d, Matrix<T>& dw, Matrix<T>& du, KernelScratch<T>& ks) {
  const index steps = static_cast<index>(d.d_gates.size());
  for (index t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const MaskRef nr = d.schedule.nr_mask(0, t);
    if (nr.is_structured()) {
      gemm_lhs_rowsparse_into(dw, d.xdt[tu], nr.structured(), d.d_gates[tu], ks,
                              /*accumulate=*/true);
    } else {
      matmul_into(dw, d.xdt[tu], d.d_gates[tu], /*accumulate=*/true);
    }
    const MaskRef rh = d.schedule.rh_mask(0, t);
    if (rh.is_structured()) {
      gemm_lhs_rowsparse_into(du, d.hdt[tu], rh.structured(), d.d_gates[tu], ks,
                              /*accumulate=*/true);
    } else {
      matmul_into(du, d.hdt[tu], d.d_gates[tu], /*accumulate=*/true);
    }
  }
}

template <typename T>
double max_rel_diff(const Matrix<T>& a, const Matrix<T>& b) {
  check_shape(a.same_shape(b), "max_rel_diff: shape mismatch");
  double worst = 0.0;
  for (index i = 0; i < a.size(); ++i) {
    const double av = static_cast<double>(a.data()[static_cast<std::size_t>(i)]);
    const double bv = static_cast<double>(b.data()[static_cast<std::size_t>(i)]);
    const double denom = std::max({1.0, std::abs(av), std::abs(bv)});
    worst = std::max(worst, std::abs(av - bv) / denom);
  }
  return worst;
}

// Sparse results must match the dense path before any timing happens.
template <typename T>
void correctness_gate(BenchPhase phase, const BenchData<T>& d) {
  const double tol = sizeof(T) == 8 ? 1e-10 : 1e-4;
  const index steps = static_cast<index>(d.d_gates.size());
  KernelScratch<T> ks;
  Matrix<T> dense_a, dense_b, sparse_a, sparse_b, tmp;
  for (index t = 0; t < steps; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const MaskRef nr = d.schedule.nr_mask(0, t);
    const MaskRef rh = d.schedule.rh_mask(0, t);
    double err = 0.0;
    switch (phase) {
      case BenchPhase::fp: {
        matmul_into(dense_a, d.xd[tu], d.w);
        matmul_into(dense_a, d.hd[tu], d.u, true);
        if (nr.is_structured()) {
          gemm_lhs_colsparse_into(sparse_a, d.xd[tu], nr.structured(), d.w, ks);
        } else {
          matmul_into(sparse_a, d.xd[tu], d.w);
        }
        if (rh.is_structured()) {
          gemm_lhs_colsparse_into(sparse_a, d.hd[tu], rh.structured(), d.u, ks, true);
        } else {
          matmul_into(sparse_a, d.hd[tu], d.u, true);
        }
        err = max_rel_diff(dense_a, sparse_a);
        break;
      }
      case BenchPhase::bp: {
        matmul_into(tmp, d.d_gates[tu], d.wt);
        nr.apply_into(dense_a, tmp);
        if (rh.active()) {
          matmul_into(tmp, d.d_gates[tu], d.ut);
          rh.apply_into(dense_b, tmp);
        } else {
          matmul_into(dense_b, d.d_gates[tu], d.ut);
        }
        if (nr.is_structured()) {
          gemm_output_colsparse_into(sparse_a, d.d_gates[tu], d.wt, nr.structured(), ks);
        } else {
          matmul_into(tmp, d.d_gates[tu], d.wt);
          nr.apply_into(sparse_a, tmp);
        }
        if (rh.is_structured()) {
          gemm_output_colsparse_into(sparse_b, d.d_gates[tu], d.ut, rh.structured(), ks);
        } else if (rh.active()) {
          matmul_into(tmp, d.d_gates[tu], d.ut);
          rh.apply_into(sparse_b, tmp);
        } else {
          matmul_into(sparse_b, d.d_gates[tu], d.ut);
        }
        err = std::max(max_rel_diff(dense_a, sparse_a), max_rel_diff(dense_b, sparse_b));
        break;
      }
      case BenchPhase::wg: {
        matmul_into(dense_a, d.xdt[tu], d.d_gates[tu]);
        matmul_into(dense_b, d.hdt[tu], d.d_gates[tu]);
        if (nr.is_structured()) {
          gemm_lhs_rowsparse_into(sparse_a, d.xdt[tu], nr.structured(), d.d_gates[tu], ks);
        } else {
          matmul_into(sparse_a, d.xdt[tu], d.d_gates[tu]);
        }
        if (rh.is_structured()) {
          gemm_lhs_rowsparse_into(sparse_b, d.hdt[tu], rh.structured(), d.d_gates[tu], ks);
        } else {
          matmul_into(sparse_b, d.hdt[tu], d.d_gates[tu]);
        }
        err = std::max(max_rel_diff(dense_a, sparse_a), max_rel_diff(dense_b, sparse_b));
        break;
      }
      case BenchPhase::overall:
        throw ValueError("bench_phase: overall is derived, not timed directly");
    }
    if (err > tol) {
      throw ValueError("bench correctness gate failed at step " + std::to_string(t) +
                       " of phase " + bench_phase_name(phase));
    }
  }
}

template <typename Fn>
std::int64_t time_ns(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count();
}

std::int64_t median_ns(std::vector<std::int64_t> samples) {
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  const std::int64_t mid = samples[n / 2];
  return n % 2 == 1 ? mid : (samples[n / 2 - 1] + mid) / 2;
}

}  // namespace

const char* bench_phase_name(BenchPhase phase) {
  switch (phase) {
    case BenchPhase::fp: return "FP";
    case BenchPhase::bp: return "BP";
    case BenchPhase::wg: return "WG";
    case BenchPhase::overall: return "overall";
  }
  throw ValueError("unknown bench phase");
}

void BenchConfig::validate() const {
  check_value(repetitions >= 3, "BenchConfig: repetitions must be >= 3");
  check_value(warmup >= 1, "BenchConfig: warmup must be >= 1");
  check_value(threads >= 1, "BenchConfig: threads must be >= 1");
  for (const index h : h_values) check_value(h >= 1, "BenchConfig: H must be >= 1");
  for (const index b : b_values) check_value(b >= 1, "BenchConfig: B must be >= 1");
  for (const index t : t_values) check_value(t >= 1, "BenchConfig: T must be >= 1");
  for (const double p : p_values) {
    check_value(p >= 0.0 && p < 1.0, "BenchConfig: p must be in [0, 1)");
  }
  check_value(!out_csv.empty(), "BenchConfig: out_csv missing");
}

template <typename T>
BenchRecord bench_phase(BenchPhase phase, index h, index b, index t, double p, DropoutMode mode,
                        int reps, int warmup, std::uint64_t seed) {
  check_value(h >= 1 && b >= 1 && t >= 1, "bench_phase: dims must be positive");
  check_value(p >= 0.0 && p < 1.0, "bench_phase: p must be in [0, 1)");
  check_value(reps >= 1 && warmup >= 0, "bench_phase: need at least one timed repetition");
  check_value(phase != BenchPhase::overall, "bench_phase: overall is derived from phase sums");

  const BenchData<T> data = make_bench_data<T>(h, b, t, p, mode, seed);
  correctness_gate(phase, data);

  KernelScratch<T> ks;
  Matrix<T> out_a(b, 4 * h);  // FP preact; BP reuses as d_x sized below
  Matrix<T> out_b;
  Matrix<T> tmp;
  Matrix<T> dw(h, 4 * h);
  Matrix<T> du(h, 4 * h);

  auto run_dense = [&]() {
    switch (phase) {
      case BenchPhase::fp: run_fp_dense(data, out_a); break;
      case BenchPhase::bp: run_bp_dense(data, out_a, out_b, tmp); break;
      case BenchPhase::wg: run_wg_dense(data, dw, du); break;
      case BenchPhase::overall: break;
    }
  };
  auto run_sparse = [&]() {
    switch (phase) {
      case BenchPhase::fp: run_fp_sparse(data, out_a, ks); break;
      case BenchPhase::bp: run_bp_sparse(data, out_a, out_b, tmp, ks); break;
      case BenchPhase::wg: run_wg_sparse(data, dw, du, ks); break;
      case BenchPhase::overall: break;
    }
  };
  auto reset_accumulators = [&]() {
    if (phase == BenchPhase::wg) {
      dw.fill(T{0});
      du.fill(T{0});
    }
  };

  for (int i = 0; i < warmup; ++i) {
    reset_accumulators();
    run_dense();
    reset_accumulators();
    run_sparse();
  }
  std::vector<std::int64_t> dense_ns;
  std::vector<std::int64_t> sparse_ns;
  dense_ns.reserve(static_cast<std::size_t>(reps));
  sparse_ns.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    reset_accumulators();
    dense_ns.push_back(time_ns(run_dense));
    reset_accumulators();
    sparse_ns.push_back(time_ns(run_sparse));
  }

  BenchRecord record;
  record.phase = phase;
  record.mode = mode;
  record.h = h;
  record.b = b;
  record.t = t;
  record.p = p;
  record.wall_ns_dense = median_ns(dense_ns);
  record.wall_ns_sparse = median_ns(sparse_ns);
  record.speedup = static_cast<double>(record.wall_ns_dense) /
                   static_cast<double>(std::max<std::int64_t>(1, record.wall_ns_sparse));
  record.threads = kernel_threads();

  for (index step = 0; step < t; ++step) {
    const index k_nr = kept_of(data.schedule.nr_mask(0, step), h);
    const index k_rh = kept_of(data.schedule.rh_mask(0, step), h);
    // Each phase runs two GEMMs per step whose dense cost is 2*B*H*4H; the
    // sparse cost replaces H by that GEMM's kept count.
    record.flops_dense += 2 * b * h * 4 * h * 2;
    record.flops_sparse += 2 * b * k_nr * 4 * h + 2 * b * k_rh * 4 * h;
  }
  return record;
}

BenchConfig parse_bench_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bench config parse: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("bench config must be a JSON object");
  BenchConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "h_values") {
        c.h_values = value.get<std::vector<index>>();
      } else if (key == "b_values") {
        c.b_values = value.get<std::vector<index>>();
      } else if (key == "t_values") {
        c.t_values = value.get<std::vector<index>>();
      } else if (key == "v_values") {
        c.v_values = value.get<std::vector<index>>();
      } else if (key == "p_values") {
        c.p_values = value.get<std::vector<double>>();
      } else if (key == "modes") {
        c.modes.clear();
        for (const auto& m : value) c.modes.push_back(parse_dropout_mode(m.get<std::string>()));
      } else if (key == "repetitions") {
        c.repetitions = value.get<int>();
      } else if (key == "warmup") {
        c.warmup = value.get<int>();
      } else if (key == "threads") {
        c.threads = value.get<int>();
      } else if (key == "precision") {
        const auto name = value.get<std::string>();
        if (name == "f32") {
          c.precision = Precision::f32;
        } else if (name == "f64") {
          c.precision = Precision::f64;
        } else {
          throw ConfigError("unknown precision: " + name);
        }
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "out_csv") {
        c.out_csv = value.get<std::string>();
      } else {
        throw ConfigError("unknown bench config key: " + key);
      }
    } catch (const json::exception& e) {
      throw ConfigError("bench config key '" + key + "': " + e.what());
    }
  }
  return c;
}

BenchConfig load_bench_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open bench config: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("bench config read failed: " + path);
  return parse_bench_config(buffer.str());
}

std::vector<BenchRecord> bench_suite(const BenchConfig& config) {
  config.validate();
  set_kernel_threads(config.threads);
  std::vector<BenchRecord> records;
  std::uint64_t combo = 0;
  for (const DropoutMode mode : config.modes) {
    for (const index h : config.h_values) {
      for (const index b : config.b_values) {
        for (const index t : config.t_values) {
          for (const double p : config.p_values) {
            const std::uint64_t seed = derive_seed(config.seed, combo++);
            BenchRecord overall;
            overall.phase = BenchPhase::overall;
            overall.mode = mode;
            overall.h = h;
            overall.b = b;
            overall.t = t;
            overall.p = p;
            overall.threads = config.threads;
            for (const BenchPhase phase : {BenchPhase::fp, BenchPhase::bp, BenchPhase::wg}) {
              BenchRecord rec =
                  config.precision == Precision::f64
                      ? bench_phase<double>(phase, h, b, t, p, mode, config.repetitions,
                                            config.warmup, seed)
                      : bench_phase<float>(phase, h, b, t, p, mode, config.repetitions,
                                           config.warmup, seed);
              overall.wall_ns_dense += rec.wall_ns_dense;
              overall.wall_ns_sparse += rec.wall_ns_sparse;
              overall.flops_dense += rec.flops_dense;
              overall.flops_sparse += rec.flops_sparse;
              records.push_back(rec);
            }
            overall.speedup = static_cast<double>(overall.wall_ns_dense) /
                              static_cast<double>(std::max<std::int64_t>(1, overall.wall_ns_sparse));
            records.push_back(overall);
          }
        }
      }
    }
  }
  write_bench_csv(config.out_csv, records);
  return records;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write bench csv: " + path);
  out << "phase,mode,H,B,T,p,wall_ns_dense,wall_ns_sparse,speedup,flops_dense,flops_sparse,"
         "threads\n";
  for (const BenchRecord& r : records) {
    out << bench_phase_name(r.phase) << ',' << dropout_mode_label(r.mode) << ',' << r.h << ','
        << r.b << ',' << r.t << ',' << format_double(r.p) << ',' << r.wall_ns_dense << ','
        << r.wall_ns_sparse << ',' << format_double(r.speedup) << ',' << r.flops_dense << ','
        << r.flops_sparse << ',' << r.threads << '\n';
  }
  if (!out) throw IoError("bench csv write failed: " + path);
}

#define SDLSTM_INSTANTIATE_BENCH(T)                                                       \
  template BenchRecord bench_phase<T>(BenchPhase, index, index, index, double, DropoutMode, \
                                      int, int, std::uint64_t);

SDLSTM_INSTANTIATE_BENCH(float)
SDLSTM_INSTANTIATE_BENCH(double)

#undef SDLSTM_INSTANTIATE_BENCH

}  // namespace sdlstm
