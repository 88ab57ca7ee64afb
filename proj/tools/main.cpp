#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sdlstm/bench.hpp"
#include "sdlstm/common.hpp"
#include "sdlstm/lm_model.hpp"
#include "sdlstm/trainer.hpp"
#include "sdlstm/verify.hpp"

namespace {

// Machine contract: 0 success, 1 verification failure, 2 usage error,
// 3 I/O or config error.
constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIoConfig = 3;

constexpr double kGradcheckTol = 1e-5;

sdlstm::Precision parse_precision_flag(const std::string& name) {
  return name == "f64" ? sdlstm::Precision::f64 : sdlstm::Precision::f32;
}

struct TrainArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> mode;
  std::optional<std::string> precision;
};

int run_train(const TrainArgs& args) {
  sdlstm::TrainConfig config = sdlstm::load_train_config(args.config_path);
  if (args.seed) config.seed = *args.seed;
  if (args.out_dir) config.out_dir = *args.out_dir;
  if (args.mode) config.mode = sdlstm::parse_dropout_mode(*args.mode);
  if (args.precision) config.precision = parse_precision_flag(*args.precision);
  config.validate();

  const sdlstm::TrainReport report = sdlstm::train(config);
  std::printf("test_loss %.4f  test_ppl %.2f\n", report.test_loss, report.test_ppl);
  std::printf("wrote %s/epochs.csv, report.json, checkpoint.bin\n", config.out_dir.c_str());
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint_path;
  std::string config_path;
  std::string split;
};

template <typename T>
sdlstm::EvalResult eval_with(const EvalArgs& args, const sdlstm::ModelConfig& mc,
                             const std::vector<std::int32_t>& stream, sdlstm::index batch,
                             sdlstm::index steps) {
  sdlstm::CheckpointHeader header;
  sdlstm::ModelParams<T> params;
  sdlstm::load_checkpoint(args.checkpoint_path, header, params);
  return sdlstm::evaluate(params, mc, stream, batch, steps);
}

int run_eval(const EvalArgs& args) {
  const sdlstm::TrainConfig config = sdlstm::load_train_config(args.config_path);
  const sdlstm::CheckpointHeader header = sdlstm::peek_checkpoint(args.checkpoint_path);
  const sdlstm::Corpus corpus = sdlstm::load_corpus(config.corpus_path);
  if (corpus.vocab() != header.vocab) {
    throw sdlstm::ConfigError("checkpoint vocab " + std::to_string(header.vocab) +
                              " does not match corpus vocab " + std::to_string(corpus.vocab()));
  }
  const sdlstm::CorpusSplits splits =
      sdlstm::split_corpus(corpus, config.split_train, config.split_valid, config.split_test);
  const std::vector<std::int32_t>& stream = args.split == "valid" ? splits.valid : splits.test;
  const sdlstm::ModelConfig mc =
      sdlstm::make_model_config(config.mode, header.vocab, header.embed_dim, header.hidden,
                                header.layers, config.dropout_nr, config.dropout_rh);

  const sdlstm::EvalResult result =
      header.precision == sdlstm::Precision::f64
          ? eval_with<double>(args, mc, stream, config.batch_size, config.unroll_steps)
          : eval_with<float>(args, mc, stream, config.batch_size, config.unroll_steps);
  std::printf("%s loss %.6f  ppl %.4f\n", args.split.c_str(), result.loss, result.ppl);
  return kExitOk;
}

struct BenchArgs {
  std::string config_path;
  std::optional<int> threads;
};

int run_bench(const BenchArgs& args) {
  sdlstm::BenchConfig config = sdlstm::load_bench_config(args.config_path);
  if (args.threads) config.threads = *args.threads;
  config.validate();

  const std::vector<sdlstm::BenchRecord> records = sdlstm::bench_suite(config);
  for (const sdlstm::BenchRecord& r : records) {
    std::printf("%-7s %-18s H=%-4lld B=%-3lld T=%-3lld p=%.2f  speedup %.3f\n",
                sdlstm::bench_phase_name(r.phase), sdlstm::dropout_mode_label(r.mode).c_str(),
                static_cast<long long>(r.h), static_cast<long long>(r.b),
                static_cast<long long>(r.t), r.p, r.speedup);
  }
  std::printf("wrote %s\n", config.out_csv.c_str());
  return kExitOk;
}

struct GradcheckArgs {
  sdlstm::index hidden{8};
  sdlstm::index batch{4};
  sdlstm::index steps{5};
  sdlstm::index layers{2};
  std::string mode{"nr-rh-st"};
  std::uint64_t seed{1};
};

int run_gradcheck(const GradcheckArgs& args) {
  // Tolerance budget assumes double; the precision flag is deliberately
  // absent here.
  const sdlstm::GradcheckReport report =
      sdlstm::gradcheck_stack(args.hidden, args.batch, args.steps, args.layers,
                              sdlstm::parse_dropout_mode(args.mode), args.seed);
  std::printf("gradcheck %s: max relative error %.3e over %lld checks (tolerance %.0e)\n",
              args.mode.c_str(), report.max_rel, static_cast<long long>(report.checked),
              kGradcheckTol);
  return report.passed(kGradcheckTol) ? kExitOk : kExitVerifyFailed;
}

struct VerifyKernelsArgs {
  sdlstm::index trials{100};
  std::uint64_t seed{1};
};

int run_verify_kernels(const VerifyKernelsArgs& args) {
  const sdlstm::KernelVerifyReport report = sdlstm::verify_kernels(args.trials, args.seed);
  if (report.failures == 0) {
    std::printf("%lld kernel checks passed, max relative error %.3e\n",
                static_cast<long long>(report.checks), report.max_rel);
    return kExitOk;
  }
  std::printf("%lld of %lld kernel checks FAILED, max relative error %.3e\n",
              static_cast<long long>(report.failures), static_cast<long long>(report.checks),
              report.max_rel);
  return kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured-dropout LSTM: training, evaluation, benchmarks, verification"};
  app.require_subcommand(1);

  const std::vector<std::string> mode_names{"baseline-nr-random", "nr-st", "nr-rh-st"};

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a language model from a JSON config");
  train_cmd->add_option("--config", train_args.config_path, "Training config JSON")->required();
  train_cmd->add_option("--seed", train_args.seed, "Override the config seed");
  train_cmd->add_option("--out", train_args.out_dir, "Override the output directory");
  train_cmd->add_option("--mode", train_args.mode, "Override the dropout mode")
      ->check(CLI::IsMember(mode_names));
  train_cmd->add_option("--precision", train_args.precision, "Override the precision")
      ->check(CLI::IsMember({"f32", "f64"}));

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("--config", eval_args.config_path, "Training config JSON")->required();
  eval_cmd->add_option("--split", eval_args.split, "Which split to evaluate")
      ->required()
      ->check(CLI::IsMember({"valid", "test"}));

  BenchArgs bench_args;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Run the kernel benchmark suite");
  bench_cmd->add_option("--config", bench_args.config_path, "Benchmark config JSON")->required();
  bench_cmd->add_option("--threads", bench_args.threads, "Override the kernel thread count");

  GradcheckArgs gradcheck_args;
  CLI::App* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference check of the stacked-LSTM gradients (double precision)");
  // The default -h help shorthand would collide with the --h flag.
  gradcheck_cmd->set_help_flag("--help", "Print this help message and exit");
  gradcheck_cmd->add_option("--h", gradcheck_args.hidden, "Hidden width")
      ->capture_default_str();
  gradcheck_cmd->add_option("--b", gradcheck_args.batch, "Batch size")->capture_default_str();
  gradcheck_cmd->add_option("--t", gradcheck_args.steps, "Unroll steps")->capture_default_str();
  gradcheck_cmd->add_option("--layers", gradcheck_args.layers, "Layer count")
      ->capture_default_str();
  gradcheck_cmd->add_option("--mode", gradcheck_args.mode, "Dropout mode")
      ->capture_default_str()
      ->check(CLI::IsMember(mode_names));
  gradcheck_cmd->add_option("--seed", gradcheck_args.seed, "Seed")->capture_default_str();

  VerifyKernelsArgs verify_args;
  CLI::App* verify_cmd = app.add_subcommand(
      "verify-kernels", "Randomized dense-oracle equivalence of the three compacted kernels");
  verify_cmd->add_option("--trials", verify_args.trials, "Trials per kernel")
      ->capture_default_str();
  verify_cmd->add_option("--seed", verify_args.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (bench_cmd->parsed()) return run_bench(bench_args);
    if (gradcheck_cmd->parsed()) return run_gradcheck(gradcheck_args);
    if (verify_cmd->parsed()) return run_verify_kernels(verify_args);
  } catch (const sdlstm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitIoConfig;
  } catch (const sdlstm::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIoConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitVerifyFailed;
  }
  return kExitUsage;
}
