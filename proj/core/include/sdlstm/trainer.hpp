#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdlstm/lm_model.hpp"

namespace sdlstm {

// Byte-level token stream: each distinct byte present in the text gets a
// contiguous id, assigned in ascending byte order.
struct Corpus {
  std::vector<std::int32_t> tokens;
  std::vector<unsigned char> id_to_byte;

  index vocab() const { return static_cast<index>(id_to_byte.size()); }
};

Corpus tokenize(const std::string& text);
Corpus load_corpus(const std::string& path);
std::string detokenize(const std::vector<std::int32_t>& ids,
                       const std::vector<unsigned char>& id_to_byte);

// Contiguous cuts: first train_frac of the stream, then valid_frac, rest test.
struct CorpusSplits {
  std::vector<std::int32_t> train;
  std::vector<std::int32_t> valid;
  std::vector<std::int32_t> test;
};

CorpusSplits split_corpus(const Corpus& corpus, double train_frac, double valid_frac,
                          double test_frac);

struct WindowBatch {
  TokenMatrix inputs;   // B x T
  TokenMatrix targets;  // B x T, inputs shifted one position ahead
};

// Reshapes the stream into B contiguous lanes of floor(len / B) tokens;
// consecutive windows advance by T within each lane, trailing remainder
// dropped. Requires at least one full window: len >= B * (T + 1).
std::vector<WindowBatch> make_batches(const std::vector<std::int32_t>& stream, index batch,
                                      index steps);

struct StepStats {
  double grad_norm{0.0};
  double clip_scale{1.0};
};

// Global-norm clipping then params -= lr * scale * grads. Throws ValueError
// on a non-finite norm; training surfaces bugs instead of skipping steps.
template <typename T>
StepStats sgd_step(ModelParams<T>& params, const ModelGradients<T>& grads, double lr,
                   double clip_norm);

struct TrainConfig {
  std::string corpus_path;
  double split_train{0.9};
  double split_valid{0.05};
  double split_test{0.05};
  index batch_size{20};
  index unroll_steps{35};
  index epochs{3};
  double lr{1.0};
  double lr_decay{0.8};
  index lr_decay_start_epoch{2};
  double clip_norm{5.0};
  std::uint64_t seed{1};
  Precision precision{Precision::f32};
  std::string out_dir{"run"};
  index embed_dim{128};
  index hidden{128};
  index layers{2};
  double dropout_nr{0.5};
  std::optional<double> dropout_rh;  // consumed only by nr-rh-st
  DropoutMode mode{DropoutMode::nr_st};
  double init_range{0.05};
  ComputeMode compute{ComputeMode::sparse};
  int threads{1};

  void validate() const;
};

// Flat JSON object with the field names above as keys; unknown keys rejected.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);

struct EpochRecord {
  index epoch{0};  // 1-based
  double train_loss{0.0};
  double valid_loss{0.0};
  double valid_ppl{0.0};
  double lr{0.0};
  double wall_seconds{0.0};
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double test_loss{0.0};
  double test_ppl{0.0};
  std::string mode_label;
  Precision precision{Precision::f32};
  int threads{1};
  std::string checkpoint_path;
};

struct EvalResult {
  double loss{0.0};
  double ppl{0.0};
};

// Dropout off, state carried across the split's windows, mean loss over all
// processed positions. Identical code path for every dropout mode.
template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const ModelConfig& config,
                    const std::vector<std::int32_t>& stream, index batch, index steps);

// Full run: load + split corpus, init params, per-epoch window loop with a
// fresh mask schedule per window and (h, c) carried across windows (reset at
// epoch start), lr decay from lr_decay_start_epoch, per-epoch validation;
// writes report.json, epochs.csv, and checkpoint.bin into out_dir.
TrainReport train(const TrainConfig& config);

void write_epochs_csv(const std::string& path, const TrainReport& report);
void write_report_json(const std::string& path, const TrainConfig& config,
                       const TrainReport& report);

}  // namespace sdlstm
