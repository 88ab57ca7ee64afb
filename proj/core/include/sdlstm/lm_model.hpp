#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdlstm/lstm.hpp"
#include "sdlstm/masks.hpp"

namespace sdlstm {

// The three dropout configurations the engine distinguishes: elementwise
// random masks on the non-recurrent direction, structured masks on the
// non-recurrent direction, and structured masks on both directions.
enum class DropoutMode { baseline_nr_random, nr_st, nr_rh_st };

DropoutMode parse_dropout_mode(const std::string& label);
std::string dropout_mode_label(DropoutMode mode);
MaskCase mask_case_for(DropoutMode mode);

struct ModelConfig {
  index vocab{0};
  index embed_dim{0};
  index hidden{0};
  index layers{0};
  double dropout_nr{0.0};
  std::optional<double> dropout_rh;
  MaskCase mask_case;
  DropoutMode mode_label{DropoutMode::baseline_nr_random};

  // mode_label must agree with (mask_case, dropout_rh): structured modes use
  // structured per-step masks, nr-rh-st additionally requires a recurrent rate.
  void validate() const;
};

// Builds a config whose mask_case and rates are consistent with the mode.
ModelConfig make_model_config(DropoutMode mode, index vocab, index embed_dim, index hidden,
                              index layers, double p_nr, std::optional<double> p_rh);

template <typename T>
struct ModelParams {
  Matrix<T> embedding;            // V x E
  std::vector<LstmParams<T>> lstm;
  Matrix<T> head;                 // H x V
  std::vector<T> head_bias;       // V

  void validate(const ModelConfig& config) const;
};

// Token ids, one row per batch lane.
using TokenMatrix = Matrix<std::int32_t>;

// Every entry i.i.d. uniform in [-init_range, init_range]; draw order is
// fixed (embedding, per-layer W/U/b, head, head bias) so results are
// reproducible by seed alone.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, T init_range, std::uint64_t seed);

template <typename T>
struct CarriedState {
  std::vector<Matrix<T>> h;  // per layer, B x H
  std::vector<Matrix<T>> c;

  void reset(const ModelConfig& config, index batch);
};

// Forward record for one window. Mask references point into the schedule the
// window ran with; the schedule must outlive the tape.
template <typename T>
struct WindowTape {
  Tape<T> lstm;                      // [layer][step]
  std::vector<Matrix<T>> head_in;    // per step, B x H, pre-head mask applied
  std::vector<MaskRef> head_mask;    // per step
  TokenMatrix tokens;                // the window's input ids, B x T
};

// NR mask slots 0..L-1 feed the layer inputs (slot 0 is embed_dim wide), slot
// L is the pre-head mask; RH streams exist only when the config carries a
// recurrent rate.
MaskSchedule make_window_schedule(const ModelConfig& config, index steps, index batch,
                                  std::uint64_t seed);

// Embeds the window, runs the stacked layers with the schedule's masks, and
// projects each step's masked top-layer state through the head. carried is
// read at entry and left holding the final (h, c). schedule == nullptr turns
// all dropout off (evaluation).
template <typename T>
void forward_window(const ModelParams<T>& params, const ModelConfig& config,
                    const TokenMatrix& tokens, CarriedState<T>& carried,
                    const MaskSchedule* schedule, ComputeMode mode,
                    std::vector<Matrix<T>>& logits, WindowTape<T>& tape);

// Mean cross-entropy in nats over all B*T positions. When d_logits is given
// it receives (softmax - one_hot) / (B*T) per step.
template <typename T>
T loss_and_grad(const std::vector<Matrix<T>>& logits, const TokenMatrix& targets,
                std::vector<Matrix<T>>* d_logits);

template <typename T>
struct ModelGradients {
  std::vector<GradientSet<T>> lstm;
  Matrix<T> d_embedding;
  Matrix<T> d_head;
  std::vector<T> d_head_bias;

  void resize_like(const ModelParams<T>& params);
};

// Head gradients (row-sparse kernel under the pre-head mask), masked d_h into
// the top layer (output-column-sparse), truncated BPTT, then embedding
// scatter-add by token id. Overwrites grads.
template <typename T>
void backward_window(const ModelParams<T>& params, const ModelConfig& config,
                     const WindowTape<T>& tape, const std::vector<Matrix<T>>& d_logits,
                     ComputeMode mode, ModelGradients<T>& grads);

double perplexity(double mean_nats);

// Checkpoint layout: magic "SDLM0001"; little-endian u32 version, u32
// precision code (4 = single, 8 = double), u32 V, E, H, L; then little-endian
// row-major arrays in order embedding, per-layer (W, U, b), head, head_bias.
struct CheckpointHeader {
  std::uint32_t version{0};
  Precision precision{Precision::f64};
  index vocab{0};
  index embed_dim{0};
  index hidden{0};
  index layers{0};
};

template <typename T>
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ModelParams<T>& params);

CheckpointHeader peek_checkpoint(const std::string& path);

// Errors (IoError) on bad magic, truncation, or a precision code that does
// not match T.
template <typename T>
void load_checkpoint(const std::string& path, CheckpointHeader& header, ModelParams<T>& params);

}  // namespace sdlstm
