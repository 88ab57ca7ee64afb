#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "sdlstm/common.hpp"
#include "sdlstm/matrix.hpp"

namespace sdlstm {

// Column-level dropout mask, uniform within a batch: every row drops the
// same feature columns. The dropped count is fixed at round(rate * width) so
// compacted kernel shapes are deterministic.
struct StructuredMask {
  index width{0};
  std::vector<index> dropped;  // sorted
  std::vector<index> kept;     // sorted complement
  double rate{0.0};
  double scale{1.0};  // 1 / (1 - rate), inverted-dropout convention

  index kept_count() const { return static_cast<index>(kept.size()); }
};

// Per-element Bernoulli mask over a full activation (rows = batch).
struct ElementMask {
  index rows{0};
  index cols{0};
  std::vector<std::uint8_t> keep;  // rows * cols entries
  double rate{0.0};
  double scale{1.0};
};

enum class WithinBatch { random, structured };
enum class AcrossTime { different, same };

// One point in the 2x2 taxonomy of mask uniformity: uniform or not within a
// batch, shared or not across time steps.
struct MaskCase {
  WithinBatch within_batch{WithinBatch::random};
  AcrossTime across_time{AcrossTime::different};

  bool structured() const { return within_batch == WithinBatch::structured; }
  bool shared_across_time() const { return across_time == AcrossTime::same; }
};

// The four combinations, named by behavior.
inline constexpr MaskCase kRandomPerStep{WithinBatch::random, AcrossTime::different};
inline constexpr MaskCase kRandomShared{WithinBatch::random, AcrossTime::same};
inline constexpr MaskCase kStructuredPerStep{WithinBatch::structured, AcrossTime::different};
inline constexpr MaskCase kStructuredShared{WithinBatch::structured, AcrossTime::same};

using MaskVariant = std::variant<StructuredMask, ElementMask>;

// Nullable view over a recorded mask. Inactive means no dropout (identity).
class MaskRef {
public:
  MaskRef() = default;
  explicit MaskRef(const StructuredMask* m) : structured_(m) {}
  explicit MaskRef(const ElementMask* m) : element_(m) {}
  explicit MaskRef(const MaskVariant* v);

  bool active() const { return structured_ != nullptr || element_ != nullptr; }
  bool is_structured() const { return structured_ != nullptr; }
  const StructuredMask& structured() const { return *structured_; }
  const ElementMask& element() const { return *element_; }

  template <typename T>
  void apply_into(Matrix<T>& out, const Matrix<T>& x) const;

private:
  const StructuredMask* structured_{nullptr};
  const ElementMask* element_{nullptr};
};

// Samples exactly round(p * width) distinct dropped columns, uniformly
// without replacement. p in [0, 1).
StructuredMask sample_structured_mask(index width, double p, Rng& rng);

ElementMask sample_element_mask(index rows, index cols, double p, Rng& rng);

// Masks for one truncated-BPTT window: per (slot, step) non-recurrent masks
// plus optional per (layer, step) recurrent-hidden masks. A "slot" is one
// NR mask stream; the language model uses slots 0..L-1 for layer inputs and
// one extra slot for the pre-head dropout.
class MaskSchedule {
public:
  struct Params {
    MaskCase mode;
    index steps{0};
    index batch{1};                  // element-mask row count (random cases)
    std::vector<index> nr_widths;    // one entry per NR slot
    double p_nr{0.0};
    std::optional<double> p_rh;      // present only in NR+RH modes
    index rh_slots{0};               // number of recurrent streams (layers)
    index rh_width{0};
    std::uint64_t seed{0};
  };

  static MaskSchedule build(const Params& params);

  MaskCase mode() const { return params_.mode; }
  index nr_slot_count() const { return static_cast<index>(params_.nr_widths.size()); }
  index steps() const { return params_.steps; }
  bool has_rh() const { return params_.p_rh.has_value(); }
  std::uint64_t seed() const { return params_.seed; }
  const Params& params() const { return params_; }

  MaskRef nr_mask(index slot, index step) const;
  MaskRef rh_mask(index layer, index step) const;

private:
  Params params_;
  std::vector<MaskVariant> nr_;  // [slot * steps + step]
  std::vector<MaskVariant> rh_;  // [layer * steps + step]
};

// Uniform-width convenience: `layers` NR slots of width `width`, RH streams
// of the same width when p_rh is given.
MaskSchedule build_schedule(MaskCase mode, index layers, index steps, index width, double p_nr,
                            std::optional<double> p_rh, std::uint64_t seed, index batch = 1);

template <typename T>
void apply_structured_into(Matrix<T>& out, const Matrix<T>& x, const StructuredMask& mask);

template <typename T>
Matrix<T> apply_structured(const Matrix<T>& x, const StructuredMask& mask);

template <typename T>
void apply_element_into(Matrix<T>& out, const Matrix<T>& x, const ElementMask& mask);

template <typename T>
Matrix<T> apply_element(const Matrix<T>& x, const ElementMask& mask);

// Samples a fresh per-element mask and applies it.
template <typename T>
Matrix<T> apply_random(const Matrix<T>& x, double p, Rng& rng);

template <typename T>
void MaskRef::apply_into(Matrix<T>& out, const Matrix<T>& x) const {
  if (structured_ != nullptr) {
    apply_structured_into(out, x, *structured_);
  } else if (element_ != nullptr) {
    apply_element_into(out, x, *element_);
  } else {
    out = x;
  }
}

}  // namespace sdlstm
