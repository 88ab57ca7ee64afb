#include "sdlstm/masks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace sdlstm {

MaskRef::MaskRef(const MaskVariant* v) {
  if (v == nullptr) return;
  if (const auto* sm = std::get_if<StructuredMask>(v)) {
    structured_ = sm;
  } else {
    element_ = &std::get<ElementMask>(*v);
  }
}

StructuredMask sample_structured_mask(index width, double p, Rng& rng) {
  check_value(width >= 1, "mask width must be >= 1");
  check_value(p >= 0.0 && p < 1.0, "dropout rate must be in [0, 1)");
  StructuredMask mask;
  mask.width = width;
  mask.rate = p;
  mask.scale = 1.0 / (1.0 - p);
  const auto drop_count = static_cast<index>(std::llround(p * static_cast<double>(width)));

  // Partial Fisher-Yates: the first drop_count entries are a uniform draw
  // without replacement.
  std::vector<index> perm(static_cast<std::size_t>(width));
  for (index i = 0; i < width; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (index i = 0; i < drop_count; ++i) {
    const index j = i + static_cast<index>(rng.next_below(static_cast<std::uint64_t>(width - i)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  mask.dropped.assign(perm.begin(), perm.begin() + drop_count);
  std::sort(mask.dropped.begin(), mask.dropped.end());

  mask.kept.reserve(static_cast<std::size_t>(width - drop_count));
  auto it = mask.dropped.begin();
  for (index i = 0; i < width; ++i) {
    if (it != mask.dropped.end() && *it == i) {
      ++it;
    } else {
      mask.kept.push_back(i);
    }
  }
  return mask;
}

ElementMask sample_element_mask(index rows, index cols, double p, Rng& rng) {
  check_value(rows >= 1 && cols >= 1, "element mask dimensions must be >= 1");
  check_value(p >= 0.0 && p < 1.0, "dropout rate must be in [0, 1)");
  ElementMask mask;
  mask.rows = rows;
  mask.cols = cols;
  mask.rate = p;
  mask.scale = 1.0 / (1.0 - p);
  mask.keep.resize(static_cast<std::size_t>(rows * cols));
  for (auto& k : mask.keep) k = rng.next_keep(p) ? 1 : 0;
  return mask;
}

template <typename T>
void apply_structured_into(Matrix<T>& out, const Matrix<T>& x, const StructuredMask& mask) {
  check_shape(x.cols() == mask.width, "apply_structured: width mismatch");
  out.resize(x.rows(), x.cols());
  const T scale = static_cast<T>(mask.scale);
  for (index i = 0; i < x.rows(); ++i) {
    const T* src = x.row(i);
    T* dst = out.row(i);
    std::memset(dst, 0, static_cast<std::size_t>(x.cols()) * sizeof(T));
    for (index c : mask.kept) dst[c] = scale * src[c];
  }
}

template <typename T>
Matrix<T> apply_structured(const Matrix<T>& x, const StructuredMask& mask) {
  Matrix<T> out;
  apply_structured_into(out, x, mask);
  return out;
}

template <typename T>
void apply_element_into(Matrix<T>& out, const Matrix<T>& x, const ElementMask& mask) {
  check_shape(x.rows() == mask.rows && x.cols() == mask.cols, "apply_element: shape mismatch");
  out.resize(x.rows(), x.cols());
  const T scale = static_cast<T>(mask.scale);
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (index i = 0; i < x.size(); ++i) {
    dst[i] = mask.keep[static_cast<std::size_t>(i)] != 0 ? scale * src[i] : T{0};
  }
}

template <typename T>
Matrix<T> apply_element(const Matrix<T>& x, const ElementMask& mask) {
  Matrix<T> out;
  apply_element_into(out, x, mask);
  return out;
}

template <typename T>
Matrix<T> apply_random(const Matrix<T>& x, double p, Rng& rng) {
  const ElementMask mask = sample_element_mask(x.rows(), x.cols(), p, rng);
  return apply_element(x, mask);
}

namespace {

// Stream tags keep NR and RH draws independent of each other and of slot
// iteration order.
constexpr std::uint64_t kNrStream = 0x6e72;  // "nr"
constexpr std::uint64_t kRhStream = 0x7268;  // "rh"

std::vector<MaskVariant> build_direction(const MaskSchedule::Params& p, std::uint64_t stream_tag,
                                         index slots, const std::vector<index>& widths,
                                         double rate) {
  std::vector<MaskVariant> out;
  out.reserve(static_cast<std::size_t>(slots * p.steps));
  for (index slot = 0; slot < slots; ++slot) {
    const index width = widths.size() == 1 ? widths[0] : widths[static_cast<std::size_t>(slot)];
    Rng rng(derive_seed(p.seed, stream_tag, static_cast<std::uint64_t>(slot)));
    if (p.mode.shared_across_time()) {
      MaskVariant first = p.mode.structured()
                              ? MaskVariant(sample_structured_mask(width, rate, rng))
                              : MaskVariant(sample_element_mask(p.batch, width, rate, rng));
      for (index t = 0; t < p.steps; ++t) out.push_back(first);
    } else {
      for (index t = 0; t < p.steps; ++t) {
        if (p.mode.structured()) {
          out.emplace_back(sample_structured_mask(width, rate, rng));
        } else {
          out.emplace_back(sample_element_mask(p.batch, width, rate, rng));
        }
      }
    }
  }
  return out;
}

}  // namespace

MaskSchedule MaskSchedule::build(const Params& params) {
  check_value(params.steps >= 1, "schedule needs steps >= 1");
  check_value(!params.nr_widths.empty(), "schedule needs at least one NR slot");
  for (index w : params.nr_widths) check_value(w >= 1, "NR slot width must be >= 1");
  check_value(params.p_nr >= 0.0 && params.p_nr < 1.0, "dropout rate must be in [0, 1)");
  if (params.p_rh) {
    check_value(*params.p_rh >= 0.0 && *params.p_rh < 1.0, "dropout rate must be in [0, 1)");
    check_value(params.rh_slots >= 1 && params.rh_width >= 1,
                "RH schedule needs rh_slots and rh_width");
  }
  if (!params.mode.structured()) {
    check_value(params.batch >= 1, "element masks need batch >= 1");
  }

  MaskSchedule s;
  s.params_ = params;
  s.nr_ = build_direction(params, kNrStream, static_cast<index>(params.nr_widths.size()),
                          params.nr_widths, params.p_nr);
  if (params.p_rh) {
    const std::vector<index> rh_widths{params.rh_width};
    s.rh_ = build_direction(params, kRhStream, params.rh_slots, rh_widths, *params.p_rh);
  }
  return s;
}

MaskRef MaskSchedule::nr_mask(index slot, index step) const {
  check_value(slot >= 0 && slot < nr_slot_count(), "NR slot out of range");
  check_value(step >= 0 && step < params_.steps, "step out of range");
  return MaskRef(&nr_[static_cast<std::size_t>(slot * params_.steps + step)]);
}

MaskRef MaskSchedule::rh_mask(index layer, index step) const {
  if (rh_.empty()) return MaskRef{};
  check_value(layer >= 0 && layer < params_.rh_slots, "RH layer out of range");
  check_value(step >= 0 && step < params_.steps, "step out of range");
  return MaskRef(&rh_[static_cast<std::size_t>(layer * params_.steps + step)]);
}

MaskSchedule build_schedule(MaskCase mode, index layers, index steps, index width, double p_nr,
                            std::optional<double> p_rh, std::uint64_t seed, index batch) {
  check_value(layers >= 1, "schedule needs layers >= 1");
  MaskSchedule::Params params;
  params.mode = mode;
  params.steps = steps;
  params.batch = batch;
  params.nr_widths.assign(static_cast<std::size_t>(layers), width);
  params.p_nr = p_nr;
  params.p_rh = p_rh;
  params.rh_slots = p_rh ? layers : 0;
  params.rh_width = width;
  params.seed = seed;
  return MaskSchedule::build(params);
}

#define SDLSTM_INSTANTIATE_MASKS(T)                                                            \
  template void apply_structured_into<T>(Matrix<T>&, const Matrix<T>&, const StructuredMask&); \
  template Matrix<T> apply_structured<T>(const Matrix<T>&, const StructuredMask&);             \
  template void apply_element_into<T>(Matrix<T>&, const Matrix<T>&, const ElementMask&);       \
  template Matrix<T> apply_element<T>(const Matrix<T>&, const ElementMask&);                   \
  template Matrix<T> apply_random<T>(const Matrix<T>&, double, Rng&);

SDLSTM_INSTANTIATE_MASKS(float)
SDLSTM_INSTANTIATE_MASKS(double)

#undef SDLSTM_INSTANTIATE_MASKS

}  // namespace sdlstm
