#pragma once

#include <string>
#include <vector>

#include "tvrl/core/rng.hpp"
#include "tvrl/data/dataset.hpp"
#include "tvrl/types.hpp"

namespace tvrl {

/// dense-stride-2: every other frame of a dense video (8 frames spanning 16
/// raw frames). successive: consecutive scans of a longitudinal series.
enum class ClipPolicy { kDenseStride2, kSuccessive };

inline ClipPolicy clip_policy_from_string(const std::string& s) {
  if (s == "dense-stride-2") return ClipPolicy::kDenseStride2;
  if (s == "successive") return ClipPolicy::kSuccessive;
  throw config_error("unknown clip policy: " + s);
}

inline std::string to_string(ClipPolicy p) {
  return p == ClipPolicy::kDenseStride2 ? "dense-stride-2" : "successive";
}

/// Fixed-capacity window of frames with relative acquisition times and a
/// validity mask. Valid positions always form a prefix; padded slots hold
/// zero frames and zero times.
struct Clip {
  std::vector<Mat<float>> frames;  // capacity entries
  RelativeTimes relative_times;    // capacity entries
  std::string source_id;

  int capacity() const { return static_cast<int>(frames.size()); }
  int valid_count() const { return relative_times.valid_count(); }
};

namespace detail {

inline int clip_stride(ClipPolicy p) { return p == ClipPolicy::kDenseStride2 ? 2 : 1; }

/// Raw frames spanned by a full clip under the policy.
inline int clip_span(ClipPolicy p, int capacity) {
  return (capacity - 1) * clip_stride(p) + 1;
}

inline Clip build_clip_at(const SequenceRecord& rec, ClipPolicy policy, int start,
                          int capacity) {
  const int t = rec.length();
  const int stride = clip_stride(policy);
  Clip clip;
  clip.source_id = rec.sequence_id;
  clip.relative_times.values.assign(capacity, 0.0);
  clip.relative_times.validity.assign(capacity, 0);
  const double t0 = rec.timestamps[start];
  for (int k = 0; k < capacity; ++k) {
    int idx = start + k * stride;
    if (idx >= t) break;
    clip.frames.push_back(to_float(rec.frames[idx]));
    clip.relative_times.values[k] = rec.timestamps[idx] - t0;
    clip.relative_times.validity[k] = 1;
  }
  const int size = rec.frames[0].height;
  while (static_cast<int>(clip.frames.size()) < capacity)
    clip.frames.push_back(Mat<float>::Zero(size, size));
  clip.relative_times.validate();
  return clip;
}

/// Uniformly random start for one clip. Falls back to successive sampling
/// when a strided clip cannot fit.
inline std::pair<ClipPolicy, int> sample_clip_start(const SequenceRecord& rec,
                                                    ClipPolicy policy, int capacity,
                                                    Rng& rng) {
  const int t = rec.length();
  if (policy == ClipPolicy::kDenseStride2 && t >= clip_span(policy, capacity))
    return {policy, rng.uniform_int(t - clip_span(policy, capacity) + 1)};
  // successive (or fallback): random start if the window fits, else everything
  if (t > capacity) return {ClipPolicy::kSuccessive, rng.uniform_int(t - capacity + 1)};
  return {ClipPolicy::kSuccessive, 0};
}

}  // namespace detail

/// Sample one clip. dense-stride-2 picks a uniform start with 8 frames at
/// stride 2; successive picks 8 consecutive scans, or all scans padded when
/// fewer exist.
inline Clip sample_clip(const SequenceRecord& rec, ClipPolicy policy, Rng& rng,
                        int capacity = 8) {
  if (rec.length() < 2)
    throw data_error(rec.sequence_id + ": unusable record (fewer than 2 frames)");
  auto [eff_policy, start] = detail::sample_clip_start(rec, policy, capacity, rng);
  return detail::build_clip_at(rec, eff_policy, start, capacity);
}

/// Two temporally distinct clips of one sequence for the multi-clip
/// baseline: non-overlapping when the sequence permits, otherwise at maximal
/// temporal offset.
inline std::pair<Clip, Clip> sample_two_clips(const SequenceRecord& rec,
                                              ClipPolicy policy, Rng& rng,
                                              int capacity = 8) {
  if (rec.length() < 2)
    throw data_error(rec.sequence_id + ": unusable record (fewer than 2 frames)");
  const int t = rec.length();
  ClipPolicy eff = policy;
  if (policy == ClipPolicy::kDenseStride2 && t < detail::clip_span(policy, capacity))
    eff = ClipPolicy::kSuccessive;
  const int span = std::min(detail::clip_span(eff, capacity), t);
  int s1 = 0, s2 = 0;
  if (t >= 2 * span) {
    s1 = rng.uniform_int(t - 2 * span + 1);
    s2 = s1 + span + rng.uniform_int(t - span - (s1 + span) + 1);
  } else {
    s1 = 0;
    s2 = std::max(0, t - span);
  }
  if (rng.bernoulli(0.5)) std::swap(s1, s2);
  return {detail::build_clip_at(rec, eff, s1, capacity),
          detail::build_clip_at(rec, eff, s2, capacity)};
}

/// m = max(1, round-half-up(mask_ratio * valid_count)) positions drawn
/// uniformly without replacement from the valid prefix.
inline MaskPlan sample_mask_plan(int valid_count, double mask_ratio, Rng& rng) {
  if (valid_count < 1) throw contract_error("sample_mask_plan: valid_count >= 1 required");
  int m = std::max(1, static_cast<int>(std::floor(mask_ratio * valid_count + 0.5)));
  m = std::min(m, valid_count);
  MaskPlan plan;
  plan.indices = rng.sample_without_replacement(valid_count, m);
  return plan;
}

}  // namespace tvrl
