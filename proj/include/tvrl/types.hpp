#pragma once

#include <cstdint>
#include <vector>

#include "tvrl/core/error.hpp"
#include "tvrl/core/mat.hpp"

namespace tvrl {

/// Time offsets of a clip's frames relative to the clip's first frame, in the
/// dataset's declared unit (seconds for dense video, days for longitudes).
struct RelativeTimes {
  std::vector<double> values;
  std::vector<uint8_t> validity;

  int valid_count() const {
    int n = 0;
    for (uint8_t v : validity) n += v ? 1 : 0;
    return n;
  }

  void validate() const {
    if (values.size() != validity.size())
      throw contract_error("RelativeTimes: values/validity length mismatch");
    double prev = 0.0;
    bool seen_invalid = false;
    for (size_t i = 0; i < values.size(); ++i) {
      if (!validity[i]) {
        seen_invalid = true;
        continue;
      }
      if (seen_invalid)
        throw contract_error("RelativeTimes: valid positions must form a prefix");
      if (i == 0 && values[0] != 0.0)
        throw contract_error("RelativeTimes: first valid offset must be 0");
      if (values[i] < prev)
        throw contract_error("RelativeTimes: offsets must be nondecreasing");
      prev = values[i];
    }
    if (!validity.empty() && !validity[0])
      throw contract_error("RelativeTimes: position 0 must be valid");
  }
};

/// The random subset Y of frame positions replaced by the mask token.
struct MaskPlan {
  std::vector<int> indices;  // sorted, distinct, within the valid prefix
  int m() const { return static_cast<int>(indices.size()); }
};

/// Per-frame feature vectors produced by the spatial encoder. Invalid
/// (padded) rows are all-zero by convention.
template <class T>
struct FrameTokens {
  Mat<T> tokens;                  // T x D
  std::vector<uint8_t> validity;  // length T

  int frame_count() const { return static_cast<int>(tokens.rows()); }
  int valid_count() const {
    int n = 0;
    for (uint8_t v : validity) n += v ? 1 : 0;
    return n;
  }
};

/// Temporal-encoder result: the sequence-level CLS embedding plus the output
/// tokens at the frame positions (used for masked-feature reconstruction).
template <class T>
struct SequenceOutput {
  Mat<T> cls_embedding;  // 1 x D
  Mat<T> output_tokens;  // T x D, same T as the input FrameTokens
};

/// Which CLS token drives the temporal encoder: the contrastive token learned
/// during pretraining, or a fresh probe token appended at finetuning time.
enum class ClsSelector { kPretrain, kProbe };

}  // namespace tvrl
