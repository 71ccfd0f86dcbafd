#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "tvrl/ag/assembly.hpp"
#include "tvrl/ag/ops.hpp"
#include "tvrl/nn/params.hpp"
#include "tvrl/types.hpp"

namespace tvrl {

/// Geometry and capacity of the two-stage spatiotemporal encoder.
struct EncoderConfig {
  int image_size = 128;
  int patch_size = 16;
  int channels = 1;
  int hidden_dim = 384;
  int spatial_heads = 6;
  int spatial_layers = 12;
  int temporal_layers = 3;
  int temporal_heads = 6;
  int clip_capacity = 8;
  int mlp_ratio = 4;
  bool use_time_embedding = false;
  bool use_mask_token = false;
  bool pre_norm = true;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || hidden_dim <= 0)
      throw config_error("encoder: sizes must be positive");
    if (image_size % patch_size != 0)
      throw config_error("encoder: image_size must be divisible by patch_size");
    if (hidden_dim % spatial_heads != 0 || hidden_dim % temporal_heads != 0)
      throw config_error("encoder: hidden_dim must be divisible by head counts");
    if (clip_capacity < 2) throw config_error("encoder: clip_capacity must be >= 2");
    if (channels != 1) throw config_error("encoder: only grayscale (1 channel) input");
    if (spatial_layers < 1 || temporal_layers < 1)
      throw config_error("encoder: layer counts must be >= 1");
    if (mlp_ratio < 1) throw config_error("encoder: mlp_ratio must be >= 1");
    if (use_time_embedding && hidden_dim % 2 != 0)
      throw config_error("encoder: time embedding requires even hidden_dim");
  }

  /// The configuration used in the full-scale experiments.
  static EncoderConfig paper() { return EncoderConfig{}; }

  /// Desk-scale configuration for tests and the directional experiments:
  /// 32x32 images, patch 4, width 64, 4 spatial + 2 temporal layers.
  static EncoderConfig micro() {
    EncoderConfig c;
    c.image_size = 32;
    c.patch_size = 4;
    c.hidden_dim = 64;
    c.spatial_heads = 4;
    c.spatial_layers = 4;
    c.temporal_layers = 2;
    c.temporal_heads = 4;
    return c;
  }

  bool operator==(const EncoderConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"patch_size", c.patch_size},
                     {"channels", c.channels},
                     {"hidden_dim", c.hidden_dim},
                     {"spatial_heads", c.spatial_heads},
                     {"spatial_layers", c.spatial_layers},
                     {"temporal_layers", c.temporal_layers},
                     {"temporal_heads", c.temporal_heads},
                     {"clip_capacity", c.clip_capacity},
                     {"mlp_ratio", c.mlp_ratio},
                     {"use_time_embedding", c.use_time_embedding},
                     {"use_mask_token", c.use_mask_token},
                     {"pre_norm", c.pre_norm}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.channels = j.value("channels", d.channels);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.spatial_heads = j.value("spatial_heads", d.spatial_heads);
  c.spatial_layers = j.value("spatial_layers", d.spatial_layers);
  c.temporal_layers = j.value("temporal_layers", d.temporal_layers);
  c.temporal_heads = j.value("temporal_heads", d.temporal_heads);
  c.clip_capacity = j.value("clip_capacity", d.clip_capacity);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.use_time_embedding = j.value("use_time_embedding", d.use_time_embedding);
  c.use_mask_token = j.value("use_mask_token", d.use_mask_token);
  c.pre_norm = j.value("pre_norm", d.pre_norm);
}

/// Stable hash of the canonical JSON form; recorded in checkpoint manifests.
inline uint64_t config_hash(const EncoderConfig& c) {
  nlohmann::json j = c;
  return fnv1a64(j.dump());
}

/// Sinusoidal stage of the time embedding: for offset t and width D, the
/// first D/2 entries are sin(t * w_k) and the last D/2 are cos(t * w_k) with
/// geometrically spaced angular frequencies w_k = 10000^(-k / (D/2 - 1)).
template <class T>
Mat<T> sinusoidal_time_features(const std::vector<double>& times, int dim) {
  if (dim % 2 != 0) throw config_error("sinusoidal features need an even width");
  const int half = dim / 2;
  Mat<T> out(static_cast<int>(times.size()), dim);
  for (size_t i = 0; i < times.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      double freq =
          half > 1 ? std::exp(-std::log(10000.0) * k / (half - 1)) : 1.0;
      out(static_cast<int>(i), k) = static_cast<T>(std::sin(times[i] * freq));
      out(static_cast<int>(i), half + k) =
          static_cast<T>(std::cos(times[i] * freq));
    }
  }
  return out;
}

namespace nn {

template <class T>
struct BlockParams {
  ag::Param<T>*ln1_g, *ln1_b, *w_qkv, *b_qkv, *w_o, *b_o;
  ag::Param<T>*ln2_g, *ln2_b, *w_fc1, *b_fc1, *w_fc2, *b_fc2;
};

template <class T>
BlockParams<T> make_block(ParamStore<T>& s, const std::string& prefix, int dim,
                          int mlp_ratio) {
  BlockParams<T> b;
  b.ln1_g = &s.add(prefix + ".ln1.g", 1, dim, Init::kOnes, true);
  b.ln1_b = &s.add(prefix + ".ln1.b", 1, dim, Init::kZeros, true);
  b.w_qkv = &s.add(prefix + ".attn.w_qkv", 3 * dim, dim, Init::kNormal002);
  b.b_qkv = &s.add(prefix + ".attn.b_qkv", 1, 3 * dim, Init::kZeros, true);
  b.w_o = &s.add(prefix + ".attn.w_o", dim, dim, Init::kNormal002);
  b.b_o = &s.add(prefix + ".attn.b_o", 1, dim, Init::kZeros, true);
  b.ln2_g = &s.add(prefix + ".ln2.g", 1, dim, Init::kOnes, true);
  b.ln2_b = &s.add(prefix + ".ln2.b", 1, dim, Init::kZeros, true);
  b.w_fc1 = &s.add(prefix + ".mlp.w1", mlp_ratio * dim, dim, Init::kNormal002);
  b.b_fc1 = &s.add(prefix + ".mlp.b1", 1, mlp_ratio * dim, Init::kZeros, true);
  b.w_fc2 = &s.add(prefix + ".mlp.w2", dim, mlp_ratio * dim, Init::kNormal002);
  b.b_fc2 = &s.add(prefix + ".mlp.b2", 1, dim, Init::kZeros, true);
  return b;
}

/// One transformer block over stacked independent row blocks of `block_rows`
/// rows. Pre-norm (x + f(LN(x))) or post-norm (LN(x + f(x))) per config.
template <class T>
ag::Var<T> block_forward(ag::Tape<T>& t, ag::Var<T> x, const BlockParams<T>& p,
                         int block_rows, int heads,
                         const std::vector<int>& prefix, bool pre_norm) {
  using namespace ag;
  const int dim = static_cast<int>(x->value.cols());
  auto attn = [&](Var<T> in) {
    Var<T> qkv = linear(t, in, t.param(*p.w_qkv), t.param(*p.b_qkv));
    Var<T> q = cols_slice(t, qkv, 0, dim);
    Var<T> k = cols_slice(t, qkv, dim, dim);
    Var<T> v = cols_slice(t, qkv, 2 * dim, dim);
    Var<T> o = block_attention(t, q, k, v, block_rows, heads, prefix);
    return linear(t, o, t.param(*p.w_o), t.param(*p.b_o));
  };
  auto mlp = [&](Var<T> in) {
    Var<T> h = gelu(t, linear(t, in, t.param(*p.w_fc1), t.param(*p.b_fc1)));
    return linear(t, h, t.param(*p.w_fc2), t.param(*p.b_fc2));
  };
  auto ln1 = [&](Var<T> in) {
    return layer_norm(t, in, t.param(*p.ln1_g), t.param(*p.ln1_b));
  };
  auto ln2 = [&](Var<T> in) {
    return layer_norm(t, in, t.param(*p.ln2_g), t.param(*p.ln2_b));
  };
  if (pre_norm) {
    x = add(t, x, attn(ln1(x)));
    x = add(t, x, mlp(ln2(x)));
  } else {
    x = ln1(add(t, x, attn(x)));
    x = ln2(add(t, x, mlp(x)));
  }
  return x;
}

}  // namespace nn

/// The spatiotemporal encoder: a spatial ViT producing one CLS feature per
/// frame, and a temporal transformer aggregating frame features (plus
/// optional time embeddings and mask-token substitution) into a sequence
/// embedding via its own CLS token.
template <class T>
class Model {
 public:
  Model(const EncoderConfig& cfg, uint64_t seed) : cfg_(cfg), store_(seed) {
    cfg.validate();
    const int d = cfg.hidden_dim;
    patch_w_ = &store_.add("spatial.patch.w", d, cfg.patch_dim(), nn::Init::kNormal002);
    patch_b_ = &store_.add("spatial.patch.b", 1, d, nn::Init::kZeros, true);
    spatial_cls_ = &store_.add("spatial.cls", 1, d, nn::Init::kNormal002, true);
    spatial_pos_ = &store_.add("spatial.pos", cfg.num_patches() + 1, d,
                               nn::Init::kNormal002, true);
    for (int i = 0; i < cfg.spatial_layers; ++i)
      spatial_blocks_.push_back(nn::make_block(
          store_, "spatial.b" + std::to_string(i), d, cfg.mlp_ratio));
    spatial_ln_g_ = &store_.add("spatial.ln.g", 1, d, nn::Init::kOnes, true);
    spatial_ln_b_ = &store_.add("spatial.ln.b", 1, d, nn::Init::kZeros, true);

    temporal_cls_ = &store_.add("temporal.cls", 1, d, nn::Init::kNormal002, true);
    temporal_pos_ = &store_.add("temporal.pos", cfg.clip_capacity + 1, d,
                                nn::Init::kNormal002, true);
    for (int i = 0; i < cfg.temporal_layers; ++i)
      temporal_blocks_.push_back(nn::make_block(
          store_, "temporal.b" + std::to_string(i), d, cfg.mlp_ratio));
    temporal_ln_g_ = &store_.add("temporal.ln.g", 1, d, nn::Init::kOnes, true);
    temporal_ln_b_ = &store_.add("temporal.ln.b", 1, d, nn::Init::kZeros, true);

    if (cfg.use_mask_token)
      mask_token_ = &store_.add("temporal.mask", 1, d, nn::Init::kNormal002, true);
    if (cfg.use_time_embedding) {
      te_w1_ = &store_.add("te.fc1.w", d, d, nn::Init::kNormal002);
      te_b1_ = &store_.add("te.fc1.b", 1, d, nn::Init::kZeros, true);
      te_w2_ = &store_.add("te.fc2.w", d, d, nn::Init::kNormal002);
      te_b2_ = &store_.add("te.fc2.b", 1, d, nn::Init::kZeros, true);
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  int64_t parameter_count() const { return store_.total_size(); }

  /// Flatten frames into the stacked patch matrix the spatial encoder eats.
  /// Rows: frame-major, then patch row-major within the frame.
  Mat<T> patchify(const std::vector<Mat<float>>& frames) const {
    const int p = cfg_.patch_size, pps = cfg_.patches_per_side();
    Mat<T> out(static_cast<int>(frames.size()) * cfg_.num_patches(), cfg_.patch_dim());
    for (size_t f = 0; f < frames.size(); ++f) {
      const Mat<float>& img = frames[f];
      if (img.rows() != cfg_.image_size || img.cols() != cfg_.image_size)
        throw config_error("encode_frames: frame size does not match config");
      for (int pi = 0; pi < pps; ++pi)
        for (int pj = 0; pj < pps; ++pj) {
          int row = static_cast<int>(f) * cfg_.num_patches() + pi * pps + pj;
          for (int r = 0; r < p; ++r)
            for (int c = 0; c < p; ++c)
              out(row, r * p + c) = static_cast<T>(img(pi * p + r, pj * p + c));
        }
    }
    return out;
  }

  /// Spatial encoder over stacked frames: returns the F x D matrix of
  /// per-frame CLS features. Frames are independent row blocks, so no
  /// information flows between them.
  ag::Var<T> spatial_forward(ag::Tape<T>& t, const Mat<T>& stacked_patches,
                             int frames) {
    using namespace ag;
    const int s = cfg_.num_patches() + 1;
    Var<T> tokens = linear(t, t.constant(stacked_patches), t.param(*patch_w_),
                           t.param(*patch_b_));
    Var<T> x = with_cls_and_pos(t, tokens, t.param(*spatial_cls_),
                                t.param(*spatial_pos_), frames);
    for (const auto& b : spatial_blocks_)
      x = nn::block_forward(t, x, b, s, cfg_.spatial_heads, {}, cfg_.pre_norm);
    x = layer_norm(t, x, t.param(*spatial_ln_g_), t.param(*spatial_ln_b_));
    std::vector<int> cls_rows(frames);
    for (int f = 0; f < frames; ++f) cls_rows[f] = f * s;
    return gather_rows(t, x, cls_rows);
  }

  /// Learnable nonlinear map over the sinusoidal time features.
  ag::Var<T> te_forward(ag::Tape<T>& t, const std::vector<double>& times) {
    if (!cfg_.use_time_embedding)
      throw contract_error("time embedding requested but disabled in config");
    using namespace ag;
    Var<T> s = t.constant(sinusoidal_time_features<T>(times, cfg_.hidden_dim));
    Var<T> h = silu(t, linear(t, s, t.param(*te_w1_), t.param(*te_b1_)));
    return linear(t, h, t.param(*te_w2_), t.param(*te_b2_));
  }

  /// Temporal encoder over a batch of clips laid out by `clips` against the
  /// stacked token matrix. Returns the full (C*(capacity+1)) x D output after
  /// the final layer norm; callers gather CLS / frame rows from it.
  ag::Var<T> temporal_forward(ag::Tape<T>& t, ag::Var<T> tokens,
                              const std::vector<ag::ClipLayout>& clips,
                              ag::Var<T> cls_token, ag::Var<T> te) {
    using namespace ag;
    const int s = cfg_.clip_capacity + 1;
    Var<T> mask_tok = nullptr;
    bool any_masked = false;
    for (const auto& c : clips) any_masked |= !c.masked.empty();
    if (any_masked) {
      if (!mask_token_)
        throw contract_error("mask plan given but model has no mask token");
      mask_tok = t.param(*mask_token_);
    }
    Var<T> x = assemble_temporal(t, tokens, clips, cls_token,
                                 t.param(*temporal_pos_), mask_tok, te,
                                 cfg_.clip_capacity);
    std::vector<int> prefix(clips.size());
    for (size_t c = 0; c < clips.size(); ++c) prefix[c] = 1 + clips[c].valid;
    for (const auto& b : temporal_blocks_)
      x = nn::block_forward(t, x, b, s, cfg_.temporal_heads, prefix, cfg_.pre_norm);
    return layer_norm(t, x, t.param(*temporal_ln_g_), t.param(*temporal_ln_b_));
  }

  ag::Var<T> pretrain_cls(ag::Tape<T>& t) { return t.param(*temporal_cls_); }

  // -- Pure (no-grad) spec-level API ----------------------------------------

  /// Encode T frames independently into T feature rows. All frames valid.
  FrameTokens<T> encode_frames(const std::vector<Mat<float>>& frames) {
    ag::Tape<T> t(false);
    Mat<T> patches = patchify(frames);
    ag::Var<T> z = spatial_forward(t, patches, static_cast<int>(frames.size()));
    FrameTokens<T> out;
    out.tokens = z->value;
    out.validity.assign(frames.size(), 1);
    return out;
  }

  /// Run the temporal encoder over one clip worth of frame tokens.
  ///
  /// times must be present iff the model uses time embedding; mask indices
  /// must fall inside the valid prefix. The probe selector reads the CLS
  /// token from `probe_cls` (a fresh token owned by the probe head).
  SequenceOutput<T> encode_sequence(const FrameTokens<T>& frame_tokens,
                                    const std::optional<RelativeTimes>& times,
                                    const std::optional<MaskPlan>& mask,
                                    ClsSelector selector,
                                    ag::Param<T>* probe_cls = nullptr) {
    const int frames = frame_tokens.frame_count();
    if (frames < 1 || frames > cfg_.clip_capacity)
      throw contract_error("encode_sequence: frame count exceeds clip capacity");
    int valid = 0;
    bool seen_invalid = false;
    for (uint8_t v : frame_tokens.validity) {
      if (v && seen_invalid)
        throw contract_error("encode_sequence: valid frames must form a prefix");
      if (!v) seen_invalid = true;
      valid += v ? 1 : 0;
    }
    if (valid < 1) throw contract_error("encode_sequence: no valid frames");
    if (times.has_value() != cfg_.use_time_embedding)
      throw contract_error(
          "encode_sequence: times must be given exactly when time embedding is enabled");
    if (times) {
      times->validate();
      if (static_cast<int>(times->values.size()) != frames)
        throw contract_error("encode_sequence: times length mismatch");
    }
    if (selector == ClsSelector::kProbe && probe_cls == nullptr)
      throw contract_error("encode_sequence: probe selector needs a probe CLS token");

    ag::Tape<T> t(false);
    ag::ClipLayout layout;
    layout.token_base = 0;
    layout.valid = valid;
    if (mask) layout.masked = mask->indices;
    ag::Var<T> tokens = t.constant(frame_tokens.tokens);
    ag::Var<T> te = nullptr;
    if (cfg_.use_time_embedding) te = te_forward(t, times->values);
    ag::Var<T> cls = selector == ClsSelector::kPretrain ? t.param(*temporal_cls_)
                                                        : t.param(*probe_cls);
    ag::Var<T> full = temporal_forward(t, tokens, {layout}, cls, te);
    SequenceOutput<T> out;
    out.cls_embedding = full->value.row(0);
    out.output_tokens = full->value.middleRows(1, frames);
    return out;
  }

  ag::Param<T>* mask_token() { return mask_token_; }

 private:
  EncoderConfig cfg_;
  nn::ParamStore<T> store_;
  ag::Param<T>*patch_w_, *patch_b_, *spatial_cls_, *spatial_pos_;
  std::vector<nn::BlockParams<T>> spatial_blocks_;
  ag::Param<T>*spatial_ln_g_, *spatial_ln_b_;
  ag::Param<T>*temporal_cls_, *temporal_pos_;
  std::vector<nn::BlockParams<T>> temporal_blocks_;
  ag::Param<T>*temporal_ln_g_, *temporal_ln_b_;
  ag::Param<T>* mask_token_ = nullptr;
  ag::Param<T>*te_w1_ = nullptr, *te_b1_ = nullptr, *te_w2_ = nullptr,
      *te_b2_ = nullptr;
};

/// Exact count of learnable scalars for a given configuration.
inline int64_t count_parameters(const EncoderConfig& cfg) {
  Model<float> m(cfg, 0);
  return m.parameter_count();
}

}  // namespace tvrl
