#pragma once

#include <vector>

#include "tvrl/ag/ops.hpp"

namespace tvrl::ag {

/// Interleave a shared CLS token with per-frame patch tokens and add the
/// (learnable) positional table.
///
/// patches: (F*P) x D, frames stacked; cls: 1 x D; pos: (P+1) x D.
/// Output: (F*(P+1)) x D where row f*(P+1) is cls+pos[0] and row
/// f*(P+1)+1+p is patches[f*P+p]+pos[1+p].
template <class T>
Var<T> with_cls_and_pos(Tape<T>& t, Var<T> patches, Var<T> cls, Var<T> pos,
                        int frames) {
  const int d = static_cast<int>(patches->value.cols());
  if (patches->value.rows() % frames != 0)
    throw contract_error("with_cls_and_pos: patch rows not divisible by frames");
  const int per_frame = static_cast<int>(patches->value.rows()) / frames;
  if (pos->value.rows() != per_frame + 1 || pos->value.cols() != d ||
      cls->value.rows() != 1 || cls->value.cols() != d)
    throw contract_error("with_cls_and_pos: cls/pos shape mismatch");
  const int s = per_frame + 1;
  Var<T> out = make_op(
      t, patches->requires_grad || cls->requires_grad || pos->requires_grad);
  out->value.resize(frames * s, d);
  for (int f = 0; f < frames; ++f) {
    out->value.row(f * s) = cls->value.row(0) + pos->value.row(0);
    out->value.middleRows(f * s + 1, per_frame) =
        patches->value.middleRows(f * per_frame, per_frame) +
        pos->value.middleRows(1, per_frame);
  }
  if (out->requires_grad)
    out->backprop = [out, patches, cls, pos, frames, per_frame, s] {
      for (int f = 0; f < frames; ++f) {
        if (cls->requires_grad) {
          ensure_grad(cls);
          cls->grad.row(0) += out->grad.row(f * s);
        }
        if (pos->requires_grad) {
          ensure_grad(pos);
          pos->grad.row(0) += out->grad.row(f * s);
          pos->grad.middleRows(1, per_frame) +=
              out->grad.middleRows(f * s + 1, per_frame);
        }
        if (patches->requires_grad) {
          ensure_grad(patches);
          patches->grad.middleRows(f * per_frame, per_frame) +=
              out->grad.middleRows(f * s + 1, per_frame);
        }
      }
    };
  return out;
}

/// Where each clip's rows come from when building the temporal input.
/// `token_base` indexes the stacked per-frame token matrix; tokens for clip
/// positions 0..valid-1 live at rows token_base..token_base+valid-1.
struct ClipLayout {
  int token_base = 0;
  int valid = 0;
  std::vector<int> masked;  // subset of [0, valid)
};

/// Build the temporal-encoder input for a batch of clips.
///
/// Each clip occupies (capacity+1) rows: row 0 is the selected CLS token,
/// rows 1..capacity are frame slots. Masked slots are replaced by the shared
/// mask token *before* positional and time embeddings are added; padded slots
/// carry only the positional embedding and are excluded from attention by the
/// caller via prefix lengths.
///
/// tokens: Z x D stacked frame features; te: optional Z x D time embeddings
/// aligned row-for-row with tokens.
template <class T>
Var<T> assemble_temporal(Tape<T>& t, Var<T> tokens,
                         const std::vector<ClipLayout>& clips, Var<T> cls,
                         Var<T> pos, Var<T> mask_token, Var<T> te,
                         int capacity) {
  const int d = static_cast<int>(tokens->value.cols());
  if (pos->value.rows() != capacity + 1 || pos->value.cols() != d)
    throw contract_error("assemble_temporal: positional table shape mismatch");
  bool any_masked = false;
  for (const auto& c : clips) {
    if (c.valid < 1 || c.valid > capacity)
      throw contract_error("assemble_temporal: clip valid count out of range");
    if (c.token_base < 0 || c.token_base + c.valid > tokens->value.rows())
      throw contract_error("assemble_temporal: token rows out of range");
    for (int m : c.masked) {
      if (m < 0 || m >= c.valid)
        throw contract_error("mask plan index outside the clip's valid positions");
      any_masked = true;
    }
  }
  if (any_masked && mask_token == nullptr)
    throw contract_error("assemble_temporal: mask plan given but no mask token");
  if (te != nullptr && (te->value.rows() != tokens->value.rows() ||
                        te->value.cols() != d))
    throw contract_error("assemble_temporal: time embedding rows must align with tokens");

  const int s = capacity + 1;
  bool req = tokens->requires_grad || cls->requires_grad || pos->requires_grad ||
             (mask_token && mask_token->requires_grad) ||
             (te && te->requires_grad);
  Var<T> out = make_op(t, req);
  out->value.resize(static_cast<int>(clips.size()) * s, d);
  for (size_t c = 0; c < clips.size(); ++c) {
    const auto& cl = clips[c];
    const int r0 = static_cast<int>(c) * s;
    out->value.row(r0) = cls->value.row(0) + pos->value.row(0);
    std::vector<char> is_masked(cl.valid, 0);
    for (int m : cl.masked) is_masked[m] = 1;
    for (int j = 0; j < capacity; ++j) {
      if (j < cl.valid) {
        if (is_masked[j])
          out->value.row(r0 + 1 + j) = mask_token->value.row(0);
        else
          out->value.row(r0 + 1 + j) = tokens->value.row(cl.token_base + j);
        out->value.row(r0 + 1 + j) += pos->value.row(1 + j);
        if (te) out->value.row(r0 + 1 + j) += te->value.row(cl.token_base + j);
      } else {
        out->value.row(r0 + 1 + j) = pos->value.row(1 + j);
      }
    }
  }
  if (out->requires_grad)
    out->backprop = [out, tokens, clips, cls, pos, mask_token, te, capacity, s] {
      for (size_t c = 0; c < clips.size(); ++c) {
        const auto& cl = clips[c];
        const int r0 = static_cast<int>(c) * s;
        if (cls->requires_grad) {
          ensure_grad(cls);
          cls->grad.row(0) += out->grad.row(r0);
        }
        if (pos->requires_grad) {
          ensure_grad(pos);
          pos->grad.row(0) += out->grad.row(r0);
          pos->grad.middleRows(1, capacity) += out->grad.middleRows(r0 + 1, capacity);
        }
        std::vector<char> is_masked(cl.valid, 0);
        for (int m : cl.masked) is_masked[m] = 1;
        for (int j = 0; j < cl.valid; ++j) {
          if (is_masked[j]) {
            if (mask_token && mask_token->requires_grad) {
              ensure_grad(mask_token);
              mask_token->grad.row(0) += out->grad.row(r0 + 1 + j);
            }
          } else if (tokens->requires_grad) {
            ensure_grad(tokens);
            tokens->grad.row(cl.token_base + j) += out->grad.row(r0 + 1 + j);
          }
          if (te && te->requires_grad) {
            ensure_grad(te);
            te->grad.row(cl.token_base + j) += out->grad.row(r0 + 1 + j);
          }
        }
      }
    };
  return out;
}

}  // namespace tvrl::ag
