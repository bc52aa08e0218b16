#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vitinv/cost.hpp"
#include "vitinv/rng.hpp"
#include "vitinv/tensor.hpp"

namespace vitinv {

/// Geometry and capacity of the toy Vision Transformer. The FFN hidden width
/// is fixed at 4 * embed_dim. Defaults satisfy N/d = 0.25 < 3.
struct ViTConfig {
  int image_h = 32;
  int image_w = 32;
  int channels = 3;
  int patch = 8;
  int embed_dim = 64;
  int layers = 4;
  int heads = 4;
  int classes = 4;
  int importance_layer = -1;  // CLS-attention layer used for importance; -1 = last

  int grid_rows() const { return image_h / patch; }
  int grid_cols() const { return image_w / patch; }
  int n_patches() const { return grid_rows() * grid_cols(); }
  int patch_dim() const { return patch * patch * channels; }
  int head_dim() const { return embed_dim / heads; }
  int hidden_dim() const { return 4 * embed_dim; }

  void validate() const {
    if (image_h <= 0 || image_w <= 0 || channels <= 0 || patch <= 0 ||
        embed_dim <= 0 || layers <= 0 || heads <= 0 || classes <= 0)
      throw ContractError("vit config: all dimensions must be positive");
    if (image_h % patch != 0 || image_w % patch != 0)
      throw ContractError("vit config: patch size must divide image height and width");
    if (embed_dim % heads != 0)
      throw ContractError("vit config: embed_dim must be divisible by heads");
    int L = layers;
    if (importance_layer < -1 || importance_layer >= L)
      throw ContractError("vit config: importance_layer out of range");
  }

  int resolved_importance_layer() const {
    return importance_layer < 0 ? layers - 1 : importance_layer;
  }
};

template <class S>
struct EncoderWeights {
  MatrixX<S> ln1_g, ln1_b;
  MatrixX<S> wq, bq, wk, bk, wv, bv, wo, bo;
  MatrixX<S> ln2_g, ln2_b;
  MatrixX<S> w1, b1, w2, b2;
};

/// Pre-norm encoder ViT with learned positional table. Row p+1 of the table
/// belongs to grid position p permanently; row 0 belongs to the CLS token.
template <class S>
struct ViTModel {
  ViTConfig cfg;
  MatrixX<S> patch_w, patch_b;  // patch_dim x d, 1 x d
  MatrixX<S> pos;               // (N+1) x d
  MatrixX<S> cls;               // 1 x d
  std::vector<EncoderWeights<S>> blocks;
  MatrixX<S> final_ln_g, final_ln_b;
  MatrixX<S> head_w, head_b;  // d x c, 1 x c

  static ViTModel randomized(const ViTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ViTModel m;
    m.cfg = cfg;
    Rng rng(seed);
    const S w0 = S(0.02);
    const int d = cfg.embed_dim;
    m.patch_w = random_normal<S>(cfg.patch_dim(), d, rng, w0);
    m.patch_b = MatrixX<S>::Zero(1, d);
    m.pos = random_normal<S>(cfg.n_patches() + 1, d, rng, w0);
    m.cls = random_normal<S>(1, d, rng, w0);
    m.blocks.resize(cfg.layers);
    for (auto& b : m.blocks) {
      b.ln1_g = MatrixX<S>::Ones(1, d);
      b.ln1_b = MatrixX<S>::Zero(1, d);
      b.wq = random_normal<S>(d, d, rng, w0);
      b.bq = MatrixX<S>::Zero(1, d);
      b.wk = random_normal<S>(d, d, rng, w0);
      b.bk = MatrixX<S>::Zero(1, d);
      b.wv = random_normal<S>(d, d, rng, w0);
      b.bv = MatrixX<S>::Zero(1, d);
      b.wo = random_normal<S>(d, d, rng, w0);
      b.bo = MatrixX<S>::Zero(1, d);
      b.ln2_g = MatrixX<S>::Ones(1, d);
      b.ln2_b = MatrixX<S>::Zero(1, d);
      b.w1 = random_normal<S>(d, cfg.hidden_dim(), rng, w0);
      b.b1 = MatrixX<S>::Zero(1, cfg.hidden_dim());
      b.w2 = random_normal<S>(cfg.hidden_dim(), d, rng, w0);
      b.b2 = MatrixX<S>::Zero(1, d);
    }
    m.final_ln_g = MatrixX<S>::Ones(1, d);
    m.final_ln_b = MatrixX<S>::Zero(1, d);
    m.head_w = random_normal<S>(d, cfg.classes, rng, w0);
    m.head_b = MatrixX<S>::Zero(1, cfg.classes);
    return m;
  }

  template <class T>
  ViTModel<T> cast() const {
    ViTModel<T> out;
    out.cfg = cfg;
    out.patch_w = patch_w.template cast<T>();
    out.patch_b = patch_b.template cast<T>();
    out.pos = pos.template cast<T>();
    out.cls = cls.template cast<T>();
    out.blocks.resize(blocks.size());
    for (size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      auto& o = out.blocks[i];
      o.ln1_g = b.ln1_g.template cast<T>();
      o.ln1_b = b.ln1_b.template cast<T>();
      o.wq = b.wq.template cast<T>();
      o.bq = b.bq.template cast<T>();
      o.wk = b.wk.template cast<T>();
      o.bk = b.bk.template cast<T>();
      o.wv = b.wv.template cast<T>();
      o.bv = b.bv.template cast<T>();
      o.wo = b.wo.template cast<T>();
      o.bo = b.bo.template cast<T>();
      o.ln2_g = b.ln2_g.template cast<T>();
      o.ln2_b = b.ln2_b.template cast<T>();
      o.w1 = b.w1.template cast<T>();
      o.b1 = b.b1.template cast<T>();
      o.w2 = b.w2.template cast<T>();
      o.b2 = b.b2.template cast<T>();
    }
    out.final_ln_g = final_ln_g.template cast<T>();
    out.final_ln_b = final_ln_b.template cast<T>();
    out.head_w = head_w.template cast<T>();
    out.head_b = head_b.template cast<T>();
    return out;
  }

  /// Stable (name, matrix) enumeration; the order defines the checkpoint and
  /// optimizer-state layout.
  std::vector<std::pair<std::string, MatrixX<S>*>> named_parameters() {
    std::vector<std::pair<std::string, MatrixX<S>*>> out;
    out.emplace_back("patch_w", &patch_w);
    out.emplace_back("patch_b", &patch_b);
    out.emplace_back("pos", &pos);
    out.emplace_back("cls", &cls);
    for (size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      std::string p = "block" + std::to_string(i) + ".";
      out.emplace_back(p + "ln1_g", &b.ln1_g);
      out.emplace_back(p + "ln1_b", &b.ln1_b);
      out.emplace_back(p + "wq", &b.wq);
      out.emplace_back(p + "bq", &b.bq);
      out.emplace_back(p + "wk", &b.wk);
      out.emplace_back(p + "bk", &b.bk);
      out.emplace_back(p + "wv", &b.wv);
      out.emplace_back(p + "bv", &b.bv);
      out.emplace_back(p + "wo", &b.wo);
      out.emplace_back(p + "bo", &b.bo);
      out.emplace_back(p + "ln2_g", &b.ln2_g);
      out.emplace_back(p + "ln2_b", &b.ln2_b);
      out.emplace_back(p + "w1", &b.w1);
      out.emplace_back(p + "b1", &b.b1);
      out.emplace_back(p + "w2", &b.w2);
      out.emplace_back(p + "b2", &b.b2);
    }
    out.emplace_back("final_ln_g", &final_ln_g);
    out.emplace_back("final_ln_b", &final_ln_b);
    out.emplace_back("head_w", &head_w);
    out.emplace_back("head_b", &head_b);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Patchify
// ---------------------------------------------------------------------------

/// Images are (H*W) x C matrices in row-major pixel order. Patches are
/// (P*P) x C blocks listed in row-major grid order; pixels inside a patch are
/// row-major as well. unpatchify(patchify(x)) == x exactly (pure copies).
template <class S>
std::vector<MatrixX<S>> patchify(const MatrixX<S>& image, const ViTConfig& cfg) {
  if (image.rows() != Eigen::Index(cfg.image_h) * cfg.image_w ||
      image.cols() != cfg.channels)
    throw ShapeError("patchify: image dimensions do not match config");
  const int P = cfg.patch, W = cfg.image_w;
  std::vector<MatrixX<S>> out;
  out.reserve(cfg.n_patches());
  for (int gr = 0; gr < cfg.grid_rows(); ++gr)
    for (int gc = 0; gc < cfg.grid_cols(); ++gc) {
      MatrixX<S> block(P * P, cfg.channels);
      for (int pi = 0; pi < P; ++pi)
        for (int pj = 0; pj < P; ++pj) {
          int row = (gr * P + pi) * W + (gc * P + pj);
          block.row(pi * P + pj) = image.row(row);
        }
      out.push_back(std::move(block));
    }
  return out;
}

template <class S>
MatrixX<S> unpatchify(const std::vector<MatrixX<S>>& blocks, const ViTConfig& cfg) {
  if (static_cast<int>(blocks.size()) != cfg.n_patches())
    throw ShapeError("unpatchify: wrong number of patches");
  const int P = cfg.patch, W = cfg.image_w;
  MatrixX<S> image(cfg.image_h * cfg.image_w, cfg.channels);
  for (int g = 0; g < cfg.n_patches(); ++g) {
    int gr = g / cfg.grid_cols(), gc = g % cfg.grid_cols();
    for (int pi = 0; pi < P; ++pi)
      for (int pj = 0; pj < P; ++pj)
        image.row((gr * P + pi) * W + (gc * P + pj)) = blocks[g].row(pi * P + pj);
  }
  return image;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// One active patch handed to the forward pass: the original grid position
/// and its (P*P) x C pixel block already registered on the tape (leaf when
/// inverting, constant otherwise).
template <class S>
struct TokenPatch {
  int position;
  Tensor<S> pixels;
};

/// Post-softmax CLS attention rows, one per (layer, head); entry 0 of each
/// row is the CLS->CLS weight and entry 1+j belongs to the j-th active patch.
template <class S>
struct AttentionRecordT {
  std::vector<std::vector<VectorX<S>>> cls_rows;  // [layer][head], length tokens
};

/// Model weights registered on a tape. `constants` freezes them (inversion,
/// evaluation); `leaves` makes them trainable and keeps the handles aligned
/// with named_parameters() order.
template <class S>
struct TapedViT {
  const ViTConfig* cfg = nullptr;
  Tensor<S> patch_w, patch_b, pos, cls;
  struct Block {
    Tensor<S> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::vector<Block> blocks;
  Tensor<S> final_ln_g, final_ln_b, head_w, head_b;
  std::vector<Tensor<S>> param_order;  // aligned with ViTModel::named_parameters

  static TapedViT constants(Tape<S>& tape, const ViTModel<S>& m) {
    return build(tape, const_cast<ViTModel<S>&>(m), false);
  }
  static TapedViT leaves(Tape<S>& tape, ViTModel<S>& m) { return build(tape, m, true); }

 private:
  static TapedViT build(Tape<S>& tape, ViTModel<S>& m, bool trainable) {
    TapedViT t;
    t.cfg = &m.cfg;
    auto reg = [&](MatrixX<S>& w) {
      Tensor<S> h = trainable ? tape.leaf(w, true) : tape.constant_view(w);
      t.param_order.push_back(h);
      return h;
    };
    t.patch_w = reg(m.patch_w);
    t.patch_b = reg(m.patch_b);
    t.pos = reg(m.pos);
    t.cls = reg(m.cls);
    t.blocks.resize(m.blocks.size());
    for (size_t i = 0; i < m.blocks.size(); ++i) {
      auto& b = m.blocks[i];
      auto& o = t.blocks[i];
      o.ln1_g = reg(b.ln1_g);
      o.ln1_b = reg(b.ln1_b);
      o.wq = reg(b.wq);
      o.bq = reg(b.bq);
      o.wk = reg(b.wk);
      o.bk = reg(b.bk);
      o.wv = reg(b.wv);
      o.bv = reg(b.bv);
      o.wo = reg(b.wo);
      o.bo = reg(b.bo);
      o.ln2_g = reg(b.ln2_g);
      o.ln2_b = reg(b.ln2_b);
      o.w1 = reg(b.w1);
      o.b1 = reg(b.b1);
      o.w2 = reg(b.w2);
      o.b2 = reg(b.b2);
    }
    t.final_ln_g = reg(m.final_ln_g);
    t.final_ln_b = reg(m.final_ln_b);
    t.head_w = reg(m.head_w);
    t.head_b = reg(m.head_b);
    return t;
  }
};

namespace detail {
template <class S>
void check_active_set(const std::vector<TokenPatch<S>>& active, const ViTConfig& cfg) {
  if (active.empty()) throw ContractError("forward: empty active patch set");
  std::vector<char> seen(cfg.n_patches(), 0);
  for (const auto& p : active) {
    if (p.position < 0 || p.position >= cfg.n_patches())
      throw ContractError("forward: patch position out of range");
    if (seen[p.position]) throw ContractError("forward: duplicate patch position");
    seen[p.position] = 1;
    if (p.pixels.rows() != Eigen::Index(cfg.patch) * cfg.patch ||
        p.pixels.cols() != cfg.channels)
      throw ShapeError("forward: patch block has wrong shape");
  }
}
}  // namespace detail

/// Token embedding only (CLS + projected patches + positional rows), before
/// any encoder block. Row 0 is the CLS token; row 1+j the j-th active patch.
template <class S>
Tensor<S> vit_embed(const TapedViT<S>& m, const std::vector<TokenPatch<S>>& active) {
  detail::check_active_set(active, *m.cfg);
  std::vector<Tensor<S>> rows;
  rows.reserve(active.size() + 1);
  rows.push_back(add(m.cls, slice_rows(m.pos, 0, 1)));
  for (const auto& p : active) {
    auto flat = flatten_rowmajor(p.pixels);             // 1 x (P*P*C)
    auto proj = add(matmul(flat, m.patch_w), m.patch_b);  // 1 x d
    rows.push_back(add(proj, slice_rows(m.pos, 1 + p.position, 1)));
  }
  return concat_rows(rows);
}

/// Full encoder forward on an arbitrary subset of patch positions. Sequence
/// length is |active| + 1. Returns the 1 x c logits; optionally records
/// per-layer CLS attention rows and per-layer cost-counter increments
/// (counter counts active patches only, excluding the CLS token).
template <class S>
Tensor<S> vit_forward(const TapedViT<S>& m, const std::vector<TokenPatch<S>>& active,
                      AttentionRecordT<S>* record = nullptr,
                      FlopCounter* counter = nullptr) {
  const ViTConfig& cfg = *m.cfg;
  const int d = cfg.embed_dim, H = cfg.heads, dh = cfg.head_dim();
  const S ln_eps = S(1e-5);
  const S att_scale = S(1) / std::sqrt(static_cast<S>(dh));

  Tensor<S> x = vit_embed(m, active);
  if (record) {
    record->cls_rows.assign(cfg.layers, {});
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const auto& b = m.blocks[l];
    auto h = layernorm_rows(x, b.ln1_g, b.ln1_b, ln_eps);
    auto q = add_row_broadcast(matmul(h, b.wq), b.bq);
    auto k = add_row_broadcast(matmul(h, b.wk), b.bk);
    auto v = add_row_broadcast(matmul(h, b.wv), b.bv);
    std::vector<Tensor<S>> head_outs;
    head_outs.reserve(H);
    for (int i = 0; i < H; ++i) {
      auto qi = slice_cols(q, i * dh, dh);
      auto ki = slice_cols(k, i * dh, dh);
      auto vi = slice_cols(v, i * dh, dh);
      auto att = softmax(scale(matmul(qi, transpose(ki)), att_scale), Axis::Rows);
      if (record) record->cls_rows[l].push_back(att.value().row(0).transpose());
      head_outs.push_back(matmul(att, vi));
    }
    auto attn = add_row_broadcast(matmul(concat_cols(head_outs), b.wo), b.bo);
    x = add(x, attn);
    auto h2 = layernorm_rows(x, b.ln2_g, b.ln2_b, ln_eps);
    auto f = add_row_broadcast(
        matmul(gelu(add_row_broadcast(matmul(h2, b.w1), b.b1)), b.w2), b.b2);
    x = add(x, f);
    if (counter)
      counter->add_encoder_layer(static_cast<std::uint64_t>(active.size()),
                                 static_cast<std::uint64_t>(d));
  }
  auto xf = layernorm_rows(x, m.final_ln_g, m.final_ln_b, ln_eps);
  auto cls_row = slice_rows(xf, 0, 1);
  return add_row_broadcast(matmul(cls_row, m.head_w), m.head_b);
}

/// Convenience forward with frozen weights on a private constant view.
template <class S>
Tensor<S> vit_forward_frozen(Tape<S>& tape, const ViTModel<S>& model,
                             const std::vector<TokenPatch<S>>& active,
                             AttentionRecordT<S>* record = nullptr,
                             FlopCounter* counter = nullptr) {
  auto taped = TapedViT<S>::constants(tape, model);
  return vit_forward(taped, active, record, counter);
}

/// Importance of each active patch: mean over heads of the chosen layer's
/// CLS attention row, skipping the CLS->CLS entry. No renormalization.
template <class S>
std::vector<S> cls_importance(const AttentionRecordT<S>& record, size_t n_active,
                              int layer) {
  if (layer < 0 || layer >= static_cast<int>(record.cls_rows.size()))
    throw ContractError("cls_importance: layer out of range");
  const auto& heads = record.cls_rows[layer];
  if (heads.empty()) throw ContractError("cls_importance: empty attention record");
  for (const auto& row : heads)
    if (row.size() != static_cast<Eigen::Index>(n_active) + 1)
      throw ContractError("cls_importance: record/active-set length mismatch");
  std::vector<S> scores(n_active, S(0));
  for (const auto& row : heads)
    for (size_t j = 0; j < n_active; ++j) scores[j] += row(1 + j);
  for (auto& s : scores) s /= static_cast<S>(heads.size());
  return scores;
}

}  // namespace vitinv
