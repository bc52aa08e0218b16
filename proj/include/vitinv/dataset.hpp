#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "vitinv/rng.hpp"
#include "vitinv/vit.hpp"

namespace vitinv {

/// Class-balanced synthetic shape dataset. Images are (H*W) x C matrices with
/// values in [-1, 1]. Fully determined by (geometry, counts, seed).
template <class S>
struct ToyDataset {
  std::vector<MatrixX<S>> train_images;
  std::vector<int> train_labels;
  std::vector<MatrixX<S>> val_images;
  std::vector<int> val_labels;
  int classes = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Shape vocabulary, cycled when classes > 4: disk, bar, cross, ring.
template <class S>
MatrixX<S> render_shape(int cls, int H, int W, int C, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);

  const double base_colors[4][3] = {
      {0.90, 0.20, 0.20}, {0.20, 0.90, 0.25}, {0.25, 0.35, 0.95}, {0.90, 0.85, 0.20}};
  double fg[3], bg[3];
  double bg_gray = 0.05 + 0.20 * unit(rng);
  for (int c = 0; c < 3; ++c) {
    fg[c] = std::clamp(base_colors[cls % 4][c] + 0.4 * (unit(rng) - 0.5), 0.0, 1.0);
    bg[c] = std::clamp(bg_gray + 0.1 * (unit(rng) - 0.5), 0.0, 1.0);
  }
  double cx = W * (0.30 + 0.40 * unit(rng));
  double cy = H * (0.30 + 0.40 * unit(rng));
  double r = std::min(H, W) * (0.20 + 0.14 * unit(rng));
  int shape = cls % 4;

  MatrixX<S> img(H * W, C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      double d2 = dx * dx + dy * dy;
      bool inside = false;
      switch (shape) {
        case 0: inside = d2 <= r * r; break;
        case 1: inside = std::abs(dx) <= r && std::abs(dy) <= r / 3.0; break;
        case 2:
          inside = (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) ||
                   (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
          break;
        case 3: inside = d2 >= (0.55 * r) * (0.55 * r) && d2 <= r * r; break;
      }
      for (int c = 0; c < C; ++c) {
        double v = (inside ? fg[c % 3] : bg[c % 3]) + noise(rng);
        img(y * W + x, c) = static_cast<S>(2.0 * std::clamp(v, 0.0, 1.0) - 1.0);
      }
    }
  return img;
}

}  // namespace detail

/// Generates class-interleaved train/val splits (labels cycle 0..c-1, so any
/// prefix is balanced). Bit-identical across runs for a fixed seed.
template <class S>
ToyDataset<S> gen_toy_dataset(const ViTConfig& geom, int classes,
                              int n_train_per_class, int n_val_per_class,
                              std::uint64_t seed) {
  if (classes < 2) throw ContractError("gen_toy_dataset: need at least 2 classes");
  ToyDataset<S> ds;
  ds.classes = classes;
  ds.seed = seed;
  Rng rng(derive_seed(seed, 0xda7a));
  for (int i = 0; i < n_train_per_class; ++i)
    for (int k = 0; k < classes; ++k) {
      ds.train_images.push_back(detail::render_shape<S>(k, geom.image_h, geom.image_w,
                                                        geom.channels, rng));
      ds.train_labels.push_back(k);
    }
  for (int i = 0; i < n_val_per_class; ++i)
    for (int k = 0; k < classes; ++k) {
      ds.val_images.push_back(detail::render_shape<S>(k, geom.image_h, geom.image_w,
                                                      geom.channels, rng));
      ds.val_labels.push_back(k);
    }
  return ds;
}

}  // namespace vitinv
