#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "vitinv/adam.hpp"
#include "vitinv/dataset.hpp"
#include "vitinv/vit.hpp"

namespace vitinv {

struct TeacherTrainConfig {
  int epochs = 10;
  int batch = 32;
  double lr = 1e-3;
};

struct TrainStats {
  double train_acc = 0;
  double val_acc = 0;
  double final_loss = 0;
  int epochs = 0;
};

/// Wraps a full image as constant tokens and runs a frozen forward.
template <class S>
Eigen::Matrix<S, 1, Eigen::Dynamic> logits_for_image(const ViTModel<S>& model,
                                                     const MatrixX<S>& image) {
  Tape<S> tape;
  auto blocks = patchify(image, model.cfg);
  std::vector<TokenPatch<S>> active;
  active.reserve(blocks.size());
  for (int p = 0; p < static_cast<int>(blocks.size()); ++p)
    active.push_back({p, tape.constant(std::move(blocks[p]))});
  return vit_forward_frozen(tape, model, active).value().row(0);
}

template <class S>
int predict(const ViTModel<S>& model, const MatrixX<S>& image) {
  Eigen::Index best;
  logits_for_image(model, image).maxCoeff(&best);
  return static_cast<int>(best);
}

template <class S>
double eval_accuracy(const ViTModel<S>& model, const std::vector<MatrixX<S>>& images,
                     const std::vector<int>& labels) {
  if (images.empty()) return 0.0;
  int hits = 0;
  for (size_t i = 0; i < images.size(); ++i)
    if (predict(model, images[i]) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

/// Supervised training of the toy teacher with Adam. Zero epochs returns the
/// freshly initialized model untouched. Aborts on a non-finite loss.
template <class S>
ViTModel<S> train_teacher(const ToyDataset<S>& data, const ViTConfig& cfg,
                          const TeacherTrainConfig& tc, std::uint64_t seed,
                          TrainStats* stats = nullptr) {
  for (int y : data.train_labels)
    if (y < 0 || y >= cfg.classes) throw LabelError("train_teacher: label out of range");
  ViTModel<S> model = ViTModel<S>::randomized(cfg, derive_seed(seed, 0x11));
  Rng order_rng(derive_seed(seed, 0x22));

  auto names = model.named_parameters();
  std::vector<AdamState<S>> states(names.size());
  AdamHyper<S> hp;
  hp.lr = static_cast<S>(tc.lr);

  // Patch views are rebuilt per epoch; images themselves never change.
  std::vector<std::vector<MatrixX<S>>> patches(data.train_images.size());
  for (size_t i = 0; i < data.train_images.size(); ++i)
    patches[i] = patchify(data.train_images[i], cfg);

  std::vector<size_t> order(data.train_images.size());
  std::iota(order.begin(), order.end(), size_t{0});

  double last_loss = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (size_t start = 0; start < order.size(); start += tc.batch) {
      size_t stop = std::min(order.size(), start + tc.batch);
      Tape<S> tape;
      auto taped = TapedViT<S>::leaves(tape, model);
      Tensor<S> total;
      for (size_t b = start; b < stop; ++b) {
        size_t idx = order[b];
        std::vector<TokenPatch<S>> active;
        active.reserve(patches[idx].size());
        for (int p = 0; p < static_cast<int>(patches[idx].size()); ++p)
          active.push_back({p, tape.constant(patches[idx][p])});
        auto logits = vit_forward(taped, active);
        auto ce = cross_entropy_from_logits(logits, data.train_labels[idx]);
        total = total.valid() ? add(total, ce) : ce;
      }
      auto loss = scale(total, S(1) / static_cast<S>(stop - start));
      last_loss = static_cast<double>(loss.scalar());
      if (!std::isfinite(last_loss))
        throw NumericError("train_teacher: non-finite loss at epoch " +
                           std::to_string(epoch));
      tape.backward(loss);
      for (size_t i = 0; i < names.size(); ++i) {
        if (!tape.has_grad(taped.param_order[i])) continue;
        adam_step(*names[i].second, tape.grad(taped.param_order[i]), states[i], hp);
      }
    }
  }
  if (stats) {
    stats->train_acc = eval_accuracy(model, data.train_images, data.train_labels);
    stats->val_acc = eval_accuracy(model, data.val_images, data.val_labels);
    stats->final_loss = last_loss;
    stats->epochs = tc.epochs;
  }
  return model;
}

}  // namespace vitinv
