#pragma once

#include <cmath>

#include "vitinv/error.hpp"
#include "vitinv/tensor.hpp"

namespace vitinv {

template <class Scalar>
struct AdamHyper {
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
};

/// First/second moment buffers for one parameter. Shapes are fixed at first use.
template <class Scalar>
struct AdamState {
  long step = 0;
  MatrixX<Scalar> m;
  MatrixX<Scalar> s;
};

/// One bias-corrected Adam update, in place.
template <class Scalar>
void adam_step(MatrixX<Scalar>& param, const MatrixX<Scalar>& grad,
               AdamState<Scalar>& state, const AdamHyper<Scalar>& hp) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw ShapeError("adam_step: param/grad shape mismatch");
  if (state.m.size() == 0) {
    state.m = MatrixX<Scalar>::Zero(param.rows(), param.cols());
    state.s = MatrixX<Scalar>::Zero(param.rows(), param.cols());
  }
  if (state.m.rows() != param.rows() || state.m.cols() != param.cols())
    throw ShapeError("adam_step: state/param shape mismatch");
  state.step += 1;
  state.m = hp.beta1 * state.m + (Scalar(1) - hp.beta1) * grad;
  state.s = (hp.beta2 * state.s.array() +
             (Scalar(1) - hp.beta2) * grad.array().square())
                .matrix();
  const Scalar bc1 = Scalar(1) - std::pow(hp.beta1, Scalar(state.step));
  const Scalar bc2 = Scalar(1) - std::pow(hp.beta2, Scalar(state.step));
  param.array() -=
      hp.lr * (state.m.array() / bc1) / ((state.s.array() / bc2).sqrt() + hp.eps);
}

}  // namespace vitinv
