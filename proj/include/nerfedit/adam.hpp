#pragma once

#include "nerfedit/common.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace nerfedit {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments, one pair per parameter tensor.
template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;
  std::vector<MatrixX<Scalar>> first;
  std::vector<MatrixX<Scalar>> second;
};

/// Bias-corrected Adam update of one tensor. `t` is the (already incremented) step.
template <typename Scalar>
void adam_update(MatrixX<Scalar>& param, const MatrixX<Scalar>& grad, MatrixX<Scalar>& m, MatrixX<Scalar>& v,
                 std::int64_t t, double lr, const AdamOptions& options) {
  const Scalar b1 = static_cast<Scalar>(options.beta1);
  const Scalar b2 = static_cast<Scalar>(options.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(options.beta1, static_cast<double>(t)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(options.beta2, static_cast<double>(t)));
  const Scalar step = static_cast<Scalar>(lr);
  const Scalar eps = static_cast<Scalar>(options.eps);
  m.array() = b1 * m.array() + (Scalar(1) - b1) * grad.array();
  v.array() = b2 * v.array() + (Scalar(1) - b2) * grad.array().square();
  param.array() -= step * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

/// One Adam step over every tensor of `params` (anything with a
/// `visit(f(name, tensor, dims))` member). Throws DivergenceError naming the
/// tensor when a gradient is non-finite; parameters are then left untouched.
template <typename Scalar, typename Params>
void adam_step(Params& params, const Params& grads, AdamState<Scalar>& state, double lr,
               const AdamOptions& options = {}) {
  std::vector<MatrixX<Scalar>*> p;
  std::vector<const MatrixX<Scalar>*> g;
  std::vector<std::string> names;
  params.visit([&](const char* name, MatrixX<Scalar>& m, const auto&) {
    p.push_back(&m);
    names.emplace_back(name);
  });
  grads.visit([&](const char*, const MatrixX<Scalar>& m, const auto&) { g.push_back(&m); });
  if (p.size() != g.size()) throw ShapeError("editor", "adam: gradient tensor count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]->rows() != g[i]->rows() || p[i]->cols() != g[i]->cols()) {
      throw ShapeError("editor", "adam: gradient shape mismatch for " + names[i]);
    }
    if (!g[i]->allFinite()) {
      std::ostringstream msg;
      msg << "adam: non-finite gradient in " << names[i] << " at step " << state.step + 1;
      throw DivergenceError("editor", msg.str());
    }
  }
  if (state.first.empty()) {
    for (auto* m : p) {
      state.first.push_back(MatrixX<Scalar>::Zero(m->rows(), m->cols()));
      state.second.push_back(MatrixX<Scalar>::Zero(m->rows(), m->cols()));
    }
  }
  if (state.first.size() != p.size()) throw ShapeError("editor", "adam: state does not match parameters");
  ++state.step;
  for (std::size_t i = 0; i < p.size(); ++i) {
    adam_update(*p[i], *g[i], state.first[i], state.second[i], state.step, lr, options);
  }
}

}  // namespace nerfedit
