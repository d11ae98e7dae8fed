#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "msw/rng.hpp"
#include "msw/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor_ = 1.0) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor_});
}

// Central finite differences of a scalar-valued graph builder with respect
// to every component of every input. Returns the max relative error against
// the tape gradients. Independent of the backward implementation: each
// probe reruns the forward pass only.
template <class F>
double fd_check(F f, std::vector<msw::ArrayD> inputs, double h = 1e-5, double floor_ = 1.0) {
  std::vector<msw::ArrayD> grads;
  {
    msw::Tape<double> tape;
    std::vector<msw::Tensor<double>> leaves;
    leaves.reserve(inputs.size());
    for (auto& a : inputs) leaves.push_back(tape.leaf(a, true));
    auto loss = f(tape, leaves);
    tape.backward(loss);
    for (auto& l : leaves) grads.push_back(tape.grad_or_zero(l));
  }
  auto eval = [&](const std::vector<msw::ArrayD>& xs) {
    msw::Tape<double> tape;
    std::vector<msw::Tensor<double>> leaves;
    leaves.reserve(xs.size());
    for (const auto& a : xs) leaves.push_back(tape.leaf(a, false));
    return f(tape, leaves).item();
  };
  double max_rel = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t j = 0; j < inputs[i].size(); ++j) {
      std::vector<msw::ArrayD> plus = inputs, minus = inputs;
      plus[i].v[static_cast<size_t>(j)] += h;
      minus[i].v[static_cast<size_t>(j)] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      max_rel = std::max(max_rel, rel_err(grads[i].v[static_cast<size_t>(j)], fd, floor_));
    }
  }
  return max_rel;
}

inline msw::ArrayD random_array(msw::Shape shape, msw::Rng& rng, double scale = 1.0) {
  msw::ArrayD a(std::move(shape));
  for (auto& v : a.v) v = rng.normal() * scale;
  return a;
}

}  // namespace testutil
