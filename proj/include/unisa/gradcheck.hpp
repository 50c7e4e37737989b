#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "unisa/autograd.hpp"

namespace unisa {

// Builds a scalar loss on the given graph, reading whatever parameters it closes over.
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates probed per parameter; 0 probes all of them.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

// Max over probed coordinates of |analytic - central| / max(1, |central|).
// Analytic gradients come from one backward pass; params are restored on return.
double finite_diff_check(const LossBuilder& f, std::span<Parameter* const> params,
                         const GradCheckOptions& options = {});

// Single-tensor form: f receives x as a differentiable leaf.
double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace unisa
