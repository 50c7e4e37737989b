#include "unisa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "unisa/error.hpp"

namespace unisa {

namespace {

double evaluate(const LossBuilder& f) {
  Graph g(false);
  const double v = f(g).value().item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss evaluated to " + std::to_string(v));
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

double finite_diff_check(const LossBuilder& f, std::span<Parameter* const> params, const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    Var loss = f(g);
    if (!std::isfinite(loss.value().item())) throw NumericError("finite_diff_check: non-finite loss at the base point");
    g.backward(loss);
  }

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (Parameter* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
    }
    for (std::size_t c : coords) {
      const double original = p->value[c];
      p->value[c] = original + options.eps;
      const double up = evaluate(f);
      p->value[c] = original - options.eps;
      const double down = evaluate(f);
      p->value[c] = original;
      const double numeric = (up - down) / (2.0 * options.eps);
      worst = std::max(worst, relative_error(p->grad[c], numeric));
    }
  }
  return worst;
}

double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double eps) {
  Parameter p("x", x);
  Parameter* ps[] = {&p};
  GradCheckOptions opts;
  opts.eps = eps;
  return finite_diff_check([&](Graph& g) { return f(g, g.param(p)); }, ps, opts);
}

}  // namespace unisa
