#include "dfdam/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dfdam/errors.hpp"
#include "dfdam/rng.hpp"

namespace dfdam {

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t k, Rng& rng) {
  if (n <= k) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  std::set<std::size_t> chosen;
  while (chosen.size() < k) chosen.insert(static_cast<std::size_t>(rng.below(n)));
  return {chosen.begin(), chosen.end()};
}

}  // namespace

double gradcheck_many(const std::function<Tensor(Tape&)>& f,
                      const std::vector<Tensor>& inputs,
                      const GradcheckOptions& opts) {
  // Analytic pass.
  for (const Tensor& t : inputs) const_cast<Tensor&>(t).zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor y = f(tape);
    if (y.numel() != 1)
      throw ContractError("gradcheck: f must be scalar-valued, got shape " +
                          shape_str(y.shape()));
    tape.backward(y);
    for (const Tensor& t : inputs)
      analytic.push_back(t.has_grad() ? t.grad_ref()
                                      : std::vector<double>(t.numel(), 0.0));
  }

  auto eval = [&]() {
    Tape tape(/*recording=*/false);
    return f(tape).item();
  };

  Rng rng(opts.coord_seed);
  double max_rel = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor t = inputs[ti];
    double* v = t.data();
    for (std::size_t i : pick_coords(t.numel(), opts.max_coords_per_tensor, rng)) {
      const double old = v[i];
      v[i] = old + opts.h;
      const double fp = eval();
      v[i] = old - opts.h;
      const double fm = eval();
      v[i] = old;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double rel =
          std::abs(numeric - analytic[ti][i]) / std::max(1.0, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

double gradcheck(const std::function<Tensor(Tape&, const Tensor&)>& f,
                 const Tensor& x, double h) {
  GradcheckOptions opts;
  opts.h = h;
  return gradcheck_many([&](Tape& tape) { return f(tape, x); }, {x}, opts);
}

}  // namespace dfdam
