#include "protonc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "protonc/errors.hpp"

namespace protonc {

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double step) {
  Tensor leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  return finite_difference_check([&] { return f(leaf); }, {leaf}, step);
}

double finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                               double step, std::size_t max_coords, std::uint64_t seed) {
  if (!(step > 0.0)) throw ContractError("finite_difference_check: step must be positive");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  f().backward();

  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto& p : params) {
    const std::size_t n = p.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords != 0 && max_coords < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }

    NoGradGuard no_grad;
    auto values = p.mutable_data();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = f().item();
      values[i] = saved - step;
      const double minus = f().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace protonc
