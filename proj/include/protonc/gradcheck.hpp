#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "protonc/tensor.hpp"

namespace protonc {

/// Maximum over checked coordinates of
///   |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued f. `x` is copied; the caller's tensor is not touched.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double step = 1e-6);

/// Same measure for a closure over leaf parameters, which are perturbed in
/// place and restored. When `max_coords` is non-zero, only that many
/// coordinates per parameter are probed, chosen from `seed`.
double finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                               double step = 1e-6, std::size_t max_coords = 0,
                               std::uint64_t seed = 0);

}  // namespace protonc
