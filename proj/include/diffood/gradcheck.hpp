#pragma once

#include <functional>
#include <span>

#include "diffood/tensor.hpp"

namespace diffood {

/// Max over coordinates of |a - n| / max(|a|, |n|, floor), where a is the
/// analytic gradient and n the central difference, for a scalar function of
/// one tensor. `x` must be a leaf; its values are restored on return.
template <typename T>
double finite_diff_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f, BasicTensor<T> x, double h,
                         double floor = 1e-6);

/// Same check over a set of parameters perturbed in place; `loss` rebuilds the
/// graph from the current parameter values on each call.
template <typename T>
double finite_diff_check_params(const std::function<BasicTensor<T>()>& loss, std::span<BasicTensor<T>> params,
                                double h, double floor = 1e-6);

}  // namespace diffood
