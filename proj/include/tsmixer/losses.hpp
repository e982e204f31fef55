#pragma once

#include "tsmixer/autodiff.hpp"
#include "tsmixer/tensor.hpp"

namespace tsmixer {

/// Mean squared error over all elements; shapes must match.
Var mse_loss(const Var& pred, const Tensor& target);
double mse(const Tensor& pred, const Tensor& target);
double mae(const Tensor& pred, const Tensor& target);

/// Log-probability of count y under a negative binomial with mean mu and variance
/// mu + alpha mu^2.
double nb_log_prob(double y, double mu, double alpha);

/// Mean negative log-likelihood of nonnegative integer counts `y`.
/// Nonpositive mu or alpha and invalid counts raise a domain error.
Var nb_nll_loss(const Var& mu, const Var& alpha, const Tensor& y);

}  // namespace tsmixer
