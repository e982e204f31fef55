#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tsmixer/tensor.hpp"

namespace tsmixer {

/// Weights of a linear forecaster Y = A X + b (A is T x L, b has T entries).
struct LinearSolution {
    Tensor A;
    Tensor b;
};

/// Exact forecaster for x(t) = a * x(t - P) + c. Row i copies the lag in the most
/// recent period that shares its phase, scaled by a, and adds c. Requires P < L.
LinearSolution construct_periodic_solution(std::size_t P, std::size_t L, std::size_t T, double a = 1.0,
                                           double c = 0.0);

/// Forecaster for periodic(P) + K-Lipschitz trend signals. Only the last P + 1
/// lags are used: row i predicts x_L + x_{L-P+(i mod P)} - x_{L-P} (1-based i).
/// Requires L >= P + 1.
LinearSolution construct_theorem1_solution(std::size_t P, std::size_t L, std::size_t T);

/// Error bound K (i + min(i, P)) for horizon step i (1-based).
double theorem1_bound(double K, std::size_t i, std::size_t P);

/// A x + b for a single length-L series.
std::vector<double> apply_linear(const LinearSolution& s, std::span<const double> window);

}  // namespace tsmixer
