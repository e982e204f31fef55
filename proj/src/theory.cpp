#include "tsmixer/theory.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "tsmixer/errors.hpp"

namespace tsmixer {

LinearSolution construct_periodic_solution(std::size_t P, std::size_t L, std::size_t T, double a, double c) {
    if (P == 0 || P >= L) {
        throw Error(ErrorKind::precondition, fmt::format("periodic solution needs 1 <= P < L, got P={} L={}", P, L));
    }
    if (T == 0) throw Error(ErrorKind::precondition, "periodic solution needs T >= 1");
    LinearSolution s{Tensor::zeros(Shape{T, L}), Tensor(Shape{T}, c)};
    for (std::size_t i = 0; i < T; ++i) s.A(i, L - P + i % P) = a;
    return s;
}

LinearSolution construct_theorem1_solution(std::size_t P, std::size_t L, std::size_t T) {
    if (P == 0 || L < P + 1) {
        throw Error(ErrorKind::precondition,
                    fmt::format("trend-robust solution needs L >= P + 1, got P={} L={}", P, L));
    }
    if (T == 0) throw Error(ErrorKind::precondition, "trend-robust solution needs T >= 1");
    LinearSolution s{Tensor::zeros(Shape{T, L}), Tensor::zeros(Shape{T})};
    const std::size_t first = L - P - 1;  // column of x_{L-P}
    for (std::size_t i0 = 0; i0 < T; ++i0) {
        const std::size_t i = i0 + 1;
        s.A(i0, L - 1) += 1.0;
        s.A(i0, first + i % P) += 1.0;
        s.A(i0, first) -= 1.0;
    }
    return s;
}

double theorem1_bound(double K, std::size_t i, std::size_t P) {
    return K * static_cast<double>(i + std::min(i, P));
}

std::vector<double> apply_linear(const LinearSolution& s, std::span<const double> window) {
    const std::size_t T = s.A.dim(0), L = s.A.dim(1);
    if (window.size() != L) {
        throw Error(ErrorKind::dimension, fmt::format("window has {} steps, A expects {}", window.size(), L));
    }
    std::vector<double> y(T);
    for (std::size_t i = 0; i < T; ++i) {
        double acc = s.b[i];
        for (std::size_t j = 0; j < L; ++j) acc += s.A(i, j) * window[j];
        y[i] = acc;
    }
    return y;
}

}  // namespace tsmixer
