#include "tsmixer/losses.hpp"

#include <cmath>

#include <boost/math/special_functions/digamma.hpp>
#include <fmt/format.h>

#include "tsmixer/errors.hpp"

namespace tsmixer {

namespace {

void require_same_shape(const Shape& a, const Shape& b, std::string_view what) {
    if (a != b) {
        throw Error(ErrorKind::dimension, fmt::format("{}: prediction {} and target {} differ", what, a.str(), b.str()));
    }
}

void check_nb_args(double y, double mu, double alpha) {
    if (!(mu > 0.0) || !(alpha > 0.0)) {
        throw Error(ErrorKind::domain,
                    fmt::format("negative binomial needs mu > 0 and alpha > 0, got mu={} alpha={}", mu, alpha));
    }
    if (!(y >= 0.0) || y != std::floor(y)) {
        throw Error(ErrorKind::domain, fmt::format("negative binomial counts must be nonnegative integers, got {}", y));
    }
}

}  // namespace

Var mse_loss(const Var& pred, const Tensor& target) {
    require_same_shape(pred.shape(), target.shape(), "mse");
    return mean(square(pred - pred.tape()->constant(target)));
}

double mse(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred.shape(), target.shape(), "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

double mae(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred.shape(), target.shape(), "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

double nb_log_prob(double y, double mu, double alpha) {
    check_nb_args(y, mu, alpha);
    const double r = 1.0 / alpha;
    return std::lgamma(y + r) - std::lgamma(r) - std::lgamma(y + 1.0) - r * std::log1p(mu / r) +
           y * std::log(mu / (r + mu));
}

Var nb_nll_loss(const Var& mu, const Var& alpha, const Tensor& y) {
    require_same_shape(mu.shape(), y.shape(), "negative binomial mean");
    require_same_shape(alpha.shape(), y.shape(), "negative binomial dispersion");
    const Tensor& m = mu.value();
    const Tensor& a = alpha.value();
    const std::size_t n = y.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    double total = 0.0;
    Tensor d_mu(y.shape()), d_alpha(y.shape());
    for (std::size_t i = 0; i < n; ++i) {
        total -= nb_log_prob(y[i], m[i], a[i]);
        const double r = 1.0 / a[i];
        const double dlogp_dmu = y[i] / m[i] - (r + y[i]) / (r + m[i]);
        const double dlogp_dr = boost::math::digamma(y[i] + r) - boost::math::digamma(r) - std::log1p(m[i] / r) +
                                (m[i] - y[i]) / (r + m[i]);
        d_mu[i] = -dlogp_dmu * inv_n;
        d_alpha[i] = dlogp_dr * r * r * inv_n;  // dr/dalpha = -r^2
    }
    return mu.tape()->record(
        "nb_nll", Tensor::scalar(total * inv_n), {mu, alpha},
        [d_mu = std::move(d_mu), d_alpha = std::move(d_alpha)](const Tensor& g, std::span<Tensor* const> grads) {
            const double s = g.item();
            if (grads[0]) {
                for (std::size_t i = 0; i < d_mu.size(); ++i) (*grads[0])[i] += s * d_mu[i];
            }
            if (grads[1]) {
                for (std::size_t i = 0; i < d_alpha.size(); ++i) (*grads[1])[i] += s * d_alpha[i];
            }
        });
}

}  // namespace tsmixer
