#include <cmath>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "tsmixer/errors.hpp"
#include "tsmixer/losses.hpp"
#include "tsmixer/training.hpp"

using namespace tsmixer;
using tsmixer::testing::random_tensor;

namespace {

// Golden-section minimizer on [lo, hi].
template <class F>
double argmin_1d(F f, double lo, double hi) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    for (int it = 0; it < 200; ++it) {
        if (f(c) < f(d)) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    return (a + b) / 2.0;
}

double nb_mean_nll(double mu, double alpha, const std::vector<double>& ys) {
    Tape tape;
    const std::size_t n = ys.size();
    return nb_nll_loss(tape.constant(Tensor(Shape{n}, mu)), tape.constant(Tensor(Shape{n}, alpha)),
                       Tensor(Shape{n}, std::vector<double>(ys)))
        .value()
        .item();
}

double nb_mean_grad(double mu, double alpha, const std::vector<double>& ys) {
    Tape tape;
    const std::size_t n = ys.size();
    const Var m = tape.leaf(Tensor(Shape{n}, mu));
    const Var loss = nb_nll_loss(m, tape.constant(Tensor(Shape{n}, alpha)), Tensor(Shape{n}, std::vector<double>(ys)));
    const Tensor g = tape.backward(loss).of(m);
    double s = 0.0;
    for (double v : g.data()) s += v;
    return s;
}

std::vector<Window> periodic_windows(std::size_t P, std::size_t L, std::size_t T, std::size_t steps, Rng& rng) {
    const SeriesFrame f = synth_periodic(P, steps, 1.0, rng);
    return make_windows(f, WindowSpec{L, T, 1});
}

}  // namespace

TEST_CASE("mse and mae") {
    const Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({1, 4});
    CHECK(mse(a, a) == 0.0);
    CHECK(mae(a, a) == 0.0);
    CHECK(mse(a, b) == 2.0);
    CHECK(mae(a, b) == 1.0);

    Rng rng(101);
    const Tensor p = random_tensor(Shape{3, 4, 2}, rng), t = random_tensor(Shape{3, 4, 2}, rng);
    double sq = 0.0, ab = 0.0;
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t c = 0; c < 2; ++c) {
                const double d = p(s, i, c) - t(s, i, c);
                sq += d * d;
                ab += std::fabs(d);
            }
    CHECK(std::abs(mse(p, t) - sq / 24.0) < 1e-12);
    CHECK(std::abs(mae(p, t) - ab / 24.0) < 1e-12);
    Tape tape;
    CHECK(std::abs(mse_loss(tape.constant(p), t).value().item() - sq / 24.0) < 1e-12);
    CHECK_THROWS_AS(mse(a, Tensor::vector({1, 2, 3})), Error);
}

TEST_CASE("negative binomial likelihood") {
    SUBCASE("Poisson limit") {
        for (double mu : {20.0, 100.0, 400.0}) {
            const double poisson = -(mu * std::log(mu) - mu - std::lgamma(mu + 1.0));
            CHECK(std::abs(nb_mean_nll(mu, 1e-6, {mu}) - poisson) < 1e-3);
        }
    }
    SUBCASE("closed form for y = 0") {
        // P(0) = (1 + alpha mu)^(-1/alpha)
        const double mu = 3.0, alpha = 0.5;
        CHECK(nb_log_prob(0.0, mu, alpha) == doctest::Approx(-std::log1p(alpha * mu) / alpha).epsilon(1e-14));
    }
    SUBCASE("gradient check") {
        Rng rng(103);
        Tensor mu(Shape{2, 3}), alpha(Shape{2, 3}), y(Shape{2, 3});
        for (std::size_t i = 0; i < 6; ++i) {
            mu[i] = rng.uniform(0.2, 30.0);
            alpha[i] = rng.uniform(0.01, 2.0);
            y[i] = static_cast<double>(rng.integer(0, 40));
        }
        const double err = grad_check(
            [&](Tape&, std::span<const Var> p) { return nb_nll_loss(p[0], p[1], y); }, {mu, alpha});
        CHECK(err < 1e-4);
    }
    SUBCASE("fitting the mean recovers the sample mean") {
        Rng rng(107);
        for (double alpha : {0.05, 0.5, 2.0}) {
            std::vector<double> ys(40);
            double total = 0.0;
            for (double& v : ys) {
                v = static_cast<double>(rng.integer(0, 25));
                total += v;
            }
            const double sample_mean = total / 40.0;
            const double by_value = argmin_1d([&](double m) { return nb_mean_nll(m, alpha, ys); }, 0.1, 100.0);
            CHECK(std::abs(by_value - sample_mean) < 1e-3);
            // Bisection on the sign of the analytic gradient.
            double lo = 0.1, hi = 100.0;
            for (int it = 0; it < 100; ++it) {
                const double mid = (lo + hi) / 2.0;
                (nb_mean_grad(mid, alpha, ys) < 0.0 ? lo : hi) = mid;
            }
            CHECK(std::abs(lo - sample_mean) < 1e-3);
        }
    }
    SUBCASE("domain errors") {
        Tape tape;
        const Var one = tape.constant(Tensor::vector({1.0}));
        const Var zero = tape.constant(Tensor::vector({0.0}));
        auto kind = [](auto&& f) {
            try {
                f();
            } catch (const Error& e) {
                return e.kind();
            }
            return ErrorKind::io;
        };
        CHECK(kind([&] { nb_nll_loss(zero, one, Tensor::vector({1.0})); }) == ErrorKind::domain);
        CHECK(kind([&] { nb_nll_loss(one, zero, Tensor::vector({1.0})); }) == ErrorKind::domain);
        CHECK(kind([&] { nb_nll_loss(one, one, Tensor::vector({-1.0})); }) == ErrorKind::domain);
        CHECK(kind([&] { nb_nll_loss(one, one, Tensor::vector({1.5})); }) == ErrorKind::domain);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves fresh parameters unchanged") {
        Tensor p = Tensor::vector({1.0, -2.0});
        AdamState s;
        Tensor* ps[] = {&p};
        const Tensor g[] = {Tensor::zeros(Shape{2})};
        adam_step(ps, g, s, AdamConfig{0.1});
        CHECK(p == Tensor::vector({1.0, -2.0}));
    }
    SUBCASE("moments decay under zero gradient") {
        Tensor p = Tensor::vector({1.0});
        AdamState s{{Tensor::vector({0.5})}, {Tensor::vector({0.25})}, 3};
        Tensor* ps[] = {&p};
        const Tensor g[] = {Tensor::zeros(Shape{1})};
        adam_step(ps, g, s, AdamConfig{1e-3});
        CHECK(s.m[0][0] == doctest::Approx(0.45).epsilon(1e-15));
        CHECK(s.v[0][0] == doctest::Approx(0.25 * 0.999).epsilon(1e-15));
        CHECK(s.step == 4);
    }
    SUBCASE("first step with unit gradient") {
        Tensor p = Tensor::vector({0.0});
        AdamState s;
        Tensor* ps[] = {&p};
        const Tensor g[] = {Tensor::vector({1.0})};
        adam_step(ps, g, s, AdamConfig{1e-3});
        // m_hat = 1, v_hat = 1
        CHECK(p[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
    }
    SUBCASE("learning rate zero is the identity") {
        Rng rng(109);
        Tensor p = random_tensor(Shape{3, 2}, rng);
        const Tensor before = p;
        AdamState s;
        Tensor* ps[] = {&p};
        const Tensor g[] = {random_tensor(Shape{3, 2}, rng)};
        adam_step(ps, g, s, AdamConfig{0.0});
        CHECK(p == before);
    }
    SUBCASE("quadratic bowl") {
        Tensor p = Tensor::vector({1.0});
        AdamState s;
        Tensor* ps[] = {&p};
        for (int i = 0; i < 500; ++i) {
            const Tensor g[] = {Tensor::vector({2.0 * p[0]})};
            adam_step(ps, g, s, AdamConfig{0.01});
        }
        CHECK(std::abs(p[0]) < 1e-3);
    }
}

TEST_CASE("early stopping") {
    SUBCASE("patience 1 stops at the first worse epoch and restores the best") {
        const std::vector<double> val{1.0, 1.1, 1.2, 1.3};
        int current = 0, saved = -1, restored = -1;
        TrainingTask task;
        task.train_epoch = [&](std::size_t e) {
            current = static_cast<int>(e);
            return 0.0;
        };
        task.validate = [&] { return val[static_cast<std::size_t>(current - 1)]; };
        task.save_best = [&] { saved = current; };
        task.restore_best = [&] { restored = saved; };
        const TrainHistory h = run_training(task, 10, 1);
        CHECK(h.val_loss.size() == 2);
        CHECK(h.best_epoch == 1);
        CHECK(restored == 1);
    }
    SUBCASE("ties count toward patience") {
        EarlyStopping s(2);
        CHECK(s.update(1.0));
        CHECK_FALSE(s.update(1.0));
        CHECK_FALSE(s.should_stop());
        CHECK_FALSE(s.update(1.0 - 1e-13));
        CHECK(s.should_stop());
    }
    SUBCASE("strict improvement resets the counter") {
        EarlyStopping s(2);
        s.update(1.0);
        s.update(1.5);
        CHECK(s.update(0.9));
        s.update(1.0);
        CHECK_FALSE(s.should_stop());
    }
}

TEST_CASE("training loop") {
    Rng rng(113);
    const auto train_set = periodic_windows(8, 16, 4, 80, rng);
    const auto val_set = periodic_windows(8, 16, 4, 40, rng);

    SUBCASE("linear model learns a periodic signal") {
        ModelConfig mc;
        mc.family = Family::linear;
        mc.L = 16;
        mc.T = 4;
        Model m(mc, 1);
        TrainConfig tc;
        tc.learning_rate = 0.01;
        tc.max_epochs = 300;
        tc.patience = 20;
        tc.batch_size = 16;
        const TrainHistory h = train(m, train_set, val_set, tc);
        CHECK(*std::min_element(h.val_loss.begin(), h.val_loss.end()) < 1e-4);
        // The returned parameters are those of the best epoch.
        CHECK(evaluate_loss(m, val_set, Objective::mse, 7) ==
              doctest::Approx(h.val_loss[h.best_epoch - 1]).epsilon(1e-12));
    }
    SUBCASE("fixed seed gives identical runs") {
        ModelConfig mc;
        mc.family = Family::tsmixer;
        mc.L = 16;
        mc.T = 4;
        mc.hidden = 8;
        mc.dropout = 0.2;
        TrainConfig tc;
        tc.learning_rate = 0.005;
        tc.max_epochs = 4;
        tc.batch_size = 8;
        tc.seed = 77;
        Model a(mc, 5), b(mc, 5);
        const TrainHistory ha = train(a, train_set, val_set, tc);
        const TrainHistory hb = train(b, train_set, val_set, tc);
        std::ostringstream sa, sb;
        ha.write_csv(sa);
        hb.write_csv(sb);
        CHECK(sa.str() == sb.str());
        for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params().value(ParamId{i}) == b.params().value(ParamId{i}));
        tc.seed = 78;
        Model c(mc, 5);
        CHECK(train(c, train_set, val_set, tc).train_loss != ha.train_loss);
    }
    SUBCASE("duplicated samples do not change the loss") {
        ModelConfig mc;
        mc.family = Family::tsmixer;
        mc.L = 16;
        mc.T = 4;
        mc.norm = NormKind::layer;
        Model m(mc, 9);
        const std::vector<Window> one{train_set[3]};
        const std::vector<Window> many(5, train_set[3]);
        CHECK(evaluate_loss(m, one, Objective::mse, 8) == doctest::Approx(evaluate_loss(m, many, Objective::mse, 8)).epsilon(1e-14));
    }
    SUBCASE("non-finite loss aborts with its location") {
        std::vector<Window> bad = train_set;
        bad[0].target[0] = 1e300;
        ModelConfig mc;
        mc.family = Family::linear;
        mc.L = 16;
        mc.T = 4;
        Model m(mc, 1);
        TrainConfig tc;
        tc.batch_size = static_cast<std::size_t>(bad.size());
        try {
            train(m, bad, val_set, tc);
            FAIL("no throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::numeric);
            CHECK(std::string(e.what()).find("epoch 1 batch 1") != std::string::npos);
        }
    }
    SUBCASE("objective must match the head") {
        ModelConfig mc;
        mc.family = Family::linear;
        mc.L = 16;
        mc.T = 4;
        Model m(mc, 1);
        TrainConfig tc;
        tc.objective = Objective::nb_nll;
        CHECK_THROWS_AS(train(m, train_set, val_set, tc), Error);
        tc = TrainConfig{};
        tc.learning_rate = 0.0;
        CHECK_THROWS_AS(train(m, train_set, val_set, tc), Error);
    }
}
