#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "tsmixer/errors.hpp"
#include "tsmixer/layers.hpp"
#include "tsmixer/serialize.hpp"

using namespace tsmixer;
using tsmixer::testing::random_tensor;
using tsmixer::testing::reference_affine;

namespace {

// Loop oracle: per-sample standardization over the L x C plane, then affine.
Tensor reference_layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    const std::size_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
    Tensor out(x.shape());
    for (std::size_t b = 0; b < B; ++b) {
        double mu = 0.0;
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < C; ++c) mu += x(b, t, c);
        mu /= static_cast<double>(L * C);
        double var = 0.0;
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < C; ++c) var += (x(b, t, c) - mu) * (x(b, t, c) - mu);
        var /= static_cast<double>(L * C);
        const double sd = std::sqrt(std::max(var, 1e-8));
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < C; ++c) out(b, t, c) = (x(b, t, c) - mu) / sd * scale(t, c) + shift(t, c);
    }
    return out;
}

// Loop oracle for W x[:, c] + b on every column of every sample.
Tensor reference_tp(const Tensor& x, const Tensor& w, const Tensor& bias) {
    const std::size_t B = x.dim(0), L = x.dim(1), C = x.dim(2), T = w.dim(0);
    Tensor out(Shape{B, T, C});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            std::vector<double> col(L);
            for (std::size_t t = 0; t < L; ++t) col[t] = x(b, t, c);
            const auto y = reference_affine(w, bias, col);
            for (std::size_t t = 0; t < T; ++t) out(b, t, c) = y[t];
        }
    }
    return out;
}

// Loop oracle for a row MLP: returns res(x_j) + W3 relu(W2 x_j + b2) + b3 for each row.
Tensor reference_feature_mlp(const Tensor& x, const Tensor& w2, const Tensor& b2, const Tensor& w3, const Tensor& b3,
                             const Tensor* wh, const Tensor* bh) {
    const std::size_t B = x.dim(0), L = x.dim(1), C = x.dim(2), O = w3.dim(0);
    Tensor out(Shape{B, L, O});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < L; ++t) {
            std::vector<double> row(C);
            for (std::size_t c = 0; c < C; ++c) row[c] = x(b, t, c);
            auto u = reference_affine(w2, b2, row);
            for (double& v : u) v = std::max(v, 0.0);
            const auto v = reference_affine(w3, b3, u);
            const auto res = wh ? reference_affine(*wh, *bh, row) : row;
            for (std::size_t o = 0; o < O; ++o) out(b, t, o) = res[o] + v[o];
        }
    }
    return out;
}

Tensor run(ParameterSet& ps, Mode mode, const std::function<Var(Context&)>& f, std::uint64_t seed = 1) {
    Tape tape;
    Rng rng(seed);
    Context ctx(tape, ps, mode, rng);
    return f(ctx).value();
}

void zero_linear(ParameterSet& ps, const Linear& l) {
    ps.value(l.weight) = Tensor::zeros(ps.value(l.weight).shape());
    ps.value(l.bias) = Tensor::zeros(ps.value(l.bias).shape());
}

void randomize(ParameterSet& ps, Rng& rng) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!ps.trainable(ParamId{i})) continue;
        for (double& v : ps.value(ParamId{i}).data()) v = rng.uniform(-0.8, 0.8);
    }
}

Tensor permute_columns(const Tensor& x, const std::vector<std::size_t>& perm) {
    Tensor out(x.shape());
    for (std::size_t b = 0; b < x.dim(0); ++b)
        for (std::size_t t = 0; t < x.dim(1); ++t)
            for (std::size_t c = 0; c < x.dim(2); ++c) out(b, t, c) = x(b, t, perm[c]);
    return out;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
    Tensor out(x.shape());
    for (std::size_t b = 0; b < x.dim(0); ++b)
        for (std::size_t t = 0; t < x.dim(1); ++t)
            for (std::size_t c = 0; c < x.dim(2); ++c) out(b, t, c) = x(b, perm[t], c);
    return out;
}

}  // namespace

TEST_CASE("temporal_projection") {
    Tape tape;
    Rng rng(3);
    const Tensor x = random_tensor(Shape{4, 3}, rng);

    CHECK(temporal_projection(tape.constant(x), tape.constant(Tensor::identity(4)),
                              tape.constant(Tensor::zeros(Shape{4})))
              .value() == x);

    const Tensor constants = temporal_projection(tape.constant(x), tape.constant(Tensor::zeros(Shape{2, 4})),
                                                 tape.constant(Tensor::vector({1, 2})))
                                 .value();
    CHECK(constants == Tensor::matrix({{1, 1, 1}, {2, 2, 2}}));

    const Tensor xb = random_tensor(Shape{2, 6, 3}, rng);
    const Tensor w = random_tensor(Shape{5, 6}, rng);
    const Tensor b = random_tensor(Shape{5}, rng);
    const Tensor y = temporal_projection(tape.constant(xb), tape.constant(w), tape.constant(b)).value();
    CHECK(max_abs_diff(y, reference_tp(xb, w, b)) < 1e-12);

    CHECK_THROWS_AS(temporal_projection(tape.constant(xb), tape.constant(Tensor::zeros(Shape{5, 7})),
                                        tape.constant(b)),
                    Error);

    // Shared weights: permuting input columns permutes output columns.
    const std::vector<std::size_t> perm{2, 0, 1};
    const Tensor yp =
        temporal_projection(tape.constant(permute_columns(xb, perm)), tape.constant(w), tape.constant(b)).value();
    CHECK(max_abs_diff(yp, permute_columns(y, perm)) < 1e-15);
}

TEST_CASE("norm2d") {
    Rng rng(5);
    Tape tape;
    const Tensor ones = Tensor::ones(Shape{4, 3});
    const Var scale = tape.constant(ones);
    const Var shift = tape.constant(Tensor::zeros(Shape{4, 3}));

    SUBCASE("constant input under layer norm gives zeros") {
        const Tensor x(Shape{2, 4, 3}, 7.0);
        const Tensor y = norm2d(tape.constant(x), NormKind::layer, scale, shift, nullptr, Mode::train).value();
        CHECK(y == Tensor::zeros(x.shape()));
    }
    SUBCASE("moments after standardization") {
        const Tensor x = random_tensor(Shape{3, 4, 3}, rng, -2.0, 5.0);
        const Tensor y = norm2d(tape.constant(x), NormKind::layer, scale, shift, nullptr, Mode::train).value();
        for (std::size_t b = 0; b < 3; ++b) {
            const Tensor s = unstack(y, b);
            double m = 0, v = 0;
            for (double e : s.data()) m += e;
            m /= 12.0;
            for (double e : s.data()) v += (e - m) * (e - m);
            CHECK(std::abs(m) < 1e-10);
            CHECK(std::abs(v / 12.0 - 1.0) < 1e-10);
        }
        RunningStats stats{Tensor::zeros(Shape{1}), Tensor::ones(Shape{1}), 0.1};
        const Tensor z = norm2d(tape.constant(x), NormKind::batch2d, scale, shift, &stats, Mode::train).value();
        double m = 0, v = 0;
        for (double e : z.data()) m += e;
        m /= 36.0;
        for (double e : z.data()) v += (e - m) * (e - m);
        CHECK(std::abs(m) < 1e-10);
        CHECK(std::abs(v / 36.0 - 1.0) < 1e-10);

        RunningStats per_feature{Tensor::zeros(Shape{3}), Tensor::ones(Shape{3}), 0.1};
        const Tensor f =
            norm2d(tape.constant(x), NormKind::batch2d_per_feature, scale, shift, &per_feature, Mode::train).value();
        for (std::size_t c = 0; c < 3; ++c) {
            double fm = 0, fv = 0;
            for (std::size_t b = 0; b < 3; ++b)
                for (std::size_t t = 0; t < 4; ++t) fm += f(b, t, c);
            fm /= 12.0;
            for (std::size_t b = 0; b < 3; ++b)
                for (std::size_t t = 0; t < 4; ++t) fv += (f(b, t, c) - fm) * (f(b, t, c) - fm);
            CHECK(std::abs(fm) < 1e-10);
            CHECK(std::abs(fv / 12.0 - 1.0) < 1e-10);
        }
    }
    SUBCASE("affine shift moves the mean") {
        const Tensor x = random_tensor(Shape{2, 4, 3}, rng);
        const Tensor y = norm2d(tape.constant(x), NormKind::layer, scale, tape.constant(Tensor(Shape{4, 3}, 5.0)),
                                nullptr, Mode::train)
                             .value();
        const double m = std::accumulate(y.data().begin(), y.data().end(), 0.0) / static_cast<double>(y.size());
        CHECK(m == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("layer norm matches loop oracle with random affine") {
        const Tensor x = random_tensor(Shape{2, 4, 3}, rng);
        const Tensor sc = random_tensor(Shape{4, 3}, rng);
        const Tensor sh = random_tensor(Shape{4, 3}, rng);
        const Tensor y =
            norm2d(tape.constant(x), NormKind::layer, tape.constant(sc), tape.constant(sh), nullptr, Mode::eval)
                .value();
        CHECK(max_abs_diff(y, reference_layer_norm(x, sc, sh)) < 1e-12);
    }
    SUBCASE("batch2d needs two samples in train mode") {
        RunningStats stats{Tensor::zeros(Shape{1}), Tensor::ones(Shape{1}), 0.1};
        try {
            norm2d(tape.constant(Tensor(Shape{1, 4, 3})), NormKind::batch2d, scale, shift, &stats, Mode::train);
            FAIL("no throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::config);
            CHECK(std::string(e.what()).find("layer normalization") != std::string::npos);
        }
    }
    SUBCASE("running statistics update and eval path") {
        const Tensor x = random_tensor(Shape{4, 4, 3}, rng, 1.0, 3.0);
        RunningStats stats{Tensor::zeros(Shape{1}), Tensor::ones(Shape{1}), 0.1};
        norm2d(tape.constant(x), NormKind::batch2d, scale, shift, &stats, Mode::train);
        const double n = 48.0;
        const double mu = std::accumulate(x.data().begin(), x.data().end(), 0.0) / n;
        double var = 0;
        for (double v : x.data()) var += (v - mu) * (v - mu);
        var /= (n - 1.0);
        CHECK(stats.mean[0] == doctest::Approx(0.1 * mu).epsilon(1e-12));
        CHECK(stats.var[0] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
        const Tensor y = norm2d(tape.constant(x), NormKind::batch2d, scale, shift, &stats, Mode::eval).value();
        CHECK(y[5] == doctest::Approx((x[5] - stats.mean[0]) / std::sqrt(stats.var[0])).epsilon(1e-12));
    }
}

TEST_CASE("time_mixing") {
    Rng rng(7);
    const Tensor x = random_tensor(Shape{2, 5, 3}, rng);

    SUBCASE("zero weights in eval mode leave Norm(X)") {
        ParameterSet ps;
        const auto tm = TimeMixing::create(ps, "tm", 5, 3, NormKind::layer, NormPlacement::post, 0.3, rng);
        zero_linear(ps, tm.proj);
        const Tensor y = run(ps, Mode::eval, [&](Context& c) { return tm(c, c.input(x)); });
        CHECK(y == run(ps, Mode::eval, [&](Context& c) { return tm.norm(c, c.input(x)); }));
    }
    SUBCASE("zero weights, no dropout, identity norm is the identity") {
        for (auto placement : {NormPlacement::pre, NormPlacement::post}) {
            ParameterSet ps;
            const auto tm = TimeMixing::create(ps, "tm", 5, 3, NormKind::none, placement, 0.0, rng);
            zero_linear(ps, tm.proj);
            CHECK(run(ps, Mode::train, [&](Context& c) { return tm(c, c.input(x)); }) == x);
        }
    }
    SUBCASE("stepwise composition oracle") {
        ParameterSet ps;
        const auto tm = TimeMixing::create(ps, "tm", 5, 3, NormKind::layer, NormPlacement::post, 0.0, rng);
        randomize(ps, rng);
        const Tensor& w = ps.value(tm.proj.weight);
        const Tensor& b = ps.value(tm.proj.bias);
        Tensor inner = tsmixer::testing::reference_relu(reference_tp(x, w, b));
        for (std::size_t i = 0; i < inner.size(); ++i) inner[i] += x[i];
        const Tensor expected = reference_layer_norm(inner, ps.value(tm.norm.scale), ps.value(tm.norm.shift));
        CHECK(max_abs_diff(run(ps, Mode::train, [&](Context& c) { return tm(c, c.input(x)); }), expected) < 1e-12);

        // Pre-normalization ordering: X + relu(TP(Norm(X))).
        ParameterSet pre_ps;
        const auto pre = TimeMixing::create(pre_ps, "tm", 5, 3, NormKind::layer, NormPlacement::pre, 0.0, rng);
        randomize(pre_ps, rng);
        const Tensor normed = reference_layer_norm(x, pre_ps.value(pre.norm.scale), pre_ps.value(pre.norm.shift));
        Tensor pre_expected = tsmixer::testing::reference_relu(
            reference_tp(normed, pre_ps.value(pre.proj.weight), pre_ps.value(pre.proj.bias)));
        for (std::size_t i = 0; i < pre_expected.size(); ++i) pre_expected[i] += x[i];
        CHECK(max_abs_diff(run(pre_ps, Mode::train, [&](Context& c) { return pre(c, c.input(x)); }), pre_expected) <
              1e-12);
    }
}

TEST_CASE("feature_mixing") {
    Rng rng(9);
    const Tensor x = random_tensor(Shape{2, 4, 3}, rng);

    SUBCASE("zero weights with identity norm are the identity") {
        ParameterSet ps;
        const auto fm = FeatureMixing::create(ps, "fm", 4, 3, 6, 3, NormKind::none, NormPlacement::pre, 0.5, rng);
        zero_linear(ps, fm.hidden);
        zero_linear(ps, fm.output);
        CHECK(run(ps, Mode::eval, [&](Context& c) { return fm(c, c.input(x)); }) == x);
    }
    SUBCASE("single row equals one application of the row MLP") {
        ParameterSet ps;
        const auto fm = FeatureMixing::create(ps, "fm", 1, 3, 5, 3, NormKind::none, NormPlacement::pre, 0.0, rng);
        randomize(ps, rng);
        const Tensor row = random_tensor(Shape{1, 1, 3}, rng);
        const Tensor expected = reference_feature_mlp(row, ps.value(fm.hidden.weight), ps.value(fm.hidden.bias),
                                                      ps.value(fm.output.weight), ps.value(fm.output.bias), nullptr,
                                                      nullptr);
        CHECK(max_abs_diff(run(ps, Mode::train, [&](Context& c) { return fm(c, c.input(row)); }), expected) < 1e-12);
    }
    SUBCASE("size change uses the projected residual") {
        ParameterSet ps;
        const auto fm = FeatureMixing::create(ps, "fm", 4, 3, 5, 2, NormKind::layer, NormPlacement::post, 0.0, rng);
        REQUIRE(fm.residual.has_value());
        randomize(ps, rng);
        const Tensor wh = ps.value(fm.residual->weight), bh = ps.value(fm.residual->bias);
        const Tensor pre_norm = reference_feature_mlp(x, ps.value(fm.hidden.weight), ps.value(fm.hidden.bias),
                                                      ps.value(fm.output.weight), ps.value(fm.output.bias), &wh, &bh);
        const Tensor expected = reference_layer_norm(pre_norm, ps.value(fm.norm.scale), ps.value(fm.norm.shift));
        CHECK(max_abs_diff(run(ps, Mode::train, [&](Context& c) { return fm(c, c.input(x)); }), expected) < 1e-12);
    }
    SUBCASE("missing residual projection is a configuration error") {
        ParameterSet ps;
        auto fm = FeatureMixing::create(ps, "fm", 4, 3, 5, 2, NormKind::none, NormPlacement::pre, 0.0, rng);
        fm.residual.reset();
        try {
            run(ps, Mode::eval, [&](Context& c) { return fm(c, c.input(x)); });
            FAIL("no throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::config);
        }
    }
    SUBCASE("commutes with row permutations") {
        for (auto kind : {NormKind::none, NormKind::layer}) {
            ParameterSet ps;
            const auto fm = FeatureMixing::create(ps, "fm", 4, 3, 5, 3, kind, NormPlacement::post, 0.0, rng);
            for (std::size_t i = 0; i < ps.size(); ++i) {
                const std::string& n = ps.name(ParamId{i});
                if (n.find("norm") == std::string::npos) {
                    for (double& v : ps.value(ParamId{i}).data()) v = rng.uniform(-1, 1);
                }
            }
            const std::vector<std::size_t> perm{3, 1, 0, 2};
            const Tensor y = run(ps, Mode::train, [&](Context& c) { return fm(c, c.input(x)); });
            const Tensor yp = run(ps, Mode::train, [&](Context& c) { return fm(c, c.input(permute_rows(x, perm))); });
            CHECK(max_abs_diff(yp, permute_rows(y, perm)) < 1e-12);
        }
    }
}

TEST_CASE("conditional_feature_mixing") {
    Rng rng(13);
    const Tensor x = random_tensor(Shape{2, 4, 3}, rng);

    SUBCASE("no static features reduces to feature mixing") {
        ParameterSet ps;
        const auto cfm = ConditionalFeatureMixing::create(ps, "cfm", 4, 3, 0, 5, 6, NormKind::layer,
                                                          NormPlacement::post, 0.0, rng);
        CHECK_FALSE(cfm.static_branch.has_value());
        CHECK(run(ps, Mode::eval, [&](Context& c) { return cfm(c, c.input(x), std::nullopt); }) ==
              run(ps, Mode::eval, [&](Context& c) { return cfm.mixing(c, c.input(x)); }));
    }
    SUBCASE("zero statics with zero static branch equal mixing of a padded input") {
        ParameterSet ps;
        const auto cfm = ConditionalFeatureMixing::create(ps, "cfm", 4, 3, 2, 5, 6, NormKind::none,
                                                          NormPlacement::pre, 0.0, rng);
        randomize(ps, rng);
        const FeatureMixing& sb = *cfm.static_branch;
        zero_linear(ps, sb.hidden);
        zero_linear(ps, sb.output);
        zero_linear(ps, *sb.residual);
        const Tensor s = Tensor::zeros(Shape{2, 1, 2});
        const Tensor v = run(ps, Mode::eval, [&](Context& c) { return sb(c, expand_time(c.input(s), 4)); });
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t t = 1; t < 4; ++t)
                for (std::size_t h = 0; h < 6; ++h) CHECK(v(b, t, h) == v(b, 0, h));
        const Tensor padded = concat_last(x, Tensor::zeros(Shape{2, 4, 6}));
        CHECK(run(ps, Mode::eval, [&](Context& c) { return cfm(c, c.input(x), c.input(s)); }) ==
              run(ps, Mode::eval, [&](Context& c) { return cfm.mixing(c, c.input(padded)); }));
    }
    SUBCASE("static conditioning is live") {
        ParameterSet ps;
        const auto cfm = ConditionalFeatureMixing::create(ps, "cfm", 4, 3, 2, 5, 6, NormKind::layer,
                                                          NormPlacement::post, 0.0, rng);
        randomize(ps, rng);
        const Tensor s1 = random_tensor(Shape{2, 1, 2}, rng);
        const Tensor s2 = random_tensor(Shape{2, 1, 2}, rng);
        const Tensor y1 = run(ps, Mode::eval, [&](Context& c) { return cfm(c, c.input(x), c.input(s1)); });
        const Tensor y2 = run(ps, Mode::eval, [&](Context& c) { return cfm(c, c.input(x), c.input(s2)); });
        CHECK(max_abs_diff(y1, y2) > 1e-6);
    }
}

TEST_CASE("mixer layers") {
    Rng rng(17);
    const Tensor x = random_tensor(Shape{2, 5, 3}, rng);
    ParameterSet ps;
    MixerLayer mix{TimeMixing::create(ps, "tm", 5, 3, NormKind::layer, NormPlacement::pre, 0.0, rng),
                   FeatureMixing::create(ps, "fm", 5, 3, 4, 3, NormKind::layer, NormPlacement::pre, 0.0, rng)};

    SUBCASE("equals manual chaining") {
        randomize(ps, rng);
        const Tensor chained = run(ps, Mode::train, [&](Context& c) { return mix.feature(c, mix.time(c, c.input(x))); });
        CHECK(run(ps, Mode::train, [&](Context& c) { return mix(c, c.input(x)); }) == chained);
        const ConditionalMixerLayer cmix{mix.time, ConditionalFeatureMixing{std::nullopt, mix.feature}};
        CHECK(run(ps, Mode::train, [&](Context& c) { return cmix(c, c.input(x), std::nullopt); }) == chained);
    }
    SUBCASE("zero weights with identity norms pass X through") {
        ParameterSet zps;
        MixerLayer z{TimeMixing::create(zps, "tm", 5, 3, NormKind::none, NormPlacement::pre, 0.2, rng),
                     FeatureMixing::create(zps, "fm", 5, 3, 4, 3, NormKind::none, NormPlacement::pre, 0.2, rng)};
        zero_linear(zps, z.time.proj);
        zero_linear(zps, z.feature.hidden);
        zero_linear(zps, z.feature.output);
        CHECK(run(zps, Mode::eval, [&](Context& c) { return z(c, c.input(x)); }) == x);
    }
}

TEST_CASE("every layer passes the gradient check") {
    Rng rng(19);
    const Tensor x = random_tensor(Shape{3, 5, 3}, rng);
    const Tensor s = random_tensor(Shape{3, 1, 2}, rng);
    auto loss = [](Context& c, const Var& y) {
        Tensor w(y.shape());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.7 * static_cast<double>(i));
        return sum(y * c.input(std::move(w)));
    };

    for (NormKind kind : {NormKind::none, NormKind::batch2d, NormKind::batch2d_per_feature, NormKind::layer}) {
        for (NormPlacement placement : {NormPlacement::pre, NormPlacement::post}) {
            CAPTURE(to_string(kind));
            CAPTURE(to_string(placement));
            ParameterSet ps;
            const auto tm = TimeMixing::create(ps, "tm", 5, 3, kind, placement, 0.2, rng);
            const auto fm = FeatureMixing::create(ps, "fm", 5, 3, 6, 4, kind, placement, 0.2, rng);
            const auto cfm = ConditionalFeatureMixing::create(ps, "cfm", 5, 4, 2, 6, 4, kind, placement, 0.2, rng);
            randomize(ps, rng);
            for (Mode mode : {Mode::train, Mode::eval}) {
                CHECK(grad_check_parameters(ps, mode, 99, [&](Context& c) { return loss(c, tm(c, c.input(x))); }) <
                      1e-4);
                CHECK(grad_check_parameters(ps, mode, 99, [&](Context& c) { return loss(c, fm(c, c.input(x))); }) <
                      1e-4);
                CHECK(grad_check_parameters(ps, mode, 99, [&](Context& c) {
                          return loss(c, cfm(c, fm(c, tm(c, c.input(x))), c.input(s)));
                      }) < 1e-4);
            }
        }
    }
}

TEST_CASE("rev_in") {
    Rng rng(23);
    const Tensor x = random_tensor(Shape{3, 8, 2}, rng, -4.0, 9.0);

    SUBCASE("roundtrip") {
        const auto [z, state] = rev_in_normalize(x);
        CHECK(max_abs_diff(rev_in_denormalize(z, state), x) < 1e-12);
        Tape t;
        CHECK(max_abs_diff(rev_in_denormalize(t.constant(z), state).value(), x) < 1e-12);
    }
    SUBCASE("constant series") {
        const Tensor c(Shape{1, 6, 1}, 4.0);
        const auto [z, state] = rev_in_normalize(c);
        CHECK(z == Tensor::zeros(c.shape()));
        CHECK(state.stdev[0] >= rev_in_epsilon);
        CHECK(rev_in_denormalize(z, state) == c);
    }
    SUBCASE("affine-shifted copy normalizes identically") {
        Tensor shifted = x;
        for (double& v : shifted.data()) v = 3.5 * v - 12.0;
        CHECK(max_abs_diff(rev_in_normalize(shifted).first, rev_in_normalize(x).first) < 1e-12);
    }
    SUBCASE("state mismatch") {
        const auto [z, state] = rev_in_normalize(x);
        try {
            rev_in_denormalize(Tensor(Shape{2, 4, 2}), state);
            FAIL("no throw");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::state);
        }
    }
}

TEST_CASE("parameter container roundtrip") {
    Rng rng(29);
    for (int trial = 0; trial < 5; ++trial) {
        ParameterSet ps;
        const auto n = static_cast<std::size_t>(rng.integer(1, 6));
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::size_t> dims(static_cast<std::size_t>(rng.integer(0, 3)));
            for (auto& d : dims) d = static_cast<std::size_t>(rng.integer(1, 4));
            ps.add("p" + std::to_string(i), random_tensor(Shape(std::span<const std::size_t>(dims)), rng, -1e6, 1e6), rng.uniform() < 0.5);
        }
        std::stringstream buf;
        write_parameters(buf, ps, "tsmixer test");
        const ParameterFile back = read_parameters(buf);
        CHECK(back.provenance == "tsmixer test");
        REQUIRE(back.params.size() == ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i) {
            CHECK(back.params.name(ParamId{i}) == ps.name(ParamId{i}));
            CHECK(back.params.value(ParamId{i}) == ps.value(ParamId{i}));
            CHECK(back.params.trainable(ParamId{i}) == ps.trainable(ParamId{i}));
        }
    }
    std::stringstream junk("not a container");
    CHECK_THROWS_AS(read_parameters(junk), Error);
}
