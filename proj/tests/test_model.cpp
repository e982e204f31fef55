#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "tsmixer/errors.hpp"
#include "tsmixer/model.hpp"

using namespace tsmixer;
using tsmixer::testing::random_tensor;
using tsmixer::testing::reference_affine;

namespace {

ModelConfig small_config(Family family) {
    ModelConfig c;
    c.family = family;
    c.L = 6;
    c.T = 3;
    c.C = 2;
    c.hidden = 5;
    c.blocks = 2;
    c.dropout = 0.0;
    c.norm = NormKind::layer;
    return c;
}

ModelInput random_input(const ModelConfig& c, std::size_t B, Rng& rng) {
    ModelInput in;
    in.history = random_tensor(Shape{B, c.L, c.C + c.C_x}, rng);
    if (c.C_z > 0) in.future = random_tensor(Shape{B, c.T, c.C_z}, rng);
    if (c.C_s > 0) in.statics = random_tensor(Shape{B, 1, c.C_s}, rng);
    return in;
}

bool is_mixing_weight(const std::string& name) {
    return name.find(".time.proj.") != std::string::npos || name.find(".fc1.") != std::string::npos ||
           name.find(".fc2.") != std::string::npos;
}

void zero_mixing(Model& m) {
    for (std::size_t i = 0; i < m.params().size(); ++i) {
        const ParamId id{i};
        if (is_mixing_weight(m.params().name(id))) {
            m.params().value(id) = Tensor::zeros(m.params().value(id).shape());
        }
    }
}

void randomize(Model& m, Rng& rng, double scale = 0.5) {
    for (std::size_t i = 0; i < m.params().size(); ++i) {
        if (!m.params().trainable(ParamId{i})) continue;
        for (double& v : m.params().value(ParamId{i}).data()) v = rng.uniform(-scale, scale);
    }
}

const Tensor& value(const Model& m, const std::string& name) { return m.params().value(*m.params().find(name)); }

// Row-wise affine y_j = W x_j + b on a B x R x I tensor, by loops.
Tensor rows_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out(Shape{x.dim(0), x.dim(1), w.dim(0)});
    for (std::size_t s = 0; s < x.dim(0); ++s) {
        for (std::size_t r = 0; r < x.dim(1); ++r) {
            std::vector<double> row(x.dim(2));
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = x(s, r, c);
            const auto y = reference_affine(w, b, row);
            for (std::size_t o = 0; o < y.size(); ++o) out(s, r, o) = y[o];
        }
    }
    return out;
}

// Per-column temporal projection by loops.
Tensor columns_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out(Shape{x.dim(0), w.dim(0), x.dim(2)});
    for (std::size_t s = 0; s < x.dim(0); ++s) {
        for (std::size_t c = 0; c < x.dim(2); ++c) {
            std::vector<double> col(x.dim(1));
            for (std::size_t t = 0; t < col.size(); ++t) col[t] = x(s, t, c);
            const auto y = reference_affine(w, b, col);
            for (std::size_t t = 0; t < y.size(); ++t) out(s, t, c) = y[t];
        }
    }
    return out;
}

Tensor permute_columns(const Tensor& x, const std::vector<std::size_t>& perm) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t c = i % x.dim(2);
        out[i] = x[i - c + perm[c]];
    }
    return out;
}

}  // namespace

TEST_CASE("forward_linear") {
    Rng rng(61);
    const Tensor x = random_tensor(Shape{2, 4, 3}, rng);
    const Tensor b = Tensor::vector({0.5, -1.0});
    const Tensor y = forward_linear(x, Tensor::zeros(Shape{2, 4}), b);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t c = 0; c < 3; ++c) CHECK(y(s, t, c) == b[t]);
    CHECK(forward_linear(x, Tensor::identity(4), Tensor::zeros(Shape{4})) == x);
    const Tensor A = random_tensor(Shape{5, 4}, rng);
    const Tensor bb = random_tensor(Shape{5}, rng);
    CHECK(max_abs_diff(forward_linear(x, A, bb), columns_affine(x, A, bb)) < 1e-12);
    CHECK_THROWS_AS(forward_linear(x, Tensor::zeros(Shape{5, 3}), bb), Error);
}

TEST_CASE("configuration validation names the field") {
    auto message = [](ModelConfig c) {
        try {
            c.validate();
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::config);
            return std::string(e.what());
        }
        return std::string();
    };
    ModelConfig c;
    c.dropout = 1.2;
    CHECK(message(c).find("model.dropout") != std::string::npos);
    c = ModelConfig{};
    c.C_z = 2;
    CHECK(message(c).find("model.family") != std::string::npos);
    c = ModelConfig{};
    c.family = Family::tsmixer_ext;
    c.head = HeadKind::negative_binomial;
    c.rev_in = true;
    CHECK(message(c).find("model.rev_in") != std::string::npos);
    c = ModelConfig{};
    c.blocks = 0;
    CHECK(message(c).find("model.blocks") != std::string::npos);
    CHECK(message(ModelConfig{}).empty());
}

TEST_CASE("param_count matches the instantiated parameters") {
    Rng rng(67);
    CHECK(param_count(small_config(Family::linear)) == 6 * 3 + 3);
    for (int trial = 0; trial < 60; ++trial) {
        ModelConfig c;
        c.family = static_cast<Family>(trial % 4);
        c.L = static_cast<std::size_t>(rng.integer(1, 9));
        c.T = static_cast<std::size_t>(rng.integer(1, 5));
        c.C = static_cast<std::size_t>(rng.integer(1, 4));
        c.C_x = static_cast<std::size_t>(rng.integer(0, 2));
        c.hidden = static_cast<std::size_t>(rng.integer(1, 6));
        c.blocks = static_cast<std::size_t>(rng.integer(1, 3));
        c.norm = static_cast<NormKind>(rng.integer(0, 3));
        c.placement = rng.uniform() < 0.5 ? NormPlacement::pre : NormPlacement::post;
        if (c.family == Family::tsmixer_ext) {
            c.C_z = static_cast<std::size_t>(rng.integer(0, 2));
            c.C_s = static_cast<std::size_t>(rng.integer(0, 2));
            c.head = rng.uniform() < 0.5 ? HeadKind::point : HeadKind::negative_binomial;
        }
        CAPTURE(trial);
        const Model m(c, 1);
        CHECK(param_count(c) == m.params().trainable_scalars());

        std::size_t affine = 0;
        for (std::size_t i = 0; i < m.params().size(); ++i) {
            const std::string& n = m.params().name(ParamId{i});
            if (n.ends_with(".norm.scale") || n.ends_with(".norm.shift")) affine += m.params().value(ParamId{i}).size();
        }
        CHECK(param_count(c, false) == m.params().trainable_scalars() - affine);
    }
}

TEST_CASE("parameter growth is additive in L and C") {
    ModelConfig c = small_config(Family::tsmixer);
    c.hidden = 16;
    c.blocks = 2;
    auto count = [&](std::size_t L, std::size_t C) {
        ModelConfig k = c;
        k.L = L;
        k.C = C;
        return param_count(k, false);
    };
    for (std::size_t L : {32u, 64u}) {
        const std::size_t d4 = count(2 * L, 4) - count(L, 4);
        CHECK(count(2 * L, 8) - count(L, 8) == d4);
        CHECK(count(2 * L, 16) - count(L, 16) == d4);
    }
    for (std::size_t C : {4u, 8u, 16u}) CHECK(count(32, 2 * C) - count(32, C) == count(64, 2 * C) - count(64, C));
    // Normalization affine terms scale with L x C, so the exclusion matters.
    CHECK(param_count(ModelConfig{}, true) > param_count(ModelConfig{}, false));
}

TEST_CASE("residual collapse to the temporal projection") {
    Rng rng(71);
    for (Family family : {Family::linear, Family::tmix_only, Family::tsmixer}) {
        ModelConfig c = small_config(family);
        c.norm = NormKind::none;
        c.dropout = 0.3;
        Model m(c, 3);
        randomize(m, rng);
        zero_mixing(m);
        const ModelInput in = random_input(c, 3, rng);
        const Tensor expected = columns_affine(in.history, value(m, "tp.weight"), value(m, "tp.bias"));
        CHECK(max_abs_diff(m.predict(in), expected) < 1e-14);
    }

    ModelConfig c = small_config(Family::tsmixer_ext);
    c.norm = NormKind::none;
    Model m(c, 5);
    randomize(m, rng);
    zero_mixing(m);
    const ModelInput in = random_input(c, 2, rng);
    Tensor h = columns_affine(in.history, value(m, "tp.weight"), value(m, "tp.bias"));
    h = rows_affine(h, value(m, "align.history.mix.residual.weight"), value(m, "align.history.mix.residual.bias"));
    const Tensor expected = rows_affine(h, value(m, "head.weight"), value(m, "head.bias"));
    CHECK(max_abs_diff(m.predict(in), expected) < 1e-14);
}

TEST_CASE("time-mixing-only models are variate-permutation equivariant") {
    Rng rng(73);
    const std::vector<std::size_t> perm{2, 0, 1};
    for (NormKind kind : {NormKind::none, NormKind::batch2d, NormKind::layer}) {
        ModelConfig c = small_config(Family::tmix_only);
        c.C = 3;
        c.norm = kind;
        Model m(c, 7);
        for (std::size_t i = 0; i < m.params().size(); ++i) {
            const std::string& n = m.params().name(ParamId{i});
            if (n.find("norm") == std::string::npos) {
                for (double& v : m.params().value(ParamId{i}).data()) v = rng.uniform(-0.5, 0.5);
            }
        }
        ModelInput in = random_input(c, 3, rng);
        const Tensor y = m.predict(in);
        in.history = permute_columns(in.history, perm);
        CHECK(max_abs_diff(m.predict(in), permute_columns(y, perm)) < 1e-12);
    }

    // Feature mixing breaks the symmetry.
    ModelConfig c = small_config(Family::tsmixer);
    c.C = 3;
    Model m(c, 7);
    randomize(m, rng);
    ModelInput in = random_input(c, 1, rng);
    const Tensor y = m.predict(in);
    in.history = permute_columns(in.history, perm);
    CHECK(max_abs_diff(m.predict(in), permute_columns(y, perm)) > 1e-6);
}

TEST_CASE("every family passes the gradient check") {
    Rng rng(79);
    std::vector<ModelConfig> configs;
    for (Family f : {Family::linear, Family::tmix_only, Family::tsmixer}) configs.push_back(small_config(f));
    for (NormKind kind : {NormKind::batch2d, NormKind::batch2d_per_feature}) {
        ModelConfig c = small_config(Family::tsmixer);
        c.norm = kind;
        c.dropout = 0.2;
        configs.push_back(c);
    }
    ModelConfig rev = small_config(Family::tsmixer);
    rev.rev_in = true;
    rev.C_x = 1;
    configs.push_back(rev);
    ModelConfig ext = small_config(Family::tsmixer_ext);
    ext.C_x = 1;
    ext.C_z = 2;
    ext.C_s = 2;
    ext.placement = NormPlacement::post;
    ext.dropout = 0.1;
    configs.push_back(ext);
    ModelConfig nb = ext;
    nb.head = HeadKind::negative_binomial;
    configs.push_back(nb);

    for (const ModelConfig& c : configs) {
        CAPTURE(to_string(c.family));
        CAPTURE(to_string(c.norm));
        Model m(c, 11);
        ModelInput in = random_input(c, 3, rng);
        if (c.head == HeadKind::negative_binomial) {
            for (double& v : in.history.data()) v = std::abs(v) + 0.5;
        }
        auto loss = [&](Context& ctx) {
            const Forecast f = m.forward(ctx, in);
            Tensor w(f.mean.shape());
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.3 * static_cast<double>(i) + 0.2);
            Var total = sum(f.mean * ctx.input(w));
            if (f.dispersion) total = total + sum(*f.dispersion * ctx.input(w));
            return total;
        };
        for (Mode mode : {Mode::train, Mode::eval}) CHECK(grad_check_parameters(m.params(), mode, 5, loss) < 1e-4);
    }
}

TEST_CASE("rev-in makes forecasts shift-equivariant") {
    Rng rng(83);
    ModelConfig c = small_config(Family::tsmixer);
    c.rev_in = true;
    Model m(c, 13);
    randomize(m, rng);
    ModelInput in = random_input(c, 2, rng);
    const Tensor y = m.predict(in);
    const std::vector<double> shift{4.5, -7.25};
    for (std::size_t i = 0; i < in.history.size(); ++i) in.history[i] += shift[i % 2];
    Tensor expected = y;
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += shift[i % 2];
    CHECK(max_abs_diff(m.predict(in), expected) < 1e-10);
}

TEST_CASE("negative binomial head") {
    Rng rng(89);
    ModelConfig c = small_config(Family::tsmixer_ext);
    c.head = HeadKind::negative_binomial;
    Model m(c, 17);
    randomize(m, rng);
    ModelInput in = random_input(c, 2, rng);
    for (double& v : in.history.data()) v = std::floor(std::abs(v) * 10.0) + 1.0;

    SUBCASE("parameters stay positive for extreme pre-activations") {
        for (double w : {-1e3, 1e3}) {
            m.params().value(*m.params().find("head.weight")) = Tensor(value(m, "head.weight").shape(), w);
            const auto [mu, alpha] = m.predict_distribution(in);
            for (double v : mu.data()) CHECK(v > 0.0);
            for (double v : alpha.data()) CHECK(v > 0.0);
        }
    }
    SUBCASE("mean scaling makes the mean scale with the counts") {
        const auto [mu, alpha] = m.predict_distribution(in);
        ModelInput scaled = in;
        for (double& v : scaled.history.data()) v *= 3.0;
        const auto [mu3, alpha3] = m.predict_distribution(scaled);
        for (std::size_t i = 0; i < mu.size(); ++i) CHECK(mu3[i] == doctest::Approx(3.0 * mu[i]).epsilon(1e-12));
        CHECK(max_abs_diff(alpha3, alpha) < 1e-12);
    }
}

TEST_CASE("future covariates steer the forecast") {
    Rng rng(97);
    ModelConfig c = small_config(Family::tsmixer_ext);
    c.C_z = 1;
    c.C_s = 1;
    Model m(c, 19);
    randomize(m, rng, 0.8);
    ModelInput in = random_input(c, 1, rng);
    const Tensor y = m.predict(in);
    in.future->data()[1] += 2.0;
    const Tensor y2 = m.predict(in);
    double changed = 0.0;
    for (std::size_t k = 0; k < c.C; ++k) changed = std::max(changed, std::abs(y2(0, 1, k) - y(0, 1, k)));
    CHECK(changed > 1e-6);

    in.statics->data()[0] += 1.0;
    CHECK(max_abs_diff(m.predict(in), y2) > 1e-6);
}

TEST_CASE("input shapes are checked") {
    ModelConfig c = small_config(Family::tsmixer_ext);
    c.C_z = 1;
    Model m(c, 1);
    Rng rng(1);
    ModelInput in = random_input(c, 1, rng);
    in.future.reset();
    CHECK_THROWS_AS(m.predict(in), Error);
    in = random_input(c, 1, rng);
    in.history = Tensor(Shape{1, c.L + 1, c.C});
    CHECK_THROWS_AS(m.predict(in), Error);
}

TEST_CASE("load_parameters") {
    ModelConfig c = small_config(Family::tsmixer);
    Model a(c, 1), b(c, 2);
    Rng rng(3);
    const ModelInput in = random_input(c, 2, rng);
    CHECK(max_abs_diff(a.predict(in), b.predict(in)) > 0.0);
    b.load_parameters(a.params());
    CHECK(a.predict(in) == b.predict(in));

    ModelConfig wider = c;
    wider.hidden = 7;
    Model w(wider, 1);
    try {
        w.load_parameters(a.params());
        FAIL("no throw");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::state);
    }
    Model lin(small_config(Family::linear), 1);
    CHECK_THROWS_AS(a.load_parameters(lin.params()), Error);
}
