#include "tsmixer/layers.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tsmixer/errors.hpp"

namespace tsmixer {

ParamId ParameterSet::add(std::string name, Tensor value, bool trainable) {
    if (find(name)) throw Error(ErrorKind::config, fmt::format("duplicate parameter name '{}'", name));
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
    return ParamId{entries_.size() - 1};
}

std::optional<ParamId> ParameterSet::find(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return ParamId{i};
    }
    return std::nullopt;
}

std::size_t ParameterSet::trainable_scalars() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        if (e.trainable) n += e.value.size();
    }
    return n;
}

Var Context::param(ParamId id) {
    auto& slot = bound_.at(id.index);
    if (!slot) {
        const Tensor& v = params_.value(id);
        slot = params_.trainable(id) ? tape_.leaf(v) : tape_.constant(v);
    }
    return *slot;
}

std::vector<Tensor> Context::parameter_gradients(const Gradients& grads) const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const ParamId id{i};
        if (bound_[i] && params_.trainable(id)) {
            out.push_back(grads.of(*bound_[i]));
        } else {
            out.push_back(Tensor::zeros(params_.value(id).shape()));
        }
    }
    return out;
}

std::string_view to_string(NormKind kind) noexcept {
    switch (kind) {
        case NormKind::none: return "none";
        case NormKind::batch2d: return "batch2d";
        case NormKind::batch2d_per_feature: return "batch2d_per_feature";
        case NormKind::layer: return "layer";
    }
    return "none";
}

NormKind parse_norm_kind(std::string_view text) {
    for (NormKind k : {NormKind::none, NormKind::batch2d, NormKind::batch2d_per_feature, NormKind::layer}) {
        if (to_string(k) == text) return k;
    }
    throw Error(ErrorKind::config, fmt::format("unknown norm kind '{}'", text));
}

std::string_view to_string(NormPlacement placement) noexcept {
    return placement == NormPlacement::pre ? "pre" : "post";
}

NormPlacement parse_norm_placement(std::string_view text) {
    if (text == "pre") return NormPlacement::pre;
    if (text == "post") return NormPlacement::post;
    throw Error(ErrorKind::config, fmt::format("unknown norm placement '{}'", text));
}

Var temporal_projection(const Var& x, const Var& weight, const Var& bias) {
    const std::size_t t = weight.shape()[0];
    return matmul(weight, x) + reshape(bias, Shape{t, 1});
}

Var row_linear(const Var& x, const Var& weight, const Var& bias) {
    return matmul(x, transpose(weight)) + bias;
}

Var norm2d(const Var& x_in, NormKind kind, const Var& scale, const Var& shift, RunningStats* stats, Mode mode) {
    if (kind == NormKind::none) return x_in;
    const bool unbatched = x_in.value().rank() == 2;
    if (!unbatched && x_in.value().rank() != 3) {
        throw Error(ErrorKind::rank, fmt::format("norm2d expects rank 2 or 3, got {}", x_in.shape().str()));
    }
    const Var x = unbatched ? reshape(x_in, Shape{1, x_in.shape()[0], x_in.shape()[1]}) : x_in;
    const std::size_t batch = x.shape()[0];
    Tape& tape = *x.tape();

    Var normalized;
    if (kind == NormKind::layer) {
        const Var centered = x - mean_axes(x, {1, 2});
        const Var var = mean_axes(square(centered), {1, 2});
        normalized = centered / sqrt(clamp_min(var, norm_epsilon));
    } else {
        const bool joint = kind == NormKind::batch2d;
        if (!stats) throw Error(ErrorKind::config, "batch normalization needs running statistics");
        if (mode == Mode::train) {
            if (batch < 2) {
                throw Error(ErrorKind::config,
                            "batch2d normalization in train mode needs batch size >= 2; use layer normalization "
                            "for single-sample batches");
            }
            const Var mu = joint ? mean_axes(x, {0, 1, 2}) : mean_axes(x, {0, 1});
            const Var centered = x - mu;
            const Var var = joint ? mean_axes(square(centered), {0, 1, 2}) : mean_axes(square(centered), {0, 1});
            normalized = centered / sqrt(clamp_min(var, norm_epsilon));

            const double count = static_cast<double>(x.value().size() / mu.value().size());
            const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
            const double m = stats->momentum;
            for (std::size_t i = 0; i < stats->mean.size(); ++i) {
                stats->mean[i] = (1.0 - m) * stats->mean[i] + m * mu.value()[i];
                stats->var[i] = (1.0 - m) * stats->var[i] + m * var.value()[i] * unbias;
            }
        } else {
            Tensor inv_std = stats->var;
            for (double& v : inv_std.data()) v = 1.0 / std::sqrt(std::max(v, norm_epsilon));
            normalized = (x - tape.constant(stats->mean)) * tape.constant(inv_std);
        }
    }
    Var out = normalized * scale + shift;
    return unbatched ? reshape(out, x_in.shape()) : out;
}

Var expand_time(const Var& s, std::size_t rows) {
    const Shape& shape = s.shape();
    if (shape.rank() == 3) return broadcast_to(s, Shape{shape[0], rows, shape[2]});
    if (shape.rank() == 2) return broadcast_to(s, Shape{rows, shape[1]});
    throw Error(ErrorKind::rank, fmt::format("cannot expand static features of shape {}", shape.str()));
}

Linear Linear::create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    Tensor w(Shape{out, in});
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = ps.add(name + ".weight", std::move(w));
    l.bias = ps.add(name + ".bias", Tensor::zeros(Shape{out}));
    return l;
}

Norm2d Norm2d::create(ParameterSet& ps, const std::string& name, NormKind kind, std::size_t rows,
                      std::size_t cols) {
    Norm2d n;
    n.kind = kind;
    if (kind == NormKind::none) return n;
    n.scale = ps.add(name + ".scale", Tensor::ones(Shape{rows, cols}));
    n.shift = ps.add(name + ".shift", Tensor::zeros(Shape{rows, cols}));
    if (kind == NormKind::batch2d || kind == NormKind::batch2d_per_feature) {
        const std::size_t width = kind == NormKind::batch2d ? 1 : cols;
        n.running_mean = ps.add(name + ".running_mean", Tensor::zeros(Shape{width}), false);
        n.running_var = ps.add(name + ".running_var", Tensor::ones(Shape{width}), false);
    }
    return n;
}

Var Norm2d::operator()(Context& ctx, const Var& x) const {
    if (kind == NormKind::none) return x;
    if (kind == NormKind::layer) {
        return norm2d(x, kind, ctx.param(scale), ctx.param(shift), nullptr, ctx.mode());
    }
    ParameterSet& ps = ctx.params();
    RunningStats stats{ps.value(running_mean), ps.value(running_var), momentum};
    Var out = norm2d(x, kind, ctx.param(scale), ctx.param(shift), &stats, ctx.mode());
    if (ctx.mode() == Mode::train) {
        ps.value(running_mean) = std::move(stats.mean);
        ps.value(running_var) = std::move(stats.var);
    }
    return out;
}

TimeMixing TimeMixing::create(ParameterSet& ps, const std::string& name, std::size_t length, std::size_t channels,
                              NormKind kind, NormPlacement placement, double dropout, Rng& rng) {
    TimeMixing tm;
    tm.proj = Linear::create(ps, name + ".proj", length, length, rng);
    tm.norm = Norm2d::create(ps, name + ".norm", kind, length, channels);
    tm.placement = placement;
    tm.dropout = dropout;
    return tm;
}

Var TimeMixing::operator()(Context& ctx, const Var& x) const {
    const Var input = placement == NormPlacement::pre ? norm(ctx, x) : x;
    const Var mixed = temporal_projection(input, ctx.param(proj.weight), ctx.param(proj.bias));
    const Var out = x + tsmixer::dropout(relu(mixed), this->dropout, ctx.mode(), ctx.rng());
    return placement == NormPlacement::post ? norm(ctx, out) : out;
}

FeatureMixing FeatureMixing::create(ParameterSet& ps, const std::string& name, std::size_t rows, std::size_t in,
                                    std::size_t hidden, std::size_t out, NormKind kind, NormPlacement placement,
                                    double dropout, Rng& rng) {
    FeatureMixing fm;
    fm.hidden = Linear::create(ps, name + ".fc1", in, hidden, rng);
    fm.output = Linear::create(ps, name + ".fc2", hidden, out, rng);
    if (in != out) fm.residual = Linear::create(ps, name + ".residual", in, out, rng);
    fm.norm = Norm2d::create(ps, name + ".norm", kind, rows, placement == NormPlacement::pre ? in : out);
    fm.placement = placement;
    fm.dropout = dropout;
    return fm;
}

Var FeatureMixing::operator()(Context& ctx, const Var& x) const {
    const std::size_t width = x.shape()[x.value().rank() - 1];
    if (width != hidden.in) {
        throw Error(ErrorKind::dimension, fmt::format("feature mixing expects {} features, got {}", hidden.in, width));
    }
    if (output.out != width && !residual) {
        throw Error(ErrorKind::config, fmt::format("feature mixing maps {} to {} features but has no residual "
                                                   "projection",
                                                   width, output.out));
    }
    const Var input = placement == NormPlacement::pre ? norm(ctx, x) : x;
    const Var u = tsmixer::dropout(relu(row_linear(input, ctx.param(hidden.weight), ctx.param(hidden.bias))), this->dropout,
                          ctx.mode(), ctx.rng());
    const Var v = tsmixer::dropout(row_linear(u, ctx.param(output.weight), ctx.param(output.bias)), this->dropout, ctx.mode(),
                          ctx.rng());
    const Var res = residual ? row_linear(x, ctx.param(residual->weight), ctx.param(residual->bias)) : x;
    const Var out = res + v;
    return placement == NormPlacement::post ? norm(ctx, out) : out;
}

ConditionalFeatureMixing ConditionalFeatureMixing::create(ParameterSet& ps, const std::string& name,
                                                          std::size_t rows, std::size_t in, std::size_t static_in,
                                                          std::size_t hidden, std::size_t out, NormKind kind,
                                                          NormPlacement placement, double dropout, Rng& rng) {
    ConditionalFeatureMixing cfm;
    if (static_in > 0) {
        cfm.static_branch = FeatureMixing::create(ps, name + ".static", rows, static_in, hidden, out, kind, placement,
                                                  dropout, rng);
        cfm.mixing = FeatureMixing::create(ps, name + ".mix", rows, in + out, hidden, out, kind, placement, dropout,
                                           rng);
    } else {
        cfm.mixing = FeatureMixing::create(ps, name + ".mix", rows, in, hidden, out, kind, placement, dropout, rng);
    }
    return cfm;
}

Var ConditionalFeatureMixing::operator()(Context& ctx, const Var& x, const std::optional<Var>& statics) const {
    if (!static_branch) return mixing(ctx, x);
    if (!statics) throw Error(ErrorKind::config, "conditional feature mixing needs static features");
    const std::size_t rows = x.shape()[x.value().rank() - 2];
    const Var v = (*static_branch)(ctx, expand_time(*statics, rows));
    return mixing(ctx, concat_last(x, v));
}

std::pair<Tensor, RevInState> rev_in_normalize(const Tensor& x) {
    if (x.rank() != 3) throw Error(ErrorKind::rank, fmt::format("rev-in expects B x L x C, got {}", x.shape().str()));
    const std::size_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
    RevInState state{Tensor(Shape{B, 1, C}), Tensor(Shape{B, 1, C})};
    Tensor out(x.shape());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            double mu = 0.0;
            for (std::size_t t = 0; t < L; ++t) mu += x(b, t, c);
            mu /= static_cast<double>(L);
            double ss = 0.0;
            for (std::size_t t = 0; t < L; ++t) ss += (x(b, t, c) - mu) * (x(b, t, c) - mu);
            const double sd = std::max(std::sqrt(ss / static_cast<double>(L)), rev_in_epsilon);
            state.mean(b, 0, c) = mu;
            state.stdev(b, 0, c) = sd;
            for (std::size_t t = 0; t < L; ++t) out(b, t, c) = (x(b, t, c) - mu) / sd;
        }
    }
    return {std::move(out), std::move(state)};
}

namespace {

void check_rev_in_state(const Shape& y, const RevInState& state) {
    const Shape& s = state.mean.shape();
    if (y.rank() != 3 || s.rank() != 3 || y[0] != s[0] || y[2] != s[2]) {
        throw Error(ErrorKind::state,
                    fmt::format("rev-in state {} does not match forecast shape {}", s.str(), y.str()));
    }
}

}  // namespace

Tensor rev_in_denormalize(const Tensor& y, const RevInState& state) {
    check_rev_in_state(y.shape(), state);
    Tensor out(y.shape());
    for (std::size_t b = 0; b < y.dim(0); ++b) {
        for (std::size_t t = 0; t < y.dim(1); ++t) {
            for (std::size_t c = 0; c < y.dim(2); ++c) {
                out(b, t, c) = y(b, t, c) * state.stdev(b, 0, c) + state.mean(b, 0, c);
            }
        }
    }
    return out;
}

Var rev_in_denormalize(const Var& y, const RevInState& state) {
    check_rev_in_state(y.shape(), state);
    Tape& tape = *y.tape();
    return y * tape.constant(state.stdev) + tape.constant(state.mean);
}

double grad_check_parameters(ParameterSet& params, Mode mode, std::uint64_t seed,
                             const std::function<Var(Context&)>& loss, double step) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        Rng rng(seed);
        Context ctx(tape, params, mode, rng);
        const Var l = loss(ctx);
        analytic = ctx.parameter_gradients(tape.backward(l));
    }
    auto evaluate = [&]() {
        Tape tape;
        Rng rng(seed);
        Context ctx(tape, params, mode, rng);
        const double v = loss(ctx).value().item();
        if (!std::isfinite(v)) throw Error(ErrorKind::numeric, "non-finite loss during gradient check");
        return v;
    };
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const ParamId id{p};
        if (!params.trainable(id)) continue;
        Tensor& value = params.value(id);
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = value[i];
            value[i] = orig + step;
            const double up = evaluate();
            value[i] = orig - step;
            const double down = evaluate();
            value[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[p][i];
            worst = std::max(worst, std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)}));
        }
    }
    return worst;
}

}  // namespace tsmixer
