#include "tsmixer/model.hpp"

#include <fmt/format.h>

#include "tsmixer/data.hpp"
#include "tsmixer/errors.hpp"

namespace tsmixer {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
    using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

std::size_t linear_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t norm_count(NormKind kind, std::size_t rows, std::size_t cols, bool include) {
    return (include && kind != NormKind::none) ? 2 * rows * cols : 0;
}

std::size_t tm_count(const ModelConfig& c, std::size_t rows, std::size_t width, bool include) {
    return linear_count(rows, rows) + norm_count(c.norm, rows, width, include);
}

std::size_t fm_count(const ModelConfig& c, std::size_t rows, std::size_t in, std::size_t out, bool include) {
    std::size_t n = linear_count(in, c.hidden) + linear_count(c.hidden, out);
    if (in != out) n += linear_count(in, out);
    return n + norm_count(c.norm, rows, c.placement == NormPlacement::pre ? in : out, include);
}

std::size_t cfm_count(const ModelConfig& c, std::size_t rows, std::size_t in, std::size_t out, bool include) {
    if (c.C_s == 0) return fm_count(c, rows, in, out, include);
    return fm_count(c, rows, c.C_s, out, include) + fm_count(c, rows, in + out, out, include);
}

void require(bool ok, std::string_view field, const std::string& detail) {
    if (!ok) throw Error(ErrorKind::config, fmt::format("model.{} {}", field, detail));
}

}  // namespace

std::string_view to_string(Family f) noexcept {
    switch (f) {
        case Family::linear: return "linear";
        case Family::tmix_only: return "tmix_only";
        case Family::tsmixer: return "tsmixer";
        case Family::tsmixer_ext: return "tsmixer_ext";
    }
    return "?";
}

Family parse_family(std::string_view text) {
    for (Family f : {Family::linear, Family::tmix_only, Family::tsmixer, Family::tsmixer_ext}) {
        if (text == to_string(f)) return f;
    }
    throw Error(ErrorKind::config,
                fmt::format("unknown model family '{}' (linear, tmix_only, tsmixer, tsmixer_ext)", text));
}

std::string_view to_string(HeadKind h) noexcept {
    return h == HeadKind::point ? "point" : "negative_binomial";
}

HeadKind parse_head(std::string_view text) {
    if (text == "point") return HeadKind::point;
    if (text == "negative_binomial") return HeadKind::negative_binomial;
    throw Error(ErrorKind::config, fmt::format("unknown head '{}' (point, negative_binomial)", text));
}

void ModelConfig::validate() const {
    require(L >= 1, "L", "must be at least 1");
    require(T >= 1, "T", "must be at least 1");
    require(C >= 1, "C", "must be at least 1");
    require(blocks >= 1, "blocks", "must be at least 1");
    require(hidden >= 1, "hidden", "must be at least 1");
    require(dropout >= 0.0 && dropout < 1.0, "dropout", fmt::format("must be in [0, 1), got {}", dropout));
    require(family == Family::tsmixer_ext || (C_z == 0 && C_s == 0), "family",
            "must be tsmixer_ext when future or static features are present");
    require(head == HeadKind::point || family == Family::tsmixer_ext, "head",
            "negative_binomial requires the tsmixer_ext family");
    require(!(rev_in && head == HeadKind::negative_binomial), "rev_in",
            "cannot be combined with the negative_binomial head (counts use mean scaling)");
}

Tensor forward_linear(const Tensor& x, const Tensor& A, const Tensor& b) {
    Tape tape;
    return temporal_projection(tape.constant(x), tape.constant(A), tape.constant(b)).value();
}

std::size_t param_count(const ModelConfig& c, bool include) {
    const std::size_t width = c.C + c.C_x;
    const std::size_t tp = linear_count(c.L, c.T);
    switch (c.family) {
        case Family::linear: return tp;
        case Family::tmix_only: return c.blocks * tm_count(c, c.L, width, include) + tp;
        case Family::tsmixer:
            return c.blocks * (tm_count(c, c.L, width, include) + fm_count(c, c.L, width, width, include)) + tp;
        case Family::tsmixer_ext: {
            const std::size_t H = c.hidden;
            std::size_t n = tp + cfm_count(c, c.T, width, H, include);
            if (c.C_z > 0) n += cfm_count(c, c.T, c.C_z, H, include);
            for (std::size_t k = 0; k < c.blocks; ++k) {
                const std::size_t in = (k == 0 && c.C_z > 0) ? 2 * H : H;
                n += tm_count(c, c.T, in, include) + cfm_count(c, c.T, in, H, include);
            }
            const std::size_t outputs = c.head == HeadKind::point ? c.C : 2 * c.C;
            return n + linear_count(H, outputs);
        }
    }
    return 0;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const ModelConfig& c = config_;
    Rng rng(seed, 1);
    const std::size_t width = c.C + c.C_x;
    switch (c.family) {
        case Family::linear: net_ = Linear::create(params_, "tp", c.L, c.T, rng); break;
        case Family::tmix_only: {
            TmixNet net;
            for (std::size_t k = 0; k < c.blocks; ++k) {
                net.blocks.push_back(TimeMixing::create(params_, fmt::format("blocks.{}.time", k), c.L, width, c.norm,
                                                        c.placement, c.dropout, rng));
            }
            net.tp = Linear::create(params_, "tp", c.L, c.T, rng);
            net_ = std::move(net);
            break;
        }
        case Family::tsmixer: {
            MixerNet net;
            for (std::size_t k = 0; k < c.blocks; ++k) {
                const std::string p = fmt::format("blocks.{}", k);
                net.blocks.push_back(MixerLayer{
                    TimeMixing::create(params_, p + ".time", c.L, width, c.norm, c.placement, c.dropout, rng),
                    FeatureMixing::create(params_, p + ".feature", c.L, width, c.hidden, width, c.norm, c.placement,
                                          c.dropout, rng)});
            }
            net.tp = Linear::create(params_, "tp", c.L, c.T, rng);
            net_ = std::move(net);
            break;
        }
        case Family::tsmixer_ext: {
            const std::size_t H = c.hidden;
            ExtNet net;
            net.tp = Linear::create(params_, "tp", c.L, c.T, rng);
            net.align_history = ConditionalFeatureMixing::create(params_, "align.history", c.T, width, c.C_s, H, H,
                                                                 c.norm, c.placement, c.dropout, rng);
            if (c.C_z > 0) {
                net.align_future = ConditionalFeatureMixing::create(params_, "align.future", c.T, c.C_z, c.C_s, H, H,
                                                                    c.norm, c.placement, c.dropout, rng);
            }
            for (std::size_t k = 0; k < c.blocks; ++k) {
                const std::string p = fmt::format("blocks.{}", k);
                const std::size_t in = (k == 0 && c.C_z > 0) ? 2 * H : H;
                net.blocks.push_back(ConditionalMixerLayer{
                    TimeMixing::create(params_, p + ".time", c.T, in, c.norm, c.placement, c.dropout, rng),
                    ConditionalFeatureMixing::create(params_, p + ".feature", c.T, in, c.C_s, H, H, c.norm,
                                                     c.placement, c.dropout, rng)});
            }
            net.head = Linear::create(params_, "head", H, c.head == HeadKind::point ? c.C : 2 * c.C, rng);
            net_ = std::move(net);
            break;
        }
    }
}

const Linear& Model::projection() const {
    return std::visit(Overloaded{[](const Linear& l) -> const Linear& { return l; },
                                 [](const auto& n) -> const Linear& { return n.tp; }},
                      net_);
}

void Model::check_input(const ModelInput& in) const {
    const ModelConfig& c = config_;
    const Shape& h = in.history.shape();
    if (h.rank() != 3 || h[1] != c.L || h[2] != c.C + c.C_x) {
        throw Error(ErrorKind::dimension, fmt::format("history must be Bx{}x{}, got {}", c.L, c.C + c.C_x, h.str()));
    }
    const std::size_t B = h[0];
    auto check_aux = [&](const std::optional<Tensor>& t, std::size_t rows, std::size_t cols, std::string_view what) {
        if (cols == 0) return;
        if (!t || t->rank() != 3 || t->dim(0) != B || t->dim(1) != rows || t->dim(2) != cols) {
            throw Error(ErrorKind::dimension,
                        fmt::format("{} features must be {}x{}x{}, got {}", what, B, rows, cols,
                                    t ? t->shape().str() : std::string("none")));
        }
    };
    check_aux(in.future, c.T, c.C_z, "future");
    check_aux(in.statics, 1, c.C_s, "static");
}

Forecast Model::forward(Context& ctx, const ModelInput& in) const {
    check_input(in);
    const ModelConfig& c = config_;

    // Local normalization of the target columns: rev-in for point forecasts, mean
    // scaling for count distributions.
    Tensor history = in.history;
    std::optional<RevInState> rev;
    std::optional<Tensor> scales;
    if (c.rev_in || c.head == HeadKind::negative_binomial) {
        const Tensor targets = c.C_x > 0 ? slice_last(history, 0, c.C) : history;
        Tensor normalized;
        if (c.rev_in) {
            auto [z, state] = rev_in_normalize(targets);
            normalized = std::move(z);
            rev = std::move(state);
        } else {
            auto [z, s] = mean_scale_local(targets);
            normalized = std::move(z);
            scales = std::move(s);
        }
        history = c.C_x > 0 ? concat_last(normalized, slice_last(history, c.C, c.C + c.C_x)) : normalized;
    }

    const Var x = ctx.input(std::move(history));
    auto tp = [&](const Linear& l, const Var& v) { return temporal_projection(v, ctx.param(l.weight), ctx.param(l.bias)); };
    auto targets_only = [&](const Var& v) { return c.C_x > 0 ? slice_last(v, 0, c.C) : v; };

    Forecast out;
    std::visit(Overloaded{
                   [&](const Linear& l) { out.mean = targets_only(tp(l, x)); },
                   [&](const TmixNet& n) {
                       Var h = x;
                       for (const auto& block : n.blocks) h = block(ctx, h);
                       out.mean = targets_only(tp(n.tp, h));
                   },
                   [&](const MixerNet& n) {
                       Var h = x;
                       for (const auto& block : n.blocks) h = block(ctx, h);
                       out.mean = targets_only(tp(n.tp, h));
                   },
                   [&](const ExtNet& n) {
                       std::optional<Var> s;
                       if (c.C_s > 0) s = ctx.input(*in.statics);
                       Var h = n.align_history(ctx, tp(n.tp, x), s);
                       if (n.align_future) h = concat_last(h, (*n.align_future)(ctx, ctx.input(*in.future), s));
                       for (const auto& block : n.blocks) h = block(ctx, h, s);
                       const Var raw = row_linear(h, ctx.param(n.head.weight), ctx.param(n.head.bias));
                       if (c.head == HeadKind::point) {
                           out.mean = raw;
                       } else {
                           out.mean = softplus(slice_last(raw, 0, c.C)) + nb_floor;
                           out.dispersion = softplus(slice_last(raw, c.C, 2 * c.C)) + nb_floor;
                       }
                   },
               },
               net_);

    if (rev) out.mean = rev_in_denormalize(out.mean, *rev);
    if (scales) out.mean = out.mean * ctx.input(std::move(*scales));
    return out;
}

Tensor Model::predict(const ModelInput& input) {
    Tape tape;
    Rng rng(0);
    Context ctx(tape, params_, Mode::eval, rng);
    return forward(ctx, input).mean.value();
}

std::pair<Tensor, Tensor> Model::predict_distribution(const ModelInput& input) {
    if (config_.head != HeadKind::negative_binomial) {
        throw Error(ErrorKind::config, "predict_distribution needs the negative_binomial head");
    }
    Tape tape;
    Rng rng(0);
    Context ctx(tape, params_, Mode::eval, rng);
    Forecast f = forward(ctx, input);
    return {f.mean.value(), f.dispersion->value()};
}

void Model::load_parameters(const ParameterSet& source) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const ParamId id{i};
        const auto found = source.find(params_.name(id));
        if (!found) {
            throw Error(ErrorKind::state, fmt::format("parameter '{}' missing from checkpoint", params_.name(id)));
        }
        const Tensor& v = source.value(*found);
        if (v.shape() != params_.value(id).shape()) {
            throw Error(ErrorKind::state, fmt::format("parameter '{}' has shape {} in checkpoint, model expects {}",
                                                      params_.name(id), v.shape().str(),
                                                      params_.value(id).shape().str()));
        }
        params_.value(id) = v;
    }
}

}  // namespace tsmixer
