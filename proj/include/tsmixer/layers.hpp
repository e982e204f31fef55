#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsmixer/autodiff.hpp"
#include "tsmixer/rng.hpp"
#include "tsmixer/tensor.hpp"

namespace tsmixer {

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

struct ParamId {
    std::size_t index = 0;
};

/// Ordered collection of named tensors owned by one model. Trainable entries
/// are optimized; the rest are buffers such as normalization running statistics.
class ParameterSet {
public:
    ParamId add(std::string name, Tensor value, bool trainable = true);

    std::size_t size() const noexcept { return entries_.size(); }
    const std::string& name(ParamId id) const { return entries_.at(id.index).name; }
    Tensor& value(ParamId id) { return entries_.at(id.index).value; }
    const Tensor& value(ParamId id) const { return entries_.at(id.index).value; }
    bool trainable(ParamId id) const { return entries_.at(id.index).trainable; }
    std::optional<ParamId> find(std::string_view name) const;

    /// Total number of trainable scalars.
    std::size_t trainable_scalars() const noexcept;

private:
    struct Entry {
        std::string name;
        Tensor value;
        bool trainable = true;
    };
    std::vector<Entry> entries_;
};

/// State for one forward pass: the tape, the parameters it binds, mode, and RNG.
class Context {
public:
    Context(Tape& tape, ParameterSet& params, Mode mode, Rng& rng)
        : tape_(tape), params_(params), mode_(mode), rng_(rng), bound_(params.size()) {}

    /// Tape node for a parameter, bound once per pass: a leaf when trainable, else a constant.
    Var param(ParamId id);
    Var input(Tensor t) { return tape_.constant(std::move(t)); }

    Tape& tape() noexcept { return tape_; }
    ParameterSet& params() noexcept { return params_; }
    Mode mode() const noexcept { return mode_; }
    Rng& rng() noexcept { return rng_; }

    /// One gradient per parameter entry (zeros for buffers and unused entries).
    std::vector<Tensor> parameter_gradients(const Gradients& grads) const;

private:
    Tape& tape_;
    ParameterSet& params_;
    Mode mode_;
    Rng& rng_;
    std::vector<std::optional<Var>> bound_;
};

// ---------------------------------------------------------------------------
// Functional building blocks
// ---------------------------------------------------------------------------

enum class NormKind {
    none,                 // identity
    batch2d,              // one mean/variance over batch, time and feature jointly
    batch2d_per_feature,  // per-feature statistics pooled over batch and time
    layer,                // per-sample statistics over the time x feature plane
};

enum class NormPlacement { pre, post };

inline constexpr double norm_epsilon = 1e-8;

std::string_view to_string(NormKind kind) noexcept;
NormKind parse_norm_kind(std::string_view text);
std::string_view to_string(NormPlacement placement) noexcept;
NormPlacement parse_norm_placement(std::string_view text);

/// Running statistics of a batch2d normalizer.
struct RunningStats {
    Tensor mean;
    Tensor var;
    double momentum = 0.1;
};

/// W x[:, i] + b for every column i of a [batch x] L x C input. W is T x L, b has T entries.
Var temporal_projection(const Var& x, const Var& weight, const Var& bias);

/// W x[j, :] + b for every row j of a [batch x] L x C input. W is O x C, b has O entries.
Var row_linear(const Var& x, const Var& weight, const Var& bias);

/// 2D normalization of a [batch x] L x C input followed by an elementwise L x C affine.
/// Variances are floored at `norm_epsilon`. batch2d kinds use batch statistics in train
/// mode (updating `stats`) and `stats` in eval mode.
Var norm2d(const Var& x, NormKind kind, const Var& scale, const Var& shift, RunningStats* stats, Mode mode);

/// Repeats a B x 1 x C (or 1 x C) tensor `rows` times along the time axis.
Var expand_time(const Var& s, std::size_t rows);

// ---------------------------------------------------------------------------
// Parameterized layers. Each holds ParamIds into its model's ParameterSet.
// ---------------------------------------------------------------------------

struct Linear {
    ParamId weight;
    ParamId bias;
    std::size_t in = 0;
    std::size_t out = 0;

    /// Weights uniform in +-sqrt(1/in), biases zero.
    static Linear create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
};

struct Norm2d {
    NormKind kind = NormKind::none;
    ParamId scale;
    ParamId shift;
    ParamId running_mean;
    ParamId running_var;
    double momentum = 0.1;

    /// Affine over a rows x cols plane; running statistics sized per `kind`.
    static Norm2d create(ParameterSet& ps, const std::string& name, NormKind kind, std::size_t rows,
                         std::size_t cols);
    Var operator()(Context& ctx, const Var& x) const;
};

/// Residual MLP along the time axis, shared by all features.
///   post: Norm(X + Drop(relu(TP(X))))
///   pre:  X + Drop(relu(TP(Norm(X))))
struct TimeMixing {
    Linear proj;
    Norm2d norm;
    NormPlacement placement = NormPlacement::pre;
    double dropout = 0.0;

    static TimeMixing create(ParameterSet& ps, const std::string& name, std::size_t length, std::size_t channels,
                             NormKind kind, NormPlacement placement, double dropout, Rng& rng);
    Var operator()(Context& ctx, const Var& x) const;
};

/// Two-layer residual MLP along the feature axis, shared by all time steps.
/// When the output width differs from the input width the residual is projected.
struct FeatureMixing {
    Linear hidden;
    Linear output;
    std::optional<Linear> residual;
    Norm2d norm;
    NormPlacement placement = NormPlacement::pre;
    double dropout = 0.0;

    static FeatureMixing create(ParameterSet& ps, const std::string& name, std::size_t rows, std::size_t in,
                                std::size_t hidden, std::size_t out, NormKind kind, NormPlacement placement,
                                double dropout, Rng& rng);
    Var operator()(Context& ctx, const Var& x) const;
};

/// Feature mixing conditioned on static features: the statics are expanded along
/// time, mapped to the output width, concatenated to the input, then mixed.
/// Without a static branch it is plain feature mixing.
struct ConditionalFeatureMixing {
    std::optional<FeatureMixing> static_branch;
    FeatureMixing mixing;

    static ConditionalFeatureMixing create(ParameterSet& ps, const std::string& name, std::size_t rows,
                                           std::size_t in, std::size_t static_in, std::size_t hidden,
                                           std::size_t out, NormKind kind, NormPlacement placement, double dropout,
                                           Rng& rng);
    Var operator()(Context& ctx, const Var& x, const std::optional<Var>& statics) const;
};

/// Feature mixing applied after time mixing.
struct MixerLayer {
    TimeMixing time;
    FeatureMixing feature;

    Var operator()(Context& ctx, const Var& x) const { return feature(ctx, time(ctx, x)); }
};

/// Conditional feature mixing applied after time mixing.
struct ConditionalMixerLayer {
    TimeMixing time;
    ConditionalFeatureMixing feature;

    Var operator()(Context& ctx, const Var& x, const std::optional<Var>& statics) const {
        return feature(ctx, time(ctx, x), statics);
    }
};

// ---------------------------------------------------------------------------
// Reversible instance normalization
// ---------------------------------------------------------------------------

inline constexpr double rev_in_epsilon = 1e-8;

/// Per-sample, per-variate statistics captured at normalization time (B x 1 x C each).
struct RevInState {
    Tensor mean;
    Tensor stdev;
};

/// Standardizes each (sample, variate) series of a B x L x C input over time.
std::pair<Tensor, RevInState> rev_in_normalize(const Tensor& x);
Tensor rev_in_denormalize(const Tensor& y, const RevInState& state);
Var rev_in_denormalize(const Var& y, const RevInState& state);

// ---------------------------------------------------------------------------
// Gradient check over a parameter set
// ---------------------------------------------------------------------------

/// grad_check over every trainable entry of `params`. `loss` is re-run with a fresh
/// tape and an Rng seeded with `seed` each time, so dropout masks replay exactly.
double grad_check_parameters(ParameterSet& params, Mode mode, std::uint64_t seed,
                             const std::function<Var(Context&)>& loss, double step = 1e-5);

}  // namespace tsmixer
