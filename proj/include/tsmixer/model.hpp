#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tsmixer/autodiff.hpp"
#include "tsmixer/layers.hpp"
#include "tsmixer/tensor.hpp"

namespace tsmixer {

enum class Family { linear, tmix_only, tsmixer, tsmixer_ext };
enum class HeadKind { point, negative_binomial };

std::string_view to_string(Family f) noexcept;
Family parse_family(std::string_view text);
std::string_view to_string(HeadKind h) noexcept;
HeadKind parse_head(std::string_view text);

/// Declarative description of one model variant.
///
/// History inputs carry the C target variates first, followed by C_x historical
/// covariates. Forecasts always cover the C targets only.
struct ModelConfig {
    Family family = Family::tsmixer;
    std::size_t L = 96;
    std::size_t T = 24;
    std::size_t C = 1;
    std::size_t C_x = 0;
    std::size_t C_z = 0;
    std::size_t C_s = 0;
    std::size_t hidden = 64;
    std::size_t blocks = 2;
    double dropout = 0.1;
    NormKind norm = NormKind::batch2d;
    NormPlacement placement = NormPlacement::pre;
    HeadKind head = HeadKind::point;
    bool rev_in = false;

    /// Throws a config error naming the offending field.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Softplus offset that keeps negative binomial parameters strictly positive.
inline constexpr double nb_floor = 1e-6;

struct ModelInput {
    Tensor history;                 // B x L x (C + C_x)
    std::optional<Tensor> future;   // B x T x C_z
    std::optional<Tensor> statics;  // B x 1 x C_s
};

/// Point forecasts in `mean`; the negative binomial head also fills `dispersion`.
struct Forecast {
    Var mean;
    std::optional<Var> dispersion;
};

/// Y = A X + b applied to every variate column of a B x L x C batch.
Tensor forward_linear(const Tensor& x, const Tensor& A, const Tensor& b);

/// Exact number of trainable scalars, summed layer by layer. Running statistics are
/// never counted; normalization affine terms are counted unless excluded.
std::size_t param_count(const ModelConfig& config, bool include_norm_affine = true);

class Model {
public:
    /// Builds and initializes all parameters from `seed`.
    Model(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    ParameterSet& params() noexcept { return params_; }
    const ParameterSet& params() const noexcept { return params_; }

    Forecast forward(Context& ctx, const ModelInput& input) const;

    /// Eval-mode forward on a fresh tape.
    Tensor predict(const ModelInput& input);
    std::pair<Tensor, Tensor> predict_distribution(const ModelInput& input);

    /// Copies values from `source` by name. Every entry of this model must be present
    /// with an identical shape.
    void load_parameters(const ParameterSet& source);

    /// Ids of the temporal projection (T x L weight, T bias).
    const Linear& projection() const;

    // Layer access for tests and tooling.
    struct TmixNet {
        std::vector<TimeMixing> blocks;
        Linear tp;
    };
    struct MixerNet {
        std::vector<MixerLayer> blocks;
        Linear tp;
    };
    struct ExtNet {
        Linear tp;
        ConditionalFeatureMixing align_history;
        std::optional<ConditionalFeatureMixing> align_future;
        std::vector<ConditionalMixerLayer> blocks;
        Linear head;
    };
    using Net = std::variant<Linear, TmixNet, MixerNet, ExtNet>;
    const Net& net() const noexcept { return net_; }

private:
    void check_input(const ModelInput& input) const;

    ModelConfig config_;
    ParameterSet params_;
    Net net_;
};

}  // namespace tsmixer
