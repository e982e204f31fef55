#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsmixer/data.hpp"
#include "tsmixer/layers.hpp"
#include "tsmixer/model.hpp"

namespace tsmixer {

enum class Objective { mse, nb_nll };

std::string_view to_string(Objective o) noexcept;
Objective parse_objective(std::string_view text);

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t max_epochs = 100;
    std::size_t patience = 5;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    Objective objective = Objective::mse;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One bias-corrected Adam update of `params` in place. State is sized on first use.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& config);

/// Adam over the trainable entries of a parameter set; `grads` has one tensor per entry.
void adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& config);

/// Patience counter. An epoch improves only if it beats the best loss by more than 1e-12.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience);

    /// Records a validation loss; returns true if it is a new best.
    bool update(double loss);
    bool should_stop() const noexcept { return since_best_ >= patience_; }
    double best() const noexcept { return best_; }

private:
    std::size_t patience_;
    std::size_t since_best_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;  // 1-based
    std::string stop_reason;

    /// One record per epoch: epoch,train_loss,val_loss,best. Comment lines come first.
    void write_csv(std::ostream& out, std::string_view header_comment = {}) const;
};

/// Callbacks that make up one training run; `train_epoch` receives the 1-based epoch.
struct TrainingTask {
    std::function<double(std::size_t)> train_epoch;
    std::function<double()> validate;
    std::function<void()> save_best;
    std::function<void()> restore_best;
};

/// Runs epochs until `max_epochs` or early stopping, then restores the best epoch.
TrainHistory run_training(const TrainingTask& task, std::size_t max_epochs, std::size_t patience);

/// Average objective over `windows` in eval mode.
double evaluate_loss(Model& model, std::span<const Window> windows, Objective objective, std::size_t batch_size);

/// Trains `model` in place on shuffled mini-batches and returns the history. The model
/// ends with the parameters of its best validation epoch.
TrainHistory train(Model& model, std::span<const Window> train_set, std::span<const Window> val_set,
                   const TrainConfig& config);

}  // namespace tsmixer
