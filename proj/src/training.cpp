#include "tsmixer/training.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "tsmixer/errors.hpp"
#include "tsmixer/losses.hpp"

namespace tsmixer {

std::string_view to_string(Objective o) noexcept { return o == Objective::mse ? "mse" : "nb_nll"; }

Objective parse_objective(std::string_view text) {
    if (text == "mse") return Objective::mse;
    if (text == "nb_nll") return Objective::nb_nll;
    throw Error(ErrorKind::config, fmt::format("unknown objective '{}' (mse, nb_nll)", text));
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw Error(ErrorKind::config, fmt::format("train.learning_rate must be positive, got {}", learning_rate));
    }
    if (patience < 1) throw Error(ErrorKind::config, "train.patience must be at least 1");
    if (max_epochs < 1) throw Error(ErrorKind::config, "train.max_epochs must be at least 1");
    if (batch_size < 1) throw Error(ErrorKind::config, "train.batch_size must be at least 1");
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& config) {
    if (params.size() != grads.size()) {
        throw Error(ErrorKind::dimension,
                    fmt::format("adam got {} parameters and {} gradients", params.size(), grads.size()));
    }
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.push_back(Tensor::zeros(p->shape()));
            state.v.push_back(Tensor::zeros(p->shape()));
        }
    }
    if (state.m.size() != params.size()) throw Error(ErrorKind::state, "adam state does not match parameters");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        if (g.shape() != p.shape() || state.m[k].shape() != p.shape()) {
            throw Error(ErrorKind::dimension, fmt::format("adam: parameter {} has shape {}, gradient {}", k,
                                                          p.shape().str(), g.shape().str()));
        }
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            p[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
        }
    }
}

void adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& config) {
    std::vector<Tensor*> ps;
    std::vector<Tensor> gs;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.trainable(ParamId{i})) continue;
        ps.push_back(&params.value(ParamId{i}));
        gs.push_back(grads[i]);
    }
    adam_step(ps, gs, state, config);
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw Error(ErrorKind::config, "patience must be at least 1");
}

bool EarlyStopping::update(double loss) {
    if (loss < best_ - 1e-12) {
        best_ = loss;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

void TrainHistory::write_csv(std::ostream& out, std::string_view header_comment) const {
    std::istringstream comment{std::string(header_comment)};
    std::string line;
    while (std::getline(comment, line)) out << "# " << line << '\n';
    out << "# stop_reason=" << stop_reason << " best_epoch=" << best_epoch << '\n';
    out << "epoch,train_loss,val_loss,best\n";
    for (std::size_t e = 0; e < train_loss.size(); ++e) {
        out << fmt::format("{},{},{},{}\n", e + 1, train_loss[e], val_loss[e], e + 1 == best_epoch ? 1 : 0);
    }
}

TrainHistory run_training(const TrainingTask& task, std::size_t max_epochs, std::size_t patience) {
    EarlyStopping stopper(patience);
    TrainHistory h;
    for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
        h.train_loss.push_back(task.train_epoch(epoch));
        const double val = task.validate();
        if (!std::isfinite(val)) {
            throw Error(ErrorKind::numeric, fmt::format("validation loss is not finite at epoch {}", epoch));
        }
        h.val_loss.push_back(val);
        if (stopper.update(val)) {
            h.best_epoch = epoch;
            task.save_best();
        }
        if (stopper.should_stop()) {
            h.stop_reason = fmt::format("no improvement for {} epochs", patience);
            break;
        }
    }
    if (h.stop_reason.empty()) h.stop_reason = "max_epochs";
    task.restore_best();
    return h;
}

namespace {

Var objective_loss(const Forecast& f, const Tensor& target, Objective objective) {
    if (objective == Objective::mse) return mse_loss(f.mean, target);
    if (!f.dispersion) throw Error(ErrorKind::config, "nb_nll objective needs the negative_binomial head");
    return nb_nll_loss(f.mean, *f.dispersion, target);
}

}  // namespace

double evaluate_loss(Model& model, std::span<const Window> windows, Objective objective, std::size_t batch_size) {
    if (windows.empty()) throw Error(ErrorKind::precondition, "cannot evaluate on an empty window set");
    double total = 0.0;
    std::vector<std::size_t> idx;
    Rng rng(0);
    for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
        const std::size_t end = std::min(windows.size(), begin + batch_size);
        idx.resize(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const WindowBatch batch = collate(windows, idx);
        Tape tape;
        Context ctx(tape, model.params(), Mode::eval, rng);
        total += objective_loss(model.forward(ctx, batch.input), batch.target, objective).value().item() *
                 static_cast<double>(idx.size());
    }
    return total / static_cast<double>(windows.size());
}

TrainHistory train(Model& model, std::span<const Window> train_set, std::span<const Window> val_set,
                   const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) throw Error(ErrorKind::precondition, "training set has no windows");
    if (val_set.empty()) throw Error(ErrorKind::precondition, "validation set has no windows");
    if ((config.objective == Objective::nb_nll) != (model.config().head == HeadKind::negative_binomial)) {
        throw Error(ErrorKind::config, "train.objective nb_nll goes with the negative_binomial head, mse with point");
    }

    const Rng root(config.seed);
    Rng order_rng = root.fork(2);
    Rng dropout_rng = root.fork(3);
    AdamState adam;
    const AdamConfig adam_config{config.learning_rate};
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::optional<ParameterSet> best;

    TrainingTask task;
    task.train_epoch = [&](std::size_t epoch) {
        order_rng.shuffle(std::span<std::size_t>(order));
        double total = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            const WindowBatch batch = collate(train_set, std::span<const std::size_t>(order).subspan(begin, end - begin));
            Tape tape;
            Context ctx(tape, model.params(), Mode::train, dropout_rng);
            const Var loss = objective_loss(model.forward(ctx, batch.input), batch.target, config.objective);
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                throw Error(ErrorKind::numeric,
                            fmt::format("training loss is not finite at epoch {} batch {}", epoch, batch_no + 1));
            }
            const auto grads = ctx.parameter_gradients(tape.backward(loss));
            adam_step(model.params(), grads, adam, adam_config);
            total += value * static_cast<double>(end - begin);
        }
        return total / static_cast<double>(order.size());
    };
    task.validate = [&] { return evaluate_loss(model, val_set, config.objective, config.batch_size); };
    task.save_best = [&] { best = model.params(); };
    task.restore_best = [&] {
        if (best) model.params() = *best;
    };
    return run_training(task, config.max_epochs, config.patience);
}

}  // namespace tsmixer
