#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "network.hpp"

namespace vib {

enum class OptimizerKind { adam, sgd_momentum };
enum class GammaRule { uniform, inverse_side_length };

struct TrainConfig {
  double gamma_prime = 0.0;
  GammaRule gamma_rule = GammaRule::uniform;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double gate_learning_rate = 0.0;  // 0 reuses learning_rate for mu and log sigma^2
  double momentum = 0.9;            // sgd_momentum
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;        // L2 on weight matrices only
  double lr_decay = 1.0;            // step decay factor
  std::size_t lr_decay_every = 0;   // epochs; 0 disables
  std::size_t epochs = 10;
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  NoiseDraw epsilon_draw = NoiseDraw::per_example;
  double prune_tau = 1e-2;          // threshold for the logged survivor counts

  void validate() const;
};

struct EpochRow {
  std::size_t epoch = 0;
  double loss = 0.0;          // mean minibatch objective
  double data_term = 0.0;     // mean minibatch data term
  std::vector<double> kl;     // per gated layer, end of epoch
  double train_error = 0.0;   // running error of the sampled training forward passes
  std::optional<double> test_error;
  std::vector<std::size_t> survivors;
  std::optional<double> mutual_information;
};

struct TrainLog {
  std::uint64_t seed = 0;
  std::vector<std::string> layer_names;
  std::vector<EpochRow> rows;

  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainHooks {
  /// Called at the end of each epoch with the row filled so far.
  std::function<void(const Network&, EpochRow&)> on_epoch;
  /// Called after every optimizer step; may overwrite parameter values in
  /// place (e.g. to hold a constraint) but must not resize them.
  std::function<void(Network&)> on_step;
  /// Optional per-epoch mutual-information estimate.
  std::function<double(const Network&, std::size_t epoch)> mutual_information;
};

/// Eval-mode classification error over a dataset.
double error_rate(const Network& net, const Dataset& data, std::size_t batch = 1000);

/// Minibatch training of the gated objective, in place. Gate gammas are set
/// from the config. Throws Diverged naming the first layer with non-finite
/// values when the loss leaves [-1e8, 1e8] or becomes NaN.
TrainLog train(Network& net, const Dataset& data, const Dataset* test, const TrainConfig& cfg,
               const TrainHooks& hooks = {});

/// Retrains the remaining weights with gates frozen at their mean and no KL
/// term. Architecture is left untouched; zero epochs returns the input.
Network fine_tune(const Network& pruned, const Dataset& data, const TrainConfig& cfg, TrainLog* log = nullptr,
                  const Dataset* test = nullptr);

/// Gradient optimizer over a fixed list of parameter arrays.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const std::vector<ParamRef>& params);
  /// One update. `frozen` groups are skipped.
  void step(std::vector<ParamRef>& params, const std::vector<std::span<double>>& grads, double lr_scale,
            std::span<const ParamGroup> frozen = {});

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace vib
