#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qadv/dataset.hpp"
#include "qadv/model.hpp"

namespace qadv {

enum class OptimizerKind { Sgd, SgdMomentum };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  float learning_rate = 0.05f;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  float momentum = 0.9f;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  ModelGraph model;
  std::vector<double> loss_trace;  // mean minibatch loss per epoch
};

// Parameter gradients laid out like ModelGraph::all_params().
using ParamGrads = std::vector<std::vector<Tensor>>;

ParamGrads zero_grads(const ModelGraph& model);
void accumulate(ParamGrads& into, const ParamGrads& g, float weight = 1.0f);

struct BatchGradient {
  double loss = 0.0;
  ParamGrads grads;
};

// Loss and parameter gradient of one minibatch, evaluated at the current
// parameters. `epoch` lets objectives regenerate per-epoch data.
using BatchObjective = std::function<BatchGradient(
    const ModelGraph& model, std::span<const std::size_t> batch, std::size_t epoch)>;

// Mean cross-entropy over the batch against the dataset's hard labels.
BatchObjective cross_entropy_objective(const Dataset& data);

// Per-sample loss recorded on a fresh tape; returns loss value and param grads.
BatchGradient sample_gradient(const ModelGraph& model, const Tensor& x,
                              const std::function<Var(Tape&, const ModelGraph::Recorded&)>& loss);

// Minibatch SGD driver shared by plain training and the train-based defenses.
// Throws TrainingDiverged when the epoch loss or parameters become non-finite.
TrainResult train_with_objective(ModelGraph model, const Dataset& data, const TrainConfig& cfg,
                                 const BatchObjective& objective);

TrainResult train(ModelGraph model, const Dataset& data, const TrainConfig& cfg);

}  // namespace qadv
