#include "qadv/train.hpp"

#include <cmath>
#include <numeric>

#include "qadv/error.hpp"
#include "qadv/random.hpp"

namespace qadv {

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("train: batch size must be >= 1");
  if (!(learning_rate > 0.0f)) throw InvalidArgument("train: learning rate must be > 0");
  if (momentum < 0.0f || momentum >= 1.0f) throw InvalidArgument("train: momentum must be in [0,1)");
}

ParamGrads zero_grads(const ModelGraph& model) {
  ParamGrads g(model.layers().size());
  for (std::size_t i = 0; i < g.size(); ++i)
    for (const auto& p : model.params(i)) g[i].emplace_back(p.shape());
  return g;
}

void accumulate(ParamGrads& into, const ParamGrads& g, float weight) {
  for (std::size_t i = 0; i < into.size(); ++i)
    for (std::size_t s = 0; s < into[i].size(); ++s) {
      auto dst = into[i][s].data();
      auto src = g[i][s].data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += weight * src[k];
    }
}

BatchGradient sample_gradient(const ModelGraph& model, const Tensor& x,
                              const std::function<Var(Tape&, const ModelGraph::Recorded&)>& loss) {
  Tape tape;
  const auto rec = model.record(tape, x, false, true);
  const Var l = loss(tape, rec);
  const Gradients g = backward(tape, l);
  BatchGradient out;
  out.loss = tape.value(l)[0];
  out.grads.resize(model.layers().size());
  for (std::size_t i = 0; i < rec.params.size(); ++i)
    for (const Var& p : rec.params[i]) out.grads[i].push_back(g[p]);
  return out;
}

BatchObjective cross_entropy_objective(const Dataset& data) {
  return [&data](const ModelGraph& model, std::span<const std::size_t> batch, std::size_t) {
    BatchGradient total{0.0, zero_grads(model)};
    const float w = 1.0f / float(batch.size());
    for (auto idx : batch) {
      const int label = data.labels[idx];
      auto g = sample_gradient(model, data.images[idx],
                               [label](Tape& t, const ModelGraph::Recorded& r) {
                                 return t.cross_entropy(r.logits(), label);
                               });
      total.loss += g.loss * w;
      accumulate(total.grads, g.grads, w);
    }
    return total;
  };
}

TrainResult train_with_objective(ModelGraph model, const Dataset& data, const TrainConfig& cfg,
                                 const BatchObjective& objective) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  data.validate();
  if (data.classes != model.classes()) {
    throw InvalidArgument("train: dataset has " + std::to_string(data.classes) +
                          " classes, model expects " + std::to_string(model.classes()));
  }
  Rng rng(mix_seed(cfg.seed, 0x7a17));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ParamGrads velocity = zero_grads(model);
  const float mu = cfg.optimizer == OptimizerKind::SgdMomentum ? cfg.momentum : 0.0f;
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const auto bg = objective(model, std::span(order).subspan(start, n), epoch);
      if (!std::isfinite(bg.loss)) {
        throw TrainingDiverged(epoch + 1, "non-finite minibatch loss");
      }
      epoch_loss += bg.loss;
      ++batches;
      for (std::size_t i = 0; i < velocity.size(); ++i)
        for (std::size_t s = 0; s < velocity[i].size(); ++s) {
          auto v = velocity[i][s].data();
          auto g = bg.grads[i][s].data();
          auto p = model.params(i)[s].data();
          for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] = mu * v[k] + g[k];
            p[k] -= cfg.learning_rate * v[k];
          }
        }
    }
    epoch_loss /= double(batches);
    for (const auto& ps : model.all_params())
      for (const auto& p : ps)
        if (!p.all_finite()) throw TrainingDiverged(epoch + 1, "non-finite parameters");
    result.loss_trace.push_back(epoch_loss);
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(ModelGraph model, const Dataset& data, const TrainConfig& cfg) {
  const auto objective = cross_entropy_objective(data);
  return train_with_objective(std::move(model), data, cfg, objective);
}

}  // namespace qadv
