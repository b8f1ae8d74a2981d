#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qadv/attacks.hpp"
#include "qadv/dataset.hpp"
#include "qadv/model.hpp"
#include "qadv/train.hpp"

namespace qadv {

// ---- train-based defenses -----------------------------------------------------

struct DistillationConfig {
  double temperature = 20.0;
  double alpha = 0.1;  // weight of the hard-label term
  TrainConfig train;   // used for both teacher and student
  void validate() const;
};

struct AdvTrainConfig {
  double eps = 0.008;
  double step = 0.0008;
  std::size_t iters = 10;
  TrainConfig train;  // defaults() sets 50 epochs
  void validate() const;
  static AdvTrainConfig defaults();
};

struct EnsembleAdvTrainConfig {
  AdvTrainConfig pgd;
  double fgsm_eps = 0.008;
  void validate() const;
};

enum class SinkhornReduction { Sum, Mean };

struct SinkhornConfig {
  double eps = 1.0;
  std::size_t iters = 50;
  SinkhornReduction reduction = SinkhornReduction::Sum;
  void validate() const;
};

struct SinkhornAdvTrainConfig {
  AdvTrainConfig pgd;
  SinkhornConfig sinkhorn;
  double weight = 1.0;  // multiplier of the divergence term
  void validate() const;
};

// Softmax of z / T.
Tensor tempered_softmax(const Tensor& logits, double temperature);

// Teacher on hard labels at temperature T, then a student of the same
// architecture on alpha * CE(hard) + (1 - alpha) * CE(teacher soft labels),
// both at temperature T. The returned model is used at temperature 1.
TrainResult distill_train(const ModelGraph& init, const Dataset& data, const DistillationConfig& cfg);

// Each minibatch is replaced by PGD examples crafted on the current parameters.
TrainResult pgd_adversarial_train(const ModelGraph& init, const Dataset& data, const AdvTrainConfig& cfg);

// Static pool built once: clean data plus one example per training sample and
// source model (FGSM for even indices, PGD for odd ones).
Dataset ensemble_adversarial_pool(const Dataset& data, const std::vector<ModelGraph>& sources,
                                  const EnsembleAdvTrainConfig& cfg);
TrainResult ensemble_adversarial_train(const ModelGraph& init, const Dataset& data,
                                       const std::vector<ModelGraph>& sources,
                                       const EnsembleAdvTrainConfig& cfg);

// PGD adversarial training plus weight * Sinkhorn divergence between the
// penultimate representations of the clean and adversarial minibatch.
TrainResult sinkhorn_adversarial_train(const ModelGraph& init, const Dataset& data,
                                       const SinkhornAdvTrainConfig& cfg);

// ---- Sinkhorn divergence ----------------------------------------------------------

// Weighted point cloud; empty weights mean uniform.
struct PointCloud {
  std::vector<std::vector<double>> points;
  std::vector<double> weights;
};

struct SinkhornValue {
  double value = 0.0;
  // d value / d point, same layout as the inputs.
  std::vector<std::vector<double>> grad_a, grad_b;
};

// Debiased entropic OT with squared-Euclidean cost:
// S(A,B) - S(A,A)/2 - S(B,B)/2, log-domain symmetric Sinkhorn iterations.
double sinkhorn_divergence(const PointCloud& a, const PointCloud& b, const SinkhornConfig& cfg);
SinkhornValue sinkhorn_divergence_grad(const PointCloud& a, const PointCloud& b,
                                       const SinkhornConfig& cfg);

// ---- feature squeezing --------------------------------------------------------------

struct FeatureSqueezeConfig {
  int bit_depth = 4;
  std::size_t window = 2;          // as configured; see effective_window()
  double detect_threshold = 0.5;   // L1 between probability vectors
  void validate() const;
  std::size_t effective_window() const;
};

// Nearest odd window (ties downward), at least 3 for even inputs: 2 -> 3, 6 -> 5.
std::size_t odd_window(std::size_t window);

// Bit-depth reduction followed by a window x window median filter per channel
// with edge replication. `window` must be odd.
Tensor feature_squeeze(const Tensor& x, int bit_depth, std::size_t window);
Tensor reduce_bit_depth(const Tensor& x, int bit_depth);
Tensor median_filter(const Tensor& x, std::size_t window);

struct SqueezeDetection {
  bool adversarial = false;
  double l1_margin = 0.0;
};
SqueezeDetection squeeze_detect(const ScoreOracle& score, const Tensor& x, const FeatureSqueezeConfig& cfg);

// Oracles that squeeze every input before classifying it.
ScoreOracle squeezed(const ScoreOracle& inner, const FeatureSqueezeConfig& cfg);
DecisionOracle squeezed(const DecisionOracle& inner, const FeatureSqueezeConfig& cfg);

}  // namespace qadv
