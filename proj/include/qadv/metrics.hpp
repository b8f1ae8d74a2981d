#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "qadv/attacks.hpp"
#include "qadv/tensor.hpp"

namespace qadv {

enum class Norm { L0, L1, L2, Linf };

// One norm of (adv - orig). Same conventions as compute_distortion.
double distortion(const Tensor& orig, const Tensor& adv, Norm norm);

struct NormMeans {
  double l0 = 0, l1 = 0, l2 = 0, linf = 0;
};

struct DistortionStats {
  NormMeans all;          // every attacked sample (failures count as zero)
  std::size_t n_all = 0;
  NormMeans success;      // successful samples only (zeros when none)
  std::size_t n_success = 0;
};

DistortionStats distortion_stats(const std::vector<AdversarialResult>& results);

// Fraction of stored adversarial tensors that a fresh query still assigns to
// the original label.
double adversarial_accuracy(const std::function<int(const Tensor&)>& classify,
                            const std::vector<AdversarialResult>& results);
double adversarial_accuracy(const DecisionOracle& oracle, const std::vector<AdversarialResult>& results);

inline constexpr double kZeroGradientTolerance = 1e-12;

// Mean fraction of central-difference gradient coordinates with magnitude
// <= tol, over the samples.
double gradient_zero_density(const std::function<double(const Tensor&)>& f,
                             const std::vector<Tensor>& samples, double h,
                             double tol = kZeroGradientTolerance);

struct CosineSimilarity {
  double mean = 0.0;
  std::size_t used = 0;
  std::size_t zero_gradient = 0;  // samples skipped because a gradient vanished
};

// Mean cosine between the input gradients of the cross-entropy of two models.
// Throws UndefinedSimilarity when every sample has a zero gradient.
CosineSimilarity gradient_cosine_similarity(const GradientOracle& reference, const GradientOracle& other,
                                            const std::vector<Tensor>& samples,
                                            const std::vector<int>& labels);

struct BoundaryDistance {
  std::optional<double> mean;  // empty when no sample could be measured
  std::size_t measured = 0;
  std::size_t skipped = 0;     // misclassified before the attack
  std::size_t degenerate = 0;  // DeepFool found no usable gradient
};

// Mean DeepFool L2 over correctly classified samples with a usable gradient.
BoundaryDistance boundary_distance(const GradientOracle& g, const std::vector<Tensor>& samples,
                                   const std::vector<int>& labels, const DeepFoolConfig& cfg = {});

}  // namespace qadv
