#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qadv/model.hpp"
#include "qadv/quant.hpp"
#include "qadv/random.hpp"
#include "qadv/tensor.hpp"

namespace qadv {

// ---- oracles -------------------------------------------------------------

// White-box access to a float model.
class GradientOracle {
 public:
  explicit GradientOracle(ModelGraph model) : model_(std::move(model)) {}

  const ModelGraph& model() const noexcept { return model_; }
  std::size_t classes() const noexcept { return model_.classes(); }
  const Shape& input_shape() const noexcept { return model_.input_shape(); }

  Tensor logits(const Tensor& x) const;
  Tensor probabilities(const Tensor& x) const;
  int predict(const Tensor& x) const;

  struct LossGradient {
    double loss = 0.0;  // cross-entropy against `label`
    Tensor grad;        // d loss / d x
    Tensor logits;
  };
  LossGradient loss_gradient(const Tensor& x, int label) const;

  // d(seed . Z(x)) / dx. Fills `logits` with Z(x) when given.
  Tensor logit_vjp(const Tensor& x, const Tensor& seed, Tensor* logits = nullptr) const;
  // One pass where the seed is chosen from the logits of that same pass.
  Tensor logit_vjp(const Tensor& x, const std::function<Tensor(const Tensor& logits)>& seed_of,
                   Tensor* logits = nullptr) const;
  // Rows d Z_k / dx for every class.
  std::vector<Tensor> logit_jacobian(const Tensor& x, Tensor* logits = nullptr) const;

  std::size_t forward_queries() const noexcept { return forward_queries_; }
  std::size_t gradient_queries() const noexcept { return gradient_queries_; }
  void reset_counters() noexcept { forward_queries_ = gradient_queries_ = 0; }

 private:
  ModelGraph model_;
  mutable std::size_t forward_queries_ = 0;
  mutable std::size_t gradient_queries_ = 0;
};

// Gray-box access: class probabilities only.
class ScoreOracle {
 public:
  using Fn = std::function<std::vector<double>(const Tensor&)>;
  ScoreOracle(Fn fn, Shape input_shape, std::size_t classes);

  // Both factories take the softmax of the model's logits in double; `precise`
  // also runs the forward pass in double.
  static ScoreOracle from_model(const ModelGraph& model, bool precise = false);
  static ScoreOracle from_quantized(const QuantizedModel& qm);

  std::vector<double> probabilities(const Tensor& x) const;  // one query
  int predict(const Tensor& x) const;                         // one query
  const Shape& input_shape() const noexcept { return shape_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t queries() const noexcept { return queries_; }
  void reset_queries() noexcept { queries_ = 0; }

 private:
  Fn fn_;
  Shape shape_;
  std::size_t classes_;
  mutable std::size_t queries_ = 0;
};

// Black-box access: predicted class only.
class DecisionOracle {
 public:
  using Fn = std::function<int(const Tensor&)>;
  DecisionOracle(Fn fn, Shape input_shape, std::size_t classes);

  static DecisionOracle from_model(const ModelGraph& model);
  static DecisionOracle from_quantized(const QuantizedModel& qm);

  int decide(const Tensor& x) const;  // one query
  const Shape& input_shape() const noexcept { return shape_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t queries() const noexcept { return queries_; }
  void reset_queries() noexcept { queries_ = 0; }

 private:
  Fn fn_;
  Shape shape_;
  std::size_t classes_;
  mutable std::size_t queries_ = 0;
};

// ---- results ---------------------------------------------------------------

struct Distortion {
  double l0 = 0, l1 = 0, l2 = 0, linf = 0;
  friend bool operator==(const Distortion&, const Distortion&) = default;
};

inline constexpr double kL0Threshold = 1e-9;

// Norms of (a - b), computed in double. L0 counts |a_i - b_i| > 1e-9.
Distortion compute_distortion(const Tensor& a, const Tensor& b);

struct AdversarialResult {
  Tensor original;
  Tensor adversarial;
  int original_label = 0;
  int predicted_label = 0;
  bool success = false;
  std::size_t queries = 0;     // oracle queries spent (forward + gradient)
  std::size_t iterations = 0;
  Distortion distortion;
};

// Builds a record: success iff predicted != label. On failure the clean sample
// is stored (predicted_label = label).
AdversarialResult make_result(const Tensor& x, int label, const Tensor& candidate, int predicted,
                              std::size_t queries, std::size_t iterations);

// Pixel domain the attacks must stay in.
struct Box {
  float lo = 0.0f;
  float hi = 1.0f;
};

// ---- configs (defaults: CIFAR-scale column of the attack configuration) ----

struct DeepFoolConfig {
  std::size_t max_iter = 100;
  double overshoot = 0.008;
  Box box;
  void validate() const;
};

struct JsmaConfig {
  double theta = 0.08;
  double gamma = 1.0;
  Box box;
  void validate() const;
};

struct CwL2Config {
  std::size_t max_iter = 10;
  std::size_t bs_steps = 10;
  double c0 = 0.01;
  double lr = 0.01;
  double kappa = 0.0;
  Box box;
  void validate() const;
};

struct CwLinfConfig {
  std::size_t max_iter = 10;
  double lr = 0.01;
  double c0 = 0.01;
  double c_max = 20.0;
  double tau_decay = 0.9;
  double tau_min = 1.0 / 256.0;
  std::size_t max_rounds = 50;
  Box box;
  void validate() const;
};

struct PgdConfig {
  double eps = 0.0008;
  double step = 0.00008;
  std::size_t restarts = 20;
  std::size_t max_iter = 100;
  bool random_init = true;
  std::uint64_t seed = 0;
  Box box;
  void validate() const;
};

struct FgsmConfig {
  double eps = 0.008;
  Box box;
  void validate() const;
};

struct EadConfig {
  std::size_t max_iter = 10;
  std::size_t bs_steps = 10;
  double c0 = 0.01;
  double beta = 1e-3;
  double lr = 0.01;
  double kappa = 0.0;
  Box box;
  void validate() const;
};

struct ApgdConfig {
  double eps = 0.004;
  std::size_t max_iter = 100;
  double momentum = 0.75;
  double rho = 0.75;
  std::uint64_t seed = 0;
  Box box;
  void validate() const;
};

enum class SquareNorm { L2, Linf };

struct SquareConfig {
  SquareNorm norm = SquareNorm::Linf;
  double eps = 0.015;
  std::size_t max_iter = 1000;
  double init_fraction = 0.05;
  std::uint64_t seed = 0;
  Box box;
  void validate() const;
  static SquareConfig l2_defaults();
};

struct AutoAttackConfig {
  double eps = 0.004;
  std::size_t apgd_iter = 100;
  std::size_t square_iter = 1000;
  std::uint64_t seed = 0;
  Box box;
  void validate() const;
};

struct ZooConfig {
  std::size_t max_iter = 10;
  std::size_t bs_steps = 5;
  double c0 = 0.01;
  double h = 1e-4;
  double lr = 0.01;
  std::size_t coords_per_iter = 128;
  double kappa = 0.0;
  std::uint64_t seed = 0;
  Box box;
  void validate() const;
};

struct BoundaryConfig {
  double eps = 1.0;     // step toward the original, as a fraction of the distance
  double delta = 0.1;   // orthogonal step, relative to the distance
  std::size_t init_size = 100;
  std::size_t max_iter = 500;
  std::size_t trials = 10;
  double step_adapt = 0.667;
  std::uint64_t seed = 0;
  Box box;
  void validate() const;
};

struct GeoDaConfig {
  double bs_tol = 1e-4;
  std::size_t dct_dim = 75;     // side of the low-frequency DCT block
  std::size_t max_iter = 10;    // normal-estimation rounds
  std::size_t probes = 100;     // random probes per round
  double sigma = 2e-4;          // probe radius
  std::size_t init_size = 100;
  std::uint64_t seed = 0;
  Box box;
  void validate() const;
};

// ---- white-box ---------------------------------------------------------------

AdversarialResult fgsm(const GradientOracle& g, const Tensor& x, int y, const FgsmConfig& cfg);
AdversarialResult deepfool(const GradientOracle& g, const Tensor& x, int y, const DeepFoolConfig& cfg);
AdversarialResult jsma(const GradientOracle& g, const Tensor& x, int y, const JsmaConfig& cfg);
AdversarialResult cw_l2(const GradientOracle& g, const Tensor& x, int y, const CwL2Config& cfg);
AdversarialResult cw_linf(const GradientOracle& g, const Tensor& x, int y, const CwLinfConfig& cfg);
AdversarialResult pgd(const GradientOracle& g, const Tensor& x, int y, const PgdConfig& cfg);
AdversarialResult ead(const GradientOracle& g, const Tensor& x, int y, const EadConfig& cfg);

enum class ApgdLoss { CrossEntropy, Dlr };
AdversarialResult apgd(const GradientOracle& g, const Tensor& x, int y, ApgdLoss loss,
                       const ApgdConfig& cfg);
// APGD-CE, then APGD-DLR, then Square-L-inf; the first member to succeed wins.
AdversarialResult autoattack(const GradientOracle& g, const ScoreOracle& s, const Tensor& x, int y,
                             const AutoAttackConfig& cfg);

// Raw PGD iterate for adversarial training: `iters` signed-gradient steps from
// an optional uniform start, projected onto the eps-ball and box. No early
// stop, and the perturbed point is returned whether or not it fools the model.
Tensor pgd_perturb(const GradientOracle& g, const Tensor& x, int y, double eps, double step,
                   std::size_t iters, bool random_init, std::uint64_t seed, const Box& box = {});

// ---- gray-box / black-box ---------------------------------------------------

AdversarialResult zoo(const ScoreOracle& s, const Tensor& x, int y, const ZooConfig& cfg);
AdversarialResult square_attack(const ScoreOracle& s, const Tensor& x, int y, const SquareConfig& cfg,
                                std::vector<double>* loss_trace = nullptr);
AdversarialResult boundary_attack(const DecisionOracle& d, const Tensor& x, int y,
                                  const BoundaryConfig& cfg,
                                  std::vector<double>* distance_trace = nullptr);
AdversarialResult geoda(const DecisionOracle& d, const Tensor& x, int y, const GeoDaConfig& cfg);

// ---- building blocks exposed for testing ---------------------------------

// JSMA saliency of one feature: 0 if the target derivative is negative or the
// summed other derivatives are positive, else target * |others|.
double jsma_saliency(double target_grad, double others_grad);

// Box-mapped tanh: lo + (tanh(w) + 1) / 2 * (hi - lo).
double tanh_to_box(double w, const Box& box);
double box_to_tanh(double v, const Box& box);

// sign(z) * max(|z| - t, 0).
double soft_threshold(double z, double t);

// C&W objective ||d||_2^2 + c * f and the elastic-net variant with beta ||d||_1.
double cw_objective(double l2_squared, double margin_loss, double c);
double ead_objective(double l1, double l2_squared, double margin_loss, double c, double beta);

// Untargeted margin on logits: max(Z_y - max_{j != y} Z_j, -kappa).
double margin_loss(std::span<const float> logits, int y, double kappa);
// Difference-of-logits-ratio loss (falls back to the negative margin below 3 classes).
double dlr_loss(std::span<const float> logits, int y);

// Central difference (f(x + h e_i) - f(x - h e_i)) / 2h, using the float step
// actually realised in x.
double zoo_coordinate_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               std::size_t i, double h);

// APGD step-size control: checkpoints w_j = ceil(p_j N) with p_0 = 0,
// p_1 = 0.22, p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06). At a checkpoint
// the step is halved unless the loss increased in at least rho of the steps
// since the previous checkpoint.
class ApgdSchedule {
 public:
  ApgdSchedule(std::size_t max_iter, double initial_step, double rho = 0.75);
  double step() const noexcept { return step_; }
  // w_1, w_2, ... (w_0 = 0 omitted).
  const std::vector<std::size_t>& checkpoints() const noexcept { return checkpoints_; }
  // Record the outcome of update number `iter` (1-based): did the loss go up.
  // Returns true when the step was halved at this point.
  bool record(std::size_t iter, bool increased);

 private:
  double step_;
  double rho_;
  std::vector<std::size_t> checkpoints_;
  std::size_t next_ = 0;
  std::size_t last_ = 0;
  std::size_t increases_ = 0;
};

// Bisection on the segment [inside, outside]; returns a point on the
// adversarial side within `tol` (L2) of the boundary crossing. Throws
// BoundaryNotBracketed when both ends sit on the same side.
Tensor bisect_boundary(const DecisionOracle& d, const Tensor& inside, const Tensor& outside, int y,
                       double tol);

// Orthonormal low-frequency DCT direction for a [C,H,W] (or flat) shape,
// built from random coefficients in the top-left block of side `block`.
Tensor random_dct_direction(Rng& rng, const Shape& shape, std::size_t block);

// Boundary normal estimate at `point`: normalised sum of sign-weighted
// low-frequency probes of radius sigma.
Tensor estimate_normal(const DecisionOracle& d, const Tensor& point, int y, std::size_t probes,
                       double sigma, std::size_t block, Rng& rng);

}  // namespace qadv
