#include <algorithm>
#include <cmath>
#include <utility>

#include "attack_util.hpp"
#include "qadv/autodiff.hpp"
#include "qadv/error.hpp"

namespace qadv {

namespace {

std::vector<double> softmax_double(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - m);
  for (auto& v : p) v /= s;
  return p;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

// ---- gradient oracle ---------------------------------------------------------

Tensor GradientOracle::logits(const Tensor& x) const {
  ++forward_queries_;
  return model_.forward(x);
}

Tensor GradientOracle::probabilities(const Tensor& x) const {
  ++forward_queries_;
  return model_.probabilities(x);
}

int GradientOracle::predict(const Tensor& x) const {
  ++forward_queries_;
  return model_.predict(x);
}

GradientOracle::LossGradient GradientOracle::loss_gradient(const Tensor& x, int label) const {
  ++gradient_queries_;
  Tape tape;
  const auto rec = model_.record(tape, x, true, false);
  const Var loss = tape.cross_entropy(rec.logits(), label);
  const Gradients gr = backward(tape, loss);
  return {double(tape.value(loss)[0]), gr[rec.input], tape.value(rec.logits())};
}

Tensor GradientOracle::logit_vjp(const Tensor& x, const Tensor& seed, Tensor* logits) const {
  return logit_vjp(x, [&](const Tensor&) { return seed; }, logits);
}

Tensor GradientOracle::logit_vjp(const Tensor& x,
                                 const std::function<Tensor(const Tensor& logits)>& seed_of,
                                 Tensor* logits) const {
  ++gradient_queries_;
  Tape tape;
  const auto rec = model_.record(tape, x, true, false);
  const Tensor& z = tape.value(rec.logits());
  if (logits) *logits = z;
  const std::pair<Var, Tensor> seeds[] = {{rec.logits(), seed_of(z)}};
  if (seeds[0].second.shape() != z.shape())
    throw InvalidArgument("logit_vjp: seed shape " + shape_string(seeds[0].second.shape()) +
                          " != logits " + shape_string(z.shape()));
  return backward(tape, seeds)[rec.input];
}

std::vector<Tensor> GradientOracle::logit_jacobian(const Tensor& x, Tensor* logits) const {
  Tape tape;
  const auto rec = model_.record(tape, x, true, false);
  const Tensor& z = tape.value(rec.logits());
  if (logits) *logits = z;
  std::vector<Tensor> rows;
  for (std::size_t k = 0; k < z.size(); ++k) {
    ++gradient_queries_;
    Tensor e(z.shape());
    e[k] = 1.0f;
    const std::pair<Var, Tensor> seeds[] = {{rec.logits(), std::move(e)}};
    rows.push_back(backward(tape, seeds)[rec.input]);
  }
  return rows;
}

// ---- score / decision oracles --------------------------------------------------

ScoreOracle::ScoreOracle(Fn fn, Shape input_shape, std::size_t classes)
    : fn_(std::move(fn)), shape_(std::move(input_shape)), classes_(classes) {
  if (!fn_) throw InvalidArgument("score oracle: empty function");
  if (classes_ < 2) throw InvalidArgument("score oracle: needs >= 2 classes");
}

ScoreOracle ScoreOracle::from_model(const ModelGraph& model, bool precise) {
  if (precise)
    return ScoreOracle([model](const Tensor& x) { return softmax_double(model.forward_precise(x)); },
                       model.input_shape(), model.classes());
  return ScoreOracle(
      [model](const Tensor& x) {
        // float32 logits, read out like the quantized oracle's
        const Tensor z = model.forward(x);
        return softmax_double(std::vector<double>(z.data().begin(), z.data().end()));
      },
      model.input_shape(), model.classes());
}

ScoreOracle ScoreOracle::from_quantized(const QuantizedModel& qm) {
  return ScoreOracle(
      [qm](const Tensor& x) {
        const Tensor z = integer_infer(qm, x).logits;
        return softmax_double(std::vector<double>(z.data().begin(), z.data().end()));
      },
      qm.input_shape, qm.classes);
}

std::vector<double> ScoreOracle::probabilities(const Tensor& x) const {
  ++queries_;
  auto p = fn_(x);
  if (p.size() != classes_)
    throw InvalidArgument("score oracle: returned " + std::to_string(p.size()) + " scores, expected " +
                          std::to_string(classes_));
  return p;
}

int ScoreOracle::predict(const Tensor& x) const { return detail::argmax_of(probabilities(x)); }

DecisionOracle::DecisionOracle(Fn fn, Shape input_shape, std::size_t classes)
    : fn_(std::move(fn)), shape_(std::move(input_shape)), classes_(classes) {
  if (!fn_) throw InvalidArgument("decision oracle: empty function");
  if (classes_ < 2) throw InvalidArgument("decision oracle: needs >= 2 classes");
}

DecisionOracle DecisionOracle::from_model(const ModelGraph& model) {
  return DecisionOracle([model](const Tensor& x) { return model.predict(x); }, model.input_shape(),
                        model.classes());
}

DecisionOracle DecisionOracle::from_quantized(const QuantizedModel& qm) {
  return DecisionOracle([qm](const Tensor& x) { return integer_predict(qm, x); }, qm.input_shape,
                        qm.classes);
}

int DecisionOracle::decide(const Tensor& x) const {
  ++queries_;
  return fn_(x);
}

// ---- results -----------------------------------------------------------------

Distortion compute_distortion(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "distortion");
  Distortion d;
  double l2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = std::abs(double(a[i]) - double(b[i]));
    if (v > kL0Threshold) d.l0 += 1.0;
    d.l1 += v;
    l2 += v * v;
    d.linf = std::max(d.linf, v);
  }
  d.l2 = std::sqrt(l2);
  return d;
}

AdversarialResult make_result(const Tensor& x, int label, const Tensor& candidate, int predicted,
                              std::size_t queries, std::size_t iterations) {
  AdversarialResult r;
  r.original = x;
  r.original_label = label;
  r.queries = queries;
  r.iterations = iterations;
  r.success = predicted != label;
  r.adversarial = r.success ? candidate : x;
  r.predicted_label = r.success ? predicted : label;
  r.distortion = compute_distortion(r.adversarial, x);
  return r;
}

// ---- config validation ---------------------------------------------------------

void DeepFoolConfig::validate() const {
  require(max_iter >= 1, "deepfool: max_iter must be >= 1");
  require(std::isfinite(overshoot) && overshoot >= 0.0, "deepfool: overshoot must be >= 0");
  detail::check_box(box, "deepfool");
}

void JsmaConfig::validate() const {
  require(positive(theta), "jsma: theta must be > 0");
  require(gamma > 0.0 && gamma <= 1.0, "jsma: gamma must be in (0, 1]");
  detail::check_box(box, "jsma");
}

void CwL2Config::validate() const {
  require(max_iter >= 1, "cw-l2: max_iter must be >= 1");
  require(bs_steps >= 1, "cw-l2: bs_steps must be >= 1");
  require(positive(c0), "cw-l2: c0 must be > 0");
  require(positive(lr), "cw-l2: lr must be > 0");
  require(std::isfinite(kappa) && kappa >= 0.0, "cw-l2: kappa must be >= 0");
  detail::check_box(box, "cw-l2");
}

void CwLinfConfig::validate() const {
  require(max_iter >= 1, "cw-linf: max_iter must be >= 1");
  require(positive(lr), "cw-linf: lr must be > 0");
  require(positive(c0), "cw-linf: c0 must be > 0");
  require(positive(c_max) && c_max >= c0, "cw-linf: c_max must be >= c0");
  require(tau_decay > 0.0 && tau_decay < 1.0, "cw-linf: tau_decay must be in (0, 1)");
  require(positive(tau_min), "cw-linf: tau_min must be > 0");
  require(max_rounds >= 1, "cw-linf: max_rounds must be >= 1");
  detail::check_box(box, "cw-linf");
}

void PgdConfig::validate() const {
  require(std::isfinite(eps) && eps >= 0.0, "pgd: eps must be >= 0");
  require(std::isfinite(step) && step >= 0.0, "pgd: step must be >= 0");
  require(step <= eps, "pgd: step must be <= eps");
  require(restarts >= 1, "pgd: restarts must be >= 1");
  require(max_iter >= 1, "pgd: max_iter must be >= 1");
  detail::check_box(box, "pgd");
}

void FgsmConfig::validate() const {
  require(std::isfinite(eps) && eps >= 0.0, "fgsm: eps must be >= 0");
  detail::check_box(box, "fgsm");
}

void EadConfig::validate() const {
  require(max_iter >= 1, "ead: max_iter must be >= 1");
  require(bs_steps >= 1, "ead: bs_steps must be >= 1");
  require(positive(c0), "ead: c0 must be > 0");
  require(std::isfinite(beta) && beta >= 0.0, "ead: beta must be >= 0");
  require(positive(lr), "ead: lr must be > 0");
  require(std::isfinite(kappa) && kappa >= 0.0, "ead: kappa must be >= 0");
  detail::check_box(box, "ead");
}

void ApgdConfig::validate() const {
  require(positive(eps), "apgd: eps must be > 0");
  require(max_iter >= 1, "apgd: max_iter must be >= 1");
  require(momentum >= 0.0 && momentum <= 1.0, "apgd: momentum must be in [0, 1]");
  require(rho > 0.0 && rho <= 1.0, "apgd: rho must be in (0, 1]");
  detail::check_box(box, "apgd");
}

void SquareConfig::validate() const {
  require(positive(eps), "square: eps must be > 0");
  require(max_iter >= 1, "square: max_iter must be >= 1");
  require(init_fraction > 0.0 && init_fraction <= 1.0, "square: init_fraction must be in (0, 1]");
  detail::check_box(box, "square");
}

SquareConfig SquareConfig::l2_defaults() {
  SquareConfig c;
  c.norm = SquareNorm::L2;
  c.eps = 1.0;
  c.max_iter = 2000;
  c.init_fraction = 0.8;
  return c;
}

void AutoAttackConfig::validate() const {
  require(positive(eps), "autoattack: eps must be > 0");
  require(apgd_iter >= 1, "autoattack: apgd_iter must be >= 1");
  require(square_iter >= 1, "autoattack: square_iter must be >= 1");
  detail::check_box(box, "autoattack");
}

void ZooConfig::validate() const {
  require(max_iter >= 1, "zoo: max_iter must be >= 1");
  require(bs_steps >= 1, "zoo: bs_steps must be >= 1");
  require(positive(c0), "zoo: c0 must be > 0");
  require(positive(h), "zoo: h must be > 0");
  require(positive(lr), "zoo: lr must be > 0");
  require(coords_per_iter >= 1, "zoo: coords_per_iter must be >= 1");
  require(std::isfinite(kappa) && kappa >= 0.0, "zoo: kappa must be >= 0");
  detail::check_box(box, "zoo");
}

void BoundaryConfig::validate() const {
  require(positive(eps), "boundary: eps must be > 0");
  require(positive(delta), "boundary: delta must be > 0");
  require(init_size >= 1, "boundary: init_size must be >= 1");
  require(max_iter >= 1, "boundary: max_iter must be >= 1");
  require(trials >= 1, "boundary: trials must be >= 1");
  require(step_adapt > 0.0 && step_adapt < 1.0, "boundary: step_adapt must be in (0, 1)");
  detail::check_box(box, "boundary");
}

void GeoDaConfig::validate() const {
  require(positive(bs_tol), "geoda: bs_tol must be > 0");
  require(dct_dim >= 1, "geoda: dct_dim must be >= 1");
  require(max_iter >= 1, "geoda: max_iter must be >= 1");
  require(probes >= 1, "geoda: probes must be >= 1");
  require(positive(sigma), "geoda: sigma must be > 0");
  require(init_size >= 1, "geoda: init_size must be >= 1");
  detail::check_box(box, "geoda");
}

// ---- building blocks -------------------------------------------------------------

double jsma_saliency(double target_grad, double others_grad) {
  if (target_grad < 0.0 || others_grad > 0.0) return 0.0;
  return target_grad * std::abs(others_grad);
}

double tanh_to_box(double w, const Box& box) {
  return box.lo + (std::tanh(w) + 1.0) / 2.0 * (double(box.hi) - box.lo);
}

double box_to_tanh(double v, const Box& box) {
  // keep atanh finite at the box edges
  const double u = 2.0 * (v - box.lo) / (double(box.hi) - box.lo) - 1.0;
  return std::atanh(std::clamp(u, -1.0 + 1e-6, 1.0 - 1e-6));
}

double soft_threshold(double z, double t) {
  const double m = std::abs(z) - t;
  if (m <= 0.0) return 0.0;
  return z > 0.0 ? m : -m;
}

double cw_objective(double l2_squared, double margin, double c) { return l2_squared + c * margin; }

double ead_objective(double l1, double l2_squared, double margin, double c, double beta) {
  return cw_objective(l2_squared, margin, c) + beta * l1;
}

double margin_loss(std::span<const float> z, int y, double kappa) {
  if (y < 0 || std::size_t(y) >= z.size() || z.size() < 2)
    throw InvalidArgument("margin_loss: label out of range");
  const std::size_t j = detail::runner_up(z, y);
  return std::max(double(z[std::size_t(y)]) - double(z[j]), -kappa);
}

double dlr_loss(std::span<const float> z, int y) {
  if (y < 0 || std::size_t(y) >= z.size() || z.size() < 2)
    throw InvalidArgument("dlr_loss: label out of range");
  const std::size_t j = detail::runner_up(z, y);
  const double num = double(z[std::size_t(y)]) - double(z[j]);
  if (z.size() < 3) return -num;
  std::vector<double> s(z.begin(), z.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  return -num / (s[0] - s[2] + 1e-12);
}

double zoo_coordinate_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               std::size_t i, double h) {
  if (!(h > 0.0)) throw InvalidArgument("zoo: h must be > 0");
  if (i >= x.size()) throw InvalidArgument("zoo: coordinate " + std::to_string(i) + " out of range");
  Tensor xp = x, xm = x;
  xp[i] = float(double(x[i]) + h);
  xm[i] = float(double(x[i]) - h);
  const double step = double(xp[i]) - double(xm[i]);
  if (!(step > 0.0)) throw NumericDomainError("zoo: step vanished at coordinate " + std::to_string(i));
  return (f(xp) - f(xm)) / step;
}

ApgdSchedule::ApgdSchedule(std::size_t max_iter, double initial_step, double rho)
    : step_(initial_step), rho_(rho) {
  if (max_iter < 1) throw InvalidArgument("apgd: max_iter must be >= 1");
  double prev = 0.0, p = 0.22;
  while (p <= 1.0) {
    const auto w = std::size_t(std::ceil(p * double(max_iter) - 1e-9));
    if (w >= 1 && (checkpoints_.empty() || w > checkpoints_.back())) checkpoints_.push_back(w);
    const double next = p + std::max(p - prev - 0.03, 0.06);
    prev = p;
    p = next;
  }
}

bool ApgdSchedule::record(std::size_t iter, bool increased) {
  if (increased) ++increases_;
  if (next_ >= checkpoints_.size() || iter != checkpoints_[next_]) return false;
  const double window = double(iter - last_);
  const bool halve = double(increases_) < rho_ * window;
  if (halve) step_ /= 2.0;
  last_ = iter;
  increases_ = 0;
  ++next_;
  return halve;
}

}  // namespace qadv
