#include "qadv/metrics.hpp"

#include <cmath>

#include "qadv/error.hpp"

namespace qadv {

double distortion(const Tensor& orig, const Tensor& adv, Norm norm) {
  if (orig.shape() != adv.shape())
    throw InvalidArgument("distortion: shape " + shape_string(orig.shape()) + " vs " + shape_string(adv.shape()));
  const Distortion d = compute_distortion(adv, orig);
  switch (norm) {
    case Norm::L0: return d.l0;
    case Norm::L1: return d.l1;
    case Norm::L2: return d.l2;
    case Norm::Linf: return d.linf;
  }
  return 0.0;
}

DistortionStats distortion_stats(const std::vector<AdversarialResult>& results) {
  DistortionStats s;
  auto add = [](NormMeans& m, const Distortion& d) {
    m.l0 += d.l0;
    m.l1 += d.l1;
    m.l2 += d.l2;
    m.linf += d.linf;
  };
  auto finish = [](NormMeans& m, std::size_t n) {
    if (n == 0) return;
    m.l0 /= double(n);
    m.l1 /= double(n);
    m.l2 /= double(n);
    m.linf /= double(n);
  };
  for (const auto& r : results) {
    add(s.all, r.distortion);
    ++s.n_all;
    if (r.success) {
      add(s.success, r.distortion);
      ++s.n_success;
    }
  }
  finish(s.all, s.n_all);
  finish(s.success, s.n_success);
  return s;
}

double adversarial_accuracy(const std::function<int(const Tensor&)>& classify,
                            const std::vector<AdversarialResult>& results) {
  if (results.empty()) throw InvalidArgument("adversarial accuracy: no results");
  std::size_t correct = 0;
  for (const auto& r : results) correct += classify(r.adversarial) == r.original_label;
  return double(correct) / double(results.size());
}

double adversarial_accuracy(const DecisionOracle& oracle, const std::vector<AdversarialResult>& results) {
  return adversarial_accuracy([&](const Tensor& x) { return oracle.decide(x); }, results);
}

double gradient_zero_density(const std::function<double(const Tensor&)>& f,
                             const std::vector<Tensor>& samples, double h, double tol) {
  if (!(h > 0.0)) throw InvalidArgument("zero density: h must be > 0");
  if (samples.empty()) throw InvalidArgument("zero density: no samples");
  double total = 0.0;
  for (const auto& x : samples) {
    const Tensor g = finite_difference_gradient(f, x, h);
    std::size_t zeros = 0;
    for (float v : g.data()) zeros += std::abs(double(v)) <= tol;
    total += double(zeros) / double(g.size());
  }
  return total / double(samples.size());
}

CosineSimilarity gradient_cosine_similarity(const GradientOracle& reference, const GradientOracle& other,
                                            const std::vector<Tensor>& samples,
                                            const std::vector<int>& labels) {
  if (reference.input_shape() != other.input_shape())
    throw InvalidArgument("cosine similarity: models take different input shapes");
  if (samples.size() != labels.size()) throw InvalidArgument("cosine similarity: samples/labels size mismatch");
  CosineSimilarity out;
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor a = reference.loss_gradient(samples[i], labels[i]).grad;
    const Tensor b = other.loss_gradient(samples[i], labels[i]).grad;
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
      ++out.zero_gradient;
      continue;
    }
    sum += dot(a, b) / (na * nb);
    ++out.used;
  }
  if (out.used == 0)
    throw UndefinedSimilarity("cosine similarity: gradients vanish on all " + std::to_string(samples.size()) +
                              " samples");
  out.mean = sum / double(out.used);
  return out;
}

BoundaryDistance boundary_distance(const GradientOracle& g, const std::vector<Tensor>& samples,
                                   const std::vector<int>& labels, const DeepFoolConfig& cfg) {
  if (samples.size() != labels.size()) throw InvalidArgument("boundary distance: samples/labels size mismatch");
  BoundaryDistance out;
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (g.predict(samples[i]) != labels[i]) {
      ++out.skipped;
      continue;
    }
    try {
      sum += deepfool(g, samples[i], labels[i], cfg).distortion.l2;
      ++out.measured;
    } catch (const GradientDegenerate&) {
      ++out.degenerate;
    }
  }
  if (out.measured > 0) out.mean = sum / double(out.measured);
  return out;
}

}  // namespace qadv
