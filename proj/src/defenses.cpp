#include "qadv/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "attack_util.hpp"
#include "qadv/error.hpp"
#include "qadv/io.hpp"
#include "qadv/ops.hpp"

namespace qadv {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

void tag(ModelGraph& m, const std::string& kind, const std::string& config) {
  m.metadata()["defense"] = kind;
  m.metadata()["defense_config"] = config;
  std::ostringstream h;
  h << std::hex << fnv1a(config);
  m.metadata()["defense_config_hash"] = h.str();
}

std::string describe(const TrainConfig& t) {
  std::ostringstream s;
  s << "epochs=" << t.epochs << ";batch=" << t.batch_size << ";lr=" << t.learning_rate
    << ";seed=" << t.seed;
  return s.str();
}

std::string describe(const AdvTrainConfig& c) {
  std::ostringstream s;
  s << "eps=" << c.eps << ";step=" << c.step << ";iters=" << c.iters << ";" << describe(c.train);
  return s.str();
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t epoch, std::size_t idx) {
  return mix_seed(mix_seed(seed, epoch), idx);
}

// Cross-entropy at temperature T, scaled by T so logit gradients keep the
// magnitude of plain cross-entropy.
BatchObjective tempered_objective(const std::vector<Tensor>& images,
                                  const std::vector<Tensor>& targets, double T) {
  return [&images, &targets, T](const ModelGraph& model, std::span<const std::size_t> batch,
                                std::size_t) {
    BatchGradient total{0.0, zero_grads(model)};
    const float w = 1.0f / float(batch.size());
    for (auto idx : batch) {
      const Tensor& target = targets[idx];
      auto g = sample_gradient(model, images[idx], [&](Tape& t, const ModelGraph::Recorded& r) {
        const Var ce = t.cross_entropy(t.scale(r.logits(), float(1.0 / T)), target);
        return t.scale(ce, float(T));
      });
      total.loss += g.loss * w;
      accumulate(total.grads, g.grads, w);
    }
    return total;
  };
}

Tensor one_hot(int y, std::size_t classes) {
  Tensor t({classes});
  t[std::size_t(y)] = 1.0f;
  return t;
}

// CE on PGD examples crafted against the current parameters.
BatchGradient pgd_batch(const ModelGraph& model, const Dataset& data, const AdvTrainConfig& cfg,
                        std::span<const std::size_t> batch, std::size_t epoch,
                        std::vector<Tensor>* adv_out) {
  const GradientOracle g(model);
  BatchGradient total{0.0, zero_grads(model)};
  const float w = 1.0f / float(batch.size());
  for (auto idx : batch) {
    const int label = data.labels[idx];
    Tensor xa = pgd_perturb(g, data.images[idx], label, cfg.eps, cfg.step, cfg.iters, true,
                            sample_seed(cfg.train.seed, epoch, idx));
    auto sg = sample_gradient(model, xa, [label](Tape& t, const ModelGraph::Recorded& r) {
      return t.cross_entropy(r.logits(), label);
    });
    total.loss += sg.loss * w;
    accumulate(total.grads, sg.grads, w);
    if (adv_out) adv_out->push_back(std::move(xa));
  }
  return total;
}

}  // namespace

// ---- configs ---------------------------------------------------------------------

void DistillationConfig::validate() const {
  require(std::isfinite(temperature) && temperature >= 1.0, "distillation: temperature must be >= 1");
  require(alpha >= 0.0 && alpha <= 1.0, "distillation: alpha must be in [0, 1]");
  train.validate();
}

void AdvTrainConfig::validate() const {
  require(std::isfinite(eps) && eps > 0.0, "adversarial training: eps must be > 0");
  require(std::isfinite(step) && step > 0.0, "adversarial training: step must be > 0");
  require(step <= eps, "adversarial training: step must be <= eps");
  require(iters >= 1, "adversarial training: iters must be >= 1");
  train.validate();
}

AdvTrainConfig AdvTrainConfig::defaults() {
  AdvTrainConfig c;
  c.train.epochs = 50;
  return c;
}

void EnsembleAdvTrainConfig::validate() const {
  pgd.validate();
  require(std::isfinite(fgsm_eps) && fgsm_eps > 0.0, "ensemble training: fgsm eps must be > 0");
}

void SinkhornConfig::validate() const {
  require(std::isfinite(eps) && eps > 0.0, "sinkhorn: eps must be > 0");
  require(iters >= 1, "sinkhorn: iters must be >= 1");
}

void SinkhornAdvTrainConfig::validate() const {
  pgd.validate();
  sinkhorn.validate();
  require(std::isfinite(weight) && weight >= 0.0, "sinkhorn training: weight must be >= 0");
}

// ---- distillation -------------------------------------------------------------------

Tensor tempered_softmax(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("softmax temperature must be > 0");
  return ops::softmax(logits * float(1.0 / temperature));
}

TrainResult distill_train(const ModelGraph& init, const Dataset& data, const DistillationConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("distillation: empty dataset");
  const double T = cfg.temperature;
  std::vector<Tensor> hard;
  hard.reserve(data.size());
  for (int y : data.labels) hard.push_back(one_hot(y, data.classes));
  const auto teacher_obj = tempered_objective(data.images, hard, T);
  const TrainResult teacher = train_with_objective(init, data, cfg.train, teacher_obj);

  std::vector<Tensor> blended;
  blended.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor soft = tempered_softmax(teacher.model.forward(data.images[i]), T);
    Tensor t(soft.shape());
    for (std::size_t k = 0; k < t.size(); ++k)
      t[k] = float(cfg.alpha * hard[i][k] + (1.0 - cfg.alpha) * soft[k]);
    blended.push_back(std::move(t));
  }
  const auto student_obj = tempered_objective(data.images, blended, T);
  TrainResult student = train_with_objective(init, data, cfg.train, student_obj);
  std::ostringstream s;
  s << "temperature=" << T << ";alpha=" << cfg.alpha << ";" << describe(cfg.train);
  tag(student.model, "distillation", s.str());
  return student;
}

// ---- adversarial training -------------------------------------------------------------

TrainResult pgd_adversarial_train(const ModelGraph& init, const Dataset& data, const AdvTrainConfig& cfg) {
  cfg.validate();
  const BatchObjective obj = [&](const ModelGraph& model, std::span<const std::size_t> batch,
                                 std::size_t epoch) {
    return pgd_batch(model, data, cfg, batch, epoch, nullptr);
  };
  TrainResult r = train_with_objective(init, data, cfg.train, obj);
  tag(r.model, "pgd_adversarial_training", describe(cfg));
  return r;
}

Dataset ensemble_adversarial_pool(const Dataset& data, const std::vector<ModelGraph>& sources,
                                  const EnsembleAdvTrainConfig& cfg) {
  cfg.validate();
  if (sources.empty()) throw InvalidArgument("ensemble training: needs at least one source model");
  Dataset pool = data;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (sources[s].input_shape() != data.images.front().shape() || sources[s].classes() != data.classes)
      throw InvalidArgument("ensemble training: source model " + std::to_string(s) +
                            " does not match the dataset");
    const GradientOracle g(sources[s]);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const int y = data.labels[i];
      Tensor xa = i % 2 == 0
                      ? pgd_perturb(g, data.images[i], y, cfg.fgsm_eps, cfg.fgsm_eps, 1, false, 0)
                      : pgd_perturb(g, data.images[i], y, cfg.pgd.eps, cfg.pgd.step, cfg.pgd.iters,
                                    true, sample_seed(cfg.pgd.train.seed, s, i));
      pool.images.push_back(std::move(xa));
      pool.labels.push_back(y);
    }
  }
  return pool;
}

TrainResult ensemble_adversarial_train(const ModelGraph& init, const Dataset& data,
                                       const std::vector<ModelGraph>& sources,
                                       const EnsembleAdvTrainConfig& cfg) {
  const Dataset pool = ensemble_adversarial_pool(data, sources, cfg);
  TrainResult r = train(init, pool, cfg.pgd.train);
  std::ostringstream s;
  s << describe(cfg.pgd) << ";fgsm_eps=" << cfg.fgsm_eps << ";sources=" << sources.size();
  tag(r.model, "ensemble_adversarial_training", s.str());
  return r;
}

TrainResult sinkhorn_adversarial_train(const ModelGraph& init, const Dataset& data,
                                       const SinkhornAdvTrainConfig& cfg) {
  cfg.validate();
  const BatchObjective obj = [&](const ModelGraph& model, std::span<const std::size_t> batch,
                                 std::size_t epoch) {
    std::vector<Tensor> adv;
    BatchGradient total = pgd_batch(model, data, cfg.pgd, batch, epoch, &adv);
    if (cfg.weight == 0.0) return total;

    Tape tape;
    const std::size_t feat = model.feature_layer();
    std::vector<ModelGraph::Recorded> recs;
    PointCloud a, b;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      recs.push_back(model.record(tape, data.images[batch[k]], false, true));
      const auto v = tape.value(recs.back().outputs[feat]).data();
      a.points.emplace_back(v.begin(), v.end());
      recs.push_back(model.record(tape, adv[k], false, true));
      const auto u = tape.value(recs.back().outputs[feat]).data();
      b.points.emplace_back(u.begin(), u.end());
    }
    const SinkhornValue sv = sinkhorn_divergence_grad(a, b, cfg.sinkhorn);
    if (!std::isfinite(sv.value)) {
      total.loss = sv.value;  // reported as divergence by the driver
      return total;
    }
    std::vector<std::pair<Var, Tensor>> seeds;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      for (int side = 0; side < 2; ++side) {
        const Var out = recs[2 * k + side].outputs[feat];
        const auto& gsrc = side == 0 ? sv.grad_a[k] : sv.grad_b[k];
        Tensor s(tape.value(out).shape());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = float(cfg.weight * gsrc[i]);
        seeds.emplace_back(out, std::move(s));
      }
    }
    const Gradients gr = backward(tape, seeds);
    for (const auto& rec : recs)
      for (std::size_t i = 0; i < rec.params.size(); ++i)
        for (std::size_t s = 0; s < rec.params[i].size(); ++s) {
          auto dst = total.grads[i][s].data();
          auto src = gr[rec.params[i][s]].data();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    total.loss += cfg.weight * sv.value;
    return total;
  };
  TrainResult r = train_with_objective(init, data, cfg.pgd.train, obj);
  std::ostringstream s;
  s << describe(cfg.pgd) << ";sink_eps=" << cfg.sinkhorn.eps << ";sink_iters=" << cfg.sinkhorn.iters
    << ";reduction=" << (cfg.sinkhorn.reduction == SinkhornReduction::Sum ? "sum" : "mean")
    << ";weight=" << cfg.weight;
  tag(r.model, "sinkhorn_adversarial_training", s.str());
  return r;
}

// ---- Sinkhorn ----------------------------------------------------------------------------

namespace {

using Matrix = std::vector<std::vector<double>>;

std::vector<double> log_weights(const PointCloud& c, const char* which) {
  const std::size_t n = c.points.size();
  if (n == 0) throw InvalidArgument(std::string("sinkhorn: empty point set ") + which);
  if (c.weights.empty()) return std::vector<double>(n, -std::log(double(n)));
  if (c.weights.size() != n) throw InvalidArgument(std::string("sinkhorn: weight count mismatch in ") + which);
  double s = 0.0;
  for (double w : c.weights) {
    if (!(w > 0.0)) throw InvalidArgument(std::string("sinkhorn: weights must be > 0 in ") + which);
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-6) throw InvalidArgument(std::string("sinkhorn: weights must sum to 1 in ") + which);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::log(c.weights[i]);
  return out;
}

double cost_scale(const PointCloud& a, const SinkhornConfig& cfg) {
  return cfg.reduction == SinkhornReduction::Mean ? 1.0 / double(a.points.front().size()) : 1.0;
}

Matrix cost_matrix(const PointCloud& a, const PointCloud& b, double scale) {
  const std::size_t d = a.points.front().size();
  Matrix C(a.points.size(), std::vector<double>(b.points.size()));
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (a.points[i].size() != d) throw InvalidArgument("sinkhorn: ragged points");
    for (std::size_t j = 0; j < b.points.size(); ++j) {
      if (b.points[j].size() != d) throw InvalidArgument("sinkhorn: point dimensions differ");
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a.points[i][k] - b.points[j][k];
        s += diff * diff;
      }
      C[i][j] = s * scale;
      if (!std::isfinite(C[i][j])) throw NumericDomainError("sinkhorn: non-finite cost matrix");
    }
  }
  return C;
}

double lse(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

struct Transport {
  double value;
  Matrix plan;
};

// Symmetric (averaged, simultaneous) log-domain iterations.
Transport entropic_ot(const std::vector<double>& la, const std::vector<double>& lb, const Matrix& C,
                      double eps, std::size_t iters) {
  const std::size_t n = la.size(), m = lb.size();
  std::vector<double> f(n, 0.0), g(m, 0.0), buf;
  for (std::size_t t = 0; t < iters; ++t) {
    std::vector<double> fn(n), gn(m);
    for (std::size_t i = 0; i < n; ++i) {
      buf.resize(m);
      for (std::size_t j = 0; j < m; ++j) buf[j] = lb[j] + (g[j] - C[i][j]) / eps;
      fn[i] = -eps * lse(buf);
    }
    for (std::size_t j = 0; j < m; ++j) {
      buf.resize(n);
      for (std::size_t i = 0; i < n; ++i) buf[i] = la[i] + (f[i] - C[i][j]) / eps;
      gn[j] = -eps * lse(buf);
    }
    for (std::size_t i = 0; i < n; ++i) f[i] = 0.5 * (f[i] + fn[i]);
    for (std::size_t j = 0; j < m; ++j) g[j] = 0.5 * (g[j] + gn[j]);
  }
  Transport out{0.0, Matrix(n, std::vector<double>(m))};
  for (std::size_t i = 0; i < n; ++i) out.value += std::exp(la[i]) * f[i];
  for (std::size_t j = 0; j < m; ++j) out.value += std::exp(lb[j]) * g[j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.plan[i][j] = std::exp(la[i] + lb[j] + (f[i] + g[j] - C[i][j]) / eps);
  return out;
}

// sum_j P_ij * d c(x_i, y_j) / d x_i with c = scale * |x - y|^2.
Matrix plan_gradient(const PointCloud& x, const PointCloud& y, const Matrix& P, double scale, double factor) {
  Matrix g(x.points.size(), std::vector<double>(x.points.front().size(), 0.0));
  for (std::size_t i = 0; i < x.points.size(); ++i)
    for (std::size_t j = 0; j < y.points.size(); ++j)
      for (std::size_t k = 0; k < g[i].size(); ++k)
        g[i][k] += factor * P[i][j] * 2.0 * scale * (x.points[i][k] - y.points[j][k]);
  return g;
}

}  // namespace

SinkhornValue sinkhorn_divergence_grad(const PointCloud& a, const PointCloud& b, const SinkhornConfig& cfg) {
  cfg.validate();
  const auto la = log_weights(a, "A"), lb = log_weights(b, "B");
  const double sc = cost_scale(a, cfg);
  const Transport ab = entropic_ot(la, lb, cost_matrix(a, b, sc), cfg.eps, cfg.iters);
  const Transport aa = entropic_ot(la, la, cost_matrix(a, a, sc), cfg.eps, cfg.iters);
  const Transport bb = entropic_ot(lb, lb, cost_matrix(b, b, sc), cfg.eps, cfg.iters);
  SinkhornValue out;
  out.value = ab.value - 0.5 * aa.value - 0.5 * bb.value;

  Matrix pba(b.points.size(), std::vector<double>(a.points.size()));
  for (std::size_t i = 0; i < a.points.size(); ++i)
    for (std::size_t j = 0; j < b.points.size(); ++j) pba[j][i] = ab.plan[i][j];
  out.grad_a = plan_gradient(a, b, ab.plan, sc, 1.0);
  out.grad_b = plan_gradient(b, a, pba, sc, 1.0);
  // self terms: both arguments move, so -1/2 * 2 = -1
  const Matrix ga = plan_gradient(a, a, aa.plan, sc, -1.0);
  const Matrix gb = plan_gradient(b, b, bb.plan, sc, -1.0);
  for (std::size_t i = 0; i < ga.size(); ++i)
    for (std::size_t k = 0; k < ga[i].size(); ++k) out.grad_a[i][k] += ga[i][k];
  for (std::size_t i = 0; i < gb.size(); ++i)
    for (std::size_t k = 0; k < gb[i].size(); ++k) out.grad_b[i][k] += gb[i][k];
  return out;
}

double sinkhorn_divergence(const PointCloud& a, const PointCloud& b, const SinkhornConfig& cfg) {
  return sinkhorn_divergence_grad(a, b, cfg).value;
}

// ---- feature squeezing -------------------------------------------------------------------

void FeatureSqueezeConfig::validate() const {
  require(bit_depth >= 1 && bit_depth <= 8, "feature squeezing: bit depth must be in [1, 8]");
  require(window >= 1, "feature squeezing: window must be >= 1");
  require(std::isfinite(detect_threshold) && detect_threshold >= 0.0,
          "feature squeezing: detect threshold must be >= 0");
}

std::size_t FeatureSqueezeConfig::effective_window() const { return odd_window(window); }

std::size_t odd_window(std::size_t window) {
  if (window == 0) throw InvalidArgument("feature squeezing: window must be >= 1");
  if (window % 2 == 1) return window;
  return std::max<std::size_t>(window - 1, 3);
}

Tensor reduce_bit_depth(const Tensor& x, int bit_depth) {
  if (bit_depth < 1 || bit_depth > 8) throw InvalidArgument("feature squeezing: bit depth must be in [1, 8]");
  const double levels = double((1 << bit_depth) - 1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(double(x[i]), 0.0, 1.0);
    out[i] = float(std::round(v * levels) / levels);
  }
  return out;
}

Tensor median_filter(const Tensor& x, std::size_t window) {
  if (window == 0 || window % 2 == 0)
    throw InvalidArgument("feature squeezing: median window must be odd, got " + std::to_string(window));
  std::size_t C, H, W;
  detail::image_dims(x.shape(), C, H, W);
  const long r = long(window / 2);
  Tensor out(x.shape());
  std::vector<float> buf;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        buf.clear();
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const auto yy = std::size_t(std::clamp(long(h) + dy, 0L, long(H) - 1));
            const auto xx = std::size_t(std::clamp(long(w) + dx, 0L, long(W) - 1));
            buf.push_back(x[(c * H + yy) * W + xx]);
          }
        std::nth_element(buf.begin(), buf.begin() + long(buf.size() / 2), buf.end());
        out[(c * H + h) * W + w] = buf[buf.size() / 2];
      }
  return out;
}

Tensor feature_squeeze(const Tensor& x, int bit_depth, std::size_t window) {
  return median_filter(reduce_bit_depth(x, bit_depth), window);
}

SqueezeDetection squeeze_detect(const ScoreOracle& score, const Tensor& x, const FeatureSqueezeConfig& cfg) {
  cfg.validate();
  const auto p = score.probabilities(x);
  const auto q = score.probabilities(feature_squeeze(x, cfg.bit_depth, cfg.effective_window()));
  SqueezeDetection d;
  for (std::size_t k = 0; k < p.size(); ++k) d.l1_margin += std::abs(p[k] - q[k]);
  d.adversarial = d.l1_margin > cfg.detect_threshold;
  return d;
}

ScoreOracle squeezed(const ScoreOracle& inner, const FeatureSqueezeConfig& cfg) {
  cfg.validate();
  const int b = cfg.bit_depth;
  const std::size_t w = cfg.effective_window();
  return ScoreOracle([inner, b, w](const Tensor& x) { return inner.probabilities(feature_squeeze(x, b, w)); },
                     inner.input_shape(), inner.classes());
}

DecisionOracle squeezed(const DecisionOracle& inner, const FeatureSqueezeConfig& cfg) {
  cfg.validate();
  const int b = cfg.bit_depth;
  const std::size_t w = cfg.effective_window();
  return DecisionOracle([inner, b, w](const Tensor& x) { return inner.decide(feature_squeeze(x, b, w)); },
                        inner.input_shape(), inner.classes());
}

}  // namespace qadv
