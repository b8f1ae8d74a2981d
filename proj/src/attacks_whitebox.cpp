#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "attack_util.hpp"
#include "qadv/error.hpp"

namespace qadv {

namespace {

using detail::argmax_of;
using detail::runner_up;

std::size_t spent(const GradientOracle& g, std::size_t f0, std::size_t g0) {
  return (g.forward_queries() - f0) + (g.gradient_queries() - g0);
}

struct Counter {
  const GradientOracle& g;
  std::size_t f0, g0;
  explicit Counter(const GradientOracle& o) : g(o), f0(o.forward_queries()), g0(o.gradient_queries()) {}
  std::size_t operator()() const { return spent(g, f0, g0); }
};

void check_label(const GradientOracle& g, const Tensor& x, int y, const char* who) {
  if (x.shape() != g.input_shape())
    throw InvalidArgument(std::string(who) + ": input shape " + shape_string(x.shape()) +
                          " != model input " + shape_string(g.input_shape()));
  if (y < 0 || std::size_t(y) >= g.classes())
    throw InvalidArgument(std::string(who) + ": label " + std::to_string(y) + " out of range");
}

Tensor sign_of(const Tensor& t) {
  Tensor s(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) s[i] = t[i] > 0.0f ? 1.0f : (t[i] < 0.0f ? -1.0f : 0.0f);
  return s;
}

// Seed of c * (Z_y - Z_j*) when the margin is above -kappa, else zero.
Tensor margin_seed(const Tensor& z, int y, double kappa, double c) {
  Tensor s(z.shape());
  const std::size_t j = runner_up(z.values(), y);
  if (double(z[std::size_t(y)]) - double(z[j]) > -kappa) {
    s[std::size_t(y)] = float(c);
    s[j] = float(-c);
  }
  return s;
}

// Projected signed-gradient ascent on the cross-entropy. Shared by FGSM and PGD.
AdversarialResult pgd_core(const GradientOracle& g, const Tensor& x, int y, double eps, double step,
                           std::size_t restarts, std::size_t max_iter, bool random_init,
                           std::uint64_t seed, const Box& box) {
  const Counter spent_now(g);
  const Tensor x0 = detail::clip_box(x, box);
  std::size_t iters = 0;
  for (std::size_t r = 0; r < restarts; ++r) {
    Tensor xi = x0;
    if (random_init) {
      Rng rng(mix_seed(seed, r));
      for (std::size_t i = 0; i < xi.size(); ++i) xi[i] = float(double(x0[i]) + rng.uniform(-eps, eps));
    }
    xi = detail::project_linf(x0, xi, eps, box);
    for (std::size_t t = 0;; ++t) {
      if (t == max_iter) {
        const int p = g.predict(xi);
        if (p != y) return make_result(x, y, xi, p, spent_now(), iters);
        break;
      }
      const auto lg = g.loss_gradient(xi, y);
      const int p = int(argmax(lg.logits));
      if (p != y) return make_result(x, y, xi, p, spent_now(), iters);
      if (!lg.grad.all_finite()) throw GradientDegenerate("pgd: non-finite loss gradient");
      xi = detail::project_linf(x0, xi + sign_of(lg.grad) * float(step), eps, box);
      ++iters;
    }
  }
  return make_result(x, y, x, y, spent_now(), iters);
}

// Binary search over c shared by C&W-L2 and EAD. `round` runs one inner
// optimisation at the given constant and returns whether it succeeded.
template <class Round>
void search_constant(std::size_t bs_steps, double c0, Round round) {
  double c = c0, lo = 0.0, hi = 1e10;
  for (std::size_t b = 0; b < bs_steps; ++b) {
    if (round(c)) {
      hi = std::min(hi, c);
      c = (lo + hi) / 2.0;
    } else {
      lo = std::max(lo, c);
      c = hi < 1e10 ? (lo + hi) / 2.0 : c * 10.0;
    }
  }
}

Tensor from_tanh(const std::vector<double>& w, const Shape& shape, const Box& box) {
  Tensor t(shape);
  for (std::size_t i = 0; i < w.size(); ++i) t[i] = detail::clampf(tanh_to_box(w[i], box), box);
  return t;
}

std::vector<double> to_tanh(const Tensor& x, const Box& box) {
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) w[i] = box_to_tanh(x[i], box);
  return w;
}

double dtanh_box(double w, const Box& box) {
  const double t = std::tanh(w);
  return (1.0 - t * t) / 2.0 * (double(box.hi) - box.lo);
}

}  // namespace

Tensor pgd_perturb(const GradientOracle& g, const Tensor& x, int y, double eps, double step,
                   std::size_t iters, bool random_init, std::uint64_t seed, const Box& box) {
  if (!(eps >= 0.0) || !(step >= 0.0)) throw InvalidArgument("pgd: eps and step must be >= 0");
  detail::check_box(box, "pgd");
  check_label(g, x, y, "pgd");
  const Tensor x0 = detail::clip_box(x, box);
  Tensor xi = x0;
  if (random_init) {
    Rng rng(seed);
    for (std::size_t i = 0; i < xi.size(); ++i) xi[i] = float(double(x0[i]) + rng.uniform(-eps, eps));
    xi = detail::project_linf(x0, xi, eps, box);
  }
  for (std::size_t t = 0; t < iters; ++t) {
    const auto lg = g.loss_gradient(xi, y);
    if (!lg.grad.all_finite()) throw GradientDegenerate("pgd: non-finite loss gradient");
    xi = detail::project_linf(x0, xi + sign_of(lg.grad) * float(step), eps, box);
  }
  return xi;
}

AdversarialResult fgsm(const GradientOracle& g, const Tensor& x, int y, const FgsmConfig& cfg) {
  cfg.validate();
  check_label(g, x, y, "fgsm");
  return pgd_core(g, x, y, cfg.eps, cfg.eps, 1, 1, false, 0, cfg.box);
}

AdversarialResult pgd(const GradientOracle& g, const Tensor& x, int y, const PgdConfig& cfg) {
  cfg.validate();
  check_label(g, x, y, "pgd");
  return pgd_core(g, x, y, cfg.eps, cfg.step, cfg.restarts, cfg.max_iter, cfg.random_init, cfg.seed,
                  cfg.box);
}

AdversarialResult deepfool(const GradientOracle& g, const Tensor& x, int y, const DeepFoolConfig& cfg) {
  cfg.validate();
  check_label(g, x, y, "deepfool");
  const Counter spent_now(g);
  const int p0 = g.predict(x);
  if (p0 != y) return make_result(x, y, x, p0, spent_now(), 0);

  std::vector<double> r_tot(x.size(), 0.0);
  Tensor xi = x;
  int pred = p0;
  std::size_t it = 0;
  while (pred == y && it < cfg.max_iter) {
    Tensor z;
    const auto J = g.logit_jacobian(xi, &z);
    const std::size_t yi = std::size_t(y);
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> w_best;
    double f_best = 0.0;
    for (std::size_t k = 0; k < J.size(); ++k) {
      if (k == yi) continue;
      std::vector<double> w(x.size());
      double n2 = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = double(J[k][i]) - double(J[yi][i]);
        n2 += w[i] * w[i];
      }
      if (!std::isfinite(n2)) throw GradientDegenerate("deepfool: non-finite gradient");
      if (n2 == 0.0) continue;
      const double f = double(z[k]) - double(z[yi]);
      const double d = std::abs(f) / std::sqrt(n2);
      if (d < best) {
        best = d;
        w_best = std::move(w);
        f_best = f;
      }
    }
    if (w_best.empty()) throw GradientDegenerate("deepfool: all class-difference gradients are zero");
    double n2 = 0.0;
    for (double v : w_best) n2 += v * v;
    const double scale = std::abs(f_best) / n2;
    for (std::size_t i = 0; i < x.size(); ++i) r_tot[i] += scale * w_best[i];
    for (std::size_t i = 0; i < x.size(); ++i)
      xi[i] = detail::clampf(double(x[i]) + (1.0 + cfg.overshoot) * r_tot[i], cfg.box);
    ++it;
    pred = g.predict(xi);
  }
  return make_result(x, y, xi, pred, spent_now(), it);
}

AdversarialResult jsma(const GradientOracle& g, const Tensor& x, int y, const JsmaConfig& cfg) {
  cfg.validate();
  check_label(g, x, y, "jsma");
  const Counter spent_now(g);
  const Tensor z0 = g.logits(x);
  const int p0 = int(argmax(z0));
  if (p0 != y) return make_result(x, y, x, p0, spent_now(), 0);

  const std::size_t target = runner_up(z0.values(), y);
  const std::size_t budget = std::size_t(std::floor(cfg.gamma * double(x.size())));
  std::set<std::size_t> touched;
  Tensor xi = x;
  int pred = p0;
  std::size_t it = 0;
  while (true) {
    Tensor z;
    const auto J = g.logit_jacobian(xi, &z);
    pred = int(argmax(z));
    if (pred != y) break;
    const bool full = touched.size() >= budget;
    double best = 0.0;
    std::size_t pick = x.size();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (xi[i] >= cfg.box.hi) continue;
      if (full && !touched.count(i)) continue;
      double others = 0.0;
      for (std::size_t k = 0; k < J.size(); ++k)
        if (k != target) others += double(J[k][i]);
      const double s = jsma_saliency(double(J[target][i]), others);
      if (s > best) {
        best = s;
        pick = i;
      }
    }
    if (pick == x.size()) break;
    xi[pick] = detail::clampf(double(xi[pick]) + cfg.theta, cfg.box);
    touched.insert(pick);
    ++it;
  }
  return make_result(x, y, xi, pred, spent_now(), it);
}

AdversarialResult cw_l2(const GradientOracle& g, const Tensor& x, int y, const CwL2Config& cfg) {
  cfg.validate();
  check_label(g, x, y, "cw-l2");
  const Counter spent_now(g);
  const int p0 = g.predict(x);
  if (p0 != y) return make_result(x, y, x, p0, spent_now(), 0);

  const std::vector<double> w0 = to_tanh(x, cfg.box);
  Tensor best;
  int best_pred = y;
  double best_l2 = std::numeric_limits<double>::infinity();
  std::size_t iters = 0;
  search_constant(cfg.bs_steps, cfg.c0, [&](double c) {
    std::vector<double> w = w0;
    detail::Adam adam(w.size(), cfg.lr);
    bool ok = false;
    for (std::size_t it = 0; it <= cfg.max_iter; ++it) {
      const Tensor xa = from_tanh(w, x.shape(), cfg.box);
      Tensor z;
      const Tensor vjp =
          g.logit_vjp(xa, [&](const Tensor& zz) { return margin_seed(zz, y, cfg.kappa, c); }, &z);
      if (!z.all_finite() || !vjp.all_finite()) break;
      const int p = int(argmax(z));
      if (p != y) {
        ok = true;
        const double l2 = detail::squared_l2(xa, x);
        if (l2 < best_l2) {
          best_l2 = l2;
          best = xa;
          best_pred = p;
        }
      }
      if (it == cfg.max_iter) break;
      bool finite = true;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gx = 2.0 * (double(xa[i]) - double(x[i])) + double(vjp[i]);
        const double gw = gx * dtanh_box(w[i], cfg.box);
        w[i] -= adam.step(i, gw);
        finite = finite && std::isfinite(w[i]);
      }
      ++iters;
      if (!finite) break;
    }
    return ok;
  });
  if (best.empty()) return make_result(x, y, x, y, spent_now(), iters);
  return make_result(x, y, best, best_pred, spent_now(), iters);
}

AdversarialResult cw_linf(const GradientOracle& g, const Tensor& x, int y, const CwLinfConfig& cfg) {
  cfg.validate();
  check_label(g, x, y, "cw-linf");
  const Counter spent_now(g);
  const int p0 = g.predict(x);
  if (p0 != y) return make_result(x, y, x, p0, spent_now(), 0);

  std::vector<double> w = to_tanh(x, cfg.box);
  double tau = double(cfg.box.hi) - cfg.box.lo;
  double c = cfg.c0;
  Tensor best;
  int best_pred = y;
  double best_linf = std::numeric_limits<double>::infinity();
  std::size_t iters = 0;
  for (std::size_t round = 0; round < cfg.max_rounds && c <= cfg.c_max && tau >= cfg.tau_min; ++round) {
    detail::Adam adam(w.size(), cfg.lr);
    double round_linf = std::numeric_limits<double>::infinity();
    bool diverged = false;
    for (std::size_t it = 0; it <= cfg.max_iter; ++it) {
      const Tensor xa = from_tanh(w, x.shape(), cfg.box);
      Tensor z;
      const Tensor vjp =
          g.logit_vjp(xa, [&](const Tensor& zz) { return margin_seed(zz, y, 0.0, c); }, &z);
      if (!z.all_finite() || !vjp.all_finite()) {
        diverged = true;
        break;
      }
      const int p = int(argmax(z));
      if (p != y) {
        const double linf = compute_distortion(xa, x).linf;
        round_linf = std::min(round_linf, linf);
        if (linf < best_linf) {
          best_linf = linf;
          best = xa;
          best_pred = p;
        }
      }
      if (it == cfg.max_iter) break;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = double(xa[i]) - double(x[i]);
        const double pen = std::abs(d) > tau ? (d > 0 ? 1.0 : -1.0) : 0.0;
        const double gw = (double(vjp[i]) + pen) * dtanh_box(w[i], cfg.box);
        w[i] -= adam.step(i, gw);
        diverged = diverged || !std::isfinite(w[i]);
      }
      ++iters;
      if (diverged) break;
    }
    if (diverged) break;
    if (std::isfinite(round_linf))
      tau = std::min(tau, round_linf) * cfg.tau_decay;
    else
      c *= 2.0;
  }
  if (best.empty()) return make_result(x, y, x, y, spent_now(), iters);
  return make_result(x, y, best, best_pred, spent_now(), iters);
}

AdversarialResult ead(const GradientOracle& g, const Tensor& x, int y, const EadConfig& cfg) {
  cfg.validate();
  check_label(g, x, y, "ead");
  const Counter spent_now(g);
  const int p0 = g.predict(x);
  if (p0 != y) return make_result(x, y, x, p0, spent_now(), 0);

  Tensor best;
  int best_pred = y;
  double best_el = std::numeric_limits<double>::infinity();
  std::size_t iters = 0;
  search_constant(cfg.bs_steps, cfg.c0, [&](double c) {
    Tensor xk = x;
    bool ok = false;
    for (std::size_t it = 0; it <= cfg.max_iter; ++it) {
      Tensor z;
      const Tensor vjp =
          g.logit_vjp(xk, [&](const Tensor& zz) { return margin_seed(zz, y, cfg.kappa, c); }, &z);
      if (!z.all_finite() || !vjp.all_finite()) break;
      const int p = int(argmax(z));
      if (p != y) {
        ok = true;
        const Distortion d = compute_distortion(xk, x);
        const double el = cfg.beta * d.l1 + d.l2 * d.l2;
        if (el < best_el) {
          best_el = el;
          best = xk;
          best_pred = p;
        }
      }
      if (it == cfg.max_iter) break;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double grad = double(vjp[i]) + 2.0 * (double(xk[i]) - double(x[i]));
        const double zi = double(xk[i]) - cfg.lr * grad;
        const double delta = soft_threshold(zi - double(x[i]), cfg.lr * cfg.beta);
        xk[i] = detail::clampf(double(x[i]) + delta, cfg.box);
      }
      ++iters;
    }
    return ok;
  });
  if (best.empty()) return make_result(x, y, x, y, spent_now(), iters);
  return make_result(x, y, best, best_pred, spent_now(), iters);
}

namespace {

struct LossEval {
  double loss;
  Tensor grad;
  int pred;
};

LossEval apgd_loss(const GradientOracle& g, const Tensor& xi, int y, ApgdLoss kind) {
  if (kind == ApgdLoss::CrossEntropy) {
    auto lg = g.loss_gradient(xi, y);
    return {lg.loss, std::move(lg.grad), int(argmax(lg.logits))};
  }
  Tensor z;
  const Tensor grad = g.logit_vjp(
      xi,
      [&](const Tensor& zz) {
        Tensor s(zz.shape());
        const std::size_t yi = std::size_t(y), j = runner_up(zz.values(), y);
        const double num = double(zz[yi]) - double(zz[j]);
        if (zz.size() < 3) {
          s[yi] -= 1.0f;
          s[j] += 1.0f;
          return s;
        }
        std::vector<std::size_t> order(zz.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return zz[a] > zz[b]; });
        const double den = double(zz[order[0]]) - double(zz[order[2]]) + 1e-12;
        s[yi] += float(-1.0 / den);
        s[j] += float(1.0 / den);
        s[order[0]] += float(num / (den * den));
        s[order[2]] -= float(num / (den * den));
        return s;
      },
      &z);
  return {dlr_loss(z.data(), y), grad, int(argmax(z))};
}

}  // namespace

AdversarialResult apgd(const GradientOracle& g, const Tensor& x, int y, ApgdLoss loss,
                       const ApgdConfig& cfg) {
  cfg.validate();
  check_label(g, x, y, "apgd");
  const Counter spent_now(g);
  const int p0 = g.predict(x);
  if (p0 != y) return make_result(x, y, x, p0, spent_now(), 0);
  const Tensor x0 = detail::clip_box(x, cfg.box);
  Rng rng(cfg.seed);
  Tensor xk(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) xk[i] = float(double(x0[i]) + rng.uniform(-cfg.eps, cfg.eps));
  xk = detail::project_linf(x0, xk, cfg.eps, cfg.box);

  LossEval cur = apgd_loss(g, xk, y, loss);
  if (cur.pred != y) return make_result(x, y, xk, cur.pred, spent_now(), 0);
  ApgdSchedule sched(cfg.max_iter, 2.0 * cfg.eps, cfg.rho);
  Tensor x_prev = xk, x_max = xk;
  LossEval best = cur;
  const double a = cfg.momentum;
  std::size_t iters = 0;
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    if (!cur.grad.all_finite()) throw GradientDegenerate("apgd: non-finite loss gradient");
    const Tensor zk = detail::project_linf(x0, xk + sign_of(cur.grad) * float(sched.step()), cfg.eps, cfg.box);
    Tensor next = zk;
    if (k > 0) {
      Tensor v(x.shape());
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = float(double(xk[i]) + a * (double(zk[i]) - xk[i]) + (1.0 - a) * (double(xk[i]) - x_prev[i]));
      next = detail::project_linf(x0, v, cfg.eps, cfg.box);
    }
    LossEval ev = apgd_loss(g, next, y, loss);
    ++iters;
    if (ev.pred != y) return make_result(x, y, next, ev.pred, spent_now(), iters);
    const bool increased = ev.loss > cur.loss;
    x_prev = xk;
    xk = next;
    cur = std::move(ev);
    if (cur.loss > best.loss) {
      best = cur;
      x_max = xk;
    }
    if (sched.record(k + 1, increased)) {
      xk = x_max;
      x_prev = x_max;
      cur = best;
    }
  }
  return make_result(x, y, x, y, spent_now(), iters);
}

AdversarialResult autoattack(const GradientOracle& g, const ScoreOracle& s, const Tensor& x, int y,
                             const AutoAttackConfig& cfg) {
  cfg.validate();
  check_label(g, x, y, "autoattack");
  ApgdConfig ac;
  ac.eps = cfg.eps;
  ac.max_iter = cfg.apgd_iter;
  ac.box = cfg.box;
  ac.seed = mix_seed(cfg.seed, 0);
  std::size_t queries = 0;
  auto r = apgd(g, x, y, ApgdLoss::CrossEntropy, ac);
  queries += r.queries;
  if (!r.success) {
    ac.seed = mix_seed(cfg.seed, 1);
    r = apgd(g, x, y, ApgdLoss::Dlr, ac);
    queries += r.queries;
  }
  if (!r.success) {
    SquareConfig sc;
    sc.norm = SquareNorm::Linf;
    sc.eps = cfg.eps;
    sc.max_iter = cfg.square_iter;
    sc.init_fraction = 0.8;
    sc.seed = mix_seed(cfg.seed, 2);
    sc.box = cfg.box;
    r = square_attack(s, x, y, sc);
    queries += r.queries;
  }
  r.queries = queries;
  return r;
}

}  // namespace qadv
