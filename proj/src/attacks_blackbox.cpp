#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "attack_util.hpp"
#include "qadv/error.hpp"

namespace qadv {

namespace {

using detail::argmax_of;
using detail::runner_up;

template <class Oracle>
void check_input(const Oracle& o, const Tensor& x, int y, const char* who) {
  if (x.shape() != o.input_shape())
    throw InvalidArgument(std::string(who) + ": input shape " + shape_string(x.shape()) +
                          " != oracle input " + shape_string(o.input_shape()));
  if (y < 0 || std::size_t(y) >= o.classes())
    throw InvalidArgument(std::string(who) + ": label " + std::to_string(y) + " out of range");
}

double log_floor(double p) { return std::log(std::max(p, 1e-300)); }

// log p_y - max_{j != y} log p_j; negative means misclassified.
double log_margin(const std::vector<double>& p, int y) {
  return log_floor(p[std::size_t(y)]) - log_floor(p[runner_up(p, y)]);
}

double l2_dist(const Tensor& a, const Tensor& b) { return std::sqrt(detail::squared_l2(a, b)); }

Tensor uniform_in_box(Rng& rng, const Shape& shape, const Box& box) {
  Tensor t(shape);
  for (auto& v : t.data()) v = detail::clampf(rng.uniform(box.lo, box.hi), box);
  return t;
}

}  // namespace

// ---- ZOO -------------------------------------------------------------------------

AdversarialResult zoo(const ScoreOracle& s, const Tensor& x, int y, const ZooConfig& cfg) {
  cfg.validate();
  check_input(s, x, y, "zoo");
  const std::size_t q0 = s.queries();
  const auto p_clean = s.probabilities(x);
  const int p0 = argmax_of(p_clean);
  if (p0 != y) return make_result(x, y, x, p0, s.queries() - q0, 0);

  const std::size_t n = x.size();
  const std::size_t k = std::min(cfg.coords_per_iter, n);
  Rng rng(cfg.seed);
  Tensor best;
  double best_l2 = std::numeric_limits<double>::infinity();
  std::size_t iters = 0;
  double c = cfg.c0, lo_c = 0.0, hi_c = 1e10;
  for (std::size_t b = 0; b < cfg.bs_steps; ++b) {
    auto objective = [&](const Tensor& xa, const std::vector<double>& p) {
      return detail::squared_l2(xa, x) + c * std::max(log_margin(p, y), -cfg.kappa);
    };
    auto f = [&](const Tensor& xa) { return objective(xa, s.probabilities(xa)); };
    Tensor xa = x;
    detail::Adam adam(n, cfg.lr);
    bool ok = false;
    const auto p_start = s.probabilities(xa);
    if (argmax_of(p_start) != y) ok = true;
    std::vector<std::size_t> idx(n);
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
      std::iota(idx.begin(), idx.end(), std::size_t(0));
      for (std::size_t j = 0; j < k; ++j) std::swap(idx[j], idx[j + rng.index(n - j)]);
      std::vector<double> grads(k);
      for (std::size_t j = 0; j < k; ++j) grads[j] = zoo_coordinate_gradient(f, xa, idx[j], cfg.h);
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = idx[j];
        if (!std::isfinite(grads[j])) continue;
        xa[i] = detail::clampf(double(xa[i]) - adam.step(i, grads[j]), cfg.box);
      }
      ++iters;
      const auto p = s.probabilities(xa);
      if (argmax_of(p) != y) {
        ok = true;
        const double l2 = detail::squared_l2(xa, x);
        if (l2 < best_l2) {
          best_l2 = l2;
          best = xa;
        }
      }
    }
    if (ok) {
      hi_c = std::min(hi_c, c);
      c = (lo_c + hi_c) / 2.0;
    } else {
      lo_c = std::max(lo_c, c);
      c = hi_c < 1e10 ? (lo_c + hi_c) / 2.0 : c * 10.0;
    }
  }
  if (best.empty()) return make_result(x, y, x, y, s.queries() - q0, iters);
  const int pred = s.predict(best);
  return make_result(x, y, best, pred, s.queries() - q0, iters);
}

// ---- Square attack ---------------------------------------------------------------

namespace {

double square_fraction(double p_init, std::size_t it, std::size_t max_iter) {
  const double i = std::floor(double(it) / double(max_iter) * 10000.0);
  static const double cuts[] = {10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000};
  double p = p_init;
  for (double c : cuts)
    if (i > c) p /= 2.0;
  return p;
}

}  // namespace

AdversarialResult square_attack(const ScoreOracle& s, const Tensor& x, int y, const SquareConfig& cfg,
                                std::vector<double>* loss_trace) {
  cfg.validate();
  check_input(s, x, y, "square");
  if (loss_trace) loss_trace->clear();
  const std::size_t q0 = s.queries();
  const auto p_clean = s.probabilities(x);
  const int p0 = argmax_of(p_clean);
  if (p0 != y) return make_result(x, y, x, p0, s.queries() - q0, 0);

  std::size_t C, H, W;
  detail::image_dims(x.shape(), C, H, W);
  const Tensor x0 = detail::clip_box(x, cfg.box);
  Rng rng(cfg.seed);
  const bool linf = cfg.norm == SquareNorm::Linf;

  // vertical stripes
  Tensor delta(x.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t w = 0; w < W; ++w) {
      const float v = rng.sign();
      for (std::size_t h = 0; h < H; ++h) delta[(c * H + h) * W + w] = v;
    }
  if (linf) {
    delta *= float(cfg.eps);
  } else {
    delta *= float(cfg.eps / std::sqrt(double(delta.size())));
  }
  auto realise = [&](const Tensor& d) {
    return linf ? detail::project_linf(x0, x0 + d, cfg.eps, cfg.box) : detail::clip_box(x0 + d, cfg.box);
  };
  Tensor xa = realise(delta);
  auto p = s.probabilities(xa);
  double best = log_margin(p, y);
  int pred = argmax_of(p);
  if (loss_trace) loss_trace->push_back(-best);
  std::size_t iters = 0;
  for (std::size_t it = 0; it < cfg.max_iter && pred == y; ++it) {
    const double frac = square_fraction(cfg.init_fraction, it, cfg.max_iter);
    auto side = std::size_t(std::max(1.0, std::round(std::sqrt(frac * double(H * W)))));
    side = std::min({side, H, W});
    const std::size_t r0 = rng.index(H - side + 1), c0 = rng.index(W - side + 1);
    Tensor cand = delta;
    if (linf) {
      for (std::size_t c = 0; c < C; ++c) {
        const float v = float(cfg.eps) * rng.sign();
        for (std::size_t h = r0; h < r0 + side; ++h)
          for (std::size_t w = c0; w < c0 + side; ++w) cand[(c * H + h) * W + w] = v;
      }
    } else {
      double outside = 0.0;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            const bool in = h >= r0 && h < r0 + side && w >= c0 && w < c0 + side;
            if (!in) outside += double(cand[(c * H + h) * W + w]) * cand[(c * H + h) * W + w];
          }
      const double budget = cfg.eps * cfg.eps - outside;
      const double mag = budget > 0.0 ? std::sqrt(budget / double(side * side * C)) : 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const float v = float(mag) * rng.sign();
        for (std::size_t h = r0; h < r0 + side; ++h)
          for (std::size_t w = c0; w < c0 + side; ++w) cand[(c * H + h) * W + w] = v;
      }
    }
    const Tensor xc = realise(cand);
    const auto pc = s.probabilities(xc);
    const double m = log_margin(pc, y);
    ++iters;
    if (m < best) {
      best = m;
      delta = cand;
      xa = xc;
      pred = argmax_of(pc);
    }
    if (loss_trace) loss_trace->push_back(-best);
  }
  return make_result(x, y, xa, pred, s.queries() - q0, iters);
}

// ---- decision-based helpers ---------------------------------------------------------

Tensor bisect_boundary(const DecisionOracle& d, const Tensor& inside, const Tensor& outside, int y,
                       double tol) {
  if (!(tol > 0.0)) throw InvalidArgument("bisection: tol must be > 0");
  require_same_shape(inside, outside, "bisection");
  const bool in_adv = d.decide(inside) != y;
  const bool out_adv = d.decide(outside) != y;
  if (in_adv == out_adv)
    throw BoundaryNotBracketed(std::string("bisection: both endpoints are ") +
                               (in_adv ? "adversarial" : "classified as the label"));
  Tensor a = in_adv ? outside : inside;  // label side
  Tensor b = in_adv ? inside : outside;  // adversarial side
  while (l2_dist(a, b) > tol) {
    Tensor mid(a.shape());
    bool moved = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      mid[i] = float((double(a[i]) + double(b[i])) / 2.0);
      moved = moved || (mid[i] != a[i] && mid[i] != b[i]);
    }
    if (!moved) break;  // float resolution reached
    if (d.decide(mid) != y)
      b = std::move(mid);
    else
      a = std::move(mid);
  }
  return b;
}

Tensor random_dct_direction(Rng& rng, const Shape& shape, std::size_t block) {
  if (block < 1) throw InvalidArgument("dct: block must be >= 1");
  std::size_t C, H, W;
  detail::image_dims(shape, C, H, W);
  const std::size_t bh = std::min(block, H), bw = std::min(block, W);
  auto basis = [](std::size_t n, std::size_t u, std::size_t x) {
    const double a = u == 0 ? std::sqrt(1.0 / double(n)) : std::sqrt(2.0 / double(n));
    return a * std::cos(std::numbers::pi * (2.0 * double(x) + 1.0) * double(u) / (2.0 * double(n)));
  };
  std::vector<double> out(C * H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t u = 0; u < bh; ++u)
      for (std::size_t v = 0; v < bw; ++v) {
        const double coef = rng.normal();
        for (std::size_t h = 0; h < H; ++h) {
          const double bu = basis(H, u, h);
          for (std::size_t w = 0; w < W; ++w) out[(c * H + h) * W + w] += coef * bu * basis(W, v, w);
        }
      }
  double n2 = 0.0;
  for (double v : out) n2 += v * v;
  const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
  Tensor t(shape);
  for (std::size_t i = 0; i < out.size(); ++i) t[i] = float(out[i] * inv);
  return t;
}

Tensor estimate_normal(const DecisionOracle& d, const Tensor& point, int y, std::size_t probes,
                       double sigma, std::size_t block, Rng& rng) {
  if (probes < 1) throw InvalidArgument("normal estimate: probes must be >= 1");
  if (!(sigma > 0.0)) throw InvalidArgument("normal estimate: sigma must be > 0");
  std::vector<double> acc(point.size(), 0.0);
  for (std::size_t k = 0; k < probes; ++k) {
    const Tensor u = random_dct_direction(rng, point.shape(), block);
    Tensor probe(point.shape());
    for (std::size_t i = 0; i < u.size(); ++i) probe[i] = float(double(point[i]) + sigma * double(u[i]));
    const double sgn = d.decide(probe) != y ? 1.0 : -1.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc[i] += sgn * double(u[i]);
  }
  double n2 = 0.0;
  for (double v : acc) n2 += v * v;
  const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
  Tensor t(point.shape());
  for (std::size_t i = 0; i < acc.size(); ++i) t[i] = float(acc[i] * inv);
  return t;
}

namespace {

Tensor find_uniform_adversarial(const DecisionOracle& d, int y, std::size_t tries, const Box& box,
                                Rng& rng, const char* who) {
  for (std::size_t i = 0; i < tries; ++i) {
    Tensor u = uniform_in_box(rng, d.input_shape(), box);
    if (d.decide(u) != y) return u;
  }
  throw InitFailed(std::string(who) + ": no adversarial starting point in " + std::to_string(tries) +
                   " uniform draws");
}

}  // namespace

// ---- Boundary attack -----------------------------------------------------------------

AdversarialResult boundary_attack(const DecisionOracle& d, const Tensor& x, int y,
                                  const BoundaryConfig& cfg, std::vector<double>* distance_trace) {
  cfg.validate();
  check_input(d, x, y, "boundary");
  if (distance_trace) distance_trace->clear();
  const std::size_t q0 = d.queries();
  const int p0 = d.decide(x);
  if (p0 != y) return make_result(x, y, x, p0, d.queries() - q0, 0);

  Rng rng(cfg.seed);
  const Tensor start = find_uniform_adversarial(d, y, cfg.init_size, cfg.box, rng, "boundary");
  Tensor adv = bisect_boundary(d, x, start, y, 1e-3 * std::max(l2_dist(x, start), 1e-6));
  double dist = l2_dist(adv, x);
  int pred = d.decide(adv);
  if (distance_trace) distance_trace->push_back(dist);

  const std::size_t n = x.size();
  double delta = cfg.delta, eps = std::min(cfg.eps, 1.0);
  std::size_t iters = 0;
  for (std::size_t it = 0; it < cfg.max_iter && dist > 0.0; ++it) {
    ++iters;
    std::vector<double> v(n);  // from adv towards x, unit length
    for (std::size_t i = 0; i < n; ++i) v[i] = (double(x[i]) - double(adv[i])) / dist;
    std::size_t hits = 0;
    Tensor found;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      std::vector<double> eta(n);
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        eta[i] = rng.normal();
        proj += eta[i] * v[i];
      }
      double en = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        eta[i] -= proj * v[i];
        en += eta[i] * eta[i];
      }
      en = std::sqrt(en);
      if (en == 0.0) continue;
      std::vector<double> cand(n);
      double cn = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cand[i] = double(adv[i]) + eta[i] / en * delta * dist - double(x[i]);
        cn += cand[i] * cand[i];
      }
      cn = std::sqrt(cn);
      Tensor c(x.shape());
      for (std::size_t i = 0; i < n; ++i) c[i] = detail::clampf(double(x[i]) + cand[i] * dist / cn, cfg.box);
      if (d.decide(c) != y) {
        ++hits;
        if (found.empty()) found = std::move(c);
      }
    }
    const double rate = double(hits) / double(cfg.trials);
    if (rate < 0.2)
      delta *= cfg.step_adapt;
    else if (rate > 0.5)
      delta /= cfg.step_adapt;
    if (found.empty()) {
      if (distance_trace) distance_trace->push_back(dist);
      continue;
    }
    Tensor step(x.shape());
    for (std::size_t i = 0; i < n; ++i)
      step[i] = detail::clampf(double(found[i]) + eps * (double(x[i]) - double(found[i])), cfg.box);
    const int ps = d.decide(step);
    Tensor next;
    int next_pred = y;
    if (ps != y) {
      next = std::move(step);
      next_pred = ps;
      eps = std::min(eps / cfg.step_adapt, 1.0);
    } else {
      eps *= cfg.step_adapt;
      next = std::move(found);
      next_pred = -1;  // adversarial, class unknown until queried
    }
    const double nd = l2_dist(next, x);
    if (nd < dist) {
      if (next_pred < 0) next_pred = d.decide(next);
      adv = std::move(next);
      dist = nd;
      pred = next_pred;
    }
    if (distance_trace) distance_trace->push_back(dist);
  }
  return make_result(x, y, adv, pred, d.queries() - q0, iters);
}

// ---- GeoDA -----------------------------------------------------------------------------

AdversarialResult geoda(const DecisionOracle& d, const Tensor& x, int y, const GeoDaConfig& cfg) {
  cfg.validate();
  check_input(d, x, y, "geoda");
  if (cfg.dct_dim > x.size())
    throw InvalidArgument("geoda: dct_dim " + std::to_string(cfg.dct_dim) + " exceeds " +
                          std::to_string(x.size()) + " features");
  const std::size_t q0 = d.queries();
  const int p0 = d.decide(x);
  if (p0 != y) return make_result(x, y, x, p0, d.queries() - q0, 0);

  Rng rng(cfg.seed);
  const Tensor start = find_uniform_adversarial(d, y, cfg.init_size, cfg.box, rng, "geoda");
  Tensor best = bisect_boundary(d, x, start, y, cfg.bs_tol);
  double best_d = l2_dist(best, x);
  std::size_t iters = 0;
  for (std::size_t r = 0; r < cfg.max_iter; ++r) {
    ++iters;
    const Tensor nrm = estimate_normal(d, best, y, cfg.probes, cfg.sigma, cfg.dct_dim, rng);
    if (l2_norm(nrm) == 0.0) break;
    // walk from x along the normal until the label changes
    double t = best_d;
    Tensor far;
    for (int k = 0; k < 30; ++k) {
      Tensor cand(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) cand[i] = detail::clampf(double(x[i]) + t * nrm[i], cfg.box);
      if (d.decide(cand) != y) {
        far = std::move(cand);
        break;
      }
      t *= 2.0;
    }
    if (far.empty()) continue;
    Tensor pt = bisect_boundary(d, x, far, y, cfg.bs_tol);
    const double pd = l2_dist(pt, x);
    if (pd < best_d) {
      best = std::move(pt);
      best_d = pd;
    }
  }
  const int pred = d.decide(best);
  return make_result(x, y, best, pred, d.queries() - q0, iters);
}

}  // namespace qadv
