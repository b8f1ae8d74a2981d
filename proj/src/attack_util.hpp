#pragma once

// Helpers shared by the attack sources.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "qadv/attacks.hpp"
#include "qadv/error.hpp"

namespace qadv::detail {

inline void check_box(const Box& b, const char* who) {
  if (!(b.lo < b.hi)) throw InvalidArgument(std::string(who) + ": box needs lo < hi");
}

inline float clampf(double v, const Box& b) {
  return float(std::clamp(v, double(b.lo), double(b.hi)));
}

inline Tensor clip_box(const Tensor& x, const Box& b) { return clip(x, b.lo, b.hi); }

// Float bounds of the L-inf ball around x0 (intersected with the box) such that
// the double difference never exceeds eps.
inline void ball_bounds(float x0, double eps, const Box& b, float& lo, float& hi) {
  lo = float(double(x0) - eps);
  while (double(x0) - double(lo) > eps) lo = std::nextafter(lo, std::numeric_limits<float>::infinity());
  hi = float(double(x0) + eps);
  while (double(hi) - double(x0) > eps) hi = std::nextafter(hi, -std::numeric_limits<float>::infinity());
  lo = std::max(lo, b.lo);
  hi = std::min(hi, b.hi);
  if (lo > hi) lo = hi = std::clamp(x0, b.lo, b.hi);
}

inline Tensor project_linf(const Tensor& x0, const Tensor& v, double eps, const Box& b) {
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    float lo, hi;
    ball_bounds(x0[i], eps, b, lo, hi);
    out[i] = std::clamp(v[i], lo, hi);
  }
  return out;
}

inline double squared_l2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s;
}

// Largest competitor to class y.
template <class V>
std::size_t runner_up(const V& z, int y) {
  std::size_t best = z.size();
  for (std::size_t j = 0; j < z.size(); ++j)
    if (int(j) != y && (best == z.size() || z[j] > z[best])) best = j;
  return best;
}

template <class V>
int argmax_of(const V& z) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < z.size(); ++j)
    if (z[j] > z[best]) best = j;
  return int(best);
}

// Image dims, treating rank-1 inputs as [1, 1, N].
inline void image_dims(const Shape& s, std::size_t& C, std::size_t& H, std::size_t& W) {
  if (s.size() == 3) {
    C = s[0], H = s[1], W = s[2];
  } else {
    C = 1, H = 1, W = shape_size(s);
  }
}

// Adam on a flat double vector.
struct Adam {
  double lr;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  std::vector<std::size_t> t;  // per coordinate, so coordinate-wise use works

  Adam(std::size_t n, double lr_) : lr(lr_), m(n, 0.0), v(n, 0.0), t(n, 0) {}

  double step(std::size_t i, double g) {
    ++t[i];
    m[i] = b1 * m[i] + (1 - b1) * g;
    v[i] = b2 * v[i] + (1 - b2) * g * g;
    const double mh = m[i] / (1 - std::pow(b1, double(t[i])));
    const double vh = v[i] / (1 - std::pow(b2, double(t[i])));
    return lr * mh / (std::sqrt(vh) + eps);
  }
};

inline bool finite(const std::vector<double>& v) {
  for (double d : v)
    if (!std::isfinite(d)) return false;
  return true;
}

}  // namespace qadv::detail
