#pragma once

// Internal pieces of the experiment runner.

#include <set>
#include <string>

#include "qadv/attacks.hpp"
#include "qadv/harness.hpp"

namespace qadv::detail {

// Reads known keys out of a params object; finish() rejects leftovers.
class ParamReader {
 public:
  ParamReader(const Json& params, std::string where);
  void operator()(const char* key, double& v);
  void operator()(const char* key, float& v);
  void operator()(const char* key, std::size_t& v);
  void operator()(const char* key, int& v);
  void operator()(const char* key, bool& v);
  void finish() const;

 private:
  const Json* take(const char* key);
  const Json& j_;
  std::string where_;
  std::set<std::string> used_;
};

struct ParamWriter {
  Json out = Json::object();
  template <class T>
  void operator()(const char* key, T& v) {
    out[key] = v;
  }
  void operator()(const char* key, float& v) { out[key] = double(v); }
};

template <class V> void visit_box(V& v, Box& b) {
  v("box_lo", b.lo);
  v("box_hi", b.hi);
}
template <class V> void visit(V& v, DeepFoolConfig& c) {
  v("max_iter", c.max_iter);
  v("overshoot", c.overshoot);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, JsmaConfig& c) {
  v("theta", c.theta);
  v("gamma", c.gamma);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, CwL2Config& c) {
  v("max_iter", c.max_iter);
  v("bs_steps", c.bs_steps);
  v("c0", c.c0);
  v("lr", c.lr);
  v("kappa", c.kappa);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, CwLinfConfig& c) {
  v("max_iter", c.max_iter);
  v("lr", c.lr);
  v("c0", c.c0);
  v("c_max", c.c_max);
  v("tau_decay", c.tau_decay);
  v("tau_min", c.tau_min);
  v("max_rounds", c.max_rounds);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, PgdConfig& c) {
  v("eps", c.eps);
  v("step", c.step);
  v("restarts", c.restarts);
  v("max_iter", c.max_iter);
  v("random_init", c.random_init);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, FgsmConfig& c) {
  v("eps", c.eps);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, EadConfig& c) {
  v("max_iter", c.max_iter);
  v("bs_steps", c.bs_steps);
  v("c0", c.c0);
  v("beta", c.beta);
  v("lr", c.lr);
  v("kappa", c.kappa);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, AutoAttackConfig& c) {
  v("eps", c.eps);
  v("apgd_iter", c.apgd_iter);
  v("square_iter", c.square_iter);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, ZooConfig& c) {
  v("max_iter", c.max_iter);
  v("bs_steps", c.bs_steps);
  v("c0", c.c0);
  v("h", c.h);
  v("lr", c.lr);
  v("coords_per_iter", c.coords_per_iter);
  v("kappa", c.kappa);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, SquareConfig& c) {
  v("eps", c.eps);
  v("max_iter", c.max_iter);
  v("init_fraction", c.init_fraction);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, BoundaryConfig& c) {
  v("eps", c.eps);
  v("delta", c.delta);
  v("init_size", c.init_size);
  v("max_iter", c.max_iter);
  v("trials", c.trials);
  v("step_adapt", c.step_adapt);
  visit_box(v, c.box);
}
template <class V> void visit(V& v, GeoDaConfig& c) {
  v("bs_tol", c.bs_tol);
  v("dct_dim", c.dct_dim);
  v("max_iter", c.max_iter);
  v("probes", c.probes);
  v("sigma", c.sigma);
  v("init_size", c.init_size);
  visit_box(v, c.box);
}

struct ResolvedAttack {
  std::string name;
  AttackTier tier = AttackTier::WhiteBox;
  DeepFoolConfig deepfool;
  JsmaConfig jsma;
  CwL2Config cw_l2;
  CwLinfConfig cw_linf;
  PgdConfig pgd;
  FgsmConfig fgsm;
  EadConfig ead;
  AutoAttackConfig autoattack;
  ZooConfig zoo;
  SquareConfig square;
  BoundaryConfig boundary;
  GeoDaConfig geoda;

  Json resolved() const;  // every parameter after defaults
  // Strength parameter swept by auto-calibration.
  std::string primary() const;
  double primary_value() const;
  void double_primary();
};

ResolvedAttack resolve_attack_params(const AttackSpec& spec);
void defense_params_check(const DefenseSpec& spec);

struct Oracles {
  const GradientOracle* gradient = nullptr;
  const ScoreOracle* score = nullptr;
  const DecisionOracle* decision = nullptr;
};

AdversarialResult run_attack(const ResolvedAttack& a, const Oracles& o, const Tensor& x, int y,
                             std::uint64_t seed);

}  // namespace qadv::detail
