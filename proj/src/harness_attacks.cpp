#include "harness_internal.hpp"
#include "qadv/defenses.hpp"
#include "qadv/error.hpp"

namespace qadv::detail {

namespace {

template <class Cfg>
void read_into(Cfg& cfg, const Json& params, const std::string& where) {
  ParamReader r(params, where);
  visit(r, cfg);
  r.finish();
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw InvalidSpec(where + ": " + e.what());
  }
}

template <class Cfg>
Json write_out(const Cfg& cfg) {
  Cfg copy = cfg;
  ParamWriter w;
  visit(w, copy);
  return w.out;
}

}  // namespace

ResolvedAttack resolve_attack_params(const AttackSpec& spec) {
  ResolvedAttack a;
  a.name = spec.name;
  a.tier = attack_tier(spec.name);
  const std::string where = "attack " + spec.name;
  const Json& p = spec.params;
  if (a.name == "fgsm") read_into(a.fgsm, p, where);
  else if (a.name == "deepfool") read_into(a.deepfool, p, where);
  else if (a.name == "jsma") read_into(a.jsma, p, where);
  else if (a.name == "cw-l2") read_into(a.cw_l2, p, where);
  else if (a.name == "cw-linf") read_into(a.cw_linf, p, where);
  else if (a.name == "pgd") read_into(a.pgd, p, where);
  else if (a.name == "ead") read_into(a.ead, p, where);
  else if (a.name == "autoattack") read_into(a.autoattack, p, where);
  else if (a.name == "zoo") read_into(a.zoo, p, where);
  else if (a.name == "square-linf") read_into(a.square, p, where);
  else if (a.name == "square-l2") {
    a.square = SquareConfig::l2_defaults();
    read_into(a.square, p, where);
  } else if (a.name == "boundary") read_into(a.boundary, p, where);
  else if (a.name == "geoda") read_into(a.geoda, p, where);
  return a;
}

Json ResolvedAttack::resolved() const {
  if (name == "fgsm") return write_out(fgsm);
  if (name == "deepfool") return write_out(deepfool);
  if (name == "jsma") return write_out(jsma);
  if (name == "cw-l2") return write_out(cw_l2);
  if (name == "cw-linf") return write_out(cw_linf);
  if (name == "pgd") return write_out(pgd);
  if (name == "ead") return write_out(ead);
  if (name == "autoattack") return write_out(autoattack);
  if (name == "zoo") return write_out(zoo);
  if (name == "square-linf" || name == "square-l2") return write_out(square);
  if (name == "boundary") return write_out(boundary);
  return write_out(geoda);
}

std::string ResolvedAttack::primary() const {
  if (name == "fgsm" || name == "pgd" || name == "autoattack" || name == "square-linf" || name == "square-l2")
    return "eps";
  if (name == "jsma") return "theta";
  return "max_iter";
}

double ResolvedAttack::primary_value() const {
  if (name == "fgsm") return fgsm.eps;
  if (name == "pgd") return pgd.eps;
  if (name == "autoattack") return autoattack.eps;
  if (name == "square-linf" || name == "square-l2") return square.eps;
  if (name == "jsma") return jsma.theta;
  if (name == "deepfool") return double(deepfool.max_iter);
  if (name == "cw-l2") return double(cw_l2.max_iter);
  if (name == "cw-linf") return double(cw_linf.max_iter);
  if (name == "ead") return double(ead.max_iter);
  if (name == "zoo") return double(zoo.max_iter);
  if (name == "boundary") return double(boundary.max_iter);
  return double(geoda.max_iter);
}

void ResolvedAttack::double_primary() {
  if (name == "fgsm") fgsm.eps *= 2;
  else if (name == "pgd") {
    pgd.eps *= 2;
    pgd.step *= 2;
  } else if (name == "autoattack") autoattack.eps *= 2;
  else if (name == "square-linf" || name == "square-l2") square.eps *= 2;
  else if (name == "jsma") jsma.theta *= 2;
  else if (name == "deepfool") deepfool.max_iter *= 2;
  else if (name == "cw-l2") cw_l2.max_iter *= 2;
  else if (name == "cw-linf") cw_linf.max_iter *= 2;
  else if (name == "ead") ead.max_iter *= 2;
  else if (name == "zoo") zoo.max_iter *= 2;
  else if (name == "boundary") boundary.max_iter *= 2;
  else geoda.max_iter *= 2;
}

void defense_params_check(const DefenseSpec& spec) {
  const std::string where = "defense " + spec.name;
  ParamReader r(spec.params, where);
  double d = 0;
  std::size_t n = 0;
  bool b = false;
  if (spec.name == "feature-squeezing") {
    int bits = 0;
    r("bit_depth", bits);
    r("window", n);
    r("detect_threshold", d);
  } else {
    r("epochs", n);
    r("learning_rate", d);
    r("seed", n);
    if (spec.name == "distillation") {
      r("temperature", d);
      r("alpha", d);
    } else {
      r("from_scratch", b);
      r("eps", d);
      r("step", d);
      r("iters", n);
      if (spec.name == "ensemble-advt") {
        r("fgsm_eps", d);
        r("sources", n);
      }
      if (spec.name == "sinkhorn-advt") {
        r("sink_eps", d);
        r("sink_iters", n);
        r("weight", d);
        r("reduction_mean", b);
      }
    }
  }
  r.finish();
}

AdversarialResult run_attack(const ResolvedAttack& a, const Oracles& o, const Tensor& x, int y,
                             std::uint64_t seed) {
  auto need = [&](const void* p, const char* what) {
    if (!p) throw InternalOverflow("attack " + a.name + " needs a " + what + " oracle");
  };
  switch (a.tier) {
    case AttackTier::WhiteBox: need(o.gradient, "gradient"); break;
    case AttackTier::GrayBox: need(o.score, "score"); break;
    case AttackTier::BlackBox: need(o.decision, "decision"); break;
  }
  if (a.name == "fgsm") return fgsm(*o.gradient, x, y, a.fgsm);
  if (a.name == "deepfool") return deepfool(*o.gradient, x, y, a.deepfool);
  if (a.name == "jsma") return jsma(*o.gradient, x, y, a.jsma);
  if (a.name == "cw-l2") return cw_l2(*o.gradient, x, y, a.cw_l2);
  if (a.name == "cw-linf") return cw_linf(*o.gradient, x, y, a.cw_linf);
  if (a.name == "ead") return ead(*o.gradient, x, y, a.ead);
  if (a.name == "pgd") {
    PgdConfig c = a.pgd;
    c.seed = seed;
    return pgd(*o.gradient, x, y, c);
  }
  if (a.name == "autoattack") {
    need(o.score, "score");
    AutoAttackConfig c = a.autoattack;
    c.seed = seed;
    return autoattack(*o.gradient, *o.score, x, y, c);
  }
  if (a.name == "zoo") {
    ZooConfig c = a.zoo;
    c.seed = seed;
    return zoo(*o.score, x, y, c);
  }
  if (a.name == "square-linf" || a.name == "square-l2") {
    SquareConfig c = a.square;
    c.norm = a.name == "square-l2" ? SquareNorm::L2 : SquareNorm::Linf;
    c.seed = seed;
    return square_attack(*o.score, x, y, c);
  }
  if (a.name == "boundary") {
    BoundaryConfig c = a.boundary;
    c.seed = seed;
    return boundary_attack(*o.decision, x, y, c);
  }
  GeoDaConfig c = a.geoda;
  c.seed = seed;
  return geoda(*o.decision, x, y, c);
}

}  // namespace qadv::detail
