#include <doctest.h>

#include <cmath>
#include <limits>

#include "attack_models.hpp"
#include "grad_check.hpp"
#include "qadv/attacks.hpp"
#include "qadv/error.hpp"
#include "toy_fixture.hpp"

using namespace qadv;
using namespace qadv::testing;

namespace {

const Box kWide{-10.0f, 10.0f};

void check_record(const AdversarialResult& r, const ModelGraph& m) {
  for (float v : r.adversarial.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(r.success == (r.predicted_label != r.original_label));
  CHECK(m.predict(r.adversarial) == r.predicted_label);
  CHECK(compute_distortion(r.adversarial, r.original) == r.distortion);
}

// Toy model plus a correctly labelled input.
struct Case {
  ModelGraph m;
  Tensor x;
  int y;
};

Case toy_case(std::uint64_t seed) {
  Case c{random_toy_model(seed), {}, 0};
  Rng rng(mix_seed(seed, 5));
  c.x = random_pixels(rng, c.m.input_shape());
  c.y = c.m.predict(c.x);
  return c;
}

}  // namespace

// ---- results -----------------------------------------------------------------

TEST_CASE("distortion norms") {
  const Tensor a = Tensor::vector({0.0f, 0.5f, 1.0f, 0.25f});
  const Tensor b = Tensor::vector({0.0f, 0.0f, 0.5f, 0.5f});
  const Distortion d = compute_distortion(a, b);
  CHECK(d.l0 == 3.0);
  CHECK(d.l1 == doctest::Approx(1.25));
  CHECK(d.l2 == doctest::Approx(std::sqrt(0.25 + 0.25 + 0.0625)));
  CHECK(d.linf == 0.5);
  CHECK(compute_distortion(a, a) == Distortion{});
}

TEST_CASE("failed attack records the clean sample") {
  const Tensor x = Tensor::vector({0.2f, 0.3f});
  const Tensor cand = Tensor::vector({0.9f, 0.9f});
  const auto r = make_result(x, 1, cand, 1, 7, 3);
  CHECK_FALSE(r.success);
  CHECK(r.adversarial == x);
  CHECK(r.distortion == Distortion{});
  CHECK(r.queries == 7);
  const auto s = make_result(x, 1, cand, 0, 7, 3);
  CHECK(s.success);
  CHECK(s.adversarial == cand);
}

TEST_CASE("oracle counters") {
  const Case c = toy_case(3);
  GradientOracle g(c.m);
  g.logits(c.x);
  g.loss_gradient(c.x, c.y);
  CHECK(g.forward_queries() == 1);
  CHECK(g.gradient_queries() == 1);
  const auto s = ScoreOracle::from_model(c.m);
  const auto p = s.probabilities(c.x);
  double sum = 0.0;
  for (double v : p) sum += v;
  CHECK(std::abs(sum - 1.0) <= 1e-6);
  CHECK(s.queries() == 1);
  const auto d = DecisionOracle::from_model(c.m);
  CHECK(d.decide(c.x) == c.y);
  CHECK(d.queries() == 1);
}

TEST_CASE("logit jacobian rows match single vjps") {
  const Case c = toy_case(4);
  GradientOracle g(c.m);
  const auto J = g.logit_jacobian(c.x);
  REQUIRE(J.size() == c.m.classes());
  Tensor seed({c.m.classes()});
  seed[1] = 1.0f;
  CHECK(max_relative_error(g.logit_vjp(c.x, seed), J[1]) < 1e-6);
}

// ---- DeepFool ------------------------------------------------------------------

TEST_CASE("deepfool analytic binary example") {
  const ModelGraph m = binary_linear({-3.0f, -4.0f}, 0.0f);
  const Tensor x = Tensor::vector({1.0f, 0.0f});
  REQUIRE(m.predict(x) == 0);
  DeepFoolConfig cfg;
  cfg.box = kWide;
  const auto r = deepfool(GradientOracle(m), x, 0, cfg);
  CHECK(r.success);
  CHECK(r.iterations == 1);
  CHECK(r.distortion.l2 >= 0.6 - 1e-6);
  CHECK(r.distortion.l2 <= 0.6 * 1.008 + 1e-6);
}

TEST_CASE("deepfool on random linear classifiers") {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 2 + rng.index(20);
    std::vector<float> w(d);
    for (auto& v : w) v = float(rng.normal());
    const float b = float(rng.normal());
    const ModelGraph m = binary_linear(w, b);
    Tensor x({d});
    for (auto& v : x.data()) v = float(rng.uniform(-1, 1));
    const int y = m.predict(x);
    double f = b, n = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      f += double(w[i]) * x[i];
      n += double(w[i]) * w[i];
    }
    const double expect = std::abs(f) / std::sqrt(n) * 1.008;
    DeepFoolConfig cfg;
    cfg.box = kWide;
    const auto r = deepfool(GradientOracle(m), x, y, cfg);
    CHECK(r.success);
    CHECK(std::abs(r.distortion.l2 - expect) <= 0.05 * expect);
  }
}

TEST_CASE("deepfool edge cases") {
  const ModelGraph m = binary_linear({1.0f, 1.0f}, -1.0f);
  const Tensor x = Tensor::vector({0.2f, 0.2f});
  const auto r = deepfool(GradientOracle(m), x, 1, DeepFoolConfig{});
  CHECK(r.success);
  CHECK(r.iterations == 0);
  CHECK(r.distortion.l2 == 0.0);

  const ModelGraph flat = linear_classifier(2, 2, {0, 0, 0, 0}, {1.0f, 0.0f});
  CHECK_THROWS_AS(deepfool(GradientOracle(flat), x, 0, DeepFoolConfig{}), GradientDegenerate);
  DeepFoolConfig bad;
  bad.max_iter = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

// ---- FGSM / PGD -----------------------------------------------------------------

TEST_CASE("fgsm closed form on a linear model") {
  // class-1 cross-entropy gradient is -(1 - p1) w, so the step is -eps sign(w)
  const ModelGraph m = binary_linear({0.7f, -1.3f, 0.0f, 2.0f}, -0.65f);
  const Tensor x = Tensor::vector({0.5f, 0.5f, 0.5f, 0.5f});
  REQUIRE(m.predict(x) == 1);
  FgsmConfig cfg;
  cfg.eps = 0.05;
  const auto r = fgsm(GradientOracle(m), x, 1, cfg);
  REQUIRE(r.success);
  const double expect[] = {0.45, 0.55, 0.5, 0.45};
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(double(r.adversarial[i]) - expect[i]) <= 1e-7);
  CHECK(r.distortion.linf <= 0.05);
}

TEST_CASE("fgsm crosses a close boundary exactly by eps") {
  const ModelGraph m = binary_linear({1.0f, 1.0f}, -1.0f);
  const Tensor x = Tensor::vector({0.52f, 0.52f});  // class 1, margin 0.04
  FgsmConfig cfg;
  cfg.eps = 0.05;
  const auto r = fgsm(GradientOracle(m), x, 1, cfg);
  REQUIRE(r.success);
  CHECK(std::abs(double(r.adversarial[0]) - 0.47) <= 1e-7);
  CHECK(std::abs(double(r.adversarial[1]) - 0.47) <= 1e-7);
  CHECK(r.distortion.linf <= 0.05);
}

TEST_CASE("fgsm eps zero leaves the input") {
  const Case c = toy_case(6);
  FgsmConfig cfg;
  cfg.eps = 0.0;
  const auto r = fgsm(GradientOracle(c.m), c.x, c.y, cfg);
  CHECK_FALSE(r.success);
  CHECK(r.adversarial == c.x);
}

TEST_CASE("fgsm equals one-step pgd") {
  for (std::uint64_t s = 0; s < 6; ++s) {
    const Case c = toy_case(s);
    FgsmConfig f;
    f.eps = 0.03;
    PgdConfig p;
    p.eps = 0.03;
    p.step = 0.03;
    p.restarts = 1;
    p.max_iter = 1;
    p.random_init = false;
    const auto a = fgsm(GradientOracle(c.m), c.x, c.y, f);
    const auto b = pgd(GradientOracle(c.m), c.x, c.y, p);
    CHECK(a.adversarial == b.adversarial);
    CHECK(a.success == b.success);
  }
}

TEST_CASE("pgd linf bound is exact") {
  for (std::uint64_t s = 0; s < 8; ++s) {
    const Case c = toy_case(s);
    PgdConfig p;
    p.eps = 0.0008 + 0.01 * double(s);
    p.step = p.eps / 4;
    p.restarts = 2;
    p.max_iter = 10;
    p.seed = s;
    const auto r = pgd(GradientOracle(c.m), c.x, c.y, p);
    CHECK(r.distortion.linf <= p.eps);
    check_record(r, c.m);
  }
}

TEST_CASE("pgd on a 2-pixel model agrees with exhaustive search") {
  Rng rng(21);
  int flips = 0;
  for (int t = 0; t < 60; ++t) {
    const std::vector<float> w = {float(rng.normal()), float(rng.normal())};
    const Tensor x = Tensor::vector({float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9))});
    const float b = -(w[0] * x[0] + w[1] * x[1]) + float(rng.uniform(-0.2, 0.2));
    const ModelGraph m = binary_linear(w, b);
    const int y = m.predict(x);
    const double eps = rng.uniform(0.01, 0.15);
    // corners and a grid of the eps box clipped to [0,1]
    bool oracle = false;
    double closest = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 20; ++i)
      for (int j = 0; j <= 20; ++j) {
        const double a0 = std::clamp(x[0] - eps + 2 * eps * i / 20.0, 0.0, 1.0);
        const double a1 = std::clamp(x[1] - eps + 2 * eps * j / 20.0, 0.0, 1.0);
        const double f = w[0] * a0 + w[1] * a1 + b;
        closest = std::min(closest, std::abs(f));
        if ((f > 0) != (y == 1) && f != 0.0) oracle = true;
      }
    const double f0 = w[0] * x[0] + w[1] * x[1] + b;
    if (std::abs(std::abs(f0) - (std::abs(w[0]) + std::abs(w[1])) * eps) < 1e-3) continue;  // too close to call
    PgdConfig p;
    p.eps = eps;
    p.step = eps / 10;
    p.restarts = 1;
    p.max_iter = 50;
    p.seed = std::uint64_t(t);
    const auto r = pgd(GradientOracle(m), x, y, p);
    CHECK(r.success == oracle);
    flips += oracle;
  }
  CHECK(flips > 5);
}

TEST_CASE("pgd config validation") {
  PgdConfig p;
  p.step = p.eps * 2;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p = PgdConfig{};
  p.eps = 0.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p.step = 0.0;
  CHECK_NOTHROW(p.validate());
  p.eps = -0.1;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  FgsmConfig f;
  f.eps = -1;
  CHECK_THROWS_AS(f.validate(), InvalidArgument);
}

// ---- JSMA -------------------------------------------------------------------------

TEST_CASE("jsma saliency formula") {
  CHECK(jsma_saliency(0.5, -0.2) == doctest::Approx(0.1));
  CHECK(jsma_saliency(-0.1, -0.2) == 0.0);
  CHECK(jsma_saliency(0.5, 0.3) == 0.0);
}

TEST_CASE("jsma respects the feature budget") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Case c = toy_case(s);
    JsmaConfig cfg;
    cfg.gamma = 0.05;
    const auto r = jsma(GradientOracle(c.m), c.x, c.y, cfg);
    CHECK(r.distortion.l0 <= std::floor(0.05 * double(c.x.size())));
    check_record(r, c.m);
  }
  JsmaConfig bad;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad.gamma = 1.5;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("jsma flips a linear model by raising features") {
  const ModelGraph m = binary_linear({1.0f, 0.5f, -1.0f}, -0.9f);
  const Tensor x = Tensor::vector({0.2f, 0.2f, 0.2f});
  REQUIRE(m.predict(x) == 0);
  const auto r = jsma(GradientOracle(m), x, 0, JsmaConfig{});
  CHECK(r.success);
  CHECK(r.adversarial[2] == x[2]);  // negative saliency feature untouched
}

// ---- C&W / EAD ------------------------------------------------------------------

TEST_CASE("tanh box mapping") {
  const Box b;
  CHECK(tanh_to_box(0.0, b) == 0.5);
  for (double w : {-1e6, -30.0, -1.0, 0.3, 5.0, 1e6}) {
    const double v = tanh_to_box(w, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(tanh_to_box(box_to_tanh(0.3, b), b) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(std::isfinite(box_to_tanh(0.0, b)));
  CHECK(std::isfinite(box_to_tanh(1.0, b)));
}

TEST_CASE("soft threshold and objectives") {
  CHECK(soft_threshold(0.5, 0.2) == doctest::Approx(0.3));
  CHECK(soft_threshold(-0.5, 0.2) == doctest::Approx(-0.3));
  CHECK(soft_threshold(0.1, 0.2) == 0.0);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const double l1 = rng.uniform(0, 5), l2 = rng.uniform(0, 5), f = rng.uniform(-1, 1), c = rng.uniform(0, 10);
    CHECK(ead_objective(l1, l2, f, c, 0.0) == cw_objective(l2, f, c));
  }
  CHECK(cw_objective(2.0, -0.5, 4.0) == 0.0);
}

TEST_CASE("margin and dlr losses") {
  const Tensor z = Tensor::vector({1.0f, 3.0f, 2.0f, -1.0f});
  CHECK(margin_loss(z.data(), 1, 0.0) == doctest::Approx(1.0));
  CHECK(margin_loss(z.data(), 0, 0.5) == doctest::Approx(-0.5));
  CHECK(dlr_loss(z.data(), 1) == doctest::Approx(-1.0 / (3.0 - 1.0)));
  const Tensor z2 = Tensor::vector({0.5f, 2.0f});
  CHECK(dlr_loss(z2.data(), 1) == doctest::Approx(-1.5));
}

TEST_CASE("cw and ead results are well formed") {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Case c = toy_case(s);
    GradientOracle g(c.m);
    check_record(cw_l2(g, c.x, c.y, CwL2Config{}), c.m);
    check_record(cw_linf(g, c.x, c.y, CwLinfConfig{}), c.m);
    check_record(ead(g, c.x, c.y, EadConfig{}), c.m);
  }
}

TEST_CASE("cw attacks reach a close boundary") {
  const ModelGraph m = binary_linear({1.0f, 1.0f}, -1.0f);
  const Tensor x = Tensor::vector({0.52f, 0.52f});
  CwL2Config l2;
  l2.lr = 0.05;
  const auto a = cw_l2(GradientOracle(m), x, 1, l2);
  CHECK(a.success);
  const auto b = cw_linf(GradientOracle(m), x, 1, CwLinfConfig{});
  CHECK(b.success);
  EadConfig e;
  e.lr = 0.05;
  const auto c = ead(GradientOracle(m), x, 1, e);
  CHECK(c.success);
}

TEST_CASE("diverging optimiser gives a failed record") {
  // logits overflow to +-inf
  const ModelGraph m = linear_classifier(2, 2, {3e38f, 3e38f, -3e38f, -3e38f}, {0, 0});
  const Tensor x = Tensor::vector({0.6f, 0.7f});
  const int y = m.predict(x);
  GradientOracle g(m);
  AdversarialResult r;
  CHECK_NOTHROW(r = cw_l2(g, x, y, CwL2Config{}));
  CHECK_FALSE(r.success);
  CHECK_NOTHROW(r = cw_linf(g, x, y, CwLinfConfig{}));
  CHECK_FALSE(r.success);
  CHECK_NOTHROW(r = ead(g, x, y, EadConfig{}));
  CHECK_FALSE(r.success);
}

// ---- APGD / AutoAttack --------------------------------------------------------------

TEST_CASE("apgd checkpoints") {
  const ApgdSchedule s(100, 1.0);
  CHECK(s.checkpoints() == std::vector<std::size_t>{22, 41, 57, 70, 80, 87, 93, 99});
}

TEST_CASE("apgd step halves exactly when the 75 percent rule fails") {
  ApgdSchedule s(100, 0.8);
  // window 1: 22 steps, 17 increases (17 >= 16.5, kept)
  for (std::size_t k = 1; k <= 22; ++k) CHECK_FALSE(s.record(k, k <= 17));
  CHECK(s.step() == 0.8);
  // window 2: 19 steps, 14 increases (14 < 14.25, halved)
  for (std::size_t k = 23; k <= 41; ++k) {
    const bool h = s.record(k, k <= 36);
    CHECK(h == (k == 41));
  }
  CHECK(s.step() == 0.4);
  // window 3: 16 steps, all increases
  for (std::size_t k = 42; k <= 57; ++k) s.record(k, true);
  CHECK(s.step() == 0.4);
  // window 4: 13 steps, none
  for (std::size_t k = 58; k <= 70; ++k) s.record(k, false);
  CHECK(s.step() == 0.2);
}

TEST_CASE("apgd stays inside the ball") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Case c = toy_case(s);
    ApgdConfig cfg;
    cfg.eps = 0.02;
    cfg.max_iter = 20;
    cfg.seed = s;
    for (auto loss : {ApgdLoss::CrossEntropy, ApgdLoss::Dlr}) {
      const auto r = apgd(GradientOracle(c.m), c.x, c.y, loss, cfg);
      CHECK(r.distortion.linf <= cfg.eps);
      check_record(r, c.m);
    }
  }
}

TEST_CASE("autoattack short-circuits on apgd success") {
  const ModelGraph m = binary_linear({1.0f, 1.0f}, -1.0f);
  const Tensor x = Tensor::vector({0.51f, 0.51f});
  GradientOracle g(m);
  const auto s = ScoreOracle::from_model(m);
  AutoAttackConfig cfg;
  cfg.eps = 0.05;
  const auto r = autoattack(g, s, x, 1, cfg);
  CHECK(r.success);
  CHECK(s.queries() == 0);
  CHECK(r.distortion.linf <= cfg.eps);
}

TEST_CASE("autoattack falls through to square") {
  // all-zero weights: no gradient signal, square cannot help either
  const ModelGraph m = linear_classifier(2, 2, {0, 0, 0, 0}, {1.0f, 0.0f});
  const Tensor x = Tensor::vector({0.5f, 0.5f});
  GradientOracle g(m);
  const auto s = ScoreOracle::from_model(m);
  AutoAttackConfig cfg;
  cfg.apgd_iter = 5;
  cfg.square_iter = 7;
  const auto r = autoattack(g, s, x, 0, cfg);
  CHECK_FALSE(r.success);
  CHECK(s.queries() == 1 + 1 + 7);
  CHECK(r.queries == g.forward_queries() + g.gradient_queries() + s.queries());
}

// ---- ZOO --------------------------------------------------------------------------------

TEST_CASE("zoo estimator is exact on a quadratic") {
  const auto f = [](const Tensor& t) {
    double s = 0.0;
    for (float v : t.data()) s += double(v) * v;
    return s;
  };
  const Tensor x = Tensor::vector({1.0f, -0.5f, 0.25f});
  CHECK(zoo_coordinate_gradient(f, x, 0, 1e-4) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(zoo_coordinate_gradient(f, x, 1, 1e-4) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK_THROWS_AS(zoo_coordinate_gradient(f, x, 3, 1e-4), InvalidArgument);
  CHECK_THROWS_AS(zoo_coordinate_gradient(f, x, 0, 0.0), InvalidArgument);
}

TEST_CASE("zoo estimator agrees with autodiff on toy models") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Case c = toy_case(s);
    const auto so = ScoreOracle::from_model(c.m, true);
    const auto f = [&](const Tensor& t) { return -std::log(so.probabilities(t)[std::size_t(c.y)]); };
    const Tensor ad = GradientOracle(c.m).loss_gradient(c.x, c.y).grad;
    Tensor est(c.x.shape());
    for (std::size_t i = 0; i < c.x.size(); ++i) est[i] = float(zoo_coordinate_gradient(f, c.x, i, 1e-4));
    CHECK(max_relative_error(est, ad) < 1e-3);
  }
}

TEST_CASE("zoo query count audit") {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Case c = toy_case(s);
    const auto so = ScoreOracle::from_model(c.m);
    ZooConfig cfg;
    cfg.max_iter = 3;
    cfg.bs_steps = 2;
    cfg.coords_per_iter = 5;
    cfg.seed = s;
    const auto r = zoo(so, c.x, c.y, cfg);
    const std::size_t expect = 2 * 2 * 3 * 5 + 1 + 2 * (1 + 3) + (r.success ? 1 : 0);
    CHECK(so.queries() == expect);
    CHECK(r.queries == expect);
    check_record(r, c.m);
  }
}

TEST_CASE("zoo flips a close linear boundary") {
  const ModelGraph m = binary_linear({1.0f, 1.0f}, -1.0f);
  const Tensor x = Tensor::vector({0.505f, 0.505f});
  ZooConfig cfg;
  cfg.lr = 0.02;
  const auto r = zoo(ScoreOracle::from_model(m), x, 1, cfg);
  CHECK(r.success);
}

// ---- Square ---------------------------------------------------------------------------

TEST_CASE("square linf bound and monotone loss") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Case c = toy_case(s);
    const auto so = ScoreOracle::from_model(c.m);
    SquareConfig cfg;
    cfg.eps = 0.05;
    cfg.max_iter = 200;
    cfg.seed = s;
    std::vector<double> trace;
    const auto r = square_attack(so, c.x, c.y, cfg, &trace);
    CHECK(r.distortion.linf <= cfg.eps);
    REQUIRE_FALSE(trace.empty());
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1]);
    CHECK(r.queries == so.queries());
    check_record(r, c.m);
  }
}

TEST_CASE("square l2 keeps the budget") {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Case c = toy_case(s);
    SquareConfig cfg = SquareConfig::l2_defaults();
    cfg.eps = 0.5;
    cfg.max_iter = 100;
    const auto r = square_attack(ScoreOracle::from_model(c.m), c.x, c.y, cfg);
    CHECK(r.distortion.l2 <= 0.5 + 1e-5);
    check_record(r, c.m);
  }
}

TEST_CASE("square attack matches exhaustive square placement") {
  // class 1 logit reads a 2x2 window of a 4x4 image
  const Shape shape{1, 4, 4};
  const double eps = 0.1;
  for (double need : {3.5, 4.5}) {
    std::vector<float> W(32, 0.0f);
    for (std::size_t h = 1; h < 3; ++h)
      for (std::size_t w = 1; w < 3; ++w) W[16 + h * 4 + w] = 1.0f;
    const float b1 = float(-(4 * 0.5 + need * eps));
    const ModelGraph m = image_linear(shape, 2, W, {0.0f, b1});
    const Tensor x(shape, 0.5f);
    REQUIRE(m.predict(x) == 0);
    // oracle: every square side, position and sign on top of the clean image
    bool oracle = false;
    for (std::size_t s = 1; s <= 4; ++s)
      for (std::size_t r0 = 0; r0 + s <= 4; ++r0)
        for (std::size_t c0 = 0; c0 + s <= 4; ++c0)
          for (double sign : {-1.0, 1.0}) {
            // remaining pixels may take either sign; pick the helpful one
            double z = b1;
            for (std::size_t h = 0; h < 4; ++h)
              for (std::size_t w = 0; w < 4; ++w) {
                const bool in = h >= r0 && h < r0 + s && w >= c0 && w < c0 + s;
                const double v = 0.5 + (in ? sign * eps : eps);
                z += W[16 + h * 4 + w] * v;
              }
            if (z > 0) oracle = true;
          }
    SquareConfig cfg;
    cfg.eps = eps;
    cfg.max_iter = 1000;
    const auto r = square_attack(ScoreOracle::from_model(m), x, 0, cfg);
    CHECK(r.success == oracle);
    CHECK(oracle == (need < 4.0));
  }
}

TEST_CASE("square rejects bad configs") {
  SquareConfig cfg;
  cfg.init_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.init_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

// ---- Boundary -------------------------------------------------------------------------

TEST_CASE("boundary attack distance is monotone") {
  int ran = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Case c = toy_case(s);
    const auto d = DecisionOracle::from_model(c.m);
    BoundaryConfig cfg;
    cfg.max_iter = 100;
    cfg.seed = s;
    std::vector<double> trace;
    try {
      const auto r = boundary_attack(d, c.x, c.y, cfg, &trace);
      for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
      CHECK(r.success);
      CHECK(r.distortion.l2 == doctest::Approx(trace.back()));
      check_record(r, c.m);
      ++ran;
    } catch (const InitFailed&) {
      // a model with one dominant class can defeat uniform init
    }
  }
  CHECK(ran >= 2);
}

TEST_CASE("boundary attack converges on a linear 2D classifier") {
  const ModelGraph m = binary_linear({1.0f, 1.0f}, -1.2f);
  const Tensor x = Tensor::vector({0.3f, 0.3f});
  REQUIRE(m.predict(x) == 0);
  const double analytic = std::abs(0.6 - 1.2) / std::sqrt(2.0);
  const auto r = boundary_attack(DecisionOracle::from_model(m), x, 0, BoundaryConfig{});
  CHECK(r.success);
  CHECK(r.distortion.l2 <= 1.1 * analytic);
  CHECK(r.distortion.l2 >= analytic - 1e-6);
}

TEST_CASE("boundary attack init failure") {
  const ModelGraph m = linear_classifier(2, 2, {0, 0, 0, 0}, {1.0f, 0.0f});
  CHECK_THROWS_AS(boundary_attack(DecisionOracle::from_model(m), Tensor::vector({0.5f, 0.5f}), 0,
                                  BoundaryConfig{}),
                  InitFailed);
  BoundaryConfig bad;
  bad.init_size = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

// ---- GeoDA ---------------------------------------------------------------------------

TEST_CASE("bisection stays within tolerance") {
  const ModelGraph m = binary_linear({1.0f, 0.0f}, -0.37f);
  const auto d = DecisionOracle::from_model(m);
  const Tensor in = Tensor::vector({0.0f, 0.5f});
  const Tensor out = Tensor::vector({1.0f, 0.5f});
  for (double tol : {1e-2, 1e-4}) {
    const Tensor p = bisect_boundary(d, in, out, 0, tol);
    CHECK(m.predict(p) == 1);
    CHECK(double(p[0]) - 0.37 <= tol);
    CHECK(double(p[0]) >= 0.37 - 1e-7);
  }
  CHECK_THROWS_AS(bisect_boundary(d, in, in, 0, 1e-3), BoundaryNotBracketed);
  CHECK_THROWS_AS(bisect_boundary(d, out, out, 0, 1e-3), BoundaryNotBracketed);
}

TEST_CASE("dct directions are unit length and low frequency") {
  Rng rng(4);
  const Tensor u = random_dct_direction(rng, {3, 8, 8}, 1);
  CHECK(l2_norm(u) == doctest::Approx(1.0).epsilon(1e-5));
  // block 1 is the constant image per channel
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 1; i < 64; ++i) CHECK(u[c * 64 + i] == doctest::Approx(u[c * 64]).epsilon(1e-5));
}

TEST_CASE("estimated normal aligns with a linear classifier") {
  Rng rng(9);
  std::vector<float> w(8);
  for (auto& v : w) v = float(rng.normal());
  const ModelGraph m = binary_linear(w, 0.0f);
  const auto d = DecisionOracle::from_model(m);
  Tensor p({8});  // on the boundary
  Rng prng(12);
  const Tensor nrm = estimate_normal(d, p, m.predict(p) == 0 ? 0 : 1, 1000, 1e-3, 8, prng);
  const int y = m.predict(p);
  Tensor wt({8});
  for (std::size_t i = 0; i < 8; ++i) wt[i] = y == 0 ? w[i] : -w[i];
  const double cosine = dot(nrm, wt) / (l2_norm(nrm) * l2_norm(wt));
  CHECK(cosine >= 0.9);
}

TEST_CASE("geoda finds a close adversarial on a linear classifier") {
  const ModelGraph m = binary_linear({1.0f, 1.0f, 1.0f, 1.0f}, -2.4f);
  const Tensor x = Tensor::vector({0.3f, 0.4f, 0.3f, 0.4f});
  REQUIRE(m.predict(x) == 0);
  GeoDaConfig cfg;
  cfg.dct_dim = 4;
  const auto r = geoda(DecisionOracle::from_model(m), x, 0, cfg);
  const double analytic = std::abs(1.4 - 2.4) / 2.0;
  CHECK(r.success);
  CHECK(r.distortion.l2 <= 1.2 * analytic);
  GeoDaConfig bad;
  bad.dct_dim = 5;
  CHECK_THROWS_AS(geoda(DecisionOracle::from_model(m), x, 0, bad), InvalidArgument);
}

// ---- black-box contracts --------------------------------------------------------------

TEST_CASE("black-box attacks never touch the gradient oracle") {
  const Case c = toy_case(8);
  const GradientOracle g(c.m);
  const auto so = ScoreOracle::from_model(g.model());
  const auto dec = DecisionOracle::from_model(g.model());
  ZooConfig z;
  z.max_iter = 2;
  z.bs_steps = 1;
  zoo(so, c.x, c.y, z);
  SquareConfig sq;
  sq.max_iter = 50;
  square_attack(so, c.x, c.y, sq);
  BoundaryConfig b;
  b.max_iter = 20;
  b.init_size = 500;
  GeoDaConfig gd;
  gd.max_iter = 2;
  gd.init_size = 500;
  try {
    boundary_attack(dec, c.x, c.y, b);
    geoda(dec, c.x, c.y, gd);
  } catch (const InitFailed&) {
  }
  CHECK(g.gradient_queries() == 0);
  CHECK(g.forward_queries() == 0);
  CHECK(so.queries() > 0);
  CHECK(dec.queries() > 0);
}

TEST_CASE("stochastic attacks are deterministic") {
  const Case c = toy_case(10);
  const auto so = ScoreOracle::from_model(c.m);
  const auto dec = DecisionOracle::from_model(c.m);
  SquareConfig sq;
  sq.max_iter = 100;
  sq.seed = 3;
  CHECK(square_attack(so, c.x, c.y, sq).adversarial == square_attack(so, c.x, c.y, sq).adversarial);
  PgdConfig p;
  p.eps = 0.02;
  p.step = 0.005;
  p.restarts = 3;
  p.max_iter = 5;
  p.seed = 4;
  const GradientOracle g(c.m);
  CHECK(pgd(g, c.x, c.y, p).adversarial == pgd(g, c.x, c.y, p).adversarial);
  ZooConfig z;
  z.max_iter = 2;
  z.bs_steps = 1;
  z.seed = 5;
  CHECK(zoo(so, c.x, c.y, z).adversarial == zoo(so, c.x, c.y, z).adversarial);
  BoundaryConfig b;
  b.max_iter = 30;
  b.init_size = 500;
  try {
    CHECK(boundary_attack(dec, c.x, c.y, b).adversarial == boundary_attack(dec, c.x, c.y, b).adversarial);
  } catch (const InitFailed&) {
  }
}

TEST_CASE("attacks reject mismatched inputs") {
  const Case c = toy_case(1);
  const GradientOracle g(c.m);
  CHECK_THROWS_AS(deepfool(g, Tensor({3}), 0, DeepFoolConfig{}), InvalidArgument);
  CHECK_THROWS_AS(deepfool(g, c.x, 99, DeepFoolConfig{}), InvalidArgument);
  CHECK_THROWS_AS(square_attack(ScoreOracle::from_model(c.m), c.x, -1, SquareConfig{}), InvalidArgument);
}
