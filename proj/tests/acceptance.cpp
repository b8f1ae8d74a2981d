// Acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

#include "attack_models.hpp"
#include "qadv/attacks.hpp"
#include "qadv/autodiff.hpp"
#include "qadv/defenses.hpp"
#include "qadv/error.hpp"
#include "qadv/harness.hpp"
#include "qadv/io.hpp"
#include "qadv/metrics.hpp"
#include "qadv/ops.hpp"
#include "qadv/quant.hpp"
#include "qadv/serialize.hpp"
#include "toy_fixture.hpp"

#ifndef QADV_CLI_PATH
#define QADV_CLI_PATH "qadv"
#endif

using namespace qadv;
using namespace qadv::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void report(int id, bool ok, double seconds, double limit, const std::string& detail) {
  const bool in_time = seconds < limit;
  const bool pass = ok && in_time;
  if (!pass) ++failures;
  std::printf("criterion %2d: %s  %s  [%.1fs / limit %.0fs%s]\n", id, pass ? "PASS" : "FAIL", detail.c_str(), seconds,
              limit, in_time ? "" : ", too slow");
  std::fflush(stdout);
}

template <class F>
void run(int id, double limit, F&& body) {
  const auto t = Clock::now();
  try {
    std::string detail;
    const bool ok = body(detail);
    report(id, ok, since(t), limit, detail);
  } catch (const std::exception& e) {
    report(id, false, since(t), limit, std::string("threw: ") + e.what());
  }
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Central differences written out here so the library helper is not its own oracle.
Tensor central_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor g(x.shape());
  Tensor p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = p[i];
    p[i] = float(double(orig) + h);
    const double up = f(p);
    const double hu = double(p[i]) - double(orig);
    p[i] = float(double(orig) - h);
    const double dn = f(p);
    const double hd = double(orig) - double(p[i]);
    p[i] = orig;
    g[i] = float((up - dn) / (hu + hd));
  }
  return g;
}

double scaled_error(const Tensor& got, const Tensor& ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num = std::max(num, std::abs(double(got[i]) - double(ref[i])));
    den = std::max(den, std::abs(double(ref[i])));
  }
  return den > 0.0 ? num / den : num;
}

// Round half away from zero then saturate: the affine scheme spelled out independently.
std::int64_t ref_quantize(double x, const QuantParams& p) {
  const double r = x / p.scale;
  const double q = (r >= 0 ? std::floor(r + 0.5) : std::ceil(r - 0.5)) + p.zero_point;
  return std::clamp<std::int64_t>(std::int64_t(q), p.qmin(), p.qmax());
}

// ---- shared toy experiment ----------------------------------------------------------------

// Spec whose dataset/model match the toy fixture (train seed 1, eval seed 2, 15 epochs).
Json toy_spec(const char* protocol, const fs::path& model_path, std::size_t eval) {
  return Json{{"protocol", protocol},
              {"model", {{"arch", "toy-resnet"}, {"path", model_path.string()}}},
              {"dataset", {{"kind", "shapes"}, {"classes", 10}, {"side", 16}, {"train_samples", 2000},
                           {"calibration_samples", 100}, {"eval_samples", eval}, {"seed", 1}}},
              {"seed", 1},
              {"output", {{"store_examples", false}}}};
}

const Cell& cell(const Report& r, const std::string& attack, BitWidth b) {
  for (const auto& c : r.cells)
    if (c.attack == attack && c.bitwidth == b) return c;
  throw InternalOverflow("missing cell " + attack);
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_file(a) == read_file(b); }

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "qadv_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  // 1 -------------------------------------------------------------------------------------------
  run(1, 10, [](std::string& d) {
    Rng rng(2024);
    std::size_t cases = 0, bad = 0, mismatch = 0;
    const double ranges[][2] = {{0.0, 1.0}, {-1.0, 1.0}, {-6.0, 0.5}, {-0.01, 3.7}};
    for (int bits : {8, 16})
      for (bool sym : {false, true})
        for (const auto& r : ranges) {
          const QuantParams p = choose_params(r[0], r[1], bits, sym);
          const double lo = (double(p.qmin()) - p.zero_point) * p.scale;
          const double hi = (double(p.qmax()) - p.zero_point) * p.scale;
          for (int i = 0; i < 1000000; ++i) {
            const double x = lo + (hi - lo) * rng.uniform();
            const std::int32_t q = quantize_value(x, p);
            mismatch += q != ref_quantize(x, p);
            bad += !(std::abs(dequantize_value(q, p) - x) <= p.scale / 2);
          }
          ++cases;
        }
    d = "round trip |deq(q(x))-x| <= scale/2 on " + std::to_string(cases) + " cases x 1e6 values; violations " +
        std::to_string(bad) + ", code mismatches " + std::to_string(mismatch);
    return bad == 0 && mismatch == 0;
  });

  // 2 -------------------------------------------------------------------------------------------
  run(2, 120, [](std::string& d) {
    Rng rng(7);
    std::int64_t worst = 0;
    std::size_t runs = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const ModelGraph m = random_toy_model(1000 + seed);
      const Dataset cal = random_calibration(rng, m.input_shape(), 8, m.classes());
      for (int bits : {8, 16}) {
        const QuantizedModel qm = quantize_model(m, cal, bits);
        for (int i = 0; i < 10; ++i) {
          worst = std::max(worst, conformance_lsb(qm, random_pixels(rng, m.input_shape())));
          ++runs;
        }
      }
    }
    d = "integer vs fake-quant over " + std::to_string(runs) + " runs, worst " + std::to_string(worst) + " LSB";
    return worst <= 1;
  });

  // 3 -------------------------------------------------------------------------------------------
  run(3, 60, [](std::string& d) {
    Rng rng(31);
    auto rnd = [&](Shape s, double gap = 0.02) {
      Tensor t(std::move(s));
      for (auto& v : t.data()) v = float(rng.sign() * (gap + (1.0 - gap) * rng.uniform()));
      return t;
    };
    auto spaced = [&](Shape s) {
      Tensor t(std::move(s));
      std::vector<std::size_t> perm(t.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      rng.shuffle(perm.begin(), perm.end());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = float((double(perm[i]) - double(t.size()) / 2) * 0.01);
      return t;
    };
    OpParams conv;
    conv.padding = 1;
    OpParams strided;
    strided.stride = 2;
    strided.padding = 1;
    OpParams pool;
    pool.pool = 2;
    pool.stride = 2;
    OpParams hard;
    hard.label = 1;
    OpParams soft;
    soft.soft_target = Tensor::vector({0.25f, 0.05f, 0.3f, 0.4f});
    OpParams scale;
    scale.factor = 1.75f;
    struct Case {
      OpKind kind;
      std::vector<Tensor> in;
      OpParams p;
    };
    const std::vector<Case> cases{
        {OpKind::Dense, {rnd({6}), rnd({4, 6}), rnd({4})}, {}},
        {OpKind::Conv2d, {rnd({2, 5, 5}), rnd({3, 2, 3, 3}), rnd({3})}, conv},
        {OpKind::Conv2d, {rnd({2, 7, 7}), rnd({2, 2, 3, 3}), rnd({2})}, strided},
        {OpKind::DepthwiseConv2d, {rnd({3, 5, 5}), rnd({3, 3, 3}), rnd({3})}, conv},
        {OpKind::Relu, {rnd({12})}, {}},
        {OpKind::MaxPool, {spaced({2, 4, 4})}, pool},
        {OpKind::AvgPool, {rnd({2, 4, 4})}, pool},
        {OpKind::Softmax, {rnd({7})}, {}},
        {OpKind::Add, {rnd({6}), rnd({6})}, {}},
        {OpKind::Flatten, {rnd({2, 3, 2})}, {}},
        {OpKind::CrossEntropy, {rnd({4})}, hard},
        {OpKind::CrossEntropy, {rnd({4})}, soft},
        {OpKind::Mul, {rnd({5}), rnd({5})}, {}},
        {OpKind::Sum, {rnd({5})}, {}},
        {OpKind::Scale, {rnd({5})}, scale},
    };
    double worst = 0.0;
    std::string worst_op;
    for (const auto& c : cases) {
      const Tensor out = forward_primitive(c.kind, c.in, c.p);
      const Tensor r = rnd(out.shape(), 0.0);
      const bool all[3] = {true, true, true};
      const auto grads = backward_primitive(c.kind, c.in, out, r, c.p, std::span<const bool>(all, c.in.size()));
      for (std::size_t k = 0; k < c.in.size(); ++k) {
        auto f = [&](const Tensor& probe) {
          auto ins = c.in;
          ins[k] = probe;
          return dot(forward_primitive(c.kind, ins, c.p), r);
        };
        const double e = scaled_error(grads[k], central_diff(f, c.in[k], 1e-3));
        if (e > worst) {
          worst = e;
          worst_op = std::string(op_name(c.kind));
        }
      }
    }
    d = std::to_string(cases.size()) + " primitive cases, worst relative error " + fmt("%.2e", worst) + " (" +
        worst_op + ")";
    return worst < 1e-3;
  });

  // 4 -------------------------------------------------------------------------------------------
  run(4, 30, [](std::string& d) {
    Rng rng(404);
    double worst = 0.0;
    int ok = 0;
    for (int t = 0; t < 50; ++t) {
      const std::size_t dim = 2 + rng.index(30);
      std::vector<float> w(dim);
      for (auto& v : w) v = float(rng.normal());
      const float b = float(rng.normal());
      const ModelGraph m = binary_linear(w, b);
      Tensor x({dim});
      for (auto& v : x.data()) v = float(rng.uniform(-1, 1));
      double f = b, n2 = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        f += double(w[i]) * x[i];
        n2 += double(w[i]) * w[i];
      }
      const double expect = std::abs(f) / std::sqrt(n2) * (1 + 0.008);
      DeepFoolConfig cfg;
      cfg.box = {-100.0f, 100.0f};
      const auto r = deepfool(GradientOracle(m), x, f > 0 ? 1 : 0, cfg);
      const double rel = std::abs(r.distortion.l2 - expect) / expect;
      worst = std::max(worst, rel);
      ok += r.success && rel <= 0.05;
    }
    d = "DeepFool L2 vs |f(x)|/||w||*(1.008) on 50 linear classifiers: " + std::to_string(ok) +
        "/50 within 5%, worst " + fmt("%.2e", worst);
    return ok == 50;
  });

  const ToyFixture& toy = toy_fixture();

  // 5 -------------------------------------------------------------------------------------------
  run(5, 300, [&](std::string& d) {
    const ModelGraph& m = toy.model;
    std::size_t linf_bad = 0, mono_bad = 0, loss_bad = 0, grad_bad = 0, init_failed = 0, checked = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      const Tensor& x = toy.test.images[i];
      const int y = toy.test.labels[i];
      const GradientOracle g(m);
      FgsmConfig fc;
      fc.eps = 0.03;
      linf_bad += !(fgsm(g, x, y, fc).distortion.linf <= fc.eps);
      PgdConfig pc;
      pc.eps = 0.02;
      pc.step = 0.005;
      pc.restarts = 2;
      pc.max_iter = 10;
      pc.seed = i;
      linf_bad += !(pgd(g, x, y, pc).distortion.linf <= pc.eps);
      PgdConfig pd;  // table defaults
      pd.seed = i;
      pd.restarts = 2;
      linf_bad += !(pgd(g, x, y, pd).distortion.linf <= pd.eps);

      // black-box side runs on oracles that never see the gradient oracle
      const auto s = ScoreOracle::from_model(m);
      const auto dec = DecisionOracle::from_model(m);
      SquareConfig sc;
      sc.eps = 0.05;
      sc.max_iter = 200;
      sc.seed = i;
      std::vector<double> trace;
      const auto sr = square_attack(s, x, y, sc, &trace);
      linf_bad += !(sr.distortion.linf <= sc.eps);
      for (std::size_t k = 1; k < trace.size(); ++k) loss_bad += trace[k] < trace[k - 1];
      BoundaryConfig bc;
      bc.max_iter = 60;
      bc.seed = i;
      std::vector<double> dist;
      try {
        boundary_attack(dec, x, y, bc, &dist);
        for (std::size_t k = 1; k < dist.size(); ++k) mono_bad += dist[k] > dist[k - 1];
      } catch (const InitFailed&) {
        ++init_failed;
      }
      ZooConfig zc;
      zc.max_iter = 3;
      zc.bs_steps = 1;
      zc.seed = i;
      zoo(s, x, y, zc);
      GeoDaConfig gc;
      gc.max_iter = 2;
      gc.seed = i;
      try {
        geoda(dec, x, y, gc);
      } catch (const InitFailed&) {
        ++init_failed;
      }
      // the gradient oracle above is the only one allowed to count gradients
      const GradientOracle audit(m);
      const auto s2 = ScoreOracle::from_model(audit.model());
      const auto d2 = DecisionOracle::from_model(audit.model());
      square_attack(s2, x, y, sc);
      try {
        boundary_attack(d2, x, y, bc);
      } catch (const InitFailed&) {
      }
      grad_bad += audit.gradient_queries() != 0;
      ++checked;
    }
    d = std::to_string(checked) + " samples: linf violations " + std::to_string(linf_bad) +
        ", square loss drops " + std::to_string(loss_bad) + ", boundary distance increases " +
        std::to_string(mono_bad) + ", black-box gradient queries " + std::to_string(grad_bad) +
        " (init failures " + std::to_string(init_failed) + ")";
    return linf_bad == 0 && loss_bad == 0 && mono_bad == 0 && grad_bad == 0;
  });

  // 6 -------------------------------------------------------------------------------------------
  run(6, 30, [](std::string& d) {
    const auto quad = [](const Tensor& t) {
      double s = 0.0;
      for (float v : t.data()) s += double(v) * v;
      return s;
    };
    const double v = zoo_coordinate_gradient(quad, Tensor::vector({1.0f, 3.0f}), 0, 1e-4);
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 4; ++s) {
      const ModelGraph m = random_toy_model(500 + s);
      Rng rng(s);
      const Tensor x = random_pixels(rng, m.input_shape());
      const int y = m.predict(x);
      const auto so = ScoreOracle::from_model(m, true);
      const auto f = [&](const Tensor& t) { return -std::log(so.probabilities(t)[std::size_t(y)]); };
      Tensor est(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) est[i] = float(zoo_coordinate_gradient(f, x, i, 1e-4));
      worst = std::max(worst, scaled_error(est, GradientOracle(m).loss_gradient(x, y).grad));
    }
    d = "quadratic estimate " + fmt("%.9f", v) + " (exact 2), toy-model agreement worst " + fmt("%.2e", worst);
    return std::abs(v - 2.0) < 1e-6 && worst < 1e-3;
  });

  // 7 -------------------------------------------------------------------------------------------
  run(7, 10, [&](std::string& d) {
    std::vector<Tensor> xs(toy.test.images.begin(), toy.test.images.begin() + 100);
    std::vector<int> ys(toy.test.labels.begin(), toy.test.labels.begin() + 100);
    const GradientOracle g(toy.model);
    const auto c = gradient_cosine_similarity(g, g, xs, ys);
    d = "cosine(float32, float32) = " + fmt("%.9f", c.mean) + " over " + std::to_string(c.used) +
        " samples (expected 1.00)";
    return std::abs(c.mean - 1.0) <= 1e-6;
  });

  // the toy model with its calibration set, shared by 8-12
  const fs::path model_path = work / "toy.qmod";
  save_model(toy.model, model_path);
  const Dataset calibration = make_shapes_dataset(100, 10, 3, Split::Calibration);
  const double toy_acc = evaluate_accuracy([&](const Tensor& x) { return toy.model.predict(x); }, toy.test);

  // 8 -------------------------------------------------------------------------------------------
  run(8, 600, [&](std::string& d) {
    const QuantizedModel q16 = quantize_model(toy.model, calibration, 16);
    const QuantizedModel q8 = quantize_model(toy.model, calibration, 8);
    const ScoreOracle oracles[] = {ScoreOracle::from_model(toy.model), ScoreOracle::from_quantized(q16),
                                   ScoreOracle::from_quantized(q8)};
    double density[3] = {0, 0, 0};
    const std::size_t n = 100;
    for (int k = 0; k < 3; ++k) {
      std::size_t zeros = 0, total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = std::size_t(toy.test.labels[i]);
        const auto f = [&](const Tensor& t) { return -std::log(oracles[k].probabilities(t)[y]); };
        const Tensor g = central_diff(f, toy.test.images[i], 1e-4);
        for (float v : g.data()) zeros += v == 0.0f;
        total += g.size();
      }
      density[k] = double(zeros) / double(total);
    }
    // cross-check against the library diagnostic on a few samples
    std::vector<Tensor> few(toy.test.images.begin(), toy.test.images.begin() + 3);
    double lib8 = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t y = std::size_t(toy.test.labels[i]);
      lib8 += gradient_zero_density([&](const Tensor& t) { return -std::log(oracles[2].probabilities(t)[y]); },
                                    {few[i]}, 1e-4) / 3;
    }
    d = "toy acc " + fmt("%.3f", toy_acc) + "; zero density int8 " + fmt("%.4f", density[2]) + " >= int16 " +
        fmt("%.4f", density[1]) + " >= float32 " + fmt("%.4f", density[0]) +
        " (ordering only); library int8 on 3 samples " + fmt("%.4f", lib8);
    return toy_acc >= 0.9 && density[2] >= density[1] && density[1] >= density[0];
  });

  // 9 -------------------------------------------------------------------------------------------
  run(9, 600, [&](std::string& d) {
    Json j = toy_spec("transfer", model_path, 200);
    j["attacks"] = {"deepfool"};
    const Report r = run_experiment(ExperimentSpec::from_json(j));
    const double f = cell(r, "deepfool", BitWidth::Float32).accuracy;
    const double a16 = cell(r, "deepfool", BitWidth::Int16).accuracy;
    const double a8 = cell(r, "deepfool", BitWidth::Int8).accuracy;
    d = "transferred DeepFool, 200 samples: int8 " + fmt("%.3f", a8) + " >= int16 " + fmt("%.3f", a16) +
        " >= float32 " + fmt("%.3f", f) + ", gap " + fmt("%.1f", 100 * (a8 - f)) + " points (need >= 10)";
    return a8 >= a16 && a16 >= f && a8 - f >= 0.10 - 1e-12;
  });

  // 10 ------------------------------------------------------------------------------------------
  run(10, 1200, [&](std::string& d) {
    std::vector<Tensor> xs(toy.test.images.begin(), toy.test.images.begin() + 100);
    std::vector<int> ys(toy.test.labels.begin(), toy.test.labels.begin() + 100);
    const auto base = boundary_distance(GradientOracle(toy.model), xs, ys);
    const Json adv{{"eps", 0.08}, {"step", 0.008}, {"iters", 10}, {"epochs", 8}, {"learning_rate", 0.01}};
    double ratio[2] = {0, 0};
    double acc[2] = {0, 0};
    const char* names[2] = {"pgd-advt", "sinkhorn-advt"};
    for (int k = 0; k < 2; ++k) {
      Json j = toy_spec("defense-eval", model_path, 100);
      Json p = adv;
      if (k == 1) p["reduction_mean"] = true;
      j["defense"] = {{"name", names[k]}, {"params", p}};
      const ExperimentSpec spec = ExperimentSpec::from_json(j);
      const ModelGraph hard = apply_defense(spec, toy.model, toy.train);
      const auto bd = boundary_distance(GradientOracle(hard), xs, ys);
      ratio[k] = bd.mean.value_or(0.0) / base.mean.value();
      acc[k] = evaluate_accuracy([&](const Tensor& x) { return hard.predict(x); }, toy.test);
    }
    d = "DeepFool boundary distance ratio vs undefended (" + fmt("%.4f", *base.mean) + "): PGD-AdvT " +
        fmt("%.2f", ratio[0]) + "x (acc " + fmt("%.3f", acc[0]) + "), Sinkhorn-AdvT " + fmt("%.2f", ratio[1]) +
        "x (acc " + fmt("%.3f", acc[1]) + "), need >= 1.5x";
    return ratio[0] >= 1.5 && ratio[1] >= 1.5;
  });

  // 11 ------------------------------------------------------------------------------------------
  run(11, 600, [&](std::string& d) {
    Json j = toy_spec("defense-eval", model_path, 200);
    j["bitwidths"] = {"float32", "int8"};
    j["attacks"] = {"cw-linf"};
    j["defense"] = "feature-squeezing";
    const Report r = run_experiment(ExperimentSpec::from_json(j));
    const Cell& f = cell(r, "cw-linf", BitWidth::Float32);
    const Cell& q = cell(r, "cw-linf", BitWidth::Int8);
    const double gap = f.accuracy - *f.undefended_accuracy;
    d = "transferred C&W-Linf, 200 samples: squeezed " + fmt("%.3f", f.accuracy) + " vs unsqueezed " +
        fmt("%.3f", *f.undefended_accuracy) + " (+" + fmt("%.1f", 100 * gap) + " points, need >= 15); int8 " +
        fmt("%.3f", q.accuracy) + " vs " + fmt("%.3f", *q.undefended_accuracy);
    return gap >= 0.15 - 1e-12;
  });

  // 12 ------------------------------------------------------------------------------------------
  run(12, 600, [&](std::string& d) {
    const std::string cli = QADV_CLI_PATH;
    std::string outcome;
    bool ok = true;
    int n = 0;
    const std::pair<const char*, Json> protocols[] = {
        {"transfer", Json::array({Json{{"name", "fgsm"}, {"params", {{"eps", 0.02}}}}, "deepfool",
                                  Json{{"name", "square-linf"}, {"params", {{"max_iter", 100}}}}})},
        {"direct", Json::array({Json{{"name", "square-linf"}, {"params", {{"max_iter", 100}}}},
                                Json{{"name", "boundary"}, {"params", {{"max_iter", 30}}}}})}};
    for (const auto& [protocol, attacks] : protocols) {
      Json j = toy_spec(protocol, model_path, 30);
      j["attacks"] = attacks;
      j["output"]["store_examples"] = true;
      j["diagnostics"] = {{"cosine", true}, {"boundary_distance", true}, {"samples", 5}};
      const fs::path spec = work / (std::string(protocol) + ".json");
      write_text(spec, j.dump(2));
      bool same = true;
      for (int run = 0; run < 2; ++run) {
        const fs::path out = work / (std::string(protocol) + "_run" + std::to_string(run));
        const std::string cmd = "\"" + cli + "\" eval --config \"" + spec.string() + "\" --out \"" + out.string() +
                                "\" > /dev/null";
        if (std::system(cmd.c_str()) != 0) throw IoError("cli failed: " + cmd);
      }
      const fs::path a = work / (std::string(protocol) + "_run0"), b = work / (std::string(protocol) + "_run1");
      for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), a);
        same = same && fs::exists(b / rel) && same_bytes(e.path(), b / rel);
        ++n;
      }
      ok = ok && same;
      outcome += std::string(outcome.empty() ? "" : ", ") + protocol + (same ? " identical" : " DIFFERENT");
    }
    d = "cli eval run twice: " + outcome + " (" + std::to_string(n) + " files compared)";
    return ok;
  });

  std::printf("%s: %d criteria failed\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failures);
  return failures ? 1 : 0;
}
