#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "harness_internal.hpp"
#include "qadv/defenses.hpp"
#include "qadv/error.hpp"
#include "qadv/io.hpp"
#include "qadv/random.hpp"
#include "qadv/serialize.hpp"

namespace qadv {

namespace {

using detail::Oracles;
using detail::ResolvedAttack;

std::string hash_of(const Json& j) { return hex64(fnv1a(j.dump())); }

std::string hash_of(const std::vector<std::uint8_t>& bytes) {
  return hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

// ---- defenses from spec -----------------------------------------------------------------

double param(const Json& p, const char* key, double fallback) {
  return p.contains(key) ? p.at(key).get<double>() : fallback;
}
std::size_t count_param(const Json& p, const char* key, std::size_t fallback) {
  return p.contains(key) ? p.at(key).get<std::size_t>() : fallback;
}

TrainConfig defense_train(const ExperimentSpec& spec, std::size_t default_epochs) {
  const Json& p = spec.defense->params;
  TrainConfig t = spec.model.train;
  t.epochs = count_param(p, "epochs", default_epochs);
  t.learning_rate = float(param(p, "learning_rate", t.learning_rate));
  t.seed = count_param(p, "seed", t.seed);
  return t;
}

AdvTrainConfig adv_config(const ExperimentSpec& spec) {
  const Json& p = spec.defense->params;
  AdvTrainConfig c = AdvTrainConfig::defaults();
  c.eps = param(p, "eps", c.eps);
  c.step = param(p, "step", c.step);
  c.iters = count_param(p, "iters", c.iters);
  c.train = defense_train(spec, c.train.epochs);
  return c;
}

FeatureSqueezeConfig squeeze_config(const DefenseSpec& d) {
  FeatureSqueezeConfig c;
  c.bit_depth = int(count_param(d.params, "bit_depth", std::size_t(c.bit_depth)));
  c.window = count_param(d.params, "window", c.window);
  c.detect_threshold = param(d.params, "detect_threshold", c.detect_threshold);
  return c;
}

ModelGraph fresh_model(const ExperimentSpec& spec, const Shape& shape, std::size_t classes, std::uint64_t seed) {
  return spec.model.arch == "toy-dscnn" ? build_toy_dscnn(shape, classes, seed)
                                        : build_toy_resnet(shape, classes, seed);
}

// ---- pipelines ------------------------------------------------------------------------------

// One bit-width of one model, optionally behind feature squeezing.
struct Pipeline {
  BitWidth bitwidth = BitWidth::Float32;
  const ModelGraph* model = nullptr;
  std::optional<QuantizedModel> qm;
  std::optional<FeatureSqueezeConfig> squeeze;

  ScoreOracle score() const {
    ScoreOracle s = qm ? ScoreOracle::from_quantized(*qm) : ScoreOracle::from_model(*model);
    return squeeze ? squeezed(s, *squeeze) : s;
  }
  DecisionOracle decision() const {
    DecisionOracle d = qm ? DecisionOracle::from_quantized(*qm) : DecisionOracle::from_model(*model);
    return squeeze ? squeezed(d, *squeeze) : d;
  }
  // Input actually handed to this model by the transfer protocol.
  Tensor transfer_input(const Tensor& x) const { return qm ? quantize_adversarial_input(x, *qm) : x; }
};

struct Models {
  Datasets data;
  ModelGraph model;
  std::map<BitWidth, QuantizedModel> quantized;

  Pipeline pipeline(BitWidth b, std::optional<FeatureSqueezeConfig> sq = std::nullopt) const {
    Pipeline p;
    p.bitwidth = b;
    p.model = &model;
    if (b != BitWidth::Float32) p.qm = quantized.at(b);
    p.squeeze = sq;
    return p;
  }
};

void quantize_all(Models& m, const ExperimentSpec& spec) {
  for (auto b : spec.bitwidths)
    if (b != BitWidth::Float32) m.quantized.emplace(b, quantize_model(m.model, m.data.calibration, bits_of(b)));
}

double clean_accuracy(const Pipeline& p, const Dataset& eval) {
  const DecisionOracle d = p.decision();
  return evaluate_accuracy([&](const Tensor& x) { return d.decide(x); }, eval);
}

// ---- crafting ---------------------------------------------------------------------------------

struct Crafted {
  std::vector<AdversarialResult> results;
  std::size_t aborted = 0;
  std::string calibrated_param;
  std::optional<double> calibrated_value;
};

Crafted craft_once(const ResolvedAttack& a, const Oracles& o, const Dataset& eval, std::uint64_t seed) {
  Crafted c;
  c.results.reserve(eval.size());
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const Tensor& x = eval.images[i];
    const int y = eval.labels[i];
    try {
      c.results.push_back(detail::run_attack(a, o, x, y, mix_seed(seed, i)));
      continue;
    } catch (const InitFailed&) {
    } catch (const GradientDegenerate&) {
    } catch (const BoundaryNotBracketed&) {
    } catch (const NumericDomainError&) {
    }
    // the attack gave up: keep the clean sample as a failed record
    ++c.aborted;
    c.results.push_back(make_result(x, y, x, y, 0, 0));
  }
  return c;
}

// Crafts against `p`, doubling the attack strength while the accuracy of `p`
// stays at or above random choice (when calibration is on).
Crafted craft(ResolvedAttack a, const Pipeline& p, const Dataset& eval, const ExperimentSpec& spec) {
  std::optional<GradientOracle> g;
  if (!p.qm && !p.squeeze) g.emplace(*p.model);
  const ScoreOracle s = p.score();
  const DecisionOracle d = p.decision();
  const Oracles o{g ? &*g : nullptr, &s, &d};
  if (!spec.calibration.enabled) return craft_once(a, o, eval, spec.seed);
  const double chance = 1.0 / double(eval.classes);
  for (std::size_t k = 0;; ++k) {
    Crafted c = craft_once(a, o, eval, spec.seed);
    const DecisionOracle fresh = p.decision();
    const double acc = adversarial_accuracy(fresh, c.results);
    if (acc < chance || k == spec.calibration.max_doublings) {
      c.calibrated_param = a.primary();
      c.calibrated_value = a.primary_value();
      return c;
    }
    a.double_primary();
  }
}

// ---- cells ------------------------------------------------------------------------------------

std::string file_stem(const std::string& attack, BitWidth b, const std::string& tag) {
  std::string s = attack + "_" + std::string(bitwidth_name(b));
  if (!tag.empty()) s += "_" + tag;
  return s;
}

Cell make_cell(const ExperimentSpec& spec, const std::string& attack, const Pipeline& p, const Crafted& crafted,
               const std::vector<AdversarialResult>& inputs, const Dataset& eval, const std::string& tag) {
  Cell c;
  c.attack = attack;
  c.bitwidth = p.bitwidth;
  const DecisionOracle d = p.decision();
  c.accuracy = adversarial_accuracy(d, inputs);
  c.clean_accuracy = clean_accuracy(p, eval);
  c.distortion = distortion_stats(crafted.results);
  for (const auto& r : crafted.results) c.total_queries += r.queries;
  c.mean_queries = crafted.results.empty() ? 0.0 : double(c.total_queries) / double(crafted.results.size());
  c.aborted = crafted.aborted;
  c.calibrated_param = crafted.calibrated_param;
  c.calibrated_value = crafted.calibrated_value;
  if (spec.store_examples && !spec.out_dir.empty()) {
    Dataset ex;
    ex.classes = eval.classes;
    ex.split = Split::Test;
    for (const auto& r : inputs) {
      ex.images.push_back(r.adversarial);
      ex.labels.push_back(r.original_label);
    }
    const std::string stem = file_stem(attack, p.bitwidth, tag);
    c.examples_file = "examples/" + stem + ".qten";
    c.labels_file = "examples/" + stem + "_labels.qten";
    const std::filesystem::path root(spec.out_dir);
    std::filesystem::create_directories(root / "examples");
    save_dataset_raw(ex, root / c.examples_file, root / c.labels_file);
  }
  return c;
}

std::vector<AdversarialResult> transferred(const std::vector<AdversarialResult>& src, const Pipeline& p) {
  std::vector<AdversarialResult> out = src;
  for (auto& r : out) r.adversarial = p.transfer_input(r.adversarial);
  return out;
}

std::vector<ResolvedAttack> resolved_attacks(const ExperimentSpec& spec) {
  std::vector<ResolvedAttack> out;
  if (spec.attacks.empty())
    for (const auto& n : default_defense_attacks()) out.push_back(detail::resolve_attack_params({n, Json::object()}));
  for (const auto& a : spec.attacks) out.push_back(detail::resolve_attack_params(a));
  return out;
}

// ---- diagnostics ------------------------------------------------------------------------------

Json diagnostics_for(const ExperimentSpec& spec, const Models& m) {
  const DiagnosticsSpec& ds = spec.diagnostics;
  Json out = Json::object();
  if (!ds.zero_density && !ds.cosine && !ds.boundary_distance) return out;
  const std::size_t n = std::min(ds.samples, m.data.eval.size());
  std::vector<Tensor> xs(m.data.eval.images.begin(), m.data.eval.images.begin() + long(n));
  std::vector<int> ys(m.data.eval.labels.begin(), m.data.eval.labels.begin() + long(n));
  out["samples"] = n;
  if (ds.zero_density) {
    out["h"] = ds.h;
    Json zd = Json::object();
    for (auto b : spec.bitwidths) {
      const ScoreOracle s = m.pipeline(b).score();
      std::size_t idx = 0;
      const auto f = [&](const Tensor& x) {
        const double p = s.probabilities(x)[std::size_t(ys[idx])];
        return -std::log(std::max(p, 1e-300));
      };
      double total = 0.0;
      for (idx = 0; idx < n; ++idx) total += gradient_zero_density(f, {xs[idx]}, ds.h);
      zd[std::string(bitwidth_name(b))] = n ? total / double(n) : 0.0;
    }
    out["zero_density"] = zd;
  }
  // gradient-based diagnostics of integer models use their dequantized float twins
  auto float_twin = [&](BitWidth b) {
    return b == BitWidth::Float32 ? m.model : dequantize_model(m.quantized.at(b));
  };
  if (ds.cosine) {
    Json cs = Json::object();
    const GradientOracle ref(m.model);
    for (auto b : spec.bitwidths) {
      const GradientOracle other(float_twin(b));
      try {
        const auto c = gradient_cosine_similarity(ref, other, xs, ys);
        cs[std::string(bitwidth_name(b))] = {{"mean", c.mean}, {"used", c.used}, {"zero_gradient", c.zero_gradient}};
      } catch (const UndefinedSimilarity& e) {
        cs[std::string(bitwidth_name(b))] = {{"undefined", e.what()}};
      }
    }
    out["cosine"] = cs;
  }
  if (ds.boundary_distance) {
    Json bd = Json::object();
    for (auto b : spec.bitwidths) {
      const auto r = boundary_distance(GradientOracle(float_twin(b)), xs, ys);
      Json e = {{"measured", r.measured}, {"skipped", r.skipped}, {"degenerate", r.degenerate}};
      e["mean_l2"] = r.mean ? Json(*r.mean) : Json(nullptr);
      bd[std::string(bitwidth_name(b))] = e;
    }
    out["boundary_distance"] = bd;
  }
  return out;
}

// ---- manifest ---------------------------------------------------------------------------------

Json manifest_for(const ExperimentSpec& spec, const Models& m, const std::vector<ResolvedAttack>& attacks) {
  Json man;
  man["code_version"] = kCodeVersion;
  man["seed"] = spec.seed;
  man["per_sample_seed"] = "mix_seed(seed, sample_index)";
  man["spec"] = spec.to_json();
  man["spec"]["output"].erase("dir");  // where the run wrote is not part of the experiment
  man["spec_hash"] = hash_of(man["spec"]);
  Json at = Json::object();
  for (const auto& a : attacks) {
    const Json r = a.resolved();
    at[a.name] = {{"params", r}, {"hash", hash_of(r)}, {"tier", a.tier == AttackTier::WhiteBox ? "white-box"
                                                                 : a.tier == AttackTier::GrayBox ? "gray-box"
                                                                                                 : "black-box"}};
  }
  man["attacks"] = at;
  man["model_hash"] = hash_of(encode_model(m.model));
  Json q = Json::object();
  for (const auto& [b, qm] : m.quantized) q[std::string(bitwidth_name(b))] = hash_of(encode_quantized_model(qm));
  man["quantized_model_hashes"] = q;
  man["dataset"] = {{"train", m.data.train.size()},
                    {"calibration", m.data.calibration.size()},
                    {"eval", m.data.eval.size()},
                    {"classes", m.data.eval.classes}};
  if (spec.diagnostics.zero_density) man["zero_density_h"] = spec.diagnostics.h;
  return man;
}

void seal(Report& r) {
  r.manifest.erase("manifest_hash");
  r.manifest["manifest_hash"] = hash_of(r.manifest);
}

Models setup(const ExperimentSpec& spec) {
  Models m;
  m.data = load_datasets(spec.dataset);
  m.model = build_model(spec, m.data.train);
  quantize_all(m, spec);
  return m;
}

BitWidth first_float(const ExperimentSpec&) { return BitWidth::Float32; }

}  // namespace

// ---- ingredients --------------------------------------------------------------------------

Datasets load_datasets(const DatasetSpec& s) {
  Datasets d;
  if (s.kind == "shapes") {
    d.train = make_shapes_dataset(s.train_samples, s.classes, s.seed, Split::Train, s.side, s.channels);
    d.eval = make_shapes_dataset(s.eval_samples, s.classes, s.seed + 1, Split::Test, s.side, s.channels);
    d.calibration = make_shapes_dataset(std::max<std::size_t>(s.calibration_samples, 1), s.classes, s.seed + 2,
                                        Split::Calibration, s.side, s.channels);
  } else if (s.kind == "cifar10") {
    if (!s.train_path.empty()) d.train = load_cifar10_binary(s.train_path, s.train_samples, Split::Train);
    d.eval = load_cifar10_binary(s.test_path, s.eval_samples, Split::Test);
    const Dataset& src = d.train.empty() ? d.eval : d.train;
    d.calibration = src.slice(0, std::min(std::max<std::size_t>(s.calibration_samples, 1), src.size()));
    d.calibration.split = Split::Calibration;
  } else {
    if (!s.train_path.empty()) {
      d.train = load_dataset_raw(s.train_path, s.train_labels, s.classes, Split::Train);
      if (s.train_samples && s.train_samples < d.train.size()) d.train = d.train.slice(0, s.train_samples);
    }
    d.eval = load_dataset_raw(s.test_path, s.test_labels, s.classes, Split::Test);
    if (s.eval_samples < d.eval.size()) d.eval = d.eval.slice(0, s.eval_samples);
    const Dataset& src = d.train.empty() ? d.eval : d.train;
    d.calibration = src.slice(0, std::min(std::max<std::size_t>(s.calibration_samples, 1), src.size()));
    d.calibration.split = Split::Calibration;
  }
  return d;
}

ModelGraph build_model(const ExperimentSpec& spec, const Dataset& train) {
  if (!spec.model.path.empty()) return load_model(spec.model.path);
  if (train.empty()) throw InvalidSpec("model: no path given and the dataset has no training split");
  const ModelGraph init =
      fresh_model(spec, train.images.front().shape(), train.classes, spec.model.train.seed);
  return qadv::train(init, train, spec.model.train).model;
}

ModelGraph apply_defense(const ExperimentSpec& spec, const ModelGraph& vanilla, const Dataset& train) {
  if (!spec.defense) throw InvalidSpec("defense: none configured");
  const DefenseSpec& d = *spec.defense;
  if (is_preprocessing_defense(d.name)) return vanilla;
  if (train.empty()) throw InvalidSpec("defense " + d.name + ": needs a training split");
  const Json& p = d.params;
  const ModelGraph fresh = fresh_model(spec, vanilla.input_shape(), vanilla.classes(), spec.model.train.seed);
  // adversarial training retrains the vanilla float weights unless told otherwise
  const bool scratch = p.contains("from_scratch") && p.at("from_scratch").get<bool>();
  const ModelGraph& init = scratch ? fresh : vanilla;
  if (d.name == "distillation") {
    DistillationConfig c;
    c.temperature = param(p, "temperature", c.temperature);
    c.alpha = param(p, "alpha", c.alpha);
    c.train = defense_train(spec, spec.model.train.epochs);
    return distill_train(fresh, train, c).model;
  }
  if (d.name == "pgd-advt") return pgd_adversarial_train(init, train, adv_config(spec)).model;
  if (d.name == "ensemble-advt") {
    EnsembleAdvTrainConfig c;
    c.pgd = adv_config(spec);
    c.fgsm_eps = param(p, "fgsm_eps", c.fgsm_eps);
    const std::size_t n = count_param(p, "sources", 2);
    if (n == 0) throw InvalidSpec("defense ensemble-advt: sources must be >= 1");
    std::vector<ModelGraph> sources;
    for (std::size_t k = 0; k < n; ++k) {
      // pre-trained static sources, alternating architectures, distinct seeds
      const std::uint64_t seed = mix_seed(spec.model.train.seed, 1000 + k);
      ModelGraph src = k % 2 == 0 ? build_toy_dscnn(vanilla.input_shape(), vanilla.classes(), seed)
                                  : build_toy_resnet(vanilla.input_shape(), vanilla.classes(), seed);
      TrainConfig t = spec.model.train;
      t.seed = seed;
      sources.push_back(qadv::train(src, train, t).model);
    }
    return ensemble_adversarial_train(init, train, sources, c).model;
  }
  SinkhornAdvTrainConfig c;
  c.pgd = adv_config(spec);
  c.sinkhorn.eps = param(p, "sink_eps", c.sinkhorn.eps);
  c.sinkhorn.iters = count_param(p, "sink_iters", c.sinkhorn.iters);
  if (p.contains("reduction_mean") && p.at("reduction_mean").get<bool>()) c.sinkhorn.reduction = SinkhornReduction::Mean;
  c.weight = param(p, "weight", c.weight);
  return sinkhorn_adversarial_train(init, train, c).model;
}

// ---- protocols --------------------------------------------------------------------------------

Report run_direct(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.protocol != Protocol::Direct) throw InvalidSpec("run_direct: spec protocol is " + std::string(protocol_name(spec.protocol)));
  const Models m = setup(spec);
  const auto attacks = resolved_attacks(spec);
  Report r;
  r.protocol = Protocol::Direct;
  for (const auto& a : attacks)
    for (auto b : spec.bitwidths) {
      if (a.tier == AttackTier::WhiteBox && b != BitWidth::Float32)
        throw InvalidSpec("attack " + a.name + ": white-box attack on " + std::string(bitwidth_name(b)));
      const Pipeline p = m.pipeline(b);
      const Crafted c = craft(a, p, m.data.eval, spec);
      r.cells.push_back(make_cell(spec, a.name, p, c, c.results, m.data.eval, ""));
    }
  r.diagnostics = diagnostics_for(spec, m);
  r.manifest = manifest_for(spec, m, attacks);
  seal(r);
  return r;
}

Report run_transfer(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.protocol != Protocol::Transfer) throw InvalidSpec("run_transfer: spec protocol is " + std::string(protocol_name(spec.protocol)));
  const Models m = setup(spec);
  const auto attacks = resolved_attacks(spec);
  Report r;
  r.protocol = Protocol::Transfer;
  for (const auto& a : attacks) {
    const Crafted c = craft(a, m.pipeline(first_float(spec)), m.data.eval, spec);
    for (auto b : spec.bitwidths) {
      const Pipeline p = m.pipeline(b);
      r.cells.push_back(make_cell(spec, a.name, p, c, transferred(c.results, p), m.data.eval, ""));
    }
  }
  r.diagnostics = diagnostics_for(spec, m);
  r.manifest = manifest_for(spec, m, attacks);
  seal(r);
  return r;
}

Report run_defense_eval(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.protocol != Protocol::DefenseEval) throw InvalidSpec("run_defense_eval: spec protocol is " + std::string(protocol_name(spec.protocol)));
  const Models vanilla = setup(spec);
  const auto attacks = resolved_attacks(spec);
  const DefenseSpec& d = *spec.defense;
  const bool pre = is_preprocessing_defense(d.name);

  Models hardened;
  std::optional<FeatureSqueezeConfig> sq;
  if (pre) {
    sq = squeeze_config(d);
    try {
      sq->validate();
    } catch (const InvalidArgument& e) {
      throw InvalidSpec(std::string("defense feature-squeezing: ") + e.what());
    }
  } else {
    hardened.data = vanilla.data;
    hardened.model = apply_defense(spec, vanilla.model, vanilla.data.train);
    quantize_all(hardened, spec);
  }
  const Models& defended = pre ? vanilla : hardened;

  Report r;
  r.protocol = Protocol::DefenseEval;
  const Dataset& eval = vanilla.data.eval;
  for (const auto& a : attacks) {
    // examples produced against the vanilla float model
    const Crafted base = craft(a, vanilla.pipeline(BitWidth::Float32), eval, spec);
    std::optional<Crafted> hard;
    if (!pre) hard = craft(a, defended.pipeline(BitWidth::Float32), eval, spec);
    for (auto b : spec.bitwidths) {
      const Pipeline undef = vanilla.pipeline(b);
      const Pipeline def = defended.pipeline(b, sq);
      Cell c;
      if (pre && spec.recraft) {
        const Crafted rc = craft(a, def, eval, spec);
        c = make_cell(spec, a.name, def, rc, rc.results, eval, "defended");
      } else if (pre) {
        c = make_cell(spec, a.name, def, base, transferred(base.results, undef), eval, "defended");
      } else {
        c = make_cell(spec, a.name, def, *hard, transferred(hard->results, def), eval, "defended");
      }
      const DecisionOracle ud = undef.decision();
      c.undefended_accuracy = adversarial_accuracy(ud, transferred(base.results, undef));
      c.baseline_accuracy = clean_accuracy(undef, eval);
      c.defense_success = defense_succeeds(*c.baseline_accuracy, c.accuracy);
      r.cells.push_back(std::move(c));
    }
  }
  r.diagnostics = diagnostics_for(spec, defended);
  r.manifest = manifest_for(spec, vanilla, attacks);
  if (!pre) r.manifest["defended_model_hash"] = hash_of(encode_model(hardened.model));
  r.manifest["defense"] = {{"name", d.name}, {"params", d.params}};
  if (sq) {
    r.manifest["defense"]["effective_window"] = sq->effective_window();
    r.manifest["defense"]["window_rule"] = "even windows move to the nearest odd value, ties downward, minimum 3";
  }
  seal(r);
  return r;
}

Report run_experiment(const ExperimentSpec& spec) {
  switch (spec.protocol) {
    case Protocol::Direct: return run_direct(spec);
    case Protocol::Transfer: return run_transfer(spec);
    case Protocol::DefenseEval: return run_defense_eval(spec);
  }
  throw InvalidSpec("unknown protocol");
}

// ---- report I/O ---------------------------------------------------------------------------------

namespace {

Json norms_json(const NormMeans& n) { return {{"l0", n.l0}, {"l1", n.l1}, {"l2", n.l2}, {"linf", n.linf}}; }
NormMeans norms_from(const Json& j) {
  return {j.at("l0").get<double>(), j.at("l1").get<double>(), j.at("l2").get<double>(), j.at("linf").get<double>()};
}

}  // namespace

Json Report::to_json() const {
  Json j;
  j["protocol"] = protocol_name(protocol);
  j["cells"] = Json::array();
  for (const auto& c : cells) {
    Json e;
    e["attack"] = c.attack;
    e["bitwidth"] = bitwidth_name(c.bitwidth);
    e["accuracy"] = c.accuracy;
    e["clean_accuracy"] = c.clean_accuracy;
    e["distortion"] = {{"all", norms_json(c.distortion.all)},
                       {"n", c.distortion.n_all},
                       {"success", norms_json(c.distortion.success)},
                       {"n_success", c.distortion.n_success}};
    e["queries"] = {{"mean", c.mean_queries}, {"total", c.total_queries}};
    e["aborted"] = c.aborted;
    if (c.undefended_accuracy) e["undefended_accuracy"] = *c.undefended_accuracy;
    if (c.baseline_accuracy) e["baseline_accuracy"] = *c.baseline_accuracy;
    if (c.defense_success) e["defense_success"] = *c.defense_success;
    if (c.calibrated_value) e["calibration"] = {{"param", c.calibrated_param}, {"value", *c.calibrated_value}};
    if (!c.examples_file.empty()) e["examples"] = {{"images", c.examples_file}, {"labels", c.labels_file}};
    j["cells"].push_back(std::move(e));
  }
  j["diagnostics"] = diagnostics;
  j["manifest"] = manifest;
  return j;
}

Report Report::from_json(const Json& j) {
  try {
    Report r;
    r.protocol = parse_protocol(j.at("protocol").get<std::string>());
    for (const auto& e : j.at("cells")) {
      Cell c;
      c.attack = e.at("attack").get<std::string>();
      c.bitwidth = parse_bitwidth(e.at("bitwidth").get<std::string>());
      c.accuracy = e.at("accuracy").get<double>();
      c.clean_accuracy = e.at("clean_accuracy").get<double>();
      const Json& d = e.at("distortion");
      c.distortion.all = norms_from(d.at("all"));
      c.distortion.n_all = d.at("n").get<std::size_t>();
      c.distortion.success = norms_from(d.at("success"));
      c.distortion.n_success = d.at("n_success").get<std::size_t>();
      c.mean_queries = e.at("queries").at("mean").get<double>();
      c.total_queries = e.at("queries").at("total").get<std::size_t>();
      c.aborted = e.at("aborted").get<std::size_t>();
      if (e.contains("undefended_accuracy")) c.undefended_accuracy = e.at("undefended_accuracy").get<double>();
      if (e.contains("baseline_accuracy")) c.baseline_accuracy = e.at("baseline_accuracy").get<double>();
      if (e.contains("defense_success")) c.defense_success = e.at("defense_success").get<bool>();
      if (e.contains("calibration")) {
        c.calibrated_param = e.at("calibration").at("param").get<std::string>();
        c.calibrated_value = e.at("calibration").at("value").get<double>();
      }
      if (e.contains("examples")) {
        c.examples_file = e.at("examples").at("images").get<std::string>();
        c.labels_file = e.at("examples").at("labels").get<std::string>();
      }
      r.cells.push_back(std::move(c));
    }
    r.diagnostics = j.at("diagnostics");
    r.manifest = j.at("manifest");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

std::string report_json_text(const Report& r) { return r.to_json().dump(2) + "\n"; }

std::string report_csv_text(const Report& r) {
  std::ostringstream s;
  s << "attack,bitwidth,acc,l0,l1,l2,linf,n,n_success\n";
  auto num = [](double v) { return Json(v).dump(); };
  for (const auto& c : r.cells) {
    const NormMeans& m = c.distortion.success;
    s << c.attack << ',' << bitwidth_name(c.bitwidth) << ',' << num(c.accuracy) << ',' << num(m.l0) << ','
      << num(m.l1) << ',' << num(m.l2) << ',' << num(m.linf) << ',' << c.distortion.n_all << ','
      << c.distortion.n_success << '\n';
  }
  return s.str();
}

void emit_report(const Report& r, const std::filesystem::path& dir, ReportFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  if (format == ReportFormat::Json) write_text(dir / "report.json", report_json_text(r));
  else write_text(dir / "report.csv", report_csv_text(r));
}

Report load_report(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return Report::from_json(j);
}

}  // namespace qadv
