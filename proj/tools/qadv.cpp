// qadv: command-line front end of the experiment harness.
//
// exit codes: 0 ok, 2 usage / invalid spec, 1 runtime error

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "qadv/defenses.hpp"
#include "qadv/error.hpp"
#include "qadv/harness.hpp"
#include "qadv/serialize.hpp"

namespace fs = std::filesystem;
using namespace qadv;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

// Loads --config and applies --seed / --out overrides.
ExperimentSpec spec_from(const Globals& g) {
  if (g.config.empty()) throw InvalidSpec("--config: an experiment spec file is required");
  ExperimentSpec s = load_spec(g.config);
  if (g.seed) s.seed = *g.seed;
  if (!g.out.empty()) s.out_dir = g.out;
  return s;
}

fs::path out_dir(const Globals& g, const ExperimentSpec& s) {
  const std::string d = !g.out.empty() ? g.out : s.out_dir;
  if (d.empty()) throw InvalidSpec("--out: an output directory is required");
  fs::create_directories(d);
  return d;
}

int cmd_train(const Globals& g) {
  const ExperimentSpec s = spec_from(g);
  const fs::path dir = out_dir(g, s);
  const Datasets d = load_datasets(s.dataset);
  const ModelGraph m = build_model(s, d.train);
  save_model(m, dir / "model.qmod");
  const DecisionOracle o = DecisionOracle::from_model(m);
  std::cout << "model.qmod  eval accuracy "
            << evaluate_accuracy([&](const Tensor& x) { return o.decide(x); }, d.eval) << "\n";
  return 0;
}

int cmd_quantize(const Globals& g) {
  const ExperimentSpec s = spec_from(g);
  const fs::path dir = out_dir(g, s);
  const Datasets d = load_datasets(s.dataset);
  const ModelGraph m = build_model(s, d.train);
  for (auto b : s.bitwidths) {
    if (b == BitWidth::Float32) continue;
    const QuantizedModel qm = quantize_model(m, d.calibration, bits_of(b));
    const std::string name = "model_" + std::string(bitwidth_name(b)) + ".qqm";
    save_quantized_model(qm, dir / name);
    std::cout << name << "  eval accuracy "
              << evaluate_accuracy([&](const Tensor& x) { return integer_predict(qm, x); }, d.eval) << "\n";
  }
  return 0;
}

int cmd_defend(const Globals& g) {
  const ExperimentSpec s = spec_from(g);
  if (!s.defense) throw InvalidSpec("spec.defense: the defend command needs a defense");
  const fs::path dir = out_dir(g, s);
  const Datasets d = load_datasets(s.dataset);
  const ModelGraph vanilla = build_model(s, d.train);
  if (is_preprocessing_defense(s.defense->name)) {
    std::cout << s.defense->name << " wraps the oracles; no model to retrain\n";
    return 0;
  }
  const ModelGraph hard = apply_defense(s, vanilla, d.train);
  save_model(hard, dir / "model_defended.qmod");
  const DecisionOracle o = DecisionOracle::from_model(hard);
  std::cout << "model_defended.qmod  eval accuracy "
            << evaluate_accuracy([&](const Tensor& x) { return o.decide(x); }, d.eval) << "\n";
  return 0;
}

void write_reports(const Report& r, const fs::path& dir, const std::string& format) {
  if (format == "json" || format == "both") emit_report(r, dir, ReportFormat::Json);
  if (format == "csv" || format == "both") emit_report(r, dir, ReportFormat::Csv);
}

int cmd_run(const Globals& g, const std::string& format, bool attack_only) {
  const ExperimentSpec s = spec_from(g);
  if (attack_only && s.protocol == Protocol::DefenseEval)
    throw InvalidSpec("spec.protocol: the attack command runs direct or transfer; use eval for defense-eval");
  const fs::path dir = out_dir(g, s);
  const Report r = run_experiment(s);
  write_reports(r, dir, format);
  std::cout << report_csv_text(r);
  return 0;
}

int cmd_report(const Globals& g, const std::string& input, const std::string& format) {
  const Report r = load_report(input);
  if (g.out.empty()) {
    std::cout << (format == "json" ? report_json_text(r) : report_csv_text(r));
    return 0;
  }
  write_reports(r, g.out, format);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qadv: adversarial robustness of quantized networks"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "experiment spec (JSON)");
  app.add_option("--out", g.out, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "override the spec seed");

  auto* train = app.add_subcommand("train", "train the float model of a spec and save it");
  auto* quantize = app.add_subcommand("quantize", "quantize the spec model to each integer bit-width");
  auto* attack = app.add_subcommand("attack", "run a direct or transfer spec");
  auto* defend = app.add_subcommand("defend", "retrain the spec model with its defense and save it");
  auto* eval = app.add_subcommand("eval", "run any experiment spec and write its report");
  auto* report = app.add_subcommand("report", "re-emit a stored report.json");

  std::string format = "both";
  const std::vector<std::string> formats{"json", "csv", "both"};
  attack->add_option("--format", format, "report format")->check(CLI::IsMember(formats));
  eval->add_option("--format", format, "report format")->check(CLI::IsMember(formats));
  std::string input;
  std::string report_format = "csv";
  report->add_option("input", input, "report.json to read")->required();
  report->add_option("--format", report_format, "output format")->check(CLI::IsMember(formats));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (*train) return cmd_train(g);
    if (*quantize) return cmd_quantize(g);
    if (*attack) return cmd_run(g, format, true);
    if (*defend) return cmd_defend(g);
    if (*eval) return cmd_run(g, format, false);
    return cmd_report(g, input, report_format);
  } catch (const InvalidSpec& e) {
    std::cerr << "invalid spec: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
