#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qadv/dataset.hpp"
#include "qadv/metrics.hpp"
#include "qadv/model.hpp"
#include "qadv/quant.hpp"
#include "qadv/train.hpp"

namespace qadv {

using Json = nlohmann::json;

inline constexpr const char* kCodeVersion = "0.1.0";

enum class Protocol { Direct, Transfer, DefenseEval };
enum class BitWidth { Float32, Int16, Int8 };
enum class AttackTier { WhiteBox, GrayBox, BlackBox };

std::string_view protocol_name(Protocol p);
Protocol parse_protocol(std::string_view s);
std::string_view bitwidth_name(BitWidth b);
BitWidth parse_bitwidth(std::string_view s);
int bits_of(BitWidth b);  // 0 for float32

// Known attack names, in report order.
const std::vector<std::string>& attack_names();
AttackTier attack_tier(std::string_view attack);  // InvalidSpec for unknown names
const std::vector<std::string>& defense_names();
bool is_preprocessing_defense(std::string_view defense);

// Default attack list of the defense-evaluation protocol.
std::vector<std::string> default_defense_attacks();

struct AttackSpec {
  std::string name;
  Json params = Json::object();
};

struct DefenseSpec {
  std::string name;
  Json params = Json::object();
};

struct DatasetSpec {
  std::string kind = "shapes";  // shapes | cifar10 | raw
  std::size_t classes = 10;
  std::size_t side = 16;
  std::size_t channels = 3;
  std::size_t train_samples = 2000;
  std::size_t calibration_samples = 100;
  std::size_t eval_samples = 200;
  std::uint64_t seed = 1;
  std::string train_path, test_path;           // cifar10 record files / raw image tensors
  std::string train_labels, test_labels;       // raw only
};

struct ModelSpec {
  std::string arch = "toy-resnet";  // toy-resnet | toy-dscnn
  std::string path;                 // pre-trained float model; trains from scratch when empty
  TrainConfig train;
  ModelSpec();
};

struct DiagnosticsSpec {
  bool zero_density = false;
  double h = 1e-4;
  bool cosine = false;
  bool boundary_distance = false;
  std::size_t samples = 20;  // first eval samples used by the diagnostics
};

struct CalibrationSpec {
  bool enabled = false;
  std::size_t max_doublings = 6;
};

struct ExperimentSpec {
  Protocol protocol = Protocol::Direct;
  ModelSpec model;
  std::vector<BitWidth> bitwidths{BitWidth::Float32, BitWidth::Int16, BitWidth::Int8};
  std::vector<AttackSpec> attacks;
  std::optional<DefenseSpec> defense;
  DatasetSpec dataset;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool store_examples = true;
  bool recraft = false;  // defense-eval: craft against the squeezed pipeline
  DiagnosticsSpec diagnostics;
  CalibrationSpec calibration;

  // Throws InvalidSpec naming the offending field.
  static ExperimentSpec from_json(const Json& j);
  Json to_json() const;
  void validate() const;
};

ExperimentSpec load_spec(const std::filesystem::path& path);

struct Cell {
  std::string attack;
  BitWidth bitwidth = BitWidth::Float32;
  double accuracy = 0.0;        // adversarial accuracy of this pipeline
  double clean_accuracy = 0.0;  // same pipeline on the clean samples
  DistortionStats distortion;
  double mean_queries = 0.0;
  std::size_t total_queries = 0;
  std::size_t aborted = 0;  // samples where the attack gave up with an error (counted as failures)
  std::optional<double> undefended_accuracy;  // defense-eval only
  std::optional<double> baseline_accuracy;    // defense-eval: undefended clean accuracy
  std::optional<bool> defense_success;
  std::string calibrated_param;  // empty unless auto-calibration ran
  std::optional<double> calibrated_value;
  std::string examples_file;     // relative to the output directory
  std::string labels_file;
};

struct Report {
  Protocol protocol = Protocol::Direct;
  std::vector<Cell> cells;
  Json diagnostics = Json::object();
  Json manifest = Json::object();

  Json to_json() const;
  static Report from_json(const Json& j);
  friend bool operator==(const Report& a, const Report& b) { return a.to_json() == b.to_json(); }
};

inline constexpr double kDefenseDropLimit = 0.20;

// Defense succeeds when the accuracy drop from the baseline stays strictly
// below 20 points.
bool defense_succeeds(double baseline_accuracy, double adversarial_accuracy);

Report run_direct(const ExperimentSpec& spec);
Report run_transfer(const ExperimentSpec& spec);
Report run_defense_eval(const ExperimentSpec& spec);
Report run_experiment(const ExperimentSpec& spec);

enum class ReportFormat { Json, Csv };

std::string report_json_text(const Report& r);
std::string report_csv_text(const Report& r);
// Writes report.json / report.csv into `dir` (created if missing).
void emit_report(const Report& r, const std::filesystem::path& dir, ReportFormat format);
Report load_report(const std::filesystem::path& path);

// Experiment ingredients, shared with the command-line front end.
struct Datasets {
  Dataset train, calibration, eval;
};
Datasets load_datasets(const DatasetSpec& spec);
ModelGraph build_model(const ExperimentSpec& spec, const Dataset& train);
ModelGraph apply_defense(const ExperimentSpec& spec, const ModelGraph& vanilla, const Dataset& train);

}  // namespace qadv
