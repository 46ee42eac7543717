#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fontdisent/eval.hpp"
#include "fontdisent/model.hpp"
#include "fontdisent/trainer.hpp"

namespace fontdisent {

inline constexpr const char* kToolkitVersion = "0.3.0";
inline constexpr int kConfigSchemaVersion = 1;

/// Everything a run needs, serializable to a single JSON file.  Relative
/// paths resolve against the directory of the file they were loaded from.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::filesystem::path manifest;
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  ProbeProtocol probe;
  bool contact_sheets = true;

  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

/// Artifact names inside a run directory.
namespace artifacts {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kStages = "stages.json";
inline constexpr const char* kGlyphs = "glyphs";
inline constexpr const char* kPretrainDir = "pretrain";
inline constexpr const char* kPretrained = "pretrained.ckpt";
inline constexpr const char* kAverages = "averages.bin";
inline constexpr const char* kFinetuneDir = "finetune";
inline constexpr const char* kFinetuned = "finetuned.ckpt";
inline constexpr const char* kFinetuneSummary = "finetune_summary.json";
inline constexpr const char* kTestFeatures = "features_test.bin";
inline constexpr const char* kTrainFeatures = "features_train.bin";
inline constexpr const char* kPlots = "plots";
inline constexpr const char* kProbes = "probes.json";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kMetricsSummary = "metrics_summary.json";
inline constexpr const char* kSheets = "sheets";
inline constexpr const char* kReport = "report.json";
}  // namespace artifacts

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages{"render",    "pretrain", "compute-avgs", "finetune", "extract",
                                               "visualize", "probe",    "generate",     "report"};
  return stages;
}

struct PipelineResult {
  std::filesystem::path output_dir;
  std::vector<std::string> ran;
  std::vector<std::string> skipped;
};

/// Runs every stage in order.  A stage is skipped when its recorded inputs,
/// outputs and settings still match and no earlier stage ran; any stage that
/// runs forces the rest to run too.  Errors are re-raised with the stage name.
PipelineResult run_pipeline(const ExperimentConfig& config, std::ostream* log = nullptr);

/// Render the manifest's splits into a glyph cache directory.
void render_dataset(const DatasetManifest& manifest, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

/// Measurements taken after fine-tuning: train-split variances of both
/// checkpoints, their validation reconstruction error and collapse guards.
nlohmann::json finetune_summary(DisentangleNet& pretrained, DisentangleNet& finetuned,
                                const AverageFeatureTable& frozen, const GlyphMatrix& train, const GlyphMatrix& val);

/// The four probes of a run: {style, content} x {font, char}.  Font probes
/// use the test table; character probes train on `train` and test on `test`.
nlohmann::json run_probe_suite(const FeatureTable& train, const FeatureTable& test, const ProbeProtocol& defaults,
                               std::uint64_t seed);

std::string version_info();

}  // namespace fontdisent
