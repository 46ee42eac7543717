#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fontdisent/features.hpp"
#include "fontdisent/glyphset.hpp"
#include "fontdisent/image.hpp"
#include "fontdisent/model.hpp"

namespace fontdisent {

enum class ProbeTarget { Font, Character };
enum class FeatureKind { Style, Content };

std::string_view to_string(ProbeTarget target);
std::string_view to_string(FeatureKind kind);
ProbeTarget parse_probe_target(std::string_view text);  // "font" | "char"
FeatureKind parse_feature_kind(std::string_view text);  // "style" | "content"

struct ProbeProtocol {
  ProbeTarget target = ProbeTarget::Font;
  FeatureKind kind = FeatureKind::Style;
  int n_fonts = 100;
  int train_classes = 13;  // font probes train on this many classes, test on the rest
  int trials = 10;
  std::uint64_t seed = 0;
  int epochs = 200;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int hidden = 128;
};

void to_json(nlohmann::json& j, const ProbeProtocol& p);
void from_json(const nlohmann::json& j, ProbeProtocol& p);

struct ProbeResult {
  ProbeTarget target = ProbeTarget::Font;
  FeatureKind kind = FeatureKind::Style;
  std::vector<double> accuracies;  // one per trial
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over trials
  double chance = 0.0;
  int num_outputs = 0;
  int train_rows = 0;  // per trial
  int test_rows = 0;
};

void to_json(nlohmann::json& j, const ProbeResult& r);

/// Draws the 13/13 class split of a font-probe trial.
std::pair<std::vector<int>, std::vector<int>> split_classes(int num_classes, int train_classes, Rng& rng);

/// Trains an MLP probe on frozen features.  Font probes stay within one
/// table.  Character probes train on `features` and test on `char_test`; when
/// `char_test` is null each trial splits the table's fonts in half instead.
/// Raises InsufficientData when the table cannot support the protocol.
ProbeResult run_probe(const FeatureTable& features, const ProbeProtocol& protocol,
                      const FeatureTable* char_test = nullptr);

/// Single train/test run of the probe MLP on explicit data, the primitive
/// behind run_probe.  Inputs are standardized with training statistics.
double train_and_score_probe(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                             const Eigen::MatrixXd& test_x, const std::vector<int>& test_y, int num_outputs,
                             const ProbeProtocol& protocol, std::uint64_t seed);

/// Decodes the style of `style_glyph` with the 26 content vectors of
/// `content_font`, ordered by class.
std::vector<GrayImage> one_shot_generate(DisentangleNet& net, const GlyphImage& style_glyph, int content_font,
                                         const FeatureTable& features);

struct GlyphMetrics {
  int font_id = 0;          // target font i
  int style_class = 0;      // class of the single style glyph
  int content_font = 0;     // font i' supplying content vectors
  int class_id = 0;         // generated class j'
  double mse = 0.0;
  double mae = 0.0;
  double hd = 0.0;          // NaN when excluded
  double cd = 0.0;          // NaN when excluded
  double iou = 0.0;
  double baseline_iou = 0.0;  // IoU of the unchanged content-source glyph
  std::string exclusion;      // empty when HD/CD are defined
};

struct MetricsSummary {
  size_t glyphs = 0;
  size_t excluded_count = 0;
  std::map<std::string, size_t> exclusion_reasons;
  double mse = 0.0;
  double mae = 0.0;
  double hd = 0.0;  // over non-excluded glyphs
  double cd = 0.0;
  double iou = 0.0;
  double baseline_iou = 0.0;
};

struct MetricsReport {
  std::vector<std::string> font_names;
  std::vector<GlyphMetrics> rows;
  MetricsSummary summary;

  void write_csv(const std::filesystem::path& path) const;
  void write_summary(const std::filesystem::path& path) const;
};

/// Compares one generated glyph with its ground truth under all five metrics.
GlyphMetrics score_glyph(const GrayImage& generated, const GrayImage& truth, const GrayImage& content_source);
MetricsSummary summarize(const std::vector<GlyphMetrics>& rows);

/// Exclusion tags used in MetricsReport.
inline constexpr const char* kNoEdgesGenerated = "no_edges_generated";
inline constexpr const char* kNoEdgesTarget = "no_edges_target";
inline constexpr const char* kNoEdgesBoth = "no_edges_both";

struct GenerationResult {
  MetricsReport report;
  /// generated[(i * J + j) * J + j'] when images were kept.
  std::vector<GrayImage> generated;
};

/// One-shot generation over every (test font, style class) pair with a
/// random other font supplying content.  Deterministic in `seed`.
GenerationResult evaluate_generation(DisentangleNet& net, const GlyphMatrix& test, const FeatureTable& features,
                                     std::uint64_t seed, bool keep_images = false);

/// Per-font RGB sheets: the ground-truth row on top, then one generated row
/// per style class with the style glyph's cell outlined.
std::vector<std::filesystem::path> write_contact_sheets(const GenerationResult& result, const GlyphMatrix& test,
                                                        const std::filesystem::path& out_dir);

/// Single generated row as a sheet: the style glyph followed by 26 outputs.
void write_generation_strip(const GrayImage& style_glyph, const std::vector<GrayImage>& generated,
                            const std::filesystem::path& path);

}  // namespace fontdisent
