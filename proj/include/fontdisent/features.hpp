#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fontdisent/glyphset.hpp"
#include "fontdisent/model.hpp"

namespace fontdisent {

struct FeatureRow {
  std::int32_t font_id = 0;
  std::int32_t class_id = 0;
  std::vector<float> style;
  std::vector<float> content;

  friend bool operator==(const FeatureRow&, const FeatureRow&) = default;
};

/// Style and content vectors for every cell of one glyph matrix.
struct FeatureTable {
  int dim = 0;
  std::vector<FeatureRow> rows;
  std::vector<std::string> font_names;  // indexed by font_id
  int num_classes = kNumClasses;
  std::string checkpoint_id;
  std::string dataset_id;

  int num_fonts() const { return static_cast<int>(font_names.size()); }
  std::optional<size_t> find(int font_id, int class_id) const;
  std::optional<int> find_font(std::string_view name) const;

  /// (rows, dim) matrices of the style or content vectors.
  Eigen::MatrixXd style_matrix() const;
  Eigen::MatrixXd content_matrix() const;

  friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

inline constexpr int kFeatureTableVersion = 1;

/// Content hash of a matrix (font names, class count and pixel values).
std::string dataset_id(const GlyphMatrix& matrix);

FeatureTable extract_features(DisentangleNet& net, const GlyphMatrix& matrix, std::string checkpoint_id = {});

/// Binary layout of `path`:
///
///     "FDFEAT\0\0", u32 version, u32 dim, u32 num_classes, u64 rows
///     per row: i32 font, i32 class, dim floats style, dim floats content
///
/// `path` + ".idx" holds the provenance and font names as text.
void save_table(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable load_table(const std::filesystem::path& path);
std::filesystem::path index_path(const std::filesystem::path& table_path);

struct PcaProjection {
  Eigen::VectorXd mean;
  Eigen::MatrixXd axes;  // one unit axis per row, ordered by explained variance
  Eigen::VectorXd explained_variance;

  int components() const { return static_cast<int>(axes.rows()); }
};

/// PCA of the rows of `vectors` from the sample covariance.  Each axis is
/// signed so that its largest-magnitude entry is positive.
PcaProjection fit_pca(const Eigen::MatrixXd& vectors, int n_components);
Eigen::MatrixXd project(const PcaProjection& proj, const Eigen::MatrixXd& vectors);

struct ScatterPoint {
  double x = 0.0;  // first style component
  double y = 0.0;  // first content component
  int font_id = 0;
  int class_id = 0;
};

struct ScatterFiles {
  std::filesystem::path by_font;
  std::filesystem::path by_class;
  std::filesystem::path coordinates;
};

/// Two scatter plots of the same points, one colored by font and one by
/// class, plus a CSV of the coordinates.  Raises NoData when empty.
ScatterFiles emit_scatter(const std::vector<ScatterPoint>& points, int num_fonts, int num_classes,
                          const std::filesystem::path& out_dir);

/// Fits one-component PCA on style and content separately and plots the table.
ScatterFiles visualize_table(const FeatureTable& table, const std::filesystem::path& out_dir);

}  // namespace fontdisent
