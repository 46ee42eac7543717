#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fontdisent/image.hpp"

namespace fontdisent {

using Rng = std::mt19937_64;

inline constexpr int kNumClasses = 26;
inline constexpr int kDefaultRenderSize = 64;

/// Character label for class index j ('A' + j).
inline char class_label(int class_id) { return static_cast<char>('A' + class_id); }

struct GlyphImage {
  GrayImage image;
  int font_id = -1;
  int class_id = -1;

  int size() const { return image.width; }
  double ink_fraction() const;
};

enum class Split { Train, Val, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ManifestEntry {
  std::filesystem::path font_file;
  std::string font_name;
  Split split = Split::Train;
};

/// Dataset manifest, one font per line:
///
///     # comment
///     @seed 7
///     @render_size 64
///     <train|val|test> <font name> <font path, relative to the manifest>
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  int render_size = kDefaultRenderSize;

  static DatasetManifest load(const std::filesystem::path& path);
  static DatasetManifest parse(std::string_view text, const std::filesystem::path& base_dir);

  std::vector<ManifestEntry> split_entries(Split split) const;
};

/// A parsed font file.  Owns the file bytes the parser points into.
class Font {
 public:
  static Font load(const std::filesystem::path& path);
  static Font from_bytes(std::vector<unsigned char> bytes, std::string origin);

  Font(Font&&) noexcept;
  Font& operator=(Font&&) noexcept;
  ~Font();

  /// Anti-aliased glyph fitted and centered into a size x size canvas, ink = 1.
  GlyphImage rasterize(char32_t codepoint, int size) const;

 private:
  struct Impl;
  explicit Font(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

GlyphImage rasterize_glyph(const std::filesystem::path& font_file, char32_t codepoint, int size);

/// Margin kept free on every side of a rendered glyph.
inline int render_margin(int size) { return size / 16; }

/// Dense I x J grid of glyphs; cell (i, j) holds font i drawing class j.
class GlyphMatrix {
 public:
  GlyphMatrix() = default;
  GlyphMatrix(std::vector<std::string> font_names, std::vector<GlyphImage> glyphs, int num_classes = kNumClasses);

  int num_fonts() const { return static_cast<int>(font_names_.size()); }
  int num_classes() const { return num_classes_; }
  int size() const { return glyphs_.empty() ? 0 : glyphs_.front().size(); }
  size_t cell_count() const { return glyphs_.size(); }

  const GlyphImage& at(int font_id, int class_id) const {
    return glyphs_[static_cast<size_t>(font_id) * num_classes_ + class_id];
  }
  const std::vector<GlyphImage>& glyphs() const { return glyphs_; }
  const std::vector<std::string>& font_names() const { return font_names_; }
  std::vector<char> class_labels() const;
  std::optional<int> find_font(std::string_view name) const;

 private:
  std::vector<std::string> font_names_;
  std::vector<GlyphImage> glyphs_;
  int num_classes_ = kNumClasses;
};

struct BuildReport {
  std::vector<std::string> warnings;
};

GlyphMatrix build_matrix(const DatasetManifest& manifest, Split split, BuildReport* report = nullptr);

/// Writes `<dir>/<font>/<class>.png` for every cell plus `<dir>/index.json`.
void save_matrix_cache(const GlyphMatrix& matrix, Split split, const std::filesystem::path& dir);
/// Reads the cells of one split back from a cache directory.
GlyphMatrix load_matrix_cache(const std::filesystem::path& dir, Split split);

/// Epoch-based sampling without replacement over every cell of a matrix.
class BatchSampler {
 public:
  BatchSampler(const GlyphMatrix& matrix, int batch_size, std::uint64_t seed);

  /// Next batch of cell indices into matrix.glyphs().  The last batch of an
  /// epoch is short; the following call starts a freshly shuffled epoch.
  std::vector<size_t> next_indices();
  std::vector<GlyphImage> next();

  size_t batches_per_epoch() const;
  int epoch() const { return epoch_; }

 private:
  void reshuffle();

  const GlyphMatrix* matrix_;
  int batch_size_;
  Rng rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  int epoch_ = 0;
};

struct TripletIndex {
  int content_font = 0;
  int target_font = 0;
  int content_class = 0;
  int style_class = 0;
};

/// X_{i,j} (content source), X_{i',j} (target) and X_{i',j'} (style source).
struct PretrainTriplet {
  GlyphImage content_src;
  GlyphImage target;
  GlyphImage style_src;
};

TripletIndex sample_triplet_index(const GlyphMatrix& matrix, Rng& rng);
PretrainTriplet sample_pretrain_triplet(const GlyphMatrix& matrix, Rng& rng);

}  // namespace fontdisent
