#include "fontdisent/glyphset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#define STBTT_STATIC
#define STB_TRUETYPE_IMPLEMENTATION
#include "stb/stb_truetype.h"

#include "fontdisent/error.hpp"

namespace fontdisent {

namespace fs = std::filesystem;

double GlyphImage::ink_fraction() const {
  if (image.pixels.empty()) return 0.0;
  double sum = 0.0;
  for (float v : image.pixels) sum += v;
  return sum / static_cast<double>(image.pixels.size());
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw Error(ErrorKind::InvalidArgument, "unknown split '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Manifest

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.parent_path());
}

DatasetManifest DatasetManifest::parse(std::string_view text, const fs::path& base_dir) {
  DatasetManifest manifest;
  std::unordered_set<std::string> names;
  std::istringstream lines{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string head;
    if (!(fields >> head)) continue;
    const auto where = " (manifest line " + std::to_string(line_no) + ")";
    if (head == "@seed") {
      if (!(fields >> manifest.seed)) throw Error(ErrorKind::InvalidArgument, "bad @seed" + where);
      continue;
    }
    if (head == "@render_size") {
      if (!(fields >> manifest.render_size) || manifest.render_size < 16) {
        throw Error(ErrorKind::InvalidArgument, "render size must be >= 16" + where);
      }
      continue;
    }
    ManifestEntry entry;
    entry.split = parse_split(head);
    std::string path;
    if (!(fields >> entry.font_name) || !(fields >> std::ws) || !std::getline(fields, path) || path.empty()) {
      throw Error(ErrorKind::InvalidArgument, "expected '<split> <name> <path>'" + where);
    }
    while (!path.empty() && std::isspace(static_cast<unsigned char>(path.back()))) path.pop_back();
    if (!names.insert(entry.font_name).second) {
      throw Error(ErrorKind::InvalidArgument, "font '" + entry.font_name + "' listed twice" + where);
    }
    entry.font_file = fs::path(path).is_absolute() ? fs::path(path) : base_dir / path;
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

std::vector<ManifestEntry> DatasetManifest::split_entries(Split split) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [split](const ManifestEntry& e) { return e.split == split; });
  return out;
}

// ---------------------------------------------------------------------------
// Font / rasterization

struct Font::Impl {
  std::vector<unsigned char> bytes;
  stbtt_fontinfo info{};
  std::string origin;
};

Font::Font(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Font::Font(Font&&) noexcept = default;
Font& Font::operator=(Font&&) noexcept = default;
Font::~Font() = default;

Font Font::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::UnparsableFont, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(std::move(bytes), path.string());
}

Font Font::from_bytes(std::vector<unsigned char> bytes, std::string origin) {
  auto impl = std::make_unique<Impl>();
  impl->bytes = std::move(bytes);
  impl->origin = std::move(origin);
  if (impl->bytes.size() < 12) throw Error(ErrorKind::UnparsableFont, impl->origin + " is too short");
  const int offset = stbtt_GetFontOffsetForIndex(impl->bytes.data(), 0);
  if (offset < 0 || !stbtt_InitFont(&impl->info, impl->bytes.data(), offset)) {
    throw Error(ErrorKind::UnparsableFont, impl->origin);
  }
  return Font(std::move(impl));
}

GlyphImage Font::rasterize(char32_t codepoint, int size) const {
  if (size < 16) throw Error(ErrorKind::InvalidArgument, "render size must be >= 16");
  auto missing = [&](const char* why) {
    return Error(ErrorKind::MissingGlyph,
                 "U+" + std::to_string(static_cast<unsigned>(codepoint)) + " in " + impl_->origin + ": " + why);
  };
  if (codepoint == 0) throw missing("no outline");
  stbtt_fontinfo* info = &impl_->info;
  const int glyph = stbtt_FindGlyphIndex(info, static_cast<int>(codepoint));
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  if (glyph == 0 || stbtt_IsGlyphEmpty(info, glyph) || !stbtt_GetGlyphBox(info, glyph, &x0, &y0, &x1, &y1)) {
    throw missing("no outline");
  }
  stbtt_vertex* vertices = nullptr;
  const int num_vertices = stbtt_GetGlyphShape(info, glyph, &vertices);
  if (num_vertices <= 0) {
    stbtt_FreeShape(info, vertices);
    throw missing("no outline");
  }

  const int margin = render_margin(size);
  const float box = static_cast<float>(size - 2 * margin);
  const float w = static_cast<float>(std::max(x1 - x0, 1));
  const float h = static_cast<float>(std::max(y1 - y0, 1));
  const float scale = box / std::max(w, h);
  const float shift_x = margin + 0.5f * (box - w * scale) - x0 * scale;
  const float shift_y = margin + 0.5f * (box - h * scale) + y1 * scale;

  std::vector<unsigned char> coverage(static_cast<size_t>(size) * size, 0);
  stbtt__bitmap target{size, size, size, coverage.data()};
  stbtt_Rasterize(&target, 0.35f, vertices, num_vertices, scale, scale, shift_x, shift_y, 0, 0, 1, nullptr);
  stbtt_FreeShape(info, vertices);

  const unsigned char peak = *std::max_element(coverage.begin(), coverage.end());
  if (peak == 0) throw missing("renders empty");

  GlyphImage out;
  out.image = GrayImage(size, size);
  const float inv = 1.0f / static_cast<float>(peak);
  for (size_t k = 0; k < coverage.size(); ++k) out.image.pixels[k] = static_cast<float>(coverage[k]) * inv;
  return out;
}

GlyphImage rasterize_glyph(const fs::path& font_file, char32_t codepoint, int size) {
  return Font::load(font_file).rasterize(codepoint, size);
}

// ---------------------------------------------------------------------------
// Matrix

GlyphMatrix::GlyphMatrix(std::vector<std::string> font_names, std::vector<GlyphImage> glyphs, int num_classes)
    : font_names_(std::move(font_names)), glyphs_(std::move(glyphs)), num_classes_(num_classes) {
  if (glyphs_.size() != font_names_.size() * static_cast<size_t>(num_classes_)) {
    throw Error(ErrorKind::ShapeMismatch, "glyph count does not match I x J");
  }
  for (size_t k = 0; k < glyphs_.size(); ++k) {
    glyphs_[k].font_id = static_cast<int>(k / num_classes_);
    glyphs_[k].class_id = static_cast<int>(k % num_classes_);
  }
}

std::vector<char> GlyphMatrix::class_labels() const {
  std::vector<char> labels(num_classes_);
  for (int j = 0; j < num_classes_; ++j) labels[j] = class_label(j);
  return labels;
}

std::optional<int> GlyphMatrix::find_font(std::string_view name) const {
  const auto it = std::find(font_names_.begin(), font_names_.end(), name);
  if (it == font_names_.end()) return std::nullopt;
  return static_cast<int>(it - font_names_.begin());
}

GlyphMatrix build_matrix(const DatasetManifest& manifest, Split split, BuildReport* report) {
  std::vector<std::string> names;
  std::vector<GlyphImage> glyphs;
  for (const auto& entry : manifest.split_entries(split)) {
    const Font font = Font::load(entry.font_file);
    std::vector<GlyphImage> row;
    row.reserve(kNumClasses);
    try {
      for (int j = 0; j < kNumClasses; ++j) row.push_back(font.rasterize(class_label(j), manifest.render_size));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MissingGlyph) throw;
      const std::string warning = "dropping font '" + entry.font_name + "': " + e.what();
      std::cerr << "warning: " << warning << "\n";
      if (report) report->warnings.push_back(warning);
      continue;
    }
    names.push_back(entry.font_name);
    std::move(row.begin(), row.end(), std::back_inserter(glyphs));
  }
  if (names.size() < 2) {
    throw Error(ErrorKind::EmptySplit, std::string(to_string(split)) + " split has " + std::to_string(names.size()) +
                                           " usable fonts, need at least 2");
  }
  return GlyphMatrix(std::move(names), std::move(glyphs));
}

// ---------------------------------------------------------------------------
// Cache

namespace {

nlohmann::json read_index(const fs::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) return nlohmann::json{{"version", 1}, {"splits", nlohmann::json::object()}};
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptFile, "index.json: " + std::string(e.what()));
  }
}

}  // namespace

void save_matrix_cache(const GlyphMatrix& matrix, Split split, const fs::path& dir) {
  fs::create_directories(dir);
  for (int i = 0; i < matrix.num_fonts(); ++i) {
    const fs::path font_dir = dir / matrix.font_names()[i];
    fs::create_directories(font_dir);
    for (int j = 0; j < matrix.num_classes(); ++j) {
      write_png(font_dir / (std::string(1, class_label(j)) + ".png"), matrix.at(i, j).image);
    }
  }
  nlohmann::json index = read_index(dir);
  index["version"] = 1;
  index["render_size"] = matrix.size();
  index["splits"][std::string(to_string(split))] = matrix.font_names();
  std::ofstream out(dir / "index.json");
  out << index.dump(2) << "\n";
}

GlyphMatrix load_matrix_cache(const fs::path& dir, Split split) {
  const nlohmann::json index = read_index(dir);
  const std::string key(to_string(split));
  if (!index.contains("splits") || !index["splits"].contains(key)) {
    throw Error(ErrorKind::CorruptFile, "cache index has no '" + key + "' split: " + dir.string());
  }
  auto names = index["splits"][key].get<std::vector<std::string>>();
  std::vector<GlyphImage> glyphs;
  for (const auto& name : names) {
    for (int j = 0; j < kNumClasses; ++j) {
      GlyphImage g;
      g.image = read_png_gray(dir / name / (std::string(1, class_label(j)) + ".png"));
      glyphs.push_back(std::move(g));
    }
  }
  if (names.size() < 2) throw Error(ErrorKind::EmptySplit, key + " split in cache has fewer than 2 fonts");
  return GlyphMatrix(std::move(names), std::move(glyphs));
}

// ---------------------------------------------------------------------------
// Sampling

BatchSampler::BatchSampler(const GlyphMatrix& matrix, int batch_size, std::uint64_t seed)
    : matrix_(&matrix), batch_size_(batch_size), rng_(seed), order_(matrix.cell_count()) {
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch size must be >= 1");
  std::iota(order_.begin(), order_.end(), size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
  ++epoch_;
}

std::vector<size_t> BatchSampler::next_indices() {
  if (cursor_ >= order_.size()) reshuffle();
  const size_t end = std::min(order_.size(), cursor_ + static_cast<size_t>(batch_size_));
  std::vector<size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                          order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return out;
}

std::vector<GlyphImage> BatchSampler::next() {
  std::vector<GlyphImage> out;
  for (size_t k : next_indices()) out.push_back(matrix_->glyphs()[k]);
  return out;
}

size_t BatchSampler::batches_per_epoch() const {
  return (order_.size() + static_cast<size_t>(batch_size_) - 1) / static_cast<size_t>(batch_size_);
}

TripletIndex sample_triplet_index(const GlyphMatrix& matrix, Rng& rng) {
  const int fonts = matrix.num_fonts();
  if (fonts < 2) throw Error(ErrorKind::InsufficientFonts, "triplets need at least 2 fonts");
  std::uniform_int_distribution<int> font(0, fonts - 1);
  std::uniform_int_distribution<int> other(0, fonts - 2);
  std::uniform_int_distribution<int> cls(0, matrix.num_classes() - 1);
  TripletIndex t;
  t.content_font = font(rng);
  t.target_font = other(rng);
  if (t.target_font >= t.content_font) ++t.target_font;
  t.content_class = cls(rng);
  t.style_class = cls(rng);
  return t;
}

PretrainTriplet sample_pretrain_triplet(const GlyphMatrix& matrix, Rng& rng) {
  const TripletIndex t = sample_triplet_index(matrix, rng);
  return {matrix.at(t.content_font, t.content_class), matrix.at(t.target_font, t.content_class),
          matrix.at(t.target_font, t.style_class)};
}

}  // namespace fontdisent
