#include "fontdisent/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fontdisent/error.hpp"
#include "fontdisent/image.hpp"
#include "fontdisent/trainer.hpp"
#include "fontdisent/util.hpp"

namespace fontdisent {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'F', 'D', 'F', 'E', 'A', 'T', '\0', '\0'};

Eigen::MatrixXd gather(const FeatureTable& t, bool style) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows.size()), t.dim);
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& v = style ? t.rows[r].style : t.rows[r].content;
    for (int d = 0; d < t.dim; ++d) m(static_cast<Eigen::Index>(r), d) = v[d];
  }
  return m;
}

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorKind::CorruptFile, "feature table " + path.string() + " is truncated");
  }
  return v;
}

}  // namespace

std::optional<size_t> FeatureTable::find(int font_id, int class_id) const {
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].font_id == font_id && rows[r].class_id == class_id) return r;
  }
  return std::nullopt;
}

std::optional<int> FeatureTable::find_font(std::string_view name) const {
  for (size_t i = 0; i < font_names.size(); ++i) {
    if (font_names[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

Eigen::MatrixXd FeatureTable::style_matrix() const { return gather(*this, true); }
Eigen::MatrixXd FeatureTable::content_matrix() const { return gather(*this, false); }

std::string dataset_id(const GlyphMatrix& matrix) {
  std::string blob;
  for (const auto& name : matrix.font_names()) blob += name + '\n';
  blob += std::to_string(matrix.num_classes()) + '\n';
  for (const auto& g : matrix.glyphs()) {
    blob.append(reinterpret_cast<const char*>(g.image.pixels.data()), g.image.pixels.size() * sizeof(float));
  }
  return sha256_hex(blob);
}

FeatureTable extract_features(DisentangleNet& net, const GlyphMatrix& matrix, std::string checkpoint_id) {
  const auto f = encode_matrix(net, matrix);
  const auto style = f.style.to(torch::kFloat32).contiguous();
  const auto content = f.content.to(torch::kFloat32).contiguous();
  FeatureTable table;
  table.dim = static_cast<int>(style.size(1));
  table.font_names = matrix.font_names();
  table.num_classes = matrix.num_classes();
  table.checkpoint_id = std::move(checkpoint_id);
  table.dataset_id = dataset_id(matrix);
  const float* ps = style.data_ptr<float>();
  const float* pc = content.data_ptr<float>();
  for (size_t r = 0; r < matrix.cell_count(); ++r) {
    FeatureRow row;
    row.font_id = matrix.glyphs()[r].font_id;
    row.class_id = matrix.glyphs()[r].class_id;
    row.style.assign(ps + r * table.dim, ps + (r + 1) * table.dim);
    row.content.assign(pc + r * table.dim, pc + (r + 1) * table.dim);
    table.rows.push_back(std::move(row));
  }
  return table;
}

fs::path index_path(const fs::path& table_path) { return fs::path(table_path.string() + ".idx"); }

void save_table(const fs::path& path, const FeatureTable& table) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kFeatureTableVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(table.num_classes));
    put<std::uint64_t>(out, table.rows.size());
    for (const auto& row : table.rows) {
      if (row.style.size() != static_cast<size_t>(table.dim) || row.content.size() != static_cast<size_t>(table.dim)) {
        throw Error(ErrorKind::ShapeMismatch, "feature row width differs from the table dimension");
      }
      put(out, row.font_id);
      put(out, row.class_id);
      out.write(reinterpret_cast<const char*>(row.style.data()), table.dim * sizeof(float));
      out.write(reinterpret_cast<const char*>(row.content.data()), table.dim * sizeof(float));
    }
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
  }
  std::ofstream idx(index_path(path));
  idx << "version " << kFeatureTableVersion << "\n"
      << "checkpoint " << (table.checkpoint_id.empty() ? "-" : table.checkpoint_id) << "\n"
      << "dataset " << (table.dataset_id.empty() ? "-" : table.dataset_id) << "\n"
      << "fonts " << table.font_names.size() << "\n";
  for (const auto& name : table.font_names) idx << name << "\n";
  if (!idx) throw Error(ErrorKind::Io, "failed writing " + index_path(path).string());
}

FeatureTable load_table(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open feature table " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorKind::CorruptFile, path.string() + " is not a feature table");
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != kFeatureTableVersion) {
    throw Error(ErrorKind::CorruptFile, "feature table version " + std::to_string(version) + " is not supported (expected " +
                                            std::to_string(kFeatureTableVersion) + ")");
  }
  FeatureTable table;
  table.dim = static_cast<int>(take<std::uint32_t>(in, path));
  table.num_classes = static_cast<int>(take<std::uint32_t>(in, path));
  const auto n = take<std::uint64_t>(in, path);
  const auto header = static_cast<std::uintmax_t>(in.tellg());
  const std::uintmax_t row_bytes = 8 + 2 * static_cast<std::uintmax_t>(table.dim) * sizeof(float);
  if (fs::file_size(path) != header + n * row_bytes) {
    throw Error(ErrorKind::CorruptFile, "feature table " + path.string() + " is truncated or has trailing bytes");
  }
  table.rows.resize(n);
  for (auto& row : table.rows) {
    row.font_id = take<std::int32_t>(in, path);
    row.class_id = take<std::int32_t>(in, path);
    row.style.resize(table.dim);
    row.content.resize(table.dim);
    in.read(reinterpret_cast<char*>(row.style.data()), table.dim * sizeof(float));
    in.read(reinterpret_cast<char*>(row.content.data()), table.dim * sizeof(float));
    if (!in) throw Error(ErrorKind::CorruptFile, "feature table " + path.string() + " is truncated");
  }

  std::ifstream idx(index_path(path));
  if (!idx) throw Error(ErrorKind::CorruptFile, "missing index file " + index_path(path).string());
  std::string key;
  int idx_version = 0;
  size_t fonts = 0;
  if (!(idx >> key >> idx_version) || key != "version" || idx_version != kFeatureTableVersion) {
    throw Error(ErrorKind::CorruptFile, "index file version mismatch in " + index_path(path).string());
  }
  if (!(idx >> key >> table.checkpoint_id) || key != "checkpoint" || !(idx >> key >> table.dataset_id) ||
      key != "dataset" || !(idx >> key >> fonts) || key != "fonts") {
    throw Error(ErrorKind::CorruptFile, "malformed index file " + index_path(path).string());
  }
  if (table.checkpoint_id == "-") table.checkpoint_id.clear();
  if (table.dataset_id == "-") table.dataset_id.clear();
  std::getline(idx, key);
  for (size_t i = 0; i < fonts; ++i) {
    std::string name;
    if (!std::getline(idx, name)) throw Error(ErrorKind::CorruptFile, "index file lists too few fonts");
    table.font_names.push_back(name);
  }
  for (const auto& row : table.rows) {
    if (row.font_id < 0 || row.font_id >= table.num_fonts() || row.class_id < 0 || row.class_id >= table.num_classes) {
      throw Error(ErrorKind::CorruptFile, "feature row ids out of range in " + path.string());
    }
  }
  return table;
}

PcaProjection fit_pca(const Eigen::MatrixXd& vectors, int n_components) {
  if (n_components < 1 || n_components > vectors.cols()) {
    throw Error(ErrorKind::InvalidArgument, "PCA components must lie in [1, dim]");
  }
  if (vectors.rows() < 2) throw Error(ErrorKind::DegenerateInput, "PCA needs at least two vectors");
  PcaProjection proj;
  proj.mean = vectors.colwise().mean().transpose();
  const Eigen::MatrixXd centered = vectors.rowwise() - proj.mean.transpose();
  if ((centered.array() == 0.0).all()) throw Error(ErrorKind::DegenerateInput, "all vectors are identical");
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(vectors.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::DegenerateInput, "covariance eigendecomposition failed");

  const Eigen::Index dim = vectors.cols();
  proj.axes.resize(n_components, dim);
  proj.explained_variance.resize(n_components);
  for (int k = 0; k < n_components; ++k) {
    // Eigen returns ascending eigenvalues.
    const Eigen::Index src = dim - 1 - k;
    Eigen::VectorXd axis = eig.eigenvectors().col(src);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    proj.axes.row(k) = axis.normalized().transpose();
    proj.explained_variance(k) = std::max(0.0, eig.eigenvalues()(src));
  }
  return proj;
}

Eigen::MatrixXd project(const PcaProjection& proj, const Eigen::MatrixXd& vectors) {
  if (vectors.cols() != proj.mean.size()) throw Error(ErrorKind::ShapeMismatch, "vector width differs from the PCA fit");
  return (vectors.rowwise() - proj.mean.transpose()) * proj.axes.transpose();
}

namespace {

std::array<std::uint8_t, 3> palette(int index, int count) {
  // Evenly spaced hues at fixed saturation and value.
  const double h = 6.0 * std::fmod(static_cast<double>(index) / std::max(count, 1), 1.0);
  const double s = index % 2 == 0 ? 0.85 : 0.6, v = index % 3 == 2 ? 0.7 : 0.9;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    case 5: r = v, g = p, b = q; break;
    default: break;
  }
  auto byte = [](double c) { return static_cast<std::uint8_t>(std::lround(c * 255.0)); };
  return {byte(r), byte(g), byte(b)};
}

void render_plot(const std::vector<ScatterPoint>& points, bool by_font, int groups, const fs::path& path) {
  constexpr int kSize = 512, kMargin = 32, kRadius = 3;
  RgbImage canvas(kSize, kSize);
  double x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
  for (const auto& p : points) {
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  }
  const double sx = x1 > x0 ? (kSize - 2 * kMargin) / (x1 - x0) : 0.0;
  const double sy = y1 > y0 ? (kSize - 2 * kMargin) / (y1 - y0) : 0.0;
  auto px = [&](double x) { return sx > 0 ? kMargin + (x - x0) * sx : kSize / 2.0; };
  auto py = [&](double y) { return sy > 0 ? kSize - kMargin - (y - y0) * sy : kSize / 2.0; };

  const std::array<std::uint8_t, 3> axis_color{160, 160, 160};
  for (int k = kMargin / 2; k < kSize - kMargin / 2; ++k) {
    canvas.set(k, kSize - kMargin / 2, axis_color);
    canvas.set(kMargin / 2, k, axis_color);
  }
  for (const auto& p : points) {
    const auto color = palette(by_font ? p.font_id : p.class_id, groups);
    const int cx = static_cast<int>(std::lround(px(p.x))), cy = static_cast<int>(std::lround(py(p.y)));
    for (int dy = -kRadius; dy <= kRadius; ++dy) {
      for (int dx = -kRadius; dx <= kRadius; ++dx) {
        if (dx * dx + dy * dy > kRadius * kRadius) continue;
        const int x = cx + dx, y = cy + dy;
        if (x >= 0 && y >= 0 && x < kSize && y < kSize) canvas.set(x, y, color);
      }
    }
  }
  write_png(path, canvas);
}

}  // namespace

ScatterFiles emit_scatter(const std::vector<ScatterPoint>& points, int num_fonts, int num_classes,
                          const fs::path& out_dir) {
  if (points.empty()) throw Error(ErrorKind::NoData, "nothing to plot: the feature table is empty");
  fs::create_directories(out_dir);
  ScatterFiles files{out_dir / "scatter_by_font.png", out_dir / "scatter_by_class.png", out_dir / "scatter_coords.csv"};
  render_plot(points, true, num_fonts, files.by_font);
  render_plot(points, false, num_classes, files.by_class);
  std::ofstream csv(files.coordinates);
  csv << "font_id,class_id,style_pc1,content_pc1\n" << std::setprecision(9);
  for (const auto& p : points) csv << p.font_id << "," << p.class_id << "," << p.x << "," << p.y << "\n";
  if (!csv) throw Error(ErrorKind::Io, "failed writing " + files.coordinates.string());
  return files;
}

ScatterFiles visualize_table(const FeatureTable& table, const fs::path& out_dir) {
  if (table.rows.empty()) throw Error(ErrorKind::NoData, "nothing to plot: the feature table is empty");
  const auto style = project(fit_pca(table.style_matrix(), 1), table.style_matrix());
  const auto content = project(fit_pca(table.content_matrix(), 1), table.content_matrix());
  std::vector<ScatterPoint> points;
  for (size_t r = 0; r < table.rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    points.push_back({style(i, 0), content(i, 0), table.rows[r].font_id, table.rows[r].class_id});
  }
  return emit_scatter(points, table.num_fonts(), table.num_classes, out_dir);
}

}  // namespace fontdisent
