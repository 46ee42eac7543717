#include "fontdisent/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>

#include "fontdisent/error.hpp"
#include "fontdisent/metrics.hpp"
#include "fontdisent/util.hpp"

namespace fontdisent {

namespace fs = std::filesystem;

std::string_view to_string(ProbeTarget target) { return target == ProbeTarget::Font ? "font" : "char"; }
std::string_view to_string(FeatureKind kind) { return kind == FeatureKind::Style ? "style" : "content"; }

ProbeTarget parse_probe_target(std::string_view text) {
  if (text == "font") return ProbeTarget::Font;
  if (text == "char" || text == "character") return ProbeTarget::Character;
  throw Error(ErrorKind::InvalidArgument, "probe target must be font or char, got '" + std::string(text) + "'");
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "style") return FeatureKind::Style;
  if (text == "content") return FeatureKind::Content;
  throw Error(ErrorKind::InvalidArgument, "feature kind must be style or content, got '" + std::string(text) + "'");
}

void to_json(nlohmann::json& j, const ProbeProtocol& p) {
  j = nlohmann::json{{"target", to_string(p.target)}, {"kind", to_string(p.kind)},
                     {"n_fonts", p.n_fonts},           {"train_classes", p.train_classes},
                     {"trials", p.trials},             {"seed", p.seed},
                     {"epochs", p.epochs},             {"learning_rate", p.learning_rate},
                     {"batch_size", p.batch_size},     {"hidden", p.hidden}};
}

void from_json(const nlohmann::json& j, ProbeProtocol& p) {
  const ProbeProtocol d;
  p.target = parse_probe_target(j.value("target", std::string(to_string(d.target))));
  p.kind = parse_feature_kind(j.value("kind", std::string(to_string(d.kind))));
  p.n_fonts = j.value("n_fonts", d.n_fonts);
  p.train_classes = j.value("train_classes", d.train_classes);
  p.trials = j.value("trials", d.trials);
  p.seed = j.value("seed", d.seed);
  p.epochs = j.value("epochs", d.epochs);
  p.learning_rate = j.value("learning_rate", d.learning_rate);
  p.batch_size = j.value("batch_size", d.batch_size);
  p.hidden = j.value("hidden", d.hidden);
  if (p.trials < 1 || p.epochs < 1 || p.batch_size < 1 || p.hidden < 1 || p.n_fonts < 2 || p.learning_rate <= 0) {
    throw Error(ErrorKind::InvalidArgument, "invalid probe protocol");
  }
}

void to_json(nlohmann::json& j, const ProbeResult& r) {
  j = nlohmann::json{{"target", to_string(r.target)}, {"kind", to_string(r.kind)},   {"mean", r.mean},
                     {"stddev", r.stddev},             {"chance", r.chance},         {"accuracies", r.accuracies},
                     {"num_outputs", r.num_outputs},   {"train_rows", r.train_rows}, {"test_rows", r.test_rows}};
}

std::pair<std::vector<int>, std::vector<int>> split_classes(int num_classes, int train_classes, Rng& rng) {
  std::vector<int> order(num_classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> train(order.begin(), order.begin() + train_classes);
  std::vector<int> test(order.begin() + train_classes, order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

namespace {

torch::Tensor to_float_tensor(const Eigen::MatrixXd& m, const Eigen::RowVectorXd& mean,
                              const Eigen::RowVectorXd& scale) {
  auto t = torch::empty({m.rows(), m.cols()}, torch::kFloat32);
  auto a = t.accessor<float, 2>();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) a[r][c] = static_cast<float>((m(r, c) - mean(c)) / scale(c));
  }
  return t;
}

torch::nn::Sequential make_probe(int64_t in, int64_t hidden, int64_t out, std::uint64_t seed) {
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  torch::manual_seed(seed);
  namespace nn = torch::nn;
  return nn::Sequential(nn::Linear(in, hidden), nn::ReLU(), nn::Linear(hidden, hidden), nn::ReLU(),
                        nn::Linear(hidden, out));
}

const std::vector<float>& pick(const FeatureRow& row, FeatureKind kind) {
  return kind == FeatureKind::Style ? row.style : row.content;
}

Eigen::MatrixXd stack(const std::vector<const std::vector<float>*>& vs, int dim) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(vs.size()), dim);
  for (size_t r = 0; r < vs.size(); ++r) {
    for (int d = 0; d < dim; ++d) m(static_cast<Eigen::Index>(r), d) = (*vs[r])[d];
  }
  return m;
}

void finish(ProbeResult& r) {
  const double n = static_cast<double>(r.accuracies.size());
  r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / n;
  double ss = 0;
  for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
  r.stddev = r.accuracies.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
}

ProbeResult font_probe(const FeatureTable& t, const ProbeProtocol& p) {
  const int available = t.num_fonts();
  const int n = std::min(available, p.n_fonts);
  if (n < 2) throw Error(ErrorKind::InsufficientData, "font probe needs at least 2 fonts");
  if (p.train_classes < 1 || p.train_classes >= t.num_classes) {
    throw Error(ErrorKind::InsufficientData, "font probe class split leaves an empty half");
  }
  std::vector<std::vector<const FeatureRow*>> grid(available, std::vector<const FeatureRow*>(t.num_classes, nullptr));
  for (const auto& row : t.rows) grid[row.font_id][row.class_id] = &row;

  ProbeResult result;
  result.target = p.target;
  result.kind = p.kind;
  result.num_outputs = n;
  result.chance = 1.0 / n;
  for (int trial = 0; trial < p.trials; ++trial) {
    Rng rng(derive_seed(p.seed, "probe/font/trial/" + std::to_string(trial)));
    std::vector<int> fonts(available);
    std::iota(fonts.begin(), fonts.end(), 0);
    std::shuffle(fonts.begin(), fonts.end(), rng);
    fonts.resize(n);
    std::sort(fonts.begin(), fonts.end());
    const auto [train_classes, test_classes] = split_classes(t.num_classes, p.train_classes, rng);

    auto collect = [&](const std::vector<int>& classes, std::vector<const std::vector<float>*>& xs,
                       std::vector<int>& ys) {
      for (int label = 0; label < n; ++label) {
        for (int j : classes) {
          const FeatureRow* row = grid[fonts[label]][j];
          if (!row) {
            throw Error(ErrorKind::InsufficientData, "feature table lacks font " + t.font_names[fonts[label]] +
                                                         " class " + std::string(1, class_label(j)));
          }
          xs.push_back(&pick(*row, p.kind));
          ys.push_back(label);
        }
      }
    };
    std::vector<const std::vector<float>*> train_x, test_x;
    std::vector<int> train_y, test_y;
    collect(train_classes, train_x, train_y);
    collect(test_classes, test_x, test_y);
    result.train_rows = static_cast<int>(train_y.size());
    result.test_rows = static_cast<int>(test_y.size());
    result.accuracies.push_back(train_and_score_probe(stack(train_x, t.dim), train_y, stack(test_x, t.dim), test_y, n,
                                                      p, derive_seed(p.seed, "probe/font/model/" + std::to_string(trial))));
  }
  finish(result);
  return result;
}

ProbeResult char_probe(const FeatureTable& t, const ProbeProtocol& p, const FeatureTable* test) {
  if (test && test->dim != t.dim) throw Error(ErrorKind::ShapeMismatch, "probe tables differ in feature width");
  if (test && test->num_classes != t.num_classes) {
    throw Error(ErrorKind::InsufficientData, "probe tables differ in class count");
  }
  ProbeResult result;
  result.target = p.target;
  result.kind = p.kind;
  result.num_outputs = t.num_classes;
  result.chance = 1.0 / t.num_classes;
  for (int trial = 0; trial < p.trials; ++trial) {
    std::vector<const std::vector<float>*> train_x, test_x;
    std::vector<int> train_y, test_y;
    if (test) {
      for (const auto& row : t.rows) train_x.push_back(&pick(row, p.kind)), train_y.push_back(row.class_id);
      for (const auto& row : test->rows) test_x.push_back(&pick(row, p.kind)), test_y.push_back(row.class_id);
    } else {
      if (t.num_fonts() < 2) throw Error(ErrorKind::InsufficientData, "character probe needs at least 2 fonts");
      Rng rng(derive_seed(p.seed, "probe/char/trial/" + std::to_string(trial)));
      std::vector<int> fonts(t.num_fonts());
      std::iota(fonts.begin(), fonts.end(), 0);
      std::shuffle(fonts.begin(), fonts.end(), rng);
      std::vector<bool> in_train(fonts.size(), false);
      for (size_t k = 0; k < fonts.size() / 2; ++k) in_train[fonts[k]] = true;
      for (const auto& row : t.rows) {
        if (in_train[row.font_id]) {
          train_x.push_back(&pick(row, p.kind)), train_y.push_back(row.class_id);
        } else {
          test_x.push_back(&pick(row, p.kind)), test_y.push_back(row.class_id);
        }
      }
    }
    if (train_y.empty() || test_y.empty()) throw Error(ErrorKind::InsufficientData, "character probe has no rows");
    result.train_rows = static_cast<int>(train_y.size());
    result.test_rows = static_cast<int>(test_y.size());
    result.accuracies.push_back(train_and_score_probe(stack(train_x, t.dim), train_y, stack(test_x, t.dim), test_y,
                                                      t.num_classes, p,
                                                      derive_seed(p.seed, "probe/char/model/" + std::to_string(trial))));
  }
  finish(result);
  return result;
}

}  // namespace

double train_and_score_probe(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                             const Eigen::MatrixXd& test_x, const std::vector<int>& test_y, int num_outputs,
                             const ProbeProtocol& p, std::uint64_t seed) {
  if (train_x.rows() == 0 || test_x.rows() == 0) throw Error(ErrorKind::InsufficientData, "probe has no rows");
  const Eigen::RowVectorXd mean = train_x.colwise().mean();
  const Eigen::RowVectorXd scale =
      ((train_x.rowwise() - mean).array().square().colwise().mean().sqrt()).max(1e-6).matrix();
  const auto x = to_float_tensor(train_x, mean, scale);
  const auto y = torch::tensor(std::vector<int64_t>(train_y.begin(), train_y.end()), torch::kInt64);
  const auto xt = to_float_tensor(test_x, mean, scale);

  auto probe = make_probe(train_x.cols(), p.hidden, num_outputs, seed);
  torch::optim::Adam optimizer(probe->parameters(), torch::optim::AdamOptions(p.learning_rate));
  Rng rng(splitmix64(seed));
  std::vector<int64_t> order(static_cast<size_t>(x.size(0)));
  std::iota(order.begin(), order.end(), 0);
  probe->train();
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t begin = 0; begin < order.size(); begin += p.batch_size) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(p.batch_size));
      const auto idx = torch::tensor(std::vector<int64_t>(order.begin() + begin, order.begin() + end), torch::kInt64);
      const auto loss = torch::nn::functional::cross_entropy(probe->forward(x.index_select(0, idx)),
                                                             y.index_select(0, idx));
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }
  }
  probe->eval();
  torch::NoGradGuard guard;
  const auto predicted = probe->forward(xt).argmax(1);
  const auto pa = predicted.accessor<int64_t, 1>();
  int correct = 0;
  for (size_t r = 0; r < test_y.size(); ++r) correct += pa[static_cast<int64_t>(r)] == test_y[r];
  return static_cast<double>(correct) / static_cast<double>(test_y.size());
}

ProbeResult run_probe(const FeatureTable& features, const ProbeProtocol& protocol, const FeatureTable* char_test) {
  if (features.rows.empty()) throw Error(ErrorKind::InsufficientData, "feature table is empty");
  if (protocol.trials < 1) throw Error(ErrorKind::InvalidArgument, "probe needs at least one trial");
  return protocol.target == ProbeTarget::Font ? font_probe(features, protocol)
                                              : char_probe(features, protocol, char_test);
}

std::vector<GrayImage> one_shot_generate(DisentangleNet& net, const GlyphImage& style_glyph, int content_font,
                                         const FeatureTable& features) {
  if (content_font == style_glyph.font_id) {
    throw Error(ErrorKind::SameFont, "content font must differ from the style glyph's font");
  }
  const auto dtype = net->parameters().front().scalar_type();
  auto content = torch::empty({features.num_classes, features.dim}, torch::kFloat32);
  for (int j = 0; j < features.num_classes; ++j) {
    const auto r = features.find(content_font, j);
    if (!r) {
      throw Error(ErrorKind::MissingContentRows, "no content vector for font " + std::to_string(content_font) +
                                                     " class " + std::string(1, class_label(j)));
    }
    const auto& v = features.rows[*r].content;
    std::copy(v.begin(), v.end(), content[j].data_ptr<float>());
  }
  InferenceScope scope(net);
  const auto style = net->encode(to_tensor(style_glyph.image).to(dtype)).style;
  const auto images = net->decode(style.expand({features.num_classes, style.size(1)}), content.to(dtype));
  return to_images(images);
}

GlyphMetrics score_glyph(const GrayImage& generated, const GrayImage& truth, const GrayImage& content_source) {
  GlyphMetrics m;
  m.mse = metrics::mse(generated, truth);
  m.mae = metrics::mae(generated, truth);
  const auto gen_mask = metrics::otsu_binarize(generated);
  const auto truth_mask = metrics::otsu_binarize(truth);
  m.iou = metrics::iou(gen_mask, truth_mask);
  m.baseline_iou = metrics::iou(metrics::otsu_binarize(content_source), truth_mask);
  const auto gen_edges = metrics::canny_edges(gen_mask);
  const auto truth_edges = metrics::canny_edges(truth_mask);
  if (gen_edges.empty() || truth_edges.empty()) {
    m.exclusion = gen_edges.empty() && truth_edges.empty() ? kNoEdgesBoth
                  : gen_edges.empty()                      ? kNoEdgesGenerated
                                                           : kNoEdgesTarget;
    m.hd = m.cd = std::numeric_limits<double>::quiet_NaN();
  } else {
    m.hd = metrics::hausdorff(gen_edges, truth_edges);
    m.cd = metrics::chamfer(gen_edges, truth_edges);
  }
  return m;
}

MetricsSummary summarize(const std::vector<GlyphMetrics>& rows) {
  MetricsSummary s;
  s.glyphs = rows.size();
  size_t kept = 0;
  for (const auto& r : rows) {
    s.mse += r.mse;
    s.mae += r.mae;
    s.iou += r.iou;
    s.baseline_iou += r.baseline_iou;
    if (r.exclusion.empty()) {
      s.hd += r.hd;
      s.cd += r.cd;
      ++kept;
    } else {
      ++s.excluded_count;
      ++s.exclusion_reasons[r.exclusion];
    }
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  s.mse /= n;
  s.mae /= n;
  s.iou /= n;
  s.baseline_iou /= n;
  s.hd = kept ? s.hd / static_cast<double>(kept) : std::numeric_limits<double>::quiet_NaN();
  s.cd = kept ? s.cd / static_cast<double>(kept) : std::numeric_limits<double>::quiet_NaN();
  return s;
}

void MetricsReport::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "font,style_class,content_font,class,mse,mae,hd,cd,iou,baseline_iou,excluded\n" << std::setprecision(9);
  for (const auto& r : rows) {
    out << font_names.at(r.font_id) << "," << class_label(r.style_class) << "," << font_names.at(r.content_font) << ","
        << class_label(r.class_id) << "," << r.mse << "," << r.mae << ",";
    if (r.exclusion.empty()) out << r.hd << "," << r.cd;
    else out << ",";
    out << "," << r.iou << "," << r.baseline_iou << "," << r.exclusion << "\n";
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

void MetricsReport::write_summary(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto number = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"glyphs", summary.glyphs},
                   {"mse", number(summary.mse)},
                   {"mae", number(summary.mae)},
                   {"hd", number(summary.hd)},
                   {"cd", number(summary.cd)},
                   {"iou", number(summary.iou)},
                   {"baseline_copy_content_iou", number(summary.baseline_iou)},
                   {"excluded_count", summary.excluded_count},
                   {"exclusion_reasons", summary.exclusion_reasons},
                   {"fonts", font_names}};
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

GenerationResult evaluate_generation(DisentangleNet& net, const GlyphMatrix& test, const FeatureTable& features,
                                     std::uint64_t seed, bool keep_images) {
  if (features.font_names != test.font_names() || features.num_classes != test.num_classes()) {
    throw Error(ErrorKind::InvalidArgument, "feature table was not extracted from this test matrix");
  }
  if (test.num_fonts() < 2) throw Error(ErrorKind::InsufficientFonts, "generation needs at least 2 test fonts");
  const int fonts = test.num_fonts(), classes = test.num_classes();
  GenerationResult result;
  result.report.font_names = test.font_names();
  Rng rng(seed);
  for (int i = 0; i < fonts; ++i) {
    for (int j = 0; j < classes; ++j) {
      std::uniform_int_distribution<int> other(0, fonts - 2);
      int source = other(rng);
      if (source >= i) ++source;
      auto generated = one_shot_generate(net, test.at(i, j), source, features);
      for (int jp = 0; jp < classes; ++jp) {
        auto m = score_glyph(generated[jp], test.at(i, jp).image, test.at(source, jp).image);
        m.font_id = i;
        m.style_class = j;
        m.content_font = source;
        m.class_id = jp;
        result.report.rows.push_back(std::move(m));
      }
      if (keep_images) {
        for (auto& g : generated) result.generated.push_back(std::move(g));
      }
    }
  }
  result.report.summary = summarize(result.report.rows);
  return result;
}

namespace {

constexpr int kPad = 4;
constexpr std::array<std::uint8_t, 3> kOrange{255, 140, 0};

void blit(RgbImage& sheet, const GrayImage& img, int x0, int y0) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto v = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::clamp(img.at(x, y), 0.0f, 1.0f))));
      sheet.set(x0 + x, y0 + y, {v, v, v});
    }
  }
}

void outline(RgbImage& sheet, int x0, int y0, int size) {
  for (int t = 1; t <= 2; ++t) {
    for (int k = -t; k < size + t; ++k) {
      sheet.set(x0 + k, y0 - t, kOrange);
      sheet.set(x0 + k, y0 + size - 1 + t, kOrange);
      sheet.set(x0 - t, y0 + k, kOrange);
      sheet.set(x0 + size - 1 + t, y0 + k, kOrange);
    }
  }
}

}  // namespace

std::vector<fs::path> write_contact_sheets(const GenerationResult& result, const GlyphMatrix& test,
                                           const fs::path& out_dir) {
  const int fonts = test.num_fonts(), classes = test.num_classes(), size = test.size();
  if (result.generated.size() != static_cast<size_t>(fonts) * classes * classes) {
    throw Error(ErrorKind::InvalidArgument, "contact sheets need the generated images");
  }
  fs::create_directories(out_dir);
  const int cell = size + kPad;
  std::vector<fs::path> files;
  for (int i = 0; i < fonts; ++i) {
    RgbImage sheet(classes * cell + kPad, (classes + 1) * cell + kPad + kPad);
    for (int jp = 0; jp < classes; ++jp) blit(sheet, test.at(i, jp).image, kPad + jp * cell, kPad);
    for (int j = 0; j < classes; ++j) {
      const int y0 = 2 * kPad + (j + 1) * cell;
      for (int jp = 0; jp < classes; ++jp) {
        blit(sheet, result.generated[(static_cast<size_t>(i) * classes + j) * classes + jp], kPad + jp * cell, y0);
      }
      outline(sheet, kPad + j * cell, y0, size);
    }
    files.push_back(out_dir / ("sheet_" + test.font_names()[i] + ".png"));
    write_png(files.back(), sheet);
  }
  return files;
}

void write_generation_strip(const GrayImage& style_glyph, const std::vector<GrayImage>& generated,
                            const fs::path& path) {
  const int size = style_glyph.width, cell = size + kPad;
  RgbImage sheet(static_cast<int>(generated.size() + 1) * cell + 2 * kPad, cell + kPad);
  blit(sheet, style_glyph, kPad, kPad);
  outline(sheet, kPad, kPad, size);
  for (size_t k = 0; k < generated.size(); ++k) blit(sheet, generated[k], 2 * kPad + static_cast<int>(k + 1) * cell, kPad);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_png(path, sheet);
}

}  // namespace fontdisent
