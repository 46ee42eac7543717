#include "test_framework.hpp"

#include <cmath>
#include <random>
#include <set>

#include "fontdisent/error.hpp"
#include "fontdisent/eval.hpp"
#include "fontdisent/util.hpp"
#include "test_support.hpp"

using namespace fontdisent;

namespace {

/// Table whose style vectors encode the font and content vectors the class,
/// each as a noisy one-hot code, so each probe has a known answer.
FeatureTable coded_table(int fonts, int classes, int dim, unsigned seed, double noise = 0.05) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(0.0f, static_cast<float>(noise));
  FeatureTable t;
  t.dim = dim;
  t.num_classes = classes;
  for (int i = 0; i < fonts; ++i) t.font_names.push_back("f" + std::to_string(i));
  for (int i = 0; i < fonts; ++i) {
    for (int j = 0; j < classes; ++j) {
      FeatureRow r{i, j, std::vector<float>(dim), std::vector<float>(dim)};
      for (int d = 0; d < dim; ++d) {
        r.style[d] = (d == i % dim ? 1.0f : 0.0f) + n(rng);
        r.content[d] = (d == j % dim ? 1.0f : 0.0f) + n(rng);
      }
      t.rows.push_back(std::move(r));
    }
  }
  return t;
}

ProbeProtocol fast(ProbeTarget target, FeatureKind kind, int trials = 3) {
  ProbeProtocol p;
  p.target = target;
  p.kind = kind;
  p.trials = trials;
  p.epochs = 60;
  p.seed = 11;
  return p;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.image_size = 16;
  c.channels = {4, 8};
  c.feature_dim = 6;
  c.head_hidden = 8;
  return c;
}

}  // namespace

TEST_CASE("probe target and kind parsing") {
  CHECK(parse_probe_target("font") == ProbeTarget::Font);
  CHECK(parse_probe_target("char") == ProbeTarget::Character);
  CHECK(parse_feature_kind("style") == FeatureKind::Style);
  CHECK(parse_feature_kind("content") == FeatureKind::Content);
  CHECK_THROWS_AS(parse_probe_target("glyph"), Error);
  CHECK_THROWS_AS(parse_feature_kind(""), Error);
  CHECK(to_string(ProbeTarget::Character) == "char");
}

TEST_CASE("class split is a disjoint cover") {
  Rng rng(4);
  std::set<std::vector<int>> seen;
  for (int t = 0; t < 20; ++t) {
    const auto [train, test] = split_classes(26, 13, rng);
    CHECK(train.size() == 13);
    CHECK(test.size() == 13);
    std::set<int> all(train.begin(), train.end());
    all.insert(test.begin(), test.end());
    CHECK(all.size() == 26);
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == 25);
    seen.insert(train);
  }
  CHECK(seen.size() > 1);
}

TEST_CASE("probes recover the information a feature carries") {
  const auto t = coded_table(6, 26, 32, 1);
  const auto style_font = run_probe(t, fast(ProbeTarget::Font, FeatureKind::Style));
  CHECK(style_font.num_outputs == 6);
  CHECK(style_font.chance == doctest::Approx(1.0 / 6));
  CHECK(style_font.train_rows == 6 * 13);
  CHECK(style_font.test_rows == 6 * 13);
  CHECK(style_font.accuracies.size() == 3);
  CHECK(style_font.mean >= 0.95);

  const auto content_char = run_probe(t, fast(ProbeTarget::Character, FeatureKind::Content));
  CHECK(content_char.num_outputs == 26);
  CHECK(content_char.mean == doctest::Approx(1.0));
  CHECK(content_char.test_rows == 3 * 26);
}

TEST_CASE("font probes on content features see held-out classes only") {
  // Content codes identify the class, which the font probe's test split never
  // trains on, so the best it can do is chance.
  const auto t = coded_table(6, 26, 32, 2);
  const auto r = run_probe(t, fast(ProbeTarget::Font, FeatureKind::Content, 4));
  CHECK(r.mean <= 2.0 * r.chance);
}

TEST_CASE("constant features score exactly chance on a balanced font probe") {
  auto t = coded_table(4, 26, 8, 3);
  for (auto& r : t.rows) std::fill(r.style.begin(), r.style.end(), 0.5f);
  const auto res = run_probe(t, fast(ProbeTarget::Font, FeatureKind::Style, 2));
  for (double a : res.accuracies) CHECK(a == doctest::Approx(0.25));
  CHECK(res.stddev == doctest::Approx(0.0));
}

TEST_CASE("shuffled labels leave the character probe near chance") {
  auto t = coded_table(8, 26, 32, 4);
  std::mt19937 rng(5);
  std::vector<int> labels;
  for (const auto& r : t.rows) labels.push_back(r.class_id);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (size_t k = 0; k < t.rows.size(); ++k) t.rows[k].class_id = labels[k];
  const auto res = run_probe(t, fast(ProbeTarget::Character, FeatureKind::Content, 2));
  // Within three binomial standard deviations of chance, per trial.
  const double p = 1.0 / 26.0, sd = std::sqrt(p * (1 - p) / res.test_rows);
  for (double a : res.accuracies) CHECK(a <= p + 3 * sd);
}

TEST_CASE("character probe with an explicit test table") {
  const auto train = coded_table(4, 26, 32, 6), test = coded_table(2, 26, 32, 7);
  const auto res = run_probe(train, fast(ProbeTarget::Character, FeatureKind::Content, 1), &test);
  CHECK(res.train_rows == 4 * 26);
  CHECK(res.test_rows == 2 * 26);
  CHECK(res.mean == doctest::Approx(1.0));
}

TEST_CASE("probe results are deterministic and validated") {
  const auto t = coded_table(5, 26, 16, 8, 0.6);
  const auto a = run_probe(t, fast(ProbeTarget::Font, FeatureKind::Style, 2));
  const auto b = run_probe(t, fast(ProbeTarget::Font, FeatureKind::Style, 2));
  CHECK(a.accuracies == b.accuracies);
  CHECK_THROWS_AS(run_probe(FeatureTable{}, fast(ProbeTarget::Font, FeatureKind::Style)), Error);
  auto p = fast(ProbeTarget::Font, FeatureKind::Style);
  p.trials = 0;
  CHECK_THROWS_AS(run_probe(t, p), Error);
  CHECK_THROWS_AS(run_probe(coded_table(1, 26, 4, 1), fast(ProbeTarget::Font, FeatureKind::Style)), Error);
  const nlohmann::json j = a;
  CHECK(j["accuracies"].size() == 2);
  CHECK(j["target"] == "font");
}

TEST_CASE("one-shot generation produces one glyph per class and checks its inputs") {
  const auto m = testing::synthetic_matrix(3, 26, 16);
  auto net = init_params(2, tiny_model());
  const auto features = extract_features(net, m);
  const auto out = one_shot_generate(net, m.at(0, 4), 1, features);
  REQUIRE(out.size() == 26);
  for (const auto& g : out) {
    CHECK(g.width == 16);
    for (float v : g.pixels) CHECK((v > 0.0f && v < 1.0f));
  }
  const auto again = one_shot_generate(net, m.at(0, 4), 1, features);
  CHECK(again[7].pixels == out[7].pixels);

  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;  // sentinel: nothing was thrown
  };
  CHECK(kind_of([&] { one_shot_generate(net, m.at(1, 0), 1, features); }) == ErrorKind::SameFont);
  CHECK(kind_of([&] { one_shot_generate(net, m.at(1, 0), 7, features); }) == ErrorKind::MissingContentRows);
  auto partial = features;
  partial.rows.erase(partial.rows.begin() + 30);  // font 1, class 4
  CHECK(kind_of([&] { one_shot_generate(net, m.at(0, 0), 1, partial); }) == ErrorKind::MissingContentRows);
}

TEST_CASE("scoring a glyph against itself") {
  const auto m = testing::synthetic_matrix(2, 3, 16);
  const auto& g = m.at(0, 1).image;
  const auto s = score_glyph(g, g, m.at(1, 1).image);
  CHECK(s.mse == 0.0);
  CHECK(s.mae == 0.0);
  CHECK(s.iou == 1.0);
  CHECK(s.hd == 0.0);
  CHECK(s.cd == 0.0);
  CHECK(s.exclusion.empty());
  CHECK(s.baseline_iou < 1.0);

  const GrayImage blank(16, 16);
  CHECK(score_glyph(blank, g, g).exclusion == kNoEdgesGenerated);
  CHECK(score_glyph(g, blank, g).exclusion == kNoEdgesTarget);
  const auto both = score_glyph(blank, blank, g);
  CHECK(both.exclusion == kNoEdgesBoth);
  CHECK(std::isnan(both.hd));
}

TEST_CASE("summary averages distances over included glyphs only") {
  std::vector<GlyphMetrics> rows(3);
  rows[0].hd = 2.0, rows[0].cd = 1.0, rows[0].iou = 0.5, rows[0].mse = 0.1;
  rows[1].hd = 4.0, rows[1].cd = 3.0, rows[1].iou = 0.7, rows[1].mse = 0.3;
  rows[2].hd = rows[2].cd = std::nan(""), rows[2].exclusion = kNoEdgesTarget, rows[2].iou = 0.0, rows[2].mse = 0.2;
  const auto s = summarize(rows);
  CHECK(s.glyphs == 3);
  CHECK(s.excluded_count == 1);
  CHECK(s.exclusion_reasons.at(kNoEdgesTarget) == 1);
  CHECK(s.hd == doctest::Approx(3.0));
  CHECK(s.cd == doctest::Approx(2.0));
  CHECK(s.iou == doctest::Approx(0.4));
  CHECK(s.mse == doctest::Approx(0.2));
}

TEST_CASE("generation report is deterministic and its exclusions recount") {
  const auto m = testing::synthetic_matrix(3, 26, 16);
  auto net = init_params(5, tiny_model());
  const auto features = extract_features(net, m);
  const auto a = evaluate_generation(net, m, features, 9, true);
  const auto b = evaluate_generation(net, m, features, 9);
  REQUIRE(a.report.rows.size() == 3u * 26 * 26);
  CHECK(a.generated.size() == a.report.rows.size());
  CHECK(b.generated.empty());
  size_t excluded = 0;
  for (size_t k = 0; k < a.report.rows.size(); ++k) {
    const auto& r = a.report.rows[k];
    CHECK(r.content_font != r.font_id);
    const double other = b.report.rows[k].hd;
    CHECK((r.hd == other || (std::isnan(r.hd) && std::isnan(other))));
    excluded += !r.exclusion.empty();
  }
  CHECK(a.report.summary.excluded_count == excluded);

  const auto dir = testing::scratch_dir("generation");
  a.report.write_csv(dir / "metrics.csv");
  a.report.write_summary(dir / "summary.json");
  const auto sheets = write_contact_sheets(a, m, dir);
  CHECK(sheets.size() == 3);
  CHECK_THROWS_AS(write_contact_sheets(b, m, dir), Error);
  CHECK_THROWS_AS(evaluate_generation(net, testing::synthetic_matrix(2, 26, 16), features, 9), Error);
}
