#include "test_framework.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "fontdisent/error.hpp"
#include "fontdisent/glyphset.hpp"
#include "test_support.hpp"

using namespace fontdisent;
namespace fs = std::filesystem;

namespace {

DatasetManifest blocks_manifest(const std::string& body) {
  return DatasetManifest::parse(body, testing::test_data(""));
}

void expect_kind(ErrorKind kind, auto&& fn) {
  try {
    fn();
    FAIL("expected an error of kind " << to_string(kind));
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
  }
}

}  // namespace

TEST_CASE("rasterized glyphs are normalized to [0,1] with full ink") {
  const auto g = rasterize_glyph(testing::test_data("blocks.ttf"), 'A', 64);
  REQUIRE(g.image.width == 64);
  REQUIRE(g.image.height == 64);
  const auto [lo, hi] = std::minmax_element(g.image.pixels.begin(), g.image.pixels.end());
  CHECK(*lo == 0.0f);
  CHECK(*hi == 1.0f);
  CHECK(g.ink_fraction() > 0.0);
}

TEST_CASE("rasterization of a glyph with no outline raises MissingGlyph") {
  expect_kind(ErrorKind::MissingGlyph, [] { rasterize_glyph(testing::test_data("blocks.ttf"), U'\0', 64); });
  expect_kind(ErrorKind::MissingGlyph, [] { rasterize_glyph(testing::test_data("blocks_noQ.ttf"), 'Q', 64); });
}

TEST_CASE("unparsable font files are rejected") {
  const auto dir = testing::scratch_dir("bad_font");
  std::ofstream(dir / "bad.ttf") << "definitely not a font file";
  expect_kind(ErrorKind::UnparsableFont, [&] { rasterize_glyph(dir / "bad.ttf", 'A', 64); });
  expect_kind(ErrorKind::UnparsableFont, [&] { rasterize_glyph(dir / "missing.ttf", 'A', 64); });
}

TEST_CASE("thin 'I' carries less ink than the box-shaped 'M'") {
  const auto font = testing::test_data("blocks.ttf");
  const auto i = rasterize_glyph(font, 'I', 64);
  const auto m = rasterize_glyph(font, 'M', 64);
  // Reference areas from the outlines: 'I' is a 100x700 bar and 'M' a 700x700
  // box, both scaled so the longer side spans 64 - 2*4 = 56 pixels.
  const double scale = 56.0 / 700.0;
  const double ref_i = (100 * scale) * (700 * scale) / 4096.0;
  const double ref_m = (700 * scale) * (700 * scale) / 4096.0;
  CHECK(i.ink_fraction() == doctest::Approx(ref_i).epsilon(0.03));
  CHECK(m.ink_fraction() == doctest::Approx(ref_m).epsilon(0.03));
  CHECK(i.ink_fraction() < m.ink_fraction());
}

TEST_CASE("glyphs are fit and centered inside the margin") {
  const auto g = rasterize_glyph(testing::test_data("blocks.ttf"), 'M', 64);
  int x0 = 64, x1 = -1, y0 = 64, y1 = -1;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (g.image.at(x, y) > 0.5f) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  CHECK(x0 == render_margin(64));
  CHECK(y0 == render_margin(64));
  CHECK(x1 == 63 - render_margin(64));
  CHECK(y1 == 63 - render_margin(64));
  CHECK(render_margin(64) == 4);
  CHECK(render_margin(50) == 3);
}

TEST_CASE("rasterization is deterministic") {
  const auto font = testing::font_file("DejaVuSerif.ttf");
  for (char c : {'A', 'G', 'Q', 'Z'}) CHECK(rasterize_glyph(font, c, 64).image == rasterize_glyph(font, c, 64).image);
}

TEST_CASE("render size below 16 is rejected") {
  expect_kind(ErrorKind::InvalidArgument, [] { rasterize_glyph(testing::test_data("blocks.ttf"), 'A', 15); });
  expect_kind(ErrorKind::InvalidArgument, [] { blocks_manifest("@render_size 8\n"); });
}

TEST_CASE("manifest parsing") {
  const auto m = blocks_manifest(
      "# comment\n@seed 7\n@render_size 32\ntrain a blocks.ttf\nval b blocks.ttf  # trailing\n\ntest c blocks.ttf\n");
  CHECK(m.seed == 7);
  CHECK(m.render_size == 32);
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[1].font_name == "b");
  CHECK(m.entries[1].split == Split::Val);
  CHECK(m.entries[2].font_file == testing::test_data("") / "blocks.ttf");
  CHECK(m.split_entries(Split::Train).size() == 1);

  expect_kind(ErrorKind::InvalidArgument, [] { blocks_manifest("train a blocks.ttf\ntest a blocks.ttf\n"); });
  expect_kind(ErrorKind::InvalidArgument, [] { blocks_manifest("holdout a blocks.ttf\n"); });
  expect_kind(ErrorKind::InvalidArgument, [] { blocks_manifest("train a\n"); });
}

TEST_CASE("bundled desk manifest has disjoint splits of 20/4/6 fonts") {
  const auto m = DatasetManifest::load(testing::source_dir() / "data" / "desk_manifest.txt");
  std::map<Split, std::set<std::string>> names;
  for (const auto& e : m.entries) {
    names[e.split].insert(e.font_name);
    CHECK(fs::exists(e.font_file));
  }
  CHECK(names[Split::Train].size() == 20);
  CHECK(names[Split::Val].size() == 4);
  CHECK(names[Split::Test].size() == 6);
  for (const auto& n : names[Split::Train]) CHECK((!names[Split::Val].count(n) && !names[Split::Test].count(n)));
  for (const auto& n : names[Split::Val]) CHECK(!names[Split::Test].count(n));
}

TEST_CASE("build_matrix counts and drop rule") {
  SUBCASE("three complete fonts") {
    const auto m = build_matrix(blocks_manifest("train a blocks.ttf\ntrain b blocks.ttf\ntrain c blocks.ttf\n"),
                                Split::Train);
    CHECK(m.num_fonts() == 3);
    CHECK(m.num_classes() == 26);
    CHECK(m.cell_count() == 78);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 26; ++j) {
        CHECK(m.at(i, j).font_id == i);
        CHECK(m.at(i, j).class_id == j);
        CHECK(m.at(i, j).ink_fraction() > 0.0);
        for (float v : m.at(i, j).image.pixels) REQUIRE((v >= 0.0f && v <= 1.0f));
      }
    }
    const auto labels = m.class_labels();
    CHECK(labels.front() == 'A');
    CHECK(labels.back() == 'Z');
  }
  SUBCASE("font without Q is dropped with one warning") {
    BuildReport report;
    const auto m = build_matrix(
        blocks_manifest("train a blocks.ttf\ntrain noq blocks_noQ.ttf\ntrain c blocks.ttf\n"), Split::Train, &report);
    CHECK(m.num_fonts() == 2);
    CHECK(report.warnings.size() == 1);
    CHECK(!m.find_font("noq"));
  }
  SUBCASE("one usable font is an empty split") {
    expect_kind(ErrorKind::EmptySplit, [] {
      build_matrix(blocks_manifest("train a blocks.ttf\ntrain noq blocks_noQ.ttf\n"), Split::Train);
    });
    expect_kind(ErrorKind::EmptySplit, [] { build_matrix(blocks_manifest("train a blocks.ttf\n"), Split::Val); });
  }
}

TEST_CASE("glyph cache round trip") {
  const auto dir = testing::scratch_dir("cache");
  const auto m = build_matrix(blocks_manifest("test a blocks.ttf\ntest b blocks.ttf\n"), Split::Test);
  save_matrix_cache(m, Split::Test, dir);
  CHECK(fs::exists(dir / "a" / "A.png"));
  CHECK(fs::exists(dir / "index.json"));
  const auto back = load_matrix_cache(dir, Split::Test);
  REQUIRE(back.cell_count() == m.cell_count());
  CHECK(back.font_names() == m.font_names());
  for (size_t k = 0; k < m.cell_count(); ++k) {
    const auto& a = m.glyphs()[k].image.pixels;
    const auto& b = back.glyphs()[k].image.pixels;
    for (size_t p = 0; p < a.size(); ++p) REQUIRE(b[p] == quantize8(a[p]));
  }
  expect_kind(ErrorKind::CorruptFile, [&] { load_matrix_cache(dir, Split::Train); });
}

TEST_CASE("batch sampler covers each cell once per epoch") {
  const auto m = testing::synthetic_matrix(3, 26, 16);
  BatchSampler sampler(m, 64, 11);
  CHECK(sampler.batches_per_epoch() == 2);
  for (int epoch = 0; epoch < 3; ++epoch) {
    const auto first = sampler.next_indices();
    const auto last = sampler.next_indices();
    CHECK(first.size() == 64);
    CHECK(last.size() == 78 % 64);
    std::vector<size_t> all(first);
    all.insert(all.end(), last.begin(), last.end());
    std::sort(all.begin(), all.end());
    for (size_t k = 0; k < all.size(); ++k) REQUIRE(all[k] == k);
  }
  CHECK(sampler.epoch() >= 2);
}

TEST_CASE("batch sampler determinism and seed sensitivity") {
  const auto m = testing::synthetic_matrix(3, 26, 16);
  BatchSampler a(m, 64, 5), b(m, 64, 5);
  for (int k = 0; k < 6; ++k) CHECK(a.next_indices() == b.next_indices());
  int differing = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    BatchSampler x(m, 64, 100 + 2 * s), y(m, 64, 101 + 2 * s);
    differing += x.next_indices() != y.next_indices();
  }
  CHECK(differing == 10);
  const auto batch = BatchSampler(m, 5, 1).next();
  CHECK(batch.size() == 5);
  CHECK_THROWS_AS(BatchSampler(m, 0, 1), Error);
}

TEST_CASE("pretrain triplet invariants over 1e5 draws") {
  const auto m = testing::synthetic_matrix(2, 26, 16);
  Rng rng(3);
  for (int k = 0; k < 100000; ++k) {
    const auto t = sample_triplet_index(m, rng);
    REQUIRE(t.content_font != t.target_font);
    REQUIRE((t.content_font >= 0 && t.content_font < 2 && t.target_font >= 0 && t.target_font < 2));
    REQUIRE((t.content_class >= 0 && t.content_class < 26 && t.style_class >= 0 && t.style_class < 26));
  }
  for (int k = 0; k < 200; ++k) {
    const auto t = sample_pretrain_triplet(m, rng);
    REQUIRE(t.content_src.class_id == t.target.class_id);
    REQUIRE(t.target.font_id == t.style_src.font_id);
    REQUIRE(t.content_src.font_id != t.target.font_id);
    REQUIRE(t.target.image == m.at(t.target.font_id, t.target.class_id).image);
  }
}

TEST_CASE("triplet target fonts are uniform") {
  const auto m = testing::synthetic_matrix(4, 26, 16);
  Rng rng(17);
  std::array<int, 4> counts{};
  std::set<int> style_classes;
  int same_class = 0;
  for (int k = 0; k < 10000; ++k) {
    const auto t = sample_triplet_index(m, rng);
    ++counts[t.target_font];
    style_classes.insert(t.style_class);
    same_class += t.style_class == t.content_class;
  }
  for (int c : counts) CHECK(c / 10000.0 == doctest::Approx(0.25).epsilon(0.08));  // 0.25 +- 0.02
  CHECK(style_classes.size() == 26);
  CHECK(same_class > 0);  // j' = j is allowed
}

TEST_CASE("triplets need two fonts") {
  const auto m = testing::synthetic_matrix(1, 26, 16);
  Rng rng(1);
  expect_kind(ErrorKind::InsufficientFonts, [&] { sample_pretrain_triplet(m, rng); });
  expect_kind(ErrorKind::InsufficientFonts, [&] { sample_triplet_index(m, rng); });
}
