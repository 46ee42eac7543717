// Command-line entry point.  Exit status: 0 success, 1 user error, 2 internal error.

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "fontdisent/averages.hpp"
#include "fontdisent/checkpoint.hpp"
#include "fontdisent/error.hpp"
#include "fontdisent/eval.hpp"
#include "fontdisent/features.hpp"
#include "fontdisent/glyphset.hpp"
#include "fontdisent/image.hpp"
#include "fontdisent/pipeline.hpp"
#include "fontdisent/trainer.hpp"
#include "fontdisent/util.hpp"

namespace fs = std::filesystem;
using namespace fontdisent;

namespace {

struct Options {
  std::string config;
  std::string manifest;
  std::string out;
  std::string checkpoint;
  std::string averages;
  std::string features;
  std::string test_features;
  std::string split = "test";
  std::string target = "font";
  std::string kind = "style";
  std::string style_image;
  std::string content_font;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<int> epochs;
  std::optional<int> patience;
  std::optional<int> size;
  bool quiet = false;
};

ExperimentConfig base_config(const Options& o) {
  return o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
}

/// --manifest, falling back to the manifest named by --config.
std::string manifest_of(const Options& o, const ExperimentConfig& c) {
  if (!o.manifest.empty()) return o.manifest;
  if (!c.manifest.empty()) return c.manifest.string();
  throw Error(ErrorKind::InvalidArgument, "no manifest given (use --manifest or --config)");
}

std::uint64_t seed_of(const Options& o, const ExperimentConfig& c) { return o.seed.value_or(c.seed); }

GlyphMatrix matrix_from(const std::string& manifest_path, Split split) {
  return build_matrix(DatasetManifest::load(manifest_path), split);
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

int cmd_render(const Options& o) {
  auto manifest = DatasetManifest::load(o.manifest);
  if (o.size) {
    if (*o.size < 16) throw Error(ErrorKind::InvalidArgument, "render size must be at least 16");
    manifest.render_size = *o.size;
  }
  render_dataset(manifest, o.out, &std::cout);
  return 0;
}

int cmd_pretrain(const Options& o) {
  const auto cfg = base_config(o);
  const auto manifest = DatasetManifest::load(manifest_of(o, cfg));
  ModelConfig model = cfg.model;
  model.image_size = manifest.render_size;
  const auto train = build_matrix(manifest, Split::Train);
  const auto val = build_matrix(manifest, Split::Val);
  const auto seed = seed_of(o, cfg);
  auto net = init_params(derive_seed(seed, "init"), model);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed, "pretrain");
  if (o.epochs) tc.max_epochs_pretrain = *o.epochs;
  if (o.patience) tc.early_stop_patience = *o.patience;
  if (!o.quiet) tc.log = &std::cout;
  const auto history = pretrain(net, train, val, tc, o.out);
  std::cout << "best epoch " << history.best_epoch << ", checkpoint " << (fs::path(o.out) / "best.ckpt").string()
            << "\n";
  return 0;
}

int cmd_compute_avgs(const Options& o) {
  const auto cfg = base_config(o);
  auto net = load_checkpoint(o.checkpoint).net;
  save_averages(o.out, compute_average_features(net, matrix_from(manifest_of(o, cfg), Split::Train)));
  return 0;
}

int cmd_finetune(const Options& o) {
  const auto cfg = base_config(o);
  auto net = load_checkpoint(o.checkpoint).net;
  const auto manifest = DatasetManifest::load(manifest_of(o, cfg));
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed_of(o, cfg), "finetune");
  if (o.epochs) tc.max_epochs_finetune = *o.epochs;
  if (o.patience) tc.early_stop_patience = *o.patience;
  if (!o.quiet) tc.log = &std::cout;
  const auto history =
      finetune(net, load_averages(o.averages), build_matrix(manifest, Split::Train), build_matrix(manifest, Split::Val),
               tc, o.out);
  std::cout << "best epoch " << history.best_epoch << ", checkpoint " << (fs::path(o.out) / "best.ckpt").string()
            << "\n";
  return 0;
}

int cmd_extract(const Options& o) {
  const auto cfg = base_config(o);
  auto net = load_checkpoint(o.checkpoint).net;
  const auto table = extract_features(net, matrix_from(manifest_of(o, cfg), parse_split(o.split)), sha256_file(o.checkpoint));
  save_table(o.out, table);
  std::cout << table.rows.size() << " rows written to " << o.out << "\n";
  return 0;
}

int cmd_visualize(const Options& o) {
  const auto files = visualize_table(load_table(o.features), o.out);
  std::cout << files.by_font.string() << "\n" << files.by_class.string() << "\n";
  return 0;
}

int cmd_probe(const Options& o) {
  const auto cfg = base_config(o);
  ProbeProtocol p = cfg.probe;
  p.target = parse_probe_target(o.target);
  p.kind = parse_feature_kind(o.kind);
  p.seed = seed_of(o, cfg);
  if (o.trials) p.trials = *o.trials;
  const auto table = load_table(o.features);
  std::optional<FeatureTable> test;
  if (!o.test_features.empty()) test = load_table(o.test_features);
  const auto r = run_probe(table, p, test ? &*test : nullptr);
  std::cout << to_string(r.kind) << " features, " << to_string(r.target) << " probe: " << 100.0 * r.mean << " +- "
            << 100.0 * r.stddev << " % over " << r.accuracies.size() << " trials (chance " << 100.0 * r.chance
            << " %)\n";
  if (!o.out.empty()) write_json_file(fs::path(o.out), r);
  return 0;
}

int cmd_generate(const Options& o) {
  auto ckpt = load_checkpoint(o.checkpoint);
  GlyphImage style;
  style.image = read_png_gray(o.style_image);
  if (style.image.width != ckpt.net->config().image_size || style.image.height != style.image.width) {
    throw Error(ErrorKind::InvalidArgument, "style image must be " + std::to_string(ckpt.net->config().image_size) +
                                                " pixels square");
  }
  FeatureTable table;
  int content_font = -1;
  if (!o.features.empty()) {
    table = load_table(o.features);
    const auto id = table.find_font(o.content_font);
    if (!id) throw Error(ErrorKind::UnknownFont, "font '" + o.content_font + "' is not in " + o.features);
    content_font = *id;
  } else if (!o.manifest.empty()) {
    const auto manifest = DatasetManifest::load(o.manifest);
    const ManifestEntry* entry = nullptr;
    for (const auto& e : manifest.entries) {
      if (e.font_name == o.content_font) entry = &e;
    }
    if (!entry) throw Error(ErrorKind::UnknownFont, "font '" + o.content_font + "' is not in " + o.manifest);
    std::vector<GlyphImage> glyphs;
    for (int j = 0; j < kNumClasses; ++j) {
      glyphs.push_back(rasterize_glyph(entry->font_file, static_cast<char32_t>(class_label(j)), manifest.render_size));
    }
    table = extract_features(ckpt.net, GlyphMatrix({o.content_font}, std::move(glyphs)));
    content_font = 0;
  } else {
    throw Error(ErrorKind::InvalidArgument, "generate needs --features or --manifest to find content vectors");
  }
  const auto images = one_shot_generate(ckpt.net, style, content_font, table);
  const fs::path out(o.out);
  fs::create_directories(out);
  for (size_t j = 0; j < images.size(); ++j) {
    write_png(out / (std::string(1, class_label(static_cast<int>(j))) + ".png"), images[j]);
  }
  write_generation_strip(style.image, images, out / "strip.png");
  std::cout << images.size() << " glyphs written to " << out.string() << "\n";
  return 0;
}

int cmd_report(const Options& o) {
  const auto cfg = base_config(o);
  auto net = load_checkpoint(o.checkpoint).net;
  const auto test = matrix_from(manifest_of(o, cfg), Split::Test);
  const auto table = extract_features(net, test, sha256_file(o.checkpoint));
  const auto result = evaluate_generation(net, test, table, derive_seed(seed_of(o, cfg), "generate"), true);
  const fs::path out(o.out);
  result.report.write_csv(out / artifacts::kMetrics);
  result.report.write_summary(out / artifacts::kMetricsSummary);
  write_contact_sheets(result, test, out / artifacts::kSheets);
  const auto& s = result.report.summary;
  std::cout << "MSE " << s.mse << "  MAE " << s.mae << "  HD " << s.hd << "  CD " << s.cd << "  IoU " << s.iou
            << "  (copy-content IoU " << s.baseline_iou << ", excluded " << s.excluded_count << " of " << s.glyphs
            << ")\n";
  return 0;
}

int cmd_run_pipeline(const Options& o) {
  auto cfg = ExperimentConfig::load(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed) cfg.seed = *o.seed;
  const auto result = run_pipeline(cfg, o.quiet ? nullptr : &std::cout);
  std::cout << "ran " << result.ran.size() << " stage(s), skipped " << result.skipped.size() << "; artifacts in "
            << result.output_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Font style/content disentanglement toolkit"};
  app.require_subcommand(1);
  Options o;
  int (*handler)(const Options&) = nullptr;

  auto add = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&handler, fn] { handler = fn; });
    return sub;
  };
  auto config_opt = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config whose settings act as defaults")->check(CLI::ExistingFile);
  };

  auto* render = add("render-dataset", "Rasterize every split of a manifest into a glyph cache", cmd_render);
  render->add_option("--manifest", o.manifest)->required()->check(CLI::ExistingFile);
  render->add_option("--out", o.out)->required();
  render->add_option("--size", o.size, "Override the manifest's render size");
  render->add_option("--seed", o.seed, "Accepted for symmetry; rendering draws no random numbers");

  auto* pre = add("pretrain", "Style-transfer pre-training", cmd_pretrain);
  pre->add_option("--manifest", o.manifest)->check(CLI::ExistingFile);
  pre->add_option("--out", o.out, "Checkpoint directory")->required();
  pre->add_option("--seed", o.seed);
  pre->add_option("--epochs", o.epochs, "Maximum epochs");
  pre->add_option("--patience", o.patience, "Early-stopping patience");
  pre->add_flag("--quiet", o.quiet);
  config_opt(pre);

  auto* avgs = add("compute-avgs", "Average style and content features over the train split", cmd_compute_avgs);
  avgs->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  avgs->add_option("--manifest", o.manifest)->check(CLI::ExistingFile);
  avgs->add_option("--out", o.out)->required();
  config_opt(avgs);

  auto* fine = add("finetune", "Variance-loss fine-tuning", cmd_finetune);
  fine->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  fine->add_option("--avgs,--averages", o.averages)->required()->check(CLI::ExistingFile);
  fine->add_option("--manifest", o.manifest)->check(CLI::ExistingFile);
  fine->add_option("--out", o.out, "Checkpoint directory")->required();
  fine->add_option("--seed", o.seed);
  fine->add_option("--epochs", o.epochs, "Maximum epochs");
  fine->add_option("--patience", o.patience, "Early-stopping patience");
  fine->add_flag("--quiet", o.quiet);
  config_opt(fine);

  auto* extract = add("extract", "Encode one split into a feature table", cmd_extract);
  extract->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  extract->add_option("--manifest", o.manifest)->check(CLI::ExistingFile);
  extract->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test"}));
  extract->add_option("--out", o.out)->required();
  config_opt(extract);

  auto* vis = add("visualize", "PCA scatter plots of a feature table", cmd_visualize);
  vis->add_option("--features", o.features)->required()->check(CLI::ExistingFile);
  vis->add_option("--out", o.out)->required();

  auto* probe = add("probe", "Train and score a recognition probe on frozen features", cmd_probe);
  probe->add_option("--features", o.features)->required()->check(CLI::ExistingFile);
  probe->add_option("--test-features", o.test_features, "Held-out table for character probes")
      ->check(CLI::ExistingFile);
  probe->add_option("--target", o.target)->check(CLI::IsMember({"font", "char"}));
  probe->add_option("--kind", o.kind)->check(CLI::IsMember({"style", "content"}));
  probe->add_option("--trials", o.trials);
  probe->add_option("--seed", o.seed);
  probe->add_option("--out", o.out, "Optional JSON result file");
  config_opt(probe);

  auto* gen = add("generate", "One-shot generation of 26 glyphs from a single style image", cmd_generate);
  gen->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  gen->add_option("--style-image", o.style_image)->required()->check(CLI::ExistingFile);
  gen->add_option("--content-font", o.content_font)->required();
  gen->add_option("--features", o.features, "Feature table holding the content font")->check(CLI::ExistingFile);
  gen->add_option("--manifest", o.manifest, "Manifest holding the content font")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out)->required();

  auto* report = add("report", "One-shot generation metrics over the test split", cmd_report);
  report->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
  report->add_option("--manifest", o.manifest)->check(CLI::ExistingFile);
  report->add_option("--out", o.out)->required();
  report->add_option("--seed", o.seed);
  config_opt(report);

  auto* run = add("run-pipeline", "Run every stage from one config, skipping up-to-date stages", cmd_run_pipeline);
  run->add_option("--config", o.config)->required()->check(CLI::ExistingFile);
  run->add_option("--out", o.out, "Override the config's output directory");
  run->add_option("--seed", o.seed, "Override the config's global seed");
  run->add_flag("--quiet", o.quiet);

  add("version", "Print toolkit, config schema and checkpoint format versions", [](const Options&) {
    std::cout << version_info() << "\n";
    return 0;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    return handler(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_user_error(e.kind()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
