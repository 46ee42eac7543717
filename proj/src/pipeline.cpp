#include "fontdisent/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "fontdisent/averages.hpp"
#include "fontdisent/checkpoint.hpp"
#include "fontdisent/error.hpp"
#include "fontdisent/features.hpp"
#include "fontdisent/losses.hpp"
#include "fontdisent/util.hpp"

namespace fontdisent {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptFile, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << j.dump(2) << "\n";
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

/// Files under `p` in sorted order, or `p` itself for a regular file.
std::vector<fs::path> expand(const fs::path& p) {
  if (!fs::is_directory(p)) return {p};
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// Hashes of every file behind `paths`, keyed relative to `root` when possible.
/// Returns nullopt when any path is missing.
std::optional<std::map<std::string, std::string>> hash_paths(const std::vector<fs::path>& paths, const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) return std::nullopt;
    for (const auto& f : expand(p)) {
      const auto rel = f.lexically_relative(root);
      const auto key = (rel.empty() || *rel.begin() == "..") ? f.string() : rel.generic_string();
      out[key] = sha256_file(f);
    }
  }
  return out;
}

class StageRunner {
 public:
  StageRunner(fs::path root, std::ostream* log, PipelineResult& result)
      : root_(std::move(root)), log_(log), result_(result) {
    const fs::path state = root_ / artifacts::kStages;
    if (fs::exists(state)) {
      try {
        state_ = read_json(state);
      } catch (const Error&) {
        state_ = json::object();
      }
    }
    if (!state_.is_object()) state_ = json::object();
  }

  template <class Fn>
  void run(const std::string& name, const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
           const json& settings, Fn&& fn) {
    const std::string settings_hash = sha256_hex(settings.dump());
    if (!dirty_ && up_to_date(name, inputs, outputs, settings_hash)) {
      if (log_) *log_ << "[" << name << "] up to date, skipped" << std::endl;
      result_.skipped.push_back(name);
      return;
    }
    if (log_) *log_ << "[" << name << "] running" << std::endl;
    state_.erase(name);
    save();
    try {
      fn();
    } catch (const Error& e) {
      throw Error(e.kind(), "stage " + name + ": " + strip_kind(e));
    } catch (const std::exception& e) {
      throw std::runtime_error("stage " + name + ": " + e.what());
    }
    const auto in_hashes = hash_paths(inputs, root_);
    const auto out_hashes = hash_paths(outputs, root_);
    if (!in_hashes || !out_hashes) {
      throw Error(ErrorKind::Io, "stage " + name + " did not produce all of its outputs");
    }
    state_[name] = json{{"inputs", *in_hashes}, {"outputs", *out_hashes}, {"settings", settings_hash}};
    save();
    dirty_ = true;
    result_.ran.push_back(name);
  }

 private:
  static std::string strip_kind(const Error& e) {
    const std::string what = e.what();
    const std::string prefix = std::string(to_string(e.kind())) + ": ";
    return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
  }

  bool up_to_date(const std::string& name, const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                  const std::string& settings_hash) const {
    if (!state_.contains(name)) return false;
    const auto& rec = state_[name];
    if (rec.value("settings", std::string()) != settings_hash) return false;
    const auto in_hashes = hash_paths(inputs, root_);
    const auto out_hashes = hash_paths(outputs, root_);
    if (!in_hashes || !out_hashes) return false;
    return rec["inputs"].get<std::map<std::string, std::string>>() == *in_hashes &&
           rec["outputs"].get<std::map<std::string, std::string>>() == *out_hashes;
  }

  void save() const { write_json(root_ / artifacts::kStages, state_); }

  fs::path root_;
  std::ostream* log_;
  PipelineResult& result_;
  json state_ = json::object();
  bool dirty_ = false;
};

double min_pairwise_distance(const torch::Tensor& rows) {
  const auto r = rows.to(torch::kFloat64);
  double best = std::numeric_limits<double>::infinity();
  for (int64_t a = 0; a < r.size(0); ++a) {
    for (int64_t b = a + 1; b < r.size(0); ++b) best = std::min(best, (r[a] - r[b]).norm().item<double>());
  }
  return best;
}

GlyphMatrix load_split(const fs::path& root, Split split) { return load_matrix_cache(root / artifacts::kGlyphs, split); }

DisentangleNet load_net(const fs::path& path) { return load_checkpoint(path).net; }

std::vector<fs::path> with_index(const fs::path& table) { return {table, index_path(table)}; }

}  // namespace

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  return from_json(read_json(path), fs::absolute(path).parent_path());
}

json ExperimentConfig::to_json() const {
  json j{{"schema_version", schema_version},
         {"manifest", manifest.string()},
         {"output_dir", output_dir.string()},
         {"seed", seed},
         {"model", model},
         {"train", train},
         {"probe", probe},
         {"contact_sheets", contact_sheets}};
  j["train"].erase("seed");
  j["probe"].erase("seed");
  j["probe"].erase("target");
  j["probe"].erase("kind");
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    c.schema_version = j.value("schema_version", kConfigSchemaVersion);
    if (c.schema_version != kConfigSchemaVersion) {
      throw Error(ErrorKind::InvalidArgument, "config schema version " + std::to_string(c.schema_version) +
                                                  " is not supported (expected " +
                                                  std::to_string(kConfigSchemaVersion) + ")");
    }
    c.manifest = resolve(j.value("manifest", std::string()), base_dir);
    c.output_dir = resolve(j.value("output_dir", c.output_dir.string()), base_dir);
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
    if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
    if (j.contains("probe")) c.probe = j["probe"].get<ProbeProtocol>();
    c.contact_sheets = j.value("contact_sheets", c.contact_sheets);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("bad config: ") + e.what());
  }
  c.model.validate();
  return c;
}

void render_dataset(const DatasetManifest& manifest, const fs::path& out_dir, std::ostream* log) {
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    if (manifest.split_entries(split).empty()) continue;
    const auto matrix = build_matrix(manifest, split);
    save_matrix_cache(matrix, split, out_dir);
    if (log) *log << to_string(split) << ": " << matrix.num_fonts() << " fonts" << std::endl;
  }
}

json finetune_summary(DisentangleNet& pretrained, DisentangleNet& finetuned, const AverageFeatureTable& frozen,
                      const GlyphMatrix& train, const GlyphMatrix& val) {
  auto describe = [&](DisentangleNet& net) {
    const auto v = measure_variance(net, train);
    return json{{"train_style_variance", v.style},
                {"train_content_variance", v.content},
                {"val_reconstruction", evaluate_reconstruction(net, val)}};
  };
  json j{{"pretrained", describe(pretrained)}, {"finetuned", describe(finetuned)}};

  // Losses of the final weights against the frozen table the run trained with.
  const auto f = encode_matrix(finetuned, train);
  std::vector<int64_t> fonts, classes;
  for (const auto& g : train.glyphs()) fonts.push_back(g.font_id), classes.push_back(g.class_id);
  j["final_train_style_loss"] =
      losses::style_variance_loss(f.style, torch::tensor(fonts), frozen).item<double>();
  j["final_train_content_loss"] =
      losses::content_variance_loss(f.content, torch::tensor(classes), frozen).item<double>();

  const auto avgs = compute_average_features(finetuned, train);
  j["min_style_average_distance"] = min_pairwise_distance(avgs.style);
  j["min_content_average_distance"] = min_pairwise_distance(avgs.content);
  return j;
}

json run_probe_suite(const FeatureTable& train, const FeatureTable& test, const ProbeProtocol& defaults,
                     std::uint64_t seed) {
  json j = json::object();
  for (ProbeTarget target : {ProbeTarget::Font, ProbeTarget::Character}) {
    for (FeatureKind kind : {FeatureKind::Style, FeatureKind::Content}) {
      ProbeProtocol p = defaults;
      p.target = target;
      p.kind = kind;
      const std::string key = std::string(to_string(kind)) + "_" + std::string(to_string(target));
      p.seed = derive_seed(seed, "probe/" + key);
      const auto r = target == ProbeTarget::Font ? run_probe(test, p) : run_probe(train, p, &test);
      j[key] = r;
    }
  }
  return j;
}

PipelineResult run_pipeline(const ExperimentConfig& config, std::ostream* log) {
  if (config.manifest.empty()) throw Error(ErrorKind::InvalidArgument, "config names no dataset manifest");
  const auto manifest = DatasetManifest::load(config.manifest);
  ModelConfig model = config.model;
  model.image_size = manifest.render_size;
  model.validate();

  PipelineResult result;
  result.output_dir = config.output_dir;
  const fs::path root = config.output_dir;
  fs::create_directories(root);
  write_json(root / artifacts::kConfig, config.to_json());
  StageRunner stages(root, log, result);

  const json model_json = model;
  json train_json = config.train;
  train_json.erase("seed");
  const fs::path glyphs = root / artifacts::kGlyphs;
  const fs::path pretrained = root / artifacts::kPretrained;
  const fs::path averages = root / artifacts::kAverages;
  const fs::path finetuned = root / artifacts::kFinetuned;
  const fs::path summary = root / artifacts::kFinetuneSummary;
  const fs::path test_table = root / artifacts::kTestFeatures;
  const fs::path train_table = root / artifacts::kTrainFeatures;
  const fs::path plots = root / artifacts::kPlots;
  const fs::path probes = root / artifacts::kProbes;
  const fs::path metrics_csv = root / artifacts::kMetrics;
  const fs::path metrics_summary = root / artifacts::kMetricsSummary;
  const fs::path sheets = root / artifacts::kSheets;
  const fs::path report = root / artifacts::kReport;

  std::vector<fs::path> manifest_inputs{config.manifest};
  for (const auto& e : manifest.entries) manifest_inputs.push_back(e.font_file);

  stages.run("render", manifest_inputs, {glyphs}, json{{"render_size", manifest.render_size}}, [&] {
    fs::remove_all(glyphs);
    render_dataset(manifest, glyphs, log);
  });

  TrainConfig train_cfg = config.train;
  train_cfg.log = log;

  stages.run("pretrain", {glyphs}, {pretrained}, json{{"model", model_json}, {"train", train_json}, {"seed", config.seed}},
             [&] {
               const auto train = load_split(root, Split::Train);
               const auto val = load_split(root, Split::Val);
               auto net = init_params(derive_seed(config.seed, "init"), model);
               TrainConfig cfg = train_cfg;
               cfg.seed = derive_seed(config.seed, "pretrain");
               fs::remove_all(root / artifacts::kPretrainDir);
               pretrain(net, train, val, cfg, root / artifacts::kPretrainDir);
               fs::copy_file(root / artifacts::kPretrainDir / "best.ckpt", pretrained,
                             fs::copy_options::overwrite_existing);
             });

  stages.run("compute-avgs", {glyphs, pretrained}, {averages}, json::object(), [&] {
    auto net = load_net(pretrained);
    save_averages(averages, compute_average_features(net, load_split(root, Split::Train)));
  });

  stages.run("finetune", {glyphs, pretrained, averages}, {finetuned, summary},
             json{{"train", train_json}, {"seed", config.seed}}, [&] {
               const auto train = load_split(root, Split::Train);
               const auto val = load_split(root, Split::Val);
               const auto table = load_averages(averages);
               auto net = load_net(pretrained);
               TrainConfig cfg = train_cfg;
               cfg.seed = derive_seed(config.seed, "finetune");
               fs::remove_all(root / artifacts::kFinetuneDir);
               const auto history = finetune(net, table, train, val, cfg, root / artifacts::kFinetuneDir);
               fs::copy_file(root / artifacts::kFinetuneDir / "best.ckpt", finetuned,
                             fs::copy_options::overwrite_existing);
               auto before = load_net(pretrained);
               auto after = load_net(finetuned);
               json s = finetune_summary(before, after, table, train, val);
               s["best_epoch"] = history.best_epoch;
               s["epochs_run"] = history.records.size();
               write_json(summary, s);
             });

  stages.run("extract", {glyphs, finetuned}, {test_table, index_path(test_table), train_table, index_path(train_table)},
             json::object(), [&] {
               auto net = load_net(finetuned);
               const auto ckpt_id = sha256_file(finetuned);
               save_table(test_table, extract_features(net, load_split(root, Split::Test), ckpt_id));
               save_table(train_table, extract_features(net, load_split(root, Split::Train), ckpt_id));
             });

  stages.run("visualize", with_index(test_table), {plots}, json::object(), [&] {
    fs::remove_all(plots);
    visualize_table(load_table(test_table), plots);
  });

  json probe_json = config.probe;
  probe_json.erase("seed");
  stages.run("probe", {test_table, index_path(test_table), train_table, index_path(train_table)}, {probes},
             json{{"probe", probe_json}, {"seed", config.seed}}, [&] {
               write_json(probes, run_probe_suite(load_table(train_table), load_table(test_table), config.probe,
                                                  derive_seed(config.seed, "probe")));
             });

  std::vector<fs::path> generate_outputs{metrics_csv, metrics_summary};
  if (config.contact_sheets) generate_outputs.push_back(sheets);
  stages.run("generate", {glyphs, finetuned, test_table, index_path(test_table)}, generate_outputs,
             json{{"seed", config.seed}, {"contact_sheets", config.contact_sheets}}, [&] {
               auto net = load_net(finetuned);
               const auto test = load_split(root, Split::Test);
               const auto result = evaluate_generation(net, test, load_table(test_table),
                                                       derive_seed(config.seed, "generate"), config.contact_sheets);
               result.report.write_csv(metrics_csv);
               result.report.write_summary(metrics_summary);
               if (config.contact_sheets) {
                 fs::remove_all(sheets);
                 write_contact_sheets(result, test, sheets);
               }
             });

  stages.run("report", {summary, probes, metrics_summary}, {report}, json::object(), [&] {
    json r{{"version", version_info()},
           {"finetune", read_json(summary)},
           {"probes", read_json(probes)},
           {"generation", read_json(metrics_summary)}};
    write_json(report, r);
  });
  return result;
}

std::string version_info() {
  std::ostringstream out;
  out << "fontdisent " << kToolkitVersion << " (config schema " << kConfigSchemaVersion << ", checkpoint format "
      << kCheckpointFormatVersion << ")";
  return out.str();
}

}  // namespace fontdisent
