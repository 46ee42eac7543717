#include "fontdisent/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <ostream>

#include "fontdisent/error.hpp"
#include "fontdisent/util.hpp"

namespace fontdisent {

namespace fs = std::filesystem;
using losses::LossWeights;

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"max_epochs_pretrain", c.max_epochs_pretrain},
                     {"max_epochs_finetune", c.max_epochs_finetune},
                     {"early_stop_patience", c.early_stop_patience},
                     {"seed", c.seed},
                     {"lambda_cls", c.weights.lambda_cls},
                     {"lambda_style", c.weights.lambda_style},
                     {"lambda_content", c.weights.lambda_content},
                     {"recompute_averages_every", c.recompute_averages_every},
                     {"keep_epoch_checkpoints", c.keep_epoch_checkpoints}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.max_epochs_pretrain = j.value("max_epochs_pretrain", d.max_epochs_pretrain);
  c.max_epochs_finetune = j.value("max_epochs_finetune", d.max_epochs_finetune);
  c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
  c.seed = j.value("seed", d.seed);
  c.weights.lambda_cls = j.value("lambda_cls", d.weights.lambda_cls);
  c.weights.lambda_style = j.value("lambda_style", d.weights.lambda_style);
  c.weights.lambda_content = j.value("lambda_content", d.weights.lambda_content);
  c.recompute_averages_every = j.value("recompute_averages_every", d.recompute_averages_every);
  c.keep_epoch_checkpoints = j.value("keep_epoch_checkpoints", d.keep_epoch_checkpoints);
  if (c.batch_size < 1 || c.learning_rate <= 0 || c.early_stop_patience < 0 || c.weights.lambda_cls < 0 ||
      c.weights.lambda_style < 0 || c.weights.lambda_content < 0) {
    throw Error(ErrorKind::InvalidArgument, "invalid training configuration");
  }
}

void TrainingHistory::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  static const char* terms[] = {"rec", "trans", "cls", "style", "content", "total"};
  out << "phase,epoch";
  for (const char* split : {"train", "val"}) {
    for (const char* t : terms) out << "," << split << "_" << t;
  }
  out << ",best\n";
  out << std::setprecision(9);
  auto emit = [&out](const LossTerms& l) {
    for (double v : {l.rec, l.trans, l.cls, l.style, l.content, l.total}) {
      out << ",";
      if (!std::isnan(v)) out << v;
    }
  };
  for (const auto& r : records) {
    out << to_string(phase) << "," << r.epoch;
    emit(r.train);
    emit(r.val);
    out << "," << (r.epoch == best_epoch ? 1 : 0) << "\n";
  }
}

bool EarlyStopper::update(int epoch, double loss) {
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

namespace {

/// Running mean of loss terms over steps.
struct TermAccumulator {
  double rec = 0, trans = 0, cls = 0, style = 0, content = 0, total = 0;
  double weight = 0;

  void add(const LossTerms& l, double w) {
    auto acc = [w](double& s, double v) {
      if (!std::isnan(v)) s += v * w;
    };
    acc(rec, l.rec);
    acc(trans, l.trans);
    acc(cls, l.cls);
    acc(style, l.style);
    acc(content, l.content);
    acc(total, l.total);
    weight += w;
  }

  LossTerms mean(const LossTerms& shape) const {
    auto pick = [this](double s, double like) { return std::isnan(like) ? kUnused : s / weight; };
    return {pick(rec, shape.rec),     pick(trans, shape.trans),     pick(cls, shape.cls),
            pick(style, shape.style), pick(content, shape.content), pick(total, shape.total)};
  }
};

double scalar(const torch::Tensor& t) { return t.item<double>(); }

void require_finite(const LossTerms& l, const char* phase, int epoch) {
  // Unused terms are NaN by convention, so only infinities flag them; the
  // total is always present and must be a number.
  bool ok = std::isfinite(l.total);
  for (double v : {l.rec, l.trans, l.cls, l.style, l.content}) ok = ok && !std::isinf(v);
  if (!ok) {
    throw Error(ErrorKind::DivergedLoss, std::string(phase) + " loss became non-finite in epoch " + std::to_string(epoch));
  }
}

/// Classifier output, with non-finite values reported as divergence rather
/// than as an invalid distribution.
torch::Tensor classify_checked(DisentangleNet& net, const torch::Tensor& content) {
  auto p = net->classify(content);
  if (!torch::isfinite(p.detach()).all().item<bool>()) {
    throw Error(ErrorKind::DivergedLoss, "classifier produced non-finite probabilities");
  }
  return p;
}

torch::optim::Adam make_optimizer(DisentangleNet& net, const TrainConfig& cfg) {
  return torch::optim::Adam(net->parameters(),
                            torch::optim::AdamOptions(cfg.learning_rate).betas({cfg.beta1, cfg.beta2}));
}

/// Snapshot of every parameter and buffer, used to restore the best epoch.
class StateSnapshot {
 public:
  void capture(DisentangleNet& net) {
    torch::NoGradGuard guard;
    tensors_.clear();
    for (const auto& p : net->parameters()) tensors_.push_back(p.detach().clone());
    for (const auto& b : net->buffers()) tensors_.push_back(b.detach().clone());
  }

  void restore(DisentangleNet& net) const {
    if (tensors_.empty()) return;
    torch::NoGradGuard guard;
    size_t k = 0;
    for (auto& p : net->parameters()) p.copy_(tensors_[k++]);
    for (auto& b : net->buffers()) b.copy_(tensors_[k++]);
  }

 private:
  std::vector<torch::Tensor> tensors_;
};

class CheckpointWriter {
 public:
  CheckpointWriter(fs::path dir, Phase phase, const TrainConfig& cfg) : dir_(std::move(dir)), phase_(phase) {
    config_ = cfg;
    config_["phase"] = to_string(phase);
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  void epoch(DisentangleNet& net, int epoch, bool best, bool keep) const {
    if (dir_.empty()) return;
    if (!all_finite(net)) throw Error(ErrorKind::DivergedLoss, "non-finite parameters at epoch " + std::to_string(epoch));
    Checkpoint ckpt{net, phase_, config_};
    ckpt.config["epoch"] = epoch;
    std::ostringstream name;
    name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
    save_checkpoint(dir_ / (keep ? name.str() : std::string("last.ckpt")), ckpt);
    if (best) save_checkpoint(dir_ / "best.ckpt", ckpt);
  }

  void finish(DisentangleNet& net, const TrainingHistory& history) const {
    if (dir_.empty()) return;
    Checkpoint ckpt{net, phase_, config_};
    ckpt.config["epoch"] = history.best_epoch;
    save_checkpoint(dir_ / "best.ckpt", ckpt);
    history.write_csv(dir_ / "history.csv");
  }

 private:
  fs::path dir_;
  Phase phase_;
  nlohmann::json config_;
};

void log_epoch(const TrainConfig& cfg, const char* phase, const EpochRecord& r, bool best) {
  if (!cfg.log) return;
  auto& out = *cfg.log;
  out << phase << " epoch " << r.epoch << std::fixed << std::setprecision(5) << "  train " << r.train.total
      << " (rec " << r.train.rec;
  if (!std::isnan(r.train.trans)) out << " trans " << r.train.trans;
  if (!std::isnan(r.train.style)) out << " style " << r.train.style << " content " << r.train.content;
  out << " cls " << r.train.cls << ")  val " << r.val.total << (best ? "  *" : "") << std::endl;
  out.unsetf(std::ios::floatfield);
}

torch::Tensor labels_of(const std::vector<int64_t>& ids) { return torch::tensor(ids, torch::kInt64); }

/// Loss terms of one batch of triplets; rows of `images` are content
/// sources, targets and style sources stacked in that order.
struct PretrainBatch {
  torch::Tensor images;
  torch::Tensor targets;
  torch::Tensor content_labels;
  int64_t size = 0;
};

PretrainBatch gather_triplets(const torch::Tensor& cells, const GlyphMatrix& m, const std::vector<TripletIndex>& ts) {
  std::vector<int64_t> content, target, style, labels;
  for (const auto& t : ts) {
    content.push_back(int64_t{t.content_font} * m.num_classes() + t.content_class);
    target.push_back(int64_t{t.target_font} * m.num_classes() + t.content_class);
    style.push_back(int64_t{t.target_font} * m.num_classes() + t.style_class);
    labels.push_back(t.content_class);
  }
  PretrainBatch b;
  b.size = static_cast<int64_t>(ts.size());
  b.targets = cells.index_select(0, labels_of(target));
  b.images = torch::cat({cells.index_select(0, labels_of(content)), b.targets, cells.index_select(0, labels_of(style))});
  b.content_labels = labels_of(labels);
  return b;
}

struct PretrainOutputs {
  torch::Tensor rec, trans, cls, cls_detached;
};

PretrainOutputs pretrain_forward(DisentangleNet& net, const PretrainBatch& b, bool classifier_on_detached) {
  const int64_t n = b.size;
  const auto f = net->encode(b.images);
  const auto content_src = f.content.narrow(0, 0, n);
  const auto target_style = f.style.narrow(0, n, n);
  const auto target_content = f.content.narrow(0, n, n);
  const auto source_style = f.style.narrow(0, 2 * n, n);
  const auto decoded = net->decode(torch::cat({target_style, source_style}), torch::cat({target_content, content_src}));
  PretrainOutputs out;
  out.rec = losses::reconstruction_loss(b.targets, decoded.narrow(0, 0, n));
  out.trans = losses::transfer_loss(b.targets, decoded.narrow(0, n, n));
  out.cls = losses::classification_loss(classify_checked(net, content_src), b.content_labels);
  if (classifier_on_detached) {
    out.cls_detached = losses::classification_loss(classify_checked(net, content_src.detach()), b.content_labels);
  }
  return out;
}

}  // namespace

FeatureBatch encode_matrix(DisentangleNet& net, const GlyphMatrix& matrix) {
  InferenceScope scope(net);
  const auto cells = to_tensor(std::span<const GlyphImage>(matrix.glyphs()));
  std::vector<torch::Tensor> style, content;
  for_each_chunk(matrix.cell_count(), 64, [&](size_t a, size_t b) {
    const auto f = net->encode(cells.narrow(0, static_cast<int64_t>(a), static_cast<int64_t>(b - a)));
    style.push_back(f.style);
    content.push_back(f.content);
  });
  return {torch::cat(style), torch::cat(content)};
}

TrainingHistory pretrain(DisentangleNet& net, const GlyphMatrix& train, const GlyphMatrix& val, const TrainConfig& cfg,
                         const fs::path& checkpoint_dir) {
  if (train.num_fonts() < 2) throw Error(ErrorKind::InsufficientFonts, "pre-training needs at least 2 train fonts");
  if (val.num_fonts() < 2) throw Error(ErrorKind::InsufficientFonts, "pre-training needs at least 2 val fonts");
  const LossWeights& w = cfg.weights;
  // F sees the unscaled classification gradient; the encoder sees it scaled by lambda_cls.
  const double detached_weight = std::max(0.0, 1.0 - w.lambda_cls);

  const auto train_cells = to_tensor(std::span<const GlyphImage>(train.glyphs()));
  const auto val_cells = to_tensor(std::span<const GlyphImage>(val.glyphs()));

  Rng triplet_rng(derive_seed(cfg.seed, "pretrain/triplets"));
  std::vector<TripletIndex> val_triplets;
  {
    Rng val_rng(derive_seed(cfg.seed, "pretrain/val-triplets"));
    for (size_t k = 0; k < val.cell_count(); ++k) val_triplets.push_back(sample_triplet_index(val, val_rng));
  }
  const size_t steps_per_epoch = (train.cell_count() + cfg.batch_size - 1) / cfg.batch_size;

  auto optimizer = make_optimizer(net, cfg);
  TrainingHistory history;
  history.phase = Phase::Pretrained;
  EarlyStopper stopper(cfg.early_stop_patience);
  StateSnapshot best;
  CheckpointWriter writer(checkpoint_dir, Phase::Pretrained, cfg);

  for (int epoch = 1; epoch <= cfg.max_epochs_pretrain; ++epoch) {
    net->train();
    TermAccumulator acc;
    const LossTerms shape{0, 0, 0, kUnused, kUnused, 0};
    for (size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<TripletIndex> ts(cfg.batch_size);
      for (auto& t : ts) t = sample_triplet_index(train, triplet_rng);
      const auto batch = gather_triplets(train_cells, train, ts);
      const auto out = pretrain_forward(net, batch, true);
      const auto objective = losses::pretrain_loss(out.rec, out.trans, out.cls, w);
      const auto total = objective + out.cls_detached * detached_weight;
      optimizer.zero_grad();
      total.backward();
      optimizer.step();

      LossTerms l{scalar(out.rec), scalar(out.trans), scalar(out.cls), kUnused, kUnused, scalar(objective)};
      require_finite(l, "pre-training", epoch);
      if (!all_finite(net)) throw Error(ErrorKind::DivergedLoss, "non-finite parameters during pre-training");
      acc.add(l, 1.0);
    }

    TermAccumulator val_acc;
    {
      InferenceScope scope(net);
      for_each_chunk(val_triplets.size(), 64, [&](size_t a, size_t b) {
        std::vector<TripletIndex> chunk(val_triplets.begin() + a, val_triplets.begin() + b);
        const auto out = pretrain_forward(net, gather_triplets(val_cells, val, chunk), false);
        const LossTerms l{scalar(out.rec), scalar(out.trans), scalar(out.cls), kUnused, kUnused,
                          losses::pretrain_loss(scalar(out.rec), scalar(out.trans), scalar(out.cls), w)};
        val_acc.add(l, static_cast<double>(b - a));
      });
    }

    EpochRecord record{epoch, acc.mean(shape), val_acc.mean(shape)};
    require_finite(record.val, "pre-training validation", epoch);
    const bool improved = stopper.update(epoch, record.val.total);
    if (improved) best.capture(net);
    history.records.push_back(record);
    log_epoch(cfg, "pretrain", record, improved);
    writer.epoch(net, epoch, improved, cfg.keep_epoch_checkpoints);
    if (stopper.should_stop()) break;
  }
  best.restore(net);
  history.best_epoch = stopper.best_epoch();
  writer.finish(net, history);
  return history;
}

AverageFeatureTable compute_average_features(DisentangleNet& net, const GlyphMatrix& matrix) {
  const auto f = encode_matrix(net, matrix);
  const int64_t fonts = matrix.num_fonts(), classes = matrix.num_classes();
  const auto style = f.style.to(torch::kFloat64).view({fonts, classes, -1});
  const auto content = f.content.to(torch::kFloat64).view({fonts, classes, -1});
  AverageFeatureTable table;
  table.style = style.mean(1).to(f.style.scalar_type());
  table.content = content.mean(0).to(f.content.scalar_type());
  table.font_names = matrix.font_names();
  return table;
}

namespace {

struct FinetuneTerms {
  torch::Tensor rec, cls, style, content, total;
};

FinetuneTerms finetune_forward(DisentangleNet& net, const torch::Tensor& images, const torch::Tensor& fonts,
                               const torch::Tensor& classes, const AverageFeatureTable& averages,
                               const LossWeights& w) {
  const auto f = net->encode(images);
  FinetuneTerms t;
  t.rec = losses::reconstruction_loss(images, net->decode(f.style, f.content));
  t.cls = losses::classification_loss(classify_checked(net, f.content), classes);
  t.style = losses::style_variance_loss(f.style, fonts, averages);
  t.content = losses::content_variance_loss(f.content, classes, averages);
  t.total = losses::finetune_loss(t.rec, t.cls, t.style, t.content, w);
  return t;
}

/// Validation fonts are unseen, so their style targets are their own
/// per-font means; content targets stay the frozen training class averages.
LossTerms finetune_validation(DisentangleNet& net, const GlyphMatrix& val, const AverageFeatureTable& averages,
                              const LossWeights& w) {
  InferenceScope scope(net);
  const auto cells = to_tensor(std::span<const GlyphImage>(val.glyphs()));
  const auto f = encode_matrix(net, val);
  const int64_t classes = val.num_classes();
  AverageFeatureTable val_targets;
  val_targets.style = f.style.view({val.num_fonts(), classes, -1}).mean(1);
  val_targets.content = averages.content;

  std::vector<int64_t> font_ids, class_ids;
  for (const auto& g : val.glyphs()) {
    font_ids.push_back(g.font_id);
    class_ids.push_back(g.class_id);
  }
  const auto fonts = labels_of(font_ids), labels = labels_of(class_ids);
  double rec = 0;
  for_each_chunk(val.cell_count(), 64, [&](size_t a, size_t b) {
    const auto n = static_cast<int64_t>(b - a);
    const auto x = cells.narrow(0, static_cast<int64_t>(a), n);
    const auto x_hat = net->decode(f.style.narrow(0, static_cast<int64_t>(a), n),
                                   f.content.narrow(0, static_cast<int64_t>(a), n));
    rec += scalar(losses::reconstruction_loss(x, x_hat)) * static_cast<double>(n);
  });
  LossTerms l;
  l.rec = rec / static_cast<double>(val.cell_count());
  l.cls = scalar(losses::classification_loss(classify_checked(net, f.content), labels));
  l.style = scalar(losses::style_variance_loss(f.style, fonts, val_targets));
  l.content = scalar(losses::content_variance_loss(f.content, labels, val_targets));
  l.total = losses::finetune_loss(l.rec, l.cls, l.style, l.content, w);
  return l;
}

}  // namespace

TrainingHistory finetune(DisentangleNet& net, const AverageFeatureTable& averages, const GlyphMatrix& train,
                         const GlyphMatrix& val, const TrainConfig& cfg, const fs::path& checkpoint_dir) {
  if (averages.empty()) throw Error(ErrorKind::MissingAverages, "fine-tuning needs an average feature table");
  if (averages.num_fonts() != train.num_fonts() || averages.num_classes() != train.num_classes()) {
    throw Error(ErrorKind::MissingAverages, "average table does not cover every training font and class");
  }
  if (!averages.font_names.empty() && averages.font_names != train.font_names()) {
    throw Error(ErrorKind::MissingAverages, "average table was computed for different training fonts");
  }
  const LossWeights& w = cfg.weights;
  AverageFeatureTable targets = averages;
  const auto cells = to_tensor(std::span<const GlyphImage>(train.glyphs()));
  BatchSampler sampler(train, cfg.batch_size, derive_seed(cfg.seed, "finetune/batches"));

  auto optimizer = make_optimizer(net, cfg);
  TrainingHistory history;
  history.phase = Phase::Finetuned;
  EarlyStopper stopper(cfg.early_stop_patience);
  StateSnapshot best;
  CheckpointWriter writer(checkpoint_dir, Phase::Finetuned, cfg);

  for (int epoch = 1; epoch <= cfg.max_epochs_finetune; ++epoch) {
    if (cfg.recompute_averages_every > 0 && epoch > 1 && (epoch - 1) % cfg.recompute_averages_every == 0) {
      targets = compute_average_features(net, train);
    }
    net->train();
    TermAccumulator acc;
    const LossTerms shape{0, kUnused, 0, 0, 0, 0};
    for (size_t step = 0; step < sampler.batches_per_epoch(); ++step) {
      const auto idx = sampler.next_indices();
      std::vector<int64_t> rows, fonts, classes;
      for (size_t k : idx) {
        rows.push_back(static_cast<int64_t>(k));
        fonts.push_back(train.glyphs()[k].font_id);
        classes.push_back(train.glyphs()[k].class_id);
      }
      const auto t = finetune_forward(net, cells.index_select(0, labels_of(rows)), labels_of(fonts),
                                      labels_of(classes), targets, w);
      optimizer.zero_grad();
      t.total.backward();
      optimizer.step();
      const LossTerms l{scalar(t.rec), kUnused, scalar(t.cls), scalar(t.style), scalar(t.content), scalar(t.total)};
      require_finite(l, "fine-tuning", epoch);
      if (!all_finite(net)) throw Error(ErrorKind::DivergedLoss, "non-finite parameters during fine-tuning");
      acc.add(l, static_cast<double>(idx.size()));
    }

    EpochRecord record{epoch, acc.mean(shape), finetune_validation(net, val, targets, w)};
    require_finite(record.val, "fine-tuning validation", epoch);
    const bool improved = stopper.update(epoch, record.val.total);
    if (improved) best.capture(net);
    history.records.push_back(record);
    log_epoch(cfg, "finetune", record, improved);
    writer.epoch(net, epoch, improved, cfg.keep_epoch_checkpoints);
    if (stopper.should_stop()) break;
  }
  best.restore(net);
  history.best_epoch = stopper.best_epoch();
  writer.finish(net, history);
  return history;
}

VarianceSummary measure_variance(DisentangleNet& net, const GlyphMatrix& matrix) {
  const auto f = encode_matrix(net, matrix);
  const int64_t fonts = matrix.num_fonts(), classes = matrix.num_classes();
  const auto style = f.style.to(torch::kFloat64).view({fonts, classes, -1});
  const auto content = f.content.to(torch::kFloat64).view({fonts, classes, -1});
  VarianceSummary s;
  s.style = (style - style.mean(1, true)).pow(2).sum(2).mean().item<double>();
  s.content = (content - content.mean(0, true)).pow(2).sum(2).mean().item<double>();
  return s;
}

double evaluate_reconstruction(DisentangleNet& net, const GlyphMatrix& matrix) {
  InferenceScope scope(net);
  const auto cells = to_tensor(std::span<const GlyphImage>(matrix.glyphs()));
  double sum = 0;
  for_each_chunk(matrix.cell_count(), 64, [&](size_t a, size_t b) {
    const auto x = cells.narrow(0, static_cast<int64_t>(a), static_cast<int64_t>(b - a));
    const auto f = net->encode(x);
    sum += losses::reconstruction_loss(x, net->decode(f.style, f.content)).item<double>() * static_cast<double>(b - a);
  });
  return sum / static_cast<double>(matrix.cell_count());
}

}  // namespace fontdisent
