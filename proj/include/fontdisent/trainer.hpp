#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fontdisent/averages.hpp"
#include "fontdisent/checkpoint.hpp"
#include "fontdisent/glyphset.hpp"
#include "fontdisent/losses.hpp"
#include "fontdisent/model.hpp"

namespace fontdisent {

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int max_epochs_pretrain = 60;
  int max_epochs_finetune = 40;
  int early_stop_patience = 5;
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  /// Recompute the average features every k fine-tuning epochs; 0 keeps them frozen.
  int recompute_averages_every = 0;
  /// Keep epoch_NNN.ckpt files instead of overwriting last.ckpt.
  bool keep_epoch_checkpoints = false;
  /// Progress lines go here when set.
  std::ostream* log = nullptr;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

inline constexpr double kUnused = std::numeric_limits<double>::quiet_NaN();

struct LossTerms {
  double rec = kUnused;
  double trans = kUnused;
  double cls = kUnused;
  double style = kUnused;
  double content = kUnused;
  double total = kUnused;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossTerms train;
  LossTerms val;
};

struct TrainingHistory {
  Phase phase = Phase::Init;
  std::vector<EpochRecord> records;
  int best_epoch = 0;

  /// One row per epoch, one column per loss term and split.
  void write_csv(const std::filesystem::path& path) const;
};

/// Tracks the best validation loss; stop once more than `patience`
/// consecutive epochs have failed to improve on it.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  /// Returns true when `loss` is a new best.
  bool update(int epoch, double loss);
  bool should_stop() const { return since_best_ > patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Style-transfer pre-training.  On return `net` holds the best-validation
/// weights.  Checkpoints land in `checkpoint_dir` when it is non-empty.
TrainingHistory pretrain(DisentangleNet& net, const GlyphMatrix& train, const GlyphMatrix& val, const TrainConfig& cfg,
                         const std::filesystem::path& checkpoint_dir = {});

/// Per-font mean style and per-class mean content over a matrix, encoder in
/// inference mode.
AverageFeatureTable compute_average_features(DisentangleNet& net, const GlyphMatrix& matrix);

/// Variance-loss fine-tuning against frozen averages.
TrainingHistory finetune(DisentangleNet& net, const AverageFeatureTable& averages, const GlyphMatrix& train,
                         const GlyphMatrix& val, const TrainConfig& cfg,
                         const std::filesystem::path& checkpoint_dir = {});

/// Every cell of a matrix encoded in inference mode, rows in cell order.
FeatureBatch encode_matrix(DisentangleNet& net, const GlyphMatrix& matrix);

struct VarianceSummary {
  double style = 0.0;    // within-font style variance, averages from the same net
  double content = 0.0;  // within-class content variance
};
VarianceSummary measure_variance(DisentangleNet& net, const GlyphMatrix& matrix);

/// Mean plain reconstruction error over every cell, inference mode.
double evaluate_reconstruction(DisentangleNet& net, const GlyphMatrix& matrix);

}  // namespace fontdisent
