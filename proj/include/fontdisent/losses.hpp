#pragma once

#include <torch/torch.h>

#include "fontdisent/averages.hpp"

namespace fontdisent::losses {

struct LossWeights {
  double lambda_cls = 0.001;
  double lambda_style = 1.0;
  double lambda_content = 1.0;
};

inline constexpr double kProbabilityClamp = 1e-7;

/// Batch mean of ||z^s - avg_style[font]||^2.
torch::Tensor style_variance_loss(const torch::Tensor& style, const torch::Tensor& font_ids,
                                  const AverageFeatureTable& averages);
/// Batch mean of ||z^c - avg_content[class]||^2.
torch::Tensor content_variance_loss(const torch::Tensor& content, const torch::Tensor& class_ids,
                                    const AverageFeatureTable& averages);

/// Mean absolute error over batch and pixels.
torch::Tensor reconstruction_loss(const torch::Tensor& x, const torch::Tensor& x_hat);
/// Same reduction as reconstruction_loss, applied to the style-transferred image.
torch::Tensor transfer_loss(const torch::Tensor& target, const torch::Tensor& transferred);

/// Mean -log p[label] with p clamped to [1e-7, 1 - 1e-7].
torch::Tensor classification_loss(const torch::Tensor& probabilities, const torch::Tensor& labels);

template <class T>
T pretrain_loss(const T& rec, const T& trans, const T& cls, const LossWeights& w) {
  return rec + trans + cls * w.lambda_cls;
}

template <class T>
T finetune_loss(const T& rec, const T& cls, const T& style, const T& content, const LossWeights& w) {
  return rec + cls * w.lambda_cls + style * w.lambda_style + content * w.lambda_content;
}

}  // namespace fontdisent::losses
