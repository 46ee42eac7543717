#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "fontdisent/glyphset.hpp"

namespace fontdisent {

struct ModelConfig {
  int image_size = 64;
  /// Output channels of each stride-2 encoder stage; the decoder mirrors them.
  std::vector<int64_t> channels{32, 64, 128, 256};
  int64_t feature_dim = 128;
  int64_t head_hidden = 256;
  int64_t num_classes = kNumClasses;
  int64_t classifier_hidden = 64;
  double bn_momentum = 0.1;

  int bottleneck_size() const { return image_size >> channels.size(); }
  int64_t flat_dim() const { return channels.back() * bottleneck_size() * bottleneck_size(); }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Style feature z^s and content feature z^c, both (B, feature_dim).
struct FeatureBatch {
  torch::Tensor style;
  torch::Tensor content;
};

/// Shared convolutional encoder E feeding a style head and a content head,
/// a decoder D over the concatenated features, and a content classifier F.
class DisentangleNetImpl : public torch::nn::Module {
 public:
  explicit DisentangleNetImpl(ModelConfig config = {});

  FeatureBatch encode(const torch::Tensor& images);
  torch::Tensor decode(const torch::Tensor& style, const torch::Tensor& content);
  /// Class probabilities from content features.
  torch::Tensor classify(const torch::Tensor& content);
  /// Class logits; classify() is softmax(classify_logits()).
  torch::Tensor classify_logits(const torch::Tensor& content);

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential style_head_{nullptr};
  torch::nn::Sequential content_head_{nullptr};
  torch::nn::Linear projection_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
  torch::nn::Sequential classifier_{nullptr};
};
TORCH_MODULE(DisentangleNet);

/// Deterministic construction: identical seeds give bit-identical weights.
DisentangleNet init_params(std::uint64_t seed, const ModelConfig& config = {});

/// Puts a network in inference mode (running normalization statistics, no
/// autograd) for the lifetime of the guard, restoring the previous mode.
class InferenceScope {
 public:
  explicit InferenceScope(DisentangleNet& net);
  ~InferenceScope();
  InferenceScope(const InferenceScope&) = delete;
  InferenceScope& operator=(const InferenceScope&) = delete;

 private:
  DisentangleNet& net_;
  bool was_training_;
  torch::NoGradGuard no_grad_;
};

FeatureBatch encode(DisentangleNet& net, const torch::Tensor& images);
torch::Tensor decode(DisentangleNet& net, const FeatureBatch& features);
torch::Tensor classify_content(DisentangleNet& net, const torch::Tensor& content);
/// decode(style of style_src, content of content_src).
torch::Tensor transfer(DisentangleNet& net, const torch::Tensor& content_src, const torch::Tensor& style_src);

/// (B, 1, S, S) float tensor from glyphs.
torch::Tensor to_tensor(std::span<const GlyphImage> glyphs);
torch::Tensor to_tensor(std::span<const GlyphImage* const> glyphs);
torch::Tensor to_tensor(const GrayImage& image);
GrayImage to_image(const torch::Tensor& single);  // (1, S, S) or (S, S)
std::vector<GrayImage> to_images(const torch::Tensor& batch);

/// Runs `fn` over [begin, end) in chunks, used to keep inference batches small.
template <class Fn>
void for_each_chunk(size_t count, size_t chunk, Fn&& fn) {
  for (size_t begin = 0; begin < count; begin += chunk) fn(begin, std::min(count, begin + chunk));
}

bool all_finite(DisentangleNet& net);

}  // namespace fontdisent
