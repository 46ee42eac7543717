#include "fontdisent/model.hpp"

#include <mutex>

#include "fontdisent/error.hpp"

namespace fontdisent {

namespace nn = torch::nn;

void ModelConfig::validate() const {
  if (channels.empty()) throw Error(ErrorKind::InvalidArgument, "model needs at least one convolution stage");
  if (image_size % (1 << channels.size()) != 0 || bottleneck_size() < 1) {
    throw Error(ErrorKind::InvalidArgument, "image size must be divisible by 2^stages");
  }
  if (feature_dim < 1 || head_hidden < 1 || num_classes < 2 || classifier_hidden < 1) {
    throw Error(ErrorKind::InvalidArgument, "model widths must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},   {"channels", c.channels},
                     {"feature_dim", c.feature_dim}, {"head_hidden", c.head_hidden},
                     {"num_classes", c.num_classes}, {"classifier_hidden", c.classifier_hidden},
                     {"bn_momentum", c.bn_momentum}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.channels = j.value("channels", d.channels);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.classifier_hidden = j.value("classifier_hidden", d.classifier_hidden);
  c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
}

namespace {

nn::Sequential feature_head(const ModelConfig& c) {
  return nn::Sequential(nn::Linear(c.flat_dim(), c.head_hidden), nn::ReLU(), nn::Linear(c.head_hidden, c.feature_dim),
                        nn::ReLU());
}

}  // namespace

DisentangleNetImpl::DisentangleNetImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& ch = config_.channels;
  const auto bn = [&](int64_t n) { return nn::BatchNorm2d(nn::BatchNormOptions(n).momentum(config_.bn_momentum)); };

  encoder_ = nn::Sequential();
  int64_t in = 1;
  for (int64_t out : ch) {
    encoder_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    encoder_->push_back(bn(out));
    encoder_->push_back(nn::ReLU());
    in = out;
  }
  encoder_->push_back(nn::Flatten());
  register_module("encoder", encoder_);

  style_head_ = register_module("style_head", feature_head(config_));
  content_head_ = register_module("content_head", feature_head(config_));

  projection_ = register_module("projection", nn::Linear(2 * config_.feature_dim, config_.flat_dim()));

  decoder_ = nn::Sequential();
  for (size_t k = ch.size(); k-- > 1;) {
    decoder_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch[k], ch[k - 1], 4).stride(2).padding(1)));
    decoder_->push_back(bn(ch[k - 1]));
    decoder_->push_back(nn::ReLU());
  }
  decoder_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch.front(), 1, 4).stride(2).padding(1)));
  register_module("decoder", decoder_);

  classifier_ = register_module(
      "classifier", nn::Sequential(nn::Linear(config_.feature_dim, config_.classifier_hidden), nn::ReLU(),
                                   nn::Linear(config_.classifier_hidden, config_.num_classes)));
}

FeatureBatch DisentangleNetImpl::encode(const torch::Tensor& images) {
  const auto h = encoder_->forward(images);
  return {style_head_->forward(h), content_head_->forward(h)};
}

torch::Tensor DisentangleNetImpl::decode(const torch::Tensor& style, const torch::Tensor& content) {
  const int64_t s = config_.bottleneck_size();
  auto h = torch::relu(projection_->forward(torch::cat({style, content}, 1)));
  h = h.view({-1, config_.channels.back(), s, s});
  // Clamped so outputs stay strictly inside (0, 1) even where float sigmoid saturates.
  constexpr double eps = 1e-6;
  return torch::sigmoid(decoder_->forward(h)).clamp(eps, 1.0 - eps);
}

torch::Tensor DisentangleNetImpl::classify_logits(const torch::Tensor& content) {
  return classifier_->forward(content);
}

torch::Tensor DisentangleNetImpl::classify(const torch::Tensor& content) {
  return torch::softmax(classify_logits(content), 1);
}

DisentangleNet init_params(std::uint64_t seed, const ModelConfig& config) {
  // Module constructors draw from the global generator.
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  torch::manual_seed(seed);
  return DisentangleNet(config);
}

InferenceScope::InferenceScope(DisentangleNet& net) : net_(net), was_training_(net->is_training()) { net_->eval(); }

InferenceScope::~InferenceScope() { net_->train(was_training_); }

FeatureBatch encode(DisentangleNet& net, const torch::Tensor& images) { return net->encode(images); }

torch::Tensor decode(DisentangleNet& net, const FeatureBatch& features) {
  return net->decode(features.style, features.content);
}

torch::Tensor classify_content(DisentangleNet& net, const torch::Tensor& content) { return net->classify(content); }

torch::Tensor transfer(DisentangleNet& net, const torch::Tensor& content_src, const torch::Tensor& style_src) {
  const auto content = net->encode(content_src).content;
  const auto style = net->encode(style_src).style;
  return net->decode(style, content);
}

torch::Tensor to_tensor(std::span<const GlyphImage> glyphs) {
  std::vector<const GlyphImage*> ptrs;
  ptrs.reserve(glyphs.size());
  for (const auto& g : glyphs) ptrs.push_back(&g);
  return to_tensor(std::span<const GlyphImage* const>(ptrs));
}

torch::Tensor to_tensor(std::span<const GlyphImage* const> glyphs) {
  if (glyphs.empty()) throw Error(ErrorKind::NoData, "empty glyph batch");
  const int s = glyphs.front()->size();
  auto out = torch::empty({static_cast<int64_t>(glyphs.size()), 1, s, s}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const GlyphImage* g : glyphs) {
    if (g->size() != s || g->image.height != s) throw Error(ErrorKind::ShapeMismatch, "glyph batch mixes sizes");
    dst = std::copy(g->image.pixels.begin(), g->image.pixels.end(), dst);
  }
  return out;
}

torch::Tensor to_tensor(const GrayImage& image) {
  auto out = torch::empty({1, 1, image.height, image.width}, torch::kFloat32);
  std::copy(image.pixels.begin(), image.pixels.end(), out.data_ptr<float>());
  return out;
}

GrayImage to_image(const torch::Tensor& single) {
  const auto t = single.detach().to(torch::kFloat32).contiguous();
  const int64_t h = t.size(-2), w = t.size(-1);
  if (t.numel() != h * w) throw Error(ErrorKind::ShapeMismatch, "expected a single-channel image tensor");
  GrayImage out(static_cast<int>(w), static_cast<int>(h));
  std::copy(t.data_ptr<float>(), t.data_ptr<float>() + t.numel(), out.pixels.begin());
  return out;
}

std::vector<GrayImage> to_images(const torch::Tensor& batch) {
  std::vector<GrayImage> out;
  out.reserve(batch.size(0));
  for (int64_t b = 0; b < batch.size(0); ++b) out.push_back(to_image(batch[b]));
  return out;
}

bool all_finite(DisentangleNet& net) {
  torch::NoGradGuard guard;
  for (const auto& p : net->parameters()) {
    if (!torch::isfinite(p).all().item<bool>()) return false;
  }
  for (const auto& b : net->buffers()) {
    if (b.is_floating_point() && !torch::isfinite(b).all().item<bool>()) return false;
  }
  return true;
}

}  // namespace fontdisent
