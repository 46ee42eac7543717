#include "fontdisent/losses.hpp"

#include "fontdisent/error.hpp"

namespace fontdisent::losses {

namespace {

torch::Tensor variance_loss(const torch::Tensor& features, const torch::Tensor& ids, const torch::Tensor& table,
                            ErrorKind unknown, const char* what) {
  if (!table.defined()) throw Error(ErrorKind::MissingAverages, std::string("no ") + what + " averages");
  if (features.dim() != 2 || ids.dim() != 1 || ids.size(0) != features.size(0) ||
      table.size(1) != features.size(1)) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " features, ids and averages disagree in shape");
  }
  if (ids.numel() > 0) {
    const auto lo = ids.min().item<int64_t>();
    const auto hi = ids.max().item<int64_t>();
    if (lo < 0 || hi >= table.size(0)) {
      throw Error(unknown, std::string(what) + " id " + std::to_string(lo < 0 ? lo : hi) + " has no average");
    }
  }
  const auto targets = table.to(features.scalar_type()).index_select(0, ids.to(torch::kInt64));
  return (features - targets).pow(2).sum(1).mean();
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw Error(ErrorKind::ShapeMismatch, "image batches differ in shape");
}

}  // namespace

torch::Tensor style_variance_loss(const torch::Tensor& style, const torch::Tensor& font_ids,
                                  const AverageFeatureTable& averages) {
  return variance_loss(style, font_ids, averages.style, ErrorKind::UnknownFont, "style");
}

torch::Tensor content_variance_loss(const torch::Tensor& content, const torch::Tensor& class_ids,
                                    const AverageFeatureTable& averages) {
  return variance_loss(content, class_ids, averages.content, ErrorKind::UnknownFont, "content");
}

torch::Tensor reconstruction_loss(const torch::Tensor& x, const torch::Tensor& x_hat) {
  require_same_shape(x, x_hat);
  return (x - x_hat).abs().mean();
}

torch::Tensor transfer_loss(const torch::Tensor& target, const torch::Tensor& transferred) {
  return reconstruction_loss(target, transferred);
}

torch::Tensor classification_loss(const torch::Tensor& probabilities, const torch::Tensor& labels) {
  if (probabilities.dim() != 2 || labels.dim() != 1 || labels.size(0) != probabilities.size(0)) {
    throw Error(ErrorKind::ShapeMismatch, "probabilities must be (B, C) with B labels");
  }
  {
    torch::NoGradGuard guard;
    const auto p = probabilities.detach();
    const bool nonneg = (p >= 0).all().item<bool>();
    const double worst = (p.sum(1) - 1.0).abs().max().item<double>();
    if (!nonneg || !(worst <= 1e-4)) {
      throw Error(ErrorKind::InvalidDistribution, "rows must be non-negative and sum to 1");
    }
    const auto lo = labels.min().item<int64_t>(), hi = labels.max().item<int64_t>();
    if (lo < 0 || hi >= probabilities.size(1)) throw Error(ErrorKind::InvalidArgument, "label out of range");
  }
  const auto picked = probabilities.gather(1, labels.to(torch::kInt64).unsqueeze(1)).squeeze(1);
  return -picked.clamp(kProbabilityClamp, 1.0 - kProbabilityClamp).log().mean();
}

}  // namespace fontdisent::losses
