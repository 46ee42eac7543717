#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace fontdisent {

/// Per-font style averages (rows indexed by font id) and per-class content
/// averages (rows indexed by class id).
struct AverageFeatureTable {
  torch::Tensor style;    // (I, D)
  torch::Tensor content;  // (J, D)
  std::vector<std::string> font_names;

  int64_t num_fonts() const { return style.defined() ? style.size(0) : 0; }
  int64_t num_classes() const { return content.defined() ? content.size(0) : 0; }
  bool empty() const { return !style.defined() || !content.defined(); }
};

inline constexpr int kAveragesFormatVersion = 1;

/// "FDAVG\0\0\0", u32 version, u32 I, u32 J, u32 D, I x D then J x D float32,
/// then I newline-terminated font names.
void save_averages(const std::filesystem::path& path, const AverageFeatureTable& table);
AverageFeatureTable load_averages(const std::filesystem::path& path);

}  // namespace fontdisent
