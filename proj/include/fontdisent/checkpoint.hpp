#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fontdisent/model.hpp"

namespace fontdisent {

inline constexpr int kCheckpointFormatVersion = 1;

enum class Phase { Init, Pretrained, Finetuned };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

struct Checkpoint {
  DisentangleNet net{nullptr};
  Phase phase = Phase::Init;
  /// Free-form record of the configuration that produced the weights.
  nlohmann::json config = nlohmann::json::object();
};

/// Container layout:
///
///     "FDCKPT\0\0"  8-byte magic
///     u32           format version
///     u64           header length N
///     N bytes       JSON header: phase, model config, run config and a
///                   tensor directory {name, dtype, shape, offset, bytes}
///     ...           raw little-endian tensor payload
///
/// Every parameter and normalization buffer is stored, so load(save(x)) is
/// bit-identical.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fontdisent
