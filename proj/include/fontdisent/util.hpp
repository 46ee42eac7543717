#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace fontdisent {

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for a named pipeline stage: splitmix64(global ^ fnv1a64(stage)).
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage);

}  // namespace fontdisent
