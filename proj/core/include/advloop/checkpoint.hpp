#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace advloop::ckpt {

/// Checkpoint format revision. Readers accept any minor revision within the
/// same major and reject other majors with an explicit error.
inline constexpr int kFormatMajor = 1;
inline constexpr int kFormatMinor = 0;

/// Wraps `payload` in an envelope {format, kind, checksum, payload} and
/// writes it atomically (temp file + rename) so a crash never leaves a torn
/// file at `path`.
void write_versioned(const std::filesystem::path& path,
                     const std::string& kind, const nlohmann::json& payload);

/// Reads an envelope written by write_versioned. Throws std::runtime_error
/// on a kind mismatch, an unsupported major revision, or a checksum failure
/// (corruption), naming the file and the reason.
nlohmann::json read_versioned(const std::filesystem::path& path,
                              const std::string& kind);

/// FNV-1a hash of the canonical (sorted-key) dump, as fixed-width hex.
std::string payload_checksum(const nlohmann::json& payload);

} // namespace advloop::ckpt
