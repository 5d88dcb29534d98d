#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace preview {

// Hex SHA-256 digest; used to fingerprint dataset manifests in run snapshots.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_file_hex(const std::filesystem::path& path);

}  // namespace preview
