#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace tijo {

std::string read_text(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_text(const std::filesystem::path& path, const std::string& text);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline; key order is nlohmann's (sorted), so output is stable.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

std::string hex64(std::uint64_t value);
std::uint64_t hash_text(const std::string& text);
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace tijo
