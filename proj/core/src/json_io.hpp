#pragma once

// Private helpers for the line-delimited and whole-document JSON files.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>

#include <nlohmann/json.hpp>

namespace treeman::io {

std::string read_file(const std::filesystem::path& path);
// Creates parent directories; writes atomically enough for single-owner dirs.
void write_file(const std::filesystem::path& path, const std::string& contents);

nlohmann::json parse(const std::string& text, const std::string& what);
void check_format(const nlohmann::json& doc, const std::string& format, int version);

// Calls fn(object, 1-based line number) for each non-blank line. A missing
// file is treated as empty unless `required`.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn, bool required = false);

const nlohmann::json& require(const nlohmann::json& j, const char* key, std::size_t line);
// Accepts strings and integers (stringified) for identifier fields.
std::string id_string(const nlohmann::json& j, const char* key, std::size_t line);
double number(const nlohmann::json& j, const char* key, std::size_t line);

}  // namespace treeman::io
