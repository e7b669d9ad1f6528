#include "json_io.hpp"

#include <fstream>
#include <sstream>

#include "treeman/error.hpp"

namespace treeman::io {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << contents;
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

json parse(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error("malformed " + what + ": " + e.what());
    }
}

void check_format(const json& doc, const std::string& format, int version) {
    if (!doc.is_object() || doc.value("format", std::string{}) != format)
        throw Error("expected a '" + format + "' document");
    const int v = doc.value("version", -1);
    if (v != version)
        throw Error("unsupported " + format + " version " + std::to_string(v) + " (expected " +
                    std::to_string(version) + ")");
}

void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const json&, std::size_t)>& fn,
                    bool required) {
    std::ifstream in(path);
    if (!in) {
        if (required) throw Error("cannot open '" + path.string() + "'");
        return;
    }
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(path.filename().string() + " line " + std::to_string(n) + ": " + e.what());
        }
        if (!j.is_object()) throw Error(path.filename().string() + " line " + std::to_string(n) + ": expected an object");
        fn(j, n);
    }
}

const json& require(const json& j, const char* key, std::size_t line) {
    const auto it = j.find(key);
    if (it == j.end()) throw Error("line " + std::to_string(line) + ": missing field '" + key + "'");
    return *it;
}

std::string id_string(const json& j, const char* key, std::size_t line) {
    const json& v = require(j, key, line);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return v.dump();
    throw Error("line " + std::to_string(line) + ": field '" + key + "' must be a string or integer");
}

double number(const json& j, const char* key, std::size_t line) {
    const json& v = require(j, key, line);
    if (!v.is_number()) throw Error("line " + std::to_string(line) + ": field '" + key + "' must be a number");
    return v.get<double>();
}

}  // namespace treeman::io
