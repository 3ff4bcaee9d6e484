#pragma once

// Internal JSON helpers shared by the checkpoint and pipeline code. Not part
// of the installed interface.

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "volwmc/errors.hpp"
#include "volwmc/nn.hpp"

namespace volwmc::detail {

using json = nlohmann::json;

json dense_to_json(const nn::DenseNet& net);
nn::DenseNet dense_from_json(const json& doc);

inline json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw CorruptFileError(path.string() + ": " + e.what());
    }
}

inline void write_json_file(const json& doc, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << doc.dump(1) << '\n';
}

template <typename T>
T required(const json& doc, const std::string& key, const std::string& where)
{
    if (!doc.is_object() || !doc.contains(key)) throw CorruptFileError(where + ": missing field '" + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw CorruptFileError(where + ": bad field '" + key + "': " + e.what());
    }
}

} // namespace volwmc::detail
