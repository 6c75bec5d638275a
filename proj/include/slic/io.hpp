#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "slic/common.hpp"

namespace slic {

using Json = nlohmann::json;

// Line-delimited JSON. Every record carries a "schema" tag; readers reject
// other schema versions and report the first malformed line by number.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);
void read_jsonl(const std::filesystem::path& path, const std::string& schema,
                const std::function<void(const Json&, std::size_t line)>& on_record);

Tokens tokens_from_json(const Json& j, const char* field);

// Serializes with sorted keys and no whitespace variation so output bytes are
// a pure function of the value.
std::string dump_canonical(const Json& j, int indent = -1);

}  // namespace slic
