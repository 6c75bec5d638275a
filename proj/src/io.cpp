#include "slic/io.hpp"

#include <fstream>

namespace slic {

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::string out;
  for (const Json& r : records) {
    out += r.dump();
    out += '\n';
  }
  write_file(path, out);
}

void read_jsonl(const std::filesystem::path& path, const std::string& schema,
                const std::function<void(const Json&, std::size_t line)>& on_record) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no); };
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw DataError("malformed record at " + where() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("schema") || !j["schema"].is_string()) {
      throw DataError("malformed record at " + where() + ": missing schema tag");
    }
    if (j["schema"].get<std::string>() != schema) {
      throw DataError("schema mismatch at " + where() + ": expected " + schema + ", found " +
                      j["schema"].get<std::string>());
    }
    try {
      on_record(j, line_no);
    } catch (const Json::exception& e) {
      throw DataError("malformed record at " + where() + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("malformed record at " + where() + ": " + e.what());
    }
  }
}

Tokens tokens_from_json(const Json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_array()) throw DataError(std::string("missing token list '") + field + "'");
  return j[field].get<Tokens>();
}

std::string dump_canonical(const Json& j, int indent) { return j.dump(indent); }

}  // namespace slic
