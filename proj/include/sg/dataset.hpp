#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sg/error.hpp"

namespace sg {

struct PromptRecord {
    std::string id;
    std::string category;
    std::string text;
};

// JSON-lines dataset: one {"id", "category", "text"} object per line.
// Records come back in file order; duplicate ids and malformed lines are
// rejected with the offending line number.
inline std::vector<PromptRecord> load_dataset_stream(std::istream& in) {
    std::vector<PromptRecord> records;
    std::set<std::string> seen;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_number, e.what());
        }
        if (!obj.is_object() || !obj.contains("id") || !obj.contains("category") ||
            !obj.contains("text") || !obj["id"].is_string() || !obj["category"].is_string() ||
            !obj["text"].is_string())
            throw ParseError(line_number, "expected {\"id\", \"category\", \"text\"} strings");
        PromptRecord record{obj["id"], obj["category"], obj["text"]};
        if (record.text.empty()) throw ParseError(line_number, "text must be nonempty");
        if (!seen.insert(record.id).second)
            throw DuplicateId("duplicate prompt id \"" + record.id + "\" at line " +
                              std::to_string(line_number));
        records.push_back(std::move(record));
    }
    return records;
}

inline std::vector<PromptRecord> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset: " + path);
    return load_dataset_stream(in);
}

} // namespace sg
