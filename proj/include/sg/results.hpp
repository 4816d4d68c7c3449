#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sg/error.hpp"
#include "sg/metrics.hpp"
#include "sg/stp.hpp"
#include "sg/utf8.hpp"

namespace sg {

using Json = nlohmann::json;

// Byte-level backends can produce texts that are not valid UTF-8, which JSON
// strings cannot carry directly. Text fields are therefore stored through
// these helpers: valid UTF-8 passes through unchanged, anything else maps
// each byte to U+0000..U+00FF (flagged "<name>_encoding": "bytes-latin1"),
// which is lossless and reversible.
inline bool json_safe_utf8(const std::string& text) {
    try {
        (void)Json(text).dump();
        return true;
    } catch (const Json::exception&) {
        return false;
    }
}

inline std::string bytes_to_latin1_utf8(const std::string& bytes) {
    std::string out;
    out.reserve(bytes.size() * 2);
    for (const char c : bytes) {
        const auto b = static_cast<unsigned char>(c);
        if (b < 0x80) {
            out.push_back(c);
        } else {
            out.push_back(static_cast<char>(0xC0 | (b >> 6)));
            out.push_back(static_cast<char>(0x80 | (b & 0x3F)));
        }
    }
    return out;
}

inline std::string latin1_utf8_to_bytes(const std::string& text) {
    std::string out;
    for (const char32_t cp : utf8_codepoints(text)) {
        if (cp > 0xFF) throw SchemaError("bytes-latin1 text holds a code point above 0xFF");
        out.push_back(static_cast<char>(cp));
    }
    return out;
}

inline void set_text_field(Json& obj, const std::string& name, const std::string& bytes) {
    if (json_safe_utf8(bytes)) {
        obj[name] = bytes;
        return;
    }
    obj[name] = bytes_to_latin1_utf8(bytes);
    obj[name + "_encoding"] = "bytes-latin1";
}

inline std::string get_text_field(const Json& obj, const std::string& name) {
    const std::string raw = obj.at(name).get<std::string>();
    const auto marker = obj.find(name + "_encoding");
    if (marker != obj.end() && *marker == "bytes-latin1") return latin1_utf8_to_bytes(raw);
    return raw;
}

// Results files carry a versioned envelope:
//   { "schema_version": "1", "command": ..., "config": ...,
//     "records": [...], "aggregates": ..., "timestamps": ... }
// Everything except "timestamps" is a deterministic function of the inputs.
inline constexpr const char* kSchemaVersion = "1";

inline std::string iso8601_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

inline std::string fingerprint_hex(const Json& config) {
    const std::string dump = config.dump();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : dump) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline Json to_json(const MetricReport& report) {
    return Json{{"gamma", report.gamma},
                {"eta", report.eta},
                {"psr", report.psr},
                {"original_length", report.original_length},
                {"protected_length", report.protected_length}};
}

inline Json to_json(const Replacement& r) {
    return Json{{"iter", r.iteration},      {"pos", r.position},
                {"old_id", r.old_id},       {"new_id", r.new_id},
                {"loss_before", r.loss_before}, {"loss_after", r.loss_after}};
}

inline Json to_json(const ProtectionResult& result) {
    Json replacements = Json::array();
    for (const auto& r : result.replacements) replacements.push_back(to_json(r));
    return Json{{"final_loss", result.final_loss},
                {"best_loss", result.best_loss},
                {"loss_trace", result.loss_trace},
                {"psr_trace", result.psr_trace},
                {"replacements", replacements}};
}

inline Json make_results_envelope(const std::string& command, Json config) {
    config["fingerprint"] = fingerprint_hex(config);
    return Json{{"schema_version", kSchemaVersion},
                {"command", command},
                {"config", std::move(config)},
                {"records", Json::array()},
                {"aggregates", Json::object()},
                {"timestamps", Json::object()}};
}

// Structural validation of a results document. Throws SchemaError with the
// first violation found.
inline void validate_results(const Json& results) {
    if (!results.is_object()) throw SchemaError("results root must be an object");
    for (const char* key : {"schema_version", "command", "config", "records", "aggregates"})
        if (!results.contains(key))
            throw SchemaError(std::string("results missing key \"") + key + "\"");
    if (results["schema_version"] != kSchemaVersion)
        throw SchemaError("unsupported schema_version");
    static const std::set<std::string> known_commands = {"protect", "evaluate", "transfer",
                                                         "robustness", "sensitive"};
    if (!results["command"].is_string() || !known_commands.count(results["command"]))
        throw SchemaError("unknown command in results");
    if (!results["config"].is_object() || !results["config"].contains("fingerprint"))
        throw SchemaError("config must be an object with a fingerprint");
    if (!results["records"].is_array()) throw SchemaError("records must be an array");
    if (!results["aggregates"].is_object()) throw SchemaError("aggregates must be an object");

    const std::string command = results["command"];
    for (const auto& record : results["records"]) {
        if (!record.is_object() || !record.contains("id") || !record["id"].is_string())
            throw SchemaError("every record needs a string id");
        if (record.contains("error")) {
            if (!record["error"].is_object() || !record["error"].contains("message"))
                throw SchemaError("record error must carry a message");
            continue;
        }
        if (command == "protect") {
            for (const char* key : {"category", "original_text", "protected_text", "metrics",
                                    "protection", "backend"})
                if (!record.contains(key))
                    throw SchemaError(std::string("protect record missing \"") + key + "\"");
            const auto& metrics = record["metrics"];
            for (const char* key : {"gamma", "eta", "psr"})
                if (!metrics.contains(key) || !metrics[key].is_number())
                    throw SchemaError(std::string("metrics missing numeric \"") + key + "\"");
            const auto& protection = record["protection"];
            for (const char* key : {"loss_trace", "psr_trace", "replacements"})
                if (!protection.contains(key) || !protection[key].is_array())
                    throw SchemaError(std::string("protection missing array \"") + key + "\"");
        } else if (!record.contains("cells") && !record.contains("targets")) {
            throw SchemaError(command + " record needs cells or targets");
        }
    }
}

inline void write_results_file(const Json& results, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open output file: " + path);
    out << results.dump(2) << '\n';
    if (!out) throw ConfigError("failed writing output file: " + path);
}

inline Json read_results_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open results file: " + path);
    Json results;
    try {
        in >> results;
    } catch (const Json::exception& e) {
        throw SchemaError("results file is not valid JSON: " + std::string(e.what()));
    }
    validate_results(results);
    return results;
}

} // namespace sg
