#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "sg/results.hpp"

namespace sg {

enum class ReportFormat { Csv, Markdown };

inline ReportFormat parse_report_format(const std::string& name) {
    if (name == "csv") return ReportFormat::Csv;
    if (name == "markdown") return ReportFormat::Markdown;
    throw ConfigError("unknown report format \"" + name + "\" (csv|markdown)");
}

namespace detail {

// Full-precision number rendering so a reparsed CSV reproduces the stored
// doubles exactly.
inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string render_table(const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows,
                                ReportFormat format) {
    std::string out;
    auto emit_row = [&](const std::vector<std::string>& cells) {
        if (format == ReportFormat::Markdown) out += "|";
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (format == ReportFormat::Csv) {
                if (i > 0) out += ",";
                out += cells[i];
            } else {
                out += " " + cells[i] + " |";
            }
        }
        out += "\n";
    };
    emit_row(header);
    if (format == ReportFormat::Markdown) {
        out += "|";
        for (std::size_t i = 0; i < header.size(); ++i) out += " --- |";
        out += "\n";
    }
    for (const auto& row : rows) emit_row(row);
    return out;
}

} // namespace detail

// Renders the aggregates of a results document as a table. Shapes per
// command:
//   protect    -> one row per metric (gamma/eta/psr), one column per category
//   evaluate   -> affix, side, mean PSR*
//   transfer   -> source, target, mean PSR, mean PSR*
//   robustness -> operation, ratio, mean PSR*
//   sensitive  -> record, token, rank, initial SR (and optimized PSR if any)
inline std::string emit_report(const Json& results, ReportFormat format) {
    validate_results(results);
    const std::string command = results["command"];
    const Json& aggregates = results["aggregates"];

    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    if (command == "protect") {
        header = {"metric"};
        const auto& by_category =
            aggregates.contains("by_category") ? aggregates["by_category"] : Json::array();
        for (const auto& entry : by_category) header.push_back(entry["category"]);
        if (!by_category.empty()) {
            for (const char* metric : {"gamma", "eta", "psr"}) {
                std::vector<std::string> row = {metric};
                for (const auto& entry : by_category)
                    row.push_back(detail::num(entry[metric].get<double>()));
                rows.push_back(std::move(row));
            }
        }
    } else if (command == "evaluate") {
        header = {"affix", "side", "mean_psr", "mean_psr_star"};
        for (const auto& entry :
             aggregates.contains("by_affix") ? aggregates["by_affix"] : Json::array())
            rows.push_back({entry["affix"].get<std::string>(), entry["side"].get<std::string>(),
                            detail::num(entry["mean_psr"].get<double>()),
                            detail::num(entry["mean_psr_star"].get<double>())});
    } else if (command == "transfer") {
        header = {"source", "target", "mean_psr", "mean_psr_star"};
        for (const auto& entry :
             aggregates.contains("by_target") ? aggregates["by_target"] : Json::array())
            rows.push_back({entry["source"].get<std::string>(), entry["target"].get<std::string>(),
                            detail::num(entry["mean_psr"].get<double>()),
                            detail::num(entry["mean_psr_star"].get<double>())});
    } else if (command == "robustness") {
        header = {"operation", "ratio", "mean_psr_star"};
        for (const auto& entry :
             aggregates.contains("by_cell") ? aggregates["by_cell"] : Json::array())
            rows.push_back({entry["op"].get<std::string>(),
                            detail::num(entry["ratio"].get<double>()),
                            detail::num(entry["mean_psr_star"].get<double>())});
    } else if (command == "sensitive") {
        header = {"record", "token_id", "token", "rank", "initial_sr", "optimized_psr"};
        for (const auto& record : results["records"]) {
            if (record.contains("error")) continue;
            for (const auto& target : record["targets"]) {
                std::vector<std::string> row = {record["id"].get<std::string>(),
                                                std::to_string(target["token_id"].get<long>()),
                                                target["token"].get<std::string>(),
                                                std::to_string(target["rank"].get<long>()),
                                                detail::num(target["initial_sr"].get<double>())};
                row.push_back(target.contains("optimized")
                                  ? detail::num(target["optimized"]["best_psr"].get<double>())
                                  : "");
                rows.push_back(std::move(row));
            }
        }
    }
    return detail::render_table(header, rows, format);
}

} // namespace sg
