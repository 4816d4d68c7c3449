// sg — builds truncation protection examples and evaluates them.
//
// Subcommands: protect, evaluate, transfer, robustness, sensitive, report.
// Machine output goes to stdout only with `--out -`; progress goes to
// stderr. Exit codes: 0 ok, 2 config error, 3 data error, 4 backend error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sg/sg.hpp"

namespace {

struct FlagSet {
    std::vector<std::pair<std::string, CLI::Option*>> tracked;
    bool config_has_seed = false;

    CLI::Option* track(const std::string& config_key, CLI::Option* option) {
        tracked.emplace_back(config_key, option);
        return option;
    }

    bool known(const std::string& key) const {
        for (const auto& [name, option] : tracked)
            if (name == key) return true;
        return false;
    }

    bool passed(const std::string& key) const {
        for (const auto& [name, option] : tracked)
            if (name == key && option->count() > 0) return true;
        return false;
    }
};

// Precedence: flag > config file > SG_SEED (seed only) > default. CLI11 sees
// the flags first; afterwards any option the user did not pass is filled
// from the config file. Unknown config keys are rejected.
void apply_config_file(const std::string& path, sg::RunConfig& cfg, FlagSet& flags,
                       long& target_raw, std::string& gradient_order, std::string& span) {
    std::ifstream in(path);
    if (!in) throw sg::ConfigError("cannot open config file: " + path);
    sg::Json doc;
    try {
        in >> doc;
    } catch (const sg::Json::exception& e) {
        throw sg::ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object()) throw sg::ConfigError("config file root must be an object");

    for (const auto& [key, value] : doc.items()) {
        if (!flags.known(key)) throw sg::ConfigError("unknown config key \"" + key + "\"");
        if (flags.passed(key)) continue; // flags win
        try {
            if (key == "backend")
                cfg.backends = value.is_string()
                                   ? std::vector<std::string>{value.get<std::string>()}
                                   : value.get<std::vector<std::string>>();
            else if (key == "dataset") cfg.dataset = value;
            else if (key == "results") cfg.results_in = value;
            else if (key == "out") cfg.out = value;
            else if (key == "seed") {
                cfg.stp.seed = value;
                flags.config_has_seed = true;
            }
            else if (key == "T") cfg.stp.iterations = value;
            else if (key == "B") cfg.stp.batch_size = value;
            else if (key == "n") cfg.stp.semantic_set_size = value;
            else if (key == "k") cfg.stp.final_set_size = value;
            else if (key == "target-id") target_raw = value.get<long>();
            else if (key == "gradient-order") gradient_order = value.get<std::string>();
            else if (key == "track-best") cfg.stp.track_best = value;
            else if (key == "protected-span")
                span = std::to_string(value.at(0).get<std::size_t>()) + ":" +
                       std::to_string(value.at(1).get<std::size_t>());
            else if (key == "candidate-provider") cfg.candidate_provider = value;
            else if (key == "affixes") cfg.affix_files = value.get<std::vector<std::string>>();
            else if (key == "side") cfg.side = value;
            else if (key == "ratios") cfg.ratios = value.get<std::vector<double>>();
            else if (key == "ops") cfg.ops = value.get<std::vector<std::string>>();
            else if (key == "thesaurus") cfg.thesaurus = value;
            else if (key == "before") cfg.before = value;
            else if (key == "after") cfg.after = value;
            else if (key == "optimize-targets") cfg.optimize_targets = value;
            else if (key == "jobs") cfg.jobs = value;
            else if (key == "keep-going") cfg.keep_going = value;
        } catch (const sg::Json::exception& e) {
            throw sg::ConfigError("config key \"" + key + "\": " + e.what());
        }
    }
}

int run(int argc, char** argv) {
    CLI::App app{"builds and evaluates truncation protection examples"};
    app.require_subcommand(1);

    sg::RunConfig cfg;
    std::string config_path;
    std::string gradient_order;
    std::string span;
    long target_raw = -1;
    FlagSet flags;

    std::string report_results;
    std::string report_format = "csv";
    std::string report_out = "-";

    auto* protect = app.add_subcommand("protect", "optimize prompts into protection examples");
    auto* evaluate = app.add_subcommand("evaluate", "PSR* under prefix/suffix catalogs");
    auto* transfer = app.add_subcommand("transfer", "PSR* across backends");
    auto* robustness = app.add_subcommand("robustness", "PSR* under word perturbations");
    auto* sensitive = app.add_subcommand("sensitive", "rank tokens around the end token");
    auto* report = app.add_subcommand("report", "render a results file as csv/markdown");

    for (CLI::App* cmd : {protect, evaluate, transfer, robustness, sensitive}) {
        flags.track("backend",
                    cmd->add_option("--backend", cfg.backends,
                                    "backend spec, repeatable (linear-toy:<seed>, "
                                    "tiny-transformer:<seed>, external:<adapter>)"));
        flags.track("dataset", cmd->add_option("--dataset", cfg.dataset, "JSONL prompt dataset"));
        flags.track("out", cmd->add_option("--out", cfg.out, "output path, - for stdout"));
        flags.track("seed", cmd->add_option("--seed", cfg.stp.seed, "main seed"));
        cmd->add_option("--config", config_path, "JSON config file (flags take precedence)");
        flags.track("jobs", cmd->add_option("--jobs", cfg.jobs, "parallel workers"));
        flags.track("keep-going", cmd->add_flag("--keep-going", cfg.keep_going,
                                                "record per-prompt failures and continue"));

        flags.track("T", cmd->add_option("-T", cfg.stp.iterations, "optimization iterations"));
        flags.track("B", cmd->add_option("-B", cfg.stp.batch_size, "batch size"));
        flags.track("n",
                    cmd->add_option("-n", cfg.stp.semantic_set_size, "semantic set size |N_i|"));
        flags.track("k", cmd->add_option("-k", cfg.stp.final_set_size, "final set size |S_i|"));
        flags.track("target-id", cmd->add_option("--target-id", target_raw,
                                                 "target token id (default: end token)"));
        flags.track("gradient-order",
                    cmd->add_option("--gradient-order", gradient_order,
                                    "descending|ascending gradient ranking"));
        flags.track("track-best",
                    cmd->add_flag("--track-best,!--no-track-best", cfg.stp.track_best,
                                  "report the best-seen sequence separately"));
        flags.track("protected-span",
                    cmd->add_option("--protected-span", span,
                                    "restrict edits to positions begin:end"));
        flags.track("candidate-provider",
                    cmd->add_option("--candidate-provider", cfg.candidate_provider,
                                    "candidate source (bundled: embedding-nn)"));
    }
    for (CLI::App* cmd : {evaluate, transfer, robustness, sensitive})
        flags.track("results", cmd->add_option("--results", cfg.results_in,
                                               "take texts from a protect results file"));

    flags.track("affixes", evaluate->add_option("--affixes", cfg.affix_files,
                                                "affix catalog file, repeatable"));
    flags.track("side", evaluate->add_option("--side", cfg.side, "prefix|suffix"));

    flags.track("ratios", robustness->add_option("--ratios", cfg.ratios,
                                                 "perturbation ratios in (0,1]"));
    flags.track("ops", robustness->add_option("--ops", cfg.ops, "RI|RD|SR, repeatable"));
    flags.track("thesaurus", robustness->add_option("--thesaurus", cfg.thesaurus,
                                                    "custom synonym file"));

    flags.track("before", sensitive->add_option("--before", cfg.before,
                                                "tokens preceding the end token's rank"));
    flags.track("after", sensitive->add_option("--after", cfg.after,
                                               "tokens succeeding the end token's rank"));
    flags.track("optimize-targets",
                sensitive->add_flag("--optimize-targets", cfg.optimize_targets,
                                    "run the optimizer against each listed target"));

    report->add_option("--results", report_results, "results file to render")->required();
    report->add_option("--format", report_format, "csv|markdown");
    report->add_option("--out", report_out, "output path, - for stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2; // bad flags are config errors
    }

    if (report->parsed()) {
        const sg::Json results = sg::read_results_file(report_results);
        const std::string rendered =
            sg::emit_report(results, sg::parse_report_format(report_format));
        if (report_out == "-") {
            std::cout << rendered;
        } else {
            std::ofstream out(report_out);
            if (!out) throw sg::ConfigError("cannot open output file: " + report_out);
            out << rendered;
        }
        return 0;
    }

    for (CLI::App* cmd : {protect, evaluate, transfer, robustness, sensitive})
        if (cmd->parsed()) cfg.command = cmd->get_name();

    if (!config_path.empty())
        apply_config_file(config_path, cfg, flags, target_raw, gradient_order, span);

    // SG_SEED is the fallback when neither flag nor config supplied one
    if (!flags.passed("seed") && !flags.config_has_seed) {
        if (const char* env = std::getenv("SG_SEED")) {
            try {
                cfg.stp.seed = std::stoull(env);
            } catch (const std::exception&) {
                throw sg::ConfigError("SG_SEED must be an integer");
            }
        }
    }

    if (flags.passed("target-id") || target_raw >= 0) {
        if (target_raw < 0) throw sg::ConfigError("target-id must be >= 0");
        cfg.stp.target_id = static_cast<sg::TokenId>(target_raw);
    }
    if (!gradient_order.empty()) {
        if (gradient_order != "descending" && gradient_order != "ascending")
            throw sg::ConfigError("gradient-order must be descending or ascending");
        cfg.stp.gradient_order = gradient_order == "ascending" ? sg::GradientOrder::Ascending
                                                               : sg::GradientOrder::Descending;
    }
    if (!span.empty()) {
        const auto colon = span.find(':');
        if (colon == std::string::npos) throw sg::ConfigError("protected-span must be begin:end");
        try {
            cfg.stp.protected_span = {{std::stoul(span.substr(0, colon)),
                                       std::stoul(span.substr(colon + 1))}};
        } catch (const std::exception&) {
            throw sg::ConfigError("protected-span must be begin:end with integers");
        }
    }

    std::cerr << "sg " << cfg.command << ": seed=" << cfg.stp.seed << " backends=";
    for (const auto& b : cfg.backends) std::cerr << b << ' ';
    std::cerr << std::endl;

    const sg::Json results = sg::run_command(cfg);
    sg::emit_results(results, cfg.out);
    std::cerr << "sg " << cfg.command << ": " << results["records"].size() << " records -> "
              << cfg.out << std::endl;
    return 0;
}

std::string safe_dump(const sg::Json& value) {
    return value.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const sg::Error& e) {
        const sg::Json error{{"error", {{"kind", sg::detail::kind_name(e.kind())},
                                        {"message", e.what()}}}};
        std::cerr << safe_dump(error) << std::endl;
        return sg::exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << safe_dump(sg::Json{
                         {"error", {{"kind", "internal"}, {"message", e.what()}}}})
                  << std::endl;
        return 1;
    }
}
