#pragma once

#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sg/backends.hpp"
#include "sg/dataset.hpp"
#include "sg/harness.hpp"
#include "sg/metrics.hpp"
#include "sg/report.hpp"
#include "sg/results.hpp"
#include "sg/stp.hpp"
#include "sg/thesaurus.hpp"

namespace sg {

struct RunConfig {
    std::string command;
    std::vector<std::string> backends;
    std::string dataset;    // JSONL prompt file
    std::string results_in; // previous protect results as input texts
    std::string out = "-";
    StpConfig stp;
    std::string candidate_provider = "embedding-nn";
    std::vector<std::string> affix_files;
    std::string side = "prefix";
    std::vector<double> ratios = {0.05, 0.10, 0.15, 0.20};
    std::vector<std::string> ops = {"RI", "RD", "SR"};
    std::string thesaurus;
    int before = 3;
    int after = 3;
    bool optimize_targets = false;
    int jobs = 1;
    bool keep_going = false;
    std::string format = "csv";

    void validate_common() const {
        if (backends.empty() && command != "report") throw ConfigError("no backend specified");
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
        // the embedding nearest-neighbor provider is the only bundled one;
        // others (e.g. a masked-LM provider) plug in through the
        // CandidateProvider contract programmatically
        if (candidate_provider != "embedding-nn")
            throw ConfigError("unknown candidate_provider \"" + candidate_provider +
                              "\" (bundled: embedding-nn)");
        stp.validate();
    }
};

namespace detail {

inline const char* kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Data: return "data";
        case ErrorKind::Backend: return "backend";
        case ErrorKind::Schema: return "schema";
    }
    return "unknown";
}

inline Json error_object(const Error& e) {
    return Json{{"kind", kind_name(e.kind())}, {"message", e.what()}};
}

// Input-order-preserving parallel map; per-record failures either become
// error records (keep_going) or abort the whole run.
inline std::vector<Json> map_records(std::size_t count, int jobs, bool keep_going,
                                     const std::function<Json(std::size_t)>& work) {
    std::vector<Json> slots(count);
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;

    auto run_one = [&](std::size_t i) {
        try {
            slots[i] = work(i);
        } catch (const Error& e) {
            if (!keep_going) throw;
            slots[i] = Json{{"error", error_object(e)}};
        }
    };
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) run_one(i);
        return slots;
    }
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            {
                std::lock_guard lock(failure_mutex);
                if (failure) return;
            }
            try {
                run_one(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return slots;
}

inline std::vector<PromptRecord> gather_inputs(const RunConfig& cfg) {
    if (!cfg.results_in.empty()) {
        const Json prev = read_results_file(cfg.results_in);
        if (prev["command"] != "protect")
            throw ConfigError("--results input must come from a protect run");
        std::vector<PromptRecord> records;
        for (const auto& record : prev["records"]) {
            if (record.contains("error")) continue;
            records.push_back(
                {record["id"], record["category"], get_text_field(record, "protected_text")});
        }
        if (records.empty()) throw ConfigError("results input holds no usable records");
        return records;
    }
    if (!cfg.dataset.empty()) return load_dataset(cfg.dataset);
    throw ConfigError("need --dataset or --results");
}

inline std::vector<BackendPtr> make_backends(const RunConfig& cfg) {
    std::vector<BackendPtr> out;
    out.reserve(cfg.backends.size());
    for (const auto& spec : cfg.backends) out.push_back(make_backend(spec));
    return out;
}

// Printable token rendering for report output; raw bytes outside printable
// ASCII are shown as <0xNN> so results stay valid UTF-8.
inline std::string token_display(const Vocabulary& vocab, TokenId id) {
    const std::string& s = vocab.token_strings[static_cast<std::size_t>(id)];
    if (s.size() == 1) {
        const auto b = static_cast<unsigned char>(s[0]);
        if (b >= 32 && b < 127) return s;
        char buf[8];
        std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
        return buf;
    }
    return s;
}

inline Json config_echo(const RunConfig& cfg) {
    Json echo{{"command", cfg.command},
              {"backend", cfg.backends},
              {"seed", cfg.stp.seed},
              {"T", cfg.stp.iterations},
              {"B", cfg.stp.batch_size},
              {"n", cfg.stp.semantic_set_size},
              {"k", cfg.stp.final_set_size},
              {"gradient_order",
               cfg.stp.gradient_order == GradientOrder::Descending ? "descending" : "ascending"},
              {"track_best", cfg.stp.track_best},
              {"candidate_provider", cfg.candidate_provider},
              {"jobs", cfg.jobs},
              {"keep_going", cfg.keep_going}};
    if (cfg.stp.target_id) echo["target_id"] = *cfg.stp.target_id;
    if (cfg.stp.protected_span)
        echo["protected_span"] = Json::array(
            {cfg.stp.protected_span->first, cfg.stp.protected_span->second});
    if (!cfg.dataset.empty()) echo["dataset"] = cfg.dataset;
    if (!cfg.results_in.empty()) echo["results"] = cfg.results_in;
    if (!cfg.affix_files.empty()) echo["affixes"] = cfg.affix_files;
    if (cfg.command == "evaluate") echo["side"] = cfg.side;
    if (cfg.command == "robustness") {
        echo["ratios"] = cfg.ratios;
        echo["ops"] = cfg.ops;
        if (!cfg.thesaurus.empty()) echo["thesaurus"] = cfg.thesaurus;
    }
    if (cfg.command == "sensitive") {
        echo["before"] = cfg.before;
        echo["after"] = cfg.after;
        echo["optimize_targets"] = cfg.optimize_targets;
    }
    return echo;
}

} // namespace detail

// protect: encode -> optimize -> decode -> metrics, one record per prompt.
// Multiple backends optimize the weighted-mean loss across all of them
// (uniform weights); the first backend supplies tokenization and metrics.
inline Json run_protect(const RunConfig& cfg) {
    cfg.validate_common();
    const auto backends = detail::make_backends(cfg);
    const auto records = detail::gather_inputs(cfg);
    const Backend& primary = *backends.front();

    std::vector<const Backend*> raw;
    for (const auto& b : backends) raw.push_back(b.get());
    std::vector<double> weights(raw.size(), 1.0 / static_cast<double>(raw.size()));
    std::vector<TokenId> targets;
    for (const Backend* b : raw) {
        if (b->vocabulary().fingerprint() != primary.vocabulary().fingerprint())
            throw VocabularyMismatch("protect backends must share a vocabulary, " + primary.id() +
                                     " vs " + b->id());
        targets.push_back(cfg.stp.target_id.value_or(b->end_token_id()));
    }

    std::unique_ptr<Objective> objective;
    if (raw.size() == 1)
        objective = std::make_unique<TpeObjective>(primary, targets.front());
    else
        objective = std::make_unique<AggregatedObjective>(raw, weights, targets);
    const EmbeddingNeighborProvider provider(primary.embedding_table(),
                                             cfg.stp.semantic_set_size);
    const MeanTokenEmbedder embedder(primary);

    Json results = make_results_envelope("protect", detail::config_echo(cfg));
    results["timestamps"]["started"] = iso8601_utc_now();

    const auto record_jsons = detail::map_records(
        records.size(), cfg.jobs, cfg.keep_going, [&](std::size_t i) -> Json {
            const PromptRecord& prompt = records[i];
            const TokenSequence seq = primary.encode(prompt.text);
            StpConfig run = cfg.stp;
            run.seed = Rng::derive(cfg.stp.seed, i);
            const ProtectionResult protection = stp_protect(seq, run, *objective, provider);
            const std::string protected_text = primary.decode(protection.final_sequence);
            const std::string best_text = primary.decode(protection.best_sequence);
            const MetricReport metrics =
                compute_metrics(prompt.text, protected_text, primary, embedder);
            Json record{{"id", prompt.id},
                        {"category", prompt.category},
                        {"metrics", to_json(metrics)},
                        {"protection", to_json(protection)},
                        {"backend", primary.id()},
                        {"seed", run.seed}};
            set_text_field(record, "original_text", prompt.text);
            set_text_field(record, "protected_text", protected_text);
            set_text_field(record, "best_text", best_text);
            return record;
        });

    std::vector<std::pair<std::string, MetricReport>> aggregate_input;
    for (std::size_t i = 0; i < record_jsons.size(); ++i) {
        Json record = record_jsons[i];
        if (record.contains("error")) {
            record["id"] = records[i].id;
            record["category"] = records[i].category;
        } else {
            MetricReport r;
            r.gamma = record["metrics"]["gamma"];
            r.eta = record["metrics"]["eta"];
            r.psr = record["metrics"]["psr"];
            aggregate_input.emplace_back(record["category"], r);
        }
        results["records"].push_back(std::move(record));
    }

    Json by_category = Json::array();
    for (const auto& row : aggregate_by_category(aggregate_input).rows)
        by_category.push_back(Json{{"category", row.category},
                                   {"gamma", row.gamma},
                                   {"eta", row.eta},
                                   {"psr", row.psr}});
    results["aggregates"]["by_category"] = std::move(by_category);
    if (!aggregate_input.empty()) {
        double g = 0, e = 0, p = 0;
        for (const auto& [cat, r] : aggregate_input) {
            g += r.gamma;
            e += r.eta;
            p += r.psr;
        }
        const auto n = static_cast<double>(aggregate_input.size());
        results["aggregates"]["overall"] =
            Json{{"gamma", g / n}, {"eta", e / n}, {"psr", p / n}};
    }
    results["timestamps"]["finished"] = iso8601_utc_now();
    validate_results(results);
    return results;
}

// evaluate: PSR* of each input text under every affix in the catalog files.
inline Json run_evaluate(const RunConfig& cfg) {
    cfg.validate_common();
    if (cfg.affix_files.empty()) throw ConfigError("evaluate needs at least one --affixes file");
    if (cfg.side != "prefix" && cfg.side != "suffix")
        throw ConfigError("side must be prefix or suffix");
    const auto backends = detail::make_backends(cfg);
    const Backend& backend = *backends.front();
    const auto records = detail::gather_inputs(cfg);
    const AffixSide side = cfg.side == "prefix" ? AffixSide::Prefix : AffixSide::Suffix;

    std::vector<std::string> affix_texts;
    for (const auto& file : cfg.affix_files)
        for (auto& line : load_affix_lines(file)) affix_texts.push_back(std::move(line));
    if (affix_texts.empty()) throw ConfigError("affix catalog is empty");
    std::vector<std::vector<TokenId>> affixes;
    for (const auto& text : affix_texts) {
        // pad the junction so "prefix" + "text" keeps a word boundary
        const std::string padded = side == AffixSide::Prefix ? text + " " : std::string(" ") + text;
        affixes.push_back(backend.encode(padded).ids);
    }

    Json results = make_results_envelope("evaluate", detail::config_echo(cfg));
    results["timestamps"]["started"] = iso8601_utc_now();

    const auto record_jsons = detail::map_records(
        records.size(), cfg.jobs, cfg.keep_going, [&](std::size_t i) -> Json {
            const PromptRecord& prompt = records[i];
            const TokenSequence seq = backend.encode(prompt.text);
            const double base = psr(seq, backend);
            Json cells = Json::array();
            for (const auto& [affix_index, psr_star] :
                 eval_affix_psr(seq, affixes, side, backend))
                cells.push_back(Json{{"affix", affix_index},
                                     {"affix_text", affix_texts[affix_index]},
                                     {"side", cfg.side},
                                     {"psr_star", psr_star}});
            return Json{{"id", prompt.id},
                        {"category", prompt.category},
                        {"psr", base},
                        {"cells", std::move(cells)}};
        });

    std::vector<double> sums(affix_texts.size(), 0.0);
    double base_sum = 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < record_jsons.size(); ++i) {
        Json record = record_jsons[i];
        if (record.contains("error")) {
            record["id"] = records[i].id;
            record["category"] = records[i].category;
        } else {
            base_sum += record["psr"].get<double>();
            for (const auto& cell : record["cells"])
                sums[cell["affix"].get<std::size_t>()] += cell["psr_star"].get<double>();
            ++ok;
        }
        results["records"].push_back(std::move(record));
    }
    Json by_affix = Json::array();
    for (std::size_t a = 0; a < affix_texts.size() && ok > 0; ++a)
        by_affix.push_back(Json{{"affix", affix_texts[a]},
                                {"side", cfg.side},
                                {"mean_psr", base_sum / static_cast<double>(ok)},
                                {"mean_psr_star", sums[a] / static_cast<double>(ok)}});
    results["aggregates"]["by_affix"] = std::move(by_affix);
    results["timestamps"]["finished"] = iso8601_utc_now();
    validate_results(results);
    return results;
}

// transfer: PSR on the first backend, PSR* on every listed backend.
inline Json run_transfer(const RunConfig& cfg) {
    cfg.validate_common();
    if (cfg.backends.size() < 2) throw ConfigError("transfer needs at least two --backend specs");
    const auto backends = detail::make_backends(cfg);
    const Backend& source = *backends.front();
    std::vector<const Backend*> targets;
    for (const auto& b : backends) targets.push_back(b.get());
    const auto records = detail::gather_inputs(cfg);

    Json results = make_results_envelope("transfer", detail::config_echo(cfg));
    results["timestamps"]["started"] = iso8601_utc_now();

    const auto record_jsons = detail::map_records(
        records.size(), cfg.jobs, cfg.keep_going, [&](std::size_t i) -> Json {
            const PromptRecord& prompt = records[i];
            Json cells = Json::array();
            for (const TransferCell& cell : transfer_matrix({prompt.text}, source, targets))
                cells.push_back(Json{{"source", cell.source_backend},
                                     {"target", cell.target_backend},
                                     {"psr", cell.psr},
                                     {"psr_star", cell.psr_star}});
            return Json{{"id", prompt.id}, {"category", prompt.category},
                        {"cells", std::move(cells)}};
        });

    std::vector<double> psr_sums(targets.size(), 0.0), star_sums(targets.size(), 0.0);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < record_jsons.size(); ++i) {
        Json record = record_jsons[i];
        if (record.contains("error")) {
            record["id"] = records[i].id;
            record["category"] = records[i].category;
        } else {
            const auto& cells = record["cells"];
            for (std::size_t t = 0; t < targets.size(); ++t) {
                psr_sums[t] += cells[t]["psr"].get<double>();
                star_sums[t] += cells[t]["psr_star"].get<double>();
            }
            ++ok;
        }
        results["records"].push_back(std::move(record));
    }
    Json by_target = Json::array();
    for (std::size_t t = 0; t < targets.size() && ok > 0; ++t)
        by_target.push_back(Json{{"source", source.id()},
                                 {"target", targets[t]->id()},
                                 {"mean_psr", psr_sums[t] / static_cast<double>(ok)},
                                 {"mean_psr_star", star_sums[t] / static_cast<double>(ok)}});
    results["aggregates"]["by_target"] = std::move(by_target);
    results["timestamps"]["finished"] = iso8601_utc_now();
    validate_results(results);
    return results;
}

// robustness: PSR* after seeded word-level perturbations over the
// ratio x operation grid.
inline Json run_robustness(const RunConfig& cfg) {
    cfg.validate_common();
    const auto backends = detail::make_backends(cfg);
    const Backend& backend = *backends.front();
    const auto records = detail::gather_inputs(cfg);

    std::vector<PerturbationKind> kinds;
    for (const auto& op : cfg.ops) {
        if (op == "RI") kinds.push_back(PerturbationKind::RandomInsert);
        else if (op == "RD") kinds.push_back(PerturbationKind::RandomDelete);
        else if (op == "SR") kinds.push_back(PerturbationKind::SynonymReplace);
        else throw ConfigError("unknown perturbation op \"" + op + "\" (RI|RD|SR)");
    }
    for (double ratio : cfg.ratios)
        if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("ratios must be in (0, 1]");

    const MiniThesaurus builtin;
    const MiniThesaurus custom =
        cfg.thesaurus.empty() ? MiniThesaurus() : MiniThesaurus::from_file(cfg.thesaurus);
    const SynonymProvider& synonyms =
        cfg.thesaurus.empty() ? static_cast<const SynonymProvider&>(builtin) : custom;

    Json results = make_results_envelope("robustness", detail::config_echo(cfg));
    results["timestamps"]["started"] = iso8601_utc_now();

    const auto record_jsons = detail::map_records(
        records.size(), cfg.jobs, cfg.keep_going, [&](std::size_t i) -> Json {
            const PromptRecord& prompt = records[i];
            const double base = psr(backend.encode(prompt.text), backend);
            Json cells = Json::array();
            std::size_t cell_index = 0;
            for (const PerturbationKind kind : kinds) {
                for (const double ratio : cfg.ratios) {
                    PerturbationSpec spec{kind, ratio,
                                          Rng::derive(Rng::derive(cfg.stp.seed, i), cell_index)};
                    const std::string perturbed = perturb(prompt.text, spec, synonyms);
                    Json cell{{"op", std::string(to_string(kind))},
                              {"ratio", ratio},
                              {"psr_star", psr(backend.encode(perturbed), backend)}};
                    set_text_field(cell, "perturbed_text", perturbed);
                    cells.push_back(std::move(cell));
                    ++cell_index;
                }
            }
            return Json{{"id", prompt.id},
                        {"category", prompt.category},
                        {"base_psr", base},
                        {"cells", std::move(cells)}};
        });

    const std::size_t grid = kinds.size() * cfg.ratios.size();
    std::vector<double> sums(grid, 0.0);
    double base_sum = 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < record_jsons.size(); ++i) {
        Json record = record_jsons[i];
        if (record.contains("error")) {
            record["id"] = records[i].id;
            record["category"] = records[i].category;
        } else {
            base_sum += record["base_psr"].get<double>();
            const auto& cells = record["cells"];
            for (std::size_t c = 0; c < grid; ++c) sums[c] += cells[c]["psr_star"].get<double>();
            ++ok;
        }
        results["records"].push_back(std::move(record));
    }
    Json by_cell = Json::array();
    std::size_t cell_index = 0;
    for (const PerturbationKind kind : kinds)
        for (const double ratio : cfg.ratios) {
            if (ok > 0)
                by_cell.push_back(Json{{"op", std::string(to_string(kind))},
                                       {"ratio", ratio},
                                       {"mean_psr_star",
                                        sums[cell_index] / static_cast<double>(ok)}});
            ++cell_index;
        }
    results["aggregates"]["by_cell"] = std::move(by_cell);
    if (ok > 0) results["aggregates"]["mean_base_psr"] = base_sum / static_cast<double>(ok);
    results["timestamps"]["finished"] = iso8601_utc_now();
    validate_results(results);
    return results;
}

// sensitive: rank tokens around the end token and optionally run the
// optimizer against each as a target.
inline Json run_sensitive(const RunConfig& cfg) {
    cfg.validate_common();
    if (cfg.before < 0 || cfg.after < 0) throw ConfigError("before/after must be >= 0");
    const auto backends = detail::make_backends(cfg);
    const Backend& backend = *backends.front();
    const auto records = detail::gather_inputs(cfg);
    const EmbeddingNeighborProvider provider(backend.embedding_table(),
                                             cfg.stp.semantic_set_size);

    Json results = make_results_envelope("sensitive", detail::config_echo(cfg));
    results["timestamps"]["started"] = iso8601_utc_now();

    const auto record_jsons = detail::map_records(
        records.size(), cfg.jobs, cfg.keep_going, [&](std::size_t i) -> Json {
            const PromptRecord& prompt = records[i];
            const TokenSequence seq = backend.encode(prompt.text);
            const auto targets = sensitive_token_targets(seq, backend, cfg.before, cfg.after);
            Json rows = Json::array();
            for (std::size_t t = 0; t < targets.size(); ++t) {
                const SensitiveTarget& target = targets[t];
                Json row{{"token_id", target.token_id},
                         {"token", detail::token_display(backend.vocabulary(), target.token_id)},
                         {"rank", target.rank},
                         {"initial_sr", target.score},
                         {"is_end_token", target.token_id == backend.end_token_id()}};
                if (cfg.optimize_targets) {
                    StpConfig run = cfg.stp;
                    run.seed = Rng::derive(Rng::derive(cfg.stp.seed, i), t);
                    run.target_id = target.token_id;
                    const TpeObjective objective(backend, target.token_id);
                    const ProtectionResult result = stp_protect(seq, run, objective, provider);
                    row["optimized"] = Json{{"final_psr", std::exp(-result.final_loss)},
                                            {"best_psr", std::exp(-result.best_loss)}};
                }
                rows.push_back(std::move(row));
            }
            return Json{{"id", prompt.id}, {"category", prompt.category},
                        {"targets", std::move(rows)}};
        });

    std::size_t ok = 0;
    for (std::size_t i = 0; i < record_jsons.size(); ++i) {
        Json record = record_jsons[i];
        if (record.contains("error")) {
            record["id"] = records[i].id;
            record["category"] = records[i].category;
        } else {
            ++ok;
        }
        results["records"].push_back(std::move(record));
    }
    results["aggregates"]["record_count"] = ok;
    results["timestamps"]["finished"] = iso8601_utc_now();
    validate_results(results);
    return results;
}

inline Json run_command(const RunConfig& cfg) {
    if (cfg.command == "protect") return run_protect(cfg);
    if (cfg.command == "evaluate") return run_evaluate(cfg);
    if (cfg.command == "transfer") return run_transfer(cfg);
    if (cfg.command == "robustness") return run_robustness(cfg);
    if (cfg.command == "sensitive") return run_sensitive(cfg);
    throw ConfigError("unknown command \"" + cfg.command + "\"");
}

// "-" writes pretty JSON to stdout; anything else is a file path.
inline void emit_results(const Json& results, const std::string& out) {
    if (out == "-") {
        std::cout << results.dump(2) << '\n';
        return;
    }
    write_results_file(results, out);
}

} // namespace sg
