#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sg/backend.hpp"
#include "sg/error.hpp"
#include "sg/metrics.hpp"
#include "sg/rng.hpp"
#include "sg/thesaurus.hpp"

namespace sg {

enum class PerturbationKind { RandomInsert, RandomDelete, SynonymReplace };

inline std::string_view to_string(PerturbationKind kind) {
    switch (kind) {
        case PerturbationKind::RandomInsert: return "RI";
        case PerturbationKind::RandomDelete: return "RD";
        case PerturbationKind::SynonymReplace: return "SR";
    }
    return "?";
}

struct PerturbationSpec {
    PerturbationKind kind = PerturbationKind::RandomInsert;
    double ratio = 0.05; // fraction of words touched, (0, 1]
    std::uint64_t seed = 0;

    void validate() const {
        if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("perturbation ratio must be in (0, 1]");
    }
};

namespace detail {

inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) words.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += ' ';
        out += words[i];
    }
    return out;
}

// ops distinct indices in [0, count), drawn by partial Fisher-Yates.
inline std::vector<std::size_t> distinct_indices(std::size_t count, std::size_t ops, Rng& rng) {
    std::vector<std::size_t> pool(count);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < ops; ++i) {
        const std::size_t j = i + rng.below(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(ops);
    return pool;
}

} // namespace detail

// Word-level robustness perturbations. "Word" means a maximal run of
// non-whitespace; output words are joined with single spaces. The operation
// count is max(1, round(ratio * word_count)), so even the smallest ratio
// applies one edit.
//
// Seeded draw order per kind:
//   RI: per op, source word index then insertion slot (list grows as it goes)
//   RD: one batch of distinct word indices
//   SR: one batch of distinct word indices, then one synonym pick per word
//       that has any (words without synonyms stay unchanged)
inline std::string perturb(std::string_view text, const PerturbationSpec& spec,
                           const SynonymProvider& synonyms) {
    spec.validate();
    std::vector<std::string> words = detail::split_words(text);
    if (words.empty()) throw EmptyText("perturb needs at least one word");
    const std::size_t count = words.size();
    const auto ops = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(count))));
    Rng rng(spec.seed);

    switch (spec.kind) {
        case PerturbationKind::RandomInsert: {
            for (std::size_t op = 0; op < ops; ++op) {
                const std::string word = words[rng.below(words.size())];
                const std::size_t slot = rng.below(words.size() + 1);
                words.insert(words.begin() + static_cast<std::ptrdiff_t>(slot), word);
            }
            break;
        }
        case PerturbationKind::RandomDelete: {
            auto victims = detail::distinct_indices(count, std::min(ops, count), rng);
            std::sort(victims.begin(), victims.end(), std::greater<>());
            for (std::size_t v : victims)
                words.erase(words.begin() + static_cast<std::ptrdiff_t>(v));
            break;
        }
        case PerturbationKind::SynonymReplace: {
            const auto targets = detail::distinct_indices(count, std::min(ops, count), rng);
            for (std::size_t t : targets) {
                const auto options = synonyms.synonyms(words[t]);
                if (options.empty()) continue; // identity fallback
                words[t] = options[rng.below(options.size())];
            }
            break;
        }
    }
    return detail::join_words(words);
}

// PSR* of the protected sequence under each affix, composed on the given
// side. Returns (affix index, PSR*) pairs in input order.
enum class AffixSide { Prefix, Suffix };

inline std::vector<std::pair<std::size_t, double>> eval_affix_psr(
    const TokenSequence& protected_seq, const std::vector<std::vector<TokenId>>& affixes,
    AffixSide side, const Backend& backend) {
    std::vector<std::pair<std::size_t, double>> out;
    out.reserve(affixes.size());
    for (std::size_t a = 0; a < affixes.size(); ++a) {
        detail::check_affix_ids(affixes[a], backend.vocab_size());
        TokenSequence composed;
        if (side == AffixSide::Prefix) {
            composed.ids = affixes[a];
            composed.ids.insert(composed.ids.end(), protected_seq.ids.begin(),
                                protected_seq.ids.end());
        } else {
            composed = protected_seq;
            composed.ids.insert(composed.ids.end(), affixes[a].begin(), affixes[a].end());
        }
        out.emplace_back(a, psr(composed, backend));
    }
    return out;
}

struct TransferCell {
    std::string source_backend;
    std::string target_backend;
    double psr = 0.0;      // on the source backend
    double psr_star = 0.0; // on the target backend
};

// Evaluates every protected text on every target backend. The source
// backend provides the reference PSR; all backends must share a vocabulary.
inline std::vector<TransferCell> transfer_matrix(const std::vector<std::string>& protected_texts,
                                                 const Backend& source,
                                                 const std::vector<const Backend*>& targets) {
    for (const Backend* t : targets)
        if (t->vocabulary().fingerprint() != source.vocabulary().fingerprint())
            throw VocabularyMismatch("transfer requires a shared vocabulary, " + source.id() +
                                     " vs " + t->id());
    std::vector<TransferCell> cells;
    cells.reserve(protected_texts.size() * targets.size());
    for (const std::string& text : protected_texts) {
        const TokenSequence source_seq = source.encode(text);
        const double base = psr(source_seq, source);
        for (const Backend* target : targets) {
            TransferCell cell;
            cell.source_backend = source.id();
            cell.target_backend = target->id();
            cell.psr = base;
            cell.psr_star = psr(target->encode(text), *target);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

struct CategoryRow {
    std::string category;
    double gamma = 0.0;
    double eta = 0.0;
    double psr = 0.0;
};

struct CategoryTable {
    std::vector<CategoryRow> rows; // categories in first-appearance order
};

// Arithmetic mean of each metric per category. Row order follows the first
// appearance of each category in the input.
inline CategoryTable aggregate_by_category(
    const std::vector<std::pair<std::string, MetricReport>>& records) {
    CategoryTable table;
    std::vector<std::size_t> counts;
    for (const auto& [category, report] : records) {
        auto it = std::find_if(table.rows.begin(), table.rows.end(),
                               [&](const CategoryRow& r) { return r.category == category; });
        if (it == table.rows.end()) {
            table.rows.push_back({category, 0.0, 0.0, 0.0});
            counts.push_back(0);
            it = table.rows.end() - 1;
        }
        const auto idx = static_cast<std::size_t>(it - table.rows.begin());
        it->gamma += report.gamma;
        it->eta += report.eta;
        it->psr += report.psr;
        counts[idx] += 1;
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto n = static_cast<double>(counts[i]);
        table.rows[i].gamma /= n;
        table.rows[i].eta /= n;
        table.rows[i].psr /= n;
    }
    return table;
}

// Affix catalog files: UTF-8 text, one affix per line, '#' starts a comment,
// blank lines ignored.
inline std::vector<std::string> load_affix_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open affix file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
            line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

} // namespace sg
