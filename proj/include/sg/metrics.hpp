#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "sg/backend.hpp"
#include "sg/error.hpp"
#include "sg/linalg.hpp"
#include "sg/stp.hpp"
#include "sg/utf8.hpp"

namespace sg {

// Unit-cost edit distance (insert / delete / substitute) over Unicode code
// points, so swapping an ASCII character for a visually similar multi-byte
// one counts as a single edit.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
    const auto ca = utf8_codepoints(a);
    const auto cb = utf8_codepoints(b);
    if (ca.empty()) return cb.size();
    if (cb.empty()) return ca.size();

    std::vector<std::size_t> prev(cb.size() + 1), curr(cb.size() + 1);
    for (std::size_t j = 0; j <= cb.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= ca.size(); ++i) {
        curr[0] = i;
        for (std::size_t j = 1; j <= cb.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (ca[i - 1] == cb[j - 1] ? 0 : 1);
            curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, sub});
        }
        std::swap(prev, curr);
    }
    return prev[cb.size()];
}

// gamma: edit distance divided by the original's length in code points
// (whitespace included). Zero exactly when the texts are identical.
inline double char_replacement_ratio(std::string_view original, std::string_view protected_text) {
    const std::size_t len = codepoint_length(original);
    if (len == 0) throw EmptyOriginal("character replacement ratio needs a nonempty original");
    return static_cast<double>(levenshtein(original, protected_text)) /
           static_cast<double>(len);
}

class SentenceEmbedder {
public:
    virtual ~SentenceEmbedder() = default;
    virtual Vec embed(std::string_view text) const = 0;
};

// Reference embedder: mean of the l2-normalized backend token embeddings of
// the encoded text. Deterministic and offline; a stronger external encoder
// can be swapped in through the SentenceEmbedder contract.
class MeanTokenEmbedder final : public SentenceEmbedder {
public:
    explicit MeanTokenEmbedder(const Backend& backend) : backend_(&backend) {}

    Vec embed(std::string_view text) const override {
        if (text.empty()) throw EmptyText("cannot embed empty text");
        const TokenSequence seq = backend_->encode(text);
        const Mat& table = backend_->embedding_table();
        Vec mean(table.cols(), 0.0);
        std::size_t used = 0;
        for (TokenId id : seq.ids) {
            const auto row = table.row(static_cast<std::size_t>(id));
            const double norm = l2_norm(row);
            if (norm == 0.0) continue;
            for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += row[c] / norm;
            ++used;
        }
        if (used == 0) throw ZeroVectorEmbedding("text embeds to the zero vector");
        for (double& c : mean) c /= static_cast<double>(used);
        return mean;
    }

private:
    const Backend* backend_;
};

// eta: cosine similarity of the two sentence embeddings, in [-1, 1].
inline double semantic_preservation(std::string_view original, std::string_view protected_text,
                                    const SentenceEmbedder& embedder) {
    if (original.empty() || protected_text.empty())
        throw EmptyText("semantic preservation needs nonempty texts");
    const Vec a = embedder.embed(original);
    const Vec b = embedder.embed(protected_text);
    if (l2_norm(a) == 0.0 || l2_norm(b) == 0.0)
        throw ZeroVectorEmbedding("embedder returned a zero vector");
    return dot(a, b) / (l2_norm(a) * l2_norm(b));
}

// PSR: the end token's softmax score at the first generation step. Relates
// to the truncation loss by psr = exp(-loss).
inline double psr(const TokenSequence& seq, const Backend& backend, TokenId end_id) {
    if (end_id < 0 || end_id >= backend.vocab_size())
        throw InvalidTokenId("psr: end token id out of range");
    const Vec logits = backend.next_token_logits(seq);
    return std::exp(logits[static_cast<std::size_t>(end_id)] - log_sum_exp(logits));
}

inline double psr(const TokenSequence& seq, const Backend& backend) {
    return psr(seq, backend, backend.end_token_id());
}

struct MetricReport {
    double gamma = 0.0;
    double eta = 0.0;
    double psr = 0.0;
    std::size_t original_length = 0;  // code points
    std::size_t protected_length = 0; // code points
    std::string backend_id;
};

inline MetricReport compute_metrics(std::string_view original, std::string_view protected_text,
                                    const Backend& backend, const SentenceEmbedder& embedder) {
    MetricReport report;
    report.gamma = char_replacement_ratio(original, protected_text);
    report.eta = semantic_preservation(original, protected_text, embedder);
    report.psr = psr(backend.encode(std::string(protected_text)), backend);
    report.original_length = codepoint_length(original);
    report.protected_length = codepoint_length(protected_text);
    report.backend_id = backend.id();
    return report;
}

} // namespace sg
