#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sg/backend.hpp"
#include "sg/error.hpp"
#include "sg/linalg.hpp"
#include "sg/vocab.hpp"

namespace sg {

enum class GradientOrder { Descending, Ascending };

// Per-position replacement sets: semantic[i] holds the embedding neighbors
// N_i (descending similarity) and final[i] the gradient-ranked top-k subset
// S_i drawn from it. `positions` lists the sequence positions eligible for
// mutation; by default every position of the optimized sequence.
struct CandidateSets {
    std::vector<std::vector<TokenId>> semantic;
    std::vector<std::vector<TokenId>> final;
    std::vector<std::size_t> positions;

    std::size_t size() const noexcept { return semantic.size(); }
};

// The n token ids whose l2-normalized embeddings have the largest dot
// product with the query token's normalized embedding. Descending
// similarity, ties broken by ascending token id. Zero-norm rows cannot be
// normalized: they are excluded from candidacy, and a zero-norm query
// degenerates to the singleton {token_id}.
inline std::vector<TokenId> semantic_neighbors(TokenId token_id, int n, const Mat& table) {
    if (n < 1) throw ConfigError("semantic neighbor count must be >= 1");
    const auto v = table.rows();
    if (token_id < 0 || static_cast<std::size_t>(token_id) >= v)
        throw InvalidTokenId("semantic_neighbors: token id out of range");

    const auto query = table.row(static_cast<std::size_t>(token_id));
    const double query_norm = l2_norm(query);
    if (query_norm == 0.0) return {token_id};

    std::vector<std::pair<double, TokenId>> scored;
    scored.reserve(v);
    for (std::size_t j = 0; j < v; ++j) {
        const auto row = table.row(j);
        const double norm = l2_norm(row);
        if (norm == 0.0) continue;
        scored.emplace_back(dot(query, row) / (query_norm * norm), static_cast<TokenId>(j));
    }
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(n), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                      scored.end(), [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<TokenId> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back(scored[i].second);
    return out;
}

// Keeps the min(k, |neighbors|) ids with the largest h values (descending
// order; ascending picks the smallest instead). Ties keep the neighbor-list
// order. h_row is indexed by token id.
inline std::vector<TokenId> rank_by_gradient(const std::vector<TokenId>& neighbors,
                                             std::span<const double> h_row, int k,
                                             GradientOrder order = GradientOrder::Descending) {
    if (neighbors.empty()) throw EmptyCandidateSet("rank_by_gradient: empty neighbor set");
    if (k < 1) throw ConfigError("final set size must be >= 1");
    std::vector<std::size_t> idx(neighbors.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ha = h_row[static_cast<std::size_t>(neighbors[a])];
        const double hb = h_row[static_cast<std::size_t>(neighbors[b])];
        return order == GradientOrder::Descending ? ha > hb : ha < hb;
    });
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), neighbors.size());
    std::vector<TokenId> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back(neighbors[idx[i]]);
    return out;
}

// Pluggable candidate source: given the sequence and a position, produce the
// ordered semantic candidate list for the token at that position. The
// embedding nearest-neighbor provider below is the bundled reference; a
// masked-LM provider can be slotted in through the same contract.
class CandidateProvider {
public:
    virtual ~CandidateProvider() = default;
    virtual std::vector<TokenId> candidates(const TokenSequence& context, std::size_t position,
                                            int n) const = 0;
};

// Embedding nearest neighbors, context independent. Neighbor lists are a
// pure function of (embedding table, n), so they are precomputed once at
// construction; lookups afterwards are immutable and safe to share across
// threads.
class EmbeddingNeighborProvider final : public CandidateProvider {
public:
    EmbeddingNeighborProvider(const Mat& table, int n) : n_(n) {
        lists_.reserve(table.rows());
        for (std::size_t id = 0; id < table.rows(); ++id)
            lists_.push_back(semantic_neighbors(static_cast<TokenId>(id), n, table));
    }

    std::vector<TokenId> candidates(const TokenSequence& context, std::size_t position,
                                    int n) const override {
        const TokenId id = context[position];
        if (id < 0 || static_cast<std::size_t>(id) >= lists_.size())
            throw InvalidTokenId("candidate query for unknown token id");
        if (n > n_) throw ConfigError("provider cached n=" + std::to_string(n_) +
                                      ", cannot serve n=" + std::to_string(n));
        const auto& full = lists_[static_cast<std::size_t>(id)];
        if (n == n_ || static_cast<std::size_t>(n) >= full.size()) return full;
        return {full.begin(), full.begin() + n};
    }

    int cached_n() const noexcept { return n_; }

private:
    int n_;
    std::vector<std::vector<TokenId>> lists_;
};

// N_i then S_i at every eligible position. `span` restricts mutation to
// [span.first, span.second); positions outside it get no candidate sets.
inline CandidateSets build_candidate_sets(
    const TokenSequence& seq, const Mat& h, const CandidateProvider& provider, int n, int k,
    GradientOrder order = GradientOrder::Descending,
    std::optional<std::pair<std::size_t, std::size_t>> span = std::nullopt) {
    if (h.rows() != seq.size())
        throw ConfigError("gradient matrix rows do not match sequence length");
    const std::size_t begin = span ? span->first : 0;
    const std::size_t end = span ? std::min(span->second, seq.size()) : seq.size();
    if (begin >= end) throw ConfigError("protected span is empty");

    CandidateSets sets;
    sets.semantic.resize(seq.size());
    sets.final.resize(seq.size());
    for (std::size_t i = begin; i < end; ++i) {
        sets.semantic[i] = provider.candidates(seq, i, n);
        if (sets.semantic[i].empty())
            throw EmptyCandidateSet("no candidates at position " + std::to_string(i));
        sets.final[i] = rank_by_gradient(sets.semantic[i], h.row(i), k, order);
        sets.positions.push_back(i);
    }
    return sets;
}

// Convenience overload: embedding-NN provider over the backend's table.
inline CandidateSets build_candidate_sets(
    const TokenSequence& seq, const Mat& h, const Mat& table, int n, int k,
    GradientOrder order = GradientOrder::Descending,
    std::optional<std::pair<std::size_t, std::size_t>> span = std::nullopt) {
    const EmbeddingNeighborProvider provider(table, n);
    return build_candidate_sets(seq, h, provider, n, k, order, span);
}

} // namespace sg
