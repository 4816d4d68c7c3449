#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sg/backend.hpp"
#include "sg/candidates.hpp"
#include "sg/error.hpp"
#include "sg/rng.hpp"
#include "sg/vocab.hpp"

namespace sg {

struct StpConfig {
    int iterations = 15;       // T
    int batch_size = 1024;     // B
    int semantic_set_size = 10; // n, |N_i|
    int final_set_size = 5;     // k, |S_i|
    std::uint64_t seed = 0;
    std::optional<TokenId> target_id;  // defaults to the backend's end token
    GradientOrder gradient_order = GradientOrder::Descending;
    bool track_best = true;
    std::optional<std::pair<std::size_t, std::size_t>> protected_span; // [begin, end)

    void validate() const {
        if (iterations < 1) throw ConfigError("T must be >= 1");
        if (batch_size < 1) throw ConfigError("B must be >= 1");
        if (final_set_size < 1) throw ConfigError("k must be >= 1");
        if (semantic_set_size < final_set_size) throw ConfigError("n must be >= k");
        if (protected_span && protected_span->first >= protected_span->second)
            throw ConfigError("protected span is empty");
    }
};

// Weighted prefix/suffix contexts for security-focused optimization: the
// loss becomes sum_i eta_i * L(context_i(P)) while only P itself is edited.
struct AffixSpec {
    std::vector<std::vector<TokenId>> prefixes;
    std::vector<std::vector<TokenId>> suffixes;
    std::vector<double> weights; // one per context, prefixes first

    std::size_t context_count() const noexcept { return prefixes.size() + suffixes.size(); }

    void validate() const {
        if (context_count() == 0) throw ConfigError("affix spec needs at least one context");
        if (weights.size() != context_count())
            throw ConfigError("affix weights must match the number of contexts");
        for (double w : weights)
            if (!(w >= 0.0)) throw ConfigError("affix weights must be nonnegative");
    }

    static AffixSpec uniform(std::vector<std::vector<TokenId>> prefixes,
                             std::vector<std::vector<TokenId>> suffixes) {
        AffixSpec spec;
        spec.prefixes = std::move(prefixes);
        spec.suffixes = std::move(suffixes);
        const std::size_t m = spec.context_count();
        spec.weights.assign(m, m ? 1.0 / static_cast<double>(m) : 0.0);
        return spec;
    }
};

struct Replacement {
    int iteration = 0; // 1-based step index
    std::size_t position = 0;
    TokenId old_id = 0;
    TokenId new_id = 0;
    double loss_before = 0.0;
    double loss_after = 0.0;
};

struct ProtectionResult {
    TokenSequence final_sequence;
    TokenSequence best_sequence;
    double final_loss = 0.0;
    double best_loss = 0.0;
    std::vector<double> loss_trace; // T+1 entries, index 0 = initial
    std::vector<double> psr_trace;  // exp(-loss) per trace entry
    std::vector<Replacement> replacements;
    StpConfig config;
    std::string backend_id;
};

// Carries whatever was optimized before the failure.
struct ProtectionError : Error {
    ProtectionError(const Error& cause, ProtectionResult partial_result)
        : Error(cause.kind(), cause.what()), partial(std::move(partial_result)) {}

    ProtectionResult partial;
};

// Loss abstraction the optimizer runs against: plain truncation loss, the
// affix-context sum, or a multi-model aggregate all fit behind it.
class Objective {
public:
    virtual ~Objective() = default;
    virtual double loss(const TokenSequence& seq) const = 0;
    virtual LossAndGradient loss_and_gradient(const TokenSequence& seq) const = 0;
    // Backend supplying the vocabulary and embedding table for candidates.
    virtual const Backend& backend() const = 0;
};

// L_TPE(P) = -log p(target | P); minimal exactly when the model is certain
// to emit the target as its first sampled token.
inline double tpe_loss(const TokenSequence& seq, const Backend& backend, TokenId target_id) {
    if (target_id < 0 || target_id >= backend.vocab_size())
        throw InvalidTokenId("tpe_loss: target id out of range");
    const Vec logits = backend.next_token_logits(seq);
    return log_sum_exp(logits) - logits[static_cast<std::size_t>(target_id)];
}

class TpeObjective final : public Objective {
public:
    TpeObjective(const Backend& backend, TokenId target_id)
        : backend_(&backend), target_(target_id) {}

    double loss(const TokenSequence& seq) const override {
        return tpe_loss(seq, *backend_, target_);
    }
    LossAndGradient loss_and_gradient(const TokenSequence& seq) const override {
        return backend_->loss_and_onehot_gradient(seq, target_);
    }
    const Backend& backend() const override { return *backend_; }

private:
    const Backend* backend_;
    TokenId target_;
};

namespace detail {

inline void check_affix_ids(const std::vector<TokenId>& ids, TokenId vocab_size) {
    for (TokenId id : ids)
        if (id < 0 || id >= vocab_size)
            throw VocabularyMismatch("affix token id " + std::to_string(id) +
                                     " outside vocabulary of size " + std::to_string(vocab_size));
}

} // namespace detail

// Weighted loss over all affix contexts; gradient rows are accumulated onto
// P's own positions (zero outside the protected span).
inline LossAndGradient contextual_loss_and_gradient(
    const TokenSequence& seq, const AffixSpec& affixes, const Backend& backend, TokenId target_id,
    std::optional<std::pair<std::size_t, std::size_t>> span = std::nullopt) {
    affixes.validate();
    const auto v = static_cast<std::size_t>(backend.vocab_size());
    const std::size_t begin = span ? span->first : 0;
    const std::size_t end = span ? std::min(span->second, seq.size()) : seq.size();
    if (begin >= end) throw ConfigError("protected span is empty");

    LossAndGradient out;
    out.h = Mat(seq.size(), v);
    std::size_t context_index = 0;
    auto accumulate = [&](const TokenSequence& context, std::size_t offset) {
        const double weight = affixes.weights[context_index++];
        const LossAndGradient lg = backend.loss_and_onehot_gradient(context, target_id);
        out.loss += weight * lg.loss;
        for (std::size_t i = begin; i < end; ++i) {
            const auto src = lg.h.row(offset + i);
            auto dst = out.h.row(i);
            for (std::size_t j = 0; j < v; ++j) dst[j] += weight * src[j];
        }
    };
    for (const auto& prefix : affixes.prefixes) {
        detail::check_affix_ids(prefix, backend.vocab_size());
        TokenSequence context;
        context.ids = prefix;
        context.ids.insert(context.ids.end(), seq.ids.begin(), seq.ids.end());
        accumulate(context, prefix.size());
    }
    for (const auto& suffix : affixes.suffixes) {
        detail::check_affix_ids(suffix, backend.vocab_size());
        TokenSequence context = seq;
        context.ids.insert(context.ids.end(), suffix.begin(), suffix.end());
        accumulate(context, 0);
    }
    return out;
}

class ContextualObjective final : public Objective {
public:
    ContextualObjective(const Backend& backend, AffixSpec affixes, TokenId target_id,
                        std::optional<std::pair<std::size_t, std::size_t>> span = std::nullopt)
        : backend_(&backend), affixes_(std::move(affixes)), target_(target_id), span_(span) {
        affixes_.validate();
        for (const auto& prefix : affixes_.prefixes)
            detail::check_affix_ids(prefix, backend.vocab_size());
        for (const auto& suffix : affixes_.suffixes)
            detail::check_affix_ids(suffix, backend.vocab_size());
    }

    double loss(const TokenSequence& seq) const override {
        double total = 0.0;
        std::size_t index = 0;
        for (const auto& prefix : affixes_.prefixes) {
            TokenSequence context;
            context.ids = prefix;
            context.ids.insert(context.ids.end(), seq.ids.begin(), seq.ids.end());
            total += affixes_.weights[index++] * tpe_loss(context, *backend_, target_);
        }
        for (const auto& suffix : affixes_.suffixes) {
            TokenSequence context = seq;
            context.ids.insert(context.ids.end(), suffix.begin(), suffix.end());
            total += affixes_.weights[index++] * tpe_loss(context, *backend_, target_);
        }
        return total;
    }

    LossAndGradient loss_and_gradient(const TokenSequence& seq) const override {
        return contextual_loss_and_gradient(seq, affixes_, *backend_, target_, span_);
    }

    const Backend& backend() const override { return *backend_; }

private:
    const Backend* backend_;
    AffixSpec affixes_;
    TokenId target_;
    std::optional<std::pair<std::size_t, std::size_t>> span_;
};

// Weighted mean of per-backend losses and one-hot gradients. All backends
// must share a tokenization (vocabulary fingerprints must agree).
inline LossAndGradient aggregated_loss_and_gradient(const TokenSequence& seq,
                                                    const std::vector<const Backend*>& backends,
                                                    const std::vector<double>& weights,
                                                    const std::vector<TokenId>& target_ids) {
    if (backends.empty()) throw ConfigError("aggregated loss needs at least one backend");
    if (weights.size() != backends.size() || target_ids.size() != backends.size())
        throw ConfigError("aggregated loss: weights/targets must match backend count");
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("aggregated weights must sum to 1");
    const auto fingerprint = backends.front()->vocabulary().fingerprint();
    for (const Backend* b : backends)
        if (b->vocabulary().fingerprint() != fingerprint)
            throw VocabularyMismatch("aggregated backends use different vocabularies");

    LossAndGradient out;
    const auto v = static_cast<std::size_t>(backends.front()->vocab_size());
    out.h = Mat(seq.size(), v);
    for (std::size_t b = 0; b < backends.size(); ++b) {
        const LossAndGradient lg = backends[b]->loss_and_onehot_gradient(seq, target_ids[b]);
        out.loss += weights[b] * lg.loss;
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const auto src = lg.h.row(i);
            auto dst = out.h.row(i);
            for (std::size_t j = 0; j < v; ++j) dst[j] += weights[b] * src[j];
        }
    }
    return out;
}

class AggregatedObjective final : public Objective {
public:
    AggregatedObjective(std::vector<const Backend*> backends, std::vector<double> weights,
                        std::vector<TokenId> target_ids)
        : backends_(std::move(backends)), weights_(std::move(weights)),
          target_ids_(std::move(target_ids)) {
        // validate eagerly with a trivial probe of the argument shapes
        if (backends_.empty()) throw ConfigError("aggregated objective needs backends");
        if (weights_.size() != backends_.size() || target_ids_.size() != backends_.size())
            throw ConfigError("aggregated objective: weights/targets must match backend count");
    }

    double loss(const TokenSequence& seq) const override {
        double total = 0.0;
        for (std::size_t b = 0; b < backends_.size(); ++b)
            total += weights_[b] * tpe_loss(seq, *backends_[b], target_ids_[b]);
        return total;
    }

    LossAndGradient loss_and_gradient(const TokenSequence& seq) const override {
        return aggregated_loss_and_gradient(seq, backends_, weights_, target_ids_);
    }

    const Backend& backend() const override { return *backends_.front(); }

private:
    std::vector<const Backend*> backends_;
    std::vector<double> weights_;
    std::vector<TokenId> target_ids_;
};

// One step's worth of single-position variants. Every element differs from
// the base sequence at exactly one eligible position, the replacement drawn
// uniformly from that position's final set S_i.
struct Batch {
    std::vector<TokenSequence> sequences;
    std::vector<std::size_t> positions;
    std::vector<TokenId> old_ids;
    std::vector<TokenId> new_ids;

    std::size_t size() const noexcept { return sequences.size(); }
};

// Batch construction rules, in order:
//   - If B >= sum_i |S_i|, enumerate every (position, candidate) pair first
//     (positions ascending, candidates in S_i order), then fill the rest
//     randomly. This makes one greedy step an exhaustive single-substitution
//     search at oracle scale.
//   - Else if B > #eligible positions, split the batch into ceil-sized parts,
//     part p mutating the p-th eligible position.
//   - Else pick B distinct positions without replacement.
// The seeded stream is consumed positions-first, then candidate draws, batch
// index ascending, so the construction is reproducible regardless of how the
// losses are later evaluated.
inline Batch build_batch(const TokenSequence& seq, const CandidateSets& sets, int batch_size,
                         Rng& rng) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (sets.positions.empty()) throw ConfigError("candidate sets cover no positions");
    for (std::size_t pos : sets.positions)
        if (sets.final[pos].empty())
            throw EmptyCandidateSet("empty final candidate set at position " +
                                    std::to_string(pos));

    const auto b_total = static_cast<std::size_t>(batch_size);
    const std::size_t eligible = sets.positions.size();
    std::size_t pair_total = 0;
    for (std::size_t pos : sets.positions) pair_total += sets.final[pos].size();

    Batch batch;
    batch.positions.reserve(b_total);
    batch.new_ids.assign(b_total, -1);

    if (b_total >= pair_total) {
        for (std::size_t pos : sets.positions)
            for (TokenId candidate : sets.final[pos]) {
                batch.positions.push_back(pos);
                batch.new_ids[batch.positions.size() - 1] = candidate;
            }
        for (std::size_t b = pair_total; b < b_total; ++b)
            batch.positions.push_back(sets.positions[rng.below(eligible)]);
    } else if (b_total > eligible) {
        const std::size_t len_part = (b_total + eligible - 1) / eligible; // ceil(B / m)
        for (std::size_t b = 0; b < b_total; ++b)
            batch.positions.push_back(sets.positions[std::min(b / len_part, eligible - 1)]);
    } else {
        // partial Fisher-Yates over the eligible positions
        std::vector<std::size_t> pool = sets.positions;
        for (std::size_t b = 0; b < b_total; ++b) {
            const std::size_t j = b + rng.below(pool.size() - b);
            std::swap(pool[b], pool[j]);
            batch.positions.push_back(pool[b]);
        }
    }

    // candidate draws, batch index ascending
    for (std::size_t b = 0; b < b_total; ++b) {
        if (batch.new_ids[b] < 0) {
            const auto& final_set = sets.final[batch.positions[b]];
            batch.new_ids[b] = final_set[rng.below(final_set.size())];
        }
    }

    batch.sequences.reserve(b_total);
    batch.old_ids.reserve(b_total);
    for (std::size_t b = 0; b < b_total; ++b) {
        TokenSequence variant = seq;
        batch.old_ids.push_back(variant[batch.positions[b]]);
        variant[batch.positions[b]] = batch.new_ids[b];
        batch.sequences.push_back(std::move(variant));
    }
    return batch;
}

struct StepResult {
    TokenSequence next;
    double loss_before = 0.0;
    double loss_after = 0.0;
    std::size_t position = 0;
    TokenId old_id = 0;
    TokenId new_id = 0;
    bool changed = false;
};

namespace detail {

// One outer-loop body: gradient at the incumbent, candidate sets, batched
// single-position variants, greedy argmin (ties to the lowest batch index).
// The incumbent is not re-entered into the batch, so the step loss may
// exceed the incumbent's.
inline StepResult stp_step_impl(const TokenSequence& seq, const Objective& objective,
                                const CandidateProvider& provider, const StpConfig& config,
                                Rng& rng) {
    const LossAndGradient lg = objective.loss_and_gradient(seq);
    const CandidateSets sets =
        build_candidate_sets(seq, lg.h, provider, config.semantic_set_size,
                             config.final_set_size, config.gradient_order, config.protected_span);
    const Batch batch = build_batch(seq, sets, config.batch_size, rng);

    std::size_t best = 0;
    double best_loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const double loss = objective.loss(batch.sequences[b]);
        if (b == 0 || loss < best_loss) {
            best = b;
            best_loss = loss;
        }
    }

    StepResult out;
    out.next = batch.sequences[best];
    out.loss_before = lg.loss;
    out.loss_after = best_loss;
    out.position = batch.positions[best];
    out.old_id = batch.old_ids[best];
    out.new_id = batch.new_ids[best];
    out.changed = out.old_id != out.new_id;
    return out;
}

} // namespace detail

// Spec-shaped single step against the plain truncation objective.
inline StepResult stp_step(const TokenSequence& seq, const StpConfig& config,
                           const Backend& backend) {
    config.validate();
    const TokenId target = config.target_id.value_or(backend.end_token_id());
    const TpeObjective objective(backend, target);
    const EmbeddingNeighborProvider provider(backend.embedding_table(), config.semantic_set_size);
    Rng rng(config.seed);
    return detail::stp_step_impl(seq, objective, provider, config, rng);
}

// Runs T steps, threading the sequence and recording the trajectory. The
// returned traces have T+1 entries with index 0 the initial loss. `best` is
// the lowest-loss incumbent seen (including the input) when track_best is
// set, otherwise the final sequence.
inline ProtectionResult stp_protect(const TokenSequence& seq, const StpConfig& config,
                                    const Objective& objective,
                                    const CandidateProvider& provider) {
    config.validate();
    if (seq.empty()) throw EmptyInput("cannot protect an empty sequence");

    ProtectionResult result;
    result.config = config;
    result.backend_id = objective.backend().id();

    Rng rng(config.seed);
    TokenSequence current = seq;
    TokenSequence best = seq;
    double best_loss = 0.0;
    bool have_initial = false;

    auto record_trace = [&result](double loss) {
        result.loss_trace.push_back(loss);
        result.psr_trace.push_back(std::exp(-loss));
    };

    try {
        for (int t = 1; t <= config.iterations; ++t) {
            const StepResult step = detail::stp_step_impl(current, objective, provider, config, rng);
            if (!have_initial) {
                // the first step's incumbent loss doubles as trace[0]
                record_trace(step.loss_before);
                best_loss = step.loss_before;
                have_initial = true;
            }
            current = step.next;
            record_trace(step.loss_after);
            if (step.changed)
                result.replacements.push_back({t, step.position, step.old_id, step.new_id,
                                               step.loss_before, step.loss_after});
            if (step.loss_after < best_loss) {
                best_loss = step.loss_after;
                best = current;
            }
        }
    } catch (const ProtectionError&) {
        throw;
    } catch (const Error& e) {
        result.final_sequence = current;
        result.best_sequence = config.track_best ? best : current;
        result.final_loss = result.loss_trace.empty() ? 0.0 : result.loss_trace.back();
        result.best_loss = best_loss;
        throw ProtectionError(e, std::move(result));
    }

    result.final_sequence = current;
    result.final_loss = result.loss_trace.back();
    if (config.track_best) {
        result.best_sequence = best;
        result.best_loss = best_loss;
    } else {
        result.best_sequence = current;
        result.best_loss = result.final_loss;
    }
    return result;
}

inline ProtectionResult stp_protect(const TokenSequence& seq, const StpConfig& config,
                                    const Backend& backend) {
    config.validate();
    const TokenId target = config.target_id.value_or(backend.end_token_id());
    const TpeObjective objective(backend, target);
    const EmbeddingNeighborProvider provider(backend.embedding_table(), config.semantic_set_size);
    return stp_protect(seq, config, objective, provider);
}

struct SensitiveTarget {
    TokenId token_id = 0;
    std::size_t rank = 0; // 0 = highest next-token logit
    double score = 0.0;   // softmax probability
};

// Ranks the vocabulary by next-token logit after `seq`, locates the end
// token's rank r, and returns the tokens at ranks r-before..r+after
// (clipped) with their softmax scores, rank ascending. Tokens whose initial
// scores sit near the end token's are the cheap optimization targets.
inline std::vector<SensitiveTarget> sensitive_token_targets(const TokenSequence& seq,
                                                            const Backend& backend, int before,
                                                            int after) {
    if (before < 0 || after < 0) throw ConfigError("before/after must be >= 0");
    const Vec logits = backend.next_token_logits(seq);
    const Vec probs = softmax(logits);
    std::vector<TokenId> order(logits.size());
    std::iota(order.begin(), order.end(), TokenId{0});
    std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
        const double la = logits[static_cast<std::size_t>(a)];
        const double lb = logits[static_cast<std::size_t>(b)];
        if (la != lb) return la > lb;
        return a < b;
    });
    const auto end_it = std::find(order.begin(), order.end(), backend.end_token_id());
    const auto end_rank = static_cast<std::size_t>(end_it - order.begin());
    const std::size_t lo = end_rank >= static_cast<std::size_t>(before)
                               ? end_rank - static_cast<std::size_t>(before)
                               : 0;
    const std::size_t hi =
        std::min(order.size() - 1, end_rank + static_cast<std::size_t>(after));
    std::vector<SensitiveTarget> out;
    out.reserve(hi - lo + 1);
    for (std::size_t r = lo; r <= hi; ++r)
        out.push_back({order[r], r, probs[static_cast<std::size_t>(order[r])]});
    return out;
}

} // namespace sg
