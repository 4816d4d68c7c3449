#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sg/backend.hpp"
#include "sg/rng.hpp"

namespace sg {

// Toy model whose logits are a sum of per-position weight rows:
//
//   logits = sum_i W_i[ids[i]]        (W_i is a V x V matrix per position)
//
// Being linear in the one-hot inputs, its cross-entropy gradient has an
// exact closed form, which makes it the oracle backend for the optimizer
// tests. The embedding table used for neighbor search is an independent
// diagonal matrix with seeded positive scales, so normalized embeddings are
// exactly orthogonal.
//
// Construction draws from a single seeded stream in a fixed order: first
// W_0..W_{ctx-1} row by row, then the diagonal embedding scales.
class LinearToyBackend final : public Backend {
public:
    explicit LinearToyBackend(std::uint64_t seed, TokenId vocab_size = 258,
                              std::size_t context_limit = 64, double weight_scale = 0.3)
        : seed_(seed),
          context_limit_(context_limit),
          weight_scale_(weight_scale),
          vocab_(vocab_size == 258 ? byte_vocabulary() : alpha_vocabulary(vocab_size)),
          tokenizer_(vocab_) {
        const auto v = static_cast<std::size_t>(vocab_.size());
        Rng rng(seed);
        weights_.reserve(context_limit_);
        for (std::size_t pos = 0; pos < context_limit_; ++pos) {
            Mat w(v, v);
            for (std::size_t r = 0; r < v; ++r)
                for (std::size_t c = 0; c < v; ++c) w(r, c) = weight_scale_ * rng.normal();
            weights_.push_back(std::move(w));
        }
        embedding_ = Mat(v, v);
        for (std::size_t r = 0; r < v; ++r) embedding_(r, r) = 0.5 + rng.real01();
    }

    const Vocabulary& vocabulary() const override { return vocab_; }

    std::string id() const override {
        std::string s = "linear-toy:" + std::to_string(seed_);
        if (vocab_.size() != 258) s += ":vocab=" + std::to_string(vocab_.size());
        if (context_limit_ != 64) s += ":ctx=" + std::to_string(context_limit_);
        return s;
    }

    std::size_t context_limit() const override { return context_limit_; }

    TokenSequence encode(std::string_view text) const override { return tokenizer_.encode(text); }
    std::string decode(const TokenSequence& seq) const override { return tokenizer_.decode(seq); }

    Vec next_token_logits(const TokenSequence& seq) const override {
        check_sequence(seq);
        const auto v = static_cast<std::size_t>(vocab_.size());
        Vec logits(v, 0.0);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const auto row = weights_[i].row(static_cast<std::size_t>(seq[i]));
            for (std::size_t j = 0; j < v; ++j) logits[j] += row[j];
        }
        return logits;
    }

    LossAndGradient loss_and_onehot_gradient(const TokenSequence& seq,
                                             TokenId target_id) const override {
        check_target(target_id);
        const Vec logits = next_token_logits(seq);
        const auto v = static_cast<std::size_t>(vocab_.size());
        const double lse = log_sum_exp(logits);
        const auto target = static_cast<std::size_t>(target_id);

        LossAndGradient out;
        out.loss = lse - logits[target];
        out.h = Mat(seq.size(), v);
        // dloss/dlogits_j = p_j - [j == target]; logits_j = sum_i W_i[t][j] over
        // the one-hot coordinates t, so
        //   h[i][t] = -dloss/dv_i[t] = W_i[t][target] - sum_j p_j W_i[t][j].
        Vec p(v);
        for (std::size_t j = 0; j < v; ++j) p[j] = std::exp(logits[j] - lse);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const Mat& w = weights_[i];
            for (std::size_t t = 0; t < v; ++t) {
                const auto row = w.row(t);
                out.h(i, t) = row[target] - dot(row, p);
            }
        }
        if (!std::isfinite(out.loss) || !out.h.all_finite())
            throw NonFiniteGradient("linear backend produced non-finite values");
        return out;
    }

    const Mat& embedding_table() const override { return embedding_; }

    // Loss as a function of relaxed (arbitrary real) one-hot rows; probing
    // hook for gradient oracles. v must be len x V.
    double loss_from_onehot_rows(const Mat& onehots, TokenId target_id) const {
        check_target(target_id);
        const auto v = static_cast<std::size_t>(vocab_.size());
        Vec logits(v, 0.0);
        for (std::size_t i = 0; i < onehots.rows(); ++i) {
            for (std::size_t t = 0; t < v; ++t) {
                const double vt = onehots(i, t);
                if (vt == 0.0) continue;
                const auto row = weights_[i].row(t);
                for (std::size_t j = 0; j < v; ++j) logits[j] += vt * row[j];
            }
        }
        return log_sum_exp(logits) - logits[static_cast<std::size_t>(target_id)];
    }

    const Mat& position_weights(std::size_t pos) const { return weights_[pos]; }

private:
    std::uint64_t seed_;
    std::size_t context_limit_;
    double weight_scale_;
    Vocabulary vocab_;
    CharTokenizer tokenizer_;
    std::vector<Mat> weights_;
    Mat embedding_;
};

} // namespace sg
